"""Compiled inner loops for convolutions, pooling, and triplet mining.

Forward kernels keep a fixed per-cell accumulation order (kernel position
major, input channel minor, bias last) and strict IEEE semantics so outputs
are bit-identical to a naive nested-loop evaluation. Columns at or beyond a
sample's valid width are never read or written; outputs there stay zero.
Backward kernels only need determinism, so they allow fastmath.
"""

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def conv_rows_fwd(x, w, bias, stride, vin, vout, out):
    """Per-row temporal correlation with same-width zero padding.

    x: [B, Cin, H, W], w: [Cout, Cin, 1, KW], out: [B, Cout, H, Wout] (pre-zeroed).
    """
    B, cin, H, _ = x.shape
    cout = w.shape[0]
    kw_n = w.shape[3]
    pad = kw_n // 2
    for b in range(B):
        vi = vin[b]
        vo = vout[b]
        for o in range(cout):
            for h in range(H):
                orow = out[b, o, h]
                for kw in range(kw_n):
                    shift = kw - pad
                    lo = 0
                    if shift < 0:
                        lo = (-shift + stride - 1) // stride
                    hi = (vi - 1 - shift) // stride + 1
                    if hi > vo:
                        hi = vo
                    if hi <= lo:
                        continue
                    n = hi - lo
                    for ci in range(cin):
                        wv = w[o, ci, 0, kw]
                        if stride == 1:
                            xs = x[b, ci, h, lo + shift : hi + shift]
                            os_ = orow[lo:hi]
                            for i in range(n):
                                os_[i] += wv * xs[i]
                        else:
                            xrow = x[b, ci, h]
                            for ow in range(lo, hi):
                                orow[ow] += wv * xrow[2 * ow + shift]
                bv = bias[o]
                for ow in range(vo):
                    orow[ow] += bv


@njit(cache=True, fastmath=True)
def conv_rows_bwd_x(g, w, stride, vin, vout, gx):
    B, cout, H, _ = g.shape
    cin = w.shape[1]
    kw_n = w.shape[3]
    pad = kw_n // 2
    for b in range(B):
        vi = vin[b]
        vo = vout[b]
        for o in range(cout):
            for h in range(H):
                grow = g[b, o, h]
                for kw in range(kw_n):
                    shift = kw - pad
                    lo = 0
                    if shift < 0:
                        lo = (-shift + stride - 1) // stride
                    hi = (vi - 1 - shift) // stride + 1
                    if hi > vo:
                        hi = vo
                    if hi <= lo:
                        continue
                    n = hi - lo
                    for ci in range(cin):
                        wv = w[o, ci, 0, kw]
                        if stride == 1:
                            gs = gx[b, ci, h, lo + shift : hi + shift]
                            gr = grow[lo:hi]
                            for i in range(n):
                                gs[i] += wv * gr[i]
                        else:
                            gxrow = gx[b, ci, h]
                            for ow in range(lo, hi):
                                gxrow[2 * ow + shift] += wv * grow[ow]


@njit(cache=True, fastmath=True)
def conv_rows_bwd_w(g, x, stride, vin, vout, gw, gb):
    B, cout, H, _ = g.shape
    cin = x.shape[1]
    kw_n = gw.shape[3]
    pad = kw_n // 2
    for o in range(cout):
        for b in range(B):
            vi = vin[b]
            vo = vout[b]
            for h in range(H):
                grow = g[b, o, h]
                for kw in range(kw_n):
                    shift = kw - pad
                    lo = 0
                    if shift < 0:
                        lo = (-shift + stride - 1) // stride
                    hi = (vi - 1 - shift) // stride + 1
                    if hi > vo:
                        hi = vo
                    if hi <= lo:
                        continue
                    n = hi - lo
                    gr = grow[lo:hi]
                    for ci in range(cin):
                        acc = 0.0
                        if stride == 1:
                            xs = x[b, ci, h, lo + shift : hi + shift]
                            for i in range(n):
                                acc += gr[i] * xs[i]
                        else:
                            xrow = x[b, ci, h]
                            for ow in range(lo, hi):
                                acc += grow[ow] * xrow[2 * ow + shift]
                        gw[o, ci, 0, kw] += acc
                acc_b = 0.0
                for ow in range(vo):
                    acc_b += grow[ow]
                gb[o] += acc_b


@njit(cache=True)
def conv_color_fwd(x, w, bias, vin, out):
    """Valid 4x1 convolution collapsing the band axis: [B,Cin,KH,W] -> [B,Cout,1,W]."""
    B, cin, kh_n, _ = x.shape
    cout = w.shape[0]
    for b in range(B):
        vi = vin[b]
        for o in range(cout):
            orow = out[b, o, 0]
            for kh in range(kh_n):
                for ci in range(cin):
                    wv = w[o, ci, kh, 0]
                    xrow = x[b, ci, kh]
                    for col in range(vi):
                        orow[col] += wv * xrow[col]
            bv = bias[o]
            for col in range(vi):
                orow[col] += bv


@njit(cache=True, fastmath=True)
def conv_color_bwd_x(g, w, vin, gx):
    B, cout = g.shape[0], g.shape[1]
    cin, kh_n = w.shape[1], w.shape[2]
    for b in range(B):
        vi = vin[b]
        for o in range(cout):
            grow = g[b, o, 0]
            for kh in range(kh_n):
                for ci in range(cin):
                    wv = w[o, ci, kh, 0]
                    gxrow = gx[b, ci, kh]
                    for col in range(vi):
                        gxrow[col] += wv * grow[col]


@njit(cache=True, fastmath=True)
def conv_color_bwd_w(g, x, vin, gw, gb):
    B = g.shape[0]
    cout = g.shape[1]
    cin, kh_n = gw.shape[1], gw.shape[2]
    for o in range(cout):
        for b in range(B):
            vi = vin[b]
            grow = g[b, o, 0]
            for kh in range(kh_n):
                for ci in range(cin):
                    xrow = x[b, ci, kh]
                    acc = 0.0
                    for col in range(vi):
                        acc += grow[col] * xrow[col]
                    gw[o, ci, kh, 0] += acc
            acc_b = 0.0
            for col in range(vi):
                acc_b += grow[col]
            gb[o] += acc_b


@njit(cache=True)
def maxpool3_fwd(x, stride, vin, vout, out, arg):
    """Width-3 sliding max; cells outside [0, valid) are excluded, ties to lowest index."""
    B, C, H, _ = x.shape
    for b in range(B):
        vi = vin[b]
        vo = vout[b]
        for c in range(C):
            for h in range(H):
                xrow = x[b, c, h]
                orow = out[b, c, h]
                arow = arg[b, c, h]
                for ow in range(vo):
                    center = ow * stride
                    lo = center - 1
                    if lo < 0:
                        lo = 0
                    hi = center + 2
                    if hi > vi:
                        hi = vi
                    best = xrow[lo]
                    bidx = lo
                    for col in range(lo + 1, hi):
                        v = xrow[col]
                        if v > best:
                            best = v
                            bidx = col
                    orow[ow] = best
                    arow[ow] = bidx


@njit(cache=True, fastmath=True)
def maxpool3_bwd(g, arg, vout, gx):
    B, C, H, _ = g.shape
    for b in range(B):
        vo = vout[b]
        for c in range(C):
            for h in range(H):
                for ow in range(vo):
                    gx[b, c, h, arg[b, c, h, ow]] += g[b, c, h, ow]


@njit(cache=True)
def gmp_fwd(x, vin, out, argh, argw):
    """Per-channel max over H x valid columns; ties to the lowest (h, w) position."""
    B, C, H, _ = x.shape
    for b in range(B):
        vi = vin[b]
        for c in range(C):
            best = NEG_INF
            bh = 0
            bw = 0
            for h in range(H):
                xrow = x[b, c, h]
                for col in range(vi):
                    v = xrow[col]
                    if v > best:
                        best = v
                        bh = h
                        bw = col
            out[b, c] = best
            argh[b, c] = bh
            argw[b, c] = bw


@njit(cache=True, fastmath=True)
def gmp_bwd(g, argh, argw, gx):
    B, C = g.shape
    for b in range(B):
        for c in range(C):
            gx[b, c, argh[b, c], argw[b, c]] += g[b, c]


@njit(cache=True)
def pairwise_dists(e):
    """Euclidean distance matrix of [B, m] row vectors, components summed in order."""
    B, m = e.shape
    out = np.zeros((B, B))
    for i in range(B):
        for j in range(i + 1, B):
            s = 0.0
            for k in range(m):
                diff = e[i, k] - e[j, k]
                s += diff * diff
            d = np.sqrt(s)
            out[i, j] = d
            out[j, i] = d
    return out


@njit(cache=True)
def rowwise_dists(a, b):
    """Per-row Euclidean distance between aligned [B, m] matrices."""
    B, m = a.shape
    out = np.zeros(B)
    for i in range(B):
        s = 0.0
        for k in range(m):
            diff = a[i, k] - b[i, k]
            s += diff * diff
        out[i] = np.sqrt(s)
    return out


@njit(cache=True)
def mine_forward(dmat, dsub, labels, margin, margin_prime):
    """Batch-all enumeration of both triplet objectives.

    Returns (hinge_sum, n_useful, adapted_sum, n_useful_prime) where sums run
    over strictly positive per-triplet losses in enumeration order.
    """
    B = labels.shape[0]
    sum_t = 0.0
    n_t = 0
    for a in range(B):
        for p in range(B):
            if p == a or labels[p] != labels[a]:
                continue
            dap = dmat[a, p]
            for n in range(B):
                if labels[n] == labels[a]:
                    continue
                t = dap - dmat[a, n] + margin
                if t > 0.0:
                    sum_t += t
                    n_t += 1
    sum_a = 0.0
    n_a = 0
    for a in range(B):
        da = dsub[a]
        for n in range(B):
            if labels[n] == labels[a]:
                continue
            hinge = margin_prime - dmat[a, n]
            if hinge < 0.0:
                hinge = 0.0
            t = da + hinge
            if t > 0.0:
                sum_a += t
                n_a += 1
    return sum_t, n_t, sum_a, n_a


@njit(cache=True, fastmath=True)
def mine_backward(e, sub, dmat, dsub, labels, margin, margin_prime, c_t, c_a, ge, gsub):
    """Adjoints of the mined loss w.r.t. embeddings and sub-sampled embeddings.

    c_t / c_a are the upstream gradient divided by the respective useful
    counts (0.0 when a count is zero). Coincident pairs (distance 0) receive
    subgradient 0.
    """
    B, m = e.shape
    gd = np.zeros((B, B))
    gds = np.zeros(B)
    if c_t != 0.0:
        for a in range(B):
            for p in range(B):
                if p == a or labels[p] != labels[a]:
                    continue
                dap = dmat[a, p]
                for n in range(B):
                    if labels[n] == labels[a]:
                        continue
                    if dap - dmat[a, n] + margin > 0.0:
                        gd[a, p] += c_t
                        gd[a, n] -= c_t
    if c_a != 0.0:
        for a in range(B):
            da = dsub[a]
            for n in range(B):
                if labels[n] == labels[a]:
                    continue
                hinge = margin_prime - dmat[a, n]
                pos = hinge if hinge > 0.0 else 0.0
                if da + pos > 0.0:
                    gds[a] += c_a
                    if hinge > 0.0:
                        gd[a, n] -= c_a
    for i in range(B):
        for j in range(B):
            c = gd[i, j]
            if c != 0.0 and dmat[i, j] > 0.0:
                r = c / dmat[i, j]
                for k in range(m):
                    diff = e[i, k] - e[j, k]
                    ge[i, k] += r * diff
                    ge[j, k] -= r * diff
    for a in range(B):
        c = gds[a]
        if c != 0.0 and dsub[a] > 0.0:
            r = c / dsub[a]
            for k in range(m):
                diff = e[a, k] - sub[a, k]
                ge[a, k] += r * diff
                gsub[a, k] -= r * diff
