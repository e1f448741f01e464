"""Scratch: bit-exactness of numba conv kernels vs naive loops + throughput."""
import time

import numpy as np

from snnet import _kernels as K


def conv_rows_oracle(x, w, bias, stride, vin):
    B, Cin, H, W = x.shape
    Cout, KW = w.shape[0], w.shape[3]
    pad = KW // 2
    Wout = -(-W // stride)
    vout = -(-vin // stride)
    out = np.zeros((B, Cout, H, Wout))
    for b in range(B):
        for o in range(Cout):
            for h in range(H):
                for ow in range(int(vout[b])):
                    acc = 0.0
                    for kw in range(KW):
                        for ci in range(Cin):
                            col = ow * stride + kw - pad
                            if 0 <= col < vin[b]:
                                acc += w[o, ci, 0, kw] * x[b, ci, h, col]
                    out[b, o, h, ow] = acc + bias[o]
    return out, vout


rng = np.random.default_rng(0)
bad = 0
t_or = 0.0
for trial in range(30):
    B = int(rng.integers(1, 3))
    Cin = int(rng.integers(1, 9))
    Cout = int(rng.integers(1, 9))
    H = int(rng.integers(1, 5))
    W = int(rng.integers(4, 33))
    KW = int(rng.choice([1, 3, 5]))
    stride = int(rng.choice([1, 2]))
    x = rng.normal(size=(B, Cin, H, W))
    w = rng.normal(size=(Cout, Cin, 1, KW))
    bias = rng.normal(size=Cout)
    vin = rng.integers(1, W + 1, size=B)
    t0 = time.time()
    ref, vout = conv_rows_oracle(x, w, bias, stride, vin)
    t_or += time.time() - t0
    out = np.zeros_like(ref)
    K.conv_rows_fwd(x, w, bias, stride, vin, vout, out)
    if not np.array_equal(out, ref):
        bad += 1
        print("MISMATCH", trial, np.max(np.abs(out - ref)))
print("mismatches:", bad, f"(oracle time {t_or:.1f}s)")

# throughput: realistic mid-network layer, batch 32
B, Cin, Cout, H, W, KW = 32, 64, 32, 4, 110, 3
x = rng.normal(size=(B, Cin, H, W))
w = rng.normal(size=(Cout, Cin, 1, KW))
bias = rng.normal(size=Cout)
vin = np.full(B, W, dtype=np.int64)
vout = vin.copy()
out = np.zeros((B, Cout, H, W))
K.conv_rows_fwd(x, w, bias, 1, vin, vout, out)  # warm
n = 20
t0 = time.time()
for _ in range(n):
    out[:] = 0.0
    K.conv_rows_fwd(x, w, bias, 1, vin, vout, out)
dt = (time.time() - t0) / n
macs = B * Cout * H * W * Cin * KW
print(f"fwd: {dt*1e3:.1f} ms -> {macs/dt/1e9:.2f} GMAC/s")

g = rng.normal(size=out.shape)
gx = np.zeros_like(x)
gw = np.zeros_like(w)
gb = np.zeros_like(bias)
K.conv_rows_bwd_x(g, w, 1, vin, vout, gx)
K.conv_rows_bwd_w(g, x, 1, vin, vout, gw, gb)
t0 = time.time()
for _ in range(n):
    gx[:] = 0.0
    K.conv_rows_bwd_x(g, w, 1, vin, vout, gx)
dt = (time.time() - t0) / n
print(f"bwd_x: {dt*1e3:.1f} ms -> {macs/dt/1e9:.2f} GMAC/s")
t0 = time.time()
for _ in range(n):
    gw[:] = 0.0
    gb[:] = 0.0
    K.conv_rows_bwd_w(g, x, 1, vin, vout, gw, gb)
dt = (time.time() - t0) / n
print(f"bwd_w: {dt*1e3:.1f} ms -> {macs/dt/1e9:.2f} GMAC/s")
