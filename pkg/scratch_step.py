"""Scratch: end-to-end step timing for default and half-width configs."""
import time

import numpy as np

from snnet import (
    GeneratorConfig,
    Tape,
    TrainPlan,
    cross_entropy,
    default_network_config,
    plan_network,
    synth_generate,
)
from snnet.lightcurves import encode
from snnet.network import build_network, parameter_count
from snnet.optim import Adam, lr_at
from snnet.rng import substream

cfg = GeneratorConfig(n_curves=64, seed=7)
curves = synth_generate(cfg)
samples = [encode(c) for c in curves]
labels = np.array([s.label_index for s in samples])
print("sparsity sample:", np.mean([np.mean(s.matrix == 0) for s in samples]).round(3))
print("widths:", sorted(s.valid_w for s in samples)[:5], "...", max(s.valid_w for s in samples))

for name, net_cfg in (
    ("default", default_network_config()),
    ("half", plan_network(stem_channels=8, pre_channels=(32, 32, 48, 48, 64),
                          color_channels=64, post_channels=(80, 96, 112, 128),
                          head_units=512)),
):
    net = build_network(net_cfg, substream(0, "init"))
    print(f"{name}: params={parameter_count(net_cfg):,} emb={net_cfg.embedding_dim}")
    optimizer = Adam(net.parameters())
    batch = samples[:32]
    blab = labels[:32]
    # warm + time
    for rep in range(4):
        t0 = time.time()
        optimizer.zero_grad()
        with Tape() as tape:
            probs = net.forward_classifier(batch, training=True, dropout_rate=0.4,
                                           rng=substream(0, "dropout", rep))
            loss = cross_entropy(probs, blab)
        t1 = time.time()
        loss.backward()
        t2 = time.time()
        optimizer.step(lr_at(0, TrainPlan(iterations=10)))
        t3 = time.time()
        if rep >= 1:
            print(f"  fwd {t1-t0:.3f}s bwd {t2-t1:.3f}s adam {t3-t2:.3f}s total {t3-t0:.3f}s nodes={len(tape)}")
