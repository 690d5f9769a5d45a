"""Desk-scale training run with the loss curve printed as text.

Trains the fusion generator on a handful of synthetic pairs, with and
without the adversarial terms, and prints smoothed loss milestones.
"""

import numpy as np

from ivfuse.generator import FusionConfig
from ivfuse.training import TrainConfig, make_synthetic_pairs, train

pairs = make_synthetic_pairs(8, size=32, seed=0)
fusion = FusionConfig(spatial_embed=256, channel_embed=64)

for use_gan in (False, True):
    cfg = TrainConfig(batch=2, seed=0, use_gan=use_gan, max_steps=60)
    params, log = train(pairs, cfg, fusion_config=fusion)
    losses = np.array([e.loss_total for e in log.entries])
    label = "with GAN" if use_gan else "w/o GAN "
    print(f"\n{label}: {len(losses)} steps")
    for mark in (0, len(losses) // 4, len(losses) // 2, len(losses) - 1):
        window = losses[max(0, mark - 4): mark + 1]
        print(f"  step {mark + 1:3d}  loss {window.mean():.4f}")
