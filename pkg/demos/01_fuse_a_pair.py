"""Fuse a synthetic infrared/visible pair with an untrained generator.

Walks the full inference path: build a pair, construct generator
parameters from a seed, run the fusion pipeline, write PGM files you can
open in any image viewer.
"""

import os

import numpy as np

from ivfuse.autodiff import Tensor
from ivfuse.generator import FusionConfig, GeneratorParams, generate
from ivfuse.imgio import save_image
from ivfuse.training import make_synthetic_pairs

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

# a small-but-complete architecture: all four scales, both transformers
config = FusionConfig(channels=16, spatial_embed=128, channel_embed=64,
                      encoder_layers=2, heads=4)
params = GeneratorParams(config, seed=42)
print(f"generator has {params.count():,} parameters "
      f"(inputs must divide {config.downsample_multiple})")

ir, vis = make_synthetic_pairs(1, size=64, seed=7)[0]
fused = generate(Tensor(ir[None, None].astype(np.float32)),
                 Tensor(vis[None, None].astype(np.float32)), params)

for name, img in (("ir", ir), ("vis", vis), ("fused", fused.data[0, 0])):
    path = os.path.join(OUT, f"pair_{name}.pgm")
    save_image(path, img)
    print(f"wrote {path}  range [{img.min():.3f}, {img.max():.3f}]")
