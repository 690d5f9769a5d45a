"""Feature-level perceptual discriminators.

Instead of real/fake classification, each discriminator is a truncated
VGG-16 feature extractor (four stages, each ending in a 2x2 max-pool,
channel widths 64/128/256/512). The discrimination signal is the mean
absolute distance between stage features of the fused image and a source
image: the infrared discriminator compares deep stage-4 features (salient
structure), the visible one stage-1 features (fine detail).

Weights default to a deterministic seeded init and can be loaded from a
"TGFD" container (e.g. converted from actually pretrained weights); the
nets may be frozen or fine-tuned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import DISCRIMINATOR_MAGIC, load_container, save_container
from .errors import DimensionError

STAGE_WIDTHS = (64, 128, 256, 512)
STAGE_DEPTHS = (2, 2, 3, 3)


@dataclass(frozen=True)
class DiscriminatorSpec:
    """Which stage each modality's distance is computed at."""
    ir_stage: int = 4
    vis_stage: int = 1

    def __post_init__(self):
        if not (1 <= self.ir_stage <= 4 and 1 <= self.vis_stage <= 4):
            raise DimensionError("discriminator stages must be in 1..4")


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class PerceptualNet:
    """Truncated VGG-16 topology with per-stage conv parameter lists.

    `clip_bound` per tensor records the init range; fine-tuning projects
    weights back into that box after each ascent step (a bounded critic:
    unbounded ascent on a 10-layer feature distance compounds
    multiplicatively and diverges).
    """

    def __init__(self, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.stages = []
        self.clip_bounds = {}
        cin = 3
        for width, depth in zip(STAGE_WIDTHS, STAGE_DEPTHS):
            convs = []
            for _ in range(depth):
                bound = float(np.sqrt(6.0 / (cin * 9)))
                w = Tensor(_kaiming_uniform(rng, (width, cin, 3, 3), cin * 9, dtype))
                b = Tensor(np.zeros(width, dtype=dtype))
                self.clip_bounds[id(w)] = bound
                self.clip_bounds[id(b)] = bound
                convs.append((w, b))
                cin = width
            self.stages.append(convs)

    def project_weights(self) -> None:
        """Clamp every tensor to its initialization box, in place."""
        for t in self.tensors():
            bound = self.clip_bounds[id(t)]
            np.clip(t.data, -bound, bound, out=t.data)

    def named_tensors(self):
        for si, convs in enumerate(self.stages, start=1):
            for ci, (w, b) in enumerate(convs, start=1):
                yield f"stage{si}.conv{ci}.w", w
                yield f"stage{si}.conv{ci}.b", b

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def set_trainable(self, flag: bool) -> None:
        for t in self.tensors():
            t.requires_grad = bool(flag)
            if not flag:
                t.grad = None

    @property
    def trainable(self) -> bool:
        return any(t.requires_grad for t in self.tensors())


def extract_stage_features(img: Tensor, net: PerceptualNet, stage: int) -> Tensor:
    """Features after the pooling of `stage`; grayscale input replicated to RGB."""
    if not 1 <= stage <= 4:
        raise DimensionError(f"stage must be in 1..4, got {stage}")
    if img.ndim != 4 or img.shape[1] != 1:
        raise DimensionError(f"expected (b, 1, h, w) input, got {tuple(img.shape)}")
    h, w = img.shape[2], img.shape[3]
    if h % (2 ** stage) or w % (2 ** stage):
        raise DimensionError(f"extents {h}x{w} must be divisible by 2^{stage} for stage {stage}")
    x = ad.concat([img, img, img], axis=1)
    for convs in net.stages[:stage]:
        for (wt, bt) in convs:
            x = ad.relu(ad.conv2d(x, wt, bt, stride=1, pad=1))
        x = ad.maxpool2(x)
    return x


def feature_distance(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference over all feature elements (symmetric, >= 0)."""
    if a.shape != b.shape:
        raise DimensionError(f"feature_distance: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")
    return ad.absolute(a - b).mean()


def discriminator_loss(fused: Tensor, target: Tensor, net: PerceptualNet, stage: int) -> Tensor:
    """Stage-feature distance between fused and target images.

    The generator descends this; in fine-tune mode the discriminator
    ascends it.
    """
    return feature_distance(extract_stage_features(fused, net, stage),
                            extract_stage_features(target, net, stage))


def save_weights(net: PerceptualNet, path: str) -> None:
    named = list(net.named_tensors())
    save_container(path, DISCRIMINATOR_MAGIC, {"format": "1", "layout": "vgg16_pool4"},
                   [t.data for _, t in named])


def load_weights(net: PerceptualNet, path: str) -> PerceptualNet:
    """Install weights from a TGFD container; net is untouched on any error."""
    named = list(net.named_tensors())
    _, arrays = load_container(path, DISCRIMINATOR_MAGIC,
                               [(name, t.shape) for name, t in named])
    for (_, t), arr in zip(named, arrays):
        t.data = np.ascontiguousarray(arr.astype(t.data.dtype))
    return net
