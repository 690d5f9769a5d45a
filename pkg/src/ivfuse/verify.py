"""Named finite-difference checks over every differentiable operation.

Each entry builds float64 inputs, runs `grad_check` and returns
(max_rel_err, tolerance). Ops are checked at 1e-4; deep composites
(transformers, discriminator stages, the full generator) at 1e-3.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .discriminator import PerceptualNet, discriminator_loss
from .generator import (FusionConfig, GeneratorParams, generate, res_block,
                        transformer_fusion_module)
from .losses import loss_var_ssim, ssim

OP_TOL = 1e-4
COMPOSITE_TOL = 1e-3


def _rng(seed):
    return np.random.default_rng(seed)


def _t(seed, shape, lo=-1.0, hi=1.0):
    return Tensor(_rng(seed).uniform(lo, hi, size=shape))


def _small_config():
    return FusionConfig(cnn_layers=4, channels=8, spatial_patch=4, channel_patch=16,
                        spatial_embed=64, channel_embed=32, encoder_layers=2, heads=4)


def _sq_sum(t):
    return (t * t).sum()


def _check_matmul(seed):
    a, b = _t(seed, (4, 5)), _t(seed + 1, (5, 6))
    return grad_check(lambda a, b: _sq_sum(ad.matmul(a, b)), [a, b]), OP_TOL


def _check_conv2d(seed):
    x, w, b = _t(seed, (1, 2, 5, 5)), _t(seed + 1, (3, 2, 3, 3)), _t(seed + 2, (3,))
    return grad_check(lambda x, w, b: _sq_sum(ad.conv2d(x, w, b, 2, 1)), [x, w, b]), OP_TOL


def _check_elementwise(seed):
    x, y = _t(seed, (3, 4)), _t(seed + 1, (3, 4))

    def builder(x, y):
        out = ad.relu(x) + ad.gelu(y) * ad.sigmoid(x) - ad.absolute(ad.mul(x, y))
        return _sq_sum(out)

    return grad_check(builder, [x, y]), OP_TOL


def _check_softmax(seed):
    x = _t(seed, (2, 6))
    target = _rng(seed + 1).uniform(size=(2, 6))
    return grad_check(lambda x: (ad.softmax(x, -1) * Tensor(target)).sum(), [x]), OP_TOL


def _check_layer_norm(seed):
    x, g, b = _t(seed, (2, 4, 8)), _t(seed + 1, (8,)), _t(seed + 2, (8,))
    return grad_check(lambda x, g, b: _sq_sum(ad.layer_norm(x, g, b)), [x, g, b]), OP_TOL


def _check_resample_bilinear(seed):
    x = _t(seed, (1, 2, 4, 4))
    return grad_check(lambda x: _sq_sum(ad.resample(x, 7, 9, "bilinear")), [x]), OP_TOL


def _check_resample_nearest_avgpool(seed):
    x = _t(seed, (1, 2, 4, 4))

    def builder(x):
        up = ad.resample(x, 8, 8, "nearest")
        return _sq_sum(ad.resample(up, 2, 2, "avgpool"))

    return grad_check(builder, [x]), OP_TOL


def _check_reshape_permute(seed):
    x = _t(seed, (1, 2, 4, 4))
    w = _rng(seed + 1).uniform(size=(1, 2, 4, 4))

    def builder(x):
        back = ad.unpatchify(ad.patchify(x, 2), 2, 4, 4, 2)
        return (back * Tensor(w)).sum()

    return grad_check(builder, [x]), OP_TOL


def _check_maxpool(seed):
    x = _t(seed, (1, 2, 6, 6))
    return grad_check(lambda x: _sq_sum(ad.maxpool2(x)), [x]), OP_TOL


def _check_ssim(seed):
    x = _t(seed, (1, 1, 16, 16), 0.0, 1.0)
    y = _t(seed + 1, (1, 1, 16, 16), 0.0, 1.0)
    return grad_check(lambda x, y: ssim(x, y), [x, y]), OP_TOL


def _check_loss_var_ssim(seed):
    ix = _t(seed, (16, 16), 0.0, 1.0)
    iy = _t(seed + 1, (16, 16), 0.0, 1.0)
    f = _t(seed + 2, (16, 16), 0.0, 1.0)
    return grad_check(lambda f: loss_var_ssim(ix, iy, f), [f]), OP_TOL


def _check_res_block(seed):
    params = GeneratorParams(_small_config(), seed=seed, dtype=np.float64)
    block = params.stem_blocks[0]
    x = _t(seed + 1, (1, 8, 8, 8))
    return grad_check(lambda x: _sq_sum(res_block(x, block, 1)), [x]), OP_TOL


def _check_composite_transformer(seed):
    params = GeneratorParams(_small_config(), seed=seed, dtype=np.float64)
    f = _t(seed + 1, (1, 8, 16, 16))
    return grad_check(
        lambda f: _sq_sum(transformer_fusion_module(f, params, "channel_then_spatial")),
        [f]), COMPOSITE_TOL


def _check_discriminator(seed):
    net = PerceptualNet(seed=seed, dtype=np.float64)
    target = _t(seed + 1, (1, 1, 8, 8), 0.0, 1.0)
    fused = _t(seed + 2, (1, 1, 8, 8), 0.0, 1.0)
    return grad_check(lambda f: discriminator_loss(f, target, net, 2), [fused]), COMPOSITE_TOL


def _check_generator(seed):
    params = GeneratorParams(_small_config(), seed=seed, dtype=np.float64)
    ir = _t(seed + 1, (1, 1, 32, 32), 0.0, 1.0)
    vis = _t(seed + 2, (1, 1, 32, 32), 0.0, 1.0)
    # check input pixels plus a parameter tensor from each pipeline stage
    probes = [ir, vis, params.stem_proj.w, params.chan.proj.w,
              params.spat.head.w, params.out_projs[0].w]

    def builder(ir, vis, *rest):
        return _sq_sum(generate(ir, vis, params))

    return grad_check(builder, probes), COMPOSITE_TOL


GRADCHECK_SUITE = {
    "matmul": _check_matmul,
    "conv2d": _check_conv2d,
    "elementwise": _check_elementwise,
    "softmax": _check_softmax,
    "layer_norm": _check_layer_norm,
    "resample_bilinear": _check_resample_bilinear,
    "resample_nearest_avgpool": _check_resample_nearest_avgpool,
    "reshape_permute": _check_reshape_permute,
    "maxpool": _check_maxpool,
    "ssim": _check_ssim,
    "loss_var_ssim": _check_loss_var_ssim,
    "res_block": _check_res_block,
    "composite_transformer": _check_composite_transformer,
    "discriminator": _check_discriminator,
    "generator": _check_generator,
}


def run_gradcheck(name: str, seed: int = 0):
    return GRADCHECK_SUITE[name](seed)


def run_all(seed: int = 0):
    """[(name, err, tol)] for the whole suite."""
    return [(name, *fn(seed)) for name, fn in GRADCHECK_SUITE.items()]
