"""Training objective: variance-gated structural similarity.

The loss slides an 11x11 window over the image triple (infrared IX,
visible IY, fused IF). Inside each window the source with the larger
variance (the higher-contrast one) is selected as the reference, and the
SSIM between the fused window and that reference is computed. The loss is
one minus the mean of these gated similarities; its global minimum over
IF is reached when the fused image reproduces the selected reference in
every window.

The gate is a hard selection: gradients flow only through the chosen SSIM
branch, never through the variance comparison itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, InputError


@dataclass(frozen=True)
class SsimConstants:
    """Stability constants; defaults are the canonical (0.01 L)^2, (0.03 L)^2."""
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2
    dynamic_range: float = 1.0

    @staticmethod
    def for_range(L: float) -> "SsimConstants":
        return SsimConstants((0.01 * L) ** 2, (0.03 * L) ** 2, L)


@dataclass(frozen=True)
class WindowSpec:
    size: int = 11
    stride: int = 1

    def __post_init__(self):
        if self.size < 3 or self.size % 2 == 0:
            raise InputError(f"window size must be odd and >= 3, got {self.size}")
        if self.stride < 1:
            raise InputError(f"window stride must be >= 1, got {self.stride}")


DEFAULT_CONSTANTS = SsimConstants()
DEFAULT_WINDOW = WindowSpec()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def ssim(x, y, consts: SsimConstants = DEFAULT_CONSTANTS) -> Tensor:
    """SSIM of two equally-shaped blocks, statistics over all elements.

    ((2 mx my + C1)(2 cov + C2)) / ((mx^2 + my^2 + C1)(vx + vy + C2)),
    population statistics, uniform weighting. Differentiable; output is a
    scalar in [-1, 1].
    """
    x, y = _as_tensor(x), _as_tensor(y)
    if x.shape != y.shape:
        raise DimensionError(f"ssim: shapes {tuple(x.shape)} and {tuple(y.shape)} differ")
    mx, my = x.mean(), y.mean()
    vx = (x * x).mean() - mx * mx
    vy = (y * y).mean() - my * my
    cov = (x * y).mean() - mx * my
    num = (2.0 * mx * my + consts.c1) * (2.0 * cov + consts.c2)
    den = (mx * mx + my * my + consts.c1) * (vx + vy + consts.c2)
    return ad.div(num, den)


def block_variance(x) -> Tensor:
    """Population variance of a block: mean((x - mean)^2)."""
    x = _as_tensor(x)
    mx = x.mean()
    return (x * x).mean() - mx * mx


def var_ssim(ix, iy, if_, consts: SsimConstants = DEFAULT_CONSTANTS) -> Tensor:
    """Gated SSIM for one block triple.

    Chooses ssim(IX, IF) when var(IX) > var(IY), otherwise ssim(IY, IF)
    (ties go to IY). The comparison does not participate in the gradient.
    """
    ix, iy, if_ = _as_tensor(ix), _as_tensor(iy), _as_tensor(if_)
    if not (ix.shape == iy.shape == if_.shape):
        raise DimensionError(f"var_ssim: shapes {tuple(ix.shape)}/{tuple(iy.shape)}/{tuple(if_.shape)} differ")
    if float(ix.data.var()) > float(iy.data.var()):
        return ssim(ix, if_, consts)
    return ssim(iy, if_, consts)


def _to_nchw(t: Tensor) -> Tensor:
    if t.ndim == 2:
        return ad.reshape(t, (1, 1) + tuple(t.shape))
    if t.ndim == 4 and t.shape[1] == 1:
        return t
    raise DimensionError(f"expected (h, w) or (b, 1, h, w) image, got {tuple(t.shape)}")


def _window_mean(img: Tensor, size: int, stride: int) -> Tensor:
    kernel = Tensor(np.full((1, 1, size, size), 1.0 / (size * size), dtype=img.dtype))
    return ad.conv2d(img, kernel, None, stride=stride, pad=0)


def loss_var_ssim(ix, iy, if_, window: WindowSpec = DEFAULT_WINDOW,
                  consts: SsimConstants = DEFAULT_CONSTANTS) -> Tensor:
    """1 - mean over all sliding windows of the variance-gated SSIM.

    Windowed statistics are computed with uniform box filters, which is
    algebraically identical to extracting every window and evaluating
    `var_ssim` on it (the brute-force oracle used in tests). Scalar output
    in [0, 2].
    """
    ix, iy, if_ = _to_nchw(_as_tensor(ix)), _to_nchw(_as_tensor(iy)), _to_nchw(_as_tensor(if_))
    if not (ix.shape == iy.shape == if_.shape):
        raise DimensionError(f"loss_var_ssim: shapes {tuple(ix.shape)}/{tuple(iy.shape)}/{tuple(if_.shape)} differ")
    h, w = ix.shape[2], ix.shape[3]
    if h < window.size or w < window.size:
        raise InputError(f"image {h}x{w} smaller than the {window.size}x{window.size} window")

    size, stride = window.size, window.stride
    mx = _window_mean(ix, size, stride)
    my = _window_mean(iy, size, stride)
    mf = _window_mean(if_, size, stride)
    vx = _window_mean(ix * ix, size, stride) - mx * mx
    vy = _window_mean(iy * iy, size, stride) - my * my
    vf = _window_mean(if_ * if_, size, stride) - mf * mf
    cxf = _window_mean(ix * if_, size, stride) - mx * mf
    cyf = _window_mean(iy * if_, size, stride) - my * mf

    def ssim_map(mu_r, var_r, cov_rf):
        num = (2.0 * mu_r * mf + consts.c1) * (2.0 * cov_rf + consts.c2)
        den = (mu_r * mu_r + mf * mf + consts.c1) * (var_r + vf + consts.c2)
        return ad.div(num, den)

    # hard per-window gate, constant w.r.t. the graph
    take_x = Tensor((vx.data > vy.data).astype(ix.dtype))
    gated = take_x * ssim_map(mx, vx, cxf) + (1.0 - take_x) * ssim_map(my, vy, cyf)
    return 1.0 - gated.mean()


def generator_total_loss(ix, iy, if_, nets, spec=None,
                         lambda_ir: float = 0.01, lambda_vis: float = 0.01,
                         window: WindowSpec = DEFAULT_WINDOW,
                         consts: SsimConstants = DEFAULT_CONSTANTS):
    """Full generator objective and its components.

    loss_var_ssim plus the two feature-level adversarial distances:
    lambda_ir * d(fused, infrared | ir-net stage 4) and
    lambda_vis * d(fused, visible | vis-net stage 1). With both lambdas
    zero (use_gan off) the result is exactly `loss_var_ssim`.

    Returns (total, components) where components maps
    {"var_ssim", "ir", "vis"} to floats.
    """
    from .discriminator import DiscriminatorSpec, discriminator_loss

    if lambda_ir < 0 or lambda_vis < 0:
        raise InputError("adversarial weights must be non-negative")
    spec = spec or DiscriminatorSpec()
    total = loss_var_ssim(ix, iy, if_, window, consts)
    components = {"var_ssim": total.item(), "ir": 0.0, "vis": 0.0}
    if lambda_ir > 0:
        ir_net, _ = nets
        d = discriminator_loss(_to_nchw(_as_tensor(if_)), _to_nchw(_as_tensor(ix)), ir_net, spec.ir_stage)
        components["ir"] = d.item()
        total = total + lambda_ir * d
    if lambda_vis > 0:
        _, vis_net = nets
        d = discriminator_loss(_to_nchw(_as_tensor(if_)), _to_nchw(_as_tensor(iy)), vis_net, spec.vis_stage)
        components["vis"] = d.item()
        total = total + lambda_vis * d
    return total, components
