"""Loss correctness: closed forms, brute-force sliding-window oracle,
branch selection, finite-difference gradients."""

import numpy as np
import pytest

from conftest import structured_image
from ivfuse.autodiff import Tensor, backward, grad_check
from ivfuse.errors import DimensionError, InputError
from ivfuse.losses import (DEFAULT_CONSTANTS, SsimConstants, WindowSpec,
                           block_variance, loss_var_ssim, ssim, var_ssim)

C1 = DEFAULT_CONSTANTS.c1
C2 = DEFAULT_CONSTANTS.c2


# ---------------------------------------------------------------------------
# independent oracle: direct per-window loop
# ---------------------------------------------------------------------------

def ssim_oracle(x, y, c1=C1, c2=C2):
    mx, my = x.mean(), y.mean()
    vx, vy = ((x - mx) ** 2).mean(), ((y - my) ** 2).mean()
    cov = ((x - mx) * (y - my)).mean()
    return ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def loss_oracle(ix, iy, if_, size=11, stride=1):
    h, w = ix.shape
    vals = []
    for r in range(0, h - size + 1, stride):
        for c in range(0, w - size + 1, stride):
            wx = ix[r:r + size, c:c + size]
            wy = iy[r:r + size, c:c + size]
            wf = if_[r:r + size, c:c + size]
            ref = wx if wx.var() > wy.var() else wy
            vals.append(ssim_oracle(ref, wf))
    return 1.0 - np.mean(vals)


# ---------------------------------------------------------------------------
# ssim
# ---------------------------------------------------------------------------

def test_ssim_self_is_one():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(11, 11))
    assert abs(ssim(Tensor(x), Tensor(x)).item() - 1.0) < 1e-12


def test_ssim_symmetry():
    rng = np.random.default_rng(1)
    x, y = rng.uniform(size=(11, 11)), rng.uniform(size=(11, 11))
    assert ssim(Tensor(x), Tensor(y)).item() == pytest.approx(ssim(Tensor(y), Tensor(x)).item(), abs=1e-15)


def test_ssim_zeros_vs_ones_closed_form():
    # mu_x=0, mu_y=1, all variances 0:
    # ((0 + C1)(0 + C2)) / ((1 + C1)(0 + C2)) = C1 / (1 + C1)
    val = ssim(Tensor(np.zeros((11, 11))), Tensor(np.ones((11, 11)))).item()
    assert val == pytest.approx(C1 / (1.0 + C1), rel=1e-12)


def test_ssim_shape_mismatch():
    with pytest.raises(DimensionError):
        ssim(Tensor(np.zeros((3, 3))), Tensor(np.zeros((4, 4))))


def test_ssim_bounded_and_matches_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x, y = rng.uniform(size=(9, 9)), rng.uniform(size=(9, 9))
        v = ssim(Tensor(x), Tensor(y)).item()
        assert -1.0 <= v <= 1.0
        assert v == pytest.approx(ssim_oracle(x, y), abs=1e-12)


def test_ssim_gradient():
    rng = np.random.default_rng(3)
    x = Tensor(rng.uniform(size=(1, 1, 16, 16)).astype(np.float64))
    y = Tensor(rng.uniform(size=(1, 1, 16, 16)).astype(np.float64))
    assert grad_check(lambda x, y: ssim(x, y), [x, y]) < 1e-4


# ---------------------------------------------------------------------------
# block variance
# ---------------------------------------------------------------------------

def test_variance_constant_block():
    assert block_variance(Tensor(np.full((5, 5), 0.3))).item() == pytest.approx(0.0, abs=1e-15)


def test_variance_checkerboard():
    board = np.indices((6, 6)).sum(axis=0) % 2
    assert block_variance(Tensor(board.astype(float))).item() == pytest.approx(0.25, abs=1e-15)


def test_variance_shift_invariance():
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(7, 7))
    a = block_variance(Tensor(x)).item()
    b = block_variance(Tensor(x + 0.37)).item()
    assert abs(a - b) < 1e-12


# ---------------------------------------------------------------------------
# variance-gated selection
# ---------------------------------------------------------------------------

def _blocks_for_gate():
    rng = np.random.default_rng(5)
    ix = (np.indices((11, 11)).sum(axis=0) % 2).astype(float)  # var 0.25
    iy = np.full((11, 11), 0.5)
    iy[::2, ::2] = 0.6                                          # small variance
    if_ = rng.uniform(size=(11, 11))
    return ix, iy, if_


def test_gate_selects_higher_variance_source():
    ix, iy, if_ = _blocks_for_gate()
    assert np.var(ix) > np.var(iy)
    got = var_ssim(Tensor(ix), Tensor(iy), Tensor(if_)).item()
    assert got == ssim(Tensor(ix), Tensor(if_)).item()
    # swap roles: with the variances reversed the other branch is taken
    got = var_ssim(Tensor(iy), Tensor(ix), Tensor(if_)).item()
    assert got == ssim(Tensor(ix), Tensor(if_)).item()


def test_gate_tie_goes_to_second_source():
    rng = np.random.default_rng(6)
    x = rng.uniform(size=(11, 11))
    f = rng.uniform(size=(11, 11))
    assert var_ssim(Tensor(x), Tensor(x), Tensor(f)).item() == ssim(Tensor(x), Tensor(f)).item()


def test_gate_invariant_to_common_shift():
    # shifting BOTH candidates leaves variances, hence the branch, unchanged
    ix, iy, if_ = _blocks_for_gate()
    for c in (0.13, -0.4, 2.0):
        shifted = var_ssim(Tensor(ix + c), Tensor(iy + c), Tensor(if_)).item()
        # branch is still IX: the result equals ssim(IX + c, IF), not ssim(IY + c, IF)
        assert shifted == ssim(Tensor(ix + c), Tensor(if_)).item()


# ---------------------------------------------------------------------------
# sliding-window loss
# ---------------------------------------------------------------------------

def test_loss_identity_triple_is_zero():
    x = structured_image(32, seed=10)
    val = loss_var_ssim(Tensor(x), Tensor(x), Tensor(x)).item()
    assert abs(val) < 1e-9


def test_loss_uncorrelated_noise_is_high():
    rng = np.random.default_rng(11)
    x = structured_image(32, seed=12)
    noise = rng.uniform(size=(32, 32))
    val = loss_var_ssim(Tensor(x), Tensor(x), Tensor(noise)).item()
    assert val > 0.8


def test_loss_matches_brute_force_oracle():
    for seed in (20, 21, 22):
        rng = np.random.default_rng(seed)
        ix = structured_image(32, seed=seed)
        iy = structured_image(32, seed=seed + 100)
        if_ = np.clip(0.5 * ix + 0.5 * iy + 0.05 * rng.standard_normal((32, 32)), 0, 1)
        fast = loss_var_ssim(Tensor(ix), Tensor(iy), Tensor(if_)).item()
        slow = loss_oracle(ix, iy, if_)
        assert abs(fast - slow) < 1e-10


def test_loss_stride_matches_oracle():
    ix = structured_image(24, seed=30)
    iy = structured_image(24, seed=31)
    if_ = structured_image(24, seed=32)
    fast = loss_var_ssim(Tensor(ix), Tensor(iy), Tensor(if_), WindowSpec(11, 3)).item()
    assert abs(fast - loss_oracle(ix, iy, if_, 11, 3)) < 1e-10


def test_loss_image_smaller_than_window():
    small = np.zeros((8, 8))
    with pytest.raises(InputError):
        loss_var_ssim(Tensor(small), Tensor(small), Tensor(small))


def test_loss_gradient_wrt_fused():
    # the gate depends on the sources only, so perturbing IF never flips it
    ix = structured_image(20, seed=40)
    iy = structured_image(20, seed=41)
    if_ = Tensor(structured_image(20, seed=42))
    err = grad_check(lambda f: loss_var_ssim(Tensor(ix), Tensor(iy), f), [if_])
    assert err < 1e-4


def test_loss_batched_equals_mean_of_singles():
    ix = np.stack([structured_image(16, seed=s) for s in (50, 51)])[:, None]
    iy = np.stack([structured_image(16, seed=s) for s in (52, 53)])[:, None]
    if_ = np.stack([structured_image(16, seed=s) for s in (54, 55)])[:, None]
    batched = loss_var_ssim(Tensor(ix), Tensor(iy), Tensor(if_)).item()
    singles = [loss_var_ssim(Tensor(ix[i, 0]), Tensor(iy[i, 0]), Tensor(if_[i, 0])).item()
               for i in range(2)]
    assert batched == pytest.approx(np.mean(singles), abs=1e-12)


def test_window_spec_validation():
    with pytest.raises(InputError):
        WindowSpec(size=4)
    with pytest.raises(InputError):
        WindowSpec(stride=0)


def test_constants_for_range():
    c = SsimConstants.for_range(255.0)
    assert c.c1 == pytest.approx((0.01 * 255) ** 2)
    assert c.c2 == pytest.approx((0.03 * 255) ** 2)
