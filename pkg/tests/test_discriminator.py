"""Perceptual-net topology, feature distances, weight containers."""

import numpy as np
import pytest

from ivfuse.autodiff import Tensor, grad_check
from ivfuse.discriminator import (DiscriminatorSpec, PerceptualNet,
                                  discriminator_loss, extract_stage_features,
                                  feature_distance, load_weights, save_weights)
from ivfuse.errors import DimensionError, FormatError


def gray(shape, seed=0, dtype=np.float32):
    return Tensor(np.random.default_rng(seed).uniform(size=shape).astype(dtype))


def test_spec_defaults():
    spec = DiscriminatorSpec()
    assert (spec.ir_stage, spec.vis_stage) == (4, 1)
    with pytest.raises(DimensionError):
        DiscriminatorSpec(ir_stage=5)


def test_stage_shapes_follow_halving_law():
    net = PerceptualNet(seed=0)
    img = gray((1, 1, 256, 256), seed=1)
    f1 = extract_stage_features(img, net, 1)
    assert f1.shape == (1, 64, 128, 128)
    f4 = extract_stage_features(img, net, 4)
    assert f4.shape == (1, 512, 16, 16)


def test_stage_shapes_small_inputs():
    net = PerceptualNet(seed=0)
    img = gray((2, 1, 32, 32), seed=2)
    for stage, (c, s) in enumerate([(64, 16), (128, 8), (256, 4), (512, 2)], start=1):
        assert extract_stage_features(img, net, stage).shape == (2, c, s, s)


def test_indivisible_extent_raises():
    net = PerceptualNet(seed=0)
    with pytest.raises(DimensionError):
        extract_stage_features(gray((1, 1, 20, 32)), net, 4)


def test_identical_inputs_zero_distance():
    net = PerceptualNet(seed=3)
    img = gray((1, 1, 32, 32), seed=4)
    a = extract_stage_features(img, net, 2)
    b = extract_stage_features(Tensor(img.data.copy()), net, 2)
    assert feature_distance(a, b).item() == 0.0


def test_feature_distance_hand_value():
    a, b = Tensor(np.array([1.0, 2.0])), Tensor(np.array([2.0, 4.0]))
    assert feature_distance(a, b).item() == 1.5
    assert feature_distance(b, a).item() == 1.5
    with pytest.raises(DimensionError):
        feature_distance(a, Tensor(np.zeros(3)))


def test_feature_distance_triangle_inequality():
    rng = np.random.default_rng(5)
    for _ in range(10):
        a, b, c = (Tensor(rng.normal(size=(4, 4))) for _ in range(3))
        dab = feature_distance(a, b).item()
        dbc = feature_distance(b, c).item()
        dac = feature_distance(a, c).item()
        assert dac <= dab + dbc + 1e-12


def test_discriminator_loss_zero_and_nonnegative():
    net = PerceptualNet(seed=6)
    img = gray((1, 1, 16, 16), seed=7)
    assert discriminator_loss(img, Tensor(img.data.copy()), net, 1).item() == 0.0
    other = gray((1, 1, 16, 16), seed=8)
    assert discriminator_loss(img, other, net, 1).item() > 0.0


def test_discriminator_loss_positive_for_small_perturbation():
    net = PerceptualNet(seed=9)
    img = gray((1, 1, 16, 16), seed=10, dtype=np.float64)
    bumped = img.data.copy()
    bumped[0, 0, 5, 5] += 1e-3
    assert discriminator_loss(Tensor(bumped), img, net, 1).item() > 0.0


def test_discriminator_loss_gradient_wrt_fused():
    net = PerceptualNet(seed=11, dtype=np.float64)
    target = gray((1, 1, 8, 8), seed=12, dtype=np.float64)
    fused = gray((1, 1, 8, 8), seed=13, dtype=np.float64)
    err = grad_check(lambda f: discriminator_loss(f, target, net, 2), [fused])
    assert err < 1e-3


def test_frozen_net_is_pure_function():
    net = PerceptualNet(seed=14)
    net.set_trainable(False)
    img = gray((1, 1, 32, 32), seed=15)
    other = gray((1, 1, 32, 32), seed=16)
    a = discriminator_loss(img, other, net, 3).item()
    b = discriminator_loss(img, other, net, 3).item()
    assert a == b
    assert not net.trainable


def test_weight_round_trip_bitwise(tmp_path):
    net = PerceptualNet(seed=17)
    path = str(tmp_path / "disc.tgfd")
    save_weights(net, path)
    other = PerceptualNet(seed=99)
    load_weights(other, path)
    img = gray((1, 1, 32, 32), seed=18)
    fa = extract_stage_features(img, net, 4).data
    fb = extract_stage_features(img, other, 4).data
    np.testing.assert_array_equal(fa, fb)


def test_truncated_weights_leave_net_unmodified(tmp_path):
    net = PerceptualNet(seed=19)
    save_weights(net, str(tmp_path / "disc.tgfd"))
    blob = (tmp_path / "disc.tgfd").read_bytes()
    (tmp_path / "cut.tgfd").write_bytes(blob[: len(blob) - 1000])
    victim = PerceptualNet(seed=20)
    before = [t.data.copy() for t in victim.tensors()]
    with pytest.raises(FormatError) as exc:
        load_weights(victim, str(tmp_path / "cut.tgfd"))
    assert "stage" in str(exc.value)  # names the first offending tensor
    for old, t in zip(before, victim.tensors()):
        np.testing.assert_array_equal(old, t.data)


def test_two_seeds_differ():
    img = gray((1, 1, 32, 32), seed=21)
    fa = extract_stage_features(img, PerceptualNet(seed=1), 4)
    fb = extract_stage_features(img, PerceptualNet(seed=2), 4)
    assert feature_distance(fa, fb).item() > 0.0
