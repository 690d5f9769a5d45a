"""Training loop: alternation contracts, determinism, resume semantics,
ablation harness plumbing. Long convergence runs live in the acceptance
suite."""

import csv

import numpy as np
import pytest

from ivfuse.autodiff import Adam, Tensor
from ivfuse.discriminator import PerceptualNet
from ivfuse.errors import InputError
from ivfuse.generator import (TRANSFORMER_ORDERS, FusionConfig, GeneratorParams,
                              load_generator)
from ivfuse.losses import loss_var_ssim
from ivfuse.training import (ABLATION_AXES, TrainConfig, TrainLog, TrainLogEntry,
                             _batch_tensors, ablation_matrix, ablation_run,
                             desk_ablation_defaults, make_synthetic_pairs,
                             overfit_sanity, train, train_step_discriminators,
                             train_step_generator)

DESK = dict(cnn_layers=4, channels=8, spatial_patch=4, channel_patch=16,
            spatial_embed=64, channel_embed=32, encoder_layers=2, heads=4)


def desk_setup(seed=0, use_gan=False, n_pairs=4, **cfg_overrides):
    pairs = make_synthetic_pairs(n_pairs, size=32, seed=seed)
    fcfg = FusionConfig(**DESK)
    tcfg = TrainConfig(batch=2, seed=seed, use_gan=use_gan, **cfg_overrides)
    return pairs, fcfg, tcfg


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def test_synthetic_pairs_deterministic_and_bounded():
    a = make_synthetic_pairs(3, size=32, seed=1)
    b = make_synthetic_pairs(3, size=32, seed=1)
    for (ia, va), (ib, vb) in zip(a, b):
        np.testing.assert_array_equal(ia, ib)
        np.testing.assert_array_equal(va, vb)
        assert ia.min() >= 0 and ia.max() <= 1
        assert va.min() >= 0 and va.max() <= 1


def test_synthetic_modalities_differ_in_texture():
    # visible carries fine texture, infrared is smooth: high-frequency
    # energy must be clearly higher on the visible side
    pairs = make_synthetic_pairs(4, size=32, seed=2)
    def hf(img):
        return float(np.mean(np.abs(np.diff(img, axis=1))))
    assert np.mean([hf(v) for _, v in pairs]) > 2.0 * np.mean([hf(i) for i, _ in pairs])


# ---------------------------------------------------------------------------
# generator step
# ---------------------------------------------------------------------------

def test_generator_step_without_gan_has_zero_adversarial_terms():
    pairs, fcfg, tcfg = desk_setup(seed=3, use_gan=False)
    params = GeneratorParams(fcfg, seed=3)
    nets = (PerceptualNet(seed=4), PerceptualNet(seed=5))
    for n in nets:
        n.set_trainable(False)
    opt = Adam(params.tensors(), tcfg.lr)
    batch = _batch_tensors(pairs, [0, 1])
    components = train_step_generator(batch, params, nets, tcfg, opt)
    assert components["ir"] == 0.0 and components["vis"] == 0.0
    assert components["total"] == pytest.approx(components["var_ssim"])
    # frozen discriminators never receive gradients
    assert all(t.grad is None for n in nets for t in n.tensors())


def test_repeated_pair_fifty_steps_reduces_loss():
    pairs, fcfg, tcfg = desk_setup(seed=6, use_gan=False)
    params = GeneratorParams(fcfg, seed=6)
    nets = (PerceptualNet(seed=7), PerceptualNet(seed=8))
    opt = Adam(params.tensors(), tcfg.lr)
    batch = _batch_tensors(pairs, [0, 0])
    first = None
    for step in range(50):
        components = train_step_generator(batch, params, nets, tcfg, opt, step)
        if first is None:
            first = components["total"]
        for t in params.tensors():
            assert np.all(np.isfinite(t.grad))
    assert components["total"] < first


# ---------------------------------------------------------------------------
# discriminator step
# ---------------------------------------------------------------------------

def test_frozen_discriminator_step_is_noop():
    pairs, fcfg, tcfg = desk_setup(seed=9, use_gan=True, finetune_disc=False)
    params = GeneratorParams(fcfg, seed=9)
    nets = (PerceptualNet(seed=10), PerceptualNet(seed=11))
    before = [t.data.copy() for n in nets for t in n.tensors()]
    out = train_step_discriminators(_batch_tensors(pairs, [0, 1]), params, nets, tcfg, None)
    assert set(out) == {"ir", "vis"} and all(v >= 0 for v in out.values())
    for old, t in zip(before, [t for n in nets for t in n.tensors()]):
        np.testing.assert_array_equal(old, t.data)


def test_ascent_step_does_not_decrease_distance():
    pairs, fcfg, tcfg = desk_setup(seed=5, use_gan=True)
    params = GeneratorParams(fcfg, seed=5)
    nets = (PerceptualNet(seed=6), PerceptualNet(seed=7))
    for n in nets:
        n.set_trainable(True)
    opts = [Adam(n.tensors(), tcfg.lr * tcfg.disc_lr_scale) for n in nets]
    batch = _batch_tensors(pairs, [0, 1])
    before = train_step_discriminators(batch, params, nets, tcfg, opts)
    after = train_step_discriminators(batch, params, nets, tcfg, None)
    assert after["ir"] >= before["ir"]
    assert after["vis"] >= before["vis"]


def test_discriminator_params_change_only_in_finetune_mode():
    pairs, fcfg, _ = desk_setup(seed=12)
    params = GeneratorParams(fcfg, seed=12)
    batch = _batch_tensors(pairs, [0, 1])
    for finetune in (False, True):
        tcfg = TrainConfig(batch=2, seed=12, use_gan=True, finetune_disc=finetune)
        nets = (PerceptualNet(seed=13), PerceptualNet(seed=14))
        for n in nets:
            n.set_trainable(finetune)
        opts = [Adam(n.tensors(), 1e-5) for n in nets] if finetune else None
        before = [t.data.copy() for n in nets for t in n.tensors()]
        train_step_discriminators(batch, params, nets, tcfg, opts)
        changed = any(not np.array_equal(old, t.data)
                      for old, t in zip(before, [t for n in nets for t in n.tensors()]))
        assert changed == finetune


def test_generator_step_never_mutates_discriminators_and_vice_versa():
    pairs, fcfg, tcfg = desk_setup(seed=15, use_gan=True)
    params = GeneratorParams(fcfg, seed=15)
    nets = (PerceptualNet(seed=16), PerceptualNet(seed=17))
    for n in nets:
        n.set_trainable(True)
    gen_opt = Adam(params.tensors(), tcfg.lr)
    opts = [Adam(n.tensors(), 1e-5) for n in nets]
    batch = _batch_tensors(pairs, [0, 1])

    disc_before = [t.data.copy() for n in nets for t in n.tensors()]
    train_step_generator(batch, params, nets, tcfg, gen_opt)
    for old, t in zip(disc_before, [t for n in nets for t in n.tensors()]):
        np.testing.assert_array_equal(old, t.data)

    gen_before = [t.data.copy() for t in params.tensors()]
    train_step_discriminators(batch, params, nets, tcfg, opts)
    for old, t in zip(gen_before, params.tensors()):
        np.testing.assert_array_equal(old, t.data)


# ---------------------------------------------------------------------------
# full loop
# ---------------------------------------------------------------------------

def test_train_empty_dataset():
    with pytest.raises(InputError):
        train([], TrainConfig())


def test_train_log_is_monotonic_and_deterministic():
    pairs, fcfg, tcfg = desk_setup(seed=18, use_gan=False, max_steps=6)
    _, log1 = train(pairs, tcfg, fusion_config=fcfg)
    _, log2 = train(pairs, tcfg, fusion_config=fcfg)
    assert [e.step for e in log1.entries] == list(range(1, 7))
    assert [e.loss_total for e in log1.entries] == [e.loss_total for e in log2.entries]
    text = log1.to_csv()
    assert text.splitlines()[0] == "step,loss_total,loss_var_ssim,loss_ir,loss_vis,seconds,nan"
    assert len(text.splitlines()) == 7


def test_train_log_rejects_nonmonotonic_steps():
    log = TrainLog()
    log.append(TrainLogEntry(1, 0, 0, 0, 0, 0))
    with pytest.raises(InputError):
        log.append(TrainLogEntry(1, 0, 0, 0, 0, 0))


def test_checkpoint_resume_bitwise_identical_next_loss(tmp_path):
    pairs, fcfg, tcfg = desk_setup(seed=19, use_gan=False, max_steps=4)
    ckpt = str(tmp_path / "gen.tgf")
    params, _ = train(pairs, tcfg, fusion_config=fcfg, out_path=ckpt)

    def next_loss(p):
        batch = _batch_tensors(pairs, [0, 1])
        from ivfuse.generator import generate
        fused = generate(batch[0], batch[1], p)
        return loss_var_ssim(batch[0], batch[1], fused).item()

    direct = next_loss(params)
    resumed = next_loss(load_generator(ckpt))
    assert direct == resumed  # bitwise


def test_periodic_checkpoints_written(tmp_path):
    pairs, fcfg, tcfg = desk_setup(seed=20, use_gan=False, max_steps=4, checkpoint_every=2)
    out = str(tmp_path / "gen.tgf")
    train(pairs, tcfg, fusion_config=fcfg, out_path=out)
    assert (tmp_path / "gen.tgf").exists()
    assert (tmp_path / "gen.tgf.step2").exists()
    assert (tmp_path / "gen.tgf.step4").exists()


# ---------------------------------------------------------------------------
# overfit sanity
# ---------------------------------------------------------------------------

def test_overfit_initialized_at_target_stays_put():
    x = make_synthetic_pairs(1, size=32, seed=21)[0][1]
    report = overfit_sanity((x, x), steps=5, init=x)
    assert report["losses"][0] == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(report["image"], x, atol=1e-12)


def test_overfit_makes_progress_quickly():
    x = make_synthetic_pairs(1, size=32, seed=22)[0][1]
    report = overfit_sanity((x, x), steps=60, check_every=10)
    assert report["losses"][-1] < report["losses"][0]


# ---------------------------------------------------------------------------
# ablation harness
# ---------------------------------------------------------------------------

def test_ablation_matrix_axes_and_levels():
    rows = ablation_matrix()
    assert len(rows) == 18
    by_axis = {}
    for row in rows:
        by_axis.setdefault(row["axis"], []).append(row["level"])
    assert by_axis["gan"] == ["on", "off"]
    assert by_axis["transformer_order"] == list(TRANSFORMER_ORDERS)
    assert by_axis["position_embedding"] == ["off", "on"]
    assert by_axis["encoder_layers"] == ["3", "4", "5"]
    assert by_axis["cnn_layers"] == ["2", "3", "4", "5"]
    assert by_axis["channels"] == ["32", "64", "128"]
    assert set(ABLATION_AXES) == set(by_axis)


def test_ablation_run_emits_rows_and_resumes(tmp_path):
    # two tiny rows only; the full 18-config sweep runs in the acceptance suite
    matrix = [r for r in ablation_matrix() if r["axis"] == "position_embedding"]
    base_fusion = FusionConfig(**DESK, use_gan=False)
    base_train = TrainConfig(batch=2, seed=23, use_gan=False, max_steps=2)
    out = str(tmp_path / "ablation.csv")
    rows = ablation_run(matrix, base_fusion, base_train, out,
                        image_size=32, train_pairs=2, eval_pairs=1)
    assert len(rows) == 2
    with open(out) as fh:
        parsed = list(csv.DictReader(fh))
    assert len(parsed) == 2
    assert all(len(r) == 10 + 9 for r in parsed)  # config+status columns + 9 metrics
    assert {r["status"] for r in parsed} <= {"ok", "training_failure"}
    # rerun: nothing new trained, rows preserved
    rows2 = ablation_run(matrix, base_fusion, base_train, out,
                         image_size=32, train_pairs=2, eval_pairs=1)
    assert [r[0] for r in rows2] == [r["config_hash"] for r in parsed]


def test_desk_ablation_defaults_construct():
    base_fusion, base_train = desk_ablation_defaults(seed=1)
    assert base_train.max_steps > 0
    assert base_fusion.spatial_embed % base_fusion.heads == 0
