"""Desk-scale training: alternating generator/discriminator updates,
an overfit sanity check, and the ablation sweep harness.

Nothing here targets full-dataset training; the point is that every part
of the objective and architecture can be exercised end-to-end in minutes
on synthetic pairs. The synthetic data deliberately encodes the
contrast asymmetry the variance gate keys on: visible images carry
smooth gradients plus fine texture, infrared images carry blurred "hot"
blobs on a low-texture background.
"""

from __future__ import annotations

import csv
import hashlib
import io
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import ndimage

from .autodiff import Adam, Tensor, backward
from .discriminator import DiscriminatorSpec, PerceptualNet
from .errors import InputError, NumericalError
from .generator import (TRANSFORMER_ORDERS, FusionConfig, GeneratorParams,
                        generate, save_generator)
from .losses import DEFAULT_WINDOW, generator_total_loss, loss_var_ssim, ssim
from .metrics import CSV_COLUMNS, evaluate_all


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch: int = 16
    epochs: int = 20
    seed: int = 0
    use_gan: bool = True
    lambda_ir: float = 0.01
    lambda_vis: float = 0.01
    disc_lr_scale: float = 0.1
    checkpoint_every: int = 0      # 0: only the final checkpoint is written
    finetune_disc: bool = True     # False: frozen discriminators
    max_steps: int = 0             # 0: run the configured epochs

    def __post_init__(self):
        if self.lr <= 0:
            raise InputError("lr must be positive")
        if self.batch < 1 or self.epochs < 1:
            raise InputError("batch and epochs must be >= 1")
        if self.lambda_ir < 0 or self.lambda_vis < 0:
            raise InputError("adversarial weights must be non-negative")


@dataclass
class TrainLogEntry:
    step: int
    loss_total: float
    loss_var_ssim: float
    loss_ir: float
    loss_vis: float
    seconds: float
    nan: bool = False


@dataclass
class TrainLog:
    entries: list = field(default_factory=list)

    def append(self, entry: TrainLogEntry) -> None:
        if self.entries and entry.step <= self.entries[-1].step:
            raise InputError("train log steps must strictly increase")
        self.entries.append(entry)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "loss_total", "loss_var_ssim", "loss_ir",
                         "loss_vis", "seconds", "nan"])
        for e in self.entries:
            writer.writerow([e.step, f"{e.loss_total:.8f}", f"{e.loss_var_ssim:.8f}",
                             f"{e.loss_ir:.8f}", f"{e.loss_vis:.8f}",
                             f"{e.seconds:.4f}", int(e.nan)])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def make_synthetic_pairs(n: int, size: int = 32, seed: int = 0):
    """Aligned (ir, vis) float arrays in [0, 1], deterministic per seed."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    pairs = []
    for _ in range(n):
        ax, ay = rng.uniform(0.2, 0.8, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        vis = 0.45 * (ax * xx + ay * yy) + 0.18 * np.sin(7 * xx + phase) * np.cos(5 * yy)
        vis += 0.10 * rng.standard_normal((size, size))
        vis -= vis.min()
        vis /= max(vis.max(), 1e-9)

        ir = np.full((size, size), 0.12)
        for _ in range(rng.integers(1, 4)):
            cy, cx = rng.uniform(0.2, 0.8, size=2) * size
            amp = rng.uniform(0.6, 0.95)
            sigma = rng.uniform(0.08, 0.2) * size
            dist2 = (np.arange(size)[:, None] - cy) ** 2 + (np.arange(size)[None, :] - cx) ** 2
            ir += amp * np.exp(-dist2 / (2 * sigma * sigma))
        ir = ndimage.gaussian_filter(ir, sigma=1.0)
        ir += 0.01 * rng.standard_normal((size, size))
        ir = np.clip(ir, 0.0, 1.0)
        pairs.append((ir, np.clip(vis, 0.0, 1.0)))
    return pairs


def _batch_tensors(dataset, indices, dtype=np.float32):
    ir = np.stack([dataset[i][0] for i in indices])[:, None].astype(dtype)
    vis = np.stack([dataset[i][1] for i in indices])[:, None].astype(dtype)
    return Tensor(ir), Tensor(vis)


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------

def train_step_generator(batch, params: GeneratorParams, nets, cfg: TrainConfig,
                         opt: Adam, step: int = 0) -> dict:
    """One Adam update of the generator; discriminators are frozen here."""
    ir, vis = batch
    fused = generate(ir, vis, params)
    lam_ir = cfg.lambda_ir if cfg.use_gan else 0.0
    lam_vis = cfg.lambda_vis if cfg.use_gan else 0.0
    total, components = generator_total_loss(ir, vis, fused, nets,
                                             lambda_ir=lam_ir, lambda_vis=lam_vis)
    value = total.item()
    if not np.isfinite(value):
        raise NumericalError(f"generator loss is not finite at step {step}")
    opt.zero_grad()
    params.zero_grad()
    backward(total)
    opt.step()
    components["total"] = value
    return components


def train_step_discriminators(batch, params: GeneratorParams, nets, cfg: TrainConfig,
                              opts=None, step: int = 0,
                              spec: DiscriminatorSpec = DiscriminatorSpec()) -> dict:
    """One ascent step on each discriminator's feature distance.

    In frozen mode (no fine-tuning) this is a no-op that just reports the
    current distances; the generator is never touched either way.
    """
    from . import autodiff as ad
    from .discriminator import extract_stage_features, feature_distance

    ir, vis = batch
    fused = generate(ir, vis, params).detach()
    ir_net, vis_net = nets
    finetune = cfg.use_gan and cfg.finetune_disc and opts is not None
    out = {}
    for name, net, target, stage, opt in (("ir", ir_net, ir, spec.ir_stage,
                                           opts[0] if opts else None),
                                          ("vis", vis_net, vis, spec.vis_stage,
                                           opts[1] if opts else None)):
        fa = extract_stage_features(fused, net, stage)
        fb = extract_stage_features(target.detach(), net, stage)
        dist = feature_distance(fa, fb)
        value = dist.item()
        if not np.isfinite(value):
            raise NumericalError(f"{name} discriminator distance not finite at step {step}")
        out[name] = value
        if finetune:
            # ascend the scale-normalized separation: ascending the raw
            # distance is degenerate (coherently scaling 10 layers of
            # weights grows it exponentially with no equilibrium), while
            # the normalized objective is bounded and scale-indifferent
            scale = ad.absolute(fa).mean() + ad.absolute(fb).mean()
            objective = ad.div(dist, scale + 1e-6)
            opt.zero_grad()
            backward(objective)
            for t in net.tensors():
                if t.grad is not None:
                    t.grad = -t.grad
            opt.step()
            net.project_weights()
    return out


# ---------------------------------------------------------------------------
# full loop
# ---------------------------------------------------------------------------

def train(dataset, cfg: TrainConfig, fusion_config: FusionConfig | None = None,
          out_path: str | None = None, params: GeneratorParams | None = None):
    """Alternating training over aligned pairs; returns (params, TrainLog).

    Each step runs a generator update and, when use_gan and fine-tuning
    are enabled, a discriminator ascent update on the same batch.
    Deterministic for a fixed seed.
    """
    if not dataset:
        raise InputError("train: empty dataset")
    shapes = {d[0].shape for d in dataset} | {d[1].shape for d in dataset}
    if len(shapes) != 1:
        raise InputError(f"train: all pairs must share one extent, got {sorted(shapes)}")

    fcfg = fusion_config or FusionConfig()
    if params is None:
        params = GeneratorParams(fcfg, seed=cfg.seed)
    else:
        fcfg = params.config
    ir_net = PerceptualNet(seed=cfg.seed + 1)
    vis_net = PerceptualNet(seed=cfg.seed + 2)
    finetune = cfg.use_gan and cfg.finetune_disc
    ir_net.set_trainable(finetune)
    vis_net.set_trainable(finetune)
    nets = (ir_net, vis_net)

    gen_opt = Adam(params.tensors(), cfg.lr)
    disc_opts = ([Adam(ir_net.tensors(), cfg.lr * cfg.disc_lr_scale),
                  Adam(vis_net.tensors(), cfg.lr * cfg.disc_lr_scale)]
                 if finetune else None)

    rng = np.random.default_rng(cfg.seed)
    batch_size = min(cfg.batch, len(dataset))
    steps_per_epoch = max(1, len(dataset) // batch_size)
    total_steps = cfg.max_steps or cfg.epochs * steps_per_epoch

    log = TrainLog()
    started = time.monotonic()
    step = 0
    while step < total_steps:
        order = rng.permutation(len(dataset))
        for b in range(steps_per_epoch):
            if step >= total_steps:
                break
            step += 1
            batch = _batch_tensors(dataset, order[b * batch_size:(b + 1) * batch_size])
            components = train_step_generator(batch, params, nets, cfg, gen_opt, step)
            if cfg.use_gan:
                train_step_discriminators(batch, params, nets, cfg, disc_opts, step)
            log.append(TrainLogEntry(step=step, loss_total=components["total"],
                                     loss_var_ssim=components["var_ssim"],
                                     loss_ir=components["ir"], loss_vis=components["vis"],
                                     seconds=time.monotonic() - started))
            if out_path and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                save_generator(f"{out_path}.step{step}", params)
    if out_path:
        save_generator(out_path, params)
    return params, log


# ---------------------------------------------------------------------------
# overfit sanity check
# ---------------------------------------------------------------------------

def overfit_sanity(pair, steps: int = 2000, lr: float = 0.01, init=None,
                   target: float = 0.99, check_every: int = 25) -> dict:
    """Optimize free per-pixel values against the windowed loss.

    Bypasses the network entirely: with x == y the gated reference is
    unambiguous and the loss minimum is the reference image itself, so the
    final SSIM against it is the strongest desk-scale check that the loss
    is implemented correctly as a differentiable objective.
    """
    x, y = pair
    ix = Tensor(np.asarray(x, dtype=np.float64)[None, None])
    iy = Tensor(np.asarray(y, dtype=np.float64)[None, None])
    start = np.full_like(ix.data, 0.5) if init is None else np.asarray(init, dtype=np.float64)[None, None]
    f = Tensor(start.copy(), requires_grad=True)
    opt = Adam([f], lr=lr)
    losses = []
    steps_run = 0
    for step in range(1, steps + 1):
        loss = loss_var_ssim(ix, iy, f)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(f"overfit loss not finite at step {step}")
        losses.append(value)
        opt.zero_grad()
        backward(loss)
        # at the exact optimum the gradient is pure roundoff; stepping on it
        # would let Adam's normalization walk away from the minimum
        if float(np.abs(f.grad).max()) >= 1e-12:
            opt.step()
        steps_run = step
        if step % check_every == 0 and ssim(f, ix).item() > target:
            break
    final_ssim = ssim(f, ix).item()
    return {"ssim": final_ssim, "losses": losses, "steps_run": steps_run,
            "reached": final_ssim > target, "image": f.data[0, 0].copy()}


# ---------------------------------------------------------------------------
# ablation sweep
# ---------------------------------------------------------------------------

ABLATION_AXES = {
    "gan": [("on", {"use_gan": True}), ("off", {"use_gan": False})],
    "transformer_order": [(order, {"transformer_order": order}) for order in TRANSFORMER_ORDERS],
    "position_embedding": [("off", {"use_position_embedding": False}),
                           ("on", {"use_position_embedding": True})],
    "encoder_layers": [(str(n), {"encoder_layers": n}) for n in (3, 4, 5)],
    "cnn_layers": [(str(n), {"cnn_layers": n}) for n in (2, 3, 4, 5)],
    "channels": [(str(n), {"channels": n}) for n in (32, 64, 128)],
}


def ablation_matrix():
    """One row per knob level: 2 + 4 + 2 + 3 + 4 + 3 = 18 configurations."""
    rows = []
    for axis, levels in ABLATION_AXES.items():
        for level, overrides in levels:
            rows.append({"axis": axis, "level": level, "overrides": dict(overrides)})
    return rows


ABLATION_CONFIG_COLUMNS = ("config_hash", "axis", "level", "use_gan", "transformer_order",
                           "use_position_embedding", "encoder_layers", "cnn_layers",
                           "channels", "status")


def _config_hash(fcfg: FusionConfig, tcfg: TrainConfig) -> str:
    key = repr(sorted(vars(fcfg).items())) + repr(sorted(vars(tcfg).items()))
    return hashlib.sha1(key.encode()).hexdigest()[:12]


def _effective_configs(row, base_fusion: FusionConfig, base_train: TrainConfig):
    overrides = dict(row["overrides"])
    use_gan = overrides.pop("use_gan", base_train.use_gan)
    fcfg = replace(base_fusion, **overrides, use_gan=use_gan)
    tcfg = replace(base_train, use_gan=use_gan)
    return fcfg, tcfg


def desk_ablation_defaults(seed: int = 0):
    """Small-but-complete settings so the 18-config sweep runs in minutes."""
    base_fusion = FusionConfig(spatial_embed=256, channel_embed=64, use_gan=False)
    base_train = TrainConfig(batch=2, epochs=1, seed=seed, use_gan=False, max_steps=24)
    return base_fusion, base_train


def _read_completed(path: str) -> set:
    try:
        with open(path, "r", newline="") as fh:
            return {row["config_hash"] for row in csv.DictReader(fh)}
    except FileNotFoundError:
        return set()


def _write_rows(path: str, rows) -> None:
    from .checkpoint import atomic_write_bytes

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ABLATION_CONFIG_COLUMNS + CSV_COLUMNS)
    for row in rows:
        writer.writerow(row)
    atomic_write_bytes(path, buf.getvalue().encode())


def ablation_run(matrix, base_fusion: FusionConfig, base_train: TrainConfig,
                 out_csv: str, image_size: int = 64, train_pairs: int = 6,
                 eval_pairs: int = 2, progress=None) -> list:
    """Train/evaluate every matrix row at desk scale; emit one CSV row each.

    Failures (non-finite losses, degenerate black outputs, configurations
    the image size cannot support) become "training_failure" rows instead
    of aborting. Reruns skip rows whose config hash is already in the CSV.
    """
    data = make_synthetic_pairs(train_pairs + eval_pairs, size=image_size,
                                seed=base_train.seed)
    train_set, eval_set = data[:train_pairs], data[train_pairs:]

    completed = _read_completed(out_csv)
    rows = []
    if completed:
        with open(out_csv, "r", newline="") as fh:
            rows = [list(r.values()) for r in csv.DictReader(fh)]

    for row in matrix:
        fcfg, tcfg = _effective_configs(row, base_fusion, base_train)
        chash = _config_hash(fcfg, tcfg)
        if chash in completed:
            continue
        config_cells = [chash, row["axis"], row["level"], fcfg.use_gan,
                        fcfg.transformer_order, fcfg.use_position_embedding,
                        fcfg.encoder_layers, fcfg.cnn_layers, fcfg.channels]
        if progress:
            progress(f"[{row['axis']}={row['level']}] training")
        try:
            params, _ = train(train_set, tcfg, fusion_config=fcfg)
            reports = []
            for i, (ir, vis) in enumerate(eval_set):
                fused = generate(Tensor(ir[None, None].astype(np.float32)),
                                 Tensor(vis[None, None].astype(np.float32)), params)
                out = fused.data[0, 0]
                if not np.all(np.isfinite(out)) or float(out.std()) < 1e-3:
                    raise NumericalError("degenerate fused output (black collapse)")
                reports.append(evaluate_all(ir, vis, out, name=f"eval{i}"))
            means = np.mean([r.row() for r in reports], axis=0)
            rows.append(config_cells + ["ok"] + [f"{v:.6f}" for v in means])
        except (NumericalError, ValueError, ArithmeticError):  # failures are data
            rows.append(config_cells + ["training_failure"] + [""] * len(CSV_COLUMNS))
        _write_rows(out_csv, rows)
        completed.add(chash)
    return rows
