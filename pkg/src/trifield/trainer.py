"""The optimization loop: per-step sampling, loss assembly, the staged
sample-relocation schedule, and checkpointing.

Stages of length ``stage_length`` control the per-ray sample budget: the
first stage uses k uniform samples and no guidance; the second relocates
k_g samples to depth-field guidance; every following stage removes k_g
more uniform samples until only the k_g guided samples remain. The
photometric weight decays by ``photo_decay`` per stage and is forced to
zero for the final two stages so view-dependent effects can settle.

One epoch is one step per training frame. All per-step randomness is drawn
from streams derived statelessly from (seed, epoch, step), so resuming
from any checkpoint reproduces the from-scratch trajectory exactly.
"""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .checkpoint import restore_model, save_checkpoint
from .losses import (
    LossComponents,
    LossConfig,
    multi_context_photometric,
    total_loss,
    view_synthesis_loss,
    virtual_loss,
)
from .model import ModelConfig, SceneModel
from .optim import AdamWState, adamw_step
from .render import SamplingConfig, render_light_depth, render_volumetric
from .sampling import StrideSpec, VirtualCameraSpec, sample_virtual_camera, strided_subview
from .scenes import Scene
from .tensor import no_grad, reset_graph

LOG_COLUMNS = (
    "epoch", "total", "l_s", "l_p", "l_v", "alpha_p_eff", "k_ray", "k_dfg", "lr_eff"
)

ABLATION_TAGS = (
    "full", "no-photometric", "volumetric-only", "field-only",
    "separate-latents", "no-vca", "no-dfg", "no-vanishing",
)


class NumericalError(RuntimeError):
    """A loss component became non-finite; the message names it."""


@dataclass
class TrainConfig:
    # schedule
    total_epochs: int = 800
    stage_length: int = 80
    k: int = 32
    k_g: int = 8
    lr: float = 2e-4
    lr_decay: float = 0.8
    lr_period: int = 200
    photo_decay: float = 0.8
    # loss weights
    alpha_p: float = 0.1
    alpha_v: float = 0.5
    photo_alpha: float = 0.85
    # noise scales
    sigma_v: float = 0.25
    sigma_g: float = 0.1
    # batching
    n_context: int = 3
    stride: int = 4
    virtual_stride: int = 8
    jitter: bool = True
    # optimizer
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    # model
    n_latents: int = 64
    latent_dim: int = 64
    fourier_m: int = 6
    max_freq: float = 64.0
    n_heads: int = 2
    dropout: float = 0.1
    density_bias: float = 0.1
    precision: str = "f32"
    # mechanism toggles (ablation axes)
    use_photometric: bool = True
    vanish_photometric: bool = True
    use_vca: bool = True
    use_dfg: bool = True
    enable_radiance: bool = True
    enable_fields: bool = True
    share_latents: bool = True
    use_automask: bool = True
    use_min_reprojection: bool = True
    seed: int = 0

    def validate(self):
        if self.total_epochs < 1 or self.stage_length < 1:
            raise ValueError("total_epochs and stage_length must be positive")
        if self.k_g < 1 or self.k < 1:
            raise ValueError("k and k_g must be positive")
        if self.k % self.k_g != 0:
            raise ValueError(f"k ({self.k}) must be divisible by k_g ({self.k_g})")
        if self.stage_length * (self.k // self.k_g + 2) > self.total_epochs:
            raise ValueError(
                "schedule does not fit: stage_length * (k/k_g + 2) exceeds total_epochs"
            )
        if not self.enable_radiance and not self.enable_fields:
            raise ValueError("at least one of radiance/field decoding must be enabled")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            n_latents=self.n_latents,
            latent_dim=self.latent_dim,
            fourier_m=self.fourier_m,
            max_freq=self.max_freq,
            n_heads=self.n_heads,
            dropout=self.dropout,
            share_latents=self.share_latents,
            precision=self.precision,
            density_bias=self.density_bias,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            alpha_p=self.alpha_p,
            alpha_v=self.alpha_v,
            alpha=self.photo_alpha,
            use_automask=self.use_automask,
            use_min_reprojection=self.use_min_reprojection,
        )

    def canonical_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name}={getattr(self, f.name)!r}")
        return "\n".join(lines)

    def trajectory_hash(self) -> int:
        return zlib.crc32(self.canonical_text().encode("utf-8")) & 0xFFFFFFFF


@dataclass
class ScheduleState:
    """Per-epoch resolution of sample counts, photometric weight, and lr."""

    epoch: int
    k_ray: int
    k_dfg: int
    alpha_p_eff: float
    lr_eff: float


def schedule_state(epoch: int, cfg: TrainConfig) -> ScheduleState:
    """Resolve the staged schedule at one epoch.

    Stage s = epoch // stage_length: stage 0 is uniform-only; stage 1
    relocates k_g samples to guidance; later stages drop k_g uniform
    samples each until none remain. The photometric weight is
    alpha_p * photo_decay^s, forced to zero in the final two stages.
    """
    if not 0 <= epoch < cfg.total_epochs:
        raise ValueError(
            f"epoch {epoch} outside training range [0, {cfg.total_epochs})"
        )
    s = epoch // cfg.stage_length
    if not cfg.use_dfg:
        k_ray, k_dfg = cfg.k, 0
    elif s == 0:
        k_ray, k_dfg = cfg.k, 0
    elif s == 1:
        k_ray, k_dfg = cfg.k - cfg.k_g, cfg.k_g
    else:
        k_ray, k_dfg = max(0, cfg.k - s * cfg.k_g), cfg.k_g
    if not cfg.use_photometric:
        alpha = 0.0
    elif not cfg.vanish_photometric:
        alpha = cfg.alpha_p
    else:
        alpha = cfg.alpha_p * cfg.photo_decay ** s
        if epoch >= cfg.total_epochs - 2 * cfg.stage_length:
            alpha = 0.0
    lr_eff = cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_period)
    return ScheduleState(epoch, k_ray, k_dfg, alpha, lr_eff)


def ablation_variant(cfg: TrainConfig, tag: str) -> TrainConfig:
    """A config with exactly the named mechanism toggled off (or none for
    ``full``); everything else is unchanged."""
    if tag not in ABLATION_TAGS:
        raise ValueError(
            f"unknown ablation tag {tag!r}; valid tags: {', '.join(ABLATION_TAGS)}"
        )
    if tag == "full":
        return dataclasses.replace(cfg)
    if tag == "no-photometric":
        return dataclasses.replace(cfg, use_photometric=False)
    if tag == "volumetric-only":
        return dataclasses.replace(
            cfg, enable_fields=False, use_vca=False, use_dfg=False
        )
    if tag == "field-only":
        return dataclasses.replace(
            cfg, enable_radiance=False, use_vca=False, use_dfg=False
        )
    if tag == "separate-latents":
        return dataclasses.replace(cfg, share_latents=False)
    if tag == "no-vca":
        return dataclasses.replace(cfg, use_vca=False)
    if tag == "no-dfg":
        return dataclasses.replace(cfg, use_dfg=False)
    return dataclasses.replace(cfg, vanish_photometric=False)  # no-vanishing


def build_model(cfg: TrainConfig) -> SceneModel:
    return SceneModel(cfg.model_config(), seed=cfg.seed)


def active_parameters(model: SceneModel, cfg: TrainConfig):
    """Named parameters actually under optimization for this config."""
    out = []
    if cfg.share_latents:
        out.append(("latent_r", model.latent_r))
    else:
        if cfg.enable_radiance:
            out.append(("latent_r", model.latent_r))
        if cfg.enable_fields:
            out.append(("latent_dl", model.latent_dl))
    names = ("wq", "bq", "wk", "bk", "wv", "bv", "w_out", "b_out")
    kinds = []
    if cfg.enable_radiance:
        kinds.append("radiance")
    if cfg.enable_fields:
        kinds.extend(["light", "depth"])
    for kind in kinds:
        head = model.heads[kind]
        for name, p in zip(names, head.parameters()):
            out.append((f"{kind}.{name}", p))
    return out


def _step_rngs(seed: int, epoch: int, step: int):
    ss = np.random.SeedSequence(entropy=(seed & 0xFFFFFFFF, epoch, step))
    children = ss.spawn(5)
    return {
        name: np.random.default_rng(child)
        for name, child in zip(
            ("batch", "stride", "render", "field", "virtual"), children
        )
    }


@dataclass
class StepStats:
    total: float
    l_s: float
    l_p: float
    l_v: float
    n_queries: int


def _check_finite(name: str, value, epoch: int) -> None:
    data = value.data if hasattr(value, "data") else value
    if not np.all(np.isfinite(data)):
        raise NumericalError(
            f"loss component '{name}' became non-finite at epoch {epoch}"
        )


def training_step(
    scene: Scene,
    model: SceneModel,
    sched: ScheduleState,
    cfg: TrainConfig,
    opt_state: AdamWState,
    params,
    step_idx: int,
) -> StepStats:
    """One optimization step on one target frame.

    Pipeline: pick the target and random context frames; take a strided
    subview; render the radiance and field heads at the sub-pixels; apply
    view-synthesis MSE, warped photometric losses on both depth sources,
    and the virtual-camera loss; then one AdamW update.
    """
    train_frames = scene.split_frames("train")
    if len(train_frames) < 2:
        raise ValueError("training needs at least 2 train frames")
    rngs = _step_rngs(cfg.seed, sched.epoch, step_idx)
    target = train_frames[step_idx % len(train_frames)]
    others = [f for f in train_frames if f is not target]
    n_ctx = min(cfg.n_context, len(others))
    picks = rngs["batch"].choice(len(others), size=n_ctx, replace=False)
    contexts = [
        (model.asarray(others[i].image), others[i].camera) for i in sorted(picks)
    ]

    spec = StrideSpec(
        cfg.stride,
        cfg.stride,
        int(rngs["stride"].integers(cfg.stride)),
        int(rngs["stride"].integers(cfg.stride)),
    )
    subview = strided_subview(target.camera, target.image, spec)
    subview.image = model.asarray(subview.image)
    h, w = subview.shape

    loss_cfg = cfg.loss_config()
    comps = LossComponents()
    n_queries = 0

    field_depth = None
    if cfg.enable_fields:
        light_colors, field_depth, nq = render_light_depth(
            model, subview.camera, subview.pixels_sub,
            training=True, rng=rngs["field"],
        )
        n_queries += nq
        comps.light_mse = view_synthesis_loss(
            tt.reshape(light_colors, (h, w, 3)), subview.image
        )
        if sched.alpha_p_eff > 0:
            comps.photometric_field = multi_context_photometric(
                subview, contexts, tt.reshape(field_depth, (h, w)), loss_cfg
            )

    if cfg.enable_radiance:
        hint = field_depth.data if (sched.k_dfg > 0 and field_depth is not None) else None
        res = render_volumetric(
            model, subview.camera, subview.pixels_sub,
            SamplingConfig(sched.k_ray, sched.k_dfg, cfg.sigma_g, cfg.jitter),
            rng=rngs["render"], depth_hint=hint, training=True,
        )
        n_queries += res.n_queries
        comps.view_synthesis = view_synthesis_loss(
            tt.reshape(res.color, (h, w, 3)), subview.image
        )
        if sched.alpha_p_eff > 0:
            comps.photometric_vol = multi_context_photometric(
                subview, contexts, tt.reshape(res.depth, (h, w)), loss_cfg
            )

    if cfg.use_vca and cfg.enable_radiance and cfg.enable_fields and cfg.alpha_v > 0:
        vrng = rngs["virtual"]
        base = train_frames[int(vrng.integers(len(train_frames)))].camera
        vcam = sample_virtual_camera(
            base, VirtualCameraSpec(cfg.sigma_v, scene.d_max), vrng
        )
        vspec = StrideSpec(
            cfg.virtual_stride,
            cfg.virtual_stride,
            int(vrng.integers(cfg.virtual_stride)),
            int(vrng.integers(cfg.virtual_stride)),
        )
        vview = strided_subview(
            vcam, np.zeros((vcam.height, vcam.width, 3)), vspec
        )
        with no_grad():
            pseudo = render_volumetric(
                model, vview.camera, vview.pixels_sub,
                SamplingConfig(sched.k_ray, sched.k_dfg, cfg.sigma_g, jitter=False),
                rng=vrng, training=False,
            )
        n_queries += pseudo.n_queries
        # pseudo-label depth can degenerate toward zero early in training;
        # clamp it into the scene range before the log-depth comparison
        pseudo_depth = np.clip(pseudo.depth.data, model.d_min, model.d_max)
        vlight, vdepth, nq = render_light_depth(
            model, vview.camera, vview.pixels_sub,
            training=True, rng=rngs["field"],
        )
        n_queries += nq
        comps.virtual = virtual_loss(pseudo.color.data, pseudo_depth, vlight, vdepth)

    for name in ("view_synthesis", "photometric_vol", "photometric_field",
                 "light_mse", "virtual"):
        value = getattr(comps, name)
        if value is not None:
            _check_finite(name, value, sched.epoch)
    total = total_loss(comps, sched.alpha_p_eff, cfg.alpha_v)

    grads = tt.gradient(total, [p for _, p in params])
    adamw_step(
        [p for _, p in params], grads, opt_state,
        lr=sched.lr_eff, beta1=cfg.beta1, beta2=cfg.beta2,
        weight_decay=cfg.weight_decay,
    )
    stats = StepStats(
        total=float(total.data),
        l_s=float(comps.view_synthesis.data) if comps.view_synthesis is not None else 0.0,
        l_p=(
            (float(comps.photometric_vol.data) if comps.photometric_vol is not None else 0.0)
            + (float(comps.photometric_field.data) if comps.photometric_field is not None else 0.0)
        ),
        l_v=float(comps.virtual.data) if comps.virtual is not None else 0.0,
        n_queries=n_queries,
    )
    reset_graph()
    return stats


@dataclass
class FitResult:
    model: SceneModel
    log_rows: list
    checkpoints: list
    opt_state: AdamWState


def _format_row(row: dict) -> str:
    return ",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                    for c in LOG_COLUMNS)


def fit(
    scene: Scene,
    cfg: TrainConfig,
    out_dir=None,
    resume=None,
    progress=None,
    config_hash=None,
) -> FitResult:
    """Run the full schedule over the scene.

    Writes one CSV log row per epoch and a checkpoint at every stage
    boundary plus the final epoch when ``out_dir`` is given. ``resume``
    loads a checkpoint (validated against this config's hash) and
    continues; the stateless per-step randomness makes the continued
    trajectory identical to an uninterrupted run.
    """
    from pathlib import Path

    cfg.validate()
    model = build_model(cfg)
    params = active_parameters(model, cfg)
    opt_state = AdamWState([p for _, p in params])
    chash = cfg.trajectory_hash() if config_hash is None else config_hash

    start_epoch = 0
    if resume is not None:
        from .checkpoint import load_checkpoint

        ck = load_checkpoint(resume)
        restore_model(ck, params, opt_state, chash)
        start_epoch = ck["epoch"]

    out_path = None
    log_fh = None
    if out_dir is not None:
        out_path = Path(out_dir)
        (out_path / "checkpoints").mkdir(parents=True, exist_ok=True)
        mode = "a" if start_epoch > 0 and (out_path / "log.csv").exists() else "w"
        log_fh = open(out_path / "log.csv", mode)
        if mode == "w":
            log_fh.write(",".join(LOG_COLUMNS) + "\n")

    log_rows = []
    checkpoints = []
    train_frames = scene.split_frames("train")
    try:
        for epoch in range(start_epoch, cfg.total_epochs):
            sched = schedule_state(epoch, cfg)
            sums = np.zeros(4, dtype=np.float64)
            for step_idx in range(len(train_frames)):
                stats = training_step(
                    scene, model, sched, cfg, opt_state, params, step_idx
                )
                sums += (stats.total, stats.l_s, stats.l_p, stats.l_v)
            means = sums / len(train_frames)
            row = {
                "epoch": epoch,
                "total": float(means[0]),
                "l_s": float(means[1]),
                "l_p": float(means[2]),
                "l_v": float(means[3]),
                "alpha_p_eff": sched.alpha_p_eff,
                "k_ray": sched.k_ray,
                "k_dfg": sched.k_dfg,
                "lr_eff": sched.lr_eff,
            }
            log_rows.append(row)
            if log_fh is not None:
                log_fh.write(_format_row(row) + "\n")
                log_fh.flush()
            if progress is not None:
                progress(row)
            done = epoch + 1
            boundary = done % cfg.stage_length == 0 or done == cfg.total_epochs
            if boundary and out_path is not None:
                ck_path = out_path / "checkpoints" / f"ckpt_{done:05d}.dlck"
                save_checkpoint(ck_path, done, chash, params, opt_state, cfg.seed)
                checkpoints.append(ck_path)
    finally:
        if log_fh is not None:
            log_fh.close()
    return FitResult(model, log_rows, checkpoints, opt_state)
