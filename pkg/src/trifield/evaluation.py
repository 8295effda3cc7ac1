"""Render-and-score evaluation over a scene split.

Each frame is rendered at full resolution with the requested decoders: "R"
composites the radiance head with the end-of-schedule sample budget, "DL"
takes the single-query light and depth heads. Depth predictions are
median-scaled against ground truth before metric computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import full_pixel_grid
from .metrics import depth_metrics, median_scale, psnr, ssim_metric
from .model import SceneModel
from .render import SamplingConfig, render_light_depth, render_volumetric
from .scenes import Scene
from .tensor import no_grad
from .trainer import TrainConfig, schedule_state

EVAL_COLUMNS = (
    "frame", "decoder", "abs_rel", "sq_rel", "rmse", "rmse_log",
    "delta1", "delta2", "delta3", "psnr", "ssim", "queries_per_pixel",
)


@dataclass
class EvalRow:
    frame: str
    decoder: str
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    psnr: float
    ssim: float
    queries_per_pixel: float

    def as_dict(self) -> dict:
        return {c: getattr(self, c) for c in EVAL_COLUMNS}


def _render_frame(model: SceneModel, camera, decoder: str, sampling: SamplingConfig,
                  seed: int):
    pixels = full_pixel_grid(camera)
    rng = np.random.default_rng(seed)
    with no_grad():
        if decoder == "R":
            res = render_volumetric(model, camera, pixels, sampling, rng=rng)
            color, depth, qpp = res.color.data, res.depth.data, res.queries_per_pixel
        elif decoder == "DL":
            colors, depths, nq = render_light_depth(model, camera, pixels)
            color, depth, qpp = colors.data, depths.data, nq / pixels.shape[0]
        else:
            raise ValueError(f"unknown decoder {decoder!r}, expected 'R' or 'DL'")
    h, w = camera.height, camera.width
    return color.reshape(h, w, 3), depth.reshape(h, w), qpp


def eval_sampling(cfg: TrainConfig) -> SamplingConfig:
    """Volumetric sample budget at the end of the schedule (what inference
    pays after training)."""
    sched = schedule_state(cfg.total_epochs - 1, cfg)
    return SamplingConfig(sched.k_ray, sched.k_dfg, cfg.sigma_g, jitter=False)


def evaluate_model(
    model: SceneModel,
    scene: Scene,
    cfg: TrainConfig,
    split: str = "test",
    decoders=("R", "DL"),
    seed: int = 0,
) -> list:
    """Score every frame of the split with each decoder; appends one
    aggregate (mean) row per decoder with frame name ``mean``."""
    frames = scene.split_frames(split)
    if not frames:
        raise ValueError(f"scene has no frames in split {split!r}")
    sampling = eval_sampling(cfg)
    rows = []
    for decoder in decoders:
        per = []
        for i, frame in enumerate(frames):
            color, depth, qpp = _render_frame(
                model, frame.camera, decoder, sampling, seed
            )
            gt_depth = frame.gt_depth
            if gt_depth is None:
                raise ValueError("evaluation split needs ground-truth depth")
            mask = np.asarray(gt_depth) > 0
            scaled = median_scale(depth, gt_depth, mask)
            dm = depth_metrics(scaled, gt_depth, mask, scene.d_min, scene.d_max)
            row = EvalRow(
                frame=str(i), decoder=decoder,
                psnr=psnr(color, frame.image),
                ssim=ssim_metric(color, frame.image),
                queries_per_pixel=float(qpp),
                **dm.as_dict(),
            )
            per.append(row)
            rows.append(row)
        agg = EvalRow(
            frame="mean", decoder=decoder,
            **{
                c: float(np.mean([getattr(r, c) for r in per]))
                for c in EVAL_COLUMNS[2:]
            },
        )
        rows.append(agg)
    return rows


def rows_to_csv(rows, columns=EVAL_COLUMNS) -> str:
    lines = [",".join(columns)]
    for r in rows:
        d = r.as_dict() if hasattr(r, "as_dict") else r
        lines.append(",".join(str(d[c]) for c in columns))
    return "\n".join(lines) + "\n"
