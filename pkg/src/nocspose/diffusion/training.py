"""Training loop: per-sample timestep and noise draws, independent condition
dropout, pixelwise MSE on the predicted noise, and an adaptive-moment
optimizer, all with exact hand-derived gradients.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from .. import conditioning
from ..features import pca_apply, pca_fit, standin_features
from ..geometry import (GeometryError, NocsMap, bbox_from_mask,
                        crop_warp_resize, renormalize_normals)
from ..synthgen import AugmentParams, Dataset, phong_relight, rotate_image, _rot2
from .checkpoint import save_checkpoint
from .schedule import NoiseSchedule, forward_diffuse, make_schedule, nocs_to_diffusion
from .unet import (ConditionSet, UNetConfig, UNetParams,
                   build_cond_batch, init_params, unet_backward, unet_forward)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainSample:
    cond: ConditionSet
    nocs: NocsMap


@dataclass
class TrainConfig:
    size: int = 32
    batch_size: int = 16
    lr: float = 1e-3
    drop_rate: float = 0.25
    steps: int = 10000
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    pca_dim: int = 6
    holdout_views: int = 20
    channels: tuple = (16, 32, 64)
    blocks: int = 2
    groups: int = 8
    sched_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    log_every: int = 100
    checkpoint_every: int = 1000
    warmup_steps: int = 100
    lr_floor_frac: float = 0.1  # cosine decay floor as a fraction of lr

    def lr_at(self, step: int) -> float:
        """Linear warmup then cosine decay to lr * lr_floor_frac."""
        if step < self.warmup_steps:
            return self.lr * (step + 1) / max(self.warmup_steps, 1)
        span = max(self.steps - self.warmup_steps, 1)
        t = min((step - self.warmup_steps) / span, 1.0)
        floor = self.lr * self.lr_floor_frac
        return floor + (self.lr - floor) * 0.5 * (1.0 + np.cos(np.pi * t))

    def __post_init__(self):
        if not 0.0 <= self.drop_rate < 1.0:
            raise GeometryError("drop rate must be in [0, 1)")
        if self.size % (1 << (len(self.channels) - 1)):
            raise GeometryError("size must be divisible by 2**(levels-1)")
        self.channels = tuple(self.channels)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# loss and optimizer


DROPPABLE = ("normal", "rgb", "feat", "category")


def loss_and_grads(params: UNetParams, batch: list, sched: NoiseSchedule,
                   drop_rate: float, rng: np.random.Generator):
    """One training objective evaluation over a batch of TrainSamples.

    Per sample: k ~ U{1..K}, eps ~ N(0, I), each condition independently
    dropped to its null encoding with probability drop_rate. Returns the
    mean squared error between eps and the network prediction, plus exact
    gradients for every parameter array.
    """
    if len(batch) == 0:
        raise GeometryError("empty batch")
    cfg = params.config
    n = len(batch)
    k = rng.integers(1, sched.num_steps + 1, size=n)
    eps = rng.standard_normal((n, cfg.size, cfg.size, 3)).astype(params.dtype)
    drop = rng.random((n, len(DROPPABLE))) < drop_rate

    cond = build_cond_batch([s.cond for s in batch], cfg, params.dtype)
    cond.normal[drop[:, 0]] = 0.0
    cond.rgb[drop[:, 1]] = 0.0
    cond.feat[drop[:, 2]] = 0.0
    cond.category = np.where(drop[:, 3], 0, cond.category)

    x0 = np.stack([nocs_to_diffusion(s.nocs.values) for s in batch]) \
        .astype(params.dtype)
    x_noisy = forward_diffuse(x0, k, eps, sched).astype(params.dtype)

    eps_hat, cache = unet_forward(params, x_noisy, cond, k, want_cache=True)
    diff = eps_hat - eps
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    d_eps = (2.0 / diff.size) * diff
    grads = unet_backward(params, cache, d_eps)
    return loss, grads


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @staticmethod
    def init(params: UNetParams) -> "AdamState":
        return AdamState({k: np.zeros_like(a) for k, a in params.arrays.items()},
                         {k: np.zeros_like(a) for k, a in params.arrays.items()})


def optimizer_step(params: UNetParams, grads: dict, state: AdamState,
                   lr: float, betas=(0.9, 0.999), eps=1e-8) -> UNetParams:
    """Adaptive-moment update with bias correction (in place)."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"divergence detected: gradient {name}")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params.arrays[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


# ---------------------------------------------------------------------------
# dataset-side preparation


@dataclass
class TrainView:
    rgb: np.ndarray
    normals_depth: np.ndarray
    normals_render: np.ndarray
    mask: np.ndarray
    nocs_values: np.ndarray
    category: int = 0
    feat: np.ndarray | None = None


def split_views(dataset: Dataset, holdout: int, seed: int):
    """Deterministic stratified train/holdout split of view keys."""
    keys = dataset.view_keys()
    by_cat = {c: [k for k in keys if k[0] == c] for c in dataset.categories}
    n_cat = len(by_cat)
    quota = {c: holdout // n_cat for c in by_cat}
    for c in list(by_cat)[:holdout % n_cat]:
        quota[c] += 1
    rng = np.random.default_rng([seed, 5])
    held = []
    for c, ck in by_cat.items():
        pick = rng.permutation(len(ck))[:quota[c]]
        held += [ck[i] for i in sorted(pick)]
    held_set = set(held)
    train = [k for k in keys if k not in held_set]
    return train, held


def build_train_view(dataset: Dataset, key: tuple, size: int) -> TrainView:
    cat, model, view = key
    out = dataset.load_view(cat, model, view)
    bbox = bbox_from_mask(out.mask)
    sq = conditioning.crop_observation(out.rgb, out.depth, out.mask,
                                       dataset.intrinsics, bbox, size,
                                       want_normals=True)
    nrm_render = crop_warp_resize(out.normals, bbox, size, 0.0, "normals")
    nrm_render[~sq.mask] = 0.0
    nocs_sq = conditioning.crop_target_nocs(out.nocs_gt, bbox, size)
    return TrainView(rgb=sq.rgb.astype(np.float32),
                     normals_depth=sq.normals.astype(np.float32),
                     normals_render=nrm_render.astype(np.float32),
                     mask=sq.mask,
                     nocs_values=nocs_sq.values.astype(np.float32),
                     category=out.category_id)


def fit_feature_basis(views: list, pca_dim: int, seed: int,
                      max_rows: int = 200_000):
    """Global PCA over foreground stand-in features of the training crops;
    attaches the compressed per-view feature channel as a side effect."""
    raw = [standin_features(v.rgb) for v in views]
    rows = np.concatenate([fm.values[v.mask] for fm, v in zip(raw, views)])
    if len(rows) > max_rows:
        sel = np.random.default_rng([seed, 7]).permutation(len(rows))[:max_rows]
        rows = rows[np.sort(sel)]
    basis = pca_fit(rows, pca_dim)
    for v, fm in zip(views, raw):
        v.feat = pca_apply(fm, basis, v.mask).values
    return basis


def augment_view(view: TrainView, aug: AugmentParams,
                 rng: np.random.Generator) -> TrainSample:
    """Random in-plane rotation plus Phong relighting of one cached crop."""
    angle = aug.draw_angle(rng)
    light = aug.draw_light(rng)

    mask = rotate_image(view.mask, angle, False, "nearest")
    rgb = rotate_image(view.rgb, angle, 1.0, "bilinear")
    rot2 = _rot2(angle).astype(np.float32)
    nrm_r = renormalize_normals(
        rotate_image(view.normals_render, angle, 0.0, "bilinear"))
    nrm_r[..., :2] = nrm_r[..., :2] @ rot2.T
    nrm_d = renormalize_normals(
        rotate_image(view.normals_depth, angle, 0.0, "bilinear"))
    nrm_d[..., :2] = nrm_d[..., :2] @ rot2.T
    nocs_vals = rotate_image(view.nocs_values, angle, 1.0, "nearest")
    feat = rotate_image(view.feat, angle, 0.0, "nearest")

    rgb = phong_relight(rgb, nrm_r, light.ambient, light.diffuse,
                        light.light_dir).astype(np.float32)
    rgb[~mask] = 1.0
    nrm_d[~mask] = 0.0

    cond = ConditionSet(normal=nrm_d, rgb=rgb, feat=feat,
                        category=view.category)
    return TrainSample(cond, NocsMap(nocs_vals, mask))


# ---------------------------------------------------------------------------
# driver


def train(dataset: Dataset, cfg: TrainConfig, out_path: str,
          log_path: str | None = None, progress: bool = False):
    """Full training run; returns (params, basis, holdout view keys).

    Writes the checkpoint (parameters + PCA basis + configs) to out_path
    and newline-delimited JSON loss records to log_path. On divergence the
    last good checkpoint is written before raising TrainingDiverged.
    """
    train_keys, holdout_keys = split_views(dataset, cfg.holdout_views, cfg.seed)
    views = [build_train_view(dataset, k, cfg.size) for k in train_keys]
    basis = fit_feature_basis(views, cfg.pca_dim, cfg.seed)

    unet_cfg = UNetConfig(size=cfg.size, feat_dim=cfg.pca_dim,
                          channels=cfg.channels, blocks=cfg.blocks,
                          groups=cfg.groups,
                          categories=len(dataset.categories))
    params = init_params(unet_cfg, seed=cfg.seed, dtype=np.float32)
    sched = make_schedule(cfg.sched_steps, cfg.beta_start, cfg.beta_end)
    state = AdamState.init(params)
    rng = np.random.default_rng([cfg.seed, 11])
    aug = AugmentParams()

    meta = {"train_config": cfg.to_dict(),
            "categories": {"names": dataset.categories,
                           "ids": dataset.manifest["category_ids"]},
            "holdout": [list(k) for k in holdout_keys],
            "dataset_root": os.path.abspath(dataset.root)}

    for path in (out_path, log_path):
        if path and os.path.dirname(path):
            os.makedirs(os.path.dirname(path), exist_ok=True)
    log_f = open(log_path, "w", encoding="utf-8") if log_path else None
    recent: list = []
    last_good = params.copy()
    t0 = time.time()
    try:
        for step in range(1, cfg.steps + 1):
            idx = rng.integers(0, len(views), size=cfg.batch_size)
            batch = [augment_view(views[i], aug, rng) for i in idx]
            loss, grads = loss_and_grads(params, batch, sched,
                                         cfg.drop_rate, rng)
            if not np.isfinite(loss):
                raise FloatingPointError("divergence detected: loss")
            optimizer_step(params, grads, state, cfg.lr_at(step - 1),
                           (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps)
            recent.append(loss)
            if step % cfg.log_every == 0:
                rec = {"kind": "train", "step": step, "loss": loss,
                       "loss_avg": float(np.mean(recent[-cfg.log_every:])),
                       "elapsed_s": round(time.time() - t0, 3)}
                if log_f:
                    log_f.write(json.dumps(rec, sort_keys=True) + "\n")
                    log_f.flush()
                if progress:
                    print(f"step {step}/{cfg.steps} loss {loss:.4f} "
                          f"avg {rec['loss_avg']:.4f}", flush=True)
            if step % cfg.checkpoint_every == 0:
                last_good = params.copy()
    except FloatingPointError as err:
        save_checkpoint(out_path, last_good, sched, basis, meta)
        raise TrainingDiverged(
            f"{err}; last good checkpoint saved to {out_path}") from err
    finally:
        if log_f:
            log_f.close()

    save_checkpoint(out_path, params, sched, basis, meta)
    return params, basis, holdout_keys
