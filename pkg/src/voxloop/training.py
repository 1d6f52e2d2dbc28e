"""Joint desk-scale training of the overlap and registration stages.

Each step processes one training pair: the coarse loss (overlap MSE +
circle loss) always applies; pairs whose ground-truth overlap marks them
positive also run the registration pipeline and add the transform loss.
Registration trains on the ground-truth matched voxel pairs for
stability, while inference selects pairs from the estimated overlaps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, backward
from .errors import (DegenerateGeometry, NoMatches, NumericalFailure,
                     Underdetermined)
from .geometry import voxelize
from .models import PipelineModel
from .overlap_net import feature_similarity, estimate_pair_overlap, total_coarse_loss
from .registration import (MatchedVoxelPairs, register_forward,
                           registration_loss)
from .synthetic import TrainingPair
from .features import compute_descriptors


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-3
    seed: int = 0
    voxel_size: float = 0.5
    pair_threshold: float = 0.1
    pairing_threshold: float = 0.1
    max_pairs: int = 32
    gamma: float = 1.0
    eta: float = 1.0
    circle_alpha: float = 0.5
    circle_beta: float = 0.5
    distance_points_cap: int = 1200  # subsample cap for the distance loss
    moving_average_window: int = 50
    max_grad_norm: float = 5.0       # global-norm clip, 0 disables
    reg_warmup_steps: int = 200      # ramp for the registration loss
    # Fractions of the registration pair budget drawn from mediocre and
    # unrelated voxel pairs. Inference selects pairs by estimated overlap
    # and inevitably admits such pairs, so the correspondence weights
    # must learn to suppress them; training only on clean ground-truth
    # pairs leaves that ability untrained.
    hard_pair_fraction: float = 0.125
    far_pair_fraction: float = 0.125
    # Registration trains only on pairs overlapped solidly enough to be
    # well-posed; thin-sliver overlaps make the transform unidentifiable
    # from matched voxels and only inject loss spikes.
    reg_min_overlap: float = 1.5
    reg_min_strong_pairs: int = 8


class Adam:
    """Adaptive moment estimation over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, max_grad_norm: float = 0.0) -> None:
        if max_grad_norm > 0.0:
            total = 0.0
            for p in self.params.values():
                if p.grad is not None:
                    total += float((p.grad * p.grad).sum())
            norm = np.sqrt(total)
            if norm > max_grad_norm:
                scale = max_grad_norm / norm
                for p in self.params.values():
                    if p.grad is not None:
                        p.grad = p.grad * scale
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data = p.data - self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@dataclass
class PreparedPair:
    """Training pair with everything cacheable precomputed."""

    desc_a: object
    desc_b: object
    o_gt: np.ndarray
    matched: np.ndarray
    gt_transform: object
    positive: bool
    distance_points: np.ndarray


def prepare_pair(pair: TrainingPair, model: PipelineModel,
                 cfg: TrainConfig, index: int) -> PreparedPair:
    qa = voxelize(pair.frame_a, cfg.voxel_size)
    qb = voxelize(pair.frame_b, cfg.voxel_size)
    desc_a = compute_descriptors(pair.frame_a, qa, model.dims.point_budget,
                                 model.dims.density_radius, sample_seed=index)
    desc_b = compute_descriptors(pair.frame_b, qb, model.dims.point_budget,
                                 model.dims.density_radius,
                                 sample_seed=index + 1)
    o_gt = pair.gt_overlap.scores
    matched = o_gt > cfg.pair_threshold
    pts = pair.frame_a.points
    if pts.shape[0] > cfg.distance_points_cap:
        rng = np.random.default_rng([cfg.seed, 555, index])
        pts = pts[rng.choice(pts.shape[0], cfg.distance_points_cap,
                             replace=False)]
    solid = (pair.label
             and pair.gt_overlap.value >= cfg.reg_min_overlap
             and (o_gt > 0.5).sum() >= cfg.reg_min_strong_pairs)
    return PreparedPair(desc_a, desc_b, o_gt, matched, pair.gt_transform,
                        solid, pts)


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    moving_average: list[float] = field(default_factory=list)
    initial_loss: float = 0.0
    final_loss: float = 0.0
    steps: int = 0
    seconds: float = 0.0

    def summary(self) -> str:
        return (f"steps={self.steps} initial_ma={self.initial_loss:.4f} "
                f"final_ma={self.final_loss:.4f} "
                f"ratio={self.final_loss / max(self.initial_loss, 1e-12):.3f} "
                f"time={self.seconds:.1f}s")


def _mixed_training_pairs(prep: PreparedPair, feats_a, feats_b,
                          cfg: TrainConfig,
                          rng: np.random.Generator) -> MatchedVoxelPairs | None:
    """Registration pair budget for one step: mostly the strongest
    ground-truth matches, plus a few mediocre and a few unrelated pairs.

    Pair confidences are uniform here so the per-correspondence score
    weights alone must learn to shut out the polluted pairs.
    """
    o = prep.o_gt
    flat = o.ravel()
    n_far = int(round(cfg.max_pairs * cfg.far_pair_fraction))
    n_hard = int(round(cfg.max_pairs * cfg.hard_pair_fraction))
    strong_idx = np.flatnonzero(flat > cfg.pairing_threshold)
    if strong_idx.size == 0:
        return None
    strong_idx = strong_idx[np.argsort(-flat[strong_idx], kind="stable")]
    strong_idx = strong_idx[:cfg.max_pairs - n_far - n_hard]
    picks = [strong_idx]
    hard_pool = np.flatnonzero((flat > 0.03) & (flat <= cfg.pairing_threshold))
    if hard_pool.size and n_hard:
        picks.append(rng.choice(hard_pool, min(n_hard, hard_pool.size),
                                replace=False))
    far_pool = np.flatnonzero(flat <= 0.03)
    if far_pool.size and n_far:
        picks.append(rng.choice(far_pool, min(n_far, far_pool.size),
                                replace=False))
    chosen = np.concatenate(picks)
    si, ki = np.unravel_index(chosen, o.shape)
    return MatchedVoxelPairs(
        pairs=np.stack([si, ki], axis=1),
        pair_scores=np.ones(chosen.size),
        points_s=feats_a.points[si], points_k=feats_b.points[ki],
        mask_s=feats_a.mask[si], mask_k=feats_b.mask[ki])


def pair_step_loss(model: PipelineModel, prep: PreparedPair,
                   cfg: TrainConfig, reg_scale: float = 1.0,
                   pair_rng: np.random.Generator | None = None) -> Tensor:
    """Forward pass for one pair; returns the scalar joint loss node.

    ``reg_scale`` ramps the registration term in early steps so its large
    initial transients cannot wreck the shared feature MLPs.
    """
    feats_a = model.embed(prep.desc_a)
    feats_b = model.embed(prep.desc_b)
    d_hat = feature_similarity(feats_a.voxel_features, feats_b.voxel_features)
    o_hat = estimate_pair_overlap(model.overlap_head, feats_a.voxel_features,
                                  feats_b.voxel_features)
    loss = total_coarse_loss(d_hat, o_hat, prep.o_gt, prep.matched,
                             cfg.circle_alpha, cfg.circle_beta)
    if prep.positive:
        rng = pair_rng if pair_rng is not None else np.random.default_rng(0)
        pairs = _mixed_training_pairs(prep, feats_a, feats_b, cfg, rng)
        if pairs is not None:
            try:
                result = register_forward(model.registration, feats_a,
                                          feats_b, pairs)
                loss = loss + registration_loss(result, prep.gt_transform,
                                                prep.distance_points,
                                                cfg.gamma, cfg.eta) * reg_scale
            except (NoMatches, Underdetermined, DegenerateGeometry):
                pass
    return loss


def train(model: PipelineModel, dataset: list[TrainingPair],
          cfg: TrainConfig, log_every: int = 0) -> TrainReport:
    """Optimize all model parameters jointly over the dataset.

    The visiting order is a seeded permutation refreshed each epoch, so a
    run is deterministic given (model seed, dataset, config). Aborts with
    NumericalFailure if the loss goes non-finite.
    """
    if not dataset:
        raise ValueError("training needs a non-empty dataset")
    t0 = time.time()
    prepared = [prepare_pair(p, model, cfg, i) for i, p in enumerate(dataset)]
    params = model.parameters()
    opt = Adam(params, cfg.lr)
    order_rng = np.random.default_rng([cfg.seed, 31337])
    order = order_rng.permutation(len(prepared))
    report = TrainReport()
    window = cfg.moving_average_window
    for step in range(cfg.steps):
        if step % len(prepared) == 0 and step > 0:
            order = order_rng.permutation(len(prepared))
        prep = prepared[order[step % len(prepared)]]
        if cfg.reg_warmup_steps > 0:
            reg_scale = min(1.0, (step + 1) / cfg.reg_warmup_steps)
        else:
            reg_scale = 1.0
        pair_rng = np.random.default_rng([cfg.seed, 888, step])
        loss = pair_step_loss(model, prep, cfg, reg_scale, pair_rng)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericalFailure(
                f"non-finite loss {value} at step {step}")
        opt.zero_grad()
        backward(loss)
        opt.step(cfg.max_grad_norm)
        report.losses.append(value)
        if len(report.losses) >= window:
            report.moving_average.append(
                float(np.mean(report.losses[-window:])))
        if log_every and (step + 1) % log_every == 0:
            ma = report.moving_average[-1] if report.moving_average else value
            print(f"step {step + 1}/{cfg.steps} loss={value:.4f} ma={ma:.4f}",
                  flush=True)
    report.steps = cfg.steps
    report.seconds = time.time() - t0
    if report.moving_average:
        report.initial_loss = report.moving_average[0]
        report.final_loss = report.moving_average[-1]
    else:
        report.initial_loss = report.losses[0]
        report.final_loss = report.losses[-1]
    return report
