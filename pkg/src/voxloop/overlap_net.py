"""Learned pairwise voxel overlap and the coarse-stage losses.

The head scores every voxel pair of two frames from their embeddings:
a feature-distance similarity map feeds the circle loss, and a sigmoid
head predicts the pair overlap values that get summed into the estimated
cloud overlap used for loop filtering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, add, logsumexp, mse, mul, relu, reshape,
                       sigmoid, sqrt, sub, take, transpose, tsum)
from .errors import EmptyInput, NotNormalized, ShapeError
from .layers import MLP, Linear


@dataclass
class OverlapPrediction:
    """Pairwise similarity and overlap between two frames' voxels."""

    d_hat: Tensor       # (S, K), clamped feature similarity
    o_hat: Tensor       # (S, K), sigmoid pair overlaps
    cloud_value: float  # thresholded sum / min voxel count


class OverlapHead:
    """Pair overlap scorer: sigmoid(g(h_s(f_i) + h_c(f_i*f_j) + h_k(f_j))).

    The three branches are two-layer MLPs into a shared hidden width and
    g is a linear readout to one logit per pair. The cross branch takes
    the elementwise product of the two features by default; set
    ``pair_term="inner"`` to feed the scalar inner product instead.
    """

    def __init__(self, feature_dim: int, hidden_dim: int,
                 rng: np.random.Generator, pair_term: str = "elementwise"):
        if pair_term not in ("elementwise", "inner"):
            raise ValueError(f"unknown pair_term {pair_term!r}")
        self.pair_term = pair_term
        cross_in = feature_dim if pair_term == "elementwise" else 1
        self.h_s = MLP([feature_dim, hidden_dim, hidden_dim], rng)
        self.h_c = MLP([cross_in, hidden_dim, hidden_dim], rng)
        self.h_k = MLP([feature_dim, hidden_dim, hidden_dim], rng)
        self.g = Linear(hidden_dim, 1, rng)

    def parameters(self, prefix: str = "overlap") -> dict[str, Tensor]:
        out = self.h_s.parameters(f"{prefix}.h_s")
        out.update(self.h_c.parameters(f"{prefix}.h_c"))
        out.update(self.h_k.parameters(f"{prefix}.h_k"))
        out.update(self.g.parameters(f"{prefix}.g"))
        return out

    def pair_logits(self, fs: Tensor, fk: Tensor) -> Tensor:
        s, k = fs.shape[0], fk.shape[0]
        d = fs.shape[1]
        if fk.shape[1] != d:
            raise ShapeError("voxel feature dims differ between frames")
        cross = mul(reshape(fs, (s, 1, d)), reshape(fk, (1, k, d)))
        if self.pair_term == "inner":
            cross = tsum(cross, axis=-1, keepdims=True)
        # Products of unit-norm features are ~1/d per entry; rescale so the
        # cross branch starts at the same signal level as the side branches.
        cross = cross * float(np.sqrt(d))
        branch = add(add(reshape(self.h_s(fs), (s, 1, -1)),
                         self.h_c(cross)),
                     reshape(self.h_k(fk), (1, k, -1)))
        return reshape(self.g(branch), (s, k))


def _require_unit_rows(f: Tensor, name: str) -> None:
    norms = np.linalg.norm(f.data, axis=-1)
    if np.abs(norms - 1.0).max() > 1e-6:
        raise NotNormalized(f"{name} rows must be unit-norm for the similarity map")


def feature_similarity(fs: Tensor, fk: Tensor) -> Tensor:
    """d_hat[i, j] = max(0, 1 - ||f_i - f_j||) for unit-norm features.

    Unit rows make the distance at most 2; the clamp pins the map into
    [0, 1].
    """
    _require_unit_rows(fs, "source features")
    _require_unit_rows(fk, "keyframe features")
    s, k, d = fs.shape[0], fk.shape[0], fs.shape[1]
    diff = sub(reshape(fs, (s, 1, d)), reshape(fk, (1, k, d)))
    dist = sqrt(tsum(mul(diff, diff), axis=-1))
    return relu(1.0 - dist)


def estimate_pair_overlap(head: OverlapHead, fs: Tensor, fk: Tensor) -> Tensor:
    return sigmoid(head.pair_logits(fs, fk))


def estimate_cloud_overlap(o_hat, min_count: int, th: float) -> float:
    """Thresholded sum of estimated pair overlaps over the min voxel count."""
    if min_count <= 0:
        raise EmptyInput("cloud overlap needs at least one voxel per frame")
    values = o_hat.data if isinstance(o_hat, Tensor) else np.asarray(o_hat)
    return float(values[values > th].sum() / min_count)


def predict_overlap(head: OverlapHead, fs: Tensor, fk: Tensor,
                    th: float) -> OverlapPrediction:
    d_hat = feature_similarity(fs, fk)
    o_hat = estimate_pair_overlap(head, fs, fk)
    value = estimate_cloud_overlap(o_hat, min(fs.shape[0], fk.shape[0]), th)
    return OverlapPrediction(d_hat, o_hat, value)


_MASK_OFFSET = -1e30  # drops entries from a row LSE without NaN risk


def _row_log_mean_exp(values: Tensor, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Count-normalized LSE per row over masked entries.

    log(mean(exp(x))) = LSE(x) - log(n): same softmax gradients as a raw
    LSE but zero when every residual is zero, so a fully fit set costs
    nothing. Rows with no entries are flagged out.
    """
    offset = np.where(mask, 0.0, _MASK_OFFSET)
    counts = np.maximum(mask.sum(axis=-1), 1)
    lse = logsumexp(add(values, Tensor(offset)), axis=-1)
    return sub(lse, Tensor(np.log(counts))), mask.any(axis=-1)


def _circle_half(d_hat: Tensor, matched: np.ndarray,
                 alpha: float, beta: float) -> Tensor:
    """One frame's circle loss; anchors are rows of the pair matrix."""
    pos_sq = mul(sub(d_hat, 1.0), sub(d_hat, 1.0))
    neg_sq = mul(d_hat, d_hat)
    total = Tensor(0.0)
    pos_lme, pos_rows = _row_log_mean_exp(pos_sq, matched)
    if pos_rows.any():
        picked = take(pos_lme, np.flatnonzero(pos_rows))
        total = total + tsum(picked) * (alpha / pos_rows.sum())
    neg_lme, neg_rows = _row_log_mean_exp(neg_sq, ~matched)
    if neg_rows.any():
        picked = take(neg_lme, np.flatnonzero(neg_rows))
        total = total + tsum(picked) * (beta / neg_rows.sum())
    return total


def circle_loss(d_hat: Tensor, matched: np.ndarray,
                alpha: float = 0.5, beta: float = 0.5) -> Tensor:
    """Metric loss pulling matched-pair similarity toward 1, the rest to 0.

    Residuals are squared errors aggregated per anchor voxel with a
    count-normalized LogSumExp (empty sets contribute zero); the total is
    the source-side half (row anchors) plus the keyframe-side half
    (column anchors). Anchored aggregation keeps the pull on matched
    pairs balanced against the push on unmatched ones; a single global
    LSE over each set lets the positive pull win by |N|/|P| and collapses
    the feature space.
    """
    if d_hat.shape != matched.shape:
        raise ShapeError("similarity matrix and match mask shapes differ")
    matched = np.asarray(matched, dtype=bool)
    side_s = _circle_half(d_hat, matched, alpha, beta)
    side_k = _circle_half(transpose(d_hat, (1, 0)), matched.T, alpha, beta)
    return side_s + side_k


def overlap_mse_loss(o_hat: Tensor, o_gt: np.ndarray) -> Tensor:
    return mse(o_hat, Tensor(o_gt))


def total_coarse_loss(d_hat: Tensor, o_hat: Tensor, o_gt: np.ndarray,
                      matched: np.ndarray, alpha: float = 0.5,
                      beta: float = 0.5) -> Tensor:
    """Coarse-stage loss: overlap MSE plus the circle loss."""
    return overlap_mse_loss(o_hat, o_gt) + circle_loss(d_hat, matched, alpha, beta)
