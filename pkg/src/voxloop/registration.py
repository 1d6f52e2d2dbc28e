"""Point-level registration between the matched voxels of two frames.

Pipeline: project voxel+point embeddings into a shared token space, run
self-attention within each frame and cross-attention between frames,
score point pairs with a batched inner product, take the best source
point per keyframe point, and solve for the rigid transform with a
weighted SVD. Gradients flow through the correspondence weights and the
SVD; the argmax indices are treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, add, einsum_3d, gather_last, index_rows,
                       l2_normalize, matmul, mse, mul, relu, reshape, sub,
                       svd_rotation, take, transpose, tsum)
from .errors import (DegenerateGeometry, NoMatches, ShapeError,
                     Underdetermined)
from .features import FeatureSet
from .geometry import PointCloud, RigidTransform
from .layers import MLP, Linear, MultiHeadAttention

DEFAULT_PAIRING_THRESHOLD = 0.1
DEFAULT_MAX_PAIRS = 32


@dataclass
class MatchedVoxelPairs:
    """Voxel pairs selected by the overlap stage, with their point blocks."""

    pairs: np.ndarray        # (v, 2) indices (source voxel, keyframe voxel)
    pair_scores: np.ndarray  # (v,) estimated overlaps
    points_s: np.ndarray     # (v, p, 3) sampled source points
    points_k: np.ndarray     # (v, p, 3) sampled keyframe points
    mask_s: np.ndarray       # (v, p) real-point mask
    mask_k: np.ndarray       # (v, p)

    def __len__(self) -> int:
        return self.pairs.shape[0]


@dataclass
class Correspondences:
    """Per keyframe point: chosen source point index and its score weight."""

    source_index: np.ndarray  # (v, p) argmax over source points
    weights: Tensor           # (v, p) scores at the argmax
    valid: np.ndarray         # (v, p) keyframe rows that are real points


def select_matched_pairs(o_hat, fs: FeatureSet, fk: FeatureSet,
                         threshold: float = DEFAULT_PAIRING_THRESHOLD,
                         max_pairs: int = DEFAULT_MAX_PAIRS) -> MatchedVoxelPairs:
    """Pick the highest-overlap voxel pairs to register.

    Takes the top ``max_pairs`` entries of the estimated pair overlap
    matrix that exceed ``threshold``; raises NoMatches when nothing
    qualifies.
    """
    values = o_hat.data if isinstance(o_hat, Tensor) else np.asarray(o_hat)
    flat = values.ravel()
    order = np.argsort(-flat, kind="stable")
    order = order[flat[order] > threshold][:max_pairs]
    if order.size == 0:
        raise NoMatches("no voxel pair exceeds the pairing threshold")
    si, ki = np.unravel_index(order, values.shape)
    pairs = np.stack([si, ki], axis=1)
    return MatchedVoxelPairs(
        pairs=pairs,
        pair_scores=flat[order].copy(),
        points_s=fs.points[si],
        points_k=fk.points[ki],
        mask_s=fs.mask[si],
        mask_k=fk.mask[ki],
    )


class RegistrationModel:
    """Attention refinement producing matchable point features."""

    def __init__(self, voxel_dim: int, point_dim: int, model_dim: int,
                 heads: int, rng: np.random.Generator):
        self.model_dim = model_dim
        self.w_v = Linear(voxel_dim, model_dim, rng)
        self.w_p = Linear(point_dim, model_dim, rng)
        self.self_attn = MultiHeadAttention(model_dim, heads, rng)
        self.cross_attn = MultiHeadAttention(model_dim, heads, rng)
        self.post = MLP([model_dim, model_dim, model_dim], rng)

    def parameters(self, prefix: str = "registration") -> dict[str, Tensor]:
        out = self.w_v.parameters(f"{prefix}.w_v")
        out.update(self.w_p.parameters(f"{prefix}.w_p"))
        out.update(self.self_attn.parameters(f"{prefix}.self_attn"))
        out.update(self.cross_attn.parameters(f"{prefix}.cross_attn"))
        out.update(self.post.parameters(f"{prefix}.post"))
        return out

    def _tokens(self, feats: FeatureSet, voxel_idx: np.ndarray) -> Tensor:
        vox = self.w_v(index_rows(feats.voxel_features, voxel_idx))
        pts = self.w_p(index_rows(feats.point_features, voxel_idx))
        v = voxel_idx.shape[0]
        return l2_normalize(add(reshape(vox, (v, 1, self.model_dim)), pts))

    def refine_features(self, fs: FeatureSet, fk: FeatureSet,
                        pairs: MatchedVoxelPairs) -> tuple[Tensor, Tensor]:
        """Refined point features (source, keyframe), each (v, p, d).

        Residual wiring with pre-normalized attention inputs: token
        streams pass through untouched when the block output projections
        are zero.
        """
        if len(pairs) == 0:
            raise NoMatches("registration needs at least one voxel pair")
        tok_s = self._tokens(fs, pairs.pairs[:, 0])
        tok_k = self._tokens(fk, pairs.pairs[:, 1])

        hat_s = add(tok_s, self._self_block(tok_s))
        hat_k = add(tok_k, self._self_block(tok_k))

        tilde_k = add(hat_k, self._cross_block(source=hat_s, query=hat_k))
        tilde_s = add(hat_s, self._cross_block(source=hat_k, query=hat_s))

        tilde_s = add(tilde_s, self.post(l2_normalize(tilde_s)))
        tilde_k = add(tilde_k, self.post(l2_normalize(tilde_k)))
        return l2_normalize(tilde_s), l2_normalize(tilde_k)

    def _self_block(self, x: Tensor) -> Tensor:
        n = l2_normalize(x)
        return self.self_attn(n, n, n)

    def _cross_block(self, source: Tensor, query: Tensor) -> Tensor:
        s = l2_normalize(source)
        return self.cross_attn(l2_normalize(query), s, s)


def score_map(f_k: Tensor, f_s: Tensor) -> Tensor:
    """s[a, m, n] = sum_d f_k[a, m, d] * f_s[a, n, d]."""
    return einsum_3d(f_k, f_s)


def top_k_pairs(scores: Tensor, mask_k: np.ndarray | None = None) -> Correspondences:
    """Best source point per keyframe point (k = 1); ties take the lowest n."""
    best = np.argmax(scores.data, axis=-1)
    weights = gather_last(scores, best)
    valid = np.ones(best.shape, dtype=bool) if mask_k is None else np.asarray(mask_k, bool)
    return Correspondences(best, weights, valid)


def _weighted_svd_tensors(src: Tensor, dst: Tensor,
                          weights: Tensor) -> tuple[Tensor, Tensor]:
    n = src.shape[0]
    wsum = tsum(weights)
    if wsum.data <= 0.0:
        raise DegenerateGeometry("total correspondence weight is zero")
    wn = weights / wsum
    wrow = reshape(wn, (1, n))
    mu_s = matmul(wrow, src)            # (1, 3)
    mu_d = matmul(wrow, dst)
    cs = sub(src, mu_s)
    cd = sub(dst, mu_d)
    h = matmul(transpose(mul(cs, reshape(wn, (n, 1))), (1, 0)), cd)
    sv = np.linalg.svd(h.data, compute_uv=False)
    if sv[0] <= 1e-15 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateGeometry("correspondence geometry is rank-deficient")
    r = svd_rotation(h)
    t = sub(mu_d, matmul(mu_s, transpose(r, (1, 0))))
    return r, reshape(t, (3,))


def weighted_svd(src: np.ndarray, dst: np.ndarray,
                 weights: np.ndarray | None = None) -> RigidTransform:
    """Weighted Kabsch alignment: returns T with dst ~= R @ src + t.

    Weights normalize internally to sum 1; omitted weights are uniform.
    Needs at least three correspondences with non-degenerate centered
    geometry, and always returns a proper rotation (det +1).
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ShapeError("source and destination correspondence counts differ")
    if src.shape[0] < 3:
        raise Underdetermined("weighted SVD needs at least 3 correspondences")
    if weights is None:
        weights = np.ones(src.shape[0])
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.shape[0] != src.shape[0]:
        raise ShapeError("one weight per correspondence required")
    if (weights < 0).any():
        raise ValueError("weights must be non-negative")
    r, t = _weighted_svd_tensors(Tensor(src), Tensor(dst), Tensor(weights))
    return RigidTransform(r.data, t.data)


def matrix_loss_terms(r_hat: Tensor, t_hat: Tensor,
                      gt: RigidTransform) -> Tensor:
    """||R_hat^T R_g - I||_F^2 + ||t_hat - t_g||^2 as a graph node."""
    rel = sub(matmul(transpose(r_hat, (1, 0)), Tensor(gt.rotation)),
              Tensor(np.eye(3)))
    rot_term = tsum(mul(rel, rel))
    dt = sub(t_hat, Tensor(gt.translation))
    return rot_term + tsum(mul(dt, dt))


def matrix_loss(est: RigidTransform, gt: RigidTransform) -> float:
    return float(matrix_loss_terms(Tensor(est.rotation),
                                   Tensor(est.translation), gt).data)


def distance_loss_terms(r_hat: Tensor, t_hat: Tensor, gt: RigidTransform,
                        points: np.ndarray) -> Tensor:
    """MSE over coordinates between est-transformed and gt-transformed points."""
    pts = Tensor(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    moved = add(matmul(pts, transpose(r_hat, (1, 0))), reshape(t_hat, (1, 3)))
    return mse(moved, Tensor(gt.apply(pts.data)))


def distance_loss(est: RigidTransform, gt: RigidTransform,
                  ps: PointCloud) -> float:
    return float(distance_loss_terms(Tensor(est.rotation),
                                     Tensor(est.translation), gt,
                                     ps.points).data)


@dataclass
class RegistrationResult:
    """Differentiable registration output plus its correspondences."""

    rotation: Tensor
    translation: Tensor
    correspondences: Correspondences

    def transform(self) -> RigidTransform:
        return RigidTransform(self.rotation.data, self.translation.data)


def register_forward(model: RegistrationModel, fs: FeatureSet, fk: FeatureSet,
                     pairs: MatchedVoxelPairs) -> RegistrationResult:
    """Full refine -> score -> top-k -> weighted SVD pass, kept on the graph."""
    f_s, f_k = model.refine_features(fs, fk, pairs)
    scores = score_map(f_k, f_s)
    corr = top_k_pairs(scores, pairs.mask_k)

    v, p = corr.source_index.shape
    flat_valid = np.flatnonzero(corr.valid.ravel())
    if flat_valid.size < 3:
        raise Underdetermined("fewer than 3 valid correspondences")
    w = take(corr.weights, flat_valid)
    # Shift by max(0, -min) then clamp at 0 so the Kabsch weights are
    # non-negative; the shift amount itself carries no gradient.
    shift = max(0.0, -float(w.data.min()))
    w = relu(w + shift)
    if w.data.sum() <= 1e-12:
        w = w + 1.0 / flat_valid.size

    # Each correspondence weight also carries its voxel pair's coarse
    # overlap confidence, so weakly matched pairs cannot drag the fit.
    confidence = np.repeat(pairs.pair_scores, p)[flat_valid]
    w = mul(w, Tensor(confidence))

    rows = np.repeat(np.arange(v), p).reshape(v, p)
    src_pts = pairs.points_s[rows, corr.source_index].reshape(-1, 3)[flat_valid]
    dst_pts = pairs.points_k.reshape(-1, 3)[flat_valid]
    r, t = _weighted_svd_tensors(Tensor(src_pts), Tensor(dst_pts), w)
    return RegistrationResult(r, t, corr)


def registration_loss(result: RegistrationResult, gt: RigidTransform,
                      ps: np.ndarray, gamma: float = 1.0,
                      eta: float = 1.0) -> Tensor:
    """gamma * matrix loss + eta * distance loss for one registered pair."""
    return (matrix_loss_terms(result.rotation, result.translation, gt) * gamma
            + distance_loss_terms(result.rotation, result.translation, gt, ps) * eta)


def register(model: RegistrationModel, fs: FeatureSet, fk: FeatureSet,
             pairs: MatchedVoxelPairs) -> tuple[RigidTransform, Correspondences]:
    """Inference entry point: estimated transform plus correspondences."""
    result = register_forward(model, fs, fk, pairs)
    return result.transform(), result.correspondences
