"""Registration metrics, pair-set evaluation, and the CSV report.

TE is the Euclidean distance between translations; RE is
arccos((trace(R_est^T R_gt) - 1) / 2) in degrees with the argument
clamped to [-1, 1]. Evaluation is a pure function of (model, dataset,
criteria): rerunning it reproduces the report byte for byte.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateGeometry, EmptyInput, NoMatches,
                     Underdetermined)
from .geometry import RigidTransform, voxelize
from .models import PipelineModel
from .synthetic import TrainingPair
from .features import compute_descriptors


def translation_error(est: RigidTransform, gt: RigidTransform) -> float:
    return float(np.linalg.norm(est.translation - gt.translation))


def rotation_error(est: RigidTransform, gt: RigidTransform) -> float:
    """Relative rotation angle in degrees, arccos form, clamped."""
    arg = (np.trace(est.rotation.T @ gt.rotation) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(arg, -1.0, 1.0))))


@dataclass
class PairEval:
    index: int
    seed: int
    label: bool
    overlap_gt: float
    overlap_est: float
    te: float | None
    re: float | None
    success: bool
    translation_norm: float | None = None  # |t_hat| of the registered pose


@dataclass
class EvalReport:
    success_te: float
    success_re: float
    overlap_threshold: float
    translation_threshold: float
    rows: list[PairEval] = field(default_factory=list)
    success_rate: float = 0.0
    te_mean_succ: float = float("nan")
    te_mean_all: float = float("nan")
    re_mean_succ: float = float("nan")
    re_mean_all: float = float("nan")
    fp_before: float = 0.0
    fp_after: float = 0.0
    pr_points: list[tuple[float, float, float]] = field(default_factory=list)

    def summary(self) -> str:
        buf = io.StringIO()
        buf.write("# success criteria: TE < {:.3g} m AND RE < {:.3g} deg\n"
                  .format(self.success_te, self.success_re))
        buf.write(f"# pairs: {len(self.rows)} "
                  f"(positives: {sum(1 for r in self.rows if r.label)})\n")
        buf.write(f"success_rate {self.success_rate:.4f}\n")
        buf.write(f"te_mean_succ {self.te_mean_succ:.4f}\n")
        buf.write(f"te_mean_all {self.te_mean_all:.4f}\n")
        buf.write(f"re_mean_succ {self.re_mean_succ:.4f}\n")
        buf.write(f"re_mean_all {self.re_mean_all:.4f}\n")
        buf.write(f"fp_before_registration {self.fp_before:.4f}\n")
        buf.write(f"fp_after_registration {self.fp_after:.4f}\n")
        return buf.getvalue()


def evaluate(model: PipelineModel, dataset: list[TrainingPair],
             success_te: float = 2.0, success_re: float = 5.0,
             overlap_threshold: float = 0.5,
             translation_threshold: float = 3.0,
             voxel_size: float = 0.5, pair_threshold: float = 0.1,
             pairing_threshold: float = 0.1, max_pairs: int = 32) -> EvalReport:
    """Score every pair: overlap estimate always, registration on pairs
    that pass the overlap stage plus every ground-truth positive.

    Success (TE/RE under the criteria) is tallied over positive pairs.
    False-positive rates are the fraction of negative pairs passing the
    overlap stage (before) and additionally the translation filter
    (after).
    """
    if not dataset:
        raise EmptyInput("evaluation dataset is empty")
    report = EvalReport(success_te, success_re, overlap_threshold,
                        translation_threshold)
    for idx, pair in enumerate(dataset):
        qa = voxelize(pair.frame_a, voxel_size)
        qb = voxelize(pair.frame_b, voxel_size)
        desc_a = compute_descriptors(pair.frame_a, qa, model.dims.point_budget,
                                     model.dims.density_radius, sample_seed=idx)
        desc_b = compute_descriptors(pair.frame_b, qb, model.dims.point_budget,
                                     model.dims.density_radius,
                                     sample_seed=idx + 1)
        feats_a = model.embed(desc_a)
        feats_b = model.embed(desc_b)
        pred = model.predict_frame_overlap(feats_a, feats_b, pair_threshold)
        passed_overlap = pred.cloud_value > overlap_threshold

        te = re = tnorm = None
        if passed_overlap or pair.label:
            try:
                est, _, _ = model.register_pair(feats_a, feats_b, pred.o_hat,
                                                pairing_threshold, max_pairs)
                te = translation_error(est, pair.gt_transform)
                re = rotation_error(est, pair.gt_transform)
                tnorm = float(np.linalg.norm(est.translation))
            except (NoMatches, Underdetermined, DegenerateGeometry):
                te = re = tnorm = None
        success = (pair.label and te is not None
                   and te < success_te and re < success_re)
        report.rows.append(PairEval(
            idx, int(pair.meta.get("seed", -1)), pair.label,
            pair.gt_overlap.value, pred.cloud_value, te, re, success, tnorm))

    _finalize(report)
    return report


def _finalize(report: EvalReport) -> None:
    rows = report.rows
    positives = [r for r in rows if r.label]
    negatives = [r for r in rows if not r.label]
    if positives:
        report.success_rate = sum(r.success for r in positives) / len(positives)
        tes = [r.te for r in positives if r.te is not None]
        res = [r.re for r in positives if r.re is not None]
        succ_tes = [r.te for r in positives if r.success]
        succ_res = [r.re for r in positives if r.success]
        report.te_mean_all = float(np.mean(tes)) if tes else float("nan")
        report.re_mean_all = float(np.mean(res)) if res else float("nan")
        report.te_mean_succ = float(np.mean(succ_tes)) if succ_tes else float("nan")
        report.re_mean_succ = float(np.mean(succ_res)) if succ_res else float("nan")
    if negatives:
        passed = [r for r in negatives if r.overlap_est > report.overlap_threshold]
        report.fp_before = len(passed) / len(negatives)
        after = [r for r in passed
                 if r.translation_norm is not None
                 and r.translation_norm < report.translation_threshold]
        report.fp_after = len(after) / len(negatives)
    report.pr_points = _precision_recall(rows)


def _precision_recall(rows: list[PairEval]) -> list[tuple[float, float, float]]:
    points = []
    values = sorted({r.overlap_est for r in rows})
    thresholds = [0.0] + values
    n_pos = sum(1 for r in rows if r.label)
    for th in thresholds:
        predicted = [r for r in rows if r.overlap_est > th]
        tp = sum(1 for r in predicted if r.label)
        precision = tp / len(predicted) if predicted else 1.0
        recall = tp / n_pos if n_pos else 0.0
        points.append((float(th), float(precision), float(recall)))
    return points


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w") as fh:
        fh.write("# voxloop evaluation report\n")
        fh.write(f"# success criteria: TE < {report.success_te:.6g} m "
                 f"AND RE < {report.success_re:.6g} deg\n")
        fh.write("index,seed,label,overlap_gt,overlap_est,te,re,success\n")
        for r in report.rows:
            te = "" if r.te is None else f"{r.te:.9g}"
            re = "" if r.re is None else f"{r.re:.9g}"
            fh.write(f"{r.index},{r.seed},{int(r.label)},"
                     f"{r.overlap_gt:.9g},{r.overlap_est:.9g},{te},{re},"
                     f"{int(r.success)}\n")
