"""Isotropy measurement and before/after comparison of embedding sets.

Score: the partition-function ratio I(V) = min_c Z(c) / max_c Z(c) with
Z(c) = sum_i exp(c . v_i), where c ranges over both signs of the unit
eigenvectors of V^T V computed on mean-centered rows. Rows are rescaled to
unit RMS norm after centering so the score is invariant under uniform
positive scaling (and exp cannot overflow); candidate directions include
both signs so the result does not depend on eigensolver sign conventions.
A mean-absolute-off-diagonal-correlation indicator is reported alongside as
a second, formula-free check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeError, ValidationError
from .linalg import pca_project, pearson_correlation

_DEGENERATE_RMS = 1e-12


@dataclass
class IsotropyReport:
    score: float
    n: int
    d: int
    spectrum: list[float]
    mean_abs_off_diagonal: float
    rank_deficient: bool

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "n": self.n,
            "d": self.d,
            "spectrum": self.spectrum,
            "mean_abs_off_diagonal": self.mean_abs_off_diagonal,
            "rank_deficient": self.rank_deficient,
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _as_matrix(embeddings) -> np.ndarray:
    values = getattr(embeddings, "matrix", embeddings)
    if isinstance(values, ad.Tensor):
        values = values.data
    E = np.asarray(values, dtype=np.float64)
    if E.ndim != 2:
        raise ShapeError(f"expected an n x d matrix, got shape {E.shape}")
    return E


def isotropy_report(embeddings) -> IsotropyReport:
    E = _as_matrix(embeddings)
    n, d = E.shape
    if n < 2 or d < 2:
        raise ValidationError(f"isotropy needs n >= 2 and d >= 2, got n={n}, d={d}")
    centered = E - E.mean(axis=0)
    covariance = centered.T @ centered / n
    eigenvalues = np.clip(np.linalg.eigvalsh(covariance), 0.0, None)[::-1]
    top = eigenvalues[0]
    rank = int(np.sum(eigenvalues > top * 1e-12)) if top > 0 else 0
    rank_deficient = rank < min(d, n - 1)

    rms = float(np.sqrt(np.sum(centered * centered) / n))
    scaled = centered if rms < _DEGENERATE_RMS else centered / rms
    _, eigenvectors = np.linalg.eigh(scaled.T @ scaled)
    projections = scaled @ eigenvectors
    z_values = np.concatenate(
        [np.exp(projections).sum(axis=0), np.exp(-projections).sum(axis=0)]
    )
    score = float(z_values.min() / z_values.max())

    with ad.no_grad():
        corr = pearson_correlation(ad.Tensor(E)).data
    off = np.abs(corr[~np.eye(d, dtype=bool)])
    return IsotropyReport(
        score=score,
        n=n,
        d=d,
        spectrum=[float(v) for v in eigenvalues],
        mean_abs_off_diagonal=float(off.mean()),
        rank_deficient=rank_deficient,
    )


def isotropy_score(embeddings) -> float:
    """Scalar in (0, 1]; 1 means perfectly isotropic under this measure."""
    return isotropy_report(embeddings).score


@dataclass
class IsotropyComparison:
    """Before/after reports; delta = before.score - after.score, i.e. the
    isotropy lost going from the first set to the second."""

    before: IsotropyReport
    after: IsotropyReport
    delta: float
    projection_before: np.ndarray
    projection_after: np.ndarray

    def to_dict(self) -> dict:
        return {
            "before": self.before.to_dict(),
            "after": self.after.to_dict(),
            "delta": self.delta,
        }


def compare_isotropy(before, after) -> IsotropyComparison:
    """Score both sets and emit 2-D PCA projections for plotting."""
    before_m = _as_matrix(before)
    after_m = _as_matrix(after)
    if before_m.shape[1] != after_m.shape[1]:
        raise ShapeError(
            f"dimension mismatch: before d={before_m.shape[1]}, after d={after_m.shape[1]}"
        )
    report_before = isotropy_report(before_m)
    report_after = isotropy_report(after_m)
    return IsotropyComparison(
        before=report_before,
        after=report_after,
        delta=report_before.score - report_after.score,
        projection_before=pca_project(before_m, 2),
        projection_after=pca_project(after_m, 2),
    )
