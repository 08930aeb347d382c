"""Statistical kernels on embedding matrices.

``pearson_correlation`` and ``frobenius_distance_to_identity`` are built
from autodiff primitives so losses can differentiate through them;
``pca_project`` is analysis-only and works on plain arrays.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import BatchTooSmallError, DegenerateRankError, ShapeError, ValidationError

# Degenerate (zero-variance) dimensions get their denominator clamped to
# sqrt(VARIANCE_FLOOR) instead of 0; non-degenerate dimensions are untouched,
# which keeps the diagonal of the correlation matrix at exactly 1.
VARIANCE_FLOOR = 1e-8


def pearson_correlation(embeddings) -> ad.Tensor:
    """d x d Pearson correlation matrix of an n x d batch, biased (1/n) moments.

    Differentiable with respect to the input. Zero-variance dimensions are
    handled by the variance floor (their row/column collapses to ~0) rather
    than raising.
    """
    E = ad.as_tensor(embeddings)
    if E.data.ndim != 2:
        raise ShapeError(f"expected an n x d matrix, got shape {E.data.shape}")
    n, d = E.data.shape
    if n < 2:
        raise BatchTooSmallError(f"correlation needs at least 2 rows, got {n}")
    centered = ad.sub(E, ad.tensor_mean(E, axis=0, keepdims=True))
    cov = ad.div(ad.matmul(ad.swapaxes(centered, 0, 1), centered), float(n))
    var = ad.tensor_mean(ad.square(centered), axis=0)
    sigma = ad.sqrt(ad.clamp_min(var, VARIANCE_FLOOR))
    denom = ad.matmul(ad.reshape(sigma, (d, 1)), ad.reshape(sigma, (1, d)))
    return ad.div(cov, denom)


def frobenius_distance_to_identity(matrix) -> ad.Tensor:
    """``||S - I||_F`` for a square matrix S; zero iff S equals I."""
    S = ad.as_tensor(matrix)
    if S.data.ndim != 2 or S.data.shape[0] != S.data.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {S.data.shape}")
    eye = ad.Tensor(np.eye(S.data.shape[0]))
    return ad.sqrt(ad.tensor_sum(ad.square(ad.sub(S, eye))))


def _principal_axes(E: np.ndarray):
    """Eigenvalues (descending, clipped at 0) and eigenvectors of the biased
    covariance of the mean-centered rows."""
    centered = E - E.mean(axis=0)
    cov = centered.T @ centered / E.shape[0]
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    return np.clip(eigenvalues[order], 0.0, None), eigenvectors[:, order], centered


def pca_project(E, k: int) -> np.ndarray:
    """Project rows of E onto its top-k principal components.

    Components are unit-norm with the sign fixed so each component's
    largest-magnitude coordinate is positive, making the output
    deterministic across runs.
    """
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2:
        raise ShapeError(f"expected an n x d matrix, got shape {E.shape}")
    n, d = E.shape
    if not (isinstance(k, (int, np.integer)) and 1 <= k <= min(n, d)):
        raise ValidationError(f"need n >= k >= 1 and d >= k, got n={n}, d={d}, k={k!r}")
    eigenvalues, eigenvectors, centered = _principal_axes(E)
    if eigenvalues[0] <= 0.0:
        rank = 0
    else:
        rank = int(np.sum(eigenvalues > eigenvalues[0] * 1e-12))
    if rank < k:
        raise DegenerateRankError(
            f"matrix has numerical rank {rank}, cannot project to {k} components",
            achieved_rank=rank,
            requested=k,
        )
    components = eigenvectors[:, :k].copy()
    for j in range(k):
        pivot = np.argmax(np.abs(components[:, j]))
        if components[pivot, j] < 0:
            components[:, j] = -components[:, j]
    return centered @ components
