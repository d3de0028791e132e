"""Exact (quadratic) t-SNE for embedding analysis.

Per-point bandwidths are calibrated by binary search so each conditional
distribution hits the target perplexity; optimization is plain gradient
descent with momentum schedule, early exaggeration, and per-parameter gains.
No tree approximations: at desk scale (<= 5000 points) the exact gradients
keep every run deterministic and testable.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataIntegrityError, NumericalError, ParameterError

_EPS = 1e-12


@dataclass(frozen=True)
class TsneParams:
    perplexity: float = 30.0
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch_iter: int = 250
    learning_rate: float = 200.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.perplexity < 2.0:
            raise ParameterError(f"perplexity must be >= 2, got {self.perplexity}")
        for name in ("initial_momentum", "final_momentum"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ParameterError(f"{name} {value} outside [0, 1)")
        if self.iterations <= self.exaggeration_iters:
            raise ParameterError(
                f"iterations ({self.iterations}) must exceed "
                f"exaggeration_iters ({self.exaggeration_iters})"
            )
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass
class ProjectedPoints:
    coords: np.ndarray
    final_kl: float
    initial_kl: float
    labels: list | None = None

    def __post_init__(self):
        if not np.isfinite(self.coords).all():
            raise DataIntegrityError("projected coordinates contain non-finite values")
        if self.final_kl < 0 and self.final_kl > -1e-12:
            self.final_kl = 0.0


def pairwise_sq_distances(x: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances with an exactly zero diagonal."""
    sq = np.einsum("ij,ij->i", x, x)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def perplexity_calibration(
    sq_distances: np.ndarray,
    perplexity: float,
    tol: float = 1e-7,
    max_iter: int = 100,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-point bandwidth search matching the target conditional entropy.

    Returns (sigmas, conditional P) where row i of P is the conditional
    distribution over neighbors of i (zero diagonal, rows sum to 1) whose
    Shannon entropy is log2(perplexity) within ``tol`` bits. Degenerate rows
    (all neighbors at identical distance, e.g. duplicate point sets) fall
    back to the uniform distribution with a finite sigma.
    """
    d = np.asarray(sq_distances, dtype=np.float64)
    n = d.shape[0]
    if d.shape != (n, n):
        raise ParameterError(f"distance matrix must be square, got {d.shape}")
    if not np.allclose(d, d.T, atol=1e-8):
        raise ParameterError("distance matrix must be symmetric")
    if np.abs(np.diag(d)).max() > 1e-12:
        raise ParameterError("distance matrix must have a zero diagonal")
    max_perp = (n - 1) / 3.0
    if perplexity > max_perp:
        warnings.warn(
            f"perplexity {perplexity} too large for n={n}; lowering to {max_perp:.2f}",
            stacklevel=2,
        )
        perplexity = max_perp
    target_entropy = np.log2(perplexity)

    sigmas = np.empty(n)
    cond_p = np.zeros((n, n))
    idx = np.arange(n)
    for i in range(n):
        row = np.delete(d[i], i)
        if row.max() - row.min() < 1e-24:
            cond_p[i, idx != i] = 1.0 / (n - 1)
            sigmas[i] = 1.0
            continue
        beta, beta_lo, beta_hi = 1.0, 0.0, np.inf
        p_norm = np.full_like(row, 1.0 / (n - 1))
        for _ in range(max_iter):
            p = np.exp(-row * beta)
            total = p.sum()
            if total <= 0.0:
                # Numeric underflow from a too-large beta: back off.
                beta_hi = beta
                beta = (beta_lo + beta_hi) / 2.0
                continue
            p_norm = p / total
            nz = p_norm > 0
            entropy = -np.sum(p_norm[nz] * np.log2(p_norm[nz]))
            diff = entropy - target_entropy
            if abs(diff) < tol:
                break
            if diff > 0:
                beta_lo = beta
                beta = beta * 2.0 if beta_hi == np.inf else (beta_lo + beta_hi) / 2.0
            else:
                beta_hi = beta
                beta = (beta_lo + beta_hi) / 2.0
        cond_p[i, idx != i] = p_norm
        sigmas[i] = float(np.sqrt(1.0 / (2.0 * beta)))
    return sigmas, cond_p


def joint_probabilities(embeddings: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized affinities p_ij = (p_j|i + p_i|j) / 2n; sums to 1."""
    _, cond_p = perplexity_calibration(pairwise_sq_distances(embeddings), perplexity)
    n = cond_p.shape[0]
    return (cond_p + cond_p.T) / (2.0 * n)


def _low_dim_affinities(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Student-t kernel weights and the normalized Q matrix."""
    w = 1.0 / (1.0 + pairwise_sq_distances(coords))
    np.fill_diagonal(w, 0.0)
    q = w / w.sum()
    return w, q


def kl_divergence(p: np.ndarray, coords: np.ndarray) -> float:
    """KL(P || Q(coords)); zero-probability P cells contribute nothing."""
    _, q = _low_dim_affinities(coords)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], _EPS))))


def kl_gradient(p: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Analytic t-SNE gradient: 4 * sum_j (p_ij - q_ij) w_ij (y_i - y_j)."""
    w, q = _low_dim_affinities(coords)
    pq = (p - q) * w
    return 4.0 * (np.diag(pq.sum(axis=1)) @ coords - pq @ coords)


def tsne(
    embeddings: np.ndarray,
    params: TsneParams = TsneParams(),
    labels: Sequence | None = None,
) -> ProjectedPoints:
    """Project embeddings to 2-D; deterministic for a fixed seed."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 5:
        raise ParameterError(f"need at least 5 embeddings in a 2-D array, got {x.shape}")
    if not np.isfinite(x).all():
        raise DataIntegrityError("embeddings contain non-finite values")
    if labels is not None and len(labels) != x.shape[0]:
        raise ParameterError("labels length does not match number of embeddings")
    n = x.shape[0]
    p = joint_probabilities(x, params.perplexity)

    rng = np.random.default_rng(params.seed)
    coords = rng.normal(0.0, 1e-4, size=(n, 2))
    initial_kl = kl_divergence(p, coords)

    if pairwise_sq_distances(x).max() < 1e-18:
        # All inputs identical: P is uniform and the tight initial cloud
        # already realizes it (Q ~ uniform). Optimizing a zero-information
        # landscape only amplifies noise, so keep the initialization.
        return ProjectedPoints(
            coords=coords,
            final_kl=initial_kl,
            initial_kl=initial_kl,
            labels=list(labels) if labels is not None else None,
        )

    velocity = np.zeros_like(coords)
    gains = np.ones_like(coords)
    for iteration in range(params.iterations):
        exaggerate = iteration < params.exaggeration_iters
        p_eff = p * params.early_exaggeration if exaggerate else p
        grad = kl_gradient(p_eff, coords)
        momentum = (
            params.initial_momentum
            if iteration < params.momentum_switch_iter
            else params.final_momentum
        )
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        velocity = momentum * velocity - params.learning_rate * gains * grad
        coords = coords + velocity
        coords = coords - coords.mean(axis=0)
        if not np.isfinite(coords).all():
            raise NumericalError("t-SNE diverged to non-finite coordinates", iteration=iteration)
    final_kl = kl_divergence(p, coords)
    return ProjectedPoints(
        coords=coords,
        final_kl=final_kl,
        initial_kl=initial_kl,
        labels=list(labels) if labels is not None else None,
    )


# --- outputs ---------------------------------------------------------------


def write_projection_csv(pp: ProjectedPoints, ids: Sequence, path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("id,x,y,label\n")
        for i, point_id in enumerate(ids):
            label = "" if pp.labels is None else str(pp.labels[i])
            f.write(
                f"{point_id},{float(pp.coords[i, 0])!r},{float(pp.coords[i, 1])!r},{label}\n"
            )


def write_run_report(
    pp: ProjectedPoints, params: TsneParams, path: Path | str, note: str | None = None
) -> None:
    report = {
        "params": {
            "perplexity": params.perplexity,
            "initial_momentum": params.initial_momentum,
            "final_momentum": params.final_momentum,
            "momentum_switch_iter": params.momentum_switch_iter,
            "learning_rate": params.learning_rate,
            "iterations": params.iterations,
            "early_exaggeration": params.early_exaggeration,
            "exaggeration_iters": params.exaggeration_iters,
            "seed": params.seed,
        },
        "final_kl": pp.final_kl,
        "initial_kl": pp.initial_kl,
        "iterations": params.iterations,
        "n_points": int(pp.coords.shape[0]),
    }
    if note:
        report["note"] = note
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=2)
        f.write("\n")


_PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
]


def write_scatter_svg(pp: ProjectedPoints, path: Path | str, size: int = 640) -> None:
    """Static scatter plot colored by label; no plotting dependency needed."""
    coords = pp.coords
    labels = pp.labels if pp.labels is not None else [""] * coords.shape[0]
    unique = sorted({str(l) for l in labels})
    color_of = {label: _PALETTE[i % len(_PALETTE)] for i, label in enumerate(unique)}
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    margin, legend_h = 20, 18 * len(unique) + 10
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
        f'height="{size + legend_h}" viewBox="0 0 {size} {size + legend_h}">',
        f'<rect width="{size}" height="{size + legend_h}" fill="white"/>',
    ]
    for (x, y), label in zip(coords, labels):
        px = margin + (x - lo[0]) / span[0] * (size - 2 * margin)
        py = margin + (1.0 - (y - lo[1]) / span[1]) * (size - 2 * margin)
        parts.append(
            f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{color_of[str(label)]}" '
            'fill-opacity="0.7"/>'
        )
    for i, label in enumerate(unique):
        y = size + 14 + 18 * i
        parts.append(f'<circle cx="{margin}" cy="{y}" r="5" fill="{color_of[label]}"/>')
        parts.append(
            f'<text x="{margin + 12}" y="{y + 4}" font-family="sans-serif" '
            f'font-size="12">{label or "(unlabeled)"}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
