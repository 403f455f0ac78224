"""Attention traces and alignment diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import bstf


@dataclass
class AttentionTrace:
    """Per decoder step: weight row over memory and the mixture parameters."""

    alphas: np.ndarray  # (S, L)
    kappa: np.ndarray  # (S, M)
    sigma: np.ndarray  # (S, M)
    weights: np.ndarray  # (S, M)

    def __len__(self) -> int:
        return len(self.alphas)

    def save(self, path: str | Path) -> None:
        bstf.save_checkpoint(
            path,
            {"alphas": self.alphas, "kappa": self.kappa, "sigma": self.sigma, "weights": self.weights},
            {"kind": "attention_trace"},
        )

    @classmethod
    def load(cls, path: str | Path) -> "AttentionTrace":
        t, _, _ = bstf.load_checkpoint(path)
        return cls(t["alphas"].astype(np.float64), t["kappa"], t["sigma"], t["weights"])


@dataclass(frozen=True)
class AlignmentSummary:
    centroids: np.ndarray
    diagonal: np.ndarray
    max_deviation: float
    mean_deviation: float
    monotonicity_violations: int
    matrix: np.ndarray

    def to_csv(self, path: str | Path) -> None:
        """Write the weight matrix, one decoder step per row."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step"] + [f"pos{j}" for j in range(self.matrix.shape[1])])
            for t, row in enumerate(self.matrix):
                writer.writerow([t] + [f"{v:.6g}" for v in row])


def alignment_diagnostics(
    trace: AttentionTrace | np.ndarray, frames_per_step: int, downsample: int = 1, tol: float = 1e-9
) -> AlignmentSummary:
    """Centroid path ``sum_j j * alpha_t(j)`` against the diagonal ``t * r / downsample``.

    Violations count steps where the centroid moves backwards by more than
    ``tol``.
    """
    alphas = np.asarray(trace.alphas if isinstance(trace, AttentionTrace) else trace, dtype=np.float64)
    if alphas.ndim != 2 or alphas.shape[0] == 0:
        raise ValueError("alignment diagnostics need a non-empty (steps, positions) matrix")
    centroids = alphas @ np.arange(alphas.shape[1])
    diagonal = np.arange(len(alphas)) * frames_per_step / downsample
    dev = np.abs(centroids - diagonal)
    return AlignmentSummary(
        centroids=centroids,
        diagonal=diagonal,
        max_deviation=float(dev.max()),
        mean_deviation=float(dev.mean()),
        monotonicity_violations=int(np.sum(np.diff(centroids) < -tol)),
        matrix=alphas,
    )
