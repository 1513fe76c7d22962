"""Co-consumption distances, Rao-Stirling diversity, entropy/volume baselines
and a classical MDS map of categories."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import ConsumptionMatrix


@dataclass
class DistanceMatrix:
    categories: list[str]
    d: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        n = len(self.categories)
        if self.d.shape != (n, n):
            raise ValueError(f"distance grid shape {self.d.shape} != ({n}, {n})")

    def __len__(self):
        return len(self.categories)


@dataclass(frozen=True)
class DiversityReport:
    user_id: str
    rao_stirling: float
    entropy: float
    volume: int


@dataclass
class MdsEmbedding:
    categories: list[str]
    coords: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray
    # set when fewer than the requested number of positive eigenvalues exist
    degenerate: bool = False


def cosine_distance_matrix(cm: ConsumptionMatrix) -> DistanceMatrix:
    """Pairwise ``1 - cosine`` between category columns, clamped to [0, 1]."""
    x = cm.proportions
    norms = np.sqrt((x * x).sum(axis=0))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"category {cm.categories[zero[0]]!r} has an all-zero column")
    sim = (x.T @ x) / np.outer(norms, norms)
    d = np.clip(1.0 - sim, 0.0, 1.0)
    d = (d + d.T) / 2.0
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(list(cm.categories), d)


def _grid(d) -> np.ndarray:
    return d.d if isinstance(d, DistanceMatrix) else np.asarray(d, dtype=float)


def rao_stirling(p, d) -> float:
    """Sum of ``p_i * p_j * d(i, j)`` over all ordered category pairs."""
    p = np.asarray(p, dtype=float)
    grid = _grid(d)
    if p.ndim != 1 or grid.shape != (p.size, p.size):
        raise ValueError(f"dimension mismatch: p has {p.shape}, d has {grid.shape}")
    return float(p @ grid @ p)


def shannon_entropy(p) -> float:
    """Entropy in nats; zero entries contribute nothing."""
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum()) + 0.0


def volume(p, eps: float = 0.0) -> int:
    return int((np.asarray(p, dtype=float) > eps).sum())


def diversity_batch(cm: ConsumptionMatrix, d: DistanceMatrix) -> list[DiversityReport]:
    if list(cm.categories) != list(d.categories):
        raise ValueError("consumption matrix and distance matrix categories differ")
    reports = []
    for user_id, row in zip(cm.users, cm.proportions):
        try:
            reports.append(
                DiversityReport(user_id, rao_stirling(row, d), shannon_entropy(row), volume(row))
            )
        except ValueError as exc:
            raise ValueError(f"user {user_id}: {exc}") from exc
    return reports


def classical_mds(d: DistanceMatrix, dims: int = 2) -> MdsEmbedding:
    """Torgerson scaling of a distance matrix.

    Double-centers the squared distances, keeps the top ``dims`` eigenpairs
    and scales eigenvectors by the root eigenvalue. Each axis is oriented so
    that its largest-magnitude coordinate is positive. Axes whose eigenvalue
    is not positive are omitted and ``degenerate`` is set.
    """
    grid = _grid(d)
    n = grid.shape[0]
    if n < 3:
        raise ValueError(f"MDS needs at least 3 categories, got {n}")
    j = np.eye(n) - np.full((n, n), 1.0 / n)
    b = -0.5 * j @ (grid**2) @ j
    b = (b + b.T) / 2.0
    evals, evecs = np.linalg.eigh(b)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    top = evals[:dims]
    tol = 1e-12 * max(1.0, float(np.abs(evals).max()))
    keep = int((top > tol).sum())
    coords = evecs[:, :keep] * np.sqrt(top[:keep])
    for k in range(keep):
        if coords[np.argmax(np.abs(coords[:, k])), k] < 0:
            coords[:, k] = -coords[:, k]
    coords = coords - coords.mean(axis=0)
    cats = list(d.categories) if isinstance(d, DistanceMatrix) else [str(i) for i in range(n)]
    return MdsEmbedding(cats, coords, top.copy(), degenerate=keep < dims)


def _fmt(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def write_diversity(path, reports: Sequence[DiversityReport]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "rao_stirling", "entropy", "volume"])
        for r in reports:
            w.writerow([r.user_id, _fmt(r.rao_stirling), _fmt(r.entropy), r.volume])


def read_diversity(path) -> dict[str, DiversityReport]:
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["user_id"]] = DiversityReport(
                row["user_id"],
                float(row["rao_stirling"]),
                float(row["entropy"]),
                int(row["volume"]),
            )
    return out


def write_distances(path, d: DistanceMatrix) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category", *d.categories])
        for label, row in zip(d.categories, d.d):
            w.writerow([label, *(_fmt(x) for x in row)])


def read_distances(path) -> DistanceMatrix:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0][1:]
    labels = [r[0] for r in rows[1:]]
    if labels != header:
        raise ValueError(f"{path}: row and column labels differ")
    return DistanceMatrix(labels, np.array([[float(x) for x in r[1:]] for r in rows[1:]]))


def write_mds(path, emb: MdsEmbedding) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category", "x", "y"])
        for label, xy in zip(emb.categories, emb.coords):
            x = xy[0] if len(xy) > 0 else 0.0
            y = xy[1] if len(xy) > 1 else 0.0
            w.writerow([label, _fmt(x), _fmt(y)])
