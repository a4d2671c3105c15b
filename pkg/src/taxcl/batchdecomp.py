"""Partition each anchor's batch peers into positives, taxonomic
negatives and regular negatives.

Supervised mode reads the two label levels; unsupervised mode keeps the
augmented view as the lone positive and promotes candidates whose
normalized anchor similarity exceeds a threshold into the taxonomic
set.  Per anchor the three sets plus the anchor itself always tile the
batch exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import numerics

DEGENERATE_SPREAD = 1e-12


@dataclass
class LabeledBatch:
    """M row embeddings with class / taxonomy labels and (optionally)
    the index of each row's augmented partner view."""

    embeddings: np.ndarray
    y_gt: np.ndarray
    y_tax: np.ndarray
    view_pair: np.ndarray | None = None

    def __post_init__(self):
        self.embeddings = numerics.as_matrix(self.embeddings, "embeddings")
        self.y_gt = np.asarray(self.y_gt, dtype=np.int64)
        self.y_tax = np.asarray(self.y_tax, dtype=np.int64)
        M = self.embeddings.shape[0]
        if M < 2:
            raise ValueError(f"batch needs at least 2 rows, got {M}")
        if self.y_gt.shape != (M,) or self.y_tax.shape != (M,):
            raise ValueError("label arrays must have one entry per row")
        if (self.y_gt < 0).any() or (self.y_tax < 0).any():
            raise ValueError("labels must be non-negative")
        if self.view_pair is not None:
            vp = np.asarray(self.view_pair, dtype=np.int64)
            if vp.shape != (M,):
                raise ValueError("view_pair must have one entry per row")
            if not np.array_equal(vp[vp], np.arange(M)):
                raise ValueError("view_pair must be a self-inverse pairing")
            if (vp == np.arange(M)).any():
                raise ValueError("a row cannot be its own view pair")
            self.view_pair = vp

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]


@dataclass
class Decomposition:
    """Per-anchor index sets; see masks() for the M x M boolean view."""

    positives: list[np.ndarray]
    taxonomic: list[np.ndarray]
    regular: list[np.ndarray]
    degenerate_anchors: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=bool)
    )

    @property
    def size(self) -> int:
        return len(self.positives)

    def masks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        M = self.size
        pos = np.zeros((M, M), dtype=bool)
        tax = np.zeros((M, M), dtype=bool)
        reg = np.zeros((M, M), dtype=bool)
        for i in range(M):
            pos[i, self.positives[i]] = True
            tax[i, self.taxonomic[i]] = True
            reg[i, self.regular[i]] = True
        return pos, tax, reg

    def validate_partition(self) -> None:
        """Assert the three sets tile {0..M-1} \\ {anchor} for every anchor."""
        M = self.size
        for i in range(M):
            parts = [self.positives[i], self.taxonomic[i], self.regular[i]]
            merged = np.concatenate(parts)
            if len(np.unique(merged)) != len(merged):
                raise AssertionError(f"anchor {i}: overlapping sets")
            expected = np.setdiff1d(np.arange(M), [i])
            if not np.array_equal(np.sort(merged), expected):
                raise AssertionError(f"anchor {i}: sets do not tile the batch")

    def to_json_lines(self) -> str:
        """Debug dump: one JSON record per anchor with sorted index arrays."""
        lines = []
        for i in range(self.size):
            lines.append(
                json.dumps(
                    {
                        "anchor": i,
                        "positives": sorted(int(a) for a in self.positives[i]),
                        "taxonomic": sorted(int(a) for a in self.taxonomic[i]),
                        "regular": sorted(int(a) for a in self.regular[i]),
                    },
                    sort_keys=True,
                )
            )
        return "\n".join(lines) + "\n"


def _from_masks(pos, tax, reg, degenerate=None) -> Decomposition:
    M = pos.shape[0]
    return Decomposition(
        positives=[np.flatnonzero(pos[i]) for i in range(M)],
        taxonomic=[np.flatnonzero(tax[i]) for i in range(M)],
        regular=[np.flatnonzero(reg[i]) for i in range(M)],
        degenerate_anchors=(
            degenerate if degenerate is not None else np.zeros(M, dtype=bool)
        ),
    )


def decompose_supervised(batch: LabeledBatch) -> Decomposition:
    """P(i): same class.  T(i): different class, same taxonomy.
    N_reg(i): different class and taxonomy."""
    y, t = batch.y_gt, batch.y_tax
    eye = np.eye(batch.size, dtype=bool)
    same_class = y[:, None] == y[None, :]
    same_tax = t[:, None] == t[None, :]
    pos = same_class & ~eye
    tax = ~same_class & same_tax
    reg = ~same_class & ~same_tax
    return _from_masks(pos, tax, reg)


def normalize_similarities(sims) -> tuple[np.ndarray, bool]:
    """Min-max map onto [0, 1].  A spread below 1e-12 collapses the
    output to all zeros and sets the degenerate flag."""
    sims = np.asarray(sims, dtype=np.float64)
    if sims.size == 0:
        raise ValueError("cannot normalize an empty similarity list")
    lo, hi = sims.min(), sims.max()
    if hi - lo < DEGENERATE_SPREAD:
        return np.zeros_like(sims), True
    return (sims - lo) / (hi - lo), False


def affine_similarities(sims) -> tuple[np.ndarray, bool]:
    """(s + 1) / 2: the fixed affine map from cosine range onto [0, 1]."""
    sims = np.asarray(sims, dtype=np.float64)
    if sims.size == 0:
        raise ValueError("cannot normalize an empty similarity list")
    return (sims + 1.0) / 2.0, False


_SIM_NORMS = {"minmax": normalize_similarities, "affine": affine_similarities}


def decompose_unsupervised(
    batch: LabeledBatch, epsilon: float, sim_norm: str = "minmax"
) -> Decomposition:
    """Single positive j(i); candidates with normalized similarity
    strictly above epsilon become taxonomic negatives.

    Ties at the threshold stay regular, so epsilon = 1.0 empties T(i)
    and degenerate (constant-similarity) anchors do as well.
    """
    if batch.view_pair is None:
        raise ValueError("unsupervised decomposition requires view_pair")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    try:
        norm = _SIM_NORMS[sim_norm]
    except KeyError:
        raise ValueError(f"unknown sim_norm {sim_norm!r}") from None

    M = batch.size
    S = numerics.gram(batch.embeddings)
    pos = np.zeros((M, M), dtype=bool)
    tax = np.zeros((M, M), dtype=bool)
    reg = np.zeros((M, M), dtype=bool)
    degenerate = np.zeros(M, dtype=bool)
    for i in range(M):
        j = batch.view_pair[i]
        pos[i, j] = True
        cand = np.array([a for a in range(M) if a != i and a != j], dtype=np.int64)
        if cand.size == 0:
            continue
        scores, degenerate[i] = norm(S[i, cand])
        hard = scores > epsilon
        tax[i, cand[hard]] = True
        reg[i, cand[~hard]] = True
    return _from_masks(pos, tax, reg, degenerate)
