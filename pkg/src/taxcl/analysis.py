"""Representation-space diagnostics: subset eigenspectra, taxonomy
versus regular cosine gaps, nearest-neighbor retrieval audits, and the
alpha sweep over the combined loss.

Report objects are plain data; the writers at the bottom emit them as
plot-ready CSV plus a JSON summary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as model_mod
from . import numerics
from .batchdecomp import LabeledBatch, decompose_supervised
from .data import TaxonomyDataset
from .model import MlpSpec, ProbeConfig, TrainConfig
from .rng import SeededRng

COSINE_SLACK = 1e-12


@dataclass
class SpectrumReport:
    descriptor: str
    eigenvalues: np.ndarray
    trace: float
    size: int

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=np.float64)
        if ev.size and (np.diff(ev) > 0).any():
            raise ValueError("eigenvalues must be descending")
        self.eigenvalues = ev


@dataclass
class CosineReport:
    tax_means: np.ndarray
    reg_means: np.ndarray
    tax_aggregate: float
    reg_aggregate: float
    gap: float
    n_tax_anchors: int
    n_reg_anchors: int


@dataclass
class RetrievalRecord:
    anchor: int
    anchor_tax: int
    neighbors: list[int]
    neighbor_tax: list[int]
    hits: int


@dataclass
class RetrievalReport:
    records: list[RetrievalRecord]
    k: int
    hit_rate: float


@dataclass
class SweepRow:
    alpha: float
    seed: int
    probe_accuracy: float
    final_loss: float

    def __post_init__(self):
        if not 0.0 <= self.probe_accuracy <= 1.0:
            raise ValueError(f"accuracy must be in [0, 1], "
                             f"got {self.probe_accuracy}")


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------


def _one_spectrum(R: np.ndarray, indices: np.ndarray, descriptor: str) -> SpectrumReport:
    sub = R[indices]
    C = numerics.covariance(sub)
    dec = numerics.sym_eig(C)
    return SpectrumReport(descriptor=descriptor, eigenvalues=dec.eigenvalues,
                          trace=float(np.trace(C)), size=int(indices.size))


def spectrum(
    R,
    indices=None,
    matched_random: bool = False,
    rng: SeededRng | None = None,
    descriptor: str | None = None,
) -> list[SpectrumReport]:
    """Eigenspectrum of the (uncentered) covariance of selected rows.

    ``indices=None`` selects every row.  With ``matched_random`` a
    second report over an equal-size uniform subset (drawn without
    replacement from all rows) is appended for comparison.
    """
    R = numerics.as_matrix(R, "representation matrix")
    n = R.shape[0]
    if indices is None:
        idx = np.arange(n)
        desc = descriptor or "all"
    else:
        idx = np.asarray(indices, dtype=np.int64)
        desc = descriptor or "subset"
    if idx.size == 0:
        raise ValueError("spectrum of an empty subset")
    if idx.size < 2:
        raise ValueError("spectrum needs >= 2 rows for a meaningful "
                         "covariance; got 1")
    if (idx < 0).any() or (idx >= n).any():
        raise ValueError("subset indices out of range")
    reports = [_one_spectrum(R, idx, desc)]
    if matched_random:
        if rng is None:
            raise ValueError("matched_random needs an rng")
        pick = rng.sample_without_replacement(n, idx.size)
        reports.append(_one_spectrum(R, np.array(pick, dtype=np.int64),
                                     "random-matched"))
    return reports


def taxonomy_spectra(
    R, y_tax, rng: SeededRng, matched_random: bool = True
) -> list[SpectrumReport]:
    """One report per taxonomy subset (plus its random twin), then the
    full-matrix spectrum last."""
    y_tax = np.asarray(y_tax, dtype=np.int64)
    reports = []
    for s in np.unique(y_tax):
        idx = np.flatnonzero(y_tax == s)
        reports.extend(spectrum(R, idx, matched_random=matched_random,
                                rng=rng, descriptor=f"taxonomy-{s}"))
    reports.extend(spectrum(R))
    return reports


# ---------------------------------------------------------------------------
# cosine gap
# ---------------------------------------------------------------------------


def cosine_gap(V, y_gt, y_tax) -> CosineReport:
    """Mean anchor similarity to taxonomic vs regular negatives.

    Rows are unit-normalized here, and the anchor sets come from the
    same supervised decomposition the losses use.  Anchors missing a
    set are excluded from that aggregate only.
    """
    V = numerics.as_matrix(V, "vector matrix")
    y_tax_arr = np.asarray(y_tax, dtype=np.int64)
    if np.unique(y_tax_arr).size < 2:
        raise ValueError("cosine_gap needs >= 2 distinct taxonomies")
    Z, _ = numerics.l2_normalize_rows(V)
    batch = LabeledBatch(Z, y_gt, y_tax)
    decomp = decompose_supervised(batch)
    S = numerics.gram(Z)
    M = Z.shape[0]
    tax_means = np.full(M, np.nan)
    reg_means = np.full(M, np.nan)
    for i in range(M):
        t = decomp.taxonomic[i]
        r = decomp.regular[i]
        if t.size:
            tax_means[i] = float(S[i, t].mean())
        if r.size:
            reg_means[i] = float(S[i, r].mean())
    tax_ok = ~np.isnan(tax_means)
    reg_ok = ~np.isnan(reg_means)
    if not tax_ok.any():
        raise ValueError("no anchor has a nonempty taxonomic-negative set")
    for name, arr in (("taxonomic", tax_means[tax_ok]),
                      ("regular", reg_means[reg_ok])):
        if arr.size and (np.abs(arr) > 1.0 + COSINE_SLACK).any():
            raise ValueError(f"{name} similarity outside [-1, 1]")
    tax_agg = float(tax_means[tax_ok].mean())
    reg_agg = float(reg_means[reg_ok].mean()) if reg_ok.any() else float("nan")
    gap = tax_agg - reg_agg if reg_ok.any() else float("nan")
    return CosineReport(tax_means=tax_means, reg_means=reg_means,
                        tax_aggregate=tax_agg, reg_aggregate=reg_agg,
                        gap=gap, n_tax_anchors=int(tax_ok.sum()),
                        n_reg_anchors=int(reg_ok.sum()))


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------


def retrieve(V, y_tax, k: int, view_pair=None) -> RetrievalReport:
    """Exact top-k cosine neighbors per anchor, ties to the lower index.

    The anchor itself is never a candidate; when ``view_pair`` is given
    each anchor's paired view is excluded too (the audit should surface
    genuinely different samples, not the trivially-near second view).
    """
    V = numerics.as_matrix(V, "vector matrix")
    M = V.shape[0]
    y_tax_arr = np.asarray(y_tax, dtype=np.int64)
    if y_tax_arr.shape != (M,):
        raise ValueError(f"y_tax must have shape ({M},), got {y_tax_arr.shape}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > M - 2:
        raise ValueError(f"k={k} exceeds M-2={M - 2}")
    Z, _ = numerics.l2_normalize_rows(V)
    S = numerics.gram(Z)
    records = []
    total_hits = 0
    for i in range(M):
        scores = S[i].copy()
        scores[i] = -np.inf
        if view_pair is not None:
            scores[int(view_pair[i])] = -np.inf
        order = np.argsort(-scores, kind="stable")
        top = [int(j) for j in order[:k]]
        hits = sum(1 for j in top if y_tax_arr[j] == y_tax_arr[i])
        total_hits += hits
        records.append(RetrievalRecord(anchor=i, anchor_tax=int(y_tax_arr[i]),
                                       neighbors=top,
                                       neighbor_tax=[int(y_tax_arr[j]) for j in top],
                                       hits=hits))
    return RetrievalReport(records=records, k=k,
                           hit_rate=total_hits / (k * M))


# ---------------------------------------------------------------------------
# alpha sweep
# ---------------------------------------------------------------------------


def alpha_sweep(
    dataset: TaxonomyDataset,
    base_cfg: TrainConfig,
    alpha_grid,
    seeds,
    mlp_spec: MlpSpec | None = None,
    probe_cfg: ProbeConfig | None = None,
    ensure_endpoints: bool = True,
) -> list[SweepRow]:
    """Pretrain + probe for each (alpha, seed) cell of the grid.

    The grid always brackets the pure constituents: endpoints 0 and 1
    are appended when missing (disable with ensure_endpoints=False for
    targeted single-cell runs).  Final loss is the mean over the last
    pretrain epoch.
    """
    grid = sorted({float(a) for a in alpha_grid})
    if not grid:
        raise ValueError("alpha grid is empty")
    if any(not 0.0 <= a <= 1.0 for a in grid):
        raise ValueError(f"alpha grid must lie in [0, 1], got {grid}")
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    if ensure_endpoints:
        grid = sorted(set(grid) | {0.0, 1.0})
    rows = []
    for alpha in grid:
        for seed in seeds:
            loss_cfg = replace(base_cfg.loss, variant="combined", alpha=alpha)
            cfg = replace(base_cfg, loss=loss_cfg, seed=seed)
            ckpt = model_mod.pretrain(dataset, cfg, mlp_spec)
            last_epoch = ckpt.trace[-1].epoch if ckpt.trace else 0
            final = [r.loss for r in ckpt.trace if r.epoch == last_epoch]
            probe = model_mod.linear_probe(ckpt, dataset, probe_cfg)
            rows.append(SweepRow(alpha=alpha, seed=seed,
                                 probe_accuracy=probe.accuracy,
                                 final_loss=float(np.mean(final)) if final
                                 else float("nan")))
    return rows


# ---------------------------------------------------------------------------
# report writers
# ---------------------------------------------------------------------------


def write_spectrum_csv(reports: list[SpectrumReport], path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("descriptor,rank,eigenvalue\n")
        for rep in reports:
            for r, ev in enumerate(rep.eigenvalues):
                fh.write(f"{rep.descriptor},{r},{ev:.17g}\n")


def write_cosine_csv(report: CosineReport, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("anchor,tax_mean,reg_mean\n")
        for i, (t, r) in enumerate(zip(report.tax_means, report.reg_means)):
            ts = "" if np.isnan(t) else f"{t:.17g}"
            rs = "" if np.isnan(r) else f"{r:.17g}"
            fh.write(f"{i},{ts},{rs}\n")


def write_retrieval_csv(report: RetrievalReport, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("anchor,rank,neighbor,neighbor_tax,hit\n")
        for rec in report.records:
            for r, (j, t) in enumerate(zip(rec.neighbors, rec.neighbor_tax)):
                fh.write(f"{rec.anchor},{r},{j},{t},{int(t == rec.anchor_tax)}\n")


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("alpha,seed,probe_accuracy,final_loss\n")
        for row in rows:
            fh.write(f"{row.alpha:.17g},{row.seed},"
                     f"{row.probe_accuracy:.17g},{row.final_loss:.17g}\n")


def write_summary_json(summary: dict, path) -> None:
    def _default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.floating,)):
            return float(o)
        raise TypeError(f"not JSON serializable: {type(o)}")

    with open(path, "w", encoding="ascii") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2, default=_default)
        fh.write("\n")
