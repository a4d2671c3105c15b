"""The contrastive loss family with analytic gradients.

Five variants share one per-anchor denominator kernel:

  supcon       positives vs all other rows, no reweighting
  taxcl_sup    taxonomic negatives reweighted via the q-mode kernel
  taxcl_unsup  single view-pair positive, threshold-derived taxonomic set
  suphcl       the no-taxonomy ablation: reweighting over all negatives
  combined     (1 - alpha) * supcon + alpha * taxcl_sup

Gradients are exact for the embeddings treated as free vectors (the
model module owns the normalization chain), with a zero subgradient on
the clamp floor of the debiased q-mode.  ``finite_diff_check`` verifies
any variant against central differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import backend, numerics
from .batchdecomp import (
    Decomposition,
    LabeledBatch,
    decompose_supervised,
    decompose_unsupervised,
)

Q_MODES = ("identity", "importance", "importance_debiased")
VARIANTS = ("supcon", "taxcl_sup", "taxcl_unsup", "suphcl", "combined")
REDUCTIONS = ("mean", "sum")
DEBIAS_SCALES = ("tax_size", "batch_size")

_Q_CODE = {
    "identity": backend.Q_IDENTITY,
    "importance": backend.Q_IMPORTANCE,
    "importance_debiased": backend.Q_IMPORTANCE_DEBIASED,
}


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.2
    tau_plus: float = 0.1
    alpha: float = 0.5
    epsilon: float = 0.5
    q_mode: str = "importance_debiased"
    variant: str = "supcon"
    reduction: str = "mean"
    debias_scale: str = "tax_size"
    sim_norm: str = "minmax"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.tau_plus < 1.0:
            raise ValueError(f"tau_plus must be in [0, 1), got {self.tau_plus}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        for name, value, allowed in (
            ("q_mode", self.q_mode, Q_MODES),
            ("variant", self.variant, VARIANTS),
            ("reduction", self.reduction, REDUCTIONS),
            ("debias_scale", self.debias_scale, DEBIAS_SCALES),
            ("sim_norm", self.sim_norm, ("minmax", "affine")),
        ):
            if value not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {value!r}")


@dataclass
class LossResult:
    """Loss value, d(value)/d(embeddings) and per-anchor diagnostics."""

    value: float
    grad: np.ndarray
    per_anchor: np.ndarray
    q_values: np.ndarray
    clamp_flags: np.ndarray
    tax_sizes: np.ndarray
    skipped_anchors: list[int]
    n_valid: int
    variant: str
    reduction: str
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def _clean(arr):
            return [None if (isinstance(x, float) and math.isnan(x)) else x
                    for x in arr]

        payload = {
            "variant": self.variant,
            "value": self.value,
            "per_anchor": _clean([float(x) for x in self.per_anchor]),
            "q_values": _clean([float(x) for x in self.q_values]),
            "clamp_flags": [bool(x) for x in self.clamp_flags],
            "skipped_anchors": self.skipped_anchors,
            "n_valid": self.n_valid,
            "reduction": self.reduction,
        }
        payload.update({k: v for k, v in self.extras.items()})
        return json.dumps(payload, sort_keys=True)


def _run_kernel(batch: LabeledBatch, pos, tax, reg, cfg: LossConfig, variant: str):
    Z = batch.embeddings
    S = numerics.gram(Z)
    per, grad_s, q_vals, clamped, tax_sizes, valid = backend.contrastive_terms(
        S,
        np.ascontiguousarray(pos, dtype=np.uint8),
        np.ascontiguousarray(tax, dtype=np.uint8),
        np.ascontiguousarray(reg, dtype=np.uint8),
        cfg.tau,
        cfg.tau_plus,
        _Q_CODE[cfg.q_mode],
        cfg.debias_scale == "batch_size",
    )
    n_valid = int(np.asarray(valid, dtype=bool).sum())
    if n_valid == 0:
        raise ValueError("no valid anchors: every anchor has an empty positive set")
    valid = np.asarray(valid, dtype=bool)
    scale = 1.0 / n_valid if cfg.reduction == "mean" else 1.0
    value = float(per[valid].sum() * scale)
    grad = scale * ((grad_s + grad_s.T) @ Z)
    return LossResult(
        value=value,
        grad=grad,
        per_anchor=per,
        q_values=q_vals,
        clamp_flags=np.asarray(clamped, dtype=bool),
        tax_sizes=tax_sizes,
        skipped_anchors=[int(i) for i in np.flatnonzero(~valid)],
        n_valid=n_valid,
        variant=variant,
        reduction=cfg.reduction,
    )


def supcon(batch: LabeledBatch, decomp: Decomposition, cfg: LossConfig) -> LossResult:
    """Supervised contrastive loss: every non-anchor row sits in the
    denominator unweighted.

    Runs the shared kernel in identity mode over the same mask
    partition as the taxonomy-aware variant, so identity-mode
    reweighting reduces to this loss bit-for-bit, not just within
    rounding.
    """
    pos, tax, reg = decomp.masks()
    cfg_id = replace(cfg, q_mode="identity")
    return _run_kernel(batch, pos, tax, reg, cfg_id, "supcon")


def taxcl_supervised(
    batch: LabeledBatch, decomp: Decomposition, cfg: LossConfig
) -> LossResult:
    """Taxonomy-aware loss: the taxonomic-negative block of the
    denominator passes through the q-mode reweighting."""
    pos, tax, reg = decomp.masks()
    return _run_kernel(batch, pos, tax, reg, cfg, "taxcl_sup")


def suphcl(batch: LabeledBatch, decomp: Decomposition, cfg: LossConfig) -> LossResult:
    """Hardness baseline: identical machinery with every negative in the
    reweighted block (the no-taxonomy ablation)."""
    pos, tax, reg = decomp.masks()
    empty = np.zeros_like(pos)
    return _run_kernel(batch, pos, tax | reg, empty, cfg, "suphcl")


def taxcl_unsupervised(batch: LabeledBatch, cfg: LossConfig) -> LossResult:
    """Single-positive variant; the taxonomic set comes from the
    epsilon threshold on normalized anchor similarities."""
    decomp = decompose_unsupervised(batch, cfg.epsilon, cfg.sim_norm)
    pos, tax, reg = decomp.masks()
    res = _run_kernel(batch, pos, tax, reg, cfg, "taxcl_unsup")
    res.extras["degenerate_anchors"] = [
        int(i) for i in np.flatnonzero(decomp.degenerate_anchors)
    ]
    return res


def combined(batch: LabeledBatch, decomp: Decomposition, cfg: LossConfig) -> LossResult:
    """(1 - alpha) * supcon + alpha * taxcl_sup.

    The blend weights are applied as exact float multipliers, so alpha
    in {0.0, 1.0} reproduces the pure constituent bit-for-bit.
    """
    a = cfg.alpha
    base = supcon(batch, decomp, cfg)
    tax = taxcl_supervised(batch, decomp, cfg)
    res = LossResult(
        value=(1.0 - a) * base.value + a * tax.value,
        grad=(1.0 - a) * base.grad + a * tax.grad,
        per_anchor=(1.0 - a) * base.per_anchor + a * tax.per_anchor,
        q_values=tax.q_values,
        clamp_flags=tax.clamp_flags,
        tax_sizes=tax.tax_sizes,
        skipped_anchors=tax.skipped_anchors,
        n_valid=tax.n_valid,
        variant="combined",
        reduction=cfg.reduction,
        extras={"supcon_value": base.value, "taxcl_value": tax.value, "alpha": a},
    )
    return res


def evaluate(
    batch: LabeledBatch, cfg: LossConfig, decomp: Decomposition | None = None
) -> LossResult:
    """Dispatch on cfg.variant, deriving the decomposition when absent."""
    if cfg.variant == "taxcl_unsup":
        return taxcl_unsupervised(batch, cfg)
    if decomp is None:
        decomp = decompose_supervised(batch)
    if cfg.variant == "supcon":
        return supcon(batch, decomp, cfg)
    if cfg.variant == "taxcl_sup":
        return taxcl_supervised(batch, decomp, cfg)
    if cfg.variant == "suphcl":
        return suphcl(batch, decomp, cfg)
    if cfg.variant == "combined":
        return combined(batch, decomp, cfg)
    raise ValueError(f"unknown variant {cfg.variant!r}")


def tax_term(
    u_pos_mean: float, u_tax, cfg: LossConfig, batch_rows: int | None = None
) -> tuple[float, float, bool]:
    """Reweighted taxonomic-negative denominator block, in raw
    exponential units.

    Returns (term, q, clamped) with q = term / sum(u_tax), so the
    denominator can be written q * sum_t e^{s_it/tau}.  Callers handle
    the empty-set case (the block simply contributes zero).
    """
    u = np.asarray(u_tax, dtype=np.float64)
    if u.size == 0:
        raise ValueError("tax_term needs a nonempty exponential list")
    if (u <= 0).any():
        raise ValueError("exponential values must be positive")
    T = u.size
    total = float(u.sum())
    clamped = False
    if cfg.q_mode == "identity":
        term = total
    elif cfg.q_mode == "importance":
        term = T * float((u * u).sum()) / total
    else:
        imp = T * float((u * u).sum()) / total
        if cfg.debias_scale == "batch_size":
            if batch_rows is None:
                raise ValueError("debias_scale='batch_size' needs batch_rows")
            scale = float(batch_rows)
        else:
            scale = float(T)
        raw = (imp - scale * cfg.tau_plus * u_pos_mean) / (1.0 - cfg.tau_plus)
        floor = T * math.exp(-1.0 / cfg.tau)
        clamped = raw < floor
        term = max(raw, floor)
    return term, term / total, clamped


def finite_diff_check(
    variant: str,
    batch: LabeledBatch,
    cfg: LossConfig,
    h: float = 1e-5,
    grad_perturbation: float = 0.0,
) -> tuple[float, tuple[int, int]]:
    """Central-difference check of the analytic gradient at the raw
    embedding level.

    Every coordinate is perturbed by +-h with the loss re-evaluated
    from scratch (decompositions included).  Relative error metric:
    |a - b| / max(1, |a|, |b|).  Returns the worst error and its
    (row, col) coordinate.

    ``grad_perturbation`` offsets the analytic gradient before the
    comparison; it exists purely as a negative control (a nonzero value
    must make the check fail).
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"h must be in [1e-7, 1e-3], got {h}")
    cfg = replace(cfg, variant=variant)
    base = evaluate(batch, cfg)
    if grad_perturbation:
        base.grad = base.grad + grad_perturbation
    Z = batch.embeddings
    worst, coord = 0.0, (0, 0)
    for r in range(Z.shape[0]):
        for c in range(Z.shape[1]):
            vals = []
            for sign in (+1.0, -1.0):
                Zs = Z.copy()
                Zs[r, c] += sign * h
                shifted = LabeledBatch(Zs, batch.y_gt, batch.y_tax, batch.view_pair)
                vals.append(evaluate(shifted, cfg).value)
            fd = (vals[0] - vals[1]) / (2.0 * h)
            an = float(base.grad[r, c])
            rel = abs(fd - an) / max(1.0, abs(fd), abs(an))
            if rel > worst:
                worst, coord = rel, (r, c)
    return float(worst), coord
