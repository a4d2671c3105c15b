"""Pure-Python/numpy implementations of the hot kernels.

This is the fallback used when the compiled extension is unavailable,
and the semantic reference the extension is tested against.  The RNG
fills replicate the scalar algorithm of :mod:`taxcl.rng` call-for-call
(bit-identical stream); the numeric kernels agree with the compiled
ones to rounding error.
"""

from __future__ import annotations

import math

import numpy as np

from ..rng import _GAMMA, _INV_2_53, _MASK64, _TWO_PI, _mix64

NAME = "pure"

# q_mode codes shared with the compiled kernel
Q_IDENTITY = 0
Q_IMPORTANCE = 1
Q_IMPORTANCE_DEBIASED = 2


# ---------------------------------------------------------------------------
# pairwise dot products
# ---------------------------------------------------------------------------


def gram(Z: np.ndarray) -> np.ndarray:
    """S[i, j] = z_i . z_j, computed once per pair and mirrored so the
    result is exactly symmetric."""
    S = Z @ Z.T
    upper = np.triu(S)
    return upper + np.triu(S, 1).T


# ---------------------------------------------------------------------------
# cyclic Jacobi eigensolver
# ---------------------------------------------------------------------------


def jacobi_eigh(C: np.ndarray, tol_scale: float, max_sweeps: int):
    """Eigenvalues/vectors of a symmetric matrix by cyclic Jacobi sweeps.

    Sweeps run until the largest off-diagonal magnitude drops below
    ``tol_scale * ||C||_F``.  Returns (eigenvalues, eigenvectors, sweeps)
    unsorted; raises RuntimeError when max_sweeps is exhausted.
    """
    d = C.shape[0]
    A = np.array(C, dtype=np.float64, copy=True)
    V = np.eye(d)
    if d == 1:
        return np.array([A[0, 0]]), V, 0
    fro = math.sqrt(float((A * A).sum()))
    tol = tol_scale * fro
    iu = np.triu_indices(d, 1)

    def off_max() -> float:
        return float(np.abs(A[iu]).max())

    if off_max() <= tol:
        return np.diag(A).copy(), V, 0

    for sweep in range(1, max_sweeps + 1):
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                sign = 1.0 if theta >= 0.0 else -1.0
                t = sign / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                app, aqq = A[p, p], A[q, q]
                colp = A[:, p].copy()
                colq = A[:, q].copy()
                A[:, p] = c * colp - s * colq
                A[:, q] = s * colp + c * colq
                rowp = A[p, :].copy()
                rowq = A[q, :].copy()
                A[p, :] = c * rowp - s * rowq
                A[q, :] = s * rowp + c * rowq
                # closed forms avoid the cancellation of the two-step update
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
        if off_max() <= tol:
            return np.diag(A).copy(), V, sweep
    raise RuntimeError(
        f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
        f"(off-diagonal max {off_max():.3e}, tol {tol:.3e})"
    )


# ---------------------------------------------------------------------------
# per-anchor contrastive terms
# ---------------------------------------------------------------------------


def contrastive_terms(
    S: np.ndarray,
    pos: np.ndarray,
    tax: np.ndarray,
    reg: np.ndarray,
    tau: float,
    tau_plus: float,
    q_mode: int,
    scale_with_batch: bool,
):
    """Per-anchor loss terms and d(term)/dS for the shared loss family.

    Row i of the boolean masks flags anchor i's positives, reweighted
    (taxonomic) negatives and plain negatives.  The denominator is

        D(i) = sum_P e^{s/tau} + G(i) + sum_N e^{s/tau}

    where G(i) reweights the taxonomic block according to q_mode:
    identity keeps the plain sum, importance weights each exponential
    by itself over the block mean, and the debiased mode additionally
    subtracts the tau_plus-scaled positive mean and clamps at the
    per-element floor |T| * e^{-1/tau}.  All exponentials are shifted
    by the per-anchor max (the shift cancels everywhere, including the
    clamp comparison).

    Returns (per_anchor, grad_s, q_vals, clamped, tax_count, valid).
    Anchors without positives are invalid: NaN term, zero gradient row.
    """
    M = S.shape[0]
    pos = pos.astype(bool)
    tax = tax.astype(bool)
    reg = reg.astype(bool)
    peers = pos | tax | reg

    logits = np.where(peers, S / tau, -np.inf)
    m = logits.max(axis=1, keepdims=True)  # finite: every anchor has >= 1 peer
    W = np.exp(logits - m)  # exp(-inf) == 0 off-peers, no overflow
    W[~peers] = 0.0

    npos = pos.sum(axis=1)
    ntax = tax.sum(axis=1)
    valid = npos > 0
    safe_npos = np.maximum(npos, 1)

    P1 = (W * pos).sum(axis=1)
    Q1 = (W * tax).sum(axis=1)
    Q2 = (W * W * tax).sum(axis=1)
    UN = (W * reg).sum(axis=1)
    Pm = P1 / safe_npos

    nt = ntax.astype(np.float64)
    scale = np.full(M, float(M)) if scale_with_batch else nt
    has_tax = ntax > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        imp = np.where(has_tax, nt * Q2 / np.where(has_tax, Q1, 1.0), 0.0)

    clamped = np.zeros(M, dtype=bool)
    if q_mode == Q_IDENTITY:
        G = Q1
    elif q_mode == Q_IMPORTANCE:
        G = imp
    elif q_mode == Q_IMPORTANCE_DEBIASED:
        floor = nt * np.exp((-1.0 - m[:, 0] * tau) / tau)
        G_raw = (imp - scale * tau_plus * Pm) / (1.0 - tau_plus)
        clamped = has_tax & (G_raw < floor)
        G = np.where(has_tax, np.maximum(G_raw, floor), 0.0)
    else:
        raise ValueError(f"unknown q_mode code {q_mode}")

    D = P1 + G + UN
    shifted = np.where(pos, S / tau - m, 0.0)
    mean_pos_logit = shifted.sum(axis=1) / safe_npos
    with np.errstate(divide="ignore", invalid="ignore"):
        per_anchor = np.where(valid, -mean_pos_logit + np.log(D), np.nan)
        q_vals = np.where(has_tax, G / np.where(has_tax, Q1, 1.0), np.nan)

    # gradient w.r.t. the gram entries, row i = anchor i
    inv_D = np.where(valid & (D > 0), 1.0 / (D * tau), 0.0)
    coef_pos = np.ones(M)
    if q_mode == Q_IMPORTANCE_DEBIASED:
        active = has_tax & ~clamped
        coef_pos = np.where(
            active, 1.0 - scale * tau_plus / ((1.0 - tau_plus) * safe_npos), 1.0
        )
    if q_mode == Q_IDENTITY:
        ktax = np.ones((M, M))
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            Q1s = np.where(has_tax, Q1, 1.0)
            ktax = nt[:, None] * (2.0 * W * Q1s[:, None] - Q2[:, None]) / (
                Q1s[:, None] ** 2
            )
        if q_mode == Q_IMPORTANCE_DEBIASED:
            ktax = ktax / (1.0 - tau_plus)
            ktax[clamped] = 0.0

    grad = (
        pos * W * (inv_D * coef_pos)[:, None]
        + tax * W * ktax * inv_D[:, None]
        + reg * W * inv_D[:, None]
    )
    grad -= pos * (valid / (safe_npos * tau))[:, None]
    grad[~valid] = 0.0

    return per_anchor, grad, q_vals, clamped, ntax.astype(np.int64), valid


# ---------------------------------------------------------------------------
# RNG bulk fills (scalar loop: stream-compatible with taxcl.rng)
# ---------------------------------------------------------------------------


def rng_fill_uniform(n: int, state: int):
    out = np.empty(n)
    for i in range(n):
        state = (state + _GAMMA) & _MASK64
        out[i] = (_mix64(state) >> 11) * _INV_2_53
    return out, state


def rng_fill_gaussian(n: int, state: int, has_spare: bool, spare: float):
    out = np.empty(n)
    i = 0
    if has_spare and n > 0:
        out[0] = spare
        has_spare = False
        i = 1
    while i < n:
        state = (state + _GAMMA) & _MASK64
        u1 = ((_mix64(state) >> 11) + 1) * _INV_2_53
        state = (state + _GAMMA) & _MASK64
        u2 = (_mix64(state) >> 11) * _INV_2_53
        r = math.sqrt(-2.0 * math.log(u1))
        out[i] = r * math.cos(_TWO_PI * u2)
        i += 1
        if i < n:
            out[i] = r * math.sin(_TWO_PI * u2)
            i += 1
        else:
            spare = r * math.sin(_TWO_PI * u2)
            has_spare = True
    return out, state, has_spare, spare
