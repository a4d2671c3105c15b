"""Independent naive reimplementations of the loss family.

Everything here is deliberately written the slow way — python floats,
double loops, raw (unshifted) exponentials, no shared code with the
package — so tests compare two implementations that can only agree if
both are right.
"""

from __future__ import annotations

import math

import numpy as np


def scalar_decompose(y_gt, y_tax):
    M = len(y_gt)
    pos, tax, reg = [], [], []
    for i in range(M):
        P = [a for a in range(M) if a != i and y_gt[a] == y_gt[i]]
        T = [a for a in range(M) if a != i and y_gt[a] != y_gt[i]
             and y_tax[a] == y_tax[i]]
        N = [a for a in range(M) if a != i and y_gt[a] != y_gt[i]
             and y_tax[a] != y_tax[i]]
        pos.append(P)
        tax.append(T)
        reg.append(N)
    return pos, tax, reg


def scalar_unsup_decompose(Z, view_pair, epsilon):
    M = Z.shape[0]
    pos, tax, reg = [], [], []
    for i in range(M):
        j = int(view_pair[i])
        cands = [a for a in range(M) if a not in (i, j)]
        pos.append([j])
        if not cands:
            tax.append([])
            reg.append([])
            continue
        sims = [float(np.dot(Z[i], Z[a])) for a in cands]
        lo, hi = min(sims), max(sims)
        if hi - lo < 1e-12:
            khat = [0.0] * len(sims)
        else:
            khat = [(s - lo) / (hi - lo) for s in sims]
        T = [a for a, k in zip(cands, khat) if k > epsilon]
        N = [a for a in cands if a not in T]
        tax.append(T)
        reg.append(N)
    return pos, tax, reg


def scalar_tax_term(u_pos_mean, u_tax, tau, tau_plus, q_mode, scale):
    T = len(u_tax)
    total = sum(u_tax)
    if q_mode == "identity":
        return total, False
    imp = T * sum(u * u for u in u_tax) / total
    if q_mode == "importance":
        return imp, False
    raw = (imp - scale * tau_plus * u_pos_mean) / (1.0 - tau_plus)
    floor = T * math.exp(-1.0 / tau)
    if raw < floor:
        return floor, True
    return raw, False


def scalar_loss(Z, pos, tax, reg, tau, tau_plus, q_mode,
                scale_with_batch=False, reduction="mean"):
    """Per-anchor terms and total via raw python arithmetic."""
    M = Z.shape[0]
    per = [float("nan")] * M
    valid = []
    for i in range(M):
        if not pos[i]:
            continue
        u = {a: math.exp(float(np.dot(Z[i], Z[a])) / tau) for a in range(M)}
        u_pos = [u[p] for p in pos[i]]
        u_pos_mean = sum(u_pos) / len(u_pos)
        if tax[i]:
            scale = M if scale_with_batch else len(tax[i])
            G, _ = scalar_tax_term(u_pos_mean, [u[t] for t in tax[i]],
                                   tau, tau_plus, q_mode, scale)
        else:
            G = 0.0
        D = sum(u_pos) + G + sum(u[n] for n in reg[i])
        term = -sum(math.log(u[p] / D) for p in pos[i]) / len(pos[i])
        per[i] = term
        valid.append(term)
    if not valid:
        raise ValueError("oracle: no valid anchors")
    total = sum(valid)
    return (total / len(valid) if reduction == "mean" else total), per


def scalar_variant(Z, y_gt, y_tax, variant, tau, tau_plus, q_mode,
                   alpha=0.5, epsilon=0.5, view_pair=None,
                   scale_with_batch=False, reduction="mean"):
    """Dispatch mirroring the package's variant semantics."""
    if variant == "taxcl_unsup":
        pos, tax, reg = scalar_unsup_decompose(Z, view_pair, epsilon)
        return scalar_loss(Z, pos, tax, reg, tau, tau_plus, q_mode,
                           scale_with_batch, reduction)
    pos, tax, reg = scalar_decompose(y_gt, y_tax)
    if variant == "supcon":
        return scalar_loss(Z, pos, tax, reg, tau, tau_plus, "identity",
                           scale_with_batch, reduction)
    if variant == "taxcl_sup":
        return scalar_loss(Z, pos, tax, reg, tau, tau_plus, q_mode,
                           scale_with_batch, reduction)
    if variant == "suphcl":
        merged = [sorted(t + n) for t, n in zip(tax, reg)]
        empty = [[] for _ in range(Z.shape[0])]
        return scalar_loss(Z, pos, merged, empty, tau, tau_plus, q_mode,
                           scale_with_batch, reduction)
    if variant == "combined":
        v_sup, p_sup = scalar_loss(Z, pos, tax, reg, tau, tau_plus,
                                   "identity", scale_with_batch, reduction)
        v_tax, p_tax = scalar_loss(Z, pos, tax, reg, tau, tau_plus, q_mode,
                                   scale_with_batch, reduction)
        per = [(1.0 - alpha) * a + alpha * b for a, b in zip(p_sup, p_tax)]
        return (1.0 - alpha) * v_sup + alpha * v_tax, per
    raise ValueError(variant)
