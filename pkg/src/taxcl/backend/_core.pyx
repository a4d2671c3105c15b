# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: pairwise dots, Jacobi sweeps, per-anchor
contrastive terms and RNG bulk fills.

Semantics mirror taxcl.backend.pure; the RNG fills are bit-identical
to the scalar Python algorithm, the numeric kernels agree to rounding
error (summation order differs from numpy's pairwise reductions).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log, sqrt

cdef extern from *:
    # GCC fuses adjacent sin(x)/cos(x) calls into glibc's sincos(), whose
    # results can differ from the separate calls by 1 ulp; that would break
    # bit-identity of the gaussian stream with the pure backend.  Routing
    # through volatile function pointers makes the callee opaque so the
    # fusion cannot happen.  (-fno-builtin-sincos does not stop it: the
    # flag only affects recognition of user calls, not the compiler's own
    # sincos lowering.)
    """
    #include <math.h>
    static double (*volatile taxcl_sin_ptr)(double) = sin;
    static double (*volatile taxcl_cos_ptr)(double) = cos;
    static double taxcl_sin(double x) { return taxcl_sin_ptr(x); }
    static double taxcl_cos(double x) { return taxcl_cos_ptr(x); }
    """
    double taxcl_sin(double x) nogil
    double taxcl_cos(double x) nogil

cnp.import_array()

NAME = "compiled"

Q_IDENTITY = 0
Q_IMPORTANCE = 1
Q_IMPORTANCE_DEBIASED = 2

ctypedef unsigned long long u64

cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 2.0 ** -53
cdef u64 GAMMA = 0x9E3779B97F4A7C15ULL


# ---------------------------------------------------------------------------
# pairwise dot products
# ---------------------------------------------------------------------------

def gram(double[:, ::1] Z not None):
    cdef Py_ssize_t M = Z.shape[0]
    cdef Py_ssize_t d = Z.shape[1]
    out = np.empty((M, M))
    cdef double[:, ::1] S = out
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(M):
        for j in range(i, M):
            acc = 0.0
            for k in range(d):
                acc += Z[i, k] * Z[j, k]
            S[i, j] = acc
            S[j, i] = acc
    return out


# ---------------------------------------------------------------------------
# cyclic Jacobi eigensolver
# ---------------------------------------------------------------------------

def jacobi_eigh(double[:, ::1] C not None, double tol_scale, int max_sweeps):
    cdef Py_ssize_t d = C.shape[0]
    A_arr = np.array(C, dtype=np.float64, copy=True)
    V_arr = np.eye(d)
    cdef double[:, ::1] A = A_arr
    cdef double[:, ::1] V = V_arr
    if d == 1:
        return np.array([A[0, 0]]), V_arr, 0

    cdef double fro = 0.0
    cdef Py_ssize_t p, q, k
    for p in range(d):
        for q in range(d):
            fro += A[p, q] * A[p, q]
    cdef double tol = tol_scale * sqrt(fro)

    cdef double off, apq, theta, sign, t, c, s, app, aqq, xp, xq
    cdef int sweep

    off = 0.0
    for p in range(d - 1):
        for q in range(p + 1, d):
            if fabs(A[p, q]) > off:
                off = fabs(A[p, q])
    if off <= tol:
        return np.diag(A_arr).copy(), V_arr, 0

    for sweep in range(1, max_sweeps + 1):
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                sign = 1.0 if theta >= 0.0 else -1.0
                t = sign / (fabs(theta) + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                app = A[p, p]
                aqq = A[q, q]
                for k in range(d):
                    xp = A[k, p]
                    xq = A[k, q]
                    A[k, p] = c * xp - s * xq
                    A[k, q] = s * xp + c * xq
                for k in range(d):
                    xp = A[p, k]
                    xq = A[q, k]
                    A[p, k] = c * xp - s * xq
                    A[q, k] = s * xp + c * xq
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for k in range(d):
                    xp = V[k, p]
                    xq = V[k, q]
                    V[k, p] = c * xp - s * xq
                    V[k, q] = s * xp + c * xq
        off = 0.0
        for p in range(d - 1):
            for q in range(p + 1, d):
                if fabs(A[p, q]) > off:
                    off = fabs(A[p, q])
        if off <= tol:
            return np.diag(A_arr).copy(), V_arr, sweep
    raise RuntimeError(
        f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
        f"(off-diagonal max {off:.3e}, tol {tol:.3e})"
    )


# ---------------------------------------------------------------------------
# per-anchor contrastive terms
# ---------------------------------------------------------------------------

def contrastive_terms(
    double[:, ::1] S not None,
    cnp.uint8_t[:, ::1] pos not None,
    cnp.uint8_t[:, ::1] tax not None,
    cnp.uint8_t[:, ::1] reg not None,
    double tau,
    double tau_plus,
    int q_mode,
    bint scale_with_batch,
):
    cdef Py_ssize_t M = S.shape[0]
    per_arr = np.full(M, np.nan)
    grad_arr = np.zeros((M, M))
    q_arr = np.full(M, np.nan)
    clamp_arr = np.zeros(M, dtype=np.uint8)
    ntax_arr = np.zeros(M, dtype=np.int64)
    valid_arr = np.zeros(M, dtype=np.uint8)

    cdef double[::1] per = per_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double[::1] qv = q_arr
    cdef cnp.uint8_t[::1] clamp = clamp_arr
    cdef cnp.int64_t[::1] ncnt = ntax_arr
    cdef cnp.uint8_t[::1] vflag = valid_arr

    w_arr = np.zeros(M)
    cdef double[::1] w = w_arr

    cdef Py_ssize_t i, a
    cdef bint peer
    cdef double m, logit, P1, Q1, Q2, UN, Pm, nt, scale, imp, G, G_raw, floor
    cdef double D, pos_logit_sum, inv_D, coef_pos, kt
    cdef long npos, ntax
    cdef bint clamped, has_tax

    for i in range(M):
        # per-anchor max logit over peers
        m = -1e308
        for a in range(M):
            if pos[i, a] or tax[i, a] or reg[i, a]:
                logit = S[i, a] / tau
                if logit > m:
                    m = logit

        npos = 0
        ntax = 0
        P1 = 0.0
        Q1 = 0.0
        Q2 = 0.0
        UN = 0.0
        pos_logit_sum = 0.0
        for a in range(M):
            peer = pos[i, a] or tax[i, a] or reg[i, a]
            if not peer:
                w[a] = 0.0
                continue
            w[a] = exp(S[i, a] / tau - m)
            if pos[i, a]:
                npos += 1
                P1 += w[a]
                pos_logit_sum += S[i, a] / tau - m
            elif tax[i, a]:
                ntax += 1
                Q1 += w[a]
                Q2 += w[a] * w[a]
            else:
                UN += w[a]

        ncnt[i] = ntax
        has_tax = ntax > 0
        nt = <double> ntax
        Pm = P1 / npos if npos > 0 else 0.0
        scale = <double> M if scale_with_batch else nt
        imp = nt * Q2 / Q1 if has_tax else 0.0

        clamped = False
        if q_mode == 0:
            G = Q1
        elif q_mode == 1:
            G = imp
        else:
            G = 0.0
            if has_tax:
                floor = nt * exp(-1.0 / tau - m)
                G_raw = (imp - scale * tau_plus * Pm) / (1.0 - tau_plus)
                clamped = G_raw < floor
                G = floor if clamped else G_raw

        D = P1 + G + UN
        if has_tax:
            qv[i] = G / Q1
        clamp[i] = 1 if clamped else 0
        if npos == 0:
            continue
        vflag[i] = 1
        per[i] = -pos_logit_sum / npos + log(D)

        inv_D = 1.0 / (D * tau) if D > 0.0 else 0.0
        coef_pos = 1.0
        if q_mode == 2 and has_tax and not clamped:
            coef_pos = 1.0 - scale * tau_plus / ((1.0 - tau_plus) * npos)
        for a in range(M):
            if pos[i, a]:
                grad[i, a] = w[a] * inv_D * coef_pos - 1.0 / (npos * tau)
            elif tax[i, a]:
                if q_mode == 0:
                    kt = 1.0
                elif clamped:
                    kt = 0.0
                else:
                    kt = nt * (2.0 * w[a] * Q1 - Q2) / (Q1 * Q1)
                    if q_mode == 2:
                        kt /= 1.0 - tau_plus
                grad[i, a] = w[a] * kt * inv_D
            elif reg[i, a]:
                grad[i, a] = w[a] * inv_D

    return per_arr, grad_arr, q_arr, clamp_arr.astype(bool), ntax_arr, valid_arr.astype(bool)


# ---------------------------------------------------------------------------
# RNG bulk fills
# ---------------------------------------------------------------------------

cdef inline u64 mix64(u64 z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def rng_fill_uniform(Py_ssize_t n, u64 state):
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(n):
        state = state + GAMMA
        out[i] = <double> (mix64(state) >> 11) * INV_2_53
    return out_arr, state


def rng_fill_gaussian(Py_ssize_t n, u64 state, bint has_spare, double spare):
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i = 0
    cdef double u1, u2, r
    if has_spare and n > 0:
        out[0] = spare
        has_spare = False
        i = 1
    while i < n:
        state = state + GAMMA
        u1 = <double> ((mix64(state) >> 11) + 1) * INV_2_53
        state = state + GAMMA
        u2 = <double> (mix64(state) >> 11) * INV_2_53
        r = sqrt(-2.0 * log(u1))
        out[i] = r * taxcl_cos(TWO_PI * u2)
        i += 1
        if i < n:
            out[i] = r * taxcl_sin(TWO_PI * u2)
            i += 1
        else:
            spare = r * taxcl_sin(TWO_PI * u2)
            has_spare = True
    return out_arr, state, has_spare, spare
