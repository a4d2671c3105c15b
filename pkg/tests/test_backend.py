"""Parity between the compiled kernels and the pure-python fallback."""

import importlib

import numpy as np
import pytest

from conftest import random_batch, random_unit_rows
from taxcl import backend
from taxcl.backend import pure
from taxcl.batchdecomp import decompose_supervised
from taxcl.rng import SeededRng, derive_state

compiled = pytest.importorskip("taxcl.backend._core",
                               reason="compiled backend not built")

BACKENDS = [pure, compiled]


def _kernel_inputs(seed: int):
    batch = random_batch(seed, M=14, d=5)
    pos, tax, reg = decompose_supervised(batch).masks()
    S = pure.gram(batch.embeddings)
    return (S, np.ascontiguousarray(pos, np.uint8),
            np.ascontiguousarray(tax, np.uint8),
            np.ascontiguousarray(reg, np.uint8))


def test_selected_backend_is_exported():
    assert backend.NAME in ("pure", "compiled")
    for name in ("gram", "jacobi_eigh", "contrastive_terms",
                 "rng_fill_uniform", "rng_fill_gaussian"):
        assert hasattr(backend, name)


def test_env_override_selects_pure(monkeypatch):
    import taxcl.backend as b
    monkeypatch.setenv("TAXCL_BACKEND", "pure")
    reloaded = importlib.reload(b)
    try:
        assert reloaded.NAME == "pure"
    finally:
        monkeypatch.delenv("TAXCL_BACKEND")
        importlib.reload(b)


def test_env_override_rejects_unknown(monkeypatch):
    import taxcl.backend as b
    monkeypatch.setenv("TAXCL_BACKEND", "warp-drive")
    with pytest.raises(ValueError):
        importlib.reload(b)
    monkeypatch.delenv("TAXCL_BACKEND")
    importlib.reload(b)


def test_gram_parity():
    # pure uses BLAS matmul, compiled a scalar loop: same values up to
    # summation-order rounding, exactly symmetric either way
    Z = random_unit_rows(71, 20, 8)
    Sp = pure.gram(Z)
    Sc = np.asarray(compiled.gram(Z))
    assert np.abs(Sp - Sc).max() < 1e-14
    assert np.array_equal(Sp, Sp.T)
    assert np.array_equal(Sc, Sc.T)


def test_jacobi_parity_and_agreement():
    A = np.array(SeededRng(72).gaussians(10 * 10)).reshape(10, 10)
    C = (A + A.T) / 2.0
    vp, Vp, sp = pure.jacobi_eigh(C, 1e-12, 100)
    vc, Vc, sc = compiled.jacobi_eigh(C.copy(), 1e-12, 100)
    assert np.abs(np.sort(vp) - np.sort(np.asarray(vc))).max() < 1e-12
    assert sp == sc


@pytest.mark.parametrize("q_mode", [pure.Q_IDENTITY, pure.Q_IMPORTANCE,
                                    pure.Q_IMPORTANCE_DEBIASED])
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_contrastive_terms_parity(q_mode, seed):
    S, pos, tax, reg = _kernel_inputs(seed)
    outs = []
    for be in BACKENDS:
        per, grad, q, clamped, ntax, valid = be.contrastive_terms(
            S, pos, tax, reg, 0.2, 0.1, q_mode, False)
        outs.append((np.asarray(per), np.asarray(grad), np.asarray(q),
                     np.asarray(clamped), np.asarray(ntax), np.asarray(valid)))
    (per_p, grad_p, q_p, cl_p, nt_p, va_p), (per_c, grad_c, q_c, cl_c, nt_c, va_c) = outs
    assert np.array_equal(va_p, va_c.astype(bool))
    assert np.array_equal(nt_p, nt_c)
    assert np.array_equal(cl_p, cl_c.astype(bool))
    ok = va_p
    assert np.abs(per_p[ok] - per_c[ok]).max() < 5e-15
    assert np.abs(grad_p - grad_c).max() < 5e-15
    has_q = ~np.isnan(q_p)
    assert np.array_equal(has_q, ~np.isnan(q_c))
    if has_q.any():
        assert np.abs(q_p[has_q] - q_c[has_q]).max() < 5e-15


def test_rng_fill_bit_identity():
    state = derive_state(99, 0)
    up, sp = pure.rng_fill_uniform(257, state)
    uc, sc = compiled.rng_fill_uniform(257, state)
    assert list(up) == list(np.asarray(uc))
    assert sp == sc
    gp = pure.rng_fill_gaussian(123, state, False, 0.0)
    gc = compiled.rng_fill_gaussian(123, state, False, 0.0)
    assert list(gp[0]) == list(np.asarray(gc[0]))
    assert gp[1:] == tuple(gc[1:])


def test_rng_object_matches_fills_across_backends():
    a = SeededRng(5)
    vals = a.gaussians(64)
    b = SeededRng(5)
    singles = [b.next_gaussian() for _ in range(64)]
    assert list(vals) == singles
