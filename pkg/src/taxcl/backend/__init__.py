"""Kernel backend selection.

The compiled extension (taxcl.backend._core) is preferred when it
imports; otherwise the numpy fallback in taxcl.backend.pure takes over.
Set TAXCL_BACKEND=pure or TAXCL_BACKEND=compiled to force a choice
(forcing "compiled" raises if the extension is missing).

Both backends export the same callables:

    gram(Z)
    jacobi_eigh(C, tol_scale, max_sweeps)
    contrastive_terms(S, pos, tax, reg, tau, tau_plus, q_mode, scale_with_batch)
    rng_fill_uniform(n, state)
    rng_fill_gaussian(n, state, has_spare, spare)

plus the q_mode codes Q_IDENTITY / Q_IMPORTANCE / Q_IMPORTANCE_DEBIASED.
"""

import os

from . import pure


def _select():
    choice = os.environ.get("TAXCL_BACKEND", "").strip().lower()
    if choice not in ("", "pure", "compiled"):
        raise ValueError(
            f"TAXCL_BACKEND must be 'pure' or 'compiled', got {choice!r}"
        )
    if choice == "pure":
        return pure
    try:
        from . import _core
    except ImportError:
        if choice == "compiled":
            raise ImportError(
                "TAXCL_BACKEND=compiled but taxcl.backend._core is not built; "
                "run `pip install -e . --no-build-isolation` or drop the override"
            ) from None
        return pure
    return _core


_impl = _select()

NAME = _impl.NAME
gram = _impl.gram
jacobi_eigh = _impl.jacobi_eigh
contrastive_terms = _impl.contrastive_terms
rng_fill_uniform = _impl.rng_fill_uniform
rng_fill_gaussian = _impl.rng_fill_gaussian

Q_IDENTITY = pure.Q_IDENTITY
Q_IMPORTANCE = pure.Q_IMPORTANCE
Q_IMPORTANCE_DEBIASED = pure.Q_IMPORTANCE_DEBIASED
