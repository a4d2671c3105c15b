"""Dense linear algebra for the workbench: pairwise dot products,
covariance, a symmetric eigensolver and matrix serialization.

Matrices are plain float64 C-order numpy arrays.  Everything here is a
pure function of its inputs and safe to call concurrently.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import backend

JACOBI_TOL_SCALE = 1e-12  # off-diagonal max vs ||C||_F at convergence
JACOBI_MAX_SWEEPS = 100
SYMMETRY_RTOL = 1e-10
ZERO_ROW_TOL = 1e-12

MATRIX_MAGIC = b"TXCL"


def as_matrix(X, name: str = "matrix") -> np.ndarray:
    """Validate and coerce to a finite float64 2-D array."""
    M = np.ascontiguousarray(X, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.isfinite(M).all():
        bad = np.argwhere(~np.isfinite(M))[0]
        raise ValueError(f"{name} has non-finite entry at {tuple(bad)}")
    return M


def gram(Z) -> np.ndarray:
    """Pairwise dot products S[i, j] = z_i . z_j (exactly symmetric)."""
    Z = as_matrix(Z, "embedding matrix")
    if Z.shape[0] < 2:
        raise ValueError(f"gram needs at least 2 rows, got {Z.shape[0]}")
    return backend.gram(Z)


def covariance(R, centered: bool = False) -> np.ndarray:
    """C = (1/n) sum_k r_k r_k^T, optionally after removing column means.

    Uncentered is the default: the spectra consumers compare second
    moments of row subsets, not variances.
    """
    R = as_matrix(R, "representation matrix")
    n = R.shape[0]
    if n == 0:
        raise ValueError("covariance of an empty matrix")
    if centered:
        R = R - R.mean(axis=0, keepdims=True)
    C = R.T @ R / n
    upper = np.triu(C)
    return upper + np.triu(C, 1).T


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues sorted descending with matching orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def sym_eig(C) -> EigenDecomposition:
    """Full eigendecomposition of a symmetric matrix via cyclic Jacobi.

    Rejects asymmetric input (relative max-norm check) and raises
    RuntimeError if 100 sweeps do not reach the off-diagonal tolerance.
    """
    C = as_matrix(C, "symmetric matrix")
    if C.shape[0] != C.shape[1]:
        raise ValueError(f"sym_eig needs a square matrix, got {C.shape}")
    scale = np.abs(C).max()
    asym = np.abs(C - C.T).max()
    if asym > SYMMETRY_RTOL * max(scale, 1e-300):
        raise ValueError(
            f"matrix is not symmetric: max |C - C^T| = {asym:.3e} "
            f"exceeds {SYMMETRY_RTOL:.0e} * max|C|"
        )
    C = (C + C.T) / 2.0  # exact symmetry for the sweeps
    vals, vecs, sweeps = backend.jacobi_eigh(C, JACOBI_TOL_SCALE, JACOBI_MAX_SWEEPS)
    order = np.argsort(-vals, kind="stable")
    return EigenDecomposition(vals[order], np.ascontiguousarray(vecs[:, order]), sweeps)


def l2_normalize_rows(Z) -> tuple[np.ndarray, np.ndarray]:
    """Scale each row to unit norm.  Rows with norm < 1e-12 are left
    untouched and flagged in the returned boolean vector."""
    Z = as_matrix(Z, "matrix")
    norms = np.sqrt((Z * Z).sum(axis=1, keepdims=True))
    degenerate = norms[:, 0] < ZERO_ROW_TOL
    safe = np.where(degenerate[:, None], 1.0, norms)
    return Z / safe, degenerate


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_matrix_csv(M, path) -> None:
    M = as_matrix(M)
    with open(path, "w", encoding="ascii") as fh:
        for row in M:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad float: {exc}") from None
            if len(rows[-1]) != len(rows[0]):
                raise ValueError(f"{path}:{lineno}: ragged row")
    if not rows:
        raise ValueError(f"{path}: empty matrix file")
    return np.array(rows, dtype=np.float64)


def save_matrix_binary(M, fh) -> None:
    """Magic "TXCL", u32 rows, u32 cols, then little-endian f64 row-major."""
    M = as_matrix(M)
    fh.write(MATRIX_MAGIC)
    fh.write(struct.pack("<II", M.shape[0], M.shape[1]))
    fh.write(M.astype("<f8", copy=False).tobytes(order="C"))


def load_matrix_binary(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != MATRIX_MAGIC:
        raise ValueError(f"bad matrix magic {magic!r}, expected {MATRIX_MAGIC!r}")
    rows, cols = struct.unpack("<II", fh.read(8))
    buf = fh.read(rows * cols * 8)
    if len(buf) != rows * cols * 8:
        raise ValueError("truncated matrix payload")
    return np.frombuffer(buf, dtype="<f8").reshape(rows, cols).astype(np.float64)
