import io

import numpy as np
import pytest

from conftest import random_unit_rows
from taxcl import numerics
from taxcl.rng import SeededRng


def random_symmetric(seed: int, n: int) -> np.ndarray:
    A = np.array(SeededRng(seed).gaussians(n * n)).reshape(n, n)
    return (A + A.T) / 2.0


# -- gram ---------------------------------------------------------------


def test_gram_orthonormal_identity():
    assert np.array_equal(numerics.gram(np.eye(2)), np.eye(2))


def test_gram_duplicate_rows():
    Z = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert np.array_equal(numerics.gram(Z), np.ones((2, 2)))


def test_gram_matches_double_loop():
    Z = random_unit_rows(21, 5, 3)
    S = numerics.gram(Z)
    for i in range(5):
        for j in range(5):
            want = sum(Z[i, k] * Z[j, k] for k in range(3))
            assert abs(S[i, j] - want) < 1e-14


def test_gram_exactly_symmetric():
    S = numerics.gram(random_unit_rows(22, 17, 9))
    assert np.array_equal(S, S.T)


def test_gram_unit_rows_bounded():
    S = numerics.gram(random_unit_rows(23, 10, 4))
    assert np.abs(S).max() <= 1.0 + 1e-12


def test_gram_rejects_bad_input():
    with pytest.raises(ValueError):
        numerics.gram(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        numerics.gram(np.ones((1, 3)))


# -- covariance ---------------------------------------------------------


def test_covariance_orthonormal_rows():
    C = numerics.covariance(np.eye(2))
    assert np.allclose(C, 0.5 * np.eye(2), atol=0)


def test_covariance_single_row():
    C = numerics.covariance(np.array([[2.0, 0.0]]))
    assert np.array_equal(C, np.array([[4.0, 0.0], [0.0, 0.0]]))


def test_covariance_matches_triple_loop():
    R = np.array(SeededRng(31).gaussians(20 * 4)).reshape(20, 4)
    C = numerics.covariance(R)
    for a in range(4):
        for b in range(4):
            want = sum(R[k, a] * R[k, b] for k in range(20)) / 20.0
            assert abs(C[a, b] - want) < 1e-12


def test_covariance_centered_removes_mean():
    R = np.array(SeededRng(32).gaussians(30 * 3)).reshape(30, 3) + 5.0
    C = numerics.covariance(R, centered=True)
    Rc = R - R.mean(axis=0)
    assert np.allclose(C, Rc.T @ Rc / 30.0, atol=1e-12)


def test_covariance_psd():
    R = np.array(SeededRng(33).gaussians(12 * 6)).reshape(12, 6)
    ev = numerics.sym_eig(numerics.covariance(R)).eigenvalues
    assert ev.min() >= -1e-9 * ev.max()


def test_covariance_rank_bound():
    R = np.array(SeededRng(34).gaussians(3 * 8)).reshape(3, 8)
    ev = numerics.sym_eig(numerics.covariance(R)).eigenvalues
    assert (ev[3:] <= 1e-9 * ev[0]).all()


def test_covariance_empty_errors():
    with pytest.raises(ValueError):
        numerics.covariance(np.zeros((0, 3)))


# -- sym_eig ------------------------------------------------------------


def test_sym_eig_diagonal():
    dec = numerics.sym_eig(np.diag([2.0, 3.0]))
    assert np.allclose(dec.eigenvalues, [3.0, 2.0], atol=0)


def test_sym_eig_hand_case():
    dec = numerics.sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert abs(dec.eigenvalues[0] - 3.0) < 1e-12
    assert abs(dec.eigenvalues[1] - 1.0) < 1e-12


def test_sym_eig_trace_identity_psd():
    A = np.array(SeededRng(41).gaussians(8 * 8)).reshape(8, 8)
    C = A.T @ A
    dec = numerics.sym_eig(C)
    assert abs(dec.eigenvalues.sum() - np.trace(C)) <= 1e-9 * abs(np.trace(C))


@pytest.mark.parametrize("n", [2, 5, 16, 33, 64])
def test_sym_eig_reconstruction_random(n):
    C = random_symmetric(1000 + n, n)
    dec = numerics.sym_eig(C)
    recon = dec.reconstruct()
    scale = np.abs(C).max()
    assert np.abs(recon - C).max() <= 1e-9 * scale
    # orthonormal eigenvectors
    V = dec.eigenvectors
    assert np.abs(V.T @ V - np.eye(n)).max() < 1e-9
    # descending order
    assert (np.diff(dec.eigenvalues) <= 1e-15).all()


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(ValueError):
        numerics.sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        numerics.sym_eig(np.ones((2, 3)))


def test_sym_eig_agrees_with_numpy():
    C = random_symmetric(47, 12)
    ours = numerics.sym_eig(C).eigenvalues
    ref = np.sort(np.linalg.eigvalsh(C))[::-1]
    assert np.abs(ours - ref).max() < 1e-9


# -- normalize ----------------------------------------------------------


def test_l2_normalize_345():
    out, flags = numerics.l2_normalize_rows(np.array([[3.0, 4.0]]))
    assert np.allclose(out, [[0.6, 0.8]], atol=1e-15)
    assert not flags.any()


def test_l2_normalize_zero_row_flagged():
    out, flags = numerics.l2_normalize_rows(np.array([[0.0, 0.0], [1.0, 0.0]]))
    assert np.array_equal(out[0], [0.0, 0.0])
    assert flags.tolist() == [True, False]


def test_l2_normalize_unit_norms():
    out, _ = numerics.l2_normalize_rows(
        np.array(SeededRng(51).gaussians(40)).reshape(8, 5))
    assert np.abs(np.linalg.norm(out, axis=1) - 1.0).max() < 1e-12


# -- serialization ------------------------------------------------------


def test_matrix_csv_round_trip(tmp_path):
    M = np.array(SeededRng(61).gaussians(12)).reshape(3, 4)
    path = tmp_path / "m.csv"
    numerics.save_matrix_csv(M, path)
    assert np.array_equal(numerics.load_matrix_csv(path), M)


def test_matrix_csv_bad_float_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1.0,2.0\n1.0,oops\n")
    with pytest.raises(ValueError, match=":2"):
        numerics.load_matrix_csv(path)


def test_matrix_binary_round_trip():
    M = np.array(SeededRng(62).gaussians(15)).reshape(5, 3)
    buf = io.BytesIO()
    numerics.save_matrix_binary(M, buf)
    buf.seek(0)
    assert np.array_equal(numerics.load_matrix_binary(buf), M)


def test_matrix_binary_magic_checked():
    buf = io.BytesIO(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        numerics.load_matrix_binary(buf)
