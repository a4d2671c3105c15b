import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from taxcl.batchdecomp import LabeledBatch
from taxcl.rng import SeededRng


def random_unit_rows(seed: int, M: int, d: int) -> np.ndarray:
    rng = SeededRng(seed)
    Z = np.array(rng.gaussians(M * d)).reshape(M, d)
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


def random_batch(seed: int, M: int = 12, d: int = 6, n_classes: int = 4,
                 n_tax: int = 2, with_views: bool = False) -> LabeledBatch:
    """Random unit batch with labels drawn so positives usually exist."""
    rng = SeededRng(seed)
    Z = random_unit_rows(seed * 7919 + 13, M, d)
    y_gt = np.array([rng.randint_below(n_classes) for _ in range(M)])
    y_tax = np.array([int(y) % n_tax for y in y_gt])
    view_pair = None
    if with_views:
        if M % 2:
            raise ValueError("views need even M")
        view_pair = np.arange(M) ^ 1
        y_gt = np.repeat(y_gt[: M // 2], 2)
        y_tax = np.repeat(y_tax[: M // 2], 2)
    return LabeledBatch(Z, y_gt, y_tax, view_pair)


def paired_label_batch(seed: int, pairs: int, d: int, n_tax: int = 2) -> LabeledBatch:
    """Every class appears exactly twice, so all anchors are valid."""
    Z = random_unit_rows(seed, 2 * pairs, d)
    y_gt = np.repeat(np.arange(pairs), 2)
    y_tax = y_gt % n_tax
    return LabeledBatch(Z, y_gt, y_tax)


@pytest.fixture
def small_batch() -> LabeledBatch:
    return paired_label_batch(101, pairs=6, d=6, n_tax=2)
