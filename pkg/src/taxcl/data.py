"""Synthetic hierarchical-taxonomy datasets, CSV ingestion, feature
augmentation and two-view batch sampling.

The generative model is a three-level Gaussian hierarchy: superclass
centers, subclass centers around them, and samples around those.  The
dispersion ordering sigma_super > sigma_sub > sigma_noise controls how
separable the taxonomy is.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .batchdecomp import LabeledBatch
from .rng import SeededRng

CSV_SPLITS = ("train", "test")
DEFAULT_KEEP_PROB = 0.9


@dataclass(frozen=True)
class GenSpec:
    """Parameters of the synthetic taxonomy generator."""

    S: int = 4
    C: int = 5
    n_per_class: int = 50
    d: int = 16
    sigma_super: float = 5.0
    sigma_sub: float = 1.0
    sigma_noise: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("S", "C", "n_per_class", "d"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.sigma_super > self.sigma_sub > self.sigma_noise > 0:
            warnings.warn(
                "dispersions should satisfy sigma_super > sigma_sub > "
                f"sigma_noise > 0, got ({self.sigma_super}, {self.sigma_sub}, "
                f"{self.sigma_noise}); taxonomy structure may collapse",
                stacklevel=2,
            )


@dataclass
class TaxonomyDataset:
    """Feature matrix with two-level labels and a train/test split.

    ``noise_scale`` carries the generator's sigma_noise so augmentation
    can jitter at the dataset's own scale; loaded datasets default it
    to 1.0.
    """

    X: np.ndarray
    y_gt: np.ndarray
    y_tax: np.ndarray
    split: np.ndarray
    noise_scale: float = 1.0
    gen_spec: GenSpec | None = field(default=None, compare=False)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y_gt = np.ascontiguousarray(self.y_gt, dtype=np.int64)
        self.y_tax = np.ascontiguousarray(self.y_tax, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=object)
        n = self.X.shape[0]
        if self.X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {self.X.shape}")
        for name, arr in (("y_gt", self.y_gt), ("y_tax", self.y_tax),
                          ("split", self.split)):
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
        if (self.y_gt < 0).any() or (self.y_tax < 0).any():
            raise ValueError("labels must be non-negative")
        bad = set(self.split) - set(CSV_SPLITS)
        if bad:
            raise ValueError(f"unknown split tags {sorted(bad)}; expected {CSV_SPLITS}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def train_indices(self) -> np.ndarray:
        return np.flatnonzero(self.split == "train")

    @property
    def test_indices(self) -> np.ndarray:
        return np.flatnonzero(self.split == "test")

    def subset(self, indices) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.int64)
        return self.X[idx], self.y_gt[idx], self.y_tax[idx]


def generate(spec: GenSpec) -> TaxonomyDataset:
    """Sample the three-level Gaussian hierarchy.

    Superclass centers ~ N(0, sigma_super^2 I), subclass centers around
    them at sigma_sub, rows around those at sigma_noise.  Rows are laid
    out class-major with y_gt = s * C + c; within each class the last
    fifth of the rows is tagged test (stratified 80/20).
    """
    rng = SeededRng(spec.seed)
    S, C, n, d = spec.S, spec.C, spec.n_per_class, spec.d
    n_test = n // 5

    def draw(count, center, sigma):
        g = np.array(rng.gaussians(count * d)).reshape(count, d)
        return center + sigma * g

    super_centers = draw(S, np.zeros(d), spec.sigma_super)
    rows, y_gt, y_tax, split = [], [], [], []
    for s in range(S):
        sub_centers = draw(C, super_centers[s], spec.sigma_sub)
        for c in range(C):
            samples = draw(n, sub_centers[c], spec.sigma_noise)
            rows.append(samples)
            y_gt.extend([s * C + c] * n)
            y_tax.extend([s] * n)
            split.extend(["train"] * (n - n_test) + ["test"] * n_test)
    return TaxonomyDataset(
        X=np.vstack(rows),
        y_gt=np.array(y_gt),
        y_tax=np.array(y_tax),
        split=np.array(split, dtype=object),
        noise_scale=spec.sigma_noise,
        gen_spec=spec,
    )


def augment(
    x,
    strength: float,
    rng: SeededRng,
    noise_scale: float = 1.0,
    keep_prob: float = DEFAULT_KEEP_PROB,
) -> np.ndarray:
    """Jitter-plus-dropout feature augmentation.

    x' = m * (x + strength * noise_scale * g), with g standard Gaussian
    and m a Bernoulli(keep_prob) mask.  Draw order is fixed (d Gaussians
    then d uniforms) so augmented batches are reproducible.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"augment expects a 1-D feature vector, got {x.shape}")
    if strength < 0:
        raise ValueError(f"strength must be >= 0, got {strength}")
    if not 0.0 <= keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in [0, 1], got {keep_prob}")
    d = x.shape[0]
    g = np.array(rng.gaussians(d))
    u = np.array(rng.uniforms(d))
    jittered = x + strength * noise_scale * g
    return np.where(u < keep_prob, jittered, 0.0)


def expected_augment_shift(x, strength: float, noise_scale: float = 1.0,
                           keep_prob: float = DEFAULT_KEEP_PROB) -> float:
    """Closed-form E||x' - x||^2 under the augment model (testing aid).

    Kept coordinates contribute the jitter variance eps^2; dropped ones
    contribute x_j^2 exactly (the jitter is masked away with them).
    """
    x = np.asarray(x, dtype=np.float64)
    eps2 = (strength * noise_scale) ** 2
    return x.size * keep_prob * eps2 + (1.0 - keep_prob) * float((x * x).sum())


def sample_two_view_batch(
    dataset: TaxonomyDataset,
    B: int,
    rng: SeededRng,
    strength: float = 1.0,
    keep_prob: float = DEFAULT_KEEP_PROB,
) -> LabeledBatch:
    """Draw B distinct train rows and emit two augmented views of each.

    Views are interleaved: sample b occupies rows 2b and 2b+1, and
    view_pair links them.  Labels replicate across the pair.
    """
    train = dataset.train_indices
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    if B > train.size:
        raise ValueError(f"B={B} exceeds n_train={train.size}")
    chosen = rng.sample_without_replacement(train.size, B)
    M = 2 * B
    X = np.empty((M, dataset.d))
    y_gt = np.empty(M, dtype=np.int64)
    y_tax = np.empty(M, dtype=np.int64)
    view_pair = np.empty(M, dtype=np.int64)
    for b, j in enumerate(chosen):
        row = train[j]
        for v in range(2):
            k = 2 * b + v
            X[k] = augment(dataset.X[row], strength, rng,
                           noise_scale=dataset.noise_scale, keep_prob=keep_prob)
            y_gt[k] = dataset.y_gt[row]
            y_tax[k] = dataset.y_tax[row]
        view_pair[2 * b] = 2 * b + 1
        view_pair[2 * b + 1] = 2 * b
    return LabeledBatch(X, y_gt, y_tax, view_pair)


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------


def _header(d: int) -> list[str]:
    return [f"feat_{j}" for j in range(d)] + ["y_gt", "y_tax", "split"]


def save_csv(dataset: TaxonomyDataset, path) -> None:
    """Header feat_0..feat_{d-1},y_gt,y_tax,split; floats at 17
    significant digits for a lossless round-trip."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(_header(dataset.d)) + "\n")
        for i in range(dataset.n):
            feats = ",".join(f"{x:.17g}" for x in dataset.X[i])
            fh.write(f"{feats},{dataset.y_gt[i]},{dataset.y_tax[i]},"
                     f"{dataset.split[i]}\n")


def load_csv(path) -> TaxonomyDataset:
    with open(path, "r", encoding="ascii") as fh:
        header_line = fh.readline().strip()
        if not header_line:
            raise ValueError(f"{path}: empty file")
        names = header_line.split(",")
        d = sum(1 for c in names if c.startswith("feat_"))
        expected = _header(d)
        if names != expected:
            missing = [c for c in expected if c not in names]
            if missing:
                raise ValueError(f"{path}: missing column(s) {missing}")
            raise ValueError(f"{path}: header {names} does not match "
                             f"expected {expected}")
        X, y_gt, y_tax, split = [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            toks = line.split(",")
            if len(toks) != d + 3:
                raise ValueError(f"{path}:{lineno}: expected {d + 3} fields, "
                                 f"got {len(toks)}")
            try:
                X.append([float(t) for t in toks[:d]])
                y_gt.append(int(toks[d]))
                y_tax.append(int(toks[d + 1]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if toks[d + 2] not in CSV_SPLITS:
                raise ValueError(f"{path}:{lineno}: bad split tag "
                                 f"{toks[d + 2]!r}")
            split.append(toks[d + 2])
    if not X:
        raise ValueError(f"{path}: no data rows")
    return TaxonomyDataset(
        X=np.array(X),
        y_gt=np.array(y_gt),
        y_tax=np.array(y_tax),
        split=np.array(split, dtype=object),
    )
