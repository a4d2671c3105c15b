"""MLP encoder with projection head, SGD contrastive pretraining, and a
linear probe on frozen representations.

The network is functional: an ``Mlp`` is a spec plus weight arrays, and
``forward``/``backward`` are pure functions of them.  ``backward``
accepts upstream gradients on either output head — dL/dZ flows through
the normalization Jacobian and projection, dL/dR joins at the
representation layer — so the contrastive loss and the probe share one
chain-rule implementation.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import losses, numerics
from .batchdecomp import LabeledBatch
from .data import TaxonomyDataset, sample_two_view_batch
from .losses import LossConfig
from .rng import SeededRng

CHECKPOINT_MAGIC = b"TXCK"
CHECKPOINT_VERSION = 1

STREAM_INIT = 1
STREAM_SAMPLING = 2
STREAM_PROBE = 3

SCHEDULE_KINDS = ("cosine_warmup", "step_decay")


@dataclass(frozen=True)
class MlpSpec:
    """Widths of the encoder trunk and projection head.

    Trunk: d_in -> hidden... -> d_rep, rectified except (by default) the
    representation layer itself; ``rectified_rep`` turns that rectifier
    on.  Head: d_rep -> proj..., rectified except the final layer, whose
    output is l2-normalized into the embedding.
    """

    d_in: int
    hidden: tuple[int, ...] = (64, 64)
    d_rep: int = 32
    proj: tuple[int, ...] = (16,)
    rectified_rep: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        object.__setattr__(self, "proj", tuple(int(w) for w in self.proj))
        widths = (self.d_in, *self.hidden, self.d_rep, *self.proj)
        if any(w < 1 for w in widths):
            raise ValueError(f"all widths must be >= 1, got {widths}")
        if not self.proj:
            raise ValueError("projection head needs at least one layer")
        if self.proj[-1] < 2:
            raise ValueError(f"embedding width must be >= 2, got {self.proj[-1]}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.d_in, *self.hidden, self.d_rep, *self.proj)

    @property
    def n_trunk(self) -> int:
        return len(self.hidden) + 1

    @property
    def d_z(self) -> int:
        return self.proj[-1]

    def rectified(self, layer: int) -> bool:
        """Whether layer ``layer``'s output passes through the rectifier."""
        n_layers = len(self.dims) - 1
        if layer == self.n_trunk - 1:
            return self.rectified_rep
        if layer == n_layers - 1:
            return False
        return True


def glorot_uniform(fan_in: int, fan_out: int, rng: SeededRng) -> np.ndarray:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    u = np.array(rng.uniforms(fan_in * fan_out)).reshape(fan_in, fan_out)
    return (2.0 * u - 1.0) * s


@dataclass
class Mlp:
    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, spec: MlpSpec, rng: SeededRng) -> "Mlp":
        dims = spec.dims
        weights, biases = [], []
        for l in range(len(dims) - 1):
            weights.append(glorot_uniform(dims[l], dims[l + 1], rng))
            biases.append(np.zeros(dims[l + 1]))
        return cls(spec, weights, biases)

    def copy(self) -> "Mlp":
        return Mlp(self.spec,
                   [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


@dataclass
class ForwardPass:
    """Cached activations of one forward call."""

    R: np.ndarray
    Z: np.ndarray
    degenerate: np.ndarray
    acts: list[np.ndarray]
    pre_norm: np.ndarray
    norms: np.ndarray


def forward(model: Mlp, X) -> ForwardPass:
    X = numerics.as_matrix(X, "input matrix")
    spec = model.spec
    if X.shape[1] != spec.d_in:
        raise ValueError(f"input has {X.shape[1]} columns, spec wants {spec.d_in}")
    acts = [X]
    h = X
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ W + b
        if spec.rectified(l):
            h = np.maximum(h, 0.0)
        acts.append(h)
    pre_norm = acts[-1]
    norms = np.sqrt((pre_norm * pre_norm).sum(axis=1, keepdims=True))
    degenerate = norms[:, 0] < numerics.ZERO_ROW_TOL
    Z = pre_norm / np.where(degenerate[:, None], 1.0, norms)
    R = acts[spec.n_trunk]
    return ForwardPass(R=R, Z=Z, degenerate=degenerate, acts=acts,
                       pre_norm=pre_norm, norms=norms)


def normalization_backward(fp: ForwardPass, dZ: np.ndarray) -> np.ndarray:
    """Pull dL/dZ back through z = v / ||v||: (dz - (z.dz) z) / ||v||,
    zero on degenerate rows."""
    Z = fp.Z
    inner = (Z * dZ).sum(axis=1, keepdims=True)
    dv = (dZ - inner * Z) / np.where(fp.degenerate[:, None], 1.0, fp.norms)
    dv[fp.degenerate] = 0.0
    return dv


def backward(
    model: Mlp,
    fp: ForwardPass,
    dZ: np.ndarray | None = None,
    dR: np.ndarray | None = None,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact weight gradients for upstream gradients on Z and/or R."""
    spec = model.spec
    n_layers = len(model.weights)
    if dZ is not None:
        g = normalization_backward(fp, np.asarray(dZ, dtype=np.float64))
    else:
        g = np.zeros_like(fp.pre_norm)
    dW = [None] * n_layers
    db = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        if l + 1 == spec.n_trunk and dR is not None:
            g = g + dR
        if spec.rectified(l):
            g = g * (fp.acts[l + 1] > 0.0)
        dW[l] = fp.acts[l].T @ g
        db[l] = g.sum(axis=0)
        g = g @ model.weights[l].T
    return dW, db


# ---------------------------------------------------------------------------
# schedules and training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "cosine_warmup"
    warmup_epochs: int = 5
    milestones: tuple[int, ...] = (60, 80)
    factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "milestones",
                           tuple(int(m) for m in self.milestones))
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"schedule kind must be one of {SCHEDULE_KINDS}, "
                             f"got {self.kind!r}")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if not 0.0 < self.factor <= 1.0:
            raise ValueError(f"factor must be in (0, 1], got {self.factor}")
        if any(m < 0 for m in self.milestones):
            raise ValueError("milestones must be >= 0")

    def lr_at(self, epoch: int, total_epochs: int, base_lr: float) -> float:
        if self.kind == "step_decay":
            drops = sum(1 for m in self.milestones if epoch >= m)
            return base_lr * self.factor ** drops
        if epoch < self.warmup_epochs:
            return base_lr * (epoch + 1) / self.warmup_epochs
        span = max(1, total_epochs - self.warmup_epochs)
        t = (epoch - self.warmup_epochs) / span
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    loss: LossConfig = field(default_factory=lambda: LossConfig(variant="taxcl_sup"))
    seed: int = 0
    aug_strength: float = 1.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class TraceRow:
    epoch: int
    step: int
    lr: float
    loss: float


def save_trace_csv(trace: list[TraceRow], path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("epoch,step,lr,loss\n")
        for row in trace:
            fh.write(f"{row.epoch},{row.step},{row.lr:.17g},{row.loss:.17g}\n")


@dataclass
class Checkpoint:
    model: Mlp
    step_count: int
    config: dict
    rng_state: tuple[int, bool, float]
    trace: list[TraceRow] = field(default_factory=list, compare=False)


def _config_snapshot(spec: MlpSpec, cfg: TrainConfig) -> dict:
    # normalize through JSON so the in-memory snapshot equals the one a
    # checkpoint round-trip produces (tuples become lists exactly once)
    raw = {"mlp_spec": asdict(spec), "train": asdict(cfg)}
    return json.loads(json.dumps(raw))


def pretrain(
    dataset: TaxonomyDataset,
    cfg: TrainConfig,
    mlp_spec: MlpSpec | None = None,
) -> Checkpoint:
    """SGD with momentum and weight decay over two-view batches.

    Weight init and batch sampling use separate derived streams of the
    config seed, so runs are bit-reproducible.  A non-finite loss aborts
    immediately with the offending step in the message.
    """
    n_train = dataset.train_indices.size
    if n_train == 0:
        raise ValueError("dataset has no train rows")
    if 2 * cfg.batch_size > 2 * n_train:
        raise ValueError(f"batch_size={cfg.batch_size} exceeds n_train={n_train}")
    if mlp_spec is None:
        mlp_spec = MlpSpec(d_in=dataset.d)
    if mlp_spec.d_in != dataset.d:
        raise ValueError(f"spec d_in={mlp_spec.d_in} but dataset d={dataset.d}")

    model = Mlp.init(mlp_spec, SeededRng(cfg.seed, STREAM_INIT))
    sampler = SeededRng(cfg.seed, STREAM_SAMPLING)
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    steps_per_epoch = max(1, n_train // cfg.batch_size)
    trace: list[TraceRow] = []
    step_count = 0

    for epoch in range(cfg.epochs):
        lr = cfg.schedule.lr_at(epoch, cfg.epochs, cfg.lr)
        for step in range(steps_per_epoch):
            batch = sample_two_view_batch(dataset, cfg.batch_size, sampler,
                                          strength=cfg.aug_strength)
            fp = forward(model, batch.embeddings)
            if not np.isfinite(fp.pre_norm).all():
                raise RuntimeError(
                    f"training diverged at epoch {epoch} step {step}: "
                    "non-finite activations")
            zbatch = LabeledBatch(fp.Z, batch.y_gt, batch.y_tax, batch.view_pair)
            res = losses.evaluate(zbatch, cfg.loss)
            if not math.isfinite(res.value):
                raise RuntimeError(
                    f"loss diverged at epoch {epoch} step {step}: {res.value}")
            dW, db = backward(model, fp, dZ=res.grad)
            for l in range(len(model.weights)):
                gw = dW[l] + cfg.weight_decay * model.weights[l]
                vel_w[l] = cfg.momentum * vel_w[l] + gw
                model.weights[l] -= lr * vel_w[l]
                vel_b[l] = cfg.momentum * vel_b[l] + db[l]
                model.biases[l] -= lr * vel_b[l]
            trace.append(TraceRow(epoch, step, lr, res.value))
            step_count += 1

    return Checkpoint(model=model, step_count=step_count,
                      config=_config_snapshot(mlp_spec, cfg),
                      rng_state=sampler.get_state(), trace=trace)


# ---------------------------------------------------------------------------
# checkpoint serialization: "TXCK" + version + config JSON + matrices
# ---------------------------------------------------------------------------


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    blob = json.dumps(ckpt.config, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    state, has_spare, spare = ckpt.rng_state
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, ckpt.step_count))
        fh.write(struct.pack("<QBd", state, int(has_spare), spare))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        arrays = ckpt.model.arrays()
        fh.write(struct.pack("<I", len(arrays)))
        for arr in arrays:
            numerics.save_matrix_binary(np.atleast_2d(arr), fh)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}, "
                             f"expected {CHECKPOINT_MAGIC!r}")
        version, step_count = struct.unpack("<IQ", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        state, has_spare, spare = struct.unpack("<QBd", fh.read(17))
        (blob_len,) = struct.unpack("<I", fh.read(4))
        config = json.loads(fh.read(blob_len).decode("utf-8"))
        (n_arrays,) = struct.unpack("<I", fh.read(4))
        arrays = [numerics.load_matrix_binary(fh) for _ in range(n_arrays)]
    sd = config["mlp_spec"]
    spec = MlpSpec(d_in=sd["d_in"], hidden=tuple(sd["hidden"]),
                   d_rep=sd["d_rep"], proj=tuple(sd["proj"]),
                   rectified_rep=sd["rectified_rep"])
    n_layers = len(spec.dims) - 1
    if n_arrays != 2 * n_layers:
        raise ValueError(f"checkpoint holds {n_arrays} arrays, "
                         f"spec wants {2 * n_layers}")
    weights = [arrays[2 * l] for l in range(n_layers)]
    biases = [arrays[2 * l + 1].ravel() for l in range(n_layers)]
    for l, (w, b) in enumerate(zip(weights, biases)):
        want = (spec.dims[l], spec.dims[l + 1])
        if w.shape != want or b.shape != (want[1],):
            raise ValueError(f"layer {l} arrays have shape {w.shape}/{b.shape}, "
                             f"spec wants {want}")
    return Checkpoint(model=Mlp(spec, weights, biases), step_count=step_count,
                      config=config, rng_state=(state, bool(has_spare), spare))


# ---------------------------------------------------------------------------
# linear probe
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 100
    lr: float = 0.1
    milestones: tuple[int, ...] = (60, 80)
    factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "milestones",
                           tuple(int(m) for m in self.milestones))
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


@dataclass
class ProbeResult:
    accuracy: float
    train_accuracy: float
    n_classes: int
    weights: np.ndarray
    bias: np.ndarray


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def linear_probe(
    source: Checkpoint | Mlp,
    dataset: TaxonomyDataset,
    cfg: ProbeConfig | None = None,
) -> ProbeResult:
    """Full-batch softmax regression on frozen representations.

    The encoder never updates; only the probe's single linear layer
    trains, with the step-decay schedule applied per epoch.  Returns
    held-out accuracy on the test split (train accuracy rides along).
    """
    if cfg is None:
        cfg = ProbeConfig()
    model = source.model if isinstance(source, Checkpoint) else source
    train_idx = dataset.train_indices
    test_idx = dataset.test_indices
    if train_idx.size == 0:
        raise ValueError("dataset has no train rows")
    X_tr, y_tr, _ = dataset.subset(train_idx)
    classes = np.unique(y_tr)
    if classes.size < 2:
        raise ValueError(f"probe needs >= 2 classes, got {classes.size}")
    remap = {int(c): k for k, c in enumerate(classes)}
    t_tr = np.array([remap[int(y)] for y in y_tr])

    R_tr = forward(model, X_tr).R
    n, K = R_tr.shape[0], classes.size
    onehot = np.zeros((n, K))
    onehot[np.arange(n), t_tr] = 1.0

    rng = SeededRng(cfg.seed, STREAM_PROBE)
    W = glorot_uniform(R_tr.shape[1], K, rng)
    b = np.zeros(K)
    for epoch in range(cfg.epochs):
        drops = sum(1 for m in cfg.milestones if epoch >= m)
        lr = cfg.lr * cfg.factor ** drops
        p = _softmax(R_tr @ W + b)
        g = (p - onehot) / n
        W -= lr * (R_tr.T @ g)
        b -= lr * g.sum(axis=0)

    def accuracy(idx) -> float:
        if idx.size == 0:
            return float("nan")
        X, y, _ = dataset.subset(idx)
        R = forward(model, X).R
        pred = classes[np.argmax(R @ W + b, axis=1)]
        return float((pred == y).mean())

    return ProbeResult(accuracy=accuracy(test_idx),
                       train_accuracy=accuracy(train_idx),
                       n_classes=K, weights=W, bias=b)


# ---------------------------------------------------------------------------
# end-to-end gradient verification
# ---------------------------------------------------------------------------


def weight_finite_diff_check(
    model: Mlp,
    batch: LabeledBatch,
    loss_cfg: LossConfig,
    h: float = 1e-5,
) -> tuple[float, str]:
    """Central-difference check of backward() through the full pipeline
    loss(normalize(project(encode(X)))).  Returns the worst relative
    error and the coordinate it occurred at."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"h must be in [1e-7, 1e-3], got {h}")

    def total_loss(m: Mlp) -> float:
        fp = forward(m, batch.embeddings)
        zb = LabeledBatch(fp.Z, batch.y_gt, batch.y_tax, batch.view_pair)
        return losses.evaluate(zb, loss_cfg).value

    fp = forward(model, batch.embeddings)
    zb = LabeledBatch(fp.Z, batch.y_gt, batch.y_tax, batch.view_pair)
    res = losses.evaluate(zb, loss_cfg)
    dW, db = backward(model, fp, dZ=res.grad)

    worst, where = 0.0, ""
    for kind, grads, attr in (("W", dW, "weights"), ("b", db, "biases")):
        params = getattr(model, attr)
        for l, grad in enumerate(grads):
            flat = params[l].reshape(-1)
            gflat = grad.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                up = total_loss(model)
                flat[j] = orig - h
                down = total_loss(model)
                flat[j] = orig
                fd = (up - down) / (2.0 * h)
                an = float(gflat[j])
                rel = abs(fd - an) / max(1.0, abs(fd), abs(an))
                if rel > worst:
                    worst, where = rel, f"{kind}[{l}][{j}]"
    return float(worst), where
