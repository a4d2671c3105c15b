import math

import numpy as np
import pytest

from taxcl import model as tm
from taxcl.data import GenSpec, TaxonomyDataset, generate
from taxcl.losses import LossConfig
from taxcl.model import (
    Checkpoint,
    Mlp,
    MlpSpec,
    ProbeConfig,
    ScheduleConfig,
    TrainConfig,
    forward,
    glorot_uniform,
    linear_probe,
    load_checkpoint,
    pretrain,
    save_checkpoint,
    save_trace_csv,
)
from taxcl.rng import SeededRng


def identity_mlp(d: int) -> Mlp:
    spec = MlpSpec(d_in=d, hidden=(), d_rep=d, proj=(d,))
    return Mlp(spec, [np.eye(d), np.eye(d)], [np.zeros(d), np.zeros(d)])


def easy_dataset(seed=0, n_per_class=20):
    return generate(GenSpec(S=2, C=2, n_per_class=n_per_class, d=8,
                            sigma_super=10.0, sigma_sub=2.0,
                            sigma_noise=0.1, seed=seed))


def small_train_cfg(**kw):
    base = dict(epochs=3, batch_size=8, lr=0.05,
                loss=LossConfig(variant="taxcl_sup"), seed=1)
    base.update(kw)
    return TrainConfig(**base)


# -- spec and forward -----------------------------------------------------------


def test_spec_layer_geometry():
    spec = MlpSpec(d_in=16, hidden=(64, 64), d_rep=32, proj=(16,))
    assert spec.dims == (16, 64, 64, 32, 16)
    assert spec.n_trunk == 3
    assert spec.d_z == 16
    assert [spec.rectified(l) for l in range(4)] == [True, True, False, False]


def test_spec_rectified_rep_toggle():
    spec = MlpSpec(d_in=4, hidden=(8,), d_rep=4, proj=(3,), rectified_rep=True)
    assert [spec.rectified(l) for l in range(3)] == [True, True, False]


def test_spec_validation():
    with pytest.raises(ValueError):
        MlpSpec(d_in=0)
    with pytest.raises(ValueError):
        MlpSpec(d_in=4, proj=())
    with pytest.raises(ValueError):
        MlpSpec(d_in=4, proj=(1,))  # embedding must be >= 2 wide


def test_forward_identity_network():
    m = identity_mlp(3)
    fp = forward(m, np.eye(3))
    assert np.array_equal(fp.R, np.eye(3))
    assert np.array_equal(fp.Z, np.eye(3))  # rows already unit norm
    assert not fp.degenerate.any()


def test_forward_zero_weights_degenerate():
    spec = MlpSpec(d_in=3, hidden=(), d_rep=3, proj=(3,))
    m = Mlp(spec, [np.zeros((3, 3)), np.zeros((3, 3))], [np.zeros(3), np.zeros(3)])
    fp = forward(m, np.eye(3))
    assert fp.degenerate.all()
    assert not fp.Z.any()


def test_forward_embeddings_are_unit_rows():
    spec = MlpSpec(d_in=5, hidden=(7,), d_rep=4, proj=(3,))
    m = Mlp.init(spec, SeededRng(3, tm.STREAM_INIT))
    X = np.array(SeededRng(4).gaussians(6 * 5)).reshape(6, 5)
    fp = forward(m, X)
    norms = np.linalg.norm(fp.Z, axis=1)
    assert np.allclose(norms[~fp.degenerate], 1.0, atol=1e-12)
    assert fp.R.shape == (6, 4)


def test_forward_rejects_wrong_width():
    with pytest.raises(ValueError, match="columns"):
        forward(identity_mlp(3), np.ones((2, 4)))


def test_glorot_respects_fan_bound():
    W = glorot_uniform(20, 30, SeededRng(5))
    bound = math.sqrt(6.0 / 50.0)
    assert W.shape == (20, 30)
    assert np.abs(W).max() <= bound
    assert np.abs(W).max() > 0.8 * bound  # actually fills the range


# -- schedules --------------------------------------------------------------------


def test_step_decay_drops_exactly_at_milestones():
    sch = ScheduleConfig(kind="step_decay", milestones=(60, 80), factor=0.1)
    assert sch.lr_at(0, 100, 1.0) == 1.0
    assert sch.lr_at(59, 100, 1.0) == 1.0
    assert sch.lr_at(60, 100, 1.0) == pytest.approx(0.1)
    assert sch.lr_at(79, 100, 1.0) == pytest.approx(0.1)
    assert sch.lr_at(80, 100, 1.0) == pytest.approx(0.01)
    assert sch.lr_at(99, 100, 1.0) == pytest.approx(0.01)


def test_cosine_warmup_profile():
    sch = ScheduleConfig(kind="cosine_warmup", warmup_epochs=5)
    ramp = [sch.lr_at(e, 100, 1.0) for e in range(5)]
    assert ramp == pytest.approx([0.2, 0.4, 0.6, 0.8, 1.0])
    assert sch.lr_at(5, 100, 1.0) == pytest.approx(1.0)  # cos(0)
    tail = [sch.lr_at(e, 100, 1.0) for e in range(5, 100)]
    assert all(a >= b for a, b in zip(tail, tail[1:]))  # non-increasing
    assert tail[-1] < 0.01


def test_schedule_validation():
    with pytest.raises(ValueError):
        ScheduleConfig(kind="linear")
    with pytest.raises(ValueError):
        ScheduleConfig(factor=0.0)
    with pytest.raises(ValueError):
        ScheduleConfig(warmup_epochs=-1)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    TrainConfig(lr=0.0)  # zero is allowed: the no-op training run


# -- pretraining -------------------------------------------------------------------


def test_pretrain_is_deterministic():
    ds = easy_dataset()
    a = pretrain(ds, small_train_cfg())
    b = pretrain(ds, small_train_cfg())
    for wa, wb in zip(a.model.weights, b.model.weights):
        assert np.array_equal(wa, wb)
    assert [r.loss for r in a.trace] == [r.loss for r in b.trace]
    assert a.rng_state == b.rng_state
    c = pretrain(ds, small_train_cfg(seed=2))
    assert not np.array_equal(a.model.weights[0], c.model.weights[0])


def test_pretrain_zero_lr_keeps_init():
    ds = easy_dataset()
    ck = pretrain(ds, small_train_cfg(lr=0.0, epochs=2))
    fresh = Mlp.init(MlpSpec(d_in=ds.d), SeededRng(1, tm.STREAM_INIT))
    for w, f in zip(ck.model.weights, fresh.weights):
        assert np.array_equal(w, f)
    for b, f in zip(ck.model.biases, fresh.biases):
        assert np.array_equal(b, f)


def test_pretrain_reduces_loss():
    ds = easy_dataset()
    cfg = small_train_cfg(epochs=50, batch_size=16, lr=0.05,
                          loss=LossConfig(variant="supcon"))
    ck = pretrain(ds, cfg)
    steps = max(1, ds.train_indices.size // cfg.batch_size)
    first = np.mean([r.loss for r in ck.trace[:steps]])
    last = np.mean([r.loss for r in ck.trace[-steps:]])
    # the contrastive loss carries an entropy floor, so expect a solid
    # but not dramatic drop
    assert last < 0.9 * first
    assert first - last > 0.3


def test_pretrain_trace_structure():
    ds = easy_dataset()
    cfg = small_train_cfg(epochs=3, batch_size=16)
    ck = pretrain(ds, cfg)
    steps = max(1, ds.train_indices.size // 16)
    assert len(ck.trace) == 3 * steps
    assert ck.step_count == 3 * steps
    assert [r.epoch for r in ck.trace[:steps]] == [0] * steps
    assert [r.step for r in ck.trace[:steps]] == list(range(steps))
    sch = cfg.schedule
    assert ck.trace[0].lr == sch.lr_at(0, 3, cfg.lr)
    assert all(math.isfinite(r.loss) for r in ck.trace)


def test_pretrain_validation():
    ds = easy_dataset()
    with pytest.raises(ValueError, match="exceeds"):
        pretrain(ds, small_train_cfg(batch_size=10_000))
    with pytest.raises(ValueError, match="d_in"):
        pretrain(ds, small_train_cfg(), MlpSpec(d_in=ds.d + 1))


def test_pretrain_requires_train_rows():
    ds = easy_dataset()
    all_test = TaxonomyDataset(ds.X, ds.y_gt, ds.y_tax,
                               np.array(["test"] * ds.n, dtype=object))
    with pytest.raises(ValueError, match="train"):
        pretrain(all_test, small_train_cfg())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_pretrain_divergence_guard():
    ds = easy_dataset()
    cfg = small_train_cfg(epochs=8, batch_size=ds.train_indices.size,
                          lr=1e150, momentum=0.0, weight_decay=0.0)
    with pytest.raises(RuntimeError, match="diverged"):
        with np.errstate(all="ignore"):
            pretrain(ds, cfg)


def test_trace_csv_schema(tmp_path):
    ds = easy_dataset()
    ck = pretrain(ds, small_train_cfg(epochs=2, batch_size=32))
    path = tmp_path / "trace.csv"
    save_trace_csv(ck.trace, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,step,lr,loss"
    assert len(lines) == 1 + len(ck.trace)
    epoch, step, lr, loss = lines[1].split(",")
    assert int(epoch) == 0 and int(step) == 0
    assert float(lr) == ck.trace[0].lr
    assert float(loss) == ck.trace[0].loss  # 17 digits round-trips exactly


# -- checkpoints --------------------------------------------------------------------


def test_checkpoint_round_trip_is_byte_exact(tmp_path):
    ds = easy_dataset()
    ck = pretrain(ds, small_train_cfg(epochs=2))
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(ck, p1)
    loaded = load_checkpoint(p1)
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.step_count == ck.step_count
    assert loaded.config == ck.config
    assert loaded.rng_state == ck.rng_state
    for wa, wb in zip(loaded.model.weights, ck.model.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(loaded.model.biases, ck.model.biases):
        assert np.array_equal(ba, bb)


def test_checkpoint_magic_guard(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_version_guard(tmp_path):
    ds = easy_dataset()
    ck = pretrain(ds, small_train_cfg(epochs=1))
    path = tmp_path / "ck.bin"
    save_checkpoint(ck, path)
    blob = bytearray(path.read_bytes())
    blob[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)


# -- linear probe --------------------------------------------------------------------


def test_probe_perfect_on_separable_data():
    ds = easy_dataset(n_per_class=25)
    res = linear_probe(identity_mlp(ds.d), ds)
    assert res.n_classes == 4
    assert res.accuracy == 1.0
    assert res.train_accuracy == 1.0


def test_probe_zero_epochs_is_chance_level():
    ds = easy_dataset(n_per_class=50)
    res = linear_probe(identity_mlp(ds.d), ds, ProbeConfig(epochs=0))
    assert abs(res.train_accuracy - 0.25) <= 0.1
    assert abs(res.accuracy - 0.25) <= 0.2


def test_probe_matches_independent_descent_oracle():
    ds = easy_dataset(seed=5, n_per_class=25)  # 100 samples
    m = Mlp.init(MlpSpec(d_in=ds.d, hidden=(10,), d_rep=6, proj=(4,)),
                 SeededRng(9, tm.STREAM_INIT))
    cfg = ProbeConfig(epochs=100, lr=0.1, milestones=(60, 80), factor=0.1, seed=0)
    res = linear_probe(m, ds, cfg)

    # independent full-batch softmax-regression oracle
    X_tr, y_tr, _ = ds.subset(ds.train_indices)
    classes = np.unique(y_tr)
    t = np.searchsorted(classes, y_tr)
    R = forward(m, X_tr).R
    n, K = R.shape[0], classes.size
    W = glorot_uniform(R.shape[1], K, SeededRng(cfg.seed, tm.STREAM_PROBE))
    b = np.zeros(K)
    onehot = np.zeros((n, K))
    onehot[np.arange(n), t] = 1.0
    for epoch in range(cfg.epochs):
        lr = cfg.lr * cfg.factor ** sum(1 for mst in cfg.milestones if epoch >= mst)
        logits = R @ W + b
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        W -= lr * (R.T @ g)
        b -= lr * g.sum(axis=0)
    X_te, y_te, _ = ds.subset(ds.test_indices)
    R_te = forward(m, X_te).R
    oracle_acc = float((classes[np.argmax(R_te @ W + b, axis=1)] == y_te).mean())
    assert abs(res.accuracy - oracle_acc) <= 0.02


def test_probe_leaves_encoder_frozen():
    ds = easy_dataset()
    m = Mlp.init(MlpSpec(d_in=ds.d), SeededRng(11, tm.STREAM_INIT))
    before = [w.copy() for w in m.weights]
    linear_probe(m, ds)
    for b_, a_ in zip(before, m.weights):
        assert np.array_equal(b_, a_)


def test_probe_accepts_checkpoint_source():
    ds = easy_dataset()
    ck = pretrain(ds, small_train_cfg(epochs=1))
    via_ckpt = linear_probe(ck, ds)
    via_model = linear_probe(ck.model, ds)
    assert via_ckpt.accuracy == via_model.accuracy


def test_probe_requires_two_classes():
    ds = generate(GenSpec(S=1, C=1, n_per_class=10, d=4, seed=0))
    with pytest.raises(ValueError, match="classes"):
        linear_probe(identity_mlp(4), ds)


def test_probe_config_validation():
    with pytest.raises(ValueError):
        ProbeConfig(lr=0.0)
    with pytest.raises(ValueError):
        ProbeConfig(epochs=-1)
