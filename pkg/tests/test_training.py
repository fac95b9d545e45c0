import math
from itertools import count

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfocnn.cnn import Dense, Flatten, Network
from hfocnn.dataset import DatasetManifest, ManifestEntry
from hfocnn.errors import (
    ClassTooSmall,
    ConfigError,
    DomainError,
    EmptySplit,
    ShapeMismatch,
    TooFewRuns,
)
from hfocnn.metrics import METRIC_NAMES
from hfocnn.tf_imaging import Label
from hfocnn.training import (
    Adam,
    AdamConfig,
    EarlyStopping,
    TrainConfig,
    bce_loss,
    evaluate,
    one_hot,
    predict_labels,
    run_experiment,
    split_hash,
    stratified_split,
    train,
)

from .oracles import numeric_grad, rel_error


def balanced(n_per_class):
    entries = [ManifestEntry(f"hfo_{i:05d}", Label.HFO, 500) for i in range(n_per_class)]
    entries += [ManifestEntry(f"nhfo_{i:05d}", Label.NHFO, 500) for i in range(n_per_class)]
    return DatasetManifest(entries)


def unbalanced(n_hfo, n_nhfo):
    entries = [ManifestEntry(f"h{i}", Label.HFO, 0) for i in range(n_hfo)]
    entries += [ManifestEntry(f"n{i}", Label.NHFO, 0) for i in range(n_nhfo)]
    return DatasetManifest(entries)


# --- splitting -------------------------------------------------------------

def test_split_full_dataset_sizes():
    train_m, val_m, test_m = stratified_split(balanced(2591), seed=0)
    assert (len(train_m), len(val_m), len(test_m)) == (3318, 828, 1036)
    for part, per_class in ((train_m, 1659), (val_m, 414), (test_m, 518)):
        assert part.class_counts[Label.HFO] == part.class_counts[Label.NHFO] == per_class


def test_split_ten_images():
    train_m, val_m, test_m = stratified_split(balanced(5), seed=3)
    assert (len(train_m), len(val_m), len(test_m)) == (8, 0, 2)
    assert test_m.class_counts[Label.HFO] == 1 and test_m.class_counts[Label.NHFO] == 1


def test_split_class_too_small():
    with pytest.raises(ClassTooSmall):
        stratified_split(unbalanced(4, 50), seed=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(5, 300), st.integers(5, 300), st.integers(0, 2**32 - 1))
def test_split_partition_property(n_hfo, n_nhfo, seed):
    manifest = unbalanced(n_hfo, n_nhfo)
    parts = stratified_split(manifest, seed)
    ids = [set(p.ids) for p in parts]
    assert ids[0] | ids[1] | ids[2] == set(manifest.ids)
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    for label, n in ((Label.HFO, n_hfo), (Label.NHFO, n_nhfo)):
        n_test = math.floor(0.2 * n)
        n_val = math.floor(0.2 * (n - n_test))
        got = [p.class_counts.get(label, 0) for p in parts]
        assert got == [n - n_test - n_val, n_val, n_test]


def test_split_seeded():
    a = stratified_split(balanced(50), 7)
    b = stratified_split(balanced(50), 7)
    assert [p.ids for p in a] == [p.ids for p in b]


def test_split_hashes_distinct_over_runs():
    hashes = {split_hash(stratified_split(balanced(2591), seed)) for seed in range(12)}
    assert len(hashes) == 12


# --- loss ------------------------------------------------------------------

def test_bce_uniform_prediction():
    loss, _ = bce_loss([0.5, 0.5], [1.0, 0.0])
    assert loss == pytest.approx(math.log(2), abs=1e-12)


def test_bce_perfect_prediction():
    loss, _ = bce_loss([1 - 1e-12, 1e-12], [1.0, 0.0])
    assert loss < 1e-11


def test_bce_gradient_formula_and_fd(rng):
    for _ in range(20):
        p = rng.uniform(0.05, 0.95, 2)
        t = one_hot([rng.integers(2)])[0]
        _, grad = bce_loss(p, t)
        np.testing.assert_allclose(grad, (p - t) / (2 * p * (1 - p)), rtol=1e-14)
        fd = numeric_grad(lambda: bce_loss(p, t)[0], p, h=1e-6)
        assert np.max(np.abs(grad - fd)) < 1e-6


def test_bce_sigmoid_path_matches_logit_shortcut(rng):
    z = rng.normal(0, 2, 2)
    p = 1 / (1 + np.exp(-z))
    t = np.array([0.0, 1.0])
    _, dp = bce_loss(p, t)
    assert rel_error(dp * p * (1 - p), (p - t) / 2) < 1e-12


def test_bce_endpoints_are_clamped_not_fatal():
    loss, grad = bce_loss([1.0, 0.0], [1.0, 0.0])
    assert math.isfinite(loss) and np.all(np.isfinite(grad))


def test_bce_domain_and_shape():
    with pytest.raises(DomainError):
        bce_loss([1.2, 0.1], [1.0, 0.0])
    with pytest.raises(ShapeMismatch):
        bce_loss([0.2, 0.1], [1.0, 0.0, 0.0])


def test_argmax_ties_go_to_nhfo():
    assert predict_labels(np.array([[0.5, 0.5], [0.2, 0.7]])).tolist() == [Label.NHFO, Label.HFO]


# --- optimiser -------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0]), np.ones((2, 2))]
    before = [a.copy() for a in p]
    Adam(p).step(p, [np.zeros(2), np.zeros((2, 2))])
    assert all(np.array_equal(a, b) for a, b in zip(p, before))


def test_adam_first_step_magnitude(rng):
    p = [rng.standard_normal(50)]
    g = rng.standard_normal(50)
    before = p[0].copy()
    Adam(p).step(p, [g])
    delta = p[0] - before
    assert np.all(np.sign(delta) == -np.sign(g))
    # bias correction cancels at t=1, leaving alpha*|g|/(|g|+eps)
    np.testing.assert_allclose(np.abs(delta), 1e-3 * np.abs(g) / (np.abs(g) + 1e-7), rtol=1e-9)
    np.testing.assert_allclose(np.abs(delta), 1e-3, rtol=1e-3)


def test_adam_quadratic_bowl():
    theta = [np.array([1.0])]
    opt = Adam(theta, AdamConfig(learning_rate=1e-2))
    for _ in range(2000):
        opt.step(theta, [2 * theta[0]])
    assert abs(theta[0][0]) < 0.01


def test_adam_shape_mismatch():
    p = [np.zeros(3)]
    with pytest.raises(ShapeMismatch):
        Adam(p).step(p, [np.zeros(4)])


# --- early stopping --------------------------------------------------------

def replay(losses, patience=4):
    stopper = EarlyStopping(patience)
    for epoch, loss in enumerate(losses, 1):
        stopper.update(epoch, loss)
        if stopper.should_stop:
            return epoch, stopper.best_epoch
    return len(losses), stopper.best_epoch


def test_stopper_strictly_improving():
    assert replay([1.0 - 0.05 * i for i in range(10)]) == (10, 10)


def test_stopper_patience_sequence():
    assert replay([1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.5]) == (6, 2)


def test_stopper_equal_loss_is_not_improvement():
    assert replay([1.0, 1.0, 1.0, 1.0, 1.0]) == (5, 1)


def test_stopper_counter_resets():
    assert replay([1.0, 1.1, 1.2, 1.3, 0.9, 1.0, 1.0, 1.0, 1.0]) == (9, 5)


def test_config_patience_below_max_epochs():
    with pytest.raises(ConfigError):
        TrainConfig(max_epochs=4, patience=4)
    TrainConfig(max_epochs=4, patience=4, early_stopping=False)


def linear_net(n_in=4, seed=0):
    net = Network([Flatten(), Dense(2, "sigmoid")], (n_in, 1, 1))
    net.init_glorot(np.random.default_rng(seed))
    return net


def scripted(losses):
    it = iter(losses)
    return lambda net, x, y: (next(it), 0.5)


def toy_data(n, rng, n_in=4):
    y = rng.integers(0, 2, n)
    x = rng.standard_normal((n, n_in, 1, 1)) + (2 * y - 1)[:, None, None, None]
    return x, y


def test_train_stops_and_restores_snapshot(rng):
    x, y = toy_data(40, rng)
    snaps = {}

    def record(epoch, net, history):
        snaps[epoch] = net.get_weights()

    net, hist = train(x, y, x[:4], y[:4], TrainConfig(batch_size=10), net=linear_net(),
                      on_epoch_end=record,
                      evaluate_fn=scripted([1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.1]))
    assert hist.epochs == 6 and hist.stopped_early and hist.best_epoch == 2
    assert all(np.array_equal(a, b) for a, b in zip(net.get_weights(), snaps[2]))
    assert not np.array_equal(snaps[2][0], snaps[6][0])


def test_train_no_early_stop_when_improving(rng):
    x, y = toy_data(20, rng)
    _, hist = train(x, y, x[:4], y[:4], TrainConfig(batch_size=10), net=linear_net(),
                    evaluate_fn=scripted([1.0 - 0.05 * i for i in range(10)]))
    assert hist.epochs == 10 and not hist.stopped_early and hist.best_epoch == 10


def test_steps_per_epoch_is_ceil(rng):
    x, y = toy_data(3318, rng, n_in=1)
    net = linear_net(n_in=1)
    calls = count()
    inner = net.backward
    net.backward = lambda cache, g: (next(calls), inner(cache, g))[1]
    cfg = TrainConfig(batch_size=20, max_epochs=1, early_stopping=False)
    train(x, y, x[:2], y[:2], cfg, net=net)
    assert next(calls) == 166


def test_empty_splits(rng):
    x, y = toy_data(10, rng)
    with pytest.raises(EmptySplit):
        train(x, y, x[:0], y[:0], TrainConfig(), net=linear_net())
    with pytest.raises(EmptySplit):
        train(x[:0], y[:0], x, y, TrainConfig(), net=linear_net())


def stripe_images(n, rng, size=24):
    """HFO images carry a bright horizontal band; NHFO images do not."""
    y = np.repeat([1, 0], n // 2)
    x = rng.uniform(0, 0.3, (n, size, size, 1))
    x[y == 1, 4:8] += 0.6
    return x, y


def test_overfit_twenty_images(rng):
    x, y = stripe_images(20, rng)
    cfg = TrainConfig(batch_size=4, max_epochs=50, early_stopping=False, image_size=24,
                      color_set="R", filters=(8, 8, 8), dense_units=32, seed=1)
    _, hist = train(x, y, x[:2], y[:2], cfg)
    assert hist.train_loss[-1] < 0.05


def test_best_restore_reproduces_recorded_minimum(rng):
    x, y = stripe_images(40, rng)
    xv, yv = stripe_images(10, rng)
    cfg = TrainConfig(batch_size=8, max_epochs=6, patience=2, image_size=24, color_set="R",
                      filters=(2, 2, 2), dense_units=4, seed=3)
    net, hist = train(x, y, xv, yv, cfg)
    assert evaluate(net, xv, yv)[0] == min(hist.val_loss)
    assert hist.val_loss[hist.best_epoch - 1] == min(hist.val_loss)


def test_training_is_deterministic(rng):
    x, y = stripe_images(20, rng)
    cfg = TrainConfig(batch_size=6, max_epochs=3, patience=2, image_size=24, color_set="R",
                      filters=(2, 2, 2), dense_units=4, seed=11)
    a, ha = train(x, y, x[:4], y[:4], cfg)
    b, hb = train(x, y, x[:4], y[:4], cfg)
    assert ha.val_loss == hb.val_loss
    assert all(np.array_equal(p, q) for p, q in zip(a.get_weights(), b.get_weights()))


# --- experiment ------------------------------------------------------------

class ArrayLoader:
    def __init__(self, images):
        self.images = images

    def __call__(self, part, color_set):
        x = np.stack([self.images[e.id] for e in part])
        y = np.array([int(e.label) for e in part])
        return x, y


@pytest.fixture(scope="module")
def tiny_experiment():
    rng = np.random.default_rng(0)
    manifest = balanced(10)
    images = {}
    for e in manifest:
        img = rng.uniform(0, 0.3, (24, 24, 1))
        if e.label is Label.HFO:
            img[4:8] += 0.6
        images[e.id] = img
    cfg = TrainConfig(batch_size=5, max_epochs=3, patience=2, image_size=24, color_set="R",
                      filters=(2, 2, 2), dense_units=4, seed=5)
    return manifest, ArrayLoader(images), cfg


def test_experiment_report_shape(tiny_experiment):
    manifest, loader, cfg = tiny_experiment
    rep = run_experiment(manifest, loader, cfg, n_runs=3, color_sets=["R", "G"])
    assert list(rep.summary) == ["R", "G"]
    for per in rep.summary.values():
        assert tuple(per) == METRIC_NAMES
    assert len(rep.runs) == 6
    assert len({r.split_hash for r in rep.runs}) == 3
    rows = list(rep.history_rows())
    assert all(len(r) == 6 for r in rows)


def test_experiment_deterministic_and_resumable(tiny_experiment, tmp_path):
    manifest, loader, cfg = tiny_experiment
    a = run_experiment(manifest, loader, cfg, n_runs=2)
    b = run_experiment(manifest, loader, cfg, n_runs=2, run_dir=tmp_path)
    assert a.summary == b.summary
    (tmp_path / "run_000.json").unlink()
    c = run_experiment(manifest, loader, cfg, n_runs=2, run_dir=tmp_path)
    assert c.summary == a.summary


def test_experiment_parallel_matches_serial(tiny_experiment):
    manifest, loader, cfg = tiny_experiment
    a = run_experiment(manifest, loader, cfg, n_runs=2)
    b = run_experiment(manifest, loader, cfg, n_runs=2, workers=2)
    assert a.summary == b.summary


def test_experiment_needs_two_runs(tiny_experiment):
    manifest, loader, cfg = tiny_experiment
    with pytest.raises(TooFewRuns):
        run_experiment(manifest, loader, cfg, n_runs=1)
