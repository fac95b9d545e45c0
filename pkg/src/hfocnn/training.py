"""Splitting, loss, optimisation, early stopping and the repeated-split
experiment protocol."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .cnn import Network, build_network
from .dataset import DatasetManifest
from .errors import ClassTooSmall, ConfigError, DomainError, EmptySplit, ShapeMismatch, TooFewRuns
from .metrics import METRIC_NAMES, MetricSet, Summary, aggregate, compute_metrics, confusion
from .tf_imaging import ColorSet, Label

P_CLAMP = 1e-12
TEST_FRACTION = 0.20
VAL_FRACTION = 0.20


# --- splitting ------------------------------------------------------------

def stratified_split(manifest: DatasetManifest, seed: int):
    """Per-class seeded shuffle; test takes floor(20%) of the class, then
    validation takes floor(20%) of what remains, training keeps the rest.

    Returns three manifests (train, validation, test).
    """
    train, val, test = [], [], []
    for k, label in enumerate((Label.HFO, Label.NHFO)):
        members = [e for e in manifest if e.label is label]
        if len(members) < 5:
            raise ClassTooSmall(f"class {label.name} has {len(members)} entries; need >= 5")
        rng = np.random.default_rng([int(seed), k])
        order = rng.permutation(len(members))
        members = [members[i] for i in order]
        n_test = math.floor(TEST_FRACTION * len(members))
        n_val = math.floor(VAL_FRACTION * (len(members) - n_test))
        test += members[:n_test]
        val += members[n_test:n_test + n_val]
        train += members[n_test + n_val:]
    return DatasetManifest(train), DatasetManifest(val), DatasetManifest(test)


def split_hash(split) -> str:
    h = hashlib.sha256()
    for part in split:
        h.update(",".join(sorted(part.ids)).encode())
        h.update(b"|")
    return h.hexdigest()


# --- loss -----------------------------------------------------------------

def bce_loss(pred, target):
    """Binary cross-entropy averaged over the output units.

    Works on one 2-vector or a ``(N, 2)`` batch (then also averaged over
    samples). Returns ``(loss, dloss/dpred)``.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs target {t.shape}")
    if not np.all((p >= 0) & (p <= 1)):
        raise DomainError("predictions must lie in [0, 1]")
    p = np.clip(p, P_CLAMP, 1 - P_CLAMP)
    n = p.size
    loss = -np.sum(t * np.log(p) + (1 - t) * np.log1p(-p)) / n
    grad = (p - t) / (p * (1 - p)) / n
    return float(loss), grad


def one_hot(labels, n_classes=2):
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def predict_labels(probs) -> np.ndarray:
    """Argmax of the outputs; ties resolve to index 0 (NHFO)."""
    return np.asarray(probs).argmax(axis=1)


# --- optimiser ------------------------------------------------------------

@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7


class Adam:
    def __init__(self, params, hyper: AdamConfig = AdamConfig()):
        self.hyper = hyper
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        """In-place update of ``params``."""
        if len(params) != len(grads) or len(params) != len(self.m):
            raise ShapeMismatch("parameter, gradient and state lists differ in length")
        h = self.hyper
        self.t += 1
        c1 = 1 - h.beta1 ** self.t
        c2 = 1 - h.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape or p.shape != m.shape:
                raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape}")
            m *= h.beta1
            m += (1 - h.beta1) * g
            v *= h.beta2
            v += (1 - h.beta2) * g * g
            p -= h.learning_rate * (m / c1) / (np.sqrt(v / c2) + h.epsilon)


# --- early stopping -------------------------------------------------------

class EarlyStopping:
    """Stops after ``patience`` consecutive epochs without a strict
    decrease of the monitored validation loss."""

    def __init__(self, patience=4):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = None
        self.counter = 0

    def update(self, epoch, val_loss) -> bool:
        """Record one epoch (1-based); returns True if it is the new best."""
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.counter = 0
            return True
        self.counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.patience is not None and self.counter >= self.patience


# --- training -------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 20
    max_epochs: int = 10
    patience: int = 4
    early_stopping: bool = True
    seed: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    color_set: str = "RGB"
    arch: str = "A"
    variant: str = "relu-sigmoid"
    filters: tuple | None = None
    dense_units: int = 500
    image_size: int = 256

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be positive")
        if self.early_stopping and self.patience >= self.max_epochs:
            raise ConfigError(
                f"patience ({self.patience}) must be < max_epochs ({self.max_epochs})")
        ColorSet.parse(self.color_set)

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.epsilon)

    def build_network(self, seed) -> Network:
        cs = ColorSet.parse(self.color_set)
        return build_network(self.arch, (self.image_size, self.image_size, cs.n_channels),
                             dense_units=self.dense_units, variant=self.variant,
                             filters=self.filters, seed=seed)

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.val_loss)


def evaluate(net: Network, x, y, batch_size=64):
    """Mean loss and accuracy over a labelled set."""
    probs = net.predict_proba(x, batch_size)
    loss, _ = bce_loss(probs, one_hot(y))
    acc = float(np.mean(predict_labels(probs) == y))
    return loss, acc


def train(x_train, y_train, x_val, y_val, config: TrainConfig, net: Network | None = None,
          on_epoch_end: Callable | None = None, evaluate_fn=evaluate):
    """Mini-batch Adam training with validation-loss early stopping.

    The returned network carries the weights of the best epoch.
    ``on_epoch_end(epoch, net, history)`` is called after every epoch.
    """
    x_train, x_val = np.asarray(x_train, dtype=np.float64), np.asarray(x_val, dtype=np.float64)
    y_train, y_val = np.asarray(y_train, dtype=int), np.asarray(y_val, dtype=int)
    if len(y_train) == 0:
        raise EmptySplit("training split is empty")
    if len(y_val) == 0:
        raise EmptySplit("validation split is empty")
    init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    if net is None:
        net = config.build_network(np.random.default_rng(init_seq))
    rng = np.random.default_rng(shuffle_seq)
    params = net.parameters()
    opt = Adam(params, config.adam)
    stopper = EarlyStopping(config.patience if config.early_stopping else None)
    history = TrainHistory()
    best_weights = net.get_weights()
    targets = one_hot(y_train)
    n = len(y_train)

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            probs, cache = net.forward(x_train[idx])
            loss, dprobs = bce_loss(probs, targets[idx])
            opt.step(params, net.backward(cache, dprobs))
            total += loss * len(idx)
        val_loss, val_acc = evaluate_fn(net, x_val, y_val)
        history.train_loss.append(total / n)
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)
        if stopper.update(epoch, val_loss):
            best_weights = net.get_weights()
        if on_epoch_end is not None:
            on_epoch_end(epoch, net, history)
        if stopper.should_stop:
            history.stopped_early = epoch < config.max_epochs
            break

    history.best_epoch = stopper.best_epoch
    net.set_weights(best_weights)
    return net, history


# --- experiment -----------------------------------------------------------

@dataclass
class RunResult:
    run_id: int
    color_set: str
    split_hash: str
    confusion: dict
    metrics: dict
    history: dict


@dataclass
class ExperimentReport:
    config: dict
    runs: list
    summary: dict  # color set -> metric -> Summary

    def history_rows(self):
        for r in self.runs:
            h = r.history
            for e in range(len(h["val_loss"])):
                yield (r.run_id, r.color_set, e + 1, h["train_loss"][e],
                       h["val_loss"][e], h["val_acc"][e])


def _run_one(run_id, manifest, load_images, config: TrainConfig, color_sets):
    seed = config.seed + run_id
    split = stratified_split(manifest, seed)
    shash = split_hash(split)
    results = []
    for cs in color_sets:
        cfg = replace(config, color_set=cs, seed=seed)
        (xtr, ytr), (xva, yva), (xte, yte) = (load_images(part, cs) for part in split)
        net, hist = train(xtr, ytr, xva, yva, cfg)
        pred = predict_labels(net.predict_proba(xte))
        cm = confusion([Label(int(p)) for p in pred], [Label(int(t)) for t in yte])
        results.append(RunResult(run_id, cs, shash, asdict(cm),
                                 compute_metrics(cm).as_dict(), asdict(hist)))
    return results


def run_experiment(manifest: DatasetManifest, load_images, config: TrainConfig,
                   n_runs: int = 12, color_sets=None, run_dir=None, workers: int = 1):
    """Repeat split -> train -> test ``n_runs`` times, run ``i`` fully
    reseeded with ``config.seed + i``.

    ``load_images(manifest_part, color_set)`` must return ``(x, y)`` arrays.
    With ``run_dir`` set, each finished run is stored there as JSON and
    reused on a later call with the same configuration.
    """
    if n_runs < 2:
        raise TooFewRuns(f"an experiment needs at least 2 runs, got {n_runs}")
    color_sets = [ColorSet.parse(c).name for c in (color_sets or [config.color_set])]
    cfg_dict = {"train": config.as_dict(), "n_runs": n_runs, "color_sets": color_sets}
    cfg_key = hashlib.sha256(json.dumps(cfg_dict, sort_keys=True).encode()).hexdigest()[:16]

    done = {}
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        for i in range(n_runs):
            path = run_dir / f"run_{i:03d}.json"
            if path.exists():
                blob = json.loads(path.read_text())
                if blob.get("config_key") == cfg_key:
                    done[i] = [RunResult(**r) for r in blob["results"]]

    todo = [i for i in range(n_runs) if i not in done]

    def finish(i, results):
        done[i] = results
        if run_dir is not None:
            blob = {"config_key": cfg_key, "results": [asdict(r) for r in results]}
            (run_dir / f"run_{i:03d}.json").write_text(json.dumps(blob, sort_keys=True))

    if workers > 1 and len(todo) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            futures = {i: pool.submit(_run_one, i, manifest, load_images, config, color_sets)
                       for i in todo}
            for i in todo:
                finish(i, futures[i].result())
    else:
        for i in todo:
            finish(i, _run_one(i, manifest, load_images, config, color_sets))

    runs = [r for i in range(n_runs) for r in done[i]]
    summary = {}
    for cs in color_sets:
        sets = [MetricSet(**r.metrics) for r in runs if r.color_set == cs]
        summary[cs] = aggregate(sets)
    return ExperimentReport(cfg_dict, runs, summary)


def summaries_to_dict(summary: dict) -> dict:
    return {cs: {m: asdict(s) for m, s in per.items()} for cs, per in summary.items()}


def summaries_from_dict(blob: dict) -> dict:
    return {cs: {m: Summary(**per[m]) for m in METRIC_NAMES} for cs, per in blob.items()}
