"""Command-line entry point.

Everything lives under one working directory (``--out``)::

    <out>/dataset/     manifest.csv, dataset.json, signals/*.eegs
    <out>/images/      <COLOR_SET>/<id>.tfim (+ optional png/)
    <out>/train/       model.hfon, history.csv, train_predictions.csv,
                       test_metrics.csv, split/
    <out>/experiment/  runs/, history.csv, report.csv, report.txt, report.json

Each stage directory carries a ``checksums.sha256`` that ``verify``
recomputes. Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cnn import build_network, load_model, save_model
from .config import PipelineConfig, load_config, with_seed
from .dataset import DatasetManifest
from .eeg_signal import read_eegs, write_eegs
from .errors import DataError, DimMismatch, HFOError
from .metrics import compute_metrics, confusion, report_csv, report_table
from .pipeline import record_to_images
from .synth import build_dataset
from .tf_imaging import ColorSet, Label, read_tfim, write_png, write_tfim
from .training import (
    predict_labels,
    run_experiment,
    split_hash,
    stratified_split,
    summaries_to_dict,
    train,
)

log = logging.getLogger("hfocnn")

HISTORY_COLUMNS = ("run_id", "color_set", "epoch", "train_loss", "val_loss", "val_acc")


# --- helpers --------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_checksums(stage_dir: Path) -> None:
    stage_dir = Path(stage_dir)
    files = sorted(p for p in stage_dir.rglob("*")
                   if p.is_file() and p.name != "checksums.sha256")
    lines = [f"{_sha256(p)}  {p.relative_to(stage_dir).as_posix()}" for p in files]
    (stage_dir / "checksums.sha256").write_text("\n".join(lines) + "\n")


def verify_checksums(root: Path) -> list[str]:
    """Returns a list of problems (empty when everything matches)."""
    problems = []
    sums = sorted(Path(root).rglob("checksums.sha256"))
    if not sums:
        problems.append(f"no checksums.sha256 found under {root}")
    for sum_file in sums:
        base = sum_file.parent
        for line in sum_file.read_text().splitlines():
            if not line.strip():
                continue
            digest, rel = line.split("  ", 1)
            target = base / rel
            if not target.exists():
                problems.append(f"missing: {target}")
            elif _sha256(target) != digest:
                problems.append(f"checksum mismatch: {target}")
    return problems


def _csv_tuple(cast):
    def parse(s):
        try:
            return tuple(cast(v) for v in s.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated values, got {s!r}")
    return parse


def _color_sets(arg) -> list[str]:
    if arg is None:
        return None
    if arg.lower() == "all":
        return [c.name for c in ColorSet]
    return [ColorSet.parse(s.strip()).name for s in arg.split(",")]


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


class TensorLoader:
    """Loads ``(x, y)`` for a manifest subset from the TFIM tree.

    Picklable, so experiment runs can be farmed out to worker processes.
    """

    def __init__(self, images_dir):
        self.images_dir = Path(images_dir)

    def path(self, entry_id, color_set) -> Path:
        return self.images_dir / color_set / f"{entry_id}.tfim"

    def __call__(self, part: DatasetManifest, color_set: str):
        xs, ys = [], []
        for e in part:
            p = self.path(e.id, color_set)
            if not p.exists():
                raise DataError(f"missing tensor {p}; run `preprocess` first")
            xs.append(read_tfim(p).pixels)
            ys.append(int(e.label))
        if not xs:
            return np.empty((0,)), np.empty((0,), dtype=int)
        return np.stack(xs), np.asarray(ys, dtype=int)


# --- configuration from args ---------------------------------------------

def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    synth, pre, tr = cfg.synth, cfg.preprocess, cfg.train
    s_over = {k: getattr(args, a) for k, a in (
        ("n_per_class", "n_per_class"), ("hfo_freq_range_hz", "freq_range"),
        ("hfo_duration_ms", "duration_range"), ("snr_db_range", "snr_range"),
        ("spike_rate_per_s", "spike_rate"), ("min_cycles", "min_cycles"),
        ("record_s", "record_s")) if getattr(args, a, None) is not None}
    if s_over:
        synth = replace(synth, **s_over)
    if getattr(args, "image_size", None) is not None:
        pre = replace(pre, image_size=args.image_size)
    t_over = {k: getattr(args, a) for k, a in (
        ("batch_size", "batch_size"), ("max_epochs", "epochs"), ("patience", "patience"),
        ("learning_rate", "lr"), ("arch", "arch"), ("variant", "variant"),
        ("filters", "filters"), ("dense_units", "dense_units"))
        if getattr(args, a, None) is not None}
    if getattr(args, "no_early_stopping", False):
        t_over["early_stopping"] = False
    if getattr(args, "color_set", None):
        t_over["color_set"] = _color_sets(args.color_set)[0]
    # the network input always follows the rendered image size
    t_over["image_size"] = pre.image_size
    tr = replace(tr, **t_over)
    return PipelineConfig(synth, pre, tr, cfg.seed)


# --- commands -------------------------------------------------------------

def cmd_synth(args, cfg: PipelineConfig) -> int:
    out = Path(args.out) / "dataset"
    sig_dir = out / "signals"
    sig_dir.mkdir(parents=True, exist_ok=True)
    signals, manifest = build_dataset(cfg.synth)
    files = []
    for sig, entry in zip(signals, manifest):
        rel = f"signals/{entry.id}.eegs"
        write_eegs(out / rel, sig)
        files.append(rel)
    manifest = manifest.with_signal_files(files)
    manifest.write_csv(out / "manifest.csv")
    _dump_json(out / "dataset.json", {"seed": cfg.synth.seed, "synth": cfg.synth.as_dict()})
    write_checksums(out)
    counts = manifest.class_counts
    print(f"wrote {len(manifest)} records ({counts[Label.HFO]} HFO, "
          f"{counts[Label.NHFO]} NHFO) to {out}")
    return 0


def _load_manifest(root: Path) -> DatasetManifest:
    path = root / "dataset" / "manifest.csv"
    if not path.exists():
        raise DataError(f"no dataset at {path}; run `synth` first")
    return DatasetManifest.read_csv(path)


def cmd_preprocess(args, cfg: PipelineConfig) -> int:
    root = Path(args.out)
    manifest = _load_manifest(root)
    img_dir = root / "images"
    for cs in ColorSet:
        (img_dir / cs.name).mkdir(parents=True, exist_ok=True)
        if args.png:
            (img_dir / "png" / cs.name).mkdir(parents=True, exist_ok=True)

    def work(entry):
        try:
            record = read_eegs(root / "dataset" / entry.signal_file)
            images = record_to_images(record, entry.center_sample, cfg.preprocess, entry.label)
        except FileNotFoundError as exc:
            raise DataError(f"entry {entry.id}: {exc}") from None
        except HFOError as exc:
            raise type(exc)(f"entry {entry.id}: {exc}") from exc
        for cs, img in images.items():
            write_tfim(img_dir / cs.name / f"{entry.id}.tfim", img)
            if args.png:
                write_png(img_dir / "png" / cs.name / f"{entry.id}.png", img)
        return entry.id

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        done = list(pool.map(work, manifest))
    _dump_json(img_dir / "images.json", {"seed": cfg.seed,
                                         "preprocess": cfg.as_dict()["preprocess"]})
    write_checksums(img_dir)
    print(f"wrote {len(done) * len(ColorSet)} tensors "
          f"({len(done)} entries x {len(ColorSet)} color sets) to {img_dir}")
    return 0


def _write_split_tree(base: Path, split) -> None:
    # mirrors the train/validation/test x HFO/NHFO tree as id listings
    for name, part in zip(("train", "validation", "test"), split):
        for label in (Label.HFO, Label.NHFO):
            d = base / name
            d.mkdir(parents=True, exist_ok=True)
            ids = [e.id for e in part if e.label is label]
            (d / f"{label.name}.txt").write_text("".join(i + "\n" for i in ids))


def _describe(cfg: PipelineConfig, channels=None) -> str:
    tr = cfg.train
    n_c = channels or ColorSet.parse(tr.color_set).n_channels
    net = build_network(tr.arch, (tr.image_size, tr.image_size, n_c),
                        dense_units=tr.dense_units, variant=tr.variant, filters=tr.filters)
    return net.describe()


def cmd_train(args, cfg: PipelineConfig) -> int:
    if args.describe:
        print(_describe(cfg, args.channels))
        return 0
    root = Path(args.out)
    manifest = _load_manifest(root)
    tr = cfg.train
    split = stratified_split(manifest, tr.seed)
    loader = TensorLoader(root / "images")
    (xtr, ytr), (xva, yva), (xte, yte) = (loader(p, tr.color_set) for p in split)
    out = root / "train"
    out.mkdir(parents=True, exist_ok=True)
    _write_split_tree(out / "split", split)

    def progress(epoch, net, hist):
        log.info("epoch %d: train_loss=%.4f val_loss=%.4f val_acc=%.4f", epoch,
                 hist.train_loss[-1], hist.val_loss[-1], hist.val_acc[-1])

    net, hist = train(xtr, ytr, xva, yva, tr, on_epoch_end=progress)
    meta = {"seed": tr.seed, "config": cfg.as_dict(), "split_hash": split_hash(split),
            "best_epoch": hist.best_epoch}
    save_model(out / "model.hfon", net, meta)
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for e in range(hist.epochs):
            w.writerow([0, tr.color_set, e + 1, repr(hist.train_loss[e]),
                        repr(hist.val_loss[e]), repr(hist.val_acc[e])])
    # training-set predictions in the same format `classify` emits
    _write_predictions(out / "train_predictions.csv", [e.id for e in split[0]],
                       net.predict_proba(xtr))
    cm = None
    if len(yte):
        pred = predict_labels(net.predict_proba(xte))
        cm = confusion([Label(int(p)) for p in pred], [Label(int(t)) for t in yte])
        metrics = compute_metrics(cm)
        with open(out / "test_metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "color_set", "value", "tp", "fp", "tn", "fn"])
            for name, v in metrics.as_dict().items():
                w.writerow([name, tr.color_set, "" if v is None else repr(v),
                            cm.tp, cm.fp, cm.tn, cm.fn])
    _dump_json(out / "train.json", meta)
    write_checksums(out)
    print(f"best epoch {hist.best_epoch} of {hist.epochs} "
          f"(val_loss={min(hist.val_loss):.4f}); model saved to {out / 'model.hfon'}")
    if cm is not None:
        print(f"test: tp={cm.tp} fp={cm.fp} tn={cm.tn} fn={cm.fn}")
    return 0


def cmd_experiment(args, cfg: PipelineConfig) -> int:
    root = Path(args.out)
    manifest = _load_manifest(root)
    color_sets = _color_sets(args.color_set) or [cfg.train.color_set]
    out = root / "experiment"
    out.mkdir(parents=True, exist_ok=True)
    report = run_experiment(manifest, TensorLoader(root / "images"), cfg.train,
                            n_runs=args.runs, color_sets=color_sets,
                            run_dir=out / "runs", workers=max(1, args.threads))
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in report.history_rows():
            w.writerow([row[0], row[1], row[2]] + [repr(v) for v in row[3:]])
    (out / "report.csv").write_text(report_csv(report.summary))
    header = (f"seed: {cfg.train.seed}\nruns: {args.runs}\n"
              "note: every run reseeds split, initialisation and shuffling (seed + run index)\n\n")
    table = report_table(report.summary, "se") + "\n" + report_table(report.summary, "sd")
    (out / "report.txt").write_text(header + table)
    _dump_json(out / "report.json", {
        "seed": cfg.train.seed, "config": cfg.as_dict(), "experiment": report.config,
        "split_hashes": sorted({r.split_hash for r in report.runs}),
        "summary": summaries_to_dict(report.summary)})
    write_checksums(out)
    print(header + table, end="")
    return 0


PREDICTION_COLUMNS = ("id", "p_HFO", "p_NHFO", "label")


def _prediction_rows(ids, probs):
    for entry_id, p, k in zip(ids, probs, predict_labels(probs)):
        yield [entry_id, repr(float(p[Label.HFO])), repr(float(p[Label.NHFO])), Label(int(k)).name]


def _write_predictions(path, ids, probs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        w.writerows(_prediction_rows(ids, probs))


def cmd_classify(args, cfg: PipelineConfig) -> int:
    net = load_model(args.model)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for path in args.tensors:
            img = read_tfim(path)
            if img.shape != net.input_shape:
                raise DimMismatch(f"{path}: tensor shape {img.shape} does not match "
                                  f"model input {net.input_shape}")
            w.writerows(_prediction_rows([Path(path).stem], net.predict_proba(img.pixels)))
    finally:
        if args.output:
            out.close()
    return 0


def cmd_describe(args, cfg: PipelineConfig) -> int:
    print(_describe(cfg, args.channels))
    return 0


def cmd_verify(args, cfg: PipelineConfig) -> int:
    problems = verify_checksums(Path(args.path or args.out))
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        return 3
    print("all checksums match")
    return 0


# --- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="base seed for every generator")
    common.add_argument("--out", default="hfo_work", help="working directory")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--color-set", help="rgb, r, g, b, hsv (comma list or 'all' "
                                            "for experiment)")
    common.add_argument("-v", "--verbose", action="store_true")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--arch", choices=["A", "B"], type=str.upper)
    model.add_argument("--variant", choices=["relu-sigmoid", "leaky-softmax"])
    model.add_argument("--filters", type=_csv_tuple(int),
                       help="override conv filter counts, e.g. 8,16,32")
    model.add_argument("--dense-units", type=int)
    model.add_argument("--image-size", type=int)
    model.add_argument("--channels", type=int, choices=[1, 3],
                       help="input channels for --describe")

    fit = argparse.ArgumentParser(add_help=False)
    fit.add_argument("--batch-size", type=int)
    fit.add_argument("--epochs", type=int)
    fit.add_argument("--patience", type=int)
    fit.add_argument("--lr", type=float)
    fit.add_argument("--no-early-stopping", action="store_true")

    parser = argparse.ArgumentParser(prog="hfocnn", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a labelled synthetic dataset")
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--freq-range", type=_csv_tuple(float), metavar="LO,HI")
    p.add_argument("--duration-range", type=_csv_tuple(float), metavar="LO,HI")
    p.add_argument("--snr-range", type=_csv_tuple(float), metavar="LO,HI")
    p.add_argument("--spike-rate", type=float)
    p.add_argument("--min-cycles", type=int)
    p.add_argument("--record-s", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="records -> TF image tensors")
    p.add_argument("--image-size", type=int)
    p.add_argument("--png", action="store_true", help="also export 8-bit PNGs")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common, model, fit], help="train one model")
    p.add_argument("--describe", action="store_true",
                   help="print the layer table and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", parents=[common, model, fit],
                       help="repeated-split experiment and metrics report")
    p.add_argument("--runs", type=int, default=12)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("classify", parents=[common], help="classify tensor files")
    p.add_argument("model")
    p.add_argument("tensors", nargs="*")
    p.add_argument("--output", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("describe", parents=[common, model], help="print the layer table")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("verify", parents=[common], help="recompute artifact checksums")
    p.add_argument("path", nargs="?")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except HFOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
