"""Dataset manifest: one row per labelled segment, persisted as CSV."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, replace

from .errors import FormatError
from .tf_imaging import Label

MANIFEST_COLUMNS = ("id", "label", "freq_hz", "duration_ms", "snr_db",
                    "center_sample", "signal_file")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    label: Label
    center_sample: int
    freq_hz: float | None = None
    duration_ms: float | None = None
    snr_db: float | None = None
    signal_file: str = ""


class DatasetManifest:
    def __init__(self, entries):
        self.entries = list(entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def class_counts(self) -> dict[Label, int]:
        counts = Counter(e.label for e in self.entries)
        return {Label.HFO: counts[Label.HFO], Label.NHFO: counts[Label.NHFO]}

    @property
    def ids(self):
        return [e.id for e in self.entries]

    def subset(self, ids) -> "DatasetManifest":
        by_id = {e.id: e for e in self.entries}
        return DatasetManifest(by_id[i] for i in ids)

    def with_signal_files(self, files) -> "DatasetManifest":
        return DatasetManifest(replace(e, signal_file=f) for e, f in zip(self.entries, files))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_COLUMNS)
            for e in self.entries:
                writer.writerow([e.id, e.label.name, _fmt(e.freq_hz), _fmt(e.duration_ms),
                                 _fmt(e.snr_db), e.center_sample, e.signal_file])

    @classmethod
    def read_csv(cls, path) -> "DatasetManifest":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
                raise FormatError(f"{path}: manifest columns must be {MANIFEST_COLUMNS}")
            entries = [
                ManifestEntry(
                    id=row["id"], label=Label.parse(row["label"]),
                    center_sample=int(row["center_sample"]),
                    freq_hz=_opt(row["freq_hz"]), duration_ms=_opt(row["duration_ms"]),
                    snr_db=_opt(row["snr_db"]), signal_file=row["signal_file"])
                for row in reader
            ]
        return cls(entries)


def _fmt(v):
    return "" if v is None else repr(float(v))


def _opt(s):
    return float(s) if s else None

