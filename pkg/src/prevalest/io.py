"""CSV ingestion and export, plus the key=value run configuration."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from prevalest.core import LabeledDataset, UnlabeledDataset
from prevalest.errors import InvalidInputError

log = logging.getLogger(__name__)

LABEL_COLUMN = "label"


def fmt(value) -> str:
    """17-significant-digit decimal, enough to round-trip any double."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    return format(value, ".17g")


def _parse_cell(text, row, line, column):
    where = f"row {row} (line {line}), column {column!r}"
    try:
        value = float(text)
    except ValueError:
        raise InvalidInputError(f"{where}: non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise InvalidInputError(f"{where}: non-finite value {text!r}")
    return value


def ingest_csv(path, role: str = "train"):
    """Read a training (``LabeledDataset``) or test (``UnlabeledDataset``) CSV.

    Training files need a final ``label`` column of integers ``1..l``; every
    other column is a numeric feature. A ``label`` column in a test file is
    dropped with a warning.
    """
    if role not in ("train", "test"):
        raise InvalidInputError(f"role must be 'train' or 'test', got {role!r}")
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"{path}: no such file")
    with path.open(newline="") as fh:
        rows = [(n, r) for n, r in enumerate(csv.reader(fh), start=1) if r and not r[0].startswith("#")]
    if not rows:
        raise InvalidInputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0][1]]
    body = rows[1:]
    if not body:
        raise InvalidInputError(f"{path}: no data rows")
    label_idx = header.index(LABEL_COLUMN) if LABEL_COLUMN in header else None
    if role == "train" and label_idx != len(header) - 1:
        raise InvalidInputError(f"{path}: training file needs a last column named {LABEL_COLUMN!r}")
    if role == "test" and label_idx is not None:
        log.warning("%s: ignoring %r column in test data", path, LABEL_COLUMN)
    feature_idx = [i for i in range(len(header)) if i != label_idx]
    if not feature_idx:
        raise InvalidInputError(f"{path}: no feature columns")
    features = np.empty((len(body), len(feature_idx)))
    labels = np.empty(len(body), dtype=int)
    for r, (line, row) in enumerate(body, start=1):
        if len(row) != len(header):
            raise InvalidInputError(f"{path}: row {r} (line {line}) has {len(row)} cells, header has {len(header)}")
        for j, i in enumerate(feature_idx):
            features[r - 1, j] = _parse_cell(row[i].strip(), r, line, header[i])
        if role == "train":
            value = _parse_cell(row[label_idx].strip(), r, line, LABEL_COLUMN)
            if value != int(value) or value < 1:
                raise InvalidInputError(f"{path}: row {r} (line {line}): label must be a positive integer, "
                                        f"got {row[label_idx]!r}")
            labels[r - 1] = int(value)
    if role == "test":
        return UnlabeledDataset(features)
    return LabeledDataset(features, labels, int(labels.max()))


def feature_names(d: int) -> list[str]:
    return ["x"] if d == 1 else [f"x{i + 1}" for i in range(d)]


def write_dataset_csv(data, path) -> None:
    d = data.features.shape[1]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        labeled = isinstance(data, LabeledDataset)
        w.writerow(feature_names(d) + ([LABEL_COLUMN] if labeled else []))
        for i, row in enumerate(data.features):
            cells = [fmt(v) for v in row]
            if labeled:
                cells.append(str(int(data.labels[i])))
            w.writerow(cells)


def write_report(lines: Iterable[list], header: list[str], config: "RunConfig", out) -> None:
    """Write the config comment header, the column header and the rows."""
    out.write(config.header())
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in lines:
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])


def parse_config_file(path) -> dict[str, str]:
    """Plain ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"{path}: config file not found")
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}: line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


@dataclass
class RunConfig:
    command: str
    values: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def header(self) -> str:
        lines = [f"# prevalest {self.command}"]
        for key in sorted(self.values):
            value = self.values[key]
            lines.append(f"# {key}={'' if value is None else value}")
        return "\n".join(lines) + "\n"
