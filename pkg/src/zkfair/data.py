"""Datasets: schema-driven CSV ingestion and a seeded synthetic generator.

A dataset row is (features, label, group): features are min-max normalized
into [0, 1] with the normalization constants persisted in the schema, the
label is binary, and the sensitive attribute is one of the feature columns
(group codes {0, 1}, so its normalized value is exactly 0.0 or 1.0 and its
fixed-point encoding is exactly 0 or 2^f).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError

GROUP_A = 0
GROUP_B = 1


@dataclass
class DatasetSchema:
    feature_cols: list[str]
    label_col: str
    sensitive_col: str
    group_codes: dict[str, int]
    norm_mins: list[float] = field(default_factory=list)
    norm_ranges: list[float] = field(default_factory=list)

    @property
    def sensitive_index(self) -> int:
        return self.feature_cols.index(self.sensitive_col)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "DatasetSchema":
        return DatasetSchema(**json.loads(text))


@dataclass
class LabeledDataset:
    X: np.ndarray          # (n, F) float64 in [0, 1]
    y: np.ndarray          # (n,) int8 labels
    s: np.ndarray          # (n,) int8 group codes
    schema: DatasetSchema

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])

    def group_sizes(self) -> dict[int, int]:
        return {GROUP_A: int((self.s == GROUP_A).sum()),
                GROUP_B: int((self.s == GROUP_B).sum())}

    def require_both_groups(self):
        sizes = self.group_sizes()
        if sizes[GROUP_A] == 0 or sizes[GROUP_B] == 0:
            raise ConfigError("both sensitive groups must be nonempty")

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.X[idx], self.y[idx], self.s[idx], self.schema)


@dataclass(frozen=True)
class SynthParams:
    n: int = 2000
    seed: int = 0
    group_b_frac: float = 0.4
    base_rate_a: float = 0.55
    base_rate_b: float = 0.35
    n_informative: int = 4
    label_shift: float = 1.6
    group_shift: float = 0.5


def synth_dataset(params: SynthParams) -> LabeledDataset:
    """Biased two-group data: per-group base rates differ and feature
    clouds shift with both the label and the group, so an accuracy-optimal
    classifier picks up the group signal."""
    rng = np.random.default_rng(params.seed)
    n = params.n
    s = (rng.random(n) < params.group_b_frac).astype(np.int8)
    rate = np.where(s == GROUP_B, params.base_rate_b, params.base_rate_a)
    y = (rng.random(n) < rate).astype(np.int8)
    k = params.n_informative
    mu = (y[:, None] * params.label_shift
          + s[:, None] * params.group_shift * np.linspace(-1.0, 1.0, k)[None, :])
    Xi = rng.normal(mu, 1.0)
    mins = Xi.min(axis=0)
    ranges = Xi.max(axis=0) - mins
    ranges[ranges == 0] = 1.0
    Xi = (Xi - mins) / ranges
    X = np.column_stack([Xi, s.astype(np.float64)])
    cols = [f"x{i}" for i in range(k)] + ["group"]
    schema = DatasetSchema(
        feature_cols=cols, label_col="label", sensitive_col="group",
        group_codes={"a": GROUP_A, "b": GROUP_B},
        norm_mins=[*mins.tolist(), 0.0],
        norm_ranges=[*ranges.tolist(), 1.0],
    )
    ds = LabeledDataset(X=X, y=y, s=s, schema=schema)
    ds.require_both_groups()
    return ds


def write_csv(ds: LabeledDataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*ds.schema.feature_cols, ds.schema.label_col])
        inv = {v: k for k, v in ds.schema.group_codes.items()}
        mins = np.asarray(ds.schema.norm_mins)
        ranges = np.asarray(ds.schema.norm_ranges)
        raw = ds.X * ranges + mins
        sidx = ds.schema.sensitive_index
        for i in range(ds.n):
            row = [f"{v:.10g}" for v in raw[i]]
            row[sidx] = inv[int(ds.s[i])]
            row.append(int(ds.y[i]))
            w.writerow(row)


def load_csv(path, schema: DatasetSchema, refit_normalization: bool | None = None) -> LabeledDataset:
    """Ingest a CSV with a header row.  If the schema carries no
    normalization constants they are fitted from this file and recorded."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ConfigError("empty dataset file")
    sidx = schema.sensitive_index
    n = len(rows)
    F = len(schema.feature_cols)
    X = np.empty((n, F))
    y = np.empty(n, dtype=np.int8)
    s = np.empty(n, dtype=np.int8)
    for i, row in enumerate(rows):
        for j, col in enumerate(schema.feature_cols):
            if j == sidx:
                code = schema.group_codes.get(str(row[col]).strip())
                if code is None:
                    raise ConfigError(f"unknown group value {row[col]!r}")
                X[i, j] = float(code)
                s[i] = code
            else:
                X[i, j] = float(row[col])
        lab = int(float(row[schema.label_col]))
        if lab not in (0, 1):
            raise ConfigError("labels must be binary")
        y[i] = lab
    fit = refit_normalization if refit_normalization is not None else not schema.norm_mins
    if fit:
        mins = X.min(axis=0)
        ranges = X.max(axis=0) - mins
        ranges[ranges == 0] = 1.0
        mins[sidx], ranges[sidx] = 0.0, 1.0
        schema.norm_mins = mins.tolist()
        schema.norm_ranges = ranges.tolist()
    mins = np.asarray(schema.norm_mins)
    ranges = np.asarray(schema.norm_ranges)
    X = np.clip((X - mins) / ranges, 0.0, 1.0)
    ds = LabeledDataset(X=X, y=y, s=s, schema=schema)
    ds.require_both_groups()
    return ds
