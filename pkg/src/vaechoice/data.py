"""Route-attribute schema, CSV ingestion, normalization, splitting and a
synthetic corpus generator.

Attribute vectors live in two spaces: *absolute* (the units of the schema,
all non-negative) used for choice-model estimation, and *normalized*
(per-attribute z-scores computed on the training split) used by the VAE.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from .errors import ConfigError, ParseError, SchemaError, ValidationError

SPLIT_COLUMN = "split"


@dataclass(frozen=True)
class AttributeSchema:
    names: tuple
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        stds = np.asarray(self.stds, dtype=np.float64)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)
        if len(set(self.names)) != len(self.names):
            raise SchemaError("attribute names must be unique")
        if means.shape != (len(self.names),) or stds.shape != means.shape:
            raise SchemaError("one mean and one std per attribute")
        if np.any(~(stds > 0)):
            bad = [n for n, s in zip(self.names, stds) if not s > 0]
            raise SchemaError(f"zero or negative standard deviation for {bad}")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown attribute {name!r}") from None

    @property
    def lower_bounds(self) -> np.ndarray:
        """Normalized image of absolute zero for every attribute."""
        return -self.means / self.stds

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "means": [float(x) for x in self.means],
            "stds": [float(x) for x in self.stds],
        }

    @classmethod
    def from_dict(cls, d) -> "AttributeSchema":
        return cls(tuple(d["names"]), d["means"], d["stds"])


ROUTE_SCHEMA = AttributeSchema(
    names=(
        "Route average intersection time",
        "Route length detour",
        "Route time detour",
        "Route links per km",
        "Route city node percentage",
        "Route percentage delay",
        "Route highway/expressway percentage",
        "Route left turn percentage",
        "Route average operating cost",
    ),
    means=[0.18, 1.11, 1.08, 4.42, 0.10, 1.85, 0.71, 0.11, 1.06],
    stds=[0.07, 0.21, 0.17, 2.21, 0.19, 0.61, 0.29, 0.09, 0.39],
)


@dataclass
class Corpus:
    """Chosen-alternative attribute rows in absolute space."""

    values: np.ndarray
    names: tuple = ROUTE_SCHEMA.names
    split: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.names = tuple(self.names)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise SchemaError(f"values shape {self.values.shape} does not match {len(self.names)} attributes")
        if self.split is not None:
            self.split = np.asarray(self.split, dtype=object)
            if self.split.shape != (len(self.values),):
                raise SchemaError("one split label per row")

    def __len__(self):
        return len(self.values)

    def _rows(self, label):
        if self.split is None:
            raise ConfigError("corpus has no train/test assignment; call split() first")
        return self.values[self.split == label]

    @property
    def train(self) -> np.ndarray:
        return self._rows("train")

    @property
    def test(self) -> np.ndarray:
        return self._rows("test")


# -- CSV ----------------------------------------------------------------------


def _format(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(corpus: Corpus, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = list(corpus.names) + ([SPLIT_COLUMN] if corpus.split is not None else [])
        w.writerow(header)
        for i, row in enumerate(corpus.values):
            cells = [_format(x) for x in row]
            if corpus.split is not None:
                cells.append(corpus.split[i])
            w.writerow(cells)


def load_csv(path, schema: AttributeSchema = ROUTE_SCHEMA) -> Corpus:
    """Read a corpus; columns may appear in any order, plus an optional split."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s): {', '.join(missing)}")
        cols = [header.index(n) for n in schema.names]
        split_col = header.index(SPLIT_COLUMN) if SPLIT_COLUMN in header else None
        rows, split = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            parsed = []
            for name, c in zip(schema.names, cols):
                try:
                    x = float(row[c])
                except (ValueError, IndexError):
                    cell = row[c] if c < len(row) else ""
                    raise ParseError(
                        f"{path}: row {lineno}, column {name!r}: not a number: {cell!r}",
                        row=lineno,
                        column=name,
                    ) from None
                if not math.isfinite(x):
                    raise ParseError(f"{path}: row {lineno}, column {name!r}: non-finite", lineno, name)
                if x < 0:
                    raise ValidationError(
                        f"{path}: row {lineno}, column {name!r}: negative value {x} in a non-negative attribute"
                    )
                parsed.append(x)
            rows.append(parsed)
            if split_col is not None:
                split.append(row[split_col].strip())
    values = np.array(rows, dtype=np.float64).reshape(-1, len(schema))
    return Corpus(values, schema.names, np.array(split, dtype=object) if split_col is not None else None)


def write_metadata(path, schema: AttributeSchema, **extra) -> None:
    """Sidecar with normalization constants and split provenance."""
    doc = {"schema": schema.to_dict(), **extra}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_metadata(path) -> tuple[AttributeSchema, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return AttributeSchema.from_dict(doc.pop("schema")), doc


# -- normalization --------------------------------------------------------------


def fit_normalization(corpus: Corpus) -> AttributeSchema:
    """z-score constants from the training split (all rows when unsplit)."""
    rows = corpus.values if corpus.split is None else corpus.train
    if len(rows) < 2:
        raise SchemaError("need at least two training rows to fit normalization")
    return AttributeSchema(corpus.names, rows.mean(axis=0), rows.std(axis=0, ddof=1))


def normalize(values, schema: AttributeSchema) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) - schema.means) / schema.stds


def denormalize(values, schema: AttributeSchema) -> np.ndarray:
    """Inverse z-score, clamped at zero (absolute attributes are non-negative)."""
    return np.maximum(np.asarray(values, dtype=np.float64) * schema.stds + schema.means, 0.0)


def split(corpus: Corpus, train_fraction: float, seed: int) -> Corpus:
    """Shuffle with ``seed`` and cut; the training part has ``floor(n * fraction)`` rows."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train fraction must lie in (0, 1), got {train_fraction}")
    n = len(corpus)
    order = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=object)
    n_train = int(math.floor(n * train_fraction))
    labels[order[:n_train]] = "train"
    labels[order[n_train:]] = "test"
    return replace(corpus, split=labels, meta={**corpus.meta, "split_seed": seed, "train_fraction": train_fraction})


# -- synthetic corpus -------------------------------------------------------------
#
# Three route clusters.  Within cluster k, attribute a is a Normal truncated at
# absolute zero whose location (in units of the target std) is
# ``shift_a + c[a, k]`` and whose scale is ``width_a * exp(tilt_a * c[a, k])``.
# ``shift_a`` and ``width_a`` are solved so the mixture's marginal mean and std
# equal the schema's.  The cluster signatures ``c`` make the clusters differ
# jointly across attributes.

CLUSTER_WEIGHTS = np.array([0.45, 0.35, 0.20])
CLUSTER_SIGNATURES = np.array(
    [
        [-1, 0, 1],
        [0, 1, -1],
        [1, -1, 0],
        [-1, 1, 0],
        [-1, 0, 1],
        [0, -1, 1],
        [1, 0, -1],
        [0, 1, -1],
        [-1, 1, 0],
    ],
    dtype=np.float64,
)
# heavily right-skewed columns (std > mean) need wider spread in the rarest cluster
_SKEW_TILT = 1.5


def _tilts(schema):
    return np.where(schema.stds > schema.means, _SKEW_TILT, 0.0)


def _mixture_moments(shift, width, lower, sig, tilt):
    m1 = m2 = 0.0
    for k, w in enumerate(CLUSTER_WEIGHTS):
        loc = shift + sig[k]
        scale = width * math.exp(tilt * sig[k])
        d = stats.truncnorm((lower - loc) / scale, np.inf, loc=loc, scale=scale)
        mu, var = d.mean(), d.var()
        m1 += w * mu
        m2 += w * (var + mu * mu)
    return m1, math.sqrt(max(m2 - m1 * m1, 0.0))


@lru_cache(maxsize=8)
def _calibrate(means: tuple, stds: tuple):
    schema = AttributeSchema(tuple(str(i) for i in range(len(means))), means, stds)
    lower = schema.lower_bounds
    tilt = _tilts(schema)
    shifts, widths = [], []
    for a in range(len(means)):
        sig = CLUSTER_SIGNATURES[a % len(CLUSTER_SIGNATURES)]

        def resid(p):
            m, s = _mixture_moments(p[0], math.exp(p[1]), lower[a], sig, tilt[a])
            return [m, s - 1.0]

        sol = optimize.least_squares(resid, [0.0, math.log(0.6)], xtol=1e-14, ftol=1e-14, gtol=1e-14)
        if np.max(np.abs(sol.fun)) > 1e-8:
            raise SchemaError(f"cannot calibrate synthetic mixture for attribute {a}")
        shifts.append(sol.x[0])
        widths.append(math.exp(sol.x[1]))
    return np.array(shifts), np.array(widths), tilt


def synth_corpus(n: int, seed: int, schema: AttributeSchema = ROUTE_SCHEMA) -> Corpus:
    """Draw ``n`` absolute attribute rows from the calibrated cluster mixture."""
    if n < 1:
        raise ConfigError("corpus size must be at least 1")
    shifts, widths, tilt = _calibrate(tuple(schema.means), tuple(schema.stds))
    lower = schema.lower_bounds
    d = len(schema)
    rng = np.random.default_rng(seed)
    cluster = rng.choice(len(CLUSTER_WEIGHTS), size=n, p=CLUSTER_WEIGHTS)
    u = rng.random((n, d))
    sig = CLUSTER_SIGNATURES[np.arange(d) % len(CLUSTER_SIGNATURES)][:, cluster].T  # (n, d)
    loc = shifts + sig
    scale = widths * np.exp(tilt * sig)
    z = stats.truncnorm.ppf(u, (lower - loc) / scale, np.inf, loc=loc, scale=scale)
    values = np.maximum(schema.means + schema.stds * z, 0.0)
    return Corpus(values, schema.names, meta={"synthetic_seed": seed, "cluster": cluster})
