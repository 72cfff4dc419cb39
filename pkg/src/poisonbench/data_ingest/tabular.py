"""Synthetic insurance claims, canonical CSV I/O, and one-hot/standard encoding."""

from __future__ import annotations

import csv
import io
import os
import warnings
from pathlib import Path

import numpy as np

from poisonbench.data_ingest.types import CATEGORICAL, NUMERIC, EncodedMatrix, TabularDataset
from poisonbench.errors import FormatError, PoisonBenchWarning, ValidationError

LABEL_COLUMN = "is_fraud"
ID_COLUMN = "claim_id"

CLAIMS_SCHEMA = (
    ("claim_amount", NUMERIC),
    ("filing_delay_days", NUMERIC),
    ("claimant_history_score", NUMERIC),
    ("claim_type", CATEGORICAL),
    ("region", CATEGORICAL),
)

# Generator parameters, (legitimate, fraudulent). The fraud signal is spread
# over every column so that no single feature separates the classes, but a
# shallow tree on the joint features does.
CLAIM_TYPES = ("auto", "health", "home", "travel")
CLAIM_TYPE_PROBS = ((0.40, 0.25, 0.30, 0.05), (0.30, 0.20, 0.20, 0.30))
REGIONS = ("central", "east", "north", "south", "west")
REGION_PROBS = ((0.20, 0.20, 0.20, 0.20, 0.20), (0.15, 0.30, 0.15, 0.25, 0.15))
AMOUNT_LOG_MEAN = (np.log(2500.0), np.log(7000.0))
AMOUNT_LOG_SIGMA = (0.8, 0.7)
DELAY_GAMMA = ((2.0, 6.0), (4.0, 8.0))  # (shape, scale) in days
HISTORY_NORMAL = ((0.72, 0.15), (0.42, 0.15))


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def generate_insurance_claims(n: int, fraud_rate: float, seed: int) -> TabularDataset:
    """Draw ``n`` synthetic claims, exactly ``round(n * fraud_rate)`` of them fraudulent.

    Values are rounded (cents, whole days, 3 decimals) so the canonical CSV is
    stable across platforms.
    """
    if n < 0:
        raise ValidationError("n must be non-negative")
    if not 0.0 <= fraud_rate <= 1.0:
        raise ValidationError(f"fraud_rate must lie in [0, 1], got {fraud_rate}")
    rng = np.random.default_rng(seed)
    n_fraud = _round_half_up(n * fraud_rate)
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.permutation(n)[:n_fraud]] = 1

    amount = np.empty(n)
    delay = np.empty(n)
    history = np.empty(n)
    ctype = np.empty(n, dtype=object)
    region = np.empty(n, dtype=object)
    for cls in (0, 1):
        mask = labels == cls
        m = int(mask.sum())
        amount[mask] = np.round(rng.lognormal(AMOUNT_LOG_MEAN[cls], AMOUNT_LOG_SIGMA[cls], m), 2)
        shape, scale = DELAY_GAMMA[cls]
        delay[mask] = np.round(rng.gamma(shape, scale, m))
        mu, sd = HISTORY_NORMAL[cls]
        history[mask] = np.round(np.clip(rng.normal(mu, sd, m), 0.0, 1.0), 3)
        ctype[mask] = np.asarray(CLAIM_TYPES, dtype=object)[rng.choice(len(CLAIM_TYPES), m, p=CLAIM_TYPE_PROBS[cls])]
        region[mask] = np.asarray(REGIONS, dtype=object)[rng.choice(len(REGIONS), m, p=REGION_PROBS[cls])]

    return TabularDataset(
        schema=CLAIMS_SCHEMA,
        columns={
            "claim_amount": amount,
            "filing_delay_days": delay,
            "claimant_history_score": history,
            "claim_type": ctype,
            "region": region,
        },
        labels=labels,
    )


def _fmt(value, kind: str) -> str:
    if kind == NUMERIC:
        return repr(float(value))
    return str(value)


def tabular_to_csv(ds: TabularDataset) -> str:
    """Canonical CSV: ``\\n`` line endings, shortest round-trip floats."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([ID_COLUMN] + ds.column_names + [LABEL_COLUMN])
    cols = [(ds.columns[name], kind) for name, kind in ds.schema]
    for i in range(len(ds)):
        writer.writerow(
            [str(int(ds.indices[i]))] + [_fmt(c[i], kind) for c, kind in cols] + [str(int(ds.labels[i]))]
        )
    return buf.getvalue()


def write_tabular_csv(ds: TabularDataset, path: str | os.PathLike) -> None:
    Path(path).write_bytes(tabular_to_csv(ds).encode("utf-8"))


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def parse_tabular_csv(text: str, categorical: list[str] | None = None) -> TabularDataset:
    """Parse a claims CSV.

    Column kinds come from ``categorical`` when given; otherwise a column is
    numeric iff every value parses as a float. An optional ``claim_id`` column
    supplies example ids.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("CSV has no header row") from None
    if LABEL_COLUMN not in header:
        raise FormatError(f"CSV lacks the label column {LABEL_COLUMN!r}")
    rows = [r for r in reader if r]
    for line, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise FormatError(f"line {line}: expected {len(header)} fields, got {len(r)}")
    data = {h: [r[j] for r in rows] for j, h in enumerate(header)}
    try:
        labels = np.array([int(v) for v in data[LABEL_COLUMN]], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"non-integer {LABEL_COLUMN} value: {exc}") from None
    indices = None
    if ID_COLUMN in data:
        indices = np.array([int(v) for v in data[ID_COLUMN]], dtype=np.int64)
    schema = []
    columns = {}
    for h in header:
        if h in (LABEL_COLUMN, ID_COLUMN):
            continue
        if categorical is not None:
            kind = CATEGORICAL if h in categorical else NUMERIC
        else:
            kind = NUMERIC if all(_is_float(v) for v in data[h]) else CATEGORICAL
        schema.append((h, kind))
        if kind == NUMERIC:
            try:
                columns[h] = np.array([float(v) for v in data[h]], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"column {h!r}: {exc}") from None
        else:
            columns[h] = np.array(data[h], dtype=object)
    return TabularDataset(schema=tuple(schema), columns=columns, labels=labels, indices=indices)


def read_tabular_csv(path: str | os.PathLike, categorical: list[str] | None = None) -> TabularDataset:
    return parse_tabular_csv(Path(path).read_bytes().decode("utf-8"), categorical)


def encode_tabular(ds: TabularDataset, fit_on) -> EncodedMatrix:
    """One-hot categoricals and standardise numerics for every row of ``ds``.

    Levels and scaling statistics come only from the rows whose ids are in
    ``fit_on``. Levels are ordered lexicographically. Rows carrying a level
    never seen in ``fit_on`` get an all-zero group.
    """
    fit_on = np.asarray(fit_on, dtype=np.int64).reshape(-1)
    if len(fit_on) == 0:
        raise ValidationError("fit_on must be non-empty")
    pos_of = {int(idx): p for p, idx in enumerate(ds.indices)}
    try:
        fit_pos = np.array([pos_of[int(i)] for i in fit_on], dtype=np.int64)
    except KeyError as exc:
        raise ValidationError(f"fit_on references unknown id {exc.args[0]}") from None

    blocks = []
    column_map = []
    scaling = {}
    notes = []
    for name, kind in ds.schema:
        col = ds.columns[name]
        if kind == NUMERIC:
            fit = col[fit_pos]
            mu = fit.mean()
            sd = np.sqrt(((fit - mu) ** 2).mean())
            if sd <= 1e-12 * max(1.0, abs(mu)):
                msg = f"column {name!r} is constant on the fitting rows; using sigma=1"
                warnings.warn(msg, PoisonBenchWarning, stacklevel=2)
                notes.append(msg)
                sd = 1.0
                mu = fit[0]
            blocks.append(((col - mu) / sd)[:, None])
            column_map.append({"source": name, "kind": "numeric"})
            scaling[name] = (float(mu), float(sd))
        else:
            levels = sorted(set(col[fit_pos].tolist()))
            onehot = np.zeros((len(col), len(levels)))
            lookup = {lv: j for j, lv in enumerate(levels)}
            unseen = set()
            for i, v in enumerate(col):
                j = lookup.get(v)
                if j is None:
                    unseen.add(v)
                else:
                    onehot[i, j] = 1.0
            if unseen:
                msg = f"column {name!r}: levels {sorted(map(str, unseen))} unseen when fitting; encoded as all-zero"
                warnings.warn(msg, PoisonBenchWarning, stacklevel=2)
                notes.append(msg)
            blocks.append(onehot)
            column_map.extend({"source": name, "kind": "onehot", "level": lv} for lv in levels)
    matrix = np.hstack(blocks) if blocks else np.zeros((len(ds), 0))
    return EncodedMatrix(
        matrix=matrix,
        column_map=tuple(column_map),
        scaling_params=scaling,
        labels=ds.labels,
        indices=ds.indices,
        class_names=ds.class_names,
        warnings=tuple(notes),
    )
