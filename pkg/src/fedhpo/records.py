"""Per-round records and their CSV form.

``rounds.csv`` columns, in order:

    q, reward, hyper_loss_prev, hyper_loss, test_acc,
    val_loss_<k>..., val_acc_<k>...      one per client
    h_<name>...                          hyperparameters applied in round q (raw units)
    mu_<dim>..., sigma_<dim>...          policy that h was drawn from (raw units);
                                         absent for baseline runs

``hyper_loss_prev`` and ``hyper_loss`` are the mean validation losses before
and after round q, so ``reward == (hyper_loss_prev - hyper_loss) / hyper_loss_prev``.
Floats are written with ``repr`` and read back bit-exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

FIXED_COLUMNS = ["q", "reward", "hyper_loss_prev", "hyper_loss", "test_acc"]


@dataclass
class RoundRecord:
    q: int
    reward: float
    hyper_loss_prev: float
    hyper_loss: float
    test_acc: float
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    h: dict[str, float] = field(default_factory=dict)
    mu: dict[str, float] | None = None
    sigma: dict[str, float] | None = None

    @property
    def has_policy(self) -> bool:
        return self.mu is not None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def columns_for(record: RoundRecord) -> list[str]:
    cols = list(FIXED_COLUMNS)
    cols += [f"val_loss_{k}" for k in range(len(record.val_loss))]
    cols += [f"val_acc_{k}" for k in range(len(record.val_acc))]
    cols += [f"h_{n}" for n in record.h]
    if record.mu is not None:
        cols += [f"mu_{n}" for n in record.mu]
        cols += [f"sigma_{n}" for n in record.sigma]
    return cols


def record_row(record: RoundRecord) -> list[str]:
    row = [str(record.q)] + [_fmt(getattr(record, c)) for c in FIXED_COLUMNS[1:]]
    row += [_fmt(v) for v in record.val_loss]
    row += [_fmt(v) for v in record.val_acc]
    row += [_fmt(v) for v in record.h.values()]
    if record.mu is not None:
        row += [_fmt(v) for v in record.mu.values()]
        row += [_fmt(v) for v in record.sigma.values()]
    return row


class RoundCsvWriter:
    """Appends one row per round and flushes immediately."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = None
        self._writer = None
        self._columns = None

    def append(self, record: RoundRecord):
        cols = columns_for(record)
        try:
            if self._fh is None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = self.path.open("w", newline="")
                self._writer = csv.writer(self._fh, lineterminator="\n")
                self._writer.writerow(cols)
                self._columns = cols
            elif cols != self._columns:
                raise ValueError(f"record for round {record.q} changes the column set")
            self._writer.writerow(record_row(record))
            self._fh.flush()
        except OSError as exc:
            raise OSError(f"{self.path}: {exc}") from exc

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_round_csv(records: Sequence[RoundRecord], path) -> Path:
    if not records:
        raise ValueError("no records to write")
    with RoundCsvWriter(path) as w:
        for r in records:
            w.append(r)
    return Path(path)


def _float(s: str) -> float:
    return float(s) if s != "" else math.nan


def read_round_csv(path) -> list[RoundRecord]:
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise OSError(f"{path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if header[: len(FIXED_COLUMNS)] != FIXED_COLUMNS:
            raise ValueError(f"{path}: not a rounds.csv file (header {header[:5]})")
        out = []
        for row in reader:
            vals = dict(zip(header, row))
            rec = RoundRecord(
                q=int(vals["q"]),
                reward=_float(vals["reward"]),
                hyper_loss_prev=_float(vals["hyper_loss_prev"]),
                hyper_loss=_float(vals["hyper_loss"]),
                test_acc=_float(vals["test_acc"]),
                val_loss=[_float(vals[c]) for c in header if c.startswith("val_loss_")],
                val_acc=[_float(vals[c]) for c in header if c.startswith("val_acc_")],
                h={c[2:]: _parse_num(vals[c]) for c in header if c.startswith("h_")},
            )
            mu_cols = [c for c in header if c.startswith("mu_")]
            if mu_cols:
                rec.mu = {c[3:]: _float(vals[c]) for c in mu_cols}
                rec.sigma = {c[6:]: _float(vals[c]) for c in header if c.startswith("sigma_")}
            out.append(rec)
    return out


def _parse_num(s: str):
    try:
        return int(s)
    except ValueError:
        return _float(s)


def policy_columns(records: Iterable[RoundRecord]) -> list[str]:
    for r in records:
        return list(r.mu or {})
    return []
