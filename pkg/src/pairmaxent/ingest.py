"""Price tables to sign panels: CSV loading, timestamp synchronization and
open-to-close binarization.

Timestamps are opaque strings compared lexicographically (ISO-8601 sorts
correctly); no calendar arithmetic is done.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .core import SignPanel, ValidationError


class ParseError(ValidationError):
    def __init__(self, message: str, line: int, column: int | None = None):
        loc = f"line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(f"{loc}: {message}")
        self.line = line
        self.column = column


class NonPositivePrice(ValidationError):
    pass


class NonMonotoneTimestamp(ValidationError):
    pass


class EmptyIntersection(ValidationError):
    pass


class UnsynchronizedInput(ValidationError):
    pass


@dataclass(frozen=True)
class PriceTable:
    asset: str
    timestamps: tuple
    open: np.ndarray
    close: np.ndarray

    def __post_init__(self):
        ts = tuple(str(t) for t in self.timestamps)
        o = np.asarray(self.open, dtype=float)
        c = np.asarray(self.close, dtype=float)
        if not (len(ts) == o.shape[0] == c.shape[0]):
            raise ValidationError(f"{self.asset}: column lengths differ")
        if np.any(~(o > 0)) or np.any(~(c > 0)):
            raise NonPositivePrice(f"{self.asset}: prices must be positive")
        for a, b in zip(ts, ts[1:]):
            if not a < b:
                raise NonMonotoneTimestamp(f"{self.asset}: timestamp {b!r} does not follow {a!r}")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "open", o)
        object.__setattr__(self, "close", c)

    def __len__(self) -> int:
        return len(self.timestamps)


def _price(text: str, line: int, column: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line, column) from None
    if not math.isfinite(v):
        raise ParseError(f"not a finite number: {text!r}", line, column)
    if v <= 0:
        raise NonPositivePrice(f"line {line}, column {column}: price {v} is not positive")
    return v


def _check_increasing(asset: str, rows: list) -> None:
    for (a, _, _, _), (b, _, _, line) in zip(rows, rows[1:]):
        if not a < b:
            raise NonMonotoneTimestamp(
                f"line {line}: asset {asset} timestamp {b!r} does not follow {a!r}")


def load_price_table(path, format: str = "csv") -> list[PriceTable]:
    """Read a long (timestamp,asset,open,close) or wide
    (timestamp,<asset>_open,<asset>_close,...) CSV; the layout is detected
    from the header. Returns one table per asset in first-appearance order.
    """
    if format != "csv":
        raise ValidationError(f"unsupported format {format!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", 1) from None
        if header == ["timestamp", "asset", "open", "close"]:
            return _read_long(reader)
        if header and header[0] == "timestamp" and len(header) >= 3:
            return _read_wide(header, reader)
        raise ParseError("header must be timestamp,asset,open,close or "
                         "timestamp,<asset>_open,<asset>_close,...", 1)


def _read_long(reader) -> list[PriceTable]:
    by_asset: dict[str, list] = {}
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, found {len(row)}", line, min(len(row), 4) + 1)
        ts, asset = row[0].strip(), row[1].strip()
        if not ts:
            raise ParseError("empty timestamp", line, 1)
        if not asset:
            raise ParseError("empty asset", line, 2)
        by_asset.setdefault(asset, []).append(
            (ts, _price(row[2].strip(), line, 3), _price(row[3].strip(), line, 4), line))
    tables = []
    for asset, rows in by_asset.items():
        _check_increasing(asset, rows)
        tables.append(PriceTable(asset, [r[0] for r in rows], [r[1] for r in rows],
                                 [r[2] for r in rows]))
    return tables


def _read_wide(header: list, reader) -> list[PriceTable]:
    cols = header[1:]
    assets: list[str] = []
    where: dict[str, dict[str, int]] = {}
    for k, name in enumerate(cols, start=2):
        base, _, kind = name.rpartition("_")
        if kind not in ("open", "close") or not base:
            raise ParseError(f"column {name!r} is not <asset>_open or <asset>_close", 1, k)
        if base not in where:
            assets.append(base)
            where[base] = {}
        if kind in where[base]:
            raise ParseError(f"duplicate column {name!r}", 1, k)
        where[base][kind] = k - 1
    for a in assets:
        if set(where[a]) != {"open", "close"}:
            raise ParseError(f"asset {a!r} needs both _open and _close columns", 1)
    data = {a: [] for a in assets}
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line)
        ts = row[0].strip()
        if not ts:
            raise ParseError("empty timestamp", line, 1)
        for a in assets:
            io, ic = where[a]["open"], where[a]["close"]
            o, c = row[io].strip(), row[ic].strip()
            if not o and not c:
                continue  # asset missing in this bin
            data[a].append((ts, _price(o, line, io + 1), _price(c, line, ic + 1), line))
    tables = []
    for a in assets:
        rows = data[a]
        _check_increasing(a, rows)
        tables.append(PriceTable(a, [r[0] for r in rows], [r[1] for r in rows],
                                 [r[2] for r in rows]))
    return tables


def synchronize_panel(tables: list[PriceTable]) -> list[PriceTable]:
    """Keep only timestamps present for every asset (order preserved)."""
    if not tables:
        raise ValidationError("need at least one table")
    common = set(tables[0].timestamps)
    for t in tables[1:]:
        common &= set(t.timestamps)
    if not common:
        raise EmptyIntersection("no timestamp is shared by all assets")
    out = []
    for t in tables:
        keep = np.array([ts in common for ts in t.timestamps])
        out.append(PriceTable(t.asset, [s for s, k in zip(t.timestamps, keep) if k],
                              t.open[keep], t.close[keep]))
    return out


def binarize_returns(tables: list[PriceTable]) -> SignPanel:
    """s = +1 if close >= open, else -1."""
    if not tables:
        raise ValidationError("need at least one table")
    ts = tables[0].timestamps
    for t in tables[1:]:
        if t.timestamps != ts:
            raise UnsynchronizedInput(f"asset {t.asset} has a different timestamp set; "
                                      "synchronize first")
    values = np.array([np.where(t.close >= t.open, 1, -1) for t in tables], dtype=np.int8)
    return SignPanel(tuple(t.asset for t in tables), ts, values)


def load_panel_from_prices(path) -> SignPanel:
    return binarize_returns(synchronize_panel(load_price_table(path)))


# --------------------------------------------------------------------------- #
# sign panel files
# --------------------------------------------------------------------------- #

def write_panel(panel: SignPanel, path) -> None:
    """Wide CSV: header timestamp,<asset>...; one row of +-1 per period."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *panel.assets])
        for k, t in enumerate(panel.times):
            w.writerow([t, *(int(v) for v in panel.values[:, k])])


def read_panel(path) -> SignPanel:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", 1) from None
        if not header or header[0] != "timestamp" or len(header) < 2:
            raise ParseError("panel header must be timestamp,<asset>,...", 1)
        times, rows = [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", line)
            vals = []
            for k, c in enumerate(row[1:], start=2):
                c = c.strip()
                if c not in ("1", "-1", "+1"):
                    raise ParseError(f"entry {c!r} is not +-1", line, k)
                vals.append(int(c))
            times.append(row[0].strip())
            rows.append(vals)
    if not rows:
        raise ParseError("panel has no rows", 2)
    return SignPanel(tuple(header[1:]), tuple(times), np.array(rows, dtype=np.int8).T)
