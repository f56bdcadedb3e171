"""Incomplete rectangular data, pattern indexing and empirical positivity."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path as FilePath
from typing import Iterable, Sequence

import numpy as np

from .graph import PatternGraph
from .patterns import Pattern, canonical_key

DEFAULT_MISSING_TOKENS = ("", "NA")
DEFAULT_MIN_COUNT = 5


class DataError(ValueError):
    """Malformed input data."""


class MaskedAccessError(RuntimeError):
    """An unobserved cell was read."""


class PositivityError(ValueError):
    """Raised when a positivity report contains a hard failure."""

    def __init__(self, report: "PositivityReport"):
        super().__init__(str(report))
        self.report = report


class IncompleteDataset:
    """An ``n x d`` numeric matrix with an observation mask.

    Unobserved cells hold NaN and are never meant to be read; use
    :meth:`block` for mask-checked access.

    Parameters
    ----------
    values : array-like of shape (n, d)
    mask : array-like of bool, optional
        ``True`` where observed.  Defaults to ``~isnan(values)``.
    column_names : sequence of str, optional
    """

    def __init__(self, values, mask=None, column_names: Sequence[str] | None = None):
        vals = np.array(values, dtype=float)
        if vals.ndim == 1 and vals.size == 0:
            vals = vals.reshape(0, 0 if column_names is None else len(column_names))
        if vals.ndim != 2:
            raise DataError(f"values must be 2-dimensional, got shape {vals.shape}")
        if mask is None:
            m = ~np.isnan(vals)
        else:
            m = np.array(mask, dtype=bool)
            if m.shape != vals.shape:
                raise DataError(f"mask shape {m.shape} does not match values shape {vals.shape}")
            if np.isnan(vals[m]).any():
                raise DataError("observed cells must not be NaN")
        vals[~m] = np.nan
        if column_names is None:
            column_names = [f"L{j + 1}" for j in range(vals.shape[1])]
        if len(column_names) != vals.shape[1]:
            raise DataError("number of column names does not match d")
        vals.setflags(write=False)
        m.setflags(write=False)
        self._values = vals
        self._mask = m
        self.column_names = list(column_names)
        self._index = None

    @classmethod
    def from_array(cls, X, column_names=None) -> "IncompleteDataset":
        if isinstance(X, IncompleteDataset):
            return X
        return cls(X, column_names=column_names)

    @property
    def n(self) -> int:
        return self._values.shape[0]

    @property
    def d(self) -> int:
        return self._values.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return self._mask

    @property
    def values(self) -> np.ndarray:
        """Raw matrix with NaN in unobserved cells (read-only view)."""
        return self._values

    def block(self, rows, cols) -> np.ndarray:
        """Return ``values[rows][:, cols]``, refusing any unobserved cell."""
        rows = np.asarray(rows)
        cols = np.asarray(cols, dtype=int)
        sub_mask = self._mask[np.ix_(rows, cols)] if rows.dtype != bool else self._mask[rows][:, cols]
        if not sub_mask.all():
            raise MaskedAccessError("attempted to read an unobserved cell")
        if rows.dtype == bool:
            return self._values[rows][:, cols]
        return self._values[np.ix_(rows, cols)]

    def subset(self, rows) -> "IncompleteDataset":
        rows = np.asarray(rows)
        return IncompleteDataset(self._values[rows], self._mask[rows], self.column_names)

    @property
    def index(self) -> "PatternIndex":
        if self._index is None:
            self._index = index_patterns(self)
        return self._index

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"IncompleteDataset(n={self.n}, d={self.d}, observed={self._mask.mean() if self.n else 1.0:.3f})"


@dataclass(frozen=True)
class PatternIndex:
    """Rows grouped by response pattern.

    ``codes[i]`` is the position of row ``i``'s pattern in ``patterns``.
    """

    d: int
    patterns: tuple[Pattern, ...]
    codes: np.ndarray
    groups: dict = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.codes)

    @property
    def observed_patterns(self) -> set[Pattern]:
        return set(self.patterns)

    def rows(self, p: Pattern) -> np.ndarray:
        return self.groups.get(p, np.empty(0, dtype=int))

    def count(self, p: Pattern) -> int:
        return len(self.rows(p))

    def counts(self) -> dict[Pattern, int]:
        return {p: len(v) for p, v in self.groups.items()}

    def member(self, ps: Iterable[Pattern]) -> np.ndarray:
        """Boolean row indicator of ``R in ps``."""
        ps = set(ps)
        keep = np.array([p in ps for p in self.patterns], dtype=bool)
        if not len(keep):
            return np.zeros(self.n, dtype=bool)
        return keep[self.codes]

    def is_pattern(self, p: Pattern) -> np.ndarray:
        return self.member([p])

    def pattern_of(self, i: int) -> Pattern:
        return self.patterns[self.codes[i]]


def index_patterns(ds: IncompleteDataset) -> PatternIndex:
    if ds.n == 0:
        return PatternIndex(ds.d, (), np.empty(0, dtype=int), {})
    uniq, inv = np.unique(ds.mask, axis=0, return_inverse=True)
    inv = inv.ravel()
    pats = [Pattern.from_mask(u) for u in uniq]
    order = sorted(range(len(pats)), key=lambda k: canonical_key(pats[k]))
    remap = np.empty(len(pats), dtype=int)
    remap[order] = np.arange(len(pats))
    codes = remap[inv]
    patterns = tuple(pats[k] for k in order)
    groups = {p: np.flatnonzero(codes == k) for k, p in enumerate(patterns)}
    return PatternIndex(ds.d, patterns, codes, groups)


# ---------------------------------------------------------------------------
# CSV input/output


def _parse_csv(text: str, missing_tokens, source: str) -> IncompleteDataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{source}: empty file, header row required") from None
    header = [h.strip() for h in header]
    d = len(header)
    rows, masks = [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec or (len(rec) == 1 and not rec[0].strip() and d > 1):
            continue
        if len(rec) != d:
            raise DataError(f"{source}: row {lineno} has {len(rec)} fields, expected {d}")
        vals, msk = [], []
        for j, cell in enumerate(rec, start=1):
            tok = cell.strip()
            if tok in missing_tokens:
                vals.append(np.nan)
                msk.append(False)
                continue
            try:
                v = float(tok)
            except ValueError:
                raise DataError(f"{source}: malformed numeric cell {tok!r} at row {lineno}, column {j}") from None
            if not np.isfinite(v):
                raise DataError(f"{source}: non-finite value at row {lineno}, column {j}")
            vals.append(v)
            msk.append(True)
        rows.append(vals)
        masks.append(msk)
    values = np.array(rows, dtype=float).reshape(len(rows), d)
    mask = np.array(masks, dtype=bool).reshape(len(rows), d)
    return IncompleteDataset(values, mask, header)


def load_dataset(path, missing_token: str | Sequence[str] | None = None) -> IncompleteDataset:
    """Read a UTF-8 CSV file whose first row holds column names.

    ``missing_token`` defaults to treating empty cells and ``NA`` as missing.
    """
    if missing_token is None:
        tokens = DEFAULT_MISSING_TOKENS
    elif isinstance(missing_token, str):
        tokens = (missing_token,)
    else:
        tokens = tuple(missing_token)
    text = FilePath(path).read_text(encoding="utf-8")
    return _parse_csv(text, tokens, str(path))


def parse_dataset(text: str, missing_token=None) -> IncompleteDataset:
    tokens = DEFAULT_MISSING_TOKENS if missing_token is None else (
        (missing_token,) if isinstance(missing_token, str) else tuple(missing_token))
    return _parse_csv(text, tokens, "<string>")


def format_dataset(ds: IncompleteDataset, missing_token: str = "NA") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ds.column_names)
    for i in range(ds.n):
        w.writerow([repr(float(v)) if m else missing_token for v, m in zip(ds.values[i], ds.mask[i])])
    return buf.getvalue()


def write_dataset(ds: IncompleteDataset, path, missing_token: str = "NA") -> None:
    FilePath(path).write_text(format_dataset(ds, missing_token), encoding="utf-8")


# ---------------------------------------------------------------------------
# positivity


@dataclass(frozen=True)
class PositivityReport:
    """Empirical positivity diagnostics for a dataset against a graph.

    Attributes
    ----------
    empty_nodes : graph nodes with no sample rows (category a).
    thin_parents : ``(r, parent_total)`` for nodes whose parent rows are
        fewer than ``min_count`` or include an empty parent (category b).
    unknown_patterns : observed patterns that are not graph nodes
        (category c, always a hard error for estimation).
    """

    empty_nodes: tuple[Pattern, ...] = ()
    thin_parents: tuple[tuple[Pattern, int], ...] = ()
    unknown_patterns: tuple[Pattern, ...] = ()
    min_count: int = DEFAULT_MIN_COUNT

    @property
    def clean(self) -> bool:
        return not (self.empty_nodes or self.thin_parents or self.unknown_patterns)

    def hard_failures(self, strict: bool = False) -> bool:
        if self.unknown_patterns:
            return True
        return strict and not self.clean

    def lines(self) -> list[str]:
        out = [f"(a) node {p} has no rows" for p in self.empty_nodes]
        out += [f"(b) parents of {r} have {k} rows in total or include an empty pattern (min_count={self.min_count})"
                for r, k in self.thin_parents]
        out += [f"(c) observed pattern {p} is not a node of the graph" for p in self.unknown_patterns]
        return out

    def __str__(self):
        return "positivity ok" if self.clean else "\n".join(self.lines())


def positivity_report(idx: PatternIndex, g: PatternGraph, min_count: int = DEFAULT_MIN_COUNT) -> PositivityReport:
    counts = idx.counts()
    empty = tuple(p for p in g.nodes if counts.get(p, 0) == 0)
    thin = []
    for r in g.nodes:
        if r == g.source:
            continue
        pc = [counts.get(s, 0) for s in g.sorted_parents(r)]
        if sum(pc) < min_count or min(pc) == 0:
            thin.append((r, int(sum(pc))))
    unknown = tuple(p for p in idx.patterns if p not in g)
    return PositivityReport(empty, tuple(thin), unknown, min_count)


def check_positivity(idx: PatternIndex, g: PatternGraph, min_count: int = DEFAULT_MIN_COUNT,
                     strict: bool = False) -> PositivityReport:
    rep = positivity_report(idx, g, min_count)
    if rep.hard_failures(strict):
        raise PositivityError(rep)
    return rep
