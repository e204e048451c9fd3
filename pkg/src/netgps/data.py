"""Per-unit data container and its CSV form.

Columns named z, y, g, phi, lam are special; every other column is a
covariate. Missing values are empty cells and come back as NaN.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError

SPECIAL = ("z", "y", "g", "phi", "lam")


@dataclass
class UnitTable:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray | None = None
    g: np.ndarray | None = None
    phi: np.ndarray | None = None
    lam: np.ndarray | None = None
    x_names: tuple = ()

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        n = self.x.shape[0]
        self.z = np.asarray(self.z)
        if self.z.shape != (n,):
            raise ValidationError("z must have one entry per unit")
        if not np.isin(self.z[np.isfinite(self.z)], (0, 1)).all():
            raise ValidationError("z must be binary")
        self.z = self.z.astype(np.int8)
        for name in ("y", "g", "phi", "lam"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.float64)
                if v.shape != (n,):
                    raise ValidationError(f"{name} must have one entry per unit")
                setattr(self, name, v)
        if not self.x_names:
            self.x_names = tuple(f"x{i+1}" for i in range(self.x.shape[1]))
        if len(self.x_names) != self.x.shape[1]:
            raise ValidationError("x_names must match covariate count")
        if any(nm in SPECIAL for nm in self.x_names):
            raise ValidationError(f"covariate names may not shadow {SPECIAL}")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def select(self, cols) -> np.ndarray:
        """Covariate columns by name or index; None/'all' means all."""
        if cols is None or cols == "all":
            return self.x
        idx = []
        for c in cols:
            if isinstance(c, str):
                if c not in self.x_names:
                    raise ValidationError(f"unknown covariate {c!r}")
                idx.append(self.x_names.index(c))
            else:
                idx.append(int(c))
        return self.x[:, idx]

    def to_csv(self, path) -> None:
        cols = list(self.x_names) + [s for s in SPECIAL if getattr(self, s) is not None]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for i in range(self.n):
                row = [repr(float(v)) for v in self.x[i]]
                for s in SPECIAL:
                    v = getattr(self, s)
                    if v is None:
                        continue
                    vi = v[i]
                    if s == "z":
                        row.append(str(int(vi)))
                    else:
                        row.append("" if np.isnan(vi) else repr(float(vi)))
                writer.writerow(row)


def read_units(path) -> UnitTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if "z" not in header:
            raise ParseError(f"{path}: required column 'z' missing")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                rows.append([float(c) if c.strip() else np.nan for c in row])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    mat = np.asarray(rows, dtype=np.float64)
    cols = {name: mat[:, j] for j, name in enumerate(header)}
    if "id" in cols:
        # row-order identifiers, not a covariate; insist they agree with position
        ids = cols.pop("id")
        if not np.array_equal(ids, np.arange(mat.shape[0], dtype=np.float64)):
            raise ParseError(f"{path}: 'id' column must be 0..n-1 in order")
    x_names = tuple(h for h in header if h not in SPECIAL and h != "id")
    x = np.column_stack([cols[h] for h in x_names]) if x_names else np.empty((mat.shape[0], 0))
    return UnitTable(
        x=x,
        z=cols["z"],
        y=cols.get("y"),
        g=cols.get("g"),
        phi=cols.get("phi"),
        lam=cols.get("lam"),
        x_names=x_names,
    )
