"""Uniform grids on flat tori and grid-sampled scalar fields.

Coordinates live in ``[0, side)`` on each axis.  Nodes are stored in C order,
so the flat index of the multi-index ``(i0, ..., i_{d-1})`` is
``np.ravel_multi_index(..., (n,) * d)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .exceptions import ValidationError

MAX_NODES = 1 << 22


@dataclass(frozen=True)
class GridTorus:
    dim: int
    points_per_axis: int
    side: float = 1.0

    def __post_init__(self):
        if not 1 <= self.dim <= 3:
            raise ValidationError(f"dim must be in 1..3, got {self.dim}")
        if self.points_per_axis < 8:
            raise ValidationError("points_per_axis must be >= 8")
        if not self.side > 0:
            raise ValidationError("side must be positive")
        if self.n_nodes > MAX_NODES:
            raise ValidationError(f"{self.n_nodes} nodes exceed the memory budget")

    @property
    def spacing(self) -> float:
        return self.side / self.points_per_axis

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.dim

    @property
    def n_nodes(self) -> int:
        return self.points_per_axis ** self.dim

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape ``(n_nodes, dim)``."""
        axes = [np.arange(self.points_per_axis) * self.spacing] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def wrap(self, x):
        return np.mod(x, self.side)

    def index_of(self, point) -> int:
        """Flat index of the node nearest to ``point``."""
        point = np.atleast_1d(np.asarray(point, dtype=float))
        multi = np.rint(self.wrap(point) / self.spacing).astype(int) % self.points_per_axis
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    def point_of(self, index: int) -> np.ndarray:
        multi = np.unravel_index(int(index), self.shape)
        return np.asarray(multi, dtype=float) * self.spacing

    def to_dict(self) -> dict:
        return {"dim": self.dim, "points_per_axis": self.points_per_axis, "side": self.side}


@dataclass(frozen=True)
class TimePoint:
    """A time stamp together with its position on the circle of length ``period``."""

    raw: float
    period: float = 1.0

    def __post_init__(self):
        if not self.period > 0:
            raise ValidationError("period must be positive")

    @property
    def integer_part(self) -> float:
        q = np.floor(self.raw / self.period) * self.period
        if self.raw - q >= self.period:
            q += self.period
        return float(q)

    @property
    def fractional(self) -> float:
        return float(self.raw - self.integer_part)

    def to_dict(self) -> dict:
        return {"raw": self.raw, "period": self.period}


@dataclass(frozen=True)
class ValueField:
    grid: GridTorus
    values: np.ndarray
    time: TimePoint = field(default_factory=lambda: TimePoint(0.0))

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size != self.grid.n_nodes:
            raise ValidationError(
                f"expected {self.grid.n_nodes} values, got {vals.size}")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @cached_property
    def lipschitz_estimate(self) -> float:
        u = self.values.reshape(self.grid.shape)
        best = 0.0
        for axis in range(self.grid.dim):
            diff = np.abs(np.roll(u, -1, axis=axis) - u)
            best = max(best, float(diff.max()))
        return best / self.grid.spacing

    def with_values(self, values, time=None) -> "ValueField":
        return ValueField(self.grid, values, self.time if time is None else time)

    @classmethod
    def from_function(cls, grid, func, time=None):
        x = grid.coordinates()
        return cls(grid, func(x), time if time is not None else TimePoint(0.0))

    @classmethod
    def constant(cls, grid, value=0.0, time=None):
        return cls(grid, np.full(grid.n_nodes, float(value)),
                   time if time is not None else TimePoint(0.0))


def torus_distance(a, b, side=1.0) -> np.ndarray:
    """Length of the shortest representative of ``a - b`` on the flat torus.

    ``side`` may be a number or a :class:`GridTorus`.  Points are arrays whose
    last axis is the coordinate axis; a scalar is treated as a 1-d point.
    """
    if isinstance(side, GridTorus):
        side = side.side
    # wrap each point first so the result is exactly symmetric in (a, b)
    diff = np.abs(np.mod(np.asarray(a, dtype=float), side) - np.mod(np.asarray(b, dtype=float), side))
    diff = np.minimum(diff, side - diff)
    if diff.ndim == 0:
        return float(diff)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def displacement(x, y, side=1.0) -> np.ndarray:
    """Shortest signed displacement ``x - y`` on the torus, componentwise."""
    d = np.mod(np.asarray(x, dtype=float) - np.asarray(y, dtype=float) + 0.5 * side, side)
    return d - 0.5 * side


def _corner_stencil(grid, points):
    """Lower-corner multi-indices and fractional offsets for points ``(m, d)``."""
    cells = grid.wrap(points) / grid.spacing
    lower = np.floor(cells)
    frac = cells - lower
    lower = lower.astype(np.int64) % grid.points_per_axis
    return lower, frac


def interpolate(field: ValueField, x) -> np.ndarray:
    """Multilinear interpolation with periodic wrap.

    ``x`` is a single point (scalar or ``(d,)``) or an array ``(m, d)``;
    the return value is a float or an ``(m,)`` array accordingly.
    """
    grid = field.grid
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 0 or (pts.ndim == 1 and grid.dim > 1)
    pts = pts.reshape(-1, grid.dim)
    lower, frac = _corner_stencil(grid, pts)
    u = field.values.reshape(grid.shape)
    n = grid.points_per_axis
    out = np.zeros(len(pts))
    for corner in range(1 << grid.dim):
        bits = [(corner >> a) & 1 for a in range(grid.dim)]
        weight = np.ones(len(pts))
        index = []
        for a, bit in enumerate(bits):
            weight *= frac[:, a] if bit else 1.0 - frac[:, a]
            index.append((lower[:, a] + bit) % n)
        out += weight * u[tuple(index)]
    return float(out[0]) if single else out


def field_extrema(field: ValueField):
    """``(min, argmin point, max, argmax point)`` over grid nodes.

    Ties resolve to the lowest flat index.
    """
    i_min = int(np.argmin(field.values))
    i_max = int(np.argmax(field.values))
    return (float(field.values[i_min]), field.grid.point_of(i_min),
            float(field.values[i_max]), field.grid.point_of(i_max))


def sup_distance(u: ValueField, v: ValueField) -> float:
    return float(np.max(np.abs(u.values - v.values)))


# serialization -------------------------------------------------------------

def field_to_dict(field: ValueField) -> dict:
    return {"grid": field.grid.to_dict(), "time": field.time.to_dict(),
            "values": field.values.tolist()}


def field_from_dict(data: dict) -> ValueField:
    grid = GridTorus(**data["grid"])
    return ValueField(grid, np.asarray(data["values"], dtype=float), TimePoint(**data["time"]))


def save_field_json(field: ValueField, path) -> None:
    Path(path).write_text(json.dumps(field_to_dict(field)))


def load_field_json(path) -> ValueField:
    return field_from_dict(json.loads(Path(path).read_text()))


def save_field_csv(field: ValueField, path) -> None:
    g, t = field.grid, field.time
    lines = [f"# grid d={g.dim} n={g.points_per_axis} side={g.side!r} "
             f"time={t.raw!r} period={t.period!r}"]
    lines += [f"{i},{v!r}" for i, v in enumerate(field.values.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_field_csv(path) -> ValueField:
    text = Path(path).read_text().splitlines()
    header = text[0]
    if not header.startswith("# grid"):
        raise ValidationError("missing '# grid' header")
    meta = dict(tok.split("=", 1) for tok in header[len("# grid"):].split())
    grid = GridTorus(int(meta["d"]), int(meta["n"]), float(meta["side"]))
    values = np.empty(grid.n_nodes)
    seen = np.zeros(grid.n_nodes, dtype=bool)
    for line in text[1:]:
        if not line.strip():
            continue
        i, v = line.split(",")
        values[int(i)] = float(v)
        seen[int(i)] = True
    if not seen.all():
        raise ValidationError("CSV does not cover every node")
    return ValueField(grid, values, TimePoint(float(meta["time"]), float(meta["period"])))
