"""Minimal-action tables, barriers between time slices, and periodic limit solutions.

Tables are indexed ``(source node, target node)``.  A row is produced by
evolving a delta-like field (0 at the source, ``BIG`` elsewhere); long
horizons are assembled from one-period tables by min-plus products, which is
exactly what repeated evolution would give on the grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .exceptions import (CalibrationDefect, NonzeroDrift, NotStabilized, ValidationError)
from .grid import GridTorus, TimePoint, ValueField, interpolate
from .models import Trajectory
from .semigroup import SolverParams, evolve_batch, get_stencil, _lattice_index, renormalize

MAX_TABLE_SOURCES = 4096
HEADER_BYTES = 64


def big_value(scale: float = 0.0) -> float:
    """Stand-in for an infinite initial value; finite so that ``0 * BIG`` stays 0."""
    return 1e6 * (1.0 + abs(scale))


def _check_model(model, periodic=True):
    if getattr(model, "has_drift", False):
        raise NonzeroDrift("action tables need a single-valued Lagrangian (zero linear drift)")
    if periodic and model.kind == "asymptotically_periodic":
        raise ValidationError("barrier computations need an autonomous or periodic model")


@dataclass(frozen=True)
class ActionTable:
    grid: GridTorus
    t_start: float
    t_end: float
    values: np.ndarray
    sources: Optional[np.ndarray] = None
    big: float = field(default_factory=big_value)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[1] != self.grid.n_nodes:
            raise ValidationError("table must have one column per grid node")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("table entries must be finite")
        src = np.arange(vals.shape[0]) if self.sources is None else np.asarray(self.sources)
        if len(src) != vals.shape[0]:
            raise ValidationError("one source index per row is required")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "sources", src)

    def entry(self, y, x) -> float:
        """Table value between the nodes nearest to points ``y`` and ``x``."""
        row = int(np.flatnonzero(self.sources == self.grid.index_of(y))[0])
        return float(self.values[row, self.grid.index_of(x)])

    def metadata(self) -> dict:
        return {"kind": "action", "grid": self.grid.to_dict(), "t_start": self.t_start,
                "t_end": self.t_end, "sources": self.sources.tolist(), "big": self.big}


@dataclass(frozen=True)
class BarrierTable:
    grid: GridTorus
    s: TimePoint
    s_prime: TimePoint
    values: np.ndarray
    horizon_used: int
    stabilization_residual: float
    big: float = field(default_factory=big_value)

    @property
    def sources(self):
        return np.arange(self.values.shape[0])

    def entry(self, y, x) -> float:
        return float(self.values[self.grid.index_of(y), self.grid.index_of(x)])

    def metadata(self) -> dict:
        return {"kind": "barrier", "grid": self.grid.to_dict(), "s": self.s.to_dict(),
                "s_prime": self.s_prime.to_dict(), "horizon_used": self.horizon_used,
                "stabilization_residual": self.stabilization_residual, "big": self.big}


@dataclass
class PeriodicSolution:
    """Slices of a time-periodic field at ``tau_j = j * period / m``."""

    slices: list
    period: float

    def __post_init__(self):
        if not self.slices:
            raise ValidationError("at least one slice is required")
        grids = {s.grid for s in self.slices}
        if len(grids) != 1:
            raise ValidationError("all slices must share one grid")

    @property
    def grid(self) -> GridTorus:
        return self.slices[0].grid

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    @property
    def slice_times(self) -> np.ndarray:
        return np.arange(self.n_slices) * self.period / self.n_slices

    def slice_index(self, tau: float) -> int:
        frac = TimePoint(tau, self.period).fractional
        j = int(round(frac * self.n_slices / self.period)) % self.n_slices
        if abs(self.slice_times[j] - frac) > 1e-9 * self.period and \
                abs(abs(self.slice_times[j] - frac) - self.period) > 1e-9 * self.period:
            raise ValidationError(f"time {tau} is not a slice time")
        return j

    def at(self, tau: float) -> ValueField:
        return self.slices[self.slice_index(tau)]

    def __call__(self, x, tau: float):
        return interpolate(self.at(tau), x)

    def to_dict(self) -> dict:
        return {"period": self.period, "grid": self.grid.to_dict(),
                "slice_times": self.slice_times.tolist(),
                "slices": [s.values.tolist() for s in self.slices]}

    @classmethod
    def from_dict(cls, data: dict) -> "PeriodicSolution":
        grid = GridTorus(**data["grid"])
        T = data["period"]
        return cls([ValueField(grid, v, TimePoint(t, T))
                    for t, v in zip(data["slice_times"], data["slices"])], T)

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


# action tables --------------------------------------------------------------

def _sources(grid, sources):
    if sources is None:
        if grid.n_nodes > MAX_TABLE_SOURCES:
            raise ValidationError(
                f"{grid.n_nodes} nodes exceed {MAX_TABLE_SOURCES} table sources; pass a sample set")
        return np.arange(grid.n_nodes)
    src = np.asarray(sources, dtype=np.int64).ravel()
    if src.size == 0 or src.min() < 0 or src.max() >= grid.n_nodes:
        raise ValidationError("source indices out of range")
    return src


def _delta_batch(grid, sources, big):
    u = np.full((len(sources), grid.n_nodes), big)
    u[np.arange(len(sources)), sources] = 0.0
    return u


def _action_rows(model, grid, t0, times, params, sources, big):
    """Rows of ``F_{t0, t}`` for each ``t`` in ``times`` from a single evolution."""
    k0 = _lattice_index(t0, params.dt, "t0")
    steps = [_lattice_index(t, params.dt, "time") - k0 for t in times]
    if min(steps) < 1:
        raise ValidationError("every horizon must exceed t0")
    _, rec = evolve_batch(_delta_batch(grid, sources, big), model, grid, params,
                          k0, max(steps), steps)
    return [rec[s] for s in steps]


def finite_action(model, grid: GridTorus, t0: float, t1: float, params: SolverParams,
                  sources=None) -> ActionTable:
    """Minimal action ``F_{t0,t1}(y, x)`` over curves from ``y`` at ``t0`` to ``x`` at ``t1``.

    Pairs that no discrete path connects keep a value of order ``BIG``.
    """
    if not t1 > t0:
        raise ValidationError("t1 must exceed t0")
    if getattr(model, "has_drift", False):
        raise NonzeroDrift("action tables need a single-valued Lagrangian (zero linear drift)")
    src = _sources(grid, sources)
    big = big_value()
    (rows,) = _action_rows(model, grid, t0, [t1], params, src, big)
    return ActionTable(grid, t0, t1, rows, src, big)


def action_potential(model, grid: GridTorus, s: float, s_prime: float, params: SolverParams,
                     max_windows: int = 4, sources=None) -> np.ndarray:
    """Minimum of ``F_{t,t'}`` over ``t = s`` and ``t' = s' + k T`` with ``T <= t' - t <= max_windows T``.

    The autonomous or periodic structure makes the start time irrelevant
    beyond its position ``s`` in the period.
    """
    _check_model(model)
    if max_windows < 2:
        raise ValidationError("max_windows must be >= 2")
    T = model.period
    s, s_prime = TimePoint(s, T).fractional, TimePoint(s_prime, T).fractional
    horizons = [s_prime + k * T for k in range(0, max_windows + 2)]
    horizons = [t for t in horizons if T - 1e-12 <= t - s <= max_windows * T + 1e-12]
    src = _sources(grid, sources)
    rows = _action_rows(model, grid, s, horizons, params, src, big_value())
    return np.min(rows, axis=0)


def _stabilize(P, bases, max_doublings, tol_h):
    """Iterate ``P^K (x) base`` for ``K = 1, 2, 4, ...`` until consecutive tables agree."""
    power = P
    prev = [_kernels.minplus_matmul(power, b) for b in bases]
    K = 1
    residual = np.inf
    for _ in range(max_doublings):
        power = _kernels.minplus_matmul(power, power)
        K *= 2
        cur = [_kernels.minplus_matmul(power, b) for b in bases]
        residual = max(float(np.max(np.abs(c - p))) for c, p in zip(cur, prev))
        if residual <= tol_h:
            return [np.minimum(c, p) for c, p in zip(cur, prev)], K, residual
        prev = cur
    raise NotStabilized(f"barrier did not stabilize within {K} periods",
                        horizon=K, residual=residual)


def barrier_slices(model, grid: GridTorus, params: SolverParams, n_slices: int = 8,
                   s: float = 0.0, tol_h: float = 1e-3, max_doublings: int = 14) -> list:
    """``h_{s, s + tau_j}`` for ``tau_j = j T / n_slices`` (one table per slice)."""
    _check_model(model)
    if n_slices < 1:
        raise ValidationError("n_slices must be >= 1")
    params.validate(grid, model)
    T = model.period
    big = big_value()
    src = _sources(grid, None)
    offsets = [j * T / n_slices for j in range(n_slices)]
    times = [s + o for o in offsets[1:]] + [s + T]
    rows = _action_rows(model, grid, s, times, params, src, big)
    P = rows[-1]
    # the zero offset is the identity for min-plus products
    ident = np.full_like(P, big)
    np.fill_diagonal(ident, 0.0)
    bases = [ident] + rows[:-1]
    tables, K, residual = _stabilize(P, bases, max_doublings, tol_h)
    return [BarrierTable(grid, TimePoint(s, T), TimePoint(s + o, T), tab, K, residual, big)
            for o, tab in zip(offsets, tables)]


def peierls_barrier(model, grid: GridTorus, s: float, s_prime: float, params: SolverParams,
                    tol_h: float = 1e-3, max_doublings: int = 14) -> BarrierTable:
    """Barrier ``h_{s,s'}``: the long-horizon limit of ``F_{s, s' + K T}``.

    Horizons double until two consecutive tables agree to ``tol_h``; the
    returned table is the elementwise minimum of those two.
    """
    _check_model(model)
    params.validate(grid, model)
    T = model.period
    s = TimePoint(s, T).fractional
    gap = TimePoint(s_prime - s, T).fractional
    big = big_value()
    src = _sources(grid, None)
    if gap > 1e-12 * T:
        P, base = _action_rows(model, grid, s, [s + T, s + gap], params, src, big)
    else:
        (P,) = _action_rows(model, grid, s, [s + T], params, src, big)
        base = np.full_like(P, big)
        np.fill_diagonal(base, 0.0)
    (table,), K, residual = _stabilize(P, [base], max_doublings, tol_h)
    return BarrierTable(grid, TimePoint(s, T), TimePoint(s + gap, T), table, K, residual, big)


def limit_solution(u0: ValueField, barriers: Sequence[BarrierTable],
                   renormalized: bool = True) -> PeriodicSolution:
    """Slices ``min_y u0(y) + h(y, x)``, shifted to grid minimum 0 unless ``renormalized`` is off."""
    if not barriers:
        raise ValidationError("at least one barrier table is required")
    T = barriers[0].s.period
    slices = []
    for tab in barriers:
        if tab.grid != u0.grid:
            raise ValidationError("barrier and initial field grids differ")
        vals = _kernels.minplus_vecmat(np.ascontiguousarray(u0.values), tab.values)
        f = ValueField(u0.grid, vals, TimePoint(tab.s_prime.fractional, T))
        slices.append(renormalize(f) if renormalized else f)
    return PeriodicSolution(slices, T)


def weak_kam_residual(w: PeriodicSolution, model, params: SolverParams) -> float:
    """Largest sup-norm change of a slice under one renormalized period of evolution."""
    T = w.period
    worst = 0.0
    for tau, sl in zip(w.slice_times, w.slices):
        k0 = _lattice_index(tau, params.dt, "slice time")
        out, _ = evolve_batch(sl.values, model, w.grid, params, k0, params.substeps_per_period)
        moved = out[0] - out[0].min()
        worst = max(worst, float(np.max(np.abs(moved - sl.values))))
    return worst


def extract_calibrated_curve(w: PeriodicSolution, model, end, span: float,
                             params: SolverParams, tol_cal: float = 1e-2) -> Trajectory:
    """Backward chain of one-step minimizers ending at ``end = (x, tau)``.

    The field is propagated forward from the slice at ``tau - span``; each
    backward step re-solves the one-step minimization at the current
    (off-grid) point.  The result carries ``defect`` and ``action``
    attributes; the defect is ``|w(end) - w(start) - action|``.
    """
    if not span > 0:
        raise ValidationError("span must be positive")
    x_end, tau = end
    T = w.period
    grid = w.grid
    t_end = TimePoint(tau, T).fractional + T * np.ceil(span / T)
    t_start = t_end - span
    start_slice = w.at(t_start)
    w.at(tau)  # end time must fall on a slice
    k0 = _lattice_index(t_start, params.dt, "start time")
    n = _lattice_index(span, params.dt, "span")
    _, rec = evolve_batch(start_slice.values, model, grid, params, k0, n, range(n + 1))
    st = get_stencil(grid, params)
    x = np.atleast_1d(np.asarray(x_end, dtype=float)).copy()
    xs, vs, costs = [x.copy()], [], []
    for k in range(n, 0, -1):
        t_prev = (k0 + k - 1) * params.dt
        y = x[None, :] - st.shifts
        prev = ValueField(grid, rec[k - 1][0])
        c = params.dt * model(grid.wrap(y), st.velocities, t_prev)
        total = interpolate(prev, grid.wrap(y)) + c
        m = int(np.argmin(total))
        x = y[m]
        xs.append(x.copy())
        vs.append(st.velocities[m])
        costs.append(float(c[m]))
    xs = np.array(xs[::-1])
    vs = np.array(vs[::-1] + [vs[0]])
    action = float(np.sum(costs))
    times = t_start + params.dt * np.arange(n + 1)
    defect = float(np.squeeze(abs(w(x_end, tau) - w(grid.wrap(xs[0]), t_start) - action)))
    if defect > tol_cal * span:
        raise CalibrationDefect("curve is not calibrated", defect=defect, bound=tol_cal * span)
    traj = Trajectory(times, xs, vs, True, np.concatenate([[0.0], np.cumsum(costs[::-1])]))
    traj.defect = defect
    traj.total_action = action
    return traj


# serialization --------------------------------------------------------------

def save_table(table, path) -> None:
    """Binary layout: 64-byte JSON header, metadata JSON, then row-major little-endian float64.

    The fixed header records the row/column counts and the byte length of the
    metadata block that follows it.
    """
    meta = json.dumps(table.metadata()).encode()
    rows, cols = table.values.shape
    head = json.dumps({"rows": rows, "cols": cols, "meta": len(meta)}).encode()
    if len(head) > HEADER_BYTES:
        raise ValidationError("table header does not fit in 64 bytes")
    with open(path, "wb") as fh:
        fh.write(head.ljust(HEADER_BYTES, b" "))
        fh.write(meta)
        fh.write(np.ascontiguousarray(table.values, dtype="<f8").tobytes())


def load_table(path):
    raw = Path(path).read_bytes()
    head = json.loads(raw[:HEADER_BYTES].decode())
    end = HEADER_BYTES + head["meta"]
    meta = json.loads(raw[HEADER_BYTES:end].decode())
    values = np.frombuffer(raw[end:], dtype="<f8").reshape(head["rows"], head["cols"]).copy()
    grid = GridTorus(**meta["grid"])
    if meta["kind"] == "action":
        return ActionTable(grid, meta["t_start"], meta["t_end"], values,
                           np.asarray(meta["sources"]), meta["big"])
    return BarrierTable(grid, TimePoint(**meta["s"]), TimePoint(**meta["s_prime"]), values,
                        meta["horizon_used"], meta["stabilization_residual"], meta["big"])


def save_table_csv(table, path) -> None:
    g = table.grid
    lines = [f"# table d={g.dim} n={g.points_per_axis} side={g.side!r} big={table.big!r}",
             "source," + ",".join(str(i) for i in range(g.n_nodes))]
    for src, row in zip(table.sources, table.values):
        lines.append(f"{int(src)}," + ",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
