"""Discrete Lax-Oleinik evolution on a grid.

One step of the scheme at node ``x`` is

    v(x) = min_s  u(x - s) + dt * L(x - s, s / dt, t)

over a fixed lattice of departure offsets ``s`` (spacing ``h / subcell``,
radius ``k dt``), with ``u(x - s)`` read by multilinear interpolation.  The
candidate set does not depend on ``u`` and every interpolation weight is
non-negative, so the step is monotone, non-expansive in the sup norm and
commutes with adding constants, up to rounding.
"""

from __future__ import annotations

import json
import weakref
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .exceptions import InsufficientData, ReachabilityViolation, ValidationError, WindowEmpty
from .grid import GridTorus, TimePoint, ValueField

COST_CACHE_BYTES = 64 * 1024 * 1024
BATCH_MIN = 8


@dataclass(frozen=True)
class SolverParams:
    """Discretization of the infimum over curves.

    ``subcell`` is the number of candidate departure offsets per grid cell
    along each axis.  ``fine_levels`` adds offsets ``h / (subcell 2^l)``,
    ``l = 1..fine_levels``, around zero so that slow motion is not priced
    by the coarse velocity quantum.  ``search_radius_cells`` defaults to
    ``k dt / h``.
    """

    dt: float
    substeps_per_period: int
    velocity_bound: float
    subcell: int = 8
    tol_fix: float = 1e-2
    search_radius_cells: Optional[float] = None
    fine_levels: int = 4

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if self.substeps_per_period < 1:
            raise ValidationError("substeps_per_period must be >= 1")
        if not self.velocity_bound > 0:
            raise ValidationError("velocity_bound must be positive")
        if self.subcell < 1:
            raise ValidationError("subcell must be >= 1")
        if not self.tol_fix > 0:
            raise ValidationError("tol_fix must be positive")
        if self.fine_levels < 0:
            raise ValidationError("fine_levels must be >= 0")

    @classmethod
    def for_model(cls, model, grid: GridTorus, substeps_per_period: Optional[int] = None,
                  subcell: int = 8, tol_fix: float = 1e-2, velocity_bound=None,
                  fine_levels: int = 4):
        """Parameters with ``dt = period / substeps`` (default: one substep per cell)."""
        if substeps_per_period is None:
            substeps_per_period = max(1, int(round(model.period / grid.spacing)))
        k = float(model.velocity_bound if velocity_bound is None else velocity_bound)
        return cls(model.period / substeps_per_period, substeps_per_period, k, subcell, tol_fix,
                   fine_levels=fine_levels)

    def radius_cells(self, grid: GridTorus) -> float:
        if self.search_radius_cells is not None:
            return float(self.search_radius_cells)
        return self.velocity_bound * self.dt / grid.spacing

    def validate(self, grid: GridTorus, model=None) -> None:
        if self.radius_cells(grid) < 2.0 - 1e-12:
            raise ReachabilityViolation(
                f"k*dt covers {self.radius_cells(grid):.3f} cells; at least 2 are required")
        if model is not None:
            tiling = self.substeps_per_period * self.dt
            if abs(tiling - model.period) > 1e-12 * max(1.0, model.period):
                raise ValidationError(
                    f"substeps_per_period * dt = {tiling} does not tile the period {model.period}")
            if model.dim != grid.dim:
                raise ValidationError("model and grid dimensions differ")
            if abs(model.side - grid.side) > 1e-12 * grid.side:
                raise ValidationError("model and grid coordinate periods differ")

    def to_dict(self) -> dict:
        return {"dt": self.dt, "substeps_per_period": self.substeps_per_period,
                "velocity_bound": self.velocity_bound, "subcell": self.subcell,
                "tol_fix": self.tol_fix, "search_radius_cells": self.search_radius_cells,
                "fine_levels": self.fine_levels}


class Stencil:
    """Candidate departure offsets and their interpolation corners."""

    def __init__(self, grid: GridTorus, params: SolverParams):
        h, r, d = grid.spacing, params.subcell, grid.dim
        radius = params.radius_cells(grid)
        jmax = int(np.floor(radius * r + 1e-9))
        rng = np.arange(-jmax, jmax + 1)
        lattice = np.stack([m.ravel() for m in np.meshgrid(*([rng] * d), indexing="ij")], axis=-1)
        keep = np.sum(lattice.astype(float) ** 2, axis=1) <= (radius * r) ** 2 + 1e-9
        lattice = lattice[keep]
        cells = lattice / r
        unit = np.stack([m.ravel() for m in np.meshgrid(*([np.arange(-1, 2)] * d), indexing="ij")],
                        axis=-1)
        unit = unit[np.any(unit != 0, axis=1)]
        fine = [unit / (r * 2 ** lev) for lev in range(1, params.fine_levels + 1)]
        cells = np.concatenate([cells] + fine) if fine else cells
        self.grid = grid
        self.dt = params.dt
        self.shifts = cells * h
        self.velocities = self.shifts / params.dt
        ic = np.ceil(cells).astype(np.int64)
        frac = ic - cells
        n = grid.points_per_axis
        multi = np.stack(np.unravel_index(np.arange(grid.n_nodes), grid.shape), axis=-1)
        M, C = len(cells), 1 << d
        self.idx = np.empty((grid.n_nodes, M, C), dtype=np.int64)
        self.wts = np.empty((M, C))
        for corner in range(C):
            bits = np.array([(corner >> a) & 1 for a in range(d)])
            w = np.prod(np.where(bits, frac, 1.0 - frac), axis=1)
            self.wts[:, corner] = w
            corner_multi = (multi[:, None, :] - ic[None, :, :] + bits) % n
            self.idx[:, :, corner] = np.ravel_multi_index(
                tuple(np.moveaxis(corner_multi, -1, 0)), grid.shape)
        self.departures = grid.wrap(grid.coordinates()[:, None, :] - self.shifts[None, :, :])
        self._costs = weakref.WeakKeyDictionary()

    @property
    def n_candidates(self) -> int:
        return len(self.shifts)

    def cost(self, model, step_index: int, params: SolverParams) -> np.ndarray:
        """One-step action ``dt * L(y, s/dt, t)``, shape ``(nodes, candidates)``."""
        t = step_index * self.dt
        if model.kind == "asymptotically_periodic":
            return self._eval(model, t)
        cache = self._costs.setdefault(model, {})
        if model.kind == "autonomous":
            key = 0
        else:
            key = step_index % params.substeps_per_period
            nbytes = self.n_candidates * self.grid.n_nodes * 8 * params.substeps_per_period
            if nbytes > COST_CACHE_BYTES:
                return self._eval(model, key * self.dt)
        if key not in cache:
            cache[key] = self._eval(model, key * self.dt)
        return cache[key]

    def _eval(self, model, t):
        vel = np.broadcast_to(self.velocities[None, :, :], self.departures.shape)
        return np.ascontiguousarray(self.dt * model(self.departures, vel, t), dtype=float)


@lru_cache(maxsize=16)
def get_stencil(grid: GridTorus, params: SolverParams) -> Stencil:
    return Stencil(grid, params)


def set_threads(n: int) -> int:
    """Set the worker count for the compiled kernels; returns the count in effect.

    ``0`` means all available.  Requests above the available count are
    clamped; kernel outputs do not depend on the count.
    """
    import numba
    available = numba.config.NUMBA_NUM_THREADS
    n = available if n <= 0 else min(int(n), available)
    numba.set_num_threads(n)
    return n


def _lattice_index(t: float, dt: float, what: str) -> int:
    k = int(round(t / dt))
    if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ValidationError(f"{what}={t} is not a multiple of dt={dt}")
    return k


def evolve_batch(values: np.ndarray, model, grid: GridTorus, params: SolverParams,
                 k0: int, n_steps: int, record: Sequence[int] = (),
                 keep_argmin: bool = False):
    """Run ``n_steps`` scheme steps on a batch ``(B, N)`` starting at step index ``k0``.

    Returns ``(final, recorded)`` where ``recorded`` maps each step count in
    ``record`` (0 means the input) to a copy of the batch at that point.
    With ``keep_argmin`` the candidate index of the last step is returned as
    a third element.
    """
    params.validate(grid, model)
    st = get_stencil(grid, params)
    u = np.array(values, dtype=float, copy=True)
    if u.ndim == 1:
        u = u[None, :]
    batched = u.shape[0] >= BATCH_MIN
    if batched:
        u = np.ascontiguousarray(u.T)
        kernel = _kernels.minplus_step_batch
    else:
        kernel = _kernels.minplus_step
    out = np.empty_like(u)
    arg = np.empty(u.shape, dtype=np.int64)
    view = (lambda a: a.T.copy()) if batched else (lambda a: a.copy())
    wanted = set(int(r) for r in record)
    recorded = {}
    if 0 in wanted:
        recorded[0] = view(u)
    for i in range(n_steps):
        cost = st.cost(model, k0 + i, params)
        kernel(u, st.idx, st.wts, cost, out, arg)
        u, out = out, u
        if i + 1 in wanted:
            recorded[i + 1] = view(u)
    if keep_argmin:
        return view(u), recorded, view(arg)
    return view(u), recorded


def lax_oleinik_step(u: ValueField, model, t: float, params: SolverParams) -> ValueField:
    """One semi-Lagrangian step from time ``t`` to ``t + dt``."""
    k0 = _lattice_index(t, params.dt, "t")
    final, _ = evolve_batch(u.values, model, u.grid, params, k0, 1)
    return ValueField(u.grid, final[0], TimePoint(t + params.dt, model.period))


def lax_oleinik_apply(u: ValueField, model, t0: float, t1: float, params: SolverParams,
                      record: Sequence[float] = ()):
    """``T_{t0 -> t1} u``, evaluating the model at the running time.

    With ``record`` a list of intermediate times, returns ``(field, {time: field})``.
    """
    if not t1 > t0:
        raise ValidationError("t1 must exceed t0")
    k0 = _lattice_index(t0, params.dt, "t0")
    k1 = _lattice_index(t1, params.dt, "t1")
    steps = {(_lattice_index(s, params.dt, "record time") - k0): s for s in record}
    final, rec = evolve_batch(u.values, model, u.grid, params, k0, k1 - k0, steps.keys())
    result = ValueField(u.grid, final[0], TimePoint(k1 * params.dt, model.period))
    if not record:
        return result
    fields = {steps[k]: ValueField(u.grid, v[0], TimePoint((k0 + k) * params.dt, model.period))
              for k, v in rec.items()}
    return result, fields


def renormalize(field: ValueField) -> ValueField:
    return field.with_values(field.values - field.values.min())


def renormalized_apply(phi: ValueField, model, t: float, params: SolverParams,
                       t0: float = 0.0) -> ValueField:
    """``T_t phi - min_x T_t phi``; the grid minimum of the result is exactly 0."""
    return renormalize(lax_oleinik_apply(phi, model, t0, t0 + t, params))


def renormalized_trajectory(phi: ValueField, model, times: Sequence[float],
                            params: SolverParams, t0: float = 0.0) -> dict:
    """Renormalized fields at each of ``times`` (absolute), from one evolution."""
    times = sorted(set(float(s) for s in times))
    _, rec = lax_oleinik_apply(phi, model, t0, times[-1], params, record=times)
    return {s: renormalize(rec[s]) for s in times}


def _window_min(u: ValueField, model, ks: Sequence[int], tau: float,
                params: SolverParams) -> ValueField:
    if model.kind == "asymptotically_periodic":
        raise ValidationError("the window operators need an autonomous or periodic model")
    T = model.period
    times = [k * T + tau for k in ks]
    if min(times) <= 0:
        # k = 0 with tau = 0 is the identity
        nonzero = [s for s in times if s > 0]
        stack = [u.values]
    else:
        nonzero, stack = times, []
    if nonzero:
        _, rec = lax_oleinik_apply(u, model, 0.0, max(nonzero), params, record=nonzero)
        stack += [rec[s].values for s in nonzero]
    return ValueField(u.grid, np.min(stack, axis=0), TimePoint(tau, T))


def new_lax_oleinik(u: ValueField, model, n: int, tau: float, params: SolverParams) -> ValueField:
    """Pointwise minimum of ``T_{tau + k T} u`` over ``k = n, ..., 2n``."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not 0 <= tau < model.period + 1e-12:
        raise ValidationError("tau must lie in [0, period)")
    return _window_min(u, model, range(n, 2 * n + 1), tau, params)


def new_lax_oleinik_family(u: ValueField, model, n: int, taus: Sequence[float],
                           params: SolverParams) -> list:
    """``[T~_n^tau u for tau in taus]`` from one evolution (the family ``U_n^u``)."""
    T = model.period
    times = sorted({k * T + tau for k in range(n, 2 * n + 1) for tau in taus} - {0.0})
    _, rec = lax_oleinik_apply(u, model, 0.0, times[-1], params, record=times)
    rec[0.0] = u
    out = []
    for tau in taus:
        stack = [rec[k * T + tau].values for k in range(n, 2 * n + 1)]
        out.append(ValueField(u.grid, np.min(stack, axis=0), TimePoint(tau, T)))
    return out


def v_family(u: ValueField, model, n: int, t: float, params: SolverParams) -> ValueField:
    """``V_n^u(., t) = T_t (T~_n u)``."""
    base = new_lax_oleinik(u, model, n, 0.0, params)
    if t == 0:
        return base
    return lax_oleinik_apply(base, model, 0.0, t, params)


def shifted_new_lax_oleinik(u: ValueField, model, n: int, tau: float, a: float,
                            params: SolverParams) -> ValueField:
    """Window operator with ``k`` running over ``n + floor(a), ..., 2n + floor(a)``.

    ``floor(a)`` is the integer part of the shift; paths end at ``tau``.
    """
    shift = int(np.floor(a))
    ks = [k for k in range(n + shift, 2 * n + shift + 1) if k >= 0]
    if not ks:
        raise WindowEmpty(f"no admissible k for n={n}, a={a}")
    if n < abs(shift):
        raise ValidationError(f"n={n} must be at least |floor(a)|={abs(shift)}")
    return _window_min(u, model, ks, tau, params)


# convergence rate -----------------------------------------------------------

@dataclass
class ConvergenceReport:
    gaps: list
    fitted_rate: float
    fitted_constant: float
    r_squared: float
    nominal_rate: Optional[float] = None
    used: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"gaps": [[int(n), float(g)] for n, g in self.gaps],
                "fitted_rate": self.fitted_rate, "fitted_constant": self.fitted_constant,
                "r_squared": self.r_squared, "nominal_rate": self.nominal_rate,
                "used": [int(n) for n in self.used]}

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def save_csv(self, path) -> None:
        lines = [f"# fitted_rate={self.fitted_rate!r} fitted_constant={self.fitted_constant!r} "
                 f"r_squared={self.r_squared!r} nominal_rate={self.nominal_rate!r}", "n,gap"]
        lines += [f"{int(n)},{float(g)!r}" for n, g in self.gaps]
        Path(path).write_text("\n".join(lines) + "\n")


def loglinear_fit(n, gaps):
    """Least-squares line through ``(n, log gap)``; returns ``(rate, constant, r2)``."""
    n = np.asarray(n, dtype=float)
    y = np.log(np.asarray(gaps, dtype=float))
    A = np.stack([np.ones_like(n), n], axis=1)
    (intercept, slope), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (intercept + slope * n)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(-slope), float(np.exp(intercept)), r2


def fit_decay_rate(gaps, floor: float = 0.0, scale: float = 1.0,
                   nominal_rate: Optional[float] = None, min_epochs: int = 4) -> ConvergenceReport:
    """Fit ``gap ~ C exp(-rate n)`` over epochs whose gap clears the noise floor.

    An epoch is usable when its gap exceeds both ``floor`` and
    ``10 * eps * scale``.
    """
    pairs = [(int(n), float(g)) for n, g in gaps]
    if any(g < 0 for _, g in pairs):
        raise ValidationError("gaps must be non-negative")
    cut = max(float(floor), 10.0 * np.finfo(float).eps * scale)
    used = [(n, g) for n, g in pairs if g > cut]
    if len(used) < min_epochs:
        raise InsufficientData(f"{len(used)} usable epochs, need {min_epochs}",
                               usable=len(used), floor=cut)
    rate, const, r2 = loglinear_fit([n for n, _ in used], [g for _, g in used])
    return ConvergenceReport(pairs, rate, const, r2, nominal_rate, [n for n, _ in used])


def renormalized_gaps(phi: ValueField, model, reference: ValueField, epochs: Sequence[int],
                      params: SolverParams, tau: float = 0.0) -> list:
    """``[(n, sup |T_{tau + n T} phi - reference|)]`` with ``T`` renormalized."""
    T = model.period
    times = [n * T + tau for n in epochs]
    fields = renormalized_trajectory(phi, model, times, params)
    return [(int(n), float(np.max(np.abs(fields[n * T + tau].values - reference.values))))
            for n in epochs]
