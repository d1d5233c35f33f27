"""Gradient graphs of value fields and their Hausdorff distances.

A graph point is ``(x, tau, p, e)``: a node, the time slice it belongs to,
the spatial gradient there and the energy component ``e = -H(x, p, tau)``.
Nodes where the one-sided difference quotients disagree are treated as
points of non-differentiability and carry no graph point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree

from . import _kernels
from .exceptions import EmptyCloud, ValidationError
from .grid import ValueField, interpolate
from .models import _flow
from .semigroup import SolverParams, renormalized_trajectory

BRUTE_FORCE_PAIRS = 10_000_000


@dataclass
class GradientGraph:
    points: np.ndarray
    dim: int
    period: float
    side: float
    source: str
    nondiff_mask: np.ndarray
    tol_nd: float
    weights: tuple = (1.0, 1.0, 1.0, 1.0)
    max_lipschitz: float = 0.0
    max_energy: float = 0.0
    flagged: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))

    @property
    def x(self):
        return self.points[:, :self.dim]

    @property
    def tau(self):
        return self.points[:, self.dim]

    @property
    def p(self):
        return self.points[:, self.dim + 1:2 * self.dim + 1]

    @property
    def e(self):
        return self.points[:, -1]

    def periods(self) -> np.ndarray:
        """Per-column period of the point coordinates (0 for non-periodic columns)."""
        return np.array([self.side] * self.dim + [self.period] + [0.0] * (self.dim + 1))

    def column_weights(self) -> np.ndarray:
        wx, wt, wp, we = self.weights
        return np.array([wx] * self.dim + [wt] + [wp] * self.dim + [we])

    def metadata(self) -> dict:
        return {"source": self.source, "dim": self.dim, "period": self.period,
                "side": self.side, "tol_nd": self.tol_nd, "weights": list(self.weights),
                "n_points": int(len(self.points)), "n_flagged": int(self.nondiff_mask.sum())}

    def save_csv(self, path) -> None:
        d = self.dim
        cols = [f"x{a}" for a in range(d)] + ["tau"] + [f"p{a}" for a in range(d)] + ["e", "nondiff"]
        lines = [",".join(cols)]
        for row in self.points:
            lines.append(",".join(repr(float(v)) for v in row) + ",0")
        blank = ",".join(["nan"] * (d + 1))
        for row in self.flagged:
            lines.append(",".join(repr(float(v)) for v in row) + f",{blank},1")
        Path(path).write_text("\n".join(lines) + "\n")

    def save_json(self, path) -> None:
        data = dict(self.metadata(), points=self.points.tolist(), flagged=self.flagged.tolist(),
                    nondiff_mask=self.nondiff_mask.astype(int).tolist())
        Path(path).write_text(json.dumps(data))


@dataclass
class MinimizerSet:
    x: np.ndarray
    t: float
    velocities: np.ndarray
    values: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def cardinality(self) -> int:
        return len(self.velocities)


def default_tol_nd(field_: ValueField) -> float:
    return max(10.0 * field_.grid.spacing, 0.05 * field_.lipschitz_estimate)


def detect_differentiability(field_: ValueField, tol_nd: Optional[float] = None) -> np.ndarray:
    """Boolean mask of nodes where forward and backward difference quotients differ by more than ``tol_nd``."""
    if tol_nd is None:
        tol_nd = default_tol_nd(field_)
    g = field_.grid
    u = field_.values.reshape(g.shape)
    mask = np.zeros(g.shape, dtype=bool)
    for axis in range(g.dim):
        fwd = (np.roll(u, -1, axis=axis) - u) / g.spacing
        bwd = (u - np.roll(u, 1, axis=axis)) / g.spacing
        mask |= np.abs(fwd - bwd) > tol_nd
    return mask.ravel()


def central_gradient(field_: ValueField) -> np.ndarray:
    g = field_.grid
    u = field_.values.reshape(g.shape)
    grads = [(np.roll(u, -1, axis=a) - np.roll(u, 1, axis=a)) / (2 * g.spacing) for a in range(g.dim)]
    return np.stack([gr.ravel() for gr in grads], axis=-1)


def build_gradient_graph(source, model, tol_nd: Optional[float] = None, times=None,
                         tag: str = "limit", weights=(1.0, 1.0, 1.0, 1.0)) -> GradientGraph:
    """Graph of a field, a list of fields, or a periodic solution.

    Each field contributes its unflagged nodes at its own time stamp, or
    at ``times`` when given.  The Hamiltonian is evaluated at that actual
    time; the ``tau`` coordinate is the time modulo the model period.
    """
    fields = list(source.slices) if hasattr(source, "slices") else (
        [source] if isinstance(source, ValueField) else list(source))
    if times is None:
        times = [f.time.raw for f in fields]
    T = model.period
    pts, masks, flagged = [], [], []
    lip = 0.0
    for f, t in zip(fields, times):
        tol = default_tol_nd(f) if tol_nd is None else tol_nd
        mask = detect_differentiability(f, tol)
        keep = ~mask
        x = f.grid.coordinates()[keep]
        p = central_gradient(f)[keep]
        tau = np.mod(t, T)
        e = -np.asarray(model.hamiltonian(x, p, t), dtype=float).reshape(-1)
        pts.append(np.column_stack([x, np.full(len(x), tau), p, e]))
        flagged.append(np.column_stack([f.grid.coordinates()[mask], np.full(mask.sum(), tau)]))
        masks.append(mask)
        lip = max(lip, f.lipschitz_estimate)
    points = np.concatenate(pts) if pts else np.empty((0, 2 * model.dim + 2))
    grid = fields[0].grid
    return GradientGraph(points, grid.dim, T, grid.side, tag, np.concatenate(masks),
                         tol_nd if tol_nd is not None else float("nan"), tuple(weights), lip,
                         _energy_bound(model, grid, lip), np.concatenate(flagged))


def _energy_bound(model, grid, lip, n_p=9, n_t=8):
    """Largest ``|H(x, p, t)|`` over nodes, ``|p_a| <= lip`` and sampled times."""
    x = grid.coordinates()
    axis = np.linspace(-lip, lip, n_p)
    ps = np.stack([m.ravel() for m in np.meshgrid(*([axis] * grid.dim), indexing="ij")], axis=-1)
    best = 0.0
    for t in np.arange(n_t) * model.period / n_t:
        for p in ps:
            h = model.hamiltonian(x, np.broadcast_to(p, x.shape), t)
            best = max(best, float(np.max(np.abs(h))))
    return best


def graph_diameter_bound(*graphs: GradientGraph) -> float:
    """Diameter of the product region containing the graphs.

    The region is the torus times the time circle times the box
    ``|p_a| <= Lip`` times ``|e| <= max |H|`` over that box, with Lip the
    largest measured Lipschitz estimate.  Any Hausdorff distance between
    the graphs is at most this value.
    """
    g = graphs[0]
    d = g.dim
    wx, wt, wp, we = g.weights
    lip = max(gr.max_lipschitz for gr in graphs)
    emax = max(gr.max_energy for gr in graphs)
    return float(np.sqrt(d * (wx * g.side / 2) ** 2 + (wt * g.period / 2) ** 2
                         + d * (2 * wp * lip) ** 2 + (2 * we * emax) ** 2))


def _as_cloud(obj):
    if isinstance(obj, GradientGraph):
        return obj.points * obj.column_weights(), obj.periods() * obj.column_weights()
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 2:
        return arr, None
    return (arr.reshape(-1, 1) if arr.ndim == 1 else arr.reshape(1, 1)), None


def _directed(a, b, periods):
    if len(a) * len(b) <= BRUTE_FORCE_PAIRS:
        return float(np.sqrt(_kernels.directed_hausdorff_sq(a, b, periods)))
    lo = np.minimum(a.min(axis=0), b.min(axis=0))
    span = np.maximum(a.max(axis=0), b.max(axis=0)) - lo
    box = np.where(periods > 0, periods, 2.0 * span + 1.0)
    shift = np.where(periods > 0, 0.0, lo)
    wrap = lambda z: np.mod(z - shift, box)
    tree = cKDTree(wrap(b), boxsize=box)
    dist, _ = tree.query(wrap(a), k=1)
    return float(np.max(dist))


def hausdorff_distance(A, B, periods=None) -> float:
    """Symmetric Hausdorff distance between point clouds.

    ``A`` and ``B`` are arrays ``(n, k)`` or :class:`GradientGraph` objects
    (which supply their own periods and weights).  ``periods[c] > 0`` makes
    column ``c`` periodic.  Large clouds go through a periodic k-d tree.
    """
    a, pa = _as_cloud(A)
    b, pb = _as_cloud(B)
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloud("Hausdorff distance needs two nonempty clouds")
    if a.shape[1] != b.shape[1]:
        raise ValidationError("clouds have different coordinate counts")
    if periods is None:
        periods = pa if pa is not None else (pb if pb is not None else np.zeros(a.shape[1]))
    periods = np.asarray(periods, dtype=float)
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    return max(_directed(a, b, periods), _directed(b, a, periods))


def minimizer_set(phi: ValueField, model, x, t: float, params: Optional[SolverParams] = None,
                  tol_min: float = 1e-3, n_velocities: Optional[int] = None,
                  flow_dt: float = 1e-2) -> MinimizerSet:
    """Velocities ``v`` at ``x`` whose backward Euler-Lagrange curve minimizes
    ``phi(gamma(-t)) + action`` over ``[-t, 0]``.

    ``phi`` lives at its own time stamp and ``x`` at that time plus ``t``.
    Local minima of a velocity scan are refined (in one dimension), those
    within ``tol_min`` of the best are kept, and minimizers closer than two
    scan cells are merged.
    """
    if not t > 0:
        raise ValidationError("t must be positive")
    d = model.dim
    k = params.velocity_bound if params is not None else model.velocity_bound
    if n_velocities is None:
        n_velocities = {1: 801, 2: 61, 3: 21}[d]
    axis = np.linspace(-k, k, n_velocities)
    cell = axis[1] - axis[0]
    vels = np.stack([m.ravel() for m in np.meshgrid(*([axis] * d), indexing="ij")], axis=-1)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t_end = phi.time.raw + t
    n_steps = max(1, int(np.ceil(t / flow_dt)))

    def score(v):
        v = np.atleast_2d(v)
        xs, _, s = _flow(model, np.broadcast_to(x, v.shape), v, t_end, t_end - t, n_steps,
                         with_action=True, blowup=np.inf)
        vals = interpolate(phi, phi.grid.wrap(xs)) - s
        return np.where(np.isfinite(vals), vals, np.inf)

    values = score(vels)
    shaped = values.reshape((n_velocities,) * d)
    local = np.ones(shaped.shape, dtype=bool)
    for a in range(d):
        prev = np.roll(shaped, 1, axis=a)
        nxt = np.roll(shaped, -1, axis=a)
        idx = np.arange(n_velocities)
        prev = np.where(np.expand_dims(idx == 0, tuple(i for i in range(d) if i != a)), np.inf, prev)
        nxt = np.where(np.expand_dims(idx == n_velocities - 1, tuple(i for i in range(d) if i != a)), np.inf, nxt)
        local &= (shaped <= prev) & (shaped <= nxt)
    cand = np.flatnonzero(local.ravel())
    cand_v = vels[cand]
    cand_f = values[cand]
    if d == 1:
        for i, v0 in enumerate(cand_v[:, 0]):
            res = minimize_scalar(lambda s: float(score(np.array([[s]]))[0]),
                                  bounds=(max(-k, v0 - cell), min(k, v0 + cell)),
                                  method="bounded", options={"xatol": 1e-9})
            if res.fun < cand_f[i]:
                cand_v[i, 0], cand_f[i] = res.x, res.fun
    best = cand_f.min()
    keep = cand_f <= best + tol_min
    order = np.argsort(cand_f[keep], kind="stable")
    kept_v, kept_f = cand_v[keep][order], cand_f[keep][order]
    clusters, cvals = [], []
    for v, f in zip(kept_v, kept_f):
        if all(np.max(np.abs(v - c)) > 2 * cell for c in clusters):
            clusters.append(v)
            cvals.append(f)
    return MinimizerSet(x, float(t), np.array(clusters), np.array(cvals))


def graph_convergence(model, phi: ValueField, limit, epochs: Sequence[int],
                      params: SolverParams, tol_nd: Optional[float] = None,
                      weights=(1.0, 1.0, 1.0, 1.0), return_graphs: bool = False):
    """``[(n, d_H(graph of the renormalized evolution at epoch n, graph of the limit))]``.

    The evolved graph at epoch ``n`` collects the renormalized fields at
    times ``n T + tau_j`` for the slice times of ``limit``.
    """
    T = model.period
    target = build_gradient_graph(limit, model.limit_model or model, tol_nd, tag="limit",
                                  weights=weights)
    taus = list(limit.slice_times)
    times = [n * T + tau for n in epochs for tau in taus]
    fields = renormalized_trajectory(phi, model, times, params)
    out, graphs = [], {}
    for n in epochs:
        evolved = [fields[n * T + tau] for tau in taus]
        graph = build_gradient_graph(evolved, model, tol_nd, times=[n * T + tau for tau in taus],
                                     tag=f"evolved({n})",
                                     weights=weights)
        graphs[n] = graph
        out.append((int(n), hausdorff_distance(graph, target)))
    if return_graphs:
        return out, target, graphs
    return out
