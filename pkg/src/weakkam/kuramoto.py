"""Second-order Kuramoto oscillators with couplings that decay at one node.

The Lagrangian on the N-torus (coordinate period 2 pi) is

    L = |v|^2 / 2 + <Omega, theta> + 1/2 sum_ij a_ij(t) cos(theta_j - theta_i)

with ``a_ij(t) = beta_ij(omega t)`` away from the decaying node ``k`` and
``a_ij(t) = beta0_ij(omega t) + exp(-gamma t) beta_ij(omega t)`` on edges
touching ``k``.  ``beta0`` (zero by default) is a persistent coupling on
those edges; it keeps the two-oscillator limit from degenerating to free
motion.  Each coupling is a truncated Fourier series in its argument with
coefficients ``[a0, c1, s1, c2, s2, ...]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ._kernels import directed_hausdorff_sq
from .barrier import barrier_slices, limit_solution, PeriodicSolution
from .exceptions import (AubryHypothesisUnverified, IndexOutOfRange, NonzeroDrift,
                         NotPeriodic, ValidationError)
from .graphs import GradientGraph, build_gradient_graph, hausdorff_distance
from .grid import GridTorus, ValueField
from .models import (MechanicalLagrangian, _flow, estimate_critical_value, is_hyperbolic,
                     monodromy_eigenvalues, period_map)
from .semigroup import SolverParams

TWO_PI = 2.0 * np.pi


def _fourier(coeffs, s):
    c = np.asarray(coeffs, dtype=float)
    out = np.full(np.shape(s), c[0]) if c.size else np.zeros(np.shape(s))
    for m in range(1, (c.size - 1) // 2 + 1):
        out = out + c[2 * m - 1] * np.cos(m * s) + c[2 * m] * np.sin(m * s)
    return out


def _fourier_sup(coeffs):
    c = np.abs(np.asarray(coeffs, dtype=float))
    return float(c.sum())


@dataclass
class KuramotoConfig:
    n_osc: int
    beta: list
    gamma: float
    freq: float = TWO_PI
    decaying_node: int = 1
    omega_nat: Optional[list] = None
    beta_persistent: Optional[list] = None
    reduced: bool = True

    def __post_init__(self):
        N = self.n_osc
        if N < 2:
            raise ValidationError("at least two oscillators are required")
        if not self.gamma > 0:
            raise ValidationError("gamma must be positive")
        if not self.freq > 0:
            raise ValidationError("freq must be positive")
        if not 1 <= self.decaying_node <= N:
            raise ValidationError("decaying_node must lie in 1..n_osc")
        if self.omega_nat is None:
            self.omega_nat = [0.0] * N
        if len(self.omega_nat) != N:
            raise ValidationError("omega_nat needs one entry per oscillator")
        if self.beta_persistent is None:
            self.beta_persistent = [[[0.0] for _ in range(N)] for _ in range(N)]
        for name in ("beta", "beta_persistent"):
            mat = getattr(self, name)
            if len(mat) != N or any(len(row) != N for row in mat):
                raise ValidationError(f"{name} must be {N} x {N}")
            for i in range(N):
                for j in range(N):
                    a, b = np.asarray(mat[i][j], float), np.asarray(mat[j][i], float)
                    if a.shape != b.shape or not np.array_equal(a, b):
                        raise ValidationError(f"{name} must be symmetric")
                    if a.size == 0 or a.size % 2 == 0:
                        raise ValidationError(f"{name} entries are [a0, c1, s1, ...] lists")
        k = self.decaying_node - 1
        for i in range(N):
            for j in range(N):
                if i != k and j != k and np.any(np.asarray(self.beta_persistent[i][j]) != 0):
                    raise ValidationError("persistent coupling is only meaningful on edges touching the decaying node")

    @property
    def period(self) -> float:
        return TWO_PI / self.freq

    @property
    def has_drift(self) -> bool:
        return bool(np.any(np.asarray(self.omega_nat) != 0))

    def to_dict(self) -> dict:
        return {"n_osc": self.n_osc, "beta": self.beta, "gamma": self.gamma, "freq": self.freq,
                "decaying_node": self.decaying_node, "omega_nat": list(self.omega_nat),
                "beta_persistent": self.beta_persistent, "reduced": self.reduced}

    @classmethod
    def from_dict(cls, data: dict) -> "KuramotoConfig":
        allowed = {"n_osc", "beta", "gamma", "freq", "decaying_node", "omega_nat",
                   "beta_persistent", "reduced"}
        unknown = set(data) - allowed
        if unknown:
            raise ValidationError(f"unknown Kuramoto config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ValidationError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "KuramotoConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def two_oscillators(cls, decaying=(1.0,), persistent=(0.5,), gamma=0.5, freq=TWO_PI):
        """Symmetric pair whose only edge decays towards ``persistent``."""
        dec = list(map(float, decaying))
        per = list(map(float, persistent))
        return cls(2, [[[0.0], dec], [dec, [0.0]]], gamma, freq, 2,
                   beta_persistent=[[[0.0], per], [per, [0.0]]])


def _check_index(config, i, j):
    N = config.n_osc
    if not (1 <= i <= N and 1 <= j <= N):
        raise IndexOutOfRange(f"oscillator indices must lie in 1..{N}", i=i, j=j)


def coupling_schedule(config: KuramotoConfig, i: int, j: int, t, limit: bool = False):
    """``a_ij(t)`` (1-based indices); with ``limit`` the decayed term is dropped."""
    _check_index(config, i, j)
    s = config.freq * np.asarray(t, dtype=float)
    k = config.decaying_node
    if i == k or j == k:
        out = _fourier(config.beta_persistent[i - 1][j - 1], s)
        if not limit:
            out = out + np.exp(-config.gamma * np.asarray(t, dtype=float)) * \
                _fourier(config.beta[i - 1][j - 1], s)
        return out
    return _fourier(config.beta[i - 1][j - 1], s)


def _couplings(config, t, limit):
    N = config.n_osc
    return [[coupling_schedule(config, i + 1, j + 1, t, limit) for j in range(N)] for i in range(N)]


def _network_model(config, limit, usage):
    N = config.n_osc
    omega = np.asarray(config.omega_nat, dtype=float)

    def V(x, t):
        a = _couplings(config, t, limit)
        out = -np.sum(x * omega, axis=-1)
        for i in range(N):
            for j in range(N):
                out = out - 0.5 * a[i][j] * np.cos(x[..., j] - x[..., i])
        return out

    def dV(x, t):
        a = _couplings(config, t, limit)
        g = np.empty(np.shape(x))
        for i in range(N):
            acc = np.full(np.shape(x)[:-1], -omega[i])
            for j in range(N):
                acc = acc - a[i][j] * np.sin(x[..., j] - x[..., i])
            g[..., i] = acc
        return g

    kw = dict(dim=N, side=TWO_PI, period=config.period, has_drift=config.has_drift,
              name="kuramoto", params=config.to_dict())
    if limit:
        return MechanicalLagrangian(V, dV, kind="periodic", **kw)
    return V, dV, kw


def build_kuramoto_model(config: KuramotoConfig, usage: str = "hj") -> MechanicalLagrangian:
    """Asymptotically periodic model on the N-torus together with its periodic limit.

    ``usage='hj'`` refuses a nonzero natural-frequency vector, whose linear
    potential is not single-valued on the torus; ``usage='flow'`` allows it
    (trajectories live on the covering space).
    """
    if usage not in ("hj", "flow"):
        raise ValidationError("usage must be 'hj' or 'flow'")
    if usage == "hj" and config.has_drift:
        raise NonzeroDrift("natural frequencies must vanish for Hamilton-Jacobi computations",
                           omega=list(config.omega_nat))
    limit = _network_model(config, True, usage)
    V, dV, kw = _network_model(config, False, usage)
    model = MechanicalLagrangian(V, dV, kind="asymptotically_periodic", rho=config.gamma,
                                 limit_model=limit, **kw)
    k = max(model.velocity_bound, limit.velocity_bound)
    model.velocity_bound = limit.velocity_bound = k
    return model


def reduced_model(config: KuramotoConfig, limit: bool = False, normalize: bool = True,
                  velocity_bound: Optional[float] = None) -> MechanicalLagrangian:
    """Two oscillators in the phase difference ``phi = theta_2 - theta_1``.

    ``L = phi_dot^2 / 2 + 2 a(t) cos(phi) + shift`` has the reduced
    Euler-Lagrange equation ``phi'' = -2 a(t) sin(phi)``.  With
    ``normalize`` the constant ``shift`` makes the limit's critical value 0.
    The returned model (asymptotic unless ``limit``) carries its limit.
    """
    if config.n_osc != 2:
        raise ValidationError("the reduction needs exactly two oscillators")
    if config.omega_nat[1] - config.omega_nat[0] != 0:
        raise NonzeroDrift("the reduced coordinate needs equal natural frequencies",
                           omega=list(config.omega_nat))

    def make(lim, shift):
        def V(x, t):
            return -2.0 * coupling_schedule(config, 1, 2, t, lim) * np.cos(x[..., 0]) - shift

        def dV(x, t):
            a = coupling_schedule(config, 1, 2, t, lim)
            return (2.0 * a * np.sin(x[..., 0]))[..., None] * np.ones(np.shape(x))
        kind = "periodic" if lim else "asymptotically_periodic"
        return V, dV, kind

    params = dict(config.to_dict(), normalize=normalize)
    V, dV, _ = make(True, 0.0)
    bare = MechanicalLagrangian(V, dV, dim=1, side=TWO_PI, kind="periodic",
                                period=config.period, name="kuramoto_reduced", params=params,
                                velocity_bound=1.0)
    shift = 0.0
    if normalize:
        grid = GridTorus(1, 512, TWO_PI)
        shift = estimate_critical_value(bare, grid).value
    V, dV, _ = make(True, shift)
    lim = MechanicalLagrangian(V, dV, dim=1, side=TWO_PI, kind="periodic", period=config.period,
                               name="kuramoto_reduced", params=params)
    if limit:
        if velocity_bound is not None:
            lim.velocity_bound = velocity_bound
        return lim
    V, dV, _ = make(False, shift)
    model = MechanicalLagrangian(V, dV, dim=1, side=TWO_PI, kind="asymptotically_periodic",
                                 period=config.period, rho=config.gamma, limit_model=lim,
                                 name="kuramoto_reduced", params=params)
    k = velocity_bound if velocity_bound is not None else max(model.velocity_bound,
                                                              lim.velocity_bound)
    model.velocity_bound = lim.velocity_bound = k
    return model


def decay_norm_check(config: KuramotoConfig, n_max: int, probe, h_t: float = 1e-2,
                     usage: str = "flow") -> np.ndarray:
    """Rows ``(n, C0, C1, C2)``: sup over the probe of ``|L(t + nT) - Lbar(t)|``
    and of its first and second time derivatives (central differences).

    ``probe`` is a sequence of ``(theta, v, t)`` triples.
    """
    model = build_kuramoto_model(config, usage)
    limit = model.limit_model
    theta = np.array([np.ravel(p[0]) for p in probe], dtype=float)
    v = np.array([np.ravel(p[1]) for p in probe], dtype=float)
    t = np.array([float(p[2]) for p in probe])
    if theta.size == 0:
        raise ValidationError("probe must be nonempty")
    T = config.period
    rows = []
    for n in range(n_max + 1):
        def diff(s):
            return model(theta, v, s + n * T) - limit(theta, v, s)
        d0 = diff(t)
        dp, dm = diff(t + h_t), diff(t - h_t)
        rows.append((n, float(np.max(np.abs(d0))),
                     float(np.max(np.abs((dp - dm) / (2 * h_t)))),
                     float(np.max(np.abs((dp - 2 * d0 + dm) / h_t ** 2)))))
    return np.array(rows)


def conformance_bound(config: KuramotoConfig, n: int) -> float:
    """``(max_i sum_j sup|beta_ij|) * N * exp(-gamma n T)`` over edges touching the decaying node."""
    k = config.decaying_node - 1
    N = config.n_osc
    worst = max(sum(_fourier_sup(config.beta[i][j]) for j in range(N) if i == k or j == k)
                for i in range(N))
    return worst * N * np.exp(-config.gamma * n * config.period)


# invariant torus ------------------------------------------------------------

@dataclass
class TorusCertificate:
    graph: GradientGraph
    flow_residual: float
    hyperbolicity: list
    orbit: tuple
    tol_torus: float
    verified: bool
    solution: Optional[PeriodicSolution] = None
    notes: dict = field(default_factory=dict)

    @property
    def accepted(self) -> bool:
        return self.verified and self.flow_residual <= self.tol_torus

    def to_dict(self) -> dict:
        return {"flow_residual": self.flow_residual, "tol_torus": self.tol_torus,
                "eigenvalues": [[float(z.real), float(z.imag)] for z in self.hyperbolicity],
                "eigenvalue_moduli": [float(abs(z)) for z in self.hyperbolicity],
                "orbit_start": [float(self.orbit[0]), float(self.orbit[1])],
                "verified": self.verified, "accepted": self.accepted,
                "momentum_velocity": "p = v (unit kinetic term)",
                "graph": self.graph.metadata(), **self.notes}

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def find_periodic_orbit(model, guesses, dt: float = 1e-3, tol: float = 1e-10, max_iter: int = 20):
    """Newton single shooting on the period map; returns ``(x, v)`` pairs that closed."""
    found = []
    d = model.dim
    T = model.period
    for g in guesses:
        z = np.asarray(g, dtype=float).reshape(2 * d)
        for _ in range(max_iter):
            eps = 1e-6
            batch = [z] + [z + eps * e for e in np.eye(2 * d)] + [z - eps * e for e in np.eye(2 * d)]
            out = period_map(model, np.array(batch), T, dt)
            F = out[0] - z
            F[:d] = np.mod(F[:d] + 0.5 * model.side, model.side) - 0.5 * model.side
            if np.linalg.norm(F) < tol:
                break
            J = (out[1:1 + 2 * d] - out[1 + 2 * d:]).T / (2 * eps) - np.eye(2 * d)
            try:
                z = z - np.linalg.solve(J, F)
            except np.linalg.LinAlgError:
                break
        else:
            continue
        if np.linalg.norm(F) < tol * 1e3:
            found.append((np.mod(z[:d], model.side), z[d:]))
    return found


def _mean_action(model, start, dt=1e-3):
    _, _, s = _flow(model, start[0][None, :], start[1][None, :], 0.0, model.period,
                    max(1, int(round(model.period / dt))), with_action=True)
    return float(s[0]) / model.period


def invariant_torus(config: KuramotoConfig, grid: GridTorus, params: Optional[SolverParams] = None,
                    tol_torus: Optional[float] = None, n_slices: int = 8, tol_h: float = 1e-3,
                    hyperbolic_margin: float = 0.05, flow_dt: float = 1e-3,
                    strict: bool = True, velocity_bound: Optional[float] = None) -> TorusCertificate:
    """Weak KAM torus of the two-oscillator limit in the phase-difference coordinate.

    The limit solution is assembled from barrier slices; each graph point
    ``(phi, tau, p)`` is flowed back by one period from velocity ``p`` and
    its distance to the graph slice at ``tau`` is measured.  The largest
    such distance is the flow residual (default tolerance ``4 h``).
    """
    if config.n_osc != 2:
        raise ValidationError("the torus certificate is implemented for two oscillators")
    if grid.dim != 1 or abs(grid.side - TWO_PI) > 1e-12:
        raise ValidationError("use a one-dimensional grid of side 2 pi for the phase difference")
    model = reduced_model(config, limit=True, velocity_bound=velocity_bound)
    if params is None:
        # one substep per cell, rounded up so every slice time is a step
        per_slice = max(1, int(np.ceil(model.period / grid.spacing / n_slices)))
        params = SolverParams.for_model(model, grid, per_slice * n_slices)
    if tol_torus is None:
        tol_torus = 4.0 * grid.spacing
    T = model.period
    # Aubry orbit: the closed orbit with the smallest mean action
    orbits = find_periodic_orbit(model, [(np.pi, 0.0), (0.0, 0.0)], dt=flow_dt)
    verified = bool(orbits)
    eigs = np.array([])
    orbit = (np.nan, np.nan)
    if orbits:
        orbit = min(orbits, key=lambda o: _mean_action(model, o, flow_dt))
        try:
            eigs = monodromy_eigenvalues(model, orbit, dt=flow_dt, tol_per=1e-6)
            verified = is_hyperbolic(eigs, hyperbolic_margin)
        except NotPeriodic:
            verified = False
    barriers = barrier_slices(model, grid, params, n_slices=n_slices, tol_h=tol_h)
    w = limit_solution(ValueField.constant(grid), barriers)
    graph = build_gradient_graph(w, model, tag="limit")
    residual = 0.0
    n_steps = max(1, int(round(T / flow_dt)))
    for j, tau in enumerate(w.slice_times):
        sel = np.isclose(graph.tau, tau)
        pts = graph.points[sel]
        x, p = pts[:, :1], pts[:, 2:3]
        xb, vb, _ = _flow(model, x, p.copy(), tau + T, tau, n_steps, blowup=np.inf)
        moved = np.column_stack([grid.wrap(xb), vb])
        target = np.column_stack([x, p])
        per = np.array([grid.side, 0.0])
        residual = max(residual, float(np.sqrt(directed_hausdorff_sq(
            np.ascontiguousarray(moved), np.ascontiguousarray(target), per))))
    cert = TorusCertificate(graph, residual, list(eigs), (float(np.ravel(orbit[0])[0]),
                                                          float(np.ravel(orbit[1])[0])),
                            tol_torus, verified, w,
                            {"grid_points": grid.points_per_axis, "dt": params.dt,
                             "hyperbolic_margin": hyperbolic_margin,
                             # the sufficient condition as literally stated; a symplectic
                             # monodromy cannot meet it, so acceptance uses |lambda| != 1
                             "all_moduli_below_one": bool(len(eigs) and np.all(np.abs(eigs) < 1)),
                             "barrier_residual": barriers[0].stabilization_residual})
    if strict and not verified:
        err = AubryHypothesisUnverified("no hyperbolic periodic orbit found for the limit model",
                                        eigenvalues=[abs(z) for z in eigs])
        err.certificate = cert
        raise err
    return cert
