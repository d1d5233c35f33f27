"""Tonelli Lagrangians on flat tori.

A model is a vectorized callable ``L(x, v, t)`` where ``x`` and ``v`` have
shape ``(..., dim)``.  Mechanical models ``L = |v|^2 / 2 - V(x, t)`` carry an
analytic potential gradient and a closed-form Hamiltonian; everything else
goes through finite differences and a numerical Legendre transform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .exceptions import (BlowUp, DualBoundExceeded, NotConverged, NotPeriodic,
                         ValidationError)
from .grid import GridTorus, TimePoint, ValueField

KINDS = ("autonomous", "periodic", "asymptotically_periodic")
TWO_PI = 2.0 * np.pi


class LagrangianModel:
    """An evaluable Lagrangian with periodicity and decay metadata.

    Parameters
    ----------
    func : callable
        ``func(x, v, t)`` returning the action rate, broadcasting over the
        leading axes of ``x`` and ``v``.
    kind : {'autonomous', 'periodic', 'asymptotically_periodic'}
    period : float
        Time period of the model (or of its limit).  Autonomous models use it
        only as the epoch length.
    rho : float, optional
        Nominal exponential rate at which the model approaches its limit.
    side : float
        Period of each space coordinate.
    """

    mechanical = False

    def __init__(self, func: Callable, dim: int = 1, kind: str = "autonomous",
                 period: float = 1.0, rho: Optional[float] = None, side: float = 1.0,
                 velocity_bound: Optional[float] = None,
                 limit_model: Optional["LagrangianModel"] = None,
                 hamiltonian: Optional[Callable] = None, name: str = "custom",
                 params: Optional[dict] = None, has_drift: bool = False):
        if kind not in KINDS:
            raise ValidationError(f"unknown model kind {kind!r}")
        if not period > 0:
            raise ValidationError("period must be positive")
        if kind == "asymptotically_periodic":
            if limit_model is None or limit_model.kind == "asymptotically_periodic":
                raise ValidationError(
                    "an asymptotically periodic model needs a periodic limit_model")
            if rho is None or not rho > 0:
                raise ValidationError("asymptotically periodic models need rho > 0")
        self.func = func
        self.dim = int(dim)
        self.kind = kind
        self.period = float(period)
        self.rho = rho
        self.side = float(side)
        self.limit_model = limit_model
        self.closed_form_hamiltonian = hamiltonian
        self.name = name
        self.params = dict(params or {})
        self.has_drift = has_drift
        self._velocity_bound = velocity_bound

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, kind={self.kind!r}, dim={self.dim})"

    def __call__(self, x, v, t):
        return self.func(np.asarray(x, dtype=float), np.asarray(v, dtype=float), t)

    @property
    def velocity_bound(self) -> float:
        if self._velocity_bound is None:
            self._velocity_bound = default_velocity_bound(self)
        return self._velocity_bound

    @velocity_bound.setter
    def velocity_bound(self, value):
        self._velocity_bound = float(value)

    @property
    def is_time_dependent(self) -> bool:
        return self.kind != "autonomous"

    def hamiltonian(self, x, p, t):
        if self.closed_form_hamiltonian is not None:
            x = np.asarray(x, dtype=float)
            p = np.asarray(p, dtype=float)
            single = x.ndim <= 1 and p.ndim <= 1
            out = self.closed_form_hamiltonian(x.reshape(-1, self.dim), p.reshape(-1, self.dim), t)
            return float(np.ravel(out)[0]) if single and np.size(out) == 1 else out
        return legendre_transform(self, x, p, t, numeric=True)

    def acceleration(self, x, v, t, eps: float = 1e-5):
        """Solve the Euler-Lagrange equation for the acceleration.

        Uses central differences for every derivative of ``L``:
        ``L_vv a = L_x - L_vx v - L_vt``.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        d = self.dim
        eye = np.eye(d)
        L_x = np.empty(x.shape)
        L_vt = np.empty(x.shape)
        L_vv = np.empty(x.shape + (d,))
        L_vx = np.empty(x.shape + (d,))

        def L_v(xx, vv, tt):
            out = np.empty(xx.shape)
            for a in range(d):
                out[..., a] = (self(xx, vv + eps * eye[a], tt)
                               - self(xx, vv - eps * eye[a], tt)) / (2 * eps)
            return out

        for a in range(d):
            L_x[..., a] = (self(x + eps * eye[a], v, t) - self(x - eps * eye[a], v, t)) / (2 * eps)
            L_vv[..., :, a] = (L_v(x, v + eps * eye[a], t) - L_v(x, v - eps * eye[a], t)) / (2 * eps)
            L_vx[..., :, a] = (L_v(x + eps * eye[a], v, t) - L_v(x - eps * eye[a], v, t)) / (2 * eps)
        L_vt[...] = (L_v(x, v, t + eps) - L_v(x, v, t - eps)) / (2 * eps) if self.is_time_dependent else 0.0
        rhs = L_x - np.einsum("...ab,...b->...a", L_vx, v) - L_vt
        return np.linalg.solve(L_vv, rhs[..., None])[..., 0]

    def shifted(self, constant: float) -> "LagrangianModel":
        """The model ``L + constant`` (moves the critical value by ``-constant``)."""
        base = self
        ham = None
        if self.closed_form_hamiltonian is not None:
            ham = lambda x, p, t: base.closed_form_hamiltonian(x, p, t) - constant
        limit = self.limit_model.shifted(constant) if self.limit_model is not None else None
        return LagrangianModel(lambda x, v, t: base.func(x, v, t) + constant, self.dim,
                               self.kind, self.period, self.rho, self.side,
                               self._velocity_bound, limit, ham, self.name,
                               self.params, self.has_drift)

    def spec(self) -> dict:
        return {"kind": self.kind, "period": self.period, "rho": self.rho,
                "family": self.name, "params": self.params,
                "velocity_bound": self._velocity_bound}


class MechanicalLagrangian(LagrangianModel):
    """``L(x, v, t) = |v|^2 / 2 - V(x, t)``."""

    mechanical = True

    def __init__(self, potential: Callable, potential_grad: Callable, dim: int = 1, **kwargs):
        self.potential = potential
        self.potential_grad = potential_grad

        def func(x, v, t):
            return 0.5 * np.sum(v * v, axis=-1) - potential(x, t)

        def ham(x, p, t):
            return 0.5 * np.sum(p * p, axis=-1) + potential(x, t)

        kwargs.setdefault("hamiltonian", ham)
        super().__init__(func, dim=dim, **kwargs)

    def acceleration(self, x, v, t, eps=None):
        return -self.potential_grad(np.asarray(x, dtype=float), t)

    def shifted(self, constant: float) -> "MechanicalLagrangian":
        V, dV = self.potential, self.potential_grad
        limit = self.limit_model.shifted(constant) if self.limit_model is not None else None
        return MechanicalLagrangian(lambda x, t: V(x, t) - constant, dV, dim=self.dim,
                                    kind=self.kind, period=self.period, rho=self.rho,
                                    side=self.side, velocity_bound=self._velocity_bound,
                                    limit_model=limit, name=self.name, params=self.params,
                                    has_drift=self.has_drift)


def default_velocity_bound(model: LagrangianModel, n_space: int = 32, n_time: int = 8) -> float:
    """``2 (1 + sqrt(2 max L))`` with the max over slow velocities ``|v_a| <= 1/2``."""
    n_space = max(4, int(round(4096 ** (1.0 / model.dim))) if model.dim > 1 else n_space)
    axes = [np.arange(n_space) * model.side / n_space] * model.dim
    x = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    vels = [np.zeros(model.dim)]
    for a in range(model.dim):
        for s in (-0.5, 0.5):
            e = np.zeros(model.dim)
            e[a] = s
            vels.append(e)
    times = [0.0] if model.kind == "autonomous" else np.arange(n_time) * model.period / n_time
    top = 0.0
    for t in times:
        for v in vels:
            top = max(top, float(np.max(model(x, np.broadcast_to(v, x.shape), t))))
    return 2.0 * (1.0 + np.sqrt(2.0 * top))


# library ------------------------------------------------------------------

def free_particle(dim: int = 1, side: float = 1.0, velocity_bound=None) -> MechanicalLagrangian:
    return MechanicalLagrangian(
        lambda x, t: np.zeros(np.shape(x)[:-1]),
        lambda x, t: np.zeros(np.shape(x)),
        dim=dim, side=side, velocity_bound=velocity_bound, name="free",
        params={"dim": dim, "side": side})


def _cos_potential(kappa, dim):
    def V(x, t):
        return kappa * np.sum(np.cos(TWO_PI * x) - 1.0, axis=-1)

    def dV(x, t):
        return -kappa * TWO_PI * np.sin(TWO_PI * x)
    return V, dV


def pendulum(kappa: float = 1.0, dim: int = 1, velocity_bound=None) -> MechanicalLagrangian:
    """``L = v^2/2 - kappa (cos 2 pi x - 1)``; critical value 0, Aubry point x = 0."""
    V, dV = _cos_potential(kappa, dim)
    return MechanicalLagrangian(V, dV, dim=dim, velocity_bound=velocity_bound,
                                name="pendulum", params={"kappa": kappa, "dim": dim})


def forced_pendulum(kappa: float = 1.0, delta: float = 0.2, period: float = 1.0,
                    dim: int = 1, velocity_bound=None) -> MechanicalLagrangian:
    """Pendulum whose potential is modulated by ``1 + delta sin(2 pi t / period)``."""
    V0, dV0 = _cos_potential(kappa, dim)

    def V(x, t):
        return V0(x, t) * (1.0 + delta * np.sin(TWO_PI * t / period))

    def dV(x, t):
        return dV0(x, t) * (1.0 + delta * np.sin(TWO_PI * t / period))
    return MechanicalLagrangian(V, dV, dim=dim, kind="periodic", period=period,
                                velocity_bound=velocity_bound, name="forced_pendulum",
                                params={"kappa": kappa, "delta": delta, "period": period,
                                        "dim": dim})


def asymptotic_pendulum(kappa: float = 1.0, delta: float = 0.2, period: float = 1.0,
                        rho: float = 0.5, amplitude: float = 0.3, dim: int = 1,
                        velocity_bound=None) -> MechanicalLagrangian:
    """``L1 = Lbar - exp(-rho t) W`` with ``Lbar`` the forced pendulum and
    ``W = amplitude * sum cos(2 pi x)``."""
    limit = forced_pendulum(kappa, delta, period, dim, velocity_bound)

    def V(x, t):
        return limit.potential(x, t) + np.exp(-rho * t) * amplitude * np.sum(np.cos(TWO_PI * x), axis=-1)

    def dV(x, t):
        return limit.potential_grad(x, t) - np.exp(-rho * t) * amplitude * TWO_PI * np.sin(TWO_PI * x)
    model = MechanicalLagrangian(V, dV, dim=dim, kind="asymptotically_periodic",
                                 period=period, rho=rho, limit_model=limit,
                                 velocity_bound=velocity_bound, name="asymptotic_pendulum",
                                 params={"kappa": kappa, "delta": delta, "period": period,
                                         "rho": rho, "amplitude": amplitude, "dim": dim})
    if velocity_bound is None:
        # the limit and the model share one candidate velocity set
        model.velocity_bound = max(model.velocity_bound, limit.velocity_bound)
        limit.velocity_bound = model.velocity_bound
    return model


FAMILIES = {
    "free": free_particle,
    "pendulum": pendulum,
    "forced_pendulum": forced_pendulum,
    "asymptotic_pendulum": asymptotic_pendulum,
}


def model_from_spec(spec: dict) -> LagrangianModel:
    """Build a library model from ``{kind, period, rho, family, params, velocity_bound}``."""
    family = spec.get("family")
    if family == "kuramoto_reduced":
        from .kuramoto import KuramotoConfig, reduced_model
        model = reduced_model(KuramotoConfig.from_dict(spec.get("params", {})))
    elif family in FAMILIES:
        try:
            model = FAMILIES[family](**spec.get("params", {}))
        except TypeError as exc:
            raise ValidationError(f"bad parameters for family {family!r}: {exc}") from None
    else:
        raise ValidationError(f"unknown model family {family!r}")
    kind = spec.get("kind")
    if kind is not None and kind != model.kind:
        raise ValidationError(f"family {family!r} is {model.kind}, requested {kind}")
    if spec.get("period") is not None and abs(float(spec["period"]) - model.period) > 1e-12:
        raise ValidationError("requested period disagrees with the family parameters")
    if spec.get("rho") is not None and model.rho is not None and abs(spec["rho"] - model.rho) > 1e-12:
        raise ValidationError("requested rho disagrees with the family parameters")
    if spec.get("velocity_bound") is not None:
        model.velocity_bound = spec["velocity_bound"]
        if model.limit_model is not None:
            model.limit_model.velocity_bound = spec["velocity_bound"]
    return model


def load_model(path) -> LagrangianModel:
    return model_from_spec(json.loads(Path(path).read_text()))


def tonelli_witness(model: LagrangianModel, n_samples: int = 64, seed: int = 0,
                    tol: float = 1e-9) -> dict:
    """Sampled convexity and superlinearity witnesses.

    Returns ``{'convex': bool, 'superlinear': bool}``.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, model.side, size=(n_samples, model.dim))
    t = rng.uniform(0, model.period, size=n_samples)
    k = model.velocity_bound
    convex = True
    for a in range(model.dim):
        v2 = rng.uniform(-k / 2, k / 2, size=(n_samples, model.dim))
        step = np.zeros(model.dim)
        step[a] = rng.uniform(0.05, k / 2)
        vals = [np.array([model(x[i], v2[i] + s * step, t[i]) for i in range(n_samples)])
                for s in (-1.0, 0.0, 1.0)]
        convex &= bool(np.all(vals[1] < 0.5 * (vals[0] + vals[2]) + tol))
    direction = rng.normal(size=(n_samples, model.dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    full = np.array([model(x[i], k * direction[i], t[i]) for i in range(n_samples)]) / k
    half = np.array([model(x[i], 0.5 * k * direction[i], t[i]) for i in range(n_samples)]) / (0.5 * k)
    return {"convex": convex, "superlinear": bool(np.all(full > half))}


# Legendre transform ---------------------------------------------------------

def _golden_max(f, lo, hi, iters=80):
    """Vectorized golden-section maximization of ``f`` on ``[lo, hi]``."""
    g = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo.copy(), hi.copy()
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        left = fc > fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = b - g * (b - a)
        d_new = a + g * (b - a)
        c, d = c_new, d_new
        fc, fd = f(c), f(d)
    return 0.5 * (a + b)


def legendre_transform(model: LagrangianModel, x, p, t, numeric: bool = False,
                       n_scan: Optional[int] = None):
    """``sup_v <p, v> - L(x, v, t)`` over the velocity ball ``|v_a| <= k``.

    With ``numeric=False`` and a closed-form Hamiltonian on the model, the
    closed form is returned.  The numerical route scans a coarse velocity
    grid and refines the best cell by golden-section search, one axis at a
    time.  Raises :class:`DualBoundExceeded` when the scan maximum sits on
    the boundary of the ball.
    """
    if not numeric and model.closed_form_hamiltonian is not None:
        return model.hamiltonian(x, p, t)
    d = model.dim
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    single = x.ndim <= 1 and p.ndim <= 1
    x = x.reshape(-1, d)
    p = p.reshape(-1, d)
    x, p = np.broadcast_arrays(x, p)
    m = len(x)
    k = model.velocity_bound
    if n_scan is None:
        n_scan = {1: 401, 2: 61, 3: 21}[d]
    axis = np.linspace(-k, k, n_scan)
    mesh = np.stack([g.ravel() for g in np.meshgrid(*([axis] * d), indexing="ij")], axis=-1)
    vals = np.einsum("md,gd->mg", p, mesh) - model(x[:, None, :], mesh[None, :, :], t)
    best = np.argmax(vals, axis=1)
    multi = np.stack(np.unravel_index(best, (n_scan,) * d), axis=-1)
    if np.any((multi == 0) | (multi == n_scan - 1)):
        raise DualBoundExceeded("Legendre maximizer on the boundary of the velocity ball",
                                velocity_bound=k)
    v = mesh[best].copy()
    cell = axis[1] - axis[0]
    for _ in range(1 if d == 1 else 6):
        for a in range(d):
            def f(va, a=a):
                vv = v.copy()
                vv[:, a] = va
                return np.sum(p * vv, axis=-1) - model(x, vv, t)
            v[:, a] = _golden_max(f, v[:, a] - cell, v[:, a] + cell)
    out = np.sum(p * v, axis=-1) - model(x, v, t)
    return float(out[0]) if single and m == 1 else out


# Euler-Lagrange flow --------------------------------------------------------

@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    lifted: bool = True
    action: Optional[np.ndarray] = None

    @property
    def states(self):
        return list(zip(self.x, self.v))


def _flow(model, x, v, t0, t1, n_steps, record=False, with_action=False, blowup=None):
    """Classical RK4 on ``(x, v[, action])`` for a batch ``(B, d)``."""
    x = np.array(x, dtype=float)
    v = np.array(v, dtype=float)
    h = (t1 - t0) / n_steps
    s = np.zeros(x.shape[0])
    limit = blowup if blowup is not None else 10.0 * model.velocity_bound
    acc = model.acceleration
    xs, vs, ss = ([x.copy()], [v.copy()], [s.copy()]) if record else (None, None, None)

    def rhs(xx, vv, tt):
        return vv, acc(xx, vv, tt), (model(xx, vv, tt) if with_action else 0.0)

    for i in range(n_steps):
        t = t0 + i * h
        k1 = rhs(x, v, t)
        k2 = rhs(x + 0.5 * h * k1[0], v + 0.5 * h * k1[1], t + 0.5 * h)
        k3 = rhs(x + 0.5 * h * k2[0], v + 0.5 * h * k2[1], t + 0.5 * h)
        k4 = rhs(x + h * k3[0], v + h * k3[1], t + h)
        x = x + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        v = v + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if with_action:
            s = s + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if not np.all(np.isfinite(v)) or np.max(np.abs(v)) > limit:
            raise BlowUp("velocity left 10x the velocity bound", time=t + h,
                         speed=float(np.nanmax(np.abs(v))))
        if record:
            xs.append(x.copy())
            vs.append(v.copy())
            ss.append(s.copy())
    if record:
        return np.array(xs), np.array(vs), np.array(ss)
    return x, v, s


def el_flow(model: LagrangianModel, start, t0: float, t1: float, dt: float,
            with_action: bool = False) -> Trajectory:
    """Integrate the Euler-Lagrange equation from ``start = (x, v)`` at ``t0``.

    The trajectory is lifted to the covering space (coordinates are not
    wrapped).
    """
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if not t1 > t0:
        raise ValidationError("t1 must exceed t0")
    x0 = np.asarray(start[0], dtype=float).reshape(1, model.dim)
    v0 = np.asarray(start[1], dtype=float).reshape(1, model.dim)
    n = max(1, int(round((t1 - t0) / dt)))
    xs, vs, ss = _flow(model, x0, v0, t0, t1, n, record=True, with_action=with_action)
    times = t0 + (t1 - t0) * np.arange(n + 1) / n
    return Trajectory(times, xs[:, 0, :], vs[:, 0, :], True,
                      ss[:, 0] if with_action else None)


def period_map(model, z, period, dt, t0=0.0):
    """Time-``period`` map of the flow on a batch of states ``z = (x, v)`` of shape ``(B, 2d)``."""
    d = model.dim
    n = max(1, int(round(period / dt)))
    x, v, _ = _flow(model, z[:, :d], z[:, d:], t0, t0 + period, n)
    return np.concatenate([x, v], axis=1)


def monodromy_eigenvalues(model: LagrangianModel, orbit_start, dt: float = 1e-3,
                          period: Optional[float] = None, h_var: float = 1e-6,
                          tol_per: float = 1e-6, t0: float = 0.0) -> np.ndarray:
    """Eigenvalues of the linearized period map along a periodic orbit.

    The Jacobian is taken by central differences of the time-``period`` map.
    Eigenvalues are returned sorted by decreasing modulus.
    """
    T = model.period if period is None else float(period)
    d = model.dim
    z0 = np.concatenate([np.ravel(orbit_start[0]), np.ravel(orbit_start[1])]).astype(float)
    if z0.size != 2 * d:
        raise ValidationError("orbit_start must be (x, v) with dim components each")
    batch = [z0]
    for i in range(2 * d):
        e = np.zeros(2 * d)
        e[i] = h_var
        batch += [z0 + e, z0 - e]
    out = period_map(model, np.array(batch), T, dt, t0)
    gap = out[0] - z0
    gap[:d] = np.mod(gap[:d] + 0.5 * model.side, model.side) - 0.5 * model.side
    if np.linalg.norm(gap) > tol_per:
        raise NotPeriodic("orbit does not close after one period", closure=float(np.linalg.norm(gap)))
    J = np.empty((2 * d, 2 * d))
    for i in range(2 * d):
        J[:, i] = (out[1 + 2 * i] - out[2 + 2 * i]) / (2 * h_var)
    eig = np.linalg.eigvals(J)
    return eig[np.argsort(-np.abs(eig), kind="stable")]


def is_hyperbolic(eigenvalues, margin: float = 1e-3) -> bool:
    return bool(np.all(np.abs(np.abs(eigenvalues) - 1.0) >= margin))


# critical value -------------------------------------------------------------

@dataclass
class CriticalValueEstimate:
    value: float
    method: str
    uncertainty: float = 0.0


def estimate_critical_value(model: LagrangianModel, grid: Optional[GridTorus] = None,
                            horizon: int = 16, params=None, tol_c: float = 1e-2,
                            n_time: int = 64) -> CriticalValueEstimate:
    """Estimate the Mane critical value ``c(L)``.

    Mechanical models use the maximum of the potential over grid nodes (for
    periodic potentials, the time average at a common maximizer, when one
    exists).  Other models use ``-min T_t 0 / t`` at ``t = horizon * period``,
    with the difference to the half-horizon estimate as uncertainty.
    """
    if model.kind == "asymptotically_periodic":
        raise ValidationError("critical value is defined for autonomous or periodic models")
    if grid is None:
        grid = GridTorus(model.dim, 256 if model.dim == 1 else 32, model.side)
    x = grid.coordinates()
    if model.mechanical:
        if model.kind == "autonomous":
            return CriticalValueEstimate(float(np.max(model.potential(x, 0.0))), "mechanical_maxV", 0.0)
        times = np.arange(n_time) * model.period / n_time
        pots = np.array([model.potential(x, t) for t in times])
        tops = np.argmax(pots, axis=1)
        shared = [i for i in np.unique(tops) if np.all(pots[:, i] >= pots.max(axis=1) - 1e-12)]
        if shared:
            return CriticalValueEstimate(float(np.mean(pots[:, shared[0]])), "mechanical_maxV", 0.0)
    from .semigroup import SolverParams, lax_oleinik_apply
    if params is None:
        params = SolverParams.for_model(model, grid)
    horizon = max(2, int(horizon))
    half = horizon // 2
    zero = ValueField.constant(grid, 0.0, TimePoint(0.0, model.period))
    mid = lax_oleinik_apply(zero, model, 0.0, half * model.period, params)
    end = lax_oleinik_apply(mid, model, half * model.period, horizon * model.period, params)
    c_half = -float(mid.values.min()) / (half * model.period)
    c_full = -float(end.values.min()) / (horizon * model.period)
    unc = abs(c_full - c_half)
    if unc > tol_c:
        raise NotConverged("critical value estimate did not settle", uncertainty=unc,
                           horizon=horizon)
    return CriticalValueEstimate(c_full, "long_time_average", unc)
