import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from weakkam import (GridTorus, LagrangianModel, MechanicalLagrangian, asymptotic_pendulum,
                     el_flow, estimate_critical_value, forced_pendulum, free_particle,
                     legendre_transform, model_from_spec, monodromy_eigenvalues, pendulum)
from weakkam.exceptions import BlowUp, DualBoundExceeded, NotPeriodic, ValidationError
from weakkam.models import is_hyperbolic, tonelli_witness

TWO_PI = 2 * np.pi


def cosine_well():
    """L = v^2/2 + cos(2 pi x), i.e. potential V = -cos(2 pi x)."""
    return MechanicalLagrangian(lambda x, t: -np.cos(TWO_PI * x[..., 0]),
                                lambda x, t: TWO_PI * np.sin(TWO_PI * x), velocity_bound=6.0)


def shifted_cosine():
    """L = v^2/2 - cos(2 pi x): maximum potential 1."""
    return MechanicalLagrangian(lambda x, t: np.cos(TWO_PI * x[..., 0]),
                                lambda x, t: -TWO_PI * np.sin(TWO_PI * x))


def test_legendre_examples_against_dense_scan():
    free = free_particle()
    assert legendre_transform(free, 0.3, 0.0, 0.0) == pytest.approx(0.0, abs=1e-12)
    model = cosine_well()
    vs = np.linspace(-6, 6, 1_200_001)
    for x, p, expected in ((0.0, 1.0, -0.5), (0.5, 2.0, 3.0)):
        scan = np.max(p * vs - 0.5 * vs ** 2 - np.cos(TWO_PI * x))
        assert scan == pytest.approx(expected, abs=1e-9)
        assert legendre_transform(model, x, p, 0.0) == pytest.approx(expected, abs=1e-12)
        assert legendre_transform(model, x, p, 0.0, numeric=True) == pytest.approx(expected, abs=1e-6)


def test_legendre_numeric_for_non_mechanical_model():
    # L = cosh(v) - 1 has H(p) = p asinh(p) - sqrt(1 + p^2) + 1
    model = LagrangianModel(lambda x, v, t: np.cosh(v[..., 0]) - 1.0, velocity_bound=5.0)
    for p in (-2.0, 0.0, 0.7, 3.0):
        exact = p * np.arcsinh(p) - np.sqrt(1 + p * p) + 1
        assert legendre_transform(model, 0.1, p, 0.0) == pytest.approx(exact, abs=1e-7)


def test_legendre_raises_when_maximizer_hits_velocity_bound():
    model = LagrangianModel(lambda x, v, t: 0.5 * np.sum(v * v, axis=-1), velocity_bound=1.0)
    with pytest.raises(DualBoundExceeded):
        legendre_transform(model, 0.0, 5.0, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1))
def test_legendre_fenchel_young_and_convexity(x, p, q, t):
    model = forced_pendulum()
    hp, hq = legendre_transform(model, x, p, t), legendre_transform(model, x, q, t)
    assert legendre_transform(model, x, 0.5 * (p + q), t) <= 0.5 * (hp + hq) + 1e-12
    v = 0.7 * p
    lv = float(model(np.array([x]), np.array([v]), t))
    assert lv + hp >= p * v - 1e-12
    # equality at p = dL/dv = v
    assert lv + legendre_transform(model, x, v, t) == pytest.approx(v * v, abs=1e-12)


def test_tonelli_witnesses_hold_for_library():
    for model in (free_particle(), pendulum(), forced_pendulum(), asymptotic_pendulum()):
        w = tonelli_witness(model)
        assert w["convex"] and w["superlinear"]


def test_tonelli_witness_detects_nonconvexity():
    model = LagrangianModel(lambda x, v, t: -0.5 * np.sum(v * v, axis=-1) + 0.1 * np.sum(v ** 4, axis=-1),
                            velocity_bound=4.0)
    assert not tonelli_witness(model)["convex"]


def test_asymptotic_model_carries_periodic_limit():
    model = asymptotic_pendulum()
    assert model.kind == "asymptotically_periodic" and model.rho == 0.5
    assert model.limit_model.kind == "periodic" and model.limit_model.period == 1.0
    x, v = np.array([[0.3]]), np.array([[0.4]])
    for n in (0, 5, 10):
        gap = abs(model(x, v, 0.25 + n) - model.limit_model(x, v, 0.25 + n))
        assert gap[0] == pytest.approx(0.3 * abs(np.cos(TWO_PI * 0.3)) * np.exp(-0.5 * (0.25 + n)))


def test_model_from_spec_round_trip_and_errors():
    model = model_from_spec({"family": "forced_pendulum", "params": {"delta": 0.1, "period": 2.0},
                             "kind": "periodic", "period": 2.0})
    assert model.period == 2.0
    again = model_from_spec(model.spec())
    x = np.array([[0.2]])
    assert again(x, x, 0.7)[0] == model(x, x, 0.7)[0]
    with pytest.raises(ValidationError):
        model_from_spec({"family": "unknown"})
    with pytest.raises(ValidationError):
        model_from_spec({"family": "pendulum", "kind": "periodic"})
    with pytest.raises(ValidationError):
        model_from_spec({"family": "pendulum", "params": {"bogus": 1}})


def test_default_velocity_bound_formula():
    # free model: max L over slow velocities is 1/8, so k = 2 (1 + 1/2)
    assert free_particle().velocity_bound == pytest.approx(3.0)
    # pendulum: max over x of 1/8 - (cos - 1) is 1/8 + 2
    assert pendulum().velocity_bound == pytest.approx(2 * (1 + np.sqrt(2 * 2.125)))


def test_el_flow_examples():
    traj = el_flow(free_particle(), (0.0, 0.25), 0.0, 1.0, 1e-3)
    assert traj.x[-1, 0] == pytest.approx(0.25, abs=1e-12) and traj.v[-1, 0] == pytest.approx(0.25)
    for start in ((0.0, 0.0), (0.5, 0.0)):
        traj = el_flow(pendulum(), start, 0.0, 1.0, 1e-3)
        assert np.max(np.abs(traj.x - start[0])) < 1e-12 and np.max(np.abs(traj.v)) < 1e-12
    assert traj.lifted and np.all(np.diff(traj.times) > 0)


def test_el_flow_matches_independent_ode_solver():
    model = forced_pendulum(delta=0.2)
    traj = el_flow(model, (0.1, 1.3), 0.0, 2.0, 1e-3)

    def rhs(t, y):
        return [y[1], TWO_PI * np.sin(TWO_PI * y[0]) * (1 + 0.2 * np.sin(TWO_PI * t))]
    ref = solve_ivp(rhs, (0, 2), [0.1, 1.3], rtol=1e-12, atol=1e-12, method="DOP853")
    assert traj.x[-1, 0] == pytest.approx(ref.y[0, -1], abs=1e-9)
    assert traj.v[-1, 0] == pytest.approx(ref.y[1, -1], abs=1e-9)


def test_el_flow_is_lifted_and_speed_bounded():
    traj = el_flow(free_particle(), (0.9, 2.0), 0.0, 1.0, 1e-2)
    assert traj.x[-1, 0] == pytest.approx(2.9)
    steps = np.abs(np.diff(traj.x[:, 0]))
    assert np.all(steps <= 2.0 * np.diff(traj.times) + 1e-12)


def test_el_flow_energy_drift():
    model = pendulum()
    traj = el_flow(model, (0.3, 0.5), 0.0, 1.0, 1e-3)
    energy = 0.5 * traj.v[:, 0] ** 2 + (np.cos(TWO_PI * traj.x[:, 0]) - 1.0)
    assert np.max(np.abs(energy - energy[0])) <= 1e-8


@pytest.mark.parametrize("start", [(0.5, 0.3), (0.3, 0.5)])
def test_el_flow_fourth_order(start):
    model = pendulum()
    ends = [el_flow(model, start, 0.0, 1.0, dt).x[-1, 0] for dt in (0.004, 0.002, 0.001)]
    ratio = abs(ends[0] - ends[1]) / abs(ends[1] - ends[2])
    assert ratio == pytest.approx(16.0, abs=1.0)


def test_el_flow_refinement_ratio_bounded_near_the_well():
    ends = [el_flow(pendulum(), (0.5, 0.3), 0.0, 1.0, dt).x[-1, 0] for dt in (0.01, 0.005, 0.0025)]
    assert abs(ends[0] - ends[1]) <= 16 * abs(ends[1] - ends[2])


def test_el_flow_blow_up_detected():
    model = MechanicalLagrangian(lambda x, t: -50.0 * x[..., 0] ** 2, lambda x, t: -100.0 * x,
                                 velocity_bound=1.0)
    with pytest.raises(BlowUp):
        el_flow(model, (0.5, 0.0), 0.0, 5.0, 1e-2)


def test_monodromy_saddle_matches_linearization():
    lam = monodromy_eigenvalues(pendulum(), (0.0, 0.0), dt=1e-3, period=1.0)
    mods = np.sort(np.abs(lam))
    assert mods[1] == pytest.approx(np.exp(TWO_PI), rel=1e-6)
    # the small eigenvalue is resolved only relative to the matrix norm
    assert mods[0] == pytest.approx(np.exp(-TWO_PI), abs=1e-7 * mods[1])
    assert np.prod(mods) == pytest.approx(1.0, rel=1e-2)
    assert is_hyperbolic(lam, margin=0.05)


def test_monodromy_center_is_elliptic():
    lam = monodromy_eigenvalues(pendulum(), (0.5, 0.0), dt=1e-3, period=0.3)
    np.testing.assert_allclose(np.abs(lam), 1.0, atol=1e-8)
    assert sorted(np.angle(lam)) == pytest.approx([-TWO_PI * 0.3, TWO_PI * 0.3], abs=1e-7)
    assert not is_hyperbolic(lam, margin=0.05)


def test_monodromy_shear_for_free_model():
    lam = monodromy_eigenvalues(free_particle(), (0.37, 0.0), period=1.0)
    np.testing.assert_allclose(lam, [1.0, 1.0], atol=1e-8)


def test_monodromy_rejects_non_periodic_start():
    with pytest.raises(NotPeriodic):
        monodromy_eigenvalues(pendulum(), (0.2, 0.0), period=1.0)


def test_critical_value_examples():
    grid = GridTorus(1, 256)
    assert estimate_critical_value(free_particle(), grid).value == 0.0
    est = estimate_critical_value(pendulum(), grid)
    assert est.value == 0.0 and est.method == "mechanical_maxV" and est.uncertainty == 0.0
    assert estimate_critical_value(shifted_cosine(), grid).value == pytest.approx(1.0)


def test_critical_value_long_time_average_agrees_with_mechanical():
    # a non-mechanical wrapper of the pendulum forces the semigroup route
    pend = pendulum()
    model = LagrangianModel(lambda x, v, t: pend(x, v, t), velocity_bound=pend.velocity_bound)
    est = estimate_critical_value(model, GridTorus(1, 64), horizon=8)
    assert est.method == "long_time_average"
    assert abs(est.value) <= 0.05 and est.uncertainty >= 0
    with pytest.raises(ValidationError):
        estimate_critical_value(asymptotic_pendulum())
