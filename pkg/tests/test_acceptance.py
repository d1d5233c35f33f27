"""End-to-end acceptance checks, one test per criterion, each printing a PASS/FAIL line."""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import tent
from weakkam import (GridTorus, SolverParams, ValueField, forced_pendulum, free_particle,
                     pendulum, renormalized_apply)
from weakkam.barrier import (PeriodicSolution, barrier_slices, finite_action, limit_solution,
                             peierls_barrier, weak_kam_residual)
from weakkam.cli import DEFAULTS, main
from weakkam.graphs import hausdorff_distance
from weakkam.grid import sup_distance, torus_distance
from weakkam.kuramoto import (KuramotoConfig, coupling_schedule, decay_norm_check,
                              invariant_torus, reduced_model)
from weakkam.semigroup import evolve_batch

pytestmark = pytest.mark.slow


def cli(tmp_path, name, config):
    out = tmp_path / name
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(dict(config, output_dir=str(out))))
    status = main(["--config", str(path), "--quiet"])
    return status, json.loads((out / "manifest.json").read_text())


@pytest.fixture(scope="module")
def pendulum_routes():
    grid = GridTorus(1, 512)
    model = pendulum()
    params = SolverParams.for_model(model, grid, 512)
    start = time.perf_counter()
    w = limit_solution(ValueField.constant(grid), barrier_slices(model, grid, params, 1))
    t_barrier = time.perf_counter() - start
    start = time.perf_counter()
    solved = renormalized_apply(ValueField.constant(grid), model, 40.0, params)
    t_solve = time.perf_counter() - start
    return grid, model, params, w, solved, t_barrier, t_solve


def test_pendulum_weak_kam_oracle(pendulum_routes, verdict):
    grid, _, _, w, solved, t_barrier, t_solve = pendulum_routes
    exact = tent(grid.coordinates()[:, 0])
    err_barrier = np.max(np.abs(w.slices[0].values - exact))
    err_solve = np.max(np.abs(solved.values - exact))
    agree = sup_distance(w.slices[0], solved)
    ok = err_barrier <= 5e-3 and err_solve <= 5e-3 and agree <= 8e-3 and max(t_barrier, t_solve) <= 60
    assert verdict("1 pendulum oracle", ok,
                   f"barrier err {err_barrier:.2e}, solve err {err_solve:.2e}, agree {agree:.2e}, "
                   f"times {t_barrier:.1f}s/{t_solve:.1f}s")


def test_exponential_convergence(tmp_path, verdict):
    start = time.perf_counter()
    status, m = cli(tmp_path, "converge", {"experiment": "converge"})
    elapsed = time.perf_counter() - start
    r = m["results"]
    ok = (status == 0 and r["fitted_rate"] >= 0.4 and r["r_squared"] >= 0.95
          and len(r["used_epochs"]) >= 4 and elapsed <= 600)
    assert verdict("2 exponential convergence", ok,
                   f"rate {r.get('fitted_rate')}, r2 {r.get('r_squared')}, floor {r.get('floor'):.2e}, "
                   f"epochs {r.get('used_epochs')}, {elapsed:.0f}s")


def test_hausdorff_graph_convergence(tmp_path, verdict):
    status, m = cli(tmp_path, "graphs", {"experiment": "graphs"})
    d = dict((int(n), v) for n, v in m["results"]["hausdorff"])
    bound = m["results"]["diameter_bound"]
    ok = (status == 0 and all(np.isfinite(v) and v <= bound for v in d.values())
          and d[30] <= 0.5 * d[5] and d[30] <= 0.05)
    assert verdict("3 graph convergence", ok,
                   f"d_H {', '.join(f'{n}: {v:.4f}' for n, v in sorted(d.items()))}, bound {bound:.2f}")


def test_exact_discrete_invariants(rng, verdict):
    tol = 1e-12
    grid = GridTorus(1, 64)
    model = forced_pendulum()
    params = SolverParams.for_model(model, grid, 64)
    u = rng.normal(size=(100, 64))
    v = u + rng.normal(scale=0.3, size=(100, 64))
    above = u + np.abs(rng.normal(size=(100, 64)))
    shift = rng.normal(scale=5.0, size=(100, 1))
    batch = np.vstack([u, v, above, u + shift])
    out, _ = evolve_batch(batch, model, grid, params, 3, 16)
    Tu, Tv, Tabove, Tshift = np.split(out, 4)
    scale = np.max(np.abs(batch)) + np.max(np.abs(out))
    nonexp = np.max(np.max(np.abs(Tu - Tv), axis=1) - np.max(np.abs(u - v), axis=1))
    mono = np.max(Tu - Tabove)
    equiv = np.max(np.abs(Tshift - Tu - shift))
    renorm = [renormalized_apply(ValueField(grid, row), model, 0.25, params).values for row in u[:10]]
    positive = all(r.min() == 0.0 for r in renorm)

    A, B, C = (rng.uniform(0, 1, (k, 3)) for k in (40, 55, 30))
    dab, dbc, dac = (hausdorff_distance(X, Y) for X, Y in ((A, B), (B, C), (A, C)))
    metric = (hausdorff_distance(A, A) == 0.0 and dab == hausdorff_distance(B, A)
              and dac <= (dab + dbc) * (1 + tol))

    cfg = KuramotoConfig(3, [[[0.0], [0.0, 1.0, 0.0], [1.0]], [[0.0, 1.0, 0.0], [0.0], [0.5, 0.0, 0.2]],
                             [[1.0], [0.5, 0.0, 0.2], [0.0]]], 0.5, decaying_node=3)
    ts = rng.uniform(0, 20, 50)
    T = cfg.period
    periodic = max(abs(coupling_schedule(cfg, 1, 2, t + T) - coupling_schedule(cfg, 1, 2, t)) for t in ts)
    decay = max(abs(coupling_schedule(cfg, 2, 3, t + T)
                    - np.exp(-cfg.gamma * T) * coupling_schedule(cfg, 2, 3, t))
                / max(abs(coupling_schedule(cfg, 2, 3, t)), 1e-300) for t in ts)
    probe = [(rng.uniform(0, 2 * np.pi, 3), rng.uniform(-1, 1, 3), rng.uniform(0, 1)) for _ in range(32)]
    rows = decay_norm_check(cfg, 6, probe)
    ratio_err = np.max(np.abs(rows[1:, 1:] / rows[:-1, 1:] - np.exp(-cfg.gamma * T)))

    ok = (nonexp <= tol * scale and mono <= tol * scale and equiv <= tol * scale and positive
          and metric and periodic <= tol and decay <= tol and ratio_err <= 1e-9)
    assert verdict("4 exact invariants", ok,
                   f"nonexp {nonexp:.1e}, mono {mono:.1e}, equiv {equiv:.1e}, min0 {positive}, "
                   f"metric {metric}, period {periodic:.1e}, decay {decay:.1e}, ratio {ratio_err:.1e}")


def test_barrier_oracles(verdict):
    grid = GridTorus(1, 256)
    x = grid.coordinates()[:, 0]
    d = torus_distance(x[:, None, None], x[None, :, None])
    free = free_particle()
    params = SolverParams.for_model(free, grid, 256)
    table_err = max(np.max(np.abs(finite_action(free, grid, 0.0, dt, params).values - d * d / (2 * dt)))
                    for dt in (1.0, 2.0))
    model = pendulum()
    h = peierls_barrier(model, grid, 0.0, 0.0, SolverParams.for_model(model, grid, 256))
    mane = quad(lambda s: np.sqrt(2.0 * (1.0 - np.cos(2 * np.pi * s))), 0.0, 0.5, epsabs=1e-13)[0]
    half = abs(h.entry(0.0, 0.5) - mane)
    diag = h.entry(0.0, 0.0)
    ok = table_err <= 5e-3 and half <= 1e-2 and diag <= 1e-3
    assert verdict("5 barrier oracles", ok,
                   f"F-table err {table_err:.2e}, |h(0,.5) - potential| {half:.2e}, h(0,0) {diag:.1e}")


def test_weak_kam_fixed_point(pendulum_routes, verdict):
    _, model, params, w, _, _, _ = pendulum_routes
    res_pend = weak_kam_residual(w, model, params)
    grid = GridTorus(1, 256)
    forced = forced_pendulum()
    fparams = SolverParams.for_model(forced, grid, 256)
    wf = limit_solution(ValueField.constant(grid), barrier_slices(forced, grid, fparams, 4))
    res_forced = weak_kam_residual(wf, forced, fparams)
    x = w.slices[0].grid.coordinates()[:, 0]
    bump = 0.1 * np.cos(2 * np.pi * x)
    perturbed = PeriodicSolution([w.slices[0].with_values(w.slices[0].values + bump)], 1.0)
    res_bad = weak_kam_residual(perturbed, model, params)
    ok = res_pend <= 1e-2 and res_forced <= 1e-2 and res_bad >= 0.05
    assert verdict("6 fixed-point identity", ok,
                   f"pendulum {res_pend:.2e}, forced {res_forced:.2e}, perturbed {res_bad:.3f}")


def _torus(n, substeps):
    cfg = KuramotoConfig.from_dict(DEFAULTS["kuramoto"])
    grid = GridTorus(1, n, 2 * np.pi)
    model = reduced_model(cfg, limit=True, velocity_bound=8.0)
    params = SolverParams.for_model(model, grid, substeps, subcell=16)
    return grid, invariant_torus(cfg, grid, params, velocity_bound=8.0, hyperbolic_margin=0.05)


def test_kuramoto_torus(verdict):
    g512, fine = _torus(512, 64)
    _, coarse = _torus(256, 32)
    ratio = fine.flow_residual / coarse.flow_residual
    margin = min(abs(abs(z) - 1.0) for z in fine.hyperbolicity)
    ok = fine.flow_residual <= 4 * g512.spacing and ratio <= 0.7 and margin >= 0.05 and fine.accepted
    assert verdict("7 Kuramoto torus", ok,
                   f"residual {fine.flow_residual:.4f} (4h {4 * g512.spacing:.4f}), ratio {ratio:.3f}, "
                   f"|lambda| {[round(float(abs(z)), 4) for z in fine.hyperbolicity]}")


def test_thread_count_determinism(tmp_path, verdict):
    env = dict(os.environ, NUMBA_NUM_THREADS="8")
    outputs = {}
    for experiment in ("limit", "solve"):
        for threads in (1, 8):
            name = f"{experiment}_{threads}"
            path = tmp_path / f"{name}.json"
            path.write_text(json.dumps({"experiment": experiment, "output_dir": str(tmp_path / name),
                                        "model": {"family": "pendulum"}}))
            proc = subprocess.run([sys.executable, "-m", "weakkam.cli", "--config", str(path),
                                   "--threads", str(threads), "--quiet"], env=env,
                                  capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            out = tmp_path / name
            m = json.loads((out / "manifest.json").read_text())
            assert m["threads"]["used"] == threads
            outputs[name] = {a["name"]: (out / a["name"]).read_bytes() for a in m["artifact_index"]}
            outputs[name]["results"] = json.dumps(m["results"]).encode()
    same = all(outputs[f"{e}_1"] == outputs[f"{e}_8"] for e in ("limit", "solve"))
    count = sum(len(outputs[f"{e}_1"]) - 1 for e in ("limit", "solve"))
    assert verdict("8 determinism", same, f"{count} artifacts compared bytewise at 1 vs 8 threads")
