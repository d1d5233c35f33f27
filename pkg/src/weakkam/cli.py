"""Command-line runner: one configuration file, one experiment, one output directory.

    weakkam --config run.json [--threads N] [--override key=value ...] [--quiet]

Exit status is 0 on success, 2 when the configuration is rejected (nothing
is written) and 3 when a numerical check fails (the manifest records the
offending quantities).
"""

from __future__ import annotations

import argparse
import copy
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .barrier import (barrier_slices, big_value, limit_solution, peierls_barrier, save_table,
                      save_table_csv, weak_kam_residual)
from .exceptions import NumericalError, ValidationError, WeakKAMError
from .graphs import build_gradient_graph, graph_convergence, graph_diameter_bound
from .grid import GridTorus, ValueField, save_field_csv, save_field_json, sup_distance
from .kuramoto import KuramotoConfig, decay_norm_check, invariant_torus
from .models import model_from_spec
from .semigroup import (SolverParams, fit_decay_rate, lax_oleinik_apply, renormalize,
                        renormalized_trajectory, set_threads)

DEFAULTS_VERSION = "1"
EXPERIMENTS = ("solve", "barrier", "limit", "converge", "graphs", "kuramoto-decay",
               "kuramoto-torus")

DEFAULTS = {
    "experiment": "solve",
    "output_dir": "weakkam-out",
    "seed": 0,
    "model": {"family": "pendulum", "params": {}, "kind": None, "period": None, "rho": None,
              "velocity_bound": None},
    "grid": {"dim": 1, "points_per_axis": 512, "side": 1.0},
    "solver": {"dt": None, "substeps_per_period": None, "subcell": 8, "fine_levels": 4},
    "initial": {"type": "zero", "amplitude": 1.0, "wavenumber": 1},
    "run": {
        "horizon": 40.0,
        "renormalize": True,
        "s": 0.0,
        "s_prime": 0.0,
        "n_slices": 8,
        "epochs": [5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24,
                   25, 26, 27, 28, 29, 30],
        "tau": 0.0,
        "floor": None,
        "floor_horizon": 40,
        "graph_epochs": [5, 10, 20, 30],
        "n_max": 8,
        "n_probe": 64,
        "h_t": 1e-2,
    },
    "kuramoto": {"n_osc": 2, "beta": [[[0.0], [1.0]], [[1.0], [0.0]]], "gamma": 0.5,
                 "freq": 6.283185307179586, "decaying_node": 2, "omega_nat": [0.0, 0.0],
                 "beta_persistent": [[[0.0], [0.5, 0.1, 0.0]], [[0.5, 0.1, 0.0], [0.0]]],
                 "reduced": True},
    "tolerances": {"tol_fix": 1e-2, "tol_h": 1e-3, "tol_nd": None, "tol_torus": None,
                   "hyperbolic_margin": 0.05, "min_epochs": 4},
}

# experiment-specific defaults layered over DEFAULTS
PRESETS = {
    "kuramoto-torus": {"grid": {"points_per_axis": 512, "side": 6.283185307179586},
                       "solver": {"substeps_per_period": 64, "subcell": 16},
                       "model": {"family": "kuramoto_reduced", "velocity_bound": 8.0}},
    "converge": {"model": {"family": "asymptotic_pendulum"}},
    "graphs": {"model": {"family": "asymptotic_pendulum"}, "grid": {"points_per_axis": 256}},
}


def _merge(base, extra, path=""):
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if key not in out:
            raise ValidationError(f"unknown configuration key {path + key!r}")
        if isinstance(out[key], dict) and key not in ("params",):
            if not isinstance(val, dict):
                raise ValidationError(f"{path + key!r} must be an object")
            out[key] = _merge(out[key], val, path + key + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config: dict, item: str) -> None:
    """Set ``key.path=value`` in place; only free-form ``params`` blocks accept new keys."""
    if "=" not in item:
        raise ValidationError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    parts = key.split(".")
    node, parent = config, None
    for part in parts[:-1]:
        if not isinstance(node, dict) or (part not in node and parent != "params"):
            raise ValidationError(f"unknown override key {key!r}")
        node = node.setdefault(part, {})
        parent = part
    if not isinstance(node, dict) or (parts[-1] not in node and parent != "params"):
        raise ValidationError(f"unknown override key {key!r}")
    node[parts[-1]] = _parse_value(raw)


def build_config(file_config: dict, overrides=()) -> dict:
    if not isinstance(file_config, dict):
        raise ValidationError("configuration must be a JSON object")
    experiment = file_config.get("experiment", DEFAULTS["experiment"])
    if experiment not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment {experiment!r}")
    config = _merge(DEFAULTS, PRESETS.get(experiment, {}))
    config = _merge(config, file_config)
    for item in overrides:
        apply_override(config, item)
    validate_config(config)
    return config


def validate_config(config: dict) -> None:
    if config["experiment"] not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment {config['experiment']!r}")
    sol = config["solver"]
    if sol["dt"] is not None and not (isinstance(sol["dt"], (int, float)) and sol["dt"] > 0):
        raise ValidationError("solver.dt must be positive")
    if sol["substeps_per_period"] is not None and int(sol["substeps_per_period"]) < 1:
        raise ValidationError("solver.substeps_per_period must be >= 1")
    for name, val in config["tolerances"].items():
        if val is not None and not val > 0:
            raise ValidationError(f"tolerance {name} must be positive")
    if not isinstance(config["output_dir"], str) or not config["output_dir"]:
        raise ValidationError("output_dir must be a path")


# construction helpers -------------------------------------------------------

def make_model(config):
    spec = dict(config["model"])
    if spec["family"] == "kuramoto_reduced" and not spec["params"]:
        spec["params"] = config["kuramoto"]
    return model_from_spec(spec)


def make_grid(config):
    return GridTorus(**config["grid"])


def make_params(config, model, grid):
    sol = config["solver"]
    sub = sol["substeps_per_period"]
    if sol["dt"] is not None:
        ratio = model.period / float(sol["dt"])
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValidationError("solver.dt must divide the model period")
        if sub is not None and int(sub) != round(ratio):
            raise ValidationError("solver.dt and solver.substeps_per_period disagree")
        sub = int(round(ratio))
    params = SolverParams.for_model(model, grid, sub, subcell=int(sol["subcell"]),
                                    tol_fix=config["tolerances"]["tol_fix"],
                                    fine_levels=int(sol["fine_levels"]))
    params.validate(grid, model)
    return params


def make_initial(config, grid):
    ini = config["initial"]
    x = grid.coordinates()
    if ini["type"] == "zero":
        return ValueField.constant(grid)
    if ini["type"] == "cosine":
        k = ini["wavenumber"]
        return ValueField(grid, ini["amplitude"] * np.sum(np.cos(2 * np.pi * k * x / grid.side), axis=-1))
    raise ValidationError(f"unknown initial field type {ini['type']!r}")


# experiments ----------------------------------------------------------------

class Run:
    def __init__(self, config, out: Path):
        self.config = config
        self.out = out
        self.artifacts = []
        self.timings = {}
        self.warnings = []
        self.summary = []
        self.results = {}

    def artifact(self, name, kind):
        path = self.out / name
        self.artifacts.append({"name": name, "kind": kind})
        return path

    def timed(self, label, fn, *args, **kw):
        t = time.perf_counter()
        value = fn(*args, **kw)
        self.timings[label] = time.perf_counter() - t
        return value


def _write_field(run, field, stem):
    save_field_csv(field, run.artifact(stem + ".csv", "value_field_csv"))
    save_field_json(field, run.artifact(stem + ".json", "value_field_json"))


def _write_solution(run, w, stem):
    w.save_json(run.artifact(stem + ".json", "periodic_solution_json"))
    for j, sl in enumerate(w.slices):
        save_field_csv(sl, run.artifact(f"{stem}_slice{j}.csv", "value_field_csv"))


def exp_solve(run, model, grid, params):
    c = run.config["run"]
    phi = make_initial(run.config, grid)
    field = run.timed("evolve", lax_oleinik_apply, phi, model, 0.0, float(c["horizon"]), params)
    if c["renormalize"]:
        field = renormalize(field)
    _write_field(run, field, "field")
    run.results.update(min=float(field.values.min()), max=float(field.values.max()),
                       lipschitz=field.lipschitz_estimate)


def exp_barrier(run, model, grid, params):
    c = run.config["run"]
    tab = run.timed("barrier", peierls_barrier, model, grid, c["s"], c["s_prime"], params,
                    tol_h=run.config["tolerances"]["tol_h"])
    save_table(tab, run.artifact("barrier.bin", "barrier_table_binary"))
    if grid.n_nodes <= 512:
        save_table_csv(tab, run.artifact("barrier.csv", "barrier_table_csv"))
    run.results.update(horizon_used=tab.horizon_used,
                       stabilization_residual=tab.stabilization_residual,
                       diagonal_max=float(np.max(np.diag(tab.values))))


def _limit(run, model, grid, params):
    c = run.config["run"]
    tol = run.config["tolerances"]
    n_slices = 1 if model.kind == "autonomous" else int(c["n_slices"])
    barriers = run.timed("barrier", barrier_slices, model, grid, params, n_slices,
                         tol_h=tol["tol_h"])
    w = limit_solution(make_initial(run.config, grid), barriers)
    res = run.timed("residual", weak_kam_residual, w, model, params)
    run.results.update(weak_kam_residual=res, horizon_used=barriers[0].horizon_used,
                       stabilization_residual=max(b.stabilization_residual for b in barriers))
    return w, res


def exp_limit(run, model, grid, params):
    w, res = _limit(run, model, grid, params)
    _write_solution(run, w, "w")
    if res > run.config["tolerances"]["tol_fix"]:
        raise _numerical("weak KAM residual above tol_fix", residual=res,
                         tol_fix=run.config["tolerances"]["tol_fix"])


def _numerical(msg, **q):
    from .exceptions import NotConverged
    return NotConverged(msg, **q)


def exp_converge(run, model, grid, params):
    c = run.config["run"]
    if model.limit_model is None:
        raise ValidationError("converge needs an asymptotically periodic model")
    limit = model.limit_model
    w, _ = _limit(run, limit, grid, params)
    T = model.period
    floor = c["floor"]
    if floor is None:
        # discretization floor: the two routes to the limit on the limit model itself
        far = run.timed("floor", lax_oleinik_apply, ValueField.constant(grid), limit, 0.0,
                        c["floor_horizon"] * T + c["tau"], params)
        floor = sup_distance(renormalize(far), w.at(c["tau"]))
    phi = make_initial(run.config, grid)
    times = [n * T + c["tau"] for n in c["epochs"]]
    fields = run.timed("evolve", renormalized_trajectory, phi, model, times, params)
    ref = w.at(c["tau"])
    gaps = [(n, sup_distance(fields[t], ref)) for n, t in zip(c["epochs"], times)]
    run.results.update(floor=floor, gaps=gaps)
    report = fit_decay_rate(gaps, floor=10.0 * floor, nominal_rate=model.rho,
                            min_epochs=int(run.config["tolerances"]["min_epochs"]))
    report.save_json(run.artifact("convergence.json", "convergence_report_json"))
    report.save_csv(run.artifact("convergence.csv", "convergence_report_csv"))
    run.results.update(fitted_rate=report.fitted_rate, r_squared=report.r_squared,
                       fitted_constant=report.fitted_constant, used_epochs=report.used)


def exp_graphs(run, model, grid, params):
    c = run.config["run"]
    if model.limit_model is None:
        raise ValidationError("graphs needs an asymptotically periodic model")
    w, _ = _limit(run, model.limit_model, grid, params)
    phi = make_initial(run.config, grid)
    dists, target, graphs = run.timed("graphs", graph_convergence, model, phi, w,
                                      c["graph_epochs"], params,
                                      run.config["tolerances"]["tol_nd"], return_graphs=True)
    bound = graph_diameter_bound(target, *graphs.values())
    target.save_csv(run.artifact("graph_limit.csv", "gradient_graph_csv"))
    target.save_json(run.artifact("graph_limit.json", "gradient_graph_json"))
    last = c["graph_epochs"][-1]
    graphs[last].save_csv(run.artifact(f"graph_epoch{last}.csv", "gradient_graph_csv"))
    lines = ["n,hausdorff"] + [f"{n},{float(d)!r}" for n, d in dists]
    run.artifact("hausdorff.csv", "hausdorff_csv").write_text("\n".join(lines) + "\n")
    run.results.update(hausdorff=dists, diameter_bound=bound)


def exp_kuramoto_decay(run, model_unused, grid_unused, params_unused):
    c = run.config["run"]
    cfg = KuramotoConfig.from_dict(run.config["kuramoto"])
    rng = np.random.default_rng(run.config["seed"])
    N = cfg.n_osc
    probe = [(rng.uniform(0, 2 * np.pi, N), rng.uniform(-1, 1, N), rng.uniform(0, cfg.period))
             for _ in range(int(c["n_probe"]))]
    rows = run.timed("decay", decay_norm_check, cfg, int(c["n_max"]), probe, c["h_t"])
    lines = ["n,c0,c1,c2"] + [f"{int(r[0])},{float(r[1])!r},{float(r[2])!r},{float(r[3])!r}"
                              for r in rows]
    run.artifact("decay_norms.csv", "decay_norms_csv").write_text("\n".join(lines) + "\n")
    ratios = (rows[1:, 1:] / rows[:-1, 1:]).tolist() if np.all(rows[:-1, 1:] > 0) else []
    run.results.update(norms=rows.tolist(), ratios=ratios,
                       expected_ratio=float(np.exp(-cfg.gamma * cfg.period)))


def exp_kuramoto_torus(run, model, grid, params):
    tol = run.config["tolerances"]
    cfg = KuramotoConfig.from_dict(run.config["kuramoto"])
    cert = run.timed("torus", invariant_torus, cfg, grid, params, tol_torus=tol["tol_torus"],
                     n_slices=int(run.config["run"]["n_slices"]), tol_h=tol["tol_h"],
                     hyperbolic_margin=tol["hyperbolic_margin"], strict=False,
                     velocity_bound=model.velocity_bound)
    cert.save_json(run.artifact("torus_certificate.json", "torus_certificate_json"))
    cert.graph.save_csv(run.artifact("torus_graph.csv", "gradient_graph_csv"))
    run.results.update(flow_residual=cert.flow_residual, tol_torus=cert.tol_torus,
                       eigenvalue_moduli=[abs(z) for z in cert.hyperbolicity],
                       verified=cert.verified)
    if not cert.verified:
        from .exceptions import AubryHypothesisUnverified
        raise AubryHypothesisUnverified("hyperbolic periodic orbit not verified",
                                        eigenvalue_moduli=[abs(z) for z in cert.hyperbolicity])


DISPATCH = {"solve": exp_solve, "barrier": exp_barrier, "limit": exp_limit,
            "converge": exp_converge, "graphs": exp_graphs,
            "kuramoto-decay": exp_kuramoto_decay, "kuramoto-torus": exp_kuramoto_torus}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _versions():
    import numba
    import scipy
    return {"weakkam": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def run(config: dict, threads: int = 0, quiet: bool = False) -> int:
    """Execute a validated configuration; returns the exit status."""
    import numba
    out = Path(config["output_dir"])
    warnings = []
    available = numba.config.NUMBA_NUM_THREADS
    if threads > available:
        warnings.append(f"--threads {threads} clamped to {available} (NUMBA_NUM_THREADS)")
    used = set_threads(threads)
    experiment = config["experiment"]
    # build every object before touching the disk so a rejected config writes nothing
    model = grid = params = None
    if experiment != "kuramoto-decay":
        model = make_model(config)
        grid = make_grid(config)
        params = make_params(config, model, grid)
        make_initial(config, grid)
    out.mkdir(parents=True, exist_ok=True)
    state = Run(config, out)
    state.warnings.extend(warnings)
    status, error = 0, None
    start = time.perf_counter()
    try:
        DISPATCH[experiment](state, model, grid, params)
    except NumericalError as exc:
        status = 3
        error = {"type": type(exc).__name__, "message": str(exc),
                 "quantities": _jsonable(exc.quantities)}
    state.timings["total"] = time.perf_counter() - start
    tolerances = dict(config["tolerances"])
    if params is not None:
        tolerances.update(tol_fix=params.tol_fix, subcell=params.subcell,
                          fine_levels=params.fine_levels)
        if tolerances.get("tol_nd") is None:
            tolerances["tol_nd"] = "max(10 h, 0.05 Lipschitz estimate) per field"
        if experiment == "kuramoto-torus" and tolerances.get("tol_torus") is None:
            tolerances["tol_torus"] = 4.0 * grid.spacing
    manifest = {
        "config": config,
        "defaults_version": DEFAULTS_VERSION,
        "defaults": DEFAULTS,
        "artifact_index": state.artifacts,
        "timings": state.timings,
        "warnings": state.warnings,
        "tolerances": tolerances,
        "BIG": big_value(),
        "hausdorff_weights": [1.0, 1.0, 1.0, 1.0],
        "solver": params.to_dict() if params is not None else None,
        "threads": {"requested": threads, "used": used},
        "versions": _versions(),
        "status": status,
        "error": error,
        "results": _jsonable(state.results),
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2))
    lines = [f"experiment: {experiment}", f"status: {status}"]
    lines += [f"{k}: {v}" for k, v in _jsonable(state.results).items() if not isinstance(v, list)]
    if error:
        lines.append(f"error: {error['type']}: {error['message']} {error['quantities']}")
    lines.append(f"wall time: {state.timings['total']:.2f} s")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    if not quiet:
        print("\n".join(lines))
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="weakkam", description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True, help="JSON experiment configuration")
    parser.add_argument("--threads", type=int, default=0, help="worker threads (0 = all available)")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dot-path override applied after the file is read")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)
    try:
        raw = json.loads(Path(args.config).read_text())
        config = build_config(raw, args.override)
        return run(config, args.threads, args.quiet)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read configuration: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except WeakKAMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
