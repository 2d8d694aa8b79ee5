"""Batch front door: config ingestion, scenario dispatch, CSV emission.

Configs are YAML (sectioned key/value text; the full grammar is spelled
out in the README).  Each run writes machine-readable CSV/JSON outputs
plus a manifest capturing every resolved parameter, and identical
configs produce byte-identical outputs: floats are emitted with 17
significant digits (lossless for binary64), nothing is time-stamped,
and all iteration orders are fixed.

Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .core import (
    DensityField,
    GridAlignmentError,
    ModelParams,
    ShearProtocol,
    StressGrid,
    density_from_cell_values,
    gaussian_density,
    uniform_density,
)
from .degeneracy import classify_degenerate, critical_time
from .evolve import EvolveConfig, branch_l2_distance, simulate, viscosity_sweep
from .steady import DegenerateFamily, flow_curve, steady_sheared, steady_zero_shear

__all__ = ["ConfigError", "RunConfig", "parse_config", "run", "main"]

SCENARIOS = ("evolve", "steady", "flowcurve", "degeneracy", "sweep")

_TOP_KEYS = {
    "scenario", "params", "initial_condition", "protocol",
    "evolve", "steady", "flowcurve", "degeneracy", "sweep", "output",
}


class ConfigError(ValueError):
    """Invalid run configuration; carries a list of diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Validated, fully-resolved run description."""

    scenario: str
    params: ModelParams
    initial_condition: dict
    protocol: ShearProtocol
    options: dict
    output: dict
    resolved: dict  # the exact dict the manifest captures

    def grid(self) -> StressGrid:
        return self.params.grid()


def _fmt(x: float) -> str:
    """Fixed 17-significant-digit decimal, lossless for binary64."""
    return format(float(x), ".17g")


def _as_float(raw, key: str, errs: list) -> float:
    # YAML 1.1 reads dotless scientific notation ("1e-6") as a string,
    # so numeric strings are accepted too.
    if isinstance(raw, bool):
        errs.append(f"{key}: expected a number, got {raw!r}")
        return math.nan
    try:
        return float(raw)
    except (TypeError, ValueError):
        errs.append(f"{key}: expected a number, got {raw!r}")
        return math.nan


_DEFAULTS = {
    "params": {
        "alpha": 1.0, "epsilon": 0.0, "half_width": 8.0, "n_cells": 1600,
        "tol_mass": 1e-6, "tol_root": 1e-12, "tol_ode": 1e-6,
    },
    "initial_condition": {"family": "uniform", "lo": -1.0, "hi": 1.0},
    "protocol": {"pieces": [[0.0, 0.0]]},
    "evolve": {
        "dt": 1e-3, "horizon": 1.0, "picard_iters": 1, "record_every": 100,
        "sink": True, "source": True,
    },
    "steady": {"b": 0.0},
    "flowcurve": {"b_values": [0.1, 0.5, 1.0, 2.0]},
    "degeneracy": {},
    "sweep": {
        "eps_values": [1e-2, 1e-3, 1e-4], "dt": 1e-3, "horizon": 1.0,
        "record_every": 50, "sink": True, "source": True,
        "compare_branch": False, "gamma": 0.0,
    },
    "output": {"profile_times": None},
}


def parse_config(text: str, scenario: str | None = None) -> RunConfig:
    """Parse and validate a YAML config, collecting precise diagnostics.

    A manifest written by a previous run (its config nested under the
    key "config") is accepted as-is, so outputs can be reproduced
    directly from their manifest.
    """
    try:
        raw = json.loads(text)  # manifests are JSON; exact float round-trip
    except json.JSONDecodeError:
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError([f"YAML parse failure: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a mapping"])
    if "config" in raw and isinstance(raw["config"], dict):
        raw = raw["config"]  # manifest round-trip

    errs: list[str] = []
    for key in raw:
        if key not in _TOP_KEYS:
            errs.append(f"unknown top-level key {key!r}")

    cfg_scenario = raw.get("scenario", scenario)
    if cfg_scenario is None:
        errs.append("missing scenario (give a subcommand or a scenario key)")
    elif cfg_scenario not in SCENARIOS:
        errs.append(f"unknown scenario {cfg_scenario!r}; expected one of {SCENARIOS}")
    if scenario is not None and cfg_scenario is not None and cfg_scenario != scenario:
        errs.append(
            f"config names scenario {cfg_scenario!r} but the {scenario!r} "
            "subcommand was invoked"
        )
    if errs:
        raise ConfigError(errs)

    def section(name: str) -> dict:
        sec = raw.get(name, {})
        if sec is None:
            sec = {}
        if not isinstance(sec, dict):
            errs.append(f"section {name!r} must be a mapping")
            return dict(_DEFAULTS[name])
        merged = dict(_DEFAULTS[name])
        for key, val in sec.items():
            if key not in _DEFAULTS[name]:
                errs.append(f"{name}: unknown key {key!r}")
            else:
                merged[key] = val
        return merged

    params_raw = section("params")
    ic_sec = raw.get("initial_condition") or {}
    if not isinstance(ic_sec, dict):
        errs.append("section 'initial_condition' must be a mapping")
        ic_sec = {}
    known_ic = {"family", "lo", "hi", "mean", "width", "b", "path", "alpha"}
    ic = dict(_DEFAULTS["initial_condition"])
    ic.update(ic_sec)
    for key in ic_sec:
        if key not in known_ic:
            errs.append(f"initial_condition: unknown key {key!r}")
    proto_sec = raw.get("protocol", _DEFAULTS["protocol"]) or _DEFAULTS["protocol"]
    opts = section(cfg_scenario)
    out_sec = section("output")

    try:
        params = ModelParams(
            alpha=_as_float(params_raw["alpha"], "params.alpha", errs),
            epsilon=_as_float(params_raw["epsilon"], "params.epsilon", errs),
            half_width=_as_float(params_raw["half_width"], "params.half_width", errs),
            n_cells=int(params_raw["n_cells"]),
            tol_mass=_as_float(params_raw["tol_mass"], "params.tol_mass", errs),
            tol_root=_as_float(params_raw["tol_root"], "params.tol_root", errs),
            tol_ode=_as_float(params_raw["tol_ode"], "params.tol_ode", errs),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(errs + [f"params: {exc}"]) from exc
    try:
        params.grid()
    except (GridAlignmentError, ValueError) as exc:
        errs.append(f"params: {exc}")

    if isinstance(proto_sec, dict) and "constant" in proto_sec:
        pieces = [[0.0, float(proto_sec["constant"])]]
    elif isinstance(proto_sec, dict) and "pieces" in proto_sec:
        pieces = proto_sec["pieces"]
    else:
        errs.append("protocol: need 'pieces' (list of [t_start, b]) or 'constant'")
        pieces = [[0.0, 0.0]]
    try:
        protocol = ShearProtocol(pieces=tuple((float(a), float(b)) for a, b in pieces))
    except (ValueError, TypeError) as exc:
        errs.append(f"protocol: {exc}")
        protocol = ShearProtocol.zero()

    if ic.get("family") not in ("uniform", "gaussian", "steady", "file"):
        errs.append(f"initial_condition: unknown family {ic.get('family')!r}")
    if ic.get("family") == "file":
        path = ic.get("path")
        if not path:
            errs.append("initial_condition: family 'file' needs a 'path'")
        elif not Path(path).exists():
            errs.append(f"initial_condition: file {path!r} does not exist")

    if cfg_scenario == "flowcurve":
        bs = opts.get("b_values", [])
        if not isinstance(bs, (list, tuple)) or not bs:
            errs.append("flowcurve: b_values must be a nonempty list")
        elif any(float(b) == 0.0 for b in bs):
            errs.append(
                "flowcurve: b_values must be nonzero (the sheared solver needs "
                "b != 0; route b = 0 to the steady scenario instead)"
            )
    if cfg_scenario == "sweep":
        eps = opts.get("eps_values", [])
        if not isinstance(eps, (list, tuple)) or len(eps) < 2:
            errs.append("sweep: eps_values must list at least two values")
        elif any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
            errs.append("sweep: eps_values must be strictly decreasing")
    if cfg_scenario in ("evolve", "sweep"):
        try:
            EvolveConfig(
                dt=_as_float(opts["dt"], f"{cfg_scenario}.dt", errs),
                horizon=_as_float(opts["horizon"], f"{cfg_scenario}.horizon", errs),
                epsilon=max(params.epsilon, 0.0),
                picard_iters=int(opts.get("picard_iters", 1)),
                record_every=int(opts["record_every"]),
            ).n_steps
        except (ValueError, TypeError) as exc:
            errs.append(f"{cfg_scenario}: {exc}")
    times = out_sec.get("profile_times")
    if times is not None:
        if not isinstance(times, (list, tuple)):
            errs.append("output: profile_times must be a list of times or null")
        else:
            for t in times:
                _as_float(t, "output.profile_times entry", errs)

    if errs:
        raise ConfigError(errs)

    resolved = {
        "scenario": cfg_scenario,
        "params": {k: params_raw[k] for k in sorted(params_raw)},
        "initial_condition": {k: ic[k] for k in sorted(ic)},
        "protocol": {"pieces": [[float(a), float(b)] for a, b in protocol.pieces]},
        cfg_scenario: {k: opts[k] for k in sorted(opts)},
        "output": {k: out_sec[k] for k in sorted(out_sec)},
    }
    return RunConfig(
        scenario=cfg_scenario,
        params=params,
        initial_condition=ic,
        protocol=protocol,
        options=opts,
        output=out_sec,
        resolved=resolved,
    )


def _build_initial(config: RunConfig, grid: StressGrid) -> DensityField:
    ic = config.initial_condition
    family = ic["family"]
    if family == "uniform":
        field = uniform_density(grid, float(ic.get("lo", -1.0)), float(ic.get("hi", 1.0)))
    elif family == "gaussian":
        field = gaussian_density(
            grid, float(ic.get("mean", 0.0)), float(ic.get("width", 1.0)),
            normalize=False,
        )
    elif family == "steady":
        alpha = float(ic.get("alpha", config.params.alpha))
        b = float(ic.get("b", 0.0))
        if b == 0.0:
            state = steady_zero_shear(alpha, grid)
            if isinstance(state, DegenerateFamily):
                raise ConfigError(
                    [f"initial_condition: no positive-fluidity steady state at alpha={alpha}"]
                )
        else:
            state = steady_sheared(alpha, b, grid)
        field = state.profile
    elif family == "file":
        field = _load_profile_csv(Path(ic["path"]), grid)
    else:  # pragma: no cover - parse_config rejects earlier
        raise ConfigError([f"unknown initial condition family {family!r}"])
    mass = field.mass()
    if abs(mass - 1.0) > 1e-13:
        print(
            f"[hllab] renormalizing initial condition mass {mass!r} to 1",
            file=sys.stderr,
        )
        field = density_from_cell_values(grid, field.values, normalize=True)
    return field


def _load_profile_csv(path: Path, grid: StressGrid) -> DensityField:
    """Read (sigma, p) rows sampled at cell centers or cell edges."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 2:
        raise ConfigError([f"{path}: expected two columns (sigma, p)"])
    sigma, vals = data[:, 0], data[:, 1]
    if sigma.size == grid.n_cells and np.allclose(sigma, grid.centers, atol=1e-9):
        return DensityField(grid, vals)
    if sigma.size == grid.n_cells + 1 and np.allclose(sigma, grid.edges, atol=1e-9):
        cell = 0.5 * (vals[:-1] + vals[1:])  # trapezoid projection onto cells
        return DensityField(grid, cell)
    raise ConfigError(
        [f"{path}: sigma column matches neither the grid centers nor its edges"]
    )


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, float):
        if math.isinf(x):
            return "infinity" if x > 0 else "-infinity"
        if math.isnan(x):
            return "nan"
    return x


def run(config: RunConfig, out_dir: Path) -> list[Path]:
    """Execute a validated config, returning the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = config.grid()
    alpha = config.params.alpha
    written: list[Path] = []

    def emit_manifest() -> None:
        path = out_dir / "manifest.json"
        _write_json(
            path,
            {
                "config": config.resolved,
                "grid": {
                    "half_width": grid.half_width,
                    "n_cells": grid.n_cells,
                    "cell_width": grid.cell_width,
                },
                "package": {"name": "hllab", "version": __version__},
            },
        )
        written.append(path)

    scenario = config.scenario
    if scenario == "evolve":
        p0 = _build_initial(config, grid)
        opts = config.options
        cfg = EvolveConfig(
            dt=float(opts["dt"]), horizon=float(opts["horizon"]),
            epsilon=config.params.epsilon, picard_iters=int(opts["picard_iters"]),
            record_every=int(opts["record_every"]),
            sink=bool(opts["sink"]), source=bool(opts["source"]),
        )
        traj = simulate(p0, config.protocol, cfg, alpha, tol_mass=config.params.tol_mass)
        tr = traj.trace
        path = out_dir / "trace.csv"
        _write_csv(
            path, "t,D,tau,mass,max_p,chi",
            zip(tr.times, tr.fluidity, tr.tau, tr.mass, tr.max_p, tr.chi),
        )
        written.append(path)
        wanted = config.output.get("profile_times")
        if wanted is None:
            indices = [0, len(traj.snapshot_times) - 1]
        else:
            snap = np.asarray(traj.snapshot_times)
            indices = sorted({int(np.argmin(np.abs(snap - float(t)))) for t in wanted})
        for idx in indices:
            t = traj.snapshot_times[idx]
            path = out_dir / f"profile_{idx:04d}.csv"
            _write_csv(path, "sigma,p", zip(grid.centers, traj.fields[idx].values))
            written.append(path)
    elif scenario == "steady":
        b = float(config.options["b"])
        if b == 0.0:
            state = steady_zero_shear(alpha, grid)
            if isinstance(state, DegenerateFamily):
                _write_json(
                    out_dir / "steady.json",
                    {
                        "alpha": alpha, "b": 0.0,
                        "result": "degenerate-family",
                        "note": "no positive-fluidity steady state; any unit-mass "
                                "density supported in [-1, 1] is stationary",
                    },
                )
                written.append(out_dir / "steady.json")
                emit_manifest()
                return written
        else:
            state = steady_sheared(alpha, b, grid, tol_root=config.params.tol_root)
        edge_vals = _steady_edge_values(state, alpha, grid)
        path = out_dir / "profile.csv"
        _write_csv(path, "sigma,p", zip(grid.edges, edge_vals))
        written.append(path)
        path = out_dir / "steady.json"
        _write_json(
            path,
            {
                "alpha": alpha, "b": state.b_value, "D": state.d_value,
                "tau": state.tau, "norm_residual": state.norm_residual,
                "mass_defect": state.mass_defect,
                "selfconsistency_gap": state.selfconsistency_gap,
            },
        )
        written.append(path)
    elif scenario == "flowcurve":
        states = flow_curve(alpha, config.options["b_values"], grid)
        path = out_dir / "flowcurve.csv"
        _write_csv(path, "b,D,tau", ((s.b_value, s.d_value, s.tau) for s in states))
        written.append(path)
    elif scenario == "degeneracy":
        p0 = _build_initial(config, grid)
        report = classify_degenerate(p0, alpha, protocol=config.protocol)
        t_c = critical_time(p0, config.protocol)
        path = out_dir / "degeneracy.json"
        _write_json(
            path,
            {
                "alpha": alpha,
                "verdict": report.verdict.value,
                "criterion_integral": _jsonable(
                    "divergent" if math.isinf(report.criterion_integral)
                    else report.criterion_integral
                ),
                "small_x_exponent": _jsonable(report.small_x_exponent),
                "fit_residual": _jsonable(report.fit_residual),
                "t_c": _jsonable(t_c),
            },
        )
        written.append(path)
    elif scenario == "sweep":
        p0 = _build_initial(config, grid)
        opts = config.options
        sweep = viscosity_sweep(
            p0, config.protocol, alpha, [float(e) for e in opts["eps_values"]],
            horizon=float(opts["horizon"]), dt=float(opts["dt"]),
            record_every=int(opts["record_every"]),
            sink=bool(opts["sink"]), source=bool(opts["source"]),
        )
        path = out_dir / "sweep.csv"
        _write_csv(
            path, "eps_high,eps_low,l2_distance",
            (
                (hi, lo, d)
                for (hi, lo), d in zip(
                    zip(sweep.eps_values, sweep.eps_values[1:]), sweep.pair_distances
                )
            ),
        )
        written.append(path)
        summary = {
            "eps_values": list(sweep.eps_values),
            "pair_distances": list(sweep.pair_distances),
        }
        if bool(opts["compare_branch"]):
            summary["branch_distance"] = branch_l2_distance(
                sweep.runs[-1], alpha, gamma=float(opts["gamma"]), t0=0.0
            )
        path = out_dir / "sweep.json"
        _write_json(path, summary)
        written.append(path)
    else:  # pragma: no cover - parse_config guards
        raise ConfigError([f"unknown scenario {scenario!r}"])

    emit_manifest()
    return written


def _steady_edge_values(state, alpha: float, grid: StressGrid) -> np.ndarray:
    """Analytic steady profile sampled on the cell edges (kinks included)."""
    from .steady import _sheared_coefficients

    e = grid.edges
    d = state.d_value
    b = state.b_value
    if b == 0.0:
        sd = math.sqrt(d)
        vals = np.empty_like(e)
        left = e <= -1.0
        right = e >= 1.0
        mid_l = (~left) & (e <= 0.0)
        mid_r = (~right) & (e > 0.0)
        vals[left] = sd / (2 * alpha) * np.exp((1.0 + e[left]) / sd)
        vals[right] = sd / (2 * alpha) * np.exp((1.0 - e[right]) / sd)
        peak = (sd + 1.0) / (2 * alpha)
        vals[mid_l] = e[mid_l] / (2 * alpha) + peak
        vals[mid_r] = -e[mid_r] / (2 * alpha) + peak
        return vals
    flip = b < 0.0
    bb = abs(b)
    beta_p, beta_m, a1, a2, a2m, c0 = _sheared_coefficients(alpha, bb, d)
    x = -e[::-1] if flip else e
    vals = np.empty_like(x)
    left = x <= -1.0
    right = x >= 1.0
    mid_l = (~left) & (x <= 0.0)
    mid_r = (~right) & (x > 0.0)
    vals[left] = a1 * np.exp(beta_p * x[left])
    vals[right] = a1 * np.exp(beta_m * x[right])
    vals[mid_l] = a2 * np.expm1(bb / d * x[mid_l]) + c0
    vals[mid_r] = a2m * np.expm1(bb / d * x[mid_r]) + c0
    return vals[::-1] if flip else vals


def _apply_overrides(text: str, overrides: list[str]) -> str:
    """Apply dotted key=value overrides to the YAML text."""
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError(["config must be a mapping to apply overrides"])
    for item in overrides:
        if "=" not in item:
            raise ConfigError([f"override {item!r} is not of the form key=value"])
        dotted, raw_val = item.split("=", 1)
        keys = dotted.split(".")
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError([f"override {item!r} walks through a non-mapping"])
        node[keys[-1]] = yaml.safe_load(raw_val)
    return yaml.safe_dump(data)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hllab",
        description="Numerical laboratory for the Hebraud-Lequeux model",
    )
    sub = parser.add_subparsers(dest="scenario", required=True)
    for name in SCENARIOS:
        sp = sub.add_parser(name, help=f"run the {name} scenario")
        sp.add_argument("--config", required=True, help="YAML config path")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument(
            "--override", action="append", default=[], metavar="KEY=VALUE",
            help="override a config entry (dotted path, repeatable)",
        )
    args = parser.parse_args(argv)

    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        if args.override:
            text = _apply_overrides(text, args.override)
        config = parse_config(text, scenario=args.scenario)
    except ConfigError as exc:
        for diag in exc.diagnostics:
            print(f"config error: {diag}", file=sys.stderr)
        return 2
    try:
        written = run(config, Path(args.out))
    except ConfigError as exc:
        for diag in exc.diagnostics:
            print(f"config error: {diag}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"numerical failure in scenario {config.scenario}: {exc}", file=sys.stderr)
        return 3
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
