"""Command-line front end.

Subcommands: ``decouple``, ``synth6``, ``synth4``, ``analyze``, ``simulate``
and ``gridcheck``.  All configuration is JSON; outputs are JSON/CSV files in
the directory given by ``--out``.  Results are deterministic for a fixed
config and seed (wall time is never written to results files).

Exit codes: 0 success, 1 numeric failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from modalsyn.benchplant import BenchmarkSpec, by_name
from modalsyn.decoupling import (
    apply_decoupling_partitioned,
    extended_input_decoupling,
)
from modalsyn.mechanics import (
    MechanicalModel,
    evaluate_local,
    group_and_partition,
    modal_decompose,
)
from modalsyn.shaping import (
    compute_scalings,
    design_weights_4block,
    design_weights_6block,
)
from modalsyn.statespace import (
    ModelError,
    NumericError,
    RationalDiagonalFilter,
    freq_response,
    simulate,
)
from modalsyn.synthesis import (
    ClosedLoopMap,
    ConventionalView,
    StructuredControllerParams,
    close_full_loop,
    grid_stability_check,
    initial_params,
    synthesize,
)


class ConfigError(ValueError):
    """Bad or incomplete configuration (exit code 2)."""


# ---------------------------------------------------------------------------
# configuration and problem assembly
# ---------------------------------------------------------------------------

@dataclass
class DesignProblem:
    spec: BenchmarkSpec
    cl: ClosedLoopMap
    init: StructuredControllerParams
    pair: object
    grid: list
    config: dict


def _load_config(path):
    if path is None:
        raise ConfigError("--config is required for this command")
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")


def _resolve_model(config, args):
    name = getattr(args, "model", None) or config.get("model")
    if name is None:
        raise ConfigError("no model given (use --model or the 'model' key)")
    try:
        return by_name(name)
    except (ModelError, KeyError):
        pass
    try:
        with open(name) as fh:
            model = MechanicalModel.from_dict(json.load(fh))
    except FileNotFoundError:
        raise ConfigError(f"unknown benchmark and no such file: {name}")
    dec = modal_decompose(model)
    p_star = config.get("p_star")
    if p_star is None:
        raise ConfigError("file-based models need 'p_star' in the config")
    grid = config.get("grid")
    if grid is None:
        raise ConfigError("file-based models need 'grid' in the config")
    return BenchmarkSpec(name=os.path.basename(name), model=model,
                         n_rb=dec.n_rb, n_flex=dec.n_modes - dec.n_rb,
                         p_star=np.atleast_1d(np.asarray(p_star, float)),
                         grid=[np.atleast_1d(np.asarray(p, float))
                               for p in grid])


def build_problem(config, args, kind) -> DesignProblem:
    spec = _resolve_model(config, args)
    p_star = getattr(args, "p_star", None)
    if p_star is not None:
        p_star = np.atleast_1d(np.asarray(json.loads(p_star), float))
    elif config.get("p_star") is not None:
        p_star = np.atleast_1d(np.asarray(config["p_star"], float))
    else:
        p_star = np.atleast_1d(np.asarray(spec.p_star, float))
    grid = config.get("grid", None)
    if getattr(args, "grid", None) is not None:
        grid = json.loads(args.grid)
    grid = list(spec.grid) if grid is None else [np.atleast_1d(p) for p in grid]

    dec = modal_decompose(spec.model)
    retain = config.get("retain", list(range(dec.n_rb, dec.n_modes)))
    pm = group_and_partition(dec, spec.model, dec.n_rb, retain)
    controlled = config.get("controlled", list(retain))
    n_flex_dec = int(config.get("n_flex_decouple", pm.n_flex))
    pair = extended_input_decoupling(pm, p_star, n_flex_dec)
    dpm = apply_decoupling_partitioned(pm, pair)
    g_nom = evaluate_local(dpm, p_star)

    try:
        f_bw = [float(f) for f in config["f_bw"]]
        expected_error = [float(e) for e in config["expected_error"]]
    except KeyError as exc:
        raise ConfigError(f"config is missing required key {exc}")
    sc = compute_scalings(g_nom, f_bw, expected_error, n_flex=dpm.n_flex)
    f_flex = [float(dpm.omega[i]) / (2 * np.pi) for i in controlled]
    wcfg = config.get("weights", {})
    wkw = {k: wcfg[k] for k in ("K_s", "K_r", "alpha", "beta1", "beta2",
                                "eps", "f_int", "f_roll") if k in wcfg}
    make_weights = design_weights_6block if kind == "6block" else design_weights_4block
    ws = make_weights(f_bw, f_flex, **wkw)
    cl = ClosedLoopMap(kind, dpm, p_star, sc, ws, controlled,
                       Q=float(config.get("Q", 10.0)), f_bw=f_bw)
    init = initial_params(cl, q_weight=float(config.get("q_weight", 1e4)),
                          v_weight=float(config.get("v_weight", 1.0)))
    return DesignProblem(spec, cl, init, pair, grid, config)


def _out_dir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _channel_csv(path, M, f_lo=1e-1, f_hi=1e4, n=400):
    freqs = np.logspace(np.log10(f_lo), np.log10(f_hi), n)
    freq_response(M, freqs).to_csv(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_decouple(args):
    config = _load_config(args.config) if args.config else {}
    prob = build_problem(config or {"f_bw": [1.0], "expected_error": [1.0],
                                    "model": args.model}, args, "6block")
    out = _out_dir(args)
    prob.pair.to_json(os.path.join(out, "decoupling.json"))
    doc = {"model": prob.spec.name,
           "p_star": np.atleast_1d(prob.cl.p_star).tolist(),
           "n_rb": prob.cl.n_rb, "n_flex": prob.cl.n_flex,
           "omega_hz": (prob.cl.pm.omega / (2 * np.pi)).tolist(),
           "zeta": prob.cl.pm.zeta.tolist(),
           "retained": list(prob.cl.pm.retained),
           "discarded": list(prob.cl.pm.discarded)}
    _write_json(os.path.join(out, "modal_summary.json"), doc)
    print(f"wrote decoupling.json and modal_summary.json to {out}")
    return 0


def _run_synth(args, kind):
    config = _load_config(args.config)
    prob = build_problem(config, args, kind)
    budget = int(args.budget if args.budget is not None
                 else config.get("budget", 2000))
    seed = int(args.seed if args.seed is not None else config.get("seed", 0))
    n_starts = int(config.get("n_starts", 5))
    cl, init = prob.cl, prob.init
    tol = float(config.get("crossover_tolerance", 0.06))
    band = ((1 - tol) * min(cl.f_bw), (1 + tol) * max(cl.f_bw))

    res = synthesize(cl, init, budget=budget, seed=seed, n_starts=n_starts,
                     grid_points=prob.grid, crossover_band=band)
    conv = synthesize(ConventionalView(cl), init, budget=budget, seed=seed,
                      n_starts=n_starts, grid_points=prob.grid,
                      crossover_band=band, freeze_xi=True)
    cert = grid_stability_check(cl, res.params, prob.grid)
    cert_conv = grid_stability_check(cl, conv.params, prob.grid)

    out = _out_dir(args)
    doc = {"kind": kind, "model": prob.spec.name, "seed": seed,
           "budget": budget, "config": config,
           "proposed": res.to_dict(), "conventional": conv.to_dict(),
           "certificate_proposed": cert.to_dict(),
           "certificate_conventional": cert_conv.to_dict()}
    _write_json(os.path.join(out, "results.json"), doc)
    _channel_csv(os.path.join(out, "proposed_channels.csv"),
                 cl.evaluate(res.params))
    _channel_csv(os.path.join(out, "conventional_channels.csv"),
                 cl.evaluate(conv.params))
    status = "certified" if cert.all_stable else "NOT grid-stable"
    print(f"{kind}: gamma {res.gamma:.4g} (conventional {conv.gamma:.4g}), "
          f"{status}; results in {out}")
    return 0


def cmd_synth6(args):
    return _run_synth(args, "6block")


def cmd_synth4(args):
    return _run_synth(args, "4block")


def _load_results(args):
    try:
        with open(args.results) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"results file not found: {args.results}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"results file is not valid JSON: {exc}")


def cmd_analyze(args):
    doc = _load_results(args)
    config = _load_config(args.config) if args.config else doc.get("config")
    if config is None:
        raise ConfigError("no config available (pass --config)")
    prob = build_problem(config, args, doc.get("kind", "6block"))
    out = _out_dir(args)
    for label in ("proposed", "conventional"):
        if label not in doc:
            continue
        params = StructuredControllerParams.from_dict(doc[label]["params"])
        M = prob.cl.evaluate(params)
        _channel_csv(os.path.join(out, f"{label}_channels.csv"), M)
        g_local = evaluate_local(prob.cl.pm, prob.cl.p_star)
        closed = close_full_loop(g_local, prob.cl, params)
        _channel_csv(os.path.join(out, f"{label}_closedloop.csv"), closed)
    print(f"analysis CSVs written to {out}")
    return 0


def _band_disturbance(n, dt, f_center, seed, q=5.0, amplitude=1.0):
    """Band-limited noise: white noise through a band-pass around f_center."""
    rng = np.random.default_rng(seed)
    w = 2 * np.pi * f_center
    bp = RationalDiagonalFilter(
        (((np.array([w / q, 0.0]), np.array([1.0, w / q, w ** 2])),),)).to_ss()
    white = rng.standard_normal((n, 1))
    _, _, d = simulate(bp, white, dt)
    scale = np.max(np.abs(d))
    return amplitude * d / (scale if scale > 0 else 1.0)


def cmd_simulate(args):
    doc = _load_results(args)
    config = _load_config(args.config) if args.config else doc.get("config")
    if config is None:
        raise ConfigError("no config available (pass --config)")
    prob = build_problem(config, args, doc.get("kind", "6block"))
    cl = prob.cl
    sim = config.get("simulate", {})
    dt = float(sim.get("dt", 1e-4))
    duration = float(sim.get("duration", 2.0))
    f_dist = float(sim.get("f_disturbance", 50.0))
    seed = int(args.seed if args.seed is not None else sim.get("seed", 0))
    n = int(round(duration / dt))
    d = _band_disturbance(n, dt, f_dist, seed,
                          amplitude=float(sim.get("amplitude", 1.0)))
    w = np.hstack([np.zeros((n, cl.n_rb)),
                   np.tile(d, (1, cl.n_flex))])
    g_local = evaluate_local(cl.pm, cl.p_star)
    out = _out_dir(args)
    rows = {"t": np.arange(n) * dt}
    rms = {}
    for label in ("proposed", "conventional"):
        if label not in doc:
            continue
        params = StructuredControllerParams.from_dict(doc[label]["params"])
        closed = close_full_loop(g_local, cl, params)
        _, _, y = simulate(closed, w, dt)
        for j in range(y.shape[1]):
            rows[f"{label}_y{j}"] = y[:, j]
        rms[label] = float(np.sqrt(np.mean(y ** 2)))
    header = ",".join(rows)
    data = np.column_stack(list(rows.values()))
    np.savetxt(os.path.join(out, "timeseries.csv"), data, delimiter=",",
               header=header, comments="")
    summary = {"dt": dt, "duration": duration, "f_disturbance": f_dist,
               "seed": seed, "rms": rms}
    if "proposed" in rms and "conventional" in rms and rms["conventional"] > 0:
        summary["rms_ratio"] = rms["proposed"] / rms["conventional"]
    _write_json(os.path.join(out, "simulation.json"), summary)
    print(f"simulation written to {out}: " +
          ", ".join(f"{k} RMS {v:.3e}" for k, v in rms.items()))
    return 0


def cmd_gridcheck(args):
    doc = _load_results(args)
    config = _load_config(args.config) if args.config else doc.get("config")
    if config is None:
        raise ConfigError("no config available (pass --config)")
    prob = build_problem(config, args, doc.get("kind", "6block"))
    params = StructuredControllerParams.from_dict(doc["proposed"]["params"])
    cert = grid_stability_check(prob.cl, params, prob.grid)
    out = _out_dir(args)
    _write_json(os.path.join(out, "certificate.json"), cert.to_dict())
    n_ok = sum(cert.stable)
    print(f"grid certificate: {n_ok}/{len(cert.stable)} points stable "
          f"(worst abscissa {max(cert.abscissa):.4g})")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_common(sp):
    sp.add_argument("--model", help="benchmark name or model JSON file")
    sp.add_argument("--config", help="configuration JSON file")
    sp.add_argument("--out", help="output directory (default: current)")
    sp.add_argument("--seed", type=int, help="override the RNG seed")
    sp.add_argument("--p-star", dest="p_star",
                    help="design point, JSON (e.g. '0.3' or '[0.3,0.4]')")
    sp.add_argument("--grid", help="scheduling grid, JSON list")
    sp.add_argument("--budget", type=int, help="optimizer evaluation budget")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="modalsyn",
        description="modal decoupling, observer and structured H-infinity "
                    "co-design for flexible motion systems")
    sub = ap.add_subparsers(dest="command", required=True)
    specs = [
        ("decouple", cmd_decouple, "compute and export the decoupling pair", []),
        ("synth6", cmd_synth6, "output-based co-design (2x3 weighted map)", []),
        ("synth4", cmd_synth4, "error-based co-design (2x2 weighted map)", []),
        ("analyze", cmd_analyze, "export frequency-domain CSVs for a result",
         ["results"]),
        ("simulate", cmd_simulate, "time-domain disturbance comparison",
         ["results"]),
        ("gridcheck", cmd_gridcheck, "re-run the grid stability certificate",
         ["results"]),
    ]
    for name, func, help_text, positionals in specs:
        sp = sub.add_parser(name, help=help_text)
        for pos in positionals:
            sp.add_argument(pos, help="results.json from a synth run")
        _add_common(sp)
        sp.set_defaults(func=func)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ModelError, NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
