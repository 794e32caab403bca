"""Command-line front end: simulate, detect, localize, benchmark, bound.

Exit codes: 0 success, 2 input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import simulate as sim
from .detect import (
    Detector,
    GaussianModel,
    GeometricPrior,
    delay_bound,
    detect as run_detector,
    fit_gaussian,
    kl_divergence,
    posterior_trace_known,
)
from .errors import GridwatchError, InputError, NumericError
from .grid import GridTopology, grid_from_json, resolve_grid
from .localize import EPS_CONN_DEFAULT, EPS_ZERO_DEFAULT, localize as build_report


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        args.func(args)
        return 0
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, GridwatchError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridwatch",
                                     description="Line outage detection from voltage streams")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="generate a measurement CSV for one scenario run")
    p.add_argument("--grid", required=True, help="catalog grid name or grid JSON path")
    p.add_argument("--scenario", required=True, help="scenario JSON path")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["magnitude", "complex"], default="magnitude")
    p.add_argument("--noise-pct", type=float, default=None, help="override scenario noise")
    p.add_argument("--resample", type=int, default=1, help="decimation factor")
    p.add_argument("--out", required=True, help="measurement CSV path")
    p.add_argument("--emit-models", default=None,
                   help="also write the true pre/post models to this JSON path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="run the change-point detector over a measurement CSV")
    p.add_argument("--measurements", required=True)
    p.add_argument("--config", default=None, help="detector config JSON")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--mode", choices=["magnitude", "complex"], default=None)
    p.add_argument("--f-known", action="store_true", default=None)
    p.add_argument("--train-window", type=int, default=None)
    p.add_argument("--models", default=None, help="true models JSON (from simulate --emit-models)")
    p.add_argument("--slack", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("localize", help="rank out-of-service branch candidates")
    p.add_argument("--result", required=True, help="detection result JSON")
    p.add_argument("--models", default=None, help="true models JSON for sigma0/sigma1")
    p.add_argument("--eps-conn", type=float, default=EPS_CONN_DEFAULT)
    p.add_argument("--eps-zero", type=float, default=EPS_ZERO_DEFAULT)
    p.add_argument("--force", action="store_true", help="localize even without a detection")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("benchmark", help="Monte Carlo detection-delay benchmark")
    p.add_argument("--grid", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--alpha", required=True, help="comma-separated false-alarm budgets")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["magnitude", "complex"], default="magnitude")
    p.add_argument("--f-known", action="store_true")
    p.add_argument("--horizon", type=int, default=400, help="post-outage steps per replication")
    p.add_argument("--burn-max", type=int, default=50, help="max random start offset")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("bound", help="print the asymptotic mean-delay bound")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--kl", type=float, default=None)
    p.add_argument("--grid", default=None)
    p.add_argument("--scenario", default=None)
    p.add_argument("--mode", choices=["magnitude", "complex"], default="magnitude")
    p.set_defaults(func=cmd_bound)
    return parser


# ---------------------------------------------------------------------------
# scenario / model file handling


def load_scenario(path) -> tuple[sim.OutageScenario, sim.InjectionModel]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed scenario JSON {path}: {exc}") from exc
    inj = doc.pop("injection", {"kind": "branch"})
    try:
        model = sim.InjectionModel(
            kind=inj.get("kind", "branch"),
            scale=inj.get("scale", sim.DEFAULT_BRANCH_SCALE),
            variances=inj.get("variances"),
            mean=inj.get("mean"),
        )
        scenario = sim.OutageScenario(
            kind=doc.get("kind", "mesh"),
            outage_branches=tuple(tuple(p) for p in doc.get("outage_branches", [])),
            outage_time=doc.get("outage_time"),
            rho=doc.get("rho", 0.04),
            noise_pct=doc.get("noise_pct", 0.0),
            sample_period=doc.get("sample_period", 3600.0),
            load_p=doc.get("load_p", 0.0),
            pf_range=tuple(doc.get("pf_range", (0.8, 1.0))),
            der_buses=tuple(doc.get("der_buses", ())),
            fault_drop=doc.get("fault_drop", 0.0),
            fault_buses=tuple(doc.get("fault_buses", ())),
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"malformed scenario {path}: {exc}") from exc
    return scenario, model


def _model_to_json(model: GaussianModel) -> dict:
    return {"mean": model.mean.tolist(), "cov": model.cov.tolist()}


def _model_from_json(doc: dict) -> GaussianModel:
    model, _ = GaussianModel.regularized(np.asarray(doc["mean"]), np.asarray(doc["cov"]))
    return model


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> None:
    topology = resolve_grid(args.grid)
    scenario, model = load_scenario(args.scenario)
    if args.noise_pct is not None:
        scenario = replace(scenario, noise_pct=args.noise_pct)
    stream = sim.generate_stream(topology, scenario, model, args.steps, args.seed)
    if args.resample != 1:
        stream = stream.resample(args.resample)
    sim.write_measurements(stream, args.out, mode=args.mode)
    if args.emit_models:
        g, f = sim.theoretical_models(topology, scenario, model, mode=args.mode)
        doc = {
            "mode": args.mode,
            "bus_ids": topology.non_slack(),
            "outage_step": stream.outage_step,
            "sample_period": stream.sample_period,
            "g": _model_to_json(g),
            "f": _model_to_json(f),
        }
        with open(args.emit_models, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    print(f"wrote {stream.n_steps + 1} readings for {topology.bus_count} buses to {args.out}"
          + (f" (outage at step {stream.outage_step})" if stream.outage_step else ""))


def _detector_config(args) -> dict:
    config = {"alpha": 0.01, "rho": 1e-4, "train_window": None, "f_known": False,
              "mode": "magnitude"}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                config.update(json.load(fh))
        except OSError as exc:
            raise InputError(f"cannot read detector config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed detector config: {exc}") from exc
    for key in ("alpha", "rho", "mode", "train_window"):
        val = getattr(args, key if key != "train_window" else "train_window")
        if val is not None:
            config[key] = val
    if args.f_known is not None and args.f_known:
        config["f_known"] = True
    return config


def cmd_detect(args) -> None:
    config = _detector_config(args)
    times, data, file_mode = sim.read_measurements(args.measurements)
    mode = config["mode"]
    if mode == "magnitude" and file_mode == "complex":
        data = np.abs(data)
        file_mode = "magnitude"
    if mode == "complex" and file_mode == "magnitude":
        raise InputError("cannot run complex-mode detection on a magnitude CSV")
    m = data.shape[1]
    if not 1 <= args.slack <= m:
        raise InputError(f"slack bus {args.slack} out of range 1..{m}")
    bus_ids = [b for b in range(1, m + 1) if b != args.slack]
    cols = [b - 1 for b in bus_ids]
    if mode == "magnitude":
        increments = np.diff(data[:, cols].real, axis=0)
    else:
        dv = np.diff(data[:, cols], axis=0)
        increments = np.hstack([dv.real, dv.imag])

    lam = None
    g = f = None
    if args.models:
        with open(args.models, "r", encoding="utf-8") as fh:
            models_doc = json.load(fh)
        if models_doc.get("mode") != mode:
            raise InputError(
                f"models file is {models_doc.get('mode')!r} but detection mode is {mode!r}"
            )
        g = _model_from_json(models_doc["g"])
        if config["f_known"]:
            f = _model_from_json(models_doc["f"])
        lam = models_doc.get("outage_step")
    elif config["f_known"]:
        raise InputError("f_known requires --models with the true post-outage model")

    offset = 0
    if g is None:
        window = config["train_window"] or 10 * increments.shape[1]
        if increments.shape[0] <= window:
            raise InputError(
                f"stream has {increments.shape[0]} increments, need more than the "
                f"training window ({window})"
            )
        g = fit_gaussian(increments[:window])
        offset = window
    prior = GeometricPrior(config["rho"])
    detector = Detector(config["alpha"], prior, g, f)
    lam_rel = None if lam is None or lam <= offset else lam - offset
    result = run_detector(detector, increments[offset:], lambda_true=lam_rel)
    f_hat_doc = None
    if not detector.f_known:
        # keep refining the learned model with measurements past the detection
        for row in increments[offset + detector.n:]:
            detector.mle.update(row)
        exported, _ = GaussianModel.regularized(detector.mle.mean(), detector.mle.cov())
        f_hat_doc = {
            **_model_to_json(exported),
            "ess": detector.mle.ess,
            "immature": not detector.estimate_mature,
        }

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / "posterior_trace.csv"
    with open(trace_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "posterior", "complementary"])
        for i, (p, lc) in enumerate(zip(result.posterior_trace,
                                        result.log_complementary_trace), start=1):
            writer.writerow([offset + i, f"{p:.17g}", f"{math.exp(lc):.17g}"])
    doc = {
        "detected": result.detected,
        "tau": None if result.tau is None else offset + result.tau,
        "lambda": lam,
        "delay": result.delay,
        "false_alarm": result.false_alarm,
        "alpha": config["alpha"],
        "rho": config["rho"],
        "mode": mode,
        "train_window": offset or None,
        "bus_ids": bus_ids,
        "posterior_trace_csv": str(trace_path),
        "g": _model_to_json(g),
    }
    if f_hat_doc is not None:
        doc["f_hat"] = f_hat_doc
    result_path = out_dir / "detection_result.json"
    with open(result_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    if result.detected:
        print(f"outage detected at step {doc['tau']} (posterior >= {1 - config['alpha']:.6g})")
    else:
        print("no outage detected")


def cmd_localize(args) -> None:
    with open(args.result, "r", encoding="utf-8") as fh:
        result = json.load(fh)
    if not result.get("detected") and not args.force:
        raise InputError("no detection in result JSON; pass --force to localize anyway")
    models_doc = None
    if args.models:
        with open(args.models, "r", encoding="utf-8") as fh:
            models_doc = json.load(fh)
    bus_ids = result.get("bus_ids") or (models_doc or {}).get("bus_ids")
    if bus_ids is None:
        raise InputError("result JSON carries no bus_ids")
    d = len(bus_ids)

    def _cov(doc):
        cov = np.asarray(doc["cov"], dtype=float)
        if cov.shape[0] == d:
            return cov
        if cov.shape[0] == 2 * d:
            # complex-mode covariance: real/imag blocks are two draws of the
            # same per-bus structure, so average them for pairwise analysis
            return 0.5 * (cov[:d, :d] + cov[d:, d:])
        raise InputError(f"covariance size {cov.shape[0]} does not match {d} buses")

    if models_doc is not None:
        sigma0, source0 = _cov(models_doc["g"]), "true"
        sigma1, source1, count = _cov(models_doc["f"]), "true", None
    else:
        sigma0, source0 = _cov(result["g"]), "estimated"
        if "f_hat" not in result:
            raise InputError(
                "no post-outage covariance: result has no learned f_hat and no "
                "--models file was given"
            )
        sigma1, source1 = _cov(result["f_hat"]), "estimated"
        count = result["f_hat"].get("ess")
    report = build_report(sigma0, sigma1, eps_conn=args.eps_conn, eps_zero=args.eps_zero,
                          bus_ids=bus_ids, source=source1, sample_count=count)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "localization_report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2)
    with open(out_dir / "conditional_correlation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bus_i", "bus_j", "abs_rho_pre", "abs_rho_post"])
        for bi, bj, pre, post in report.heatmap_rows():
            writer.writerow([bi, bj, f"{pre:.17g}", f"{post:.17g}"])
    if report.candidates:
        pairs = ", ".join(f"{a}-{b}" for a, b in report.candidates)
        print(f"out-of-service branch candidates: {pairs}")
    else:
        print("no outage-branch candidates at the configured thresholds")
    if report.island_pairs:
        print(f"island structure detected; undecidable pairs: {list(report.island_pairs)}")


# ---------------------------------------------------------------------------
# benchmark


def _benchmark_rep(payload):
    (grid_doc, scenario, model, alpha, mode, f_known, horizon, burn_max,
     seed, alpha_idx, rep) = payload
    topology = grid_from_json(grid_doc)
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(alpha_idx, rep))
    seed_lam, seed_stream = ss.spawn(2)
    rng = np.random.default_rng(seed_lam)
    lam = int(rng.geometric(scenario.rho))
    burn = int(rng.integers(0, burn_max + 1))
    scenario_rep = replace(scenario, outage_time=burn + lam)
    n_steps = burn + lam + horizon
    stream_seed = int(seed_stream.generate_state(1)[0])
    try:
        stream = sim.generate_stream(topology, scenario_rep, model, n_steps, stream_seed)
        xs = stream.detector_matrix(mode)[burn:]
        g, f = sim.theoretical_models(topology, scenario_rep, model, mode=mode)
        prior = GeometricPrior(scenario.rho)
        if f_known:
            _, log_comp = posterior_trace_known(prior, g, f, xs)
            hits = np.flatnonzero(log_comp <= math.log(alpha))
            tau = int(hits[0]) + 1 if hits.size else None
        else:
            detector = Detector(alpha, prior, g, None)
            tau = run_detector(detector, xs).tau
    except GridwatchError as exc:
        return {"alpha": alpha, "rep": rep, "error": str(exc)}
    detected = tau is not None
    false_alarm = detected and tau < lam
    delay = tau - lam if detected and not false_alarm else None
    return {"alpha": alpha, "rep": rep, "lambda": lam, "tau": tau,
            "detected": detected, "false_alarm": false_alarm, "delay": delay}


def run_benchmark(topology: GridTopology, scenario: sim.OutageScenario,
                  model: sim.InjectionModel, alphas, reps: int, seed: int,
                  mode: str = "magnitude", f_known: bool = True, horizon: int = 400,
                  burn_max: int = 50, workers: int = 1):
    """Seeded Monte Carlo sweep; reproducible independent of worker count."""
    from .grid import grid_to_json

    grid_doc = grid_to_json(topology)
    payloads = [
        (grid_doc, scenario, model, alpha, mode, f_known, horizon, burn_max,
         seed, ai, rep)
        for ai, alpha in enumerate(alphas)
        for rep in range(reps)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_benchmark_rep, payloads, chunksize=16))
    else:
        rows = [_benchmark_rep(p) for p in payloads]
    rows.sort(key=lambda r: (r["alpha"], r["rep"]))

    g, f = sim.theoretical_models(topology, scenario, model, mode=mode)
    kl = kl_divergence(f, g)
    aggregates = []
    for alpha in alphas:
        sub = [r for r in rows if r["alpha"] == alpha]
        failures = [r for r in sub if "error" in r]
        ok = [r for r in sub if "error" not in r]
        delays = [r["delay"] for r in ok if r["delay"] is not None]
        aggregates.append({
            "alpha": alpha,
            "reps": len(sub),
            "failures": len(failures),
            "detect_rate": sum(r["detected"] for r in ok) / len(ok) if ok else 0.0,
            "false_alarm_rate": sum(r["false_alarm"] for r in ok) / len(ok) if ok else 0.0,
            "mean_delay": float(np.mean(delays)) if delays else None,
            "delay_over_log_alpha": (float(np.mean(delays)) / abs(math.log(alpha))
                                     if delays else None),
            "bound": delay_bound(alpha, scenario.rho, kl),
            "kl": kl,
            "rho": scenario.rho,
        })
    return rows, aggregates


def cmd_benchmark(args) -> None:
    topology = resolve_grid(args.grid)
    scenario, model = load_scenario(args.scenario)
    try:
        alphas = [float(a) for a in args.alpha.split(",") if a]
    except ValueError as exc:
        raise InputError(f"bad --alpha list {args.alpha!r}: {exc}") from exc
    if not alphas or any(not 0 < a < 1 for a in alphas):
        raise InputError("--alpha needs comma-separated values in (0, 1)")
    if args.reps < 1:
        raise InputError("--reps must be >= 1")
    rows, aggregates = run_benchmark(
        topology, scenario, model, alphas, args.reps, args.seed, mode=args.mode,
        f_known=args.f_known, horizon=args.horizon, burn_max=args.burn_max,
        workers=args.workers,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "replications.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "rep", "lambda", "tau", "detected", "false_alarm",
                         "delay", "error"])
        for r in rows:
            writer.writerow([
                f"{r['alpha']:.17g}", r["rep"], r.get("lambda", ""),
                r.get("tau", ""), r.get("detected", ""), r.get("false_alarm", ""),
                "" if r.get("delay") is None else r["delay"], r.get("error", ""),
            ])
    with open(out_dir / "benchmark.json", "w", encoding="utf-8") as fh:
        json.dump(aggregates, fh, indent=2)
    with open(out_dir / "benchmark.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        keys = ["alpha", "reps", "failures", "detect_rate", "false_alarm_rate",
                "mean_delay", "delay_over_log_alpha", "bound", "kl", "rho"]
        writer.writerow(keys)
        for agg in aggregates:
            writer.writerow([
                "" if agg[k] is None else (f"{agg[k]:.17g}" if isinstance(agg[k], float) else agg[k])
                for k in keys
            ])
    for agg in aggregates:
        md = agg["mean_delay"]
        print(f"alpha={agg['alpha']:g}: mean delay "
              f"{'n/a' if md is None else f'{md:.3f}'} steps, "
              f"bound {agg['bound']:.3f}, false alarms {agg['false_alarm_rate']:.4f}")


def cmd_bound(args) -> None:
    kl = args.kl
    if kl is None:
        if not (args.grid and args.scenario):
            raise InputError("bound needs either --kl or both --grid and --scenario")
        topology = resolve_grid(args.grid)
        scenario, model = load_scenario(args.scenario)
        g, f = sim.theoretical_models(topology, scenario, model, mode=args.mode)
        kl = kl_divergence(f, g)
    value = delay_bound(args.alpha, args.rho, kl)
    print(f"kl={kl:.12g} bound={value:.12g}")


if __name__ == "__main__":
    sys.exit(main())
