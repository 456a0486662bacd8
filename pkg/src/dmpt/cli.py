"""Command-line front end.

Every run writes a result (JSON or CSV) plus one manifest describing how
the result was produced. Results carry no timestamps, so re-running the
argument list stored in a manifest (``--from-manifest``) reproduces them
byte for byte.

Exit codes: 0 ok, 1 verify found discrepancies, 2 bad input,
3 non-convergence, 4 infeasible, 5 oracle guard exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .continuous import round_to_lots, solve_continuous, utility_continuous
from .discrete import (DiscreteProblem, EsgCap, check_feasible, portfolio_point,
                       utility_discrete)
from .errors import ConvergenceError, DmptError, InfeasibleError, InputError, OracleGuardError
from .frontier import (envelope, frontier_gap, sample_cloud, write_cloud_csv,
                       write_envelope_csv)
from .market_data import (estimate_stats, load_esg, load_prices, synthesize_market,
                          write_esg, write_prices)
from .solvers import SAMPLERS, SamplerConfig, calibrate_ntot, solve, thread_count

logger = logging.getLogger("dmpt")

EXIT_DISCREPANCY = 1
EXIT_INPUT = 2
EXIT_CONVERGENCE = 3
EXIT_INFEASIBLE = 4
EXIT_GUARD = 5

# Large risk aversion stands in for the analytic minimum-variance portfolio.
MIN_VARIANCE_PHI = 1e6
VERIFY_TOL = 1e-9

INTERPRETATION = {
    "weights_constraint": "sum(x) = 1, x >= 0 (probability simplex)",
    "discrete_objective": "phi_d/2 x'Cx - r'x over integer lots summing to N_tot",
    "phi_rescaling": "phi_d = phi_c / N_tot when --rescale-phi on, raw phi when off",
}


class _Stages:
    def __init__(self):
        self.times = {}

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            self.times[name] = self.times.get(name, 0.0) + time.perf_counter() - t0


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default, allow_nan=False) + "\n"


def _floats(values):
    out = []
    for v in values.split(","):
        v = v.strip()
        if not v:
            continue
        try:
            out.append(float(v))
        except ValueError:
            raise InputError(f"not a number: {v!r}") from None
    return out


def _tickers(s):
    if s is None:
        return None
    out = [t.strip() for t in s.split(",") if t.strip()]
    if not out:
        raise InputError("empty --tickers list")
    return out


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmpt", description="Discrete mean-variance portfolio optimization.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--from-manifest", metavar="PATH",
                        help="replay the arguments recorded in a manifest (later flags override)")
    sub = parser.add_subparsers(dest="command")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--prices", required=True, help="long-format CSV with date,ticker,close")
    data.add_argument("--esg", help="CSV with ticker,score,best,worst")
    data.add_argument("--tickers", help="comma-separated subset of tickers, in the order to use")
    data.add_argument("--periods-per-year", type=int, default=252)

    out = argparse.ArgumentParser(add_help=False)
    out.add_argument("--out", help="result path (default: stdout)")
    out.add_argument("--manifest", help="manifest path (default: next to --out, else stderr)")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--phi", type=float, help="risk aversion of the continuous problem")
    model.add_argument("--budget", type=float)
    model.add_argument("--rescale-phi", choices=("on", "off"), default="on")
    model.add_argument("--ntot", type=int, help="total number of lots")
    model.add_argument("--calibrate", action="store_true", help="grow N_tot until the budget is used up")
    model.add_argument("--slack-tol", type=float, default=10.0)
    model.add_argument("--esg-max-distance", type=float)
    model.add_argument("--esg-order", type=float, default=1.0)
    model.add_argument("--esg-heterogeneous", action="store_true",
                       help="normalize ESG gaps by each asset's own scale")
    model.add_argument("--sampler", choices=SAMPLERS, default="sa-integer")
    model.add_argument("--seed", type=int, default=0)
    model.add_argument("--restarts", type=int, default=32)
    model.add_argument("--sweeps", type=int, default=20_000)

    cloud = argparse.ArgumentParser(add_help=False)
    cloud.add_argument("--samples", type=int, default=10_000, help="random portfolios in the frontier cloud")
    cloud.add_argument("--bins", type=int, default=50)
    cloud.add_argument("--cloud-seed", type=int, default=0)

    opt = sub.add_parser("optimize", help="solve one portfolio problem")
    opt_sub = opt.add_subparsers(dest="mode")
    cont = opt_sub.add_parser("continuous", parents=[data, out], help="continuous mean-variance weights")
    cont.add_argument("--phi", type=float, required=True)
    cont.add_argument("--budget", type=float, help="also round the weights to whole lots")
    cont.set_defaults(func=cmd_continuous)
    disc = opt_sub.add_parser("discrete", parents=[data, out, model, cloud], help="integer lot allocation")
    disc.add_argument("--compare-rounding", action="store_true",
                      help="also report the rounded continuous baseline and frontier gaps")
    disc.set_defaults(func=cmd_discrete)

    fr = sub.add_parser("frontier", parents=[data, cloud], help="random-portfolio cloud and its envelope")
    fr.add_argument("--out", required=True, help="output directory")
    fr.add_argument("--manifest")
    fr.add_argument("--mode", choices=("continuous", "discrete"), default="continuous")
    fr.add_argument("--ntot", type=int, help="lot count of the discrete cloud")
    fr.add_argument("--mark", action="append", default=[], help="result JSON whose portfolio gets a gap row")
    fr.set_defaults(func=cmd_frontier)

    sw = sub.add_parser("sweep", parents=[data, out, model, cloud], help="solve over a list of parameter values")
    sw.add_argument("--axis", choices=("ntot", "esg-distance", "phi"), required=True)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.set_defaults(func=cmd_sweep)

    ver = sub.add_parser("verify", help="recompute a result JSON from its raw inputs")
    ver.add_argument("result")
    ver.add_argument("--out")
    ver.set_defaults(func=cmd_verify)

    syn = sub.add_parser("synth", help="write a synthetic price and ESG data set")
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--k", type=int, default=8, help="number of assets")
    syn.add_argument("--T", type=int, default=500, help="number of trading days")
    syn.add_argument("--out", required=True, help="output directory")
    syn.add_argument("--manifest")
    syn.set_defaults(func=cmd_synth)
    return parser


# ---------------------------------------------------------------- shared steps


def _load(args, st):
    history = st.run("load", load_prices, args.prices, _tickers(args.tickers))
    stats = st.run("estimate", estimate_stats, history, args.periods_per_year)
    esg = load_esg(args.esg, history.tickers) if getattr(args, "esg", None) else None
    return history, stats, esg


def _inputs(args, tickers):
    return {"prices": args.prices, "esg": getattr(args, "esg", None), "tickers": list(tickers),
            "periods_per_year": args.periods_per_year}


def _esg_cap(args, esg, distance=None):
    distance = args.esg_max_distance if distance is None else distance
    if distance is None:
        return None
    if esg is None:
        raise InputError("--esg-max-distance needs --esg")
    return EsgCap(distance, esg, order=args.esg_order, heterogeneous=args.esg_heterogeneous)


def _sampler_config(args):
    if args.restarts < 1 or args.sweeps < 1:
        raise InputError("--restarts and --sweeps must be >= 1")
    return SamplerConfig(seed=args.seed, restarts=args.restarts, sweeps=args.sweeps)


def _check_phi(phi):
    if phi is None or not phi > 0:
        raise InputError("phi must be positive")


def _point(w, stats):
    pt = portfolio_point(w, stats)
    return {"volatility": pt.volatility, "return": pt.expected_return}


def _frontier_env(args, stats):
    if args.samples < 1:
        raise InputError("--samples must be >= 1")
    cloud = sample_cloud(stats, args.samples, seed=args.cloud_seed)
    return envelope(cloud, n_bins=args.bins)


def _discrete_summary(problem, result, stats, esg_cap):
    lots = result.best
    w = lots / problem.n_tot
    summary = {
        "weights": w.tolist(),
        "point": _point(w, stats),
        "spent": float(lots @ stats.prices) if stats.prices is not None else None,
        "esg_distance": esg_cap.distance(lots, problem.n_tot) if esg_cap is not None else None,
    }
    return summary


def _solve_problem(args, stats, problem_kw, st):
    """Fixed ``--ntot`` solve, or calibration when ``--calibrate`` is set."""
    cfg = _sampler_config(args)
    rescale = args.rescale_phi == "on"
    if args.calibrate:
        if args.budget is None:
            raise InputError("--calibrate needs --budget")
        cal = st.run("solve", calibrate_ntot, stats, problem_kw["phi"], args.budget,
                     esg_cap=problem_kw.get("esg_cap"), sampler=args.sampler, slack_tol=args.slack_tol,
                     config=cfg, rescale=rescale)
        problem = DiscreteProblem(stats, n_tot=cal.n_tot, rescale=rescale, budget=args.budget, **problem_kw)
        return problem, cal.result, cal.to_dict()
    n_tot = problem_kw.pop("n_tot", args.ntot)
    if n_tot is None:
        raise InputError("give --ntot or --calibrate")
    if n_tot < 1:
        raise InputError("--ntot must be a positive integer")
    problem = DiscreteProblem(stats, n_tot=n_tot, rescale=rescale, budget=args.budget, **problem_kw)
    result = st.run("solve", solve, problem, args.sampler, cfg)
    return problem, result, None


def _problem_dict(problem, args):
    cap = problem.esg_cap
    return {
        "phi": problem.phi,
        "phi_d": problem.phi_d,
        "rescale_phi": problem.rescale,
        "n_tot": problem.n_tot,
        "budget": problem.budget,
        "esg_cap": None if cap is None else {
            "max_distance": cap.max_distance, "order": cap.order, "heterogeneous": cap.heterogeneous},
    }


# ---------------------------------------------------------------- commands


def cmd_continuous(args, st):
    _check_phi(args.phi)
    history, stats, _ = _load(args, st)
    cw = st.run("solve", solve_continuous, stats, args.phi)
    out = {
        "command": "optimize continuous",
        "version": __version__,
        "inputs": _inputs(args, history.tickers),
        "phi": args.phi,
        "weights": cw.weights.tolist(),
        "utility": utility_continuous(cw.weights, stats, args.phi),
        "iterations": cw.iterations,
        "residual": cw.residual,
        "point": _point(cw.weights, stats),
    }
    if args.budget is not None:
        r = round_to_lots(cw, stats, args.budget)
        out["rounding"] = {"budget": r.budget, "lots": r.lots.tolist(), "n_tot": r.n_tot,
                           "spent": r.spent, "violation": r.violation,
                           "budget_feasible": r.violation <= 1e-6}
    return out, {}, 0


def cmd_discrete(args, st):
    _check_phi(args.phi)
    if args.ntot is not None and args.ntot < 1:
        raise InputError("--ntot must be a positive integer")
    history, stats, esg = _load(args, st)
    cap = _esg_cap(args, esg)
    problem, result, calibration = _solve_problem(args, stats, {"phi": args.phi, "esg_cap": cap}, st)
    out = {
        "command": "optimize discrete",
        "version": __version__,
        "inputs": _inputs(args, history.tickers),
        "problem": _problem_dict(problem, args),
        "result": result.to_dict(),
        **_discrete_summary(problem, result, stats, cap),
    }
    if calibration is not None:
        out["calibration"] = calibration
    if args.compare_rounding:
        out["comparison"] = st.run("compare", _compare_rounding, args, stats, problem, result)
    extra = {"penalty_weights": result.extras.get("penalty_weights"), "sampler": result.config}
    if not result.feasible:
        logger.error("no feasible allocation found")
        return out, extra, EXIT_INFEASIBLE
    return out, extra, 0


def _compare_rounding(args, stats, problem, result):
    if args.budget is None:
        raise InputError("--compare-rounding needs --budget")
    cw = solve_continuous(stats, args.phi)
    r = round_to_lots(cw, stats, args.budget)
    env = _frontier_env(args, stats)
    base = {"lots": r.lots.tolist(), "n_tot": r.n_tot, "spent": r.spent, "violation": r.violation,
            "budget_feasible": r.violation <= 1e-6}
    if r.n_tot >= 1:
        at_n = problem.with_n_tot(r.n_tot)
        w = r.lots / r.n_tot
        base["utility"] = utility_discrete(r.lots, at_n)
        base["point"] = _point(w, stats)
        base["frontier_gap"] = frontier_gap(portfolio_point(w, stats), env)
    w = result.best / problem.n_tot
    return {
        "continuous_weights": cw.weights.tolist(),
        "rounded": base,
        "discrete_frontier_gap": frontier_gap(portfolio_point(w, stats), env),
        "envelope": {"samples": args.samples, "bins": args.bins, "seed": args.cloud_seed},
    }


def cmd_frontier(args, st):
    history, stats, _ = _load(args, st)
    if args.samples < 1:
        raise InputError("--samples must be >= 1")
    if args.mode == "discrete" and (args.ntot is None or args.ntot < 1):
        raise InputError("--mode discrete needs --ntot >= 1")
    cloud = st.run("sample", sample_cloud, stats, args.samples, mode=args.mode, n_tot=args.ntot,
                   seed=args.cloud_seed)
    env = envelope(cloud, n_bins=args.bins)
    marks = []
    for path in args.mark:
        w = _weights_from_result(path, history.tickers)
        pt = portfolio_point(w, stats)
        marks.append((path, pt.volatility, pt.expected_return, frontier_gap(pt, env)))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_cloud_csv(cloud, outdir / "cloud.csv", history.tickers)
    write_envelope_csv(env, outdir / "envelope.csv")
    files = ["cloud.csv", "envelope.csv"]
    if marks:
        with open(outdir / "marks.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["source", "volatility", "return", "frontier_gap"])
            for row in marks:
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        files.append("marks.csv")
    return None, {"files": files, "cloud_rows": len(cloud), "envelope_rows": len(env)}, 0


def _weights_from_result(path, tickers):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not JSON ({exc})") from None
    if "weights" not in data:
        raise InputError(f"{path}: no portfolio weights")
    if list(data.get("inputs", {}).get("tickers", tickers)) != list(tickers):
        raise InputError(f"{path}: tickers do not match the price data")
    return np.asarray(data["weights"], dtype=float)


SWEEP_COLUMNS = ["value", "n_tot", "feasible", "spent", "d_esg", "utility", "volatility", "return",
                 "frontier_gap", "dist_continuous", "dist_min_variance"]


def cmd_sweep(args, st):
    values = _floats(args.values)
    if not values:
        raise InputError("empty --values list")
    if args.axis != "phi":
        _check_phi(args.phi)
    if args.axis == "ntot" and args.calibrate:
        raise InputError("--calibrate conflicts with --axis ntot")
    history, stats, esg = _load(args, st)
    env = st.run("frontier", _frontier_env, args, stats)
    x_min = st.run("continuous", solve_continuous, stats, MIN_VARIANCE_PHI).weights
    continuous = {}
    rows = []
    extra = {"points": []}
    for v in values:
        phi = v if args.axis == "phi" else args.phi
        _check_phi(phi)
        kw = {"phi": phi, "esg_cap": _esg_cap(args, esg, v if args.axis == "esg-distance" else None)}
        if args.axis == "ntot":
            if v != int(v) or v < 1:
                raise InputError(f"N_tot values must be positive integers, got {v}")
            kw["n_tot"] = int(v)
        if phi not in continuous:
            continuous[phi] = st.run("continuous", solve_continuous, stats, phi).weights
        try:
            problem, result, _ = _solve_problem(args, stats, kw, st)
        except InfeasibleError as exc:
            logger.warning("value %s: %s", v, exc)
            rows.append([repr(v), "", "False"] + [""] * (len(SWEEP_COLUMNS) - 3))
            continue
        s = _discrete_summary(problem, result, stats, kw["esg_cap"])
        w = np.asarray(s["weights"])
        pt = portfolio_point(w, stats)
        rows.append([repr(v), str(problem.n_tot), str(result.feasible),
                     "" if s["spent"] is None else repr(s["spent"]),
                     "" if s["esg_distance"] is None else repr(s["esg_distance"]),
                     repr(result.utility), repr(pt.volatility), repr(pt.expected_return),
                     repr(frontier_gap(pt, env)),
                     repr(float(np.linalg.norm(w - continuous[phi]))),
                     repr(float(np.linalg.norm(w - x_min)))])
        extra["points"].append({"value": v, "penalty_weights": result.extras.get("penalty_weights")})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    writer.writerows(rows)
    return buf.getvalue(), extra, 0


def cmd_verify(args, st):
    try:
        data = json.loads(Path(args.result).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"no such file: {args.result}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.result}: not JSON ({exc})") from None
    report = verify_result(data)
    code = EXIT_DISCREPANCY if report["discrepancies"] else 0
    return report, {}, code


def verify_result(data: dict) -> dict:
    """Recompute the figures of a result document from its raw input files."""
    inp = data.get("inputs")
    if not inp:
        raise InputError("result has no inputs section")
    history = load_prices(inp["prices"], inp["tickers"])
    stats = estimate_stats(history, inp["periods_per_year"])
    checks = []

    def check(name, stored, value):
        if stored is None and value is None:
            return
        diff = abs(float(stored) - float(value)) if stored is not None and value is not None else float("inf")
        checks.append({"quantity": name, "stored": stored, "recomputed": value, "abs_diff": diff})

    command = data.get("command")
    if command == "optimize continuous":
        w = np.asarray(data["weights"], dtype=float)
        check("simplex_sum", 1.0, float(w.sum()))
        check("min_weight", max(0.0, float(w.min())), float(w.min()))
        check("utility", data["utility"], utility_continuous(w, stats, data["phi"]))
        pt = portfolio_point(w, stats)
        check("volatility", data["point"]["volatility"], pt.volatility)
        check("return", data["point"]["return"], pt.expected_return)
        if "rounding" in data:
            lots = np.asarray(data["rounding"]["lots"], dtype=np.int64)
            check("spent", data["rounding"]["spent"], float(lots @ stats.prices))
    elif command == "optimize discrete":
        p = data["problem"]
        esg = load_esg(inp["esg"], inp["tickers"]) if inp.get("esg") else None
        cap = None
        if p["esg_cap"] is not None:
            c = p["esg_cap"]
            cap = EsgCap(c["max_distance"], esg, order=c["order"], heterogeneous=c["heterogeneous"])
        problem = DiscreteProblem(stats, p["phi"], p["n_tot"], budget=p["budget"], esg_cap=cap,
                                  rescale=p["rescale_phi"])
        res = data["result"]
        lots = np.asarray(res["lots"], dtype=np.int64)
        rep = check_feasible(lots, problem)
        check("lot_sum_residual", 0, rep.lot_sum_residual)
        check("utility", res["utility"], utility_discrete(lots, problem))
        check("feasible", float(res["feasible"]), float(rep.feasible))
        if rep.budget_slack is not None:
            check("budget_slack", res["residuals"]["budget_slack"], rep.budget_slack)
            check("spent", data["spent"], float(lots @ stats.prices))
        if cap is not None:
            check("esg_distance", data["esg_distance"], rep.esg_distance)
            check("esg_slack", res["residuals"]["esg_slack"], rep.esg_slack)
        pt = portfolio_point(lots / problem.n_tot, stats)
        check("volatility", data["point"]["volatility"], pt.volatility)
        check("return", data["point"]["return"], pt.expected_return)
    else:
        raise InputError(f"cannot verify a result of kind {command!r}")
    bad = [c["quantity"] for c in checks if not c["abs_diff"] <= VERIFY_TOL]
    return {"command": "verify", "tolerance": VERIFY_TOL, "checks": checks, "discrepancies": bad}


def cmd_synth(args, st):
    if args.k < 1 or args.T < 3:
        raise InputError("synth needs --k >= 1 and --T >= 3")
    history, esg = synthesize_market(args.seed, args.k, T=args.T)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_prices(history, outdir / "prices.csv")
    write_esg(esg, outdir / "esg.csv")
    return None, {"files": ["prices.csv", "esg.csv"]}, 0


# ---------------------------------------------------------------- entry point

# Flags describing where output goes; they are not replayed from a manifest.
_UNREPLAYED = {"--out", "--manifest", "--from-manifest"}


def _replayable(argv):
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        name = a.split("=", 1)[0]
        if name in _UNREPLAYED:
            skip = "=" not in a
            continue
        out.append(a)
    return out


def _expand_manifest(argv):
    if "--from-manifest" not in [a.split("=", 1)[0] for a in argv]:
        return argv
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--from-manifest")
    ns, rest = pre.parse_known_args(argv)
    try:
        manifest = json.loads(Path(ns.from_manifest).read_text(encoding="utf-8"))
        recorded = list(manifest["argv"])
    except FileNotFoundError:
        raise InputError(f"no such file: {ns.from_manifest}") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{ns.from_manifest}: not a manifest ({exc})") from None
    # positional command words come first, extra flags after so they win
    return recorded + rest


def _manifest_path(args):
    if getattr(args, "manifest", None):
        return Path(args.manifest)
    out = getattr(args, "out", None)
    if out is None:
        return None
    out = Path(out)
    if args.command in ("frontier", "synth"):
        return out / "manifest.json"
    return out.with_name(out.name + ".manifest.json")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _expand_manifest(argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return EXIT_INPUT

    started = datetime.now(timezone.utc)
    st = _Stages()
    try:
        payload, extra, code = args.func(args, st)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OracleGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except DmptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    if payload is not None:
        text = payload if isinstance(payload, str) else dumps(payload)
        t0 = time.perf_counter()
        if getattr(args, "out", None):
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        st.times["write"] = time.perf_counter() - t0

    if args.command != "verify":
        config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
        manifest = {
            "command": args.command if args.command != "optimize" else f"optimize {args.mode}",
            "version": __version__,
            "argv": _replayable(argv),
            "config": config,
            "interpretation": INTERPRETATION,
            "threads": thread_count(),
            "started_at": started.isoformat(),
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "stage_seconds": st.times,
            "exit_code": code,
            **extra,
        }
        path = _manifest_path(args)
        if path is None:
            sys.stderr.write(dumps(manifest))
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(dumps(manifest), encoding="utf-8")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
