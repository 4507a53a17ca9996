"""Command-line experiment runner.

Subcommands: ``analyze`` (closed-form views), ``simulate`` (Monte-Carlo
batches), ``fit`` (power-law fit of a frequency CSV), ``gaps`` (geometric
gap check of a trace CSV), ``privacy`` (obfuscation set) and ``gen-data``
(synthetic datasets). Tables go to stdout or ``--out`` as CSV with a
``# params:`` comment line; ``--plot`` also writes a figure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import (aggregation_gain, duty_cycle_from_frame, expected_frame_bits, frame_pmf,
                        halt_probability, p2_expected_bits, pomi_expected_bits, pomi_expected_nodes,
                        round_half_up, tw_distribution)
from .channel import outage_probability
from .dataset import (load_frequency_csv, load_trace_csv, synthetic_frequency_table, synthetic_trace,
                      write_frequency_csv, write_trace_csv)
from .errors import BlockAggError, ConfigError
from .model import REFERENCE_FIT, AccountModel, active_set, fit_broken_power_law, geometric_gap_comparison
from .params import DEFAULT_PARAMS, SystemParams, db_to_linear
from .privacy import build_obfuscation_set
from .sim import SimConfig, gain_empirical, pool_reports, pomi_size_experiment, run, run_pair

DEFAULT_SEED = 7


# -- flag parsing helpers ------------------------------------------------------

def parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def parse_int_list(text: str) -> list[int]:
    """``3``, ``1,4,9`` or an inclusive range ``a..b`` (mixable: ``1..3,7``)."""
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if ".." in part:
                lo, hi = (int(v) for v in part.split("..", 1))
                if hi < lo:
                    raise argparse.ArgumentTypeError(f"empty range {part!r}")
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty integer list")
    return out


def select_accounts(spec: str, model: AccountModel, params: SystemParams, T: float, seed: int) -> list[int]:
    """Resolve ``active``, ``active:K``, ``top:K`` or an explicit index list."""
    kind, _, arg = spec.partition(":")
    if kind in ("active", "top"):
        active = active_set(model, T, P_A=params.P_A, lam=params.lam)
        if kind == "top" and not arg:
            raise ConfigError("top:K needs K")
        k = int(arg) if arg else len(active)
        if k < 0:
            raise ConfigError("account count must be non-negative")
        if kind == "top":
            return list(range(1, k + 1))
        if k > len(active):
            raise ConfigError(f"only {len(active)} accounts are active at T={T:g} s, asked for {k}")
        rng = np.random.default_rng(seed)
        return sorted(int(j) for j in rng.choice(active, size=k, replace=False))
    if spec in ("none", "empty"):
        return []
    try:
        return sorted(set(parse_int_list(spec)))
    except argparse.ArgumentTypeError as exc:
        raise ConfigError(f"bad account selector {spec!r}: {exc}") from None


def load_params(args) -> SystemParams:
    params = DEFAULT_PARAMS
    if args.params:
        params = SystemParams.from_file(args.params, params)
    changes = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        changes[key.strip()] = value.strip()
    fields = params.as_dict()
    for key, value in changes.items():
        if key == "snr_db":
            changes[key] = db_to_linear(float(value))
            continue
        if key not in fields:
            raise ConfigError(f"unknown parameter {key!r}")
        changes[key] = int(float(value)) if isinstance(fields[key], int) else float(value)
    if "snr_db" in changes:
        changes["gamma"] = changes.pop("snr_db")
    if args.snr_db is not None:
        changes["gamma"] = db_to_linear(args.snr_db)
    return params.replace(**changes)


# -- output ----------------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else str(float(v))
    return str(v)


def render_csv(rows: list[dict], columns: list[str], comments=()) -> str:
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) for c in columns])
    return buf.getvalue()


def emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def params_comment(params: SystemParams) -> str:
    return f"params: {params.describe()}"


# -- analyze -----------------------------------------------------------------------

def _reference_T(args, params):
    return args.active_T if args.active_T else max(args.T) if args.T else params.T


def view_gain(args, params, model):
    grid = args.T or [60.0, 180.0, 600.0, 1800.0]
    ref = args.active_T or max(grid)
    accounts = select_accounts(args.accounts, model, params, ref, args.seed)
    rows = []
    for T in grid:
        p = params.replace(T=T)
        mean_f = expected_frame_bits(p, model, accounts)
        rows.append({"T": T, "accounts": len(accounts), "mean_frame_bits": mean_f,
                     "p2_bits_per_block": p2_expected_bits(p, model, accounts),
                     "mean_blocks": p.lam * T, "gain": aggregation_gain(p, model, accounts)})
    cols = ["T", "accounts", "mean_blocks", "mean_frame_bits", "p2_bits_per_block", "gain"]
    plot = dict(x="T", ys=["gain"], xlabel="T [s]", ylabel="aggregation gain", logx=True)
    return rows, cols, [f"accounts: {_fmt_set(accounts)} (selected at T={ref:g})"], plot


def _fmt_set(accounts):
    return " ".join(map(str, accounts)) if accounts else "(none)"


def view_duty(args, params, model):
    accounts = select_accounts(args.accounts, model, params, _reference_T(args, params), args.seed)
    if args.sweep == "none":
        p = params.replace(T=args.T[0]) if args.T else params
        duty = duty_cycle_from_frame(p, frame_pmf(p, model, accounts))
        rows = [{"T": p.T, "snr_db": p.snr_db, "R": p.R, "p_out": outage_probability(p),
                 "duty_cycle": duty}]
        return rows, ["T", "snr_db", "R", "p_out", "duty_cycle"], [f"accounts: {_fmt_set(accounts)}"], None
    if len(args.T or []) > 1:
        raise ConfigError("duty sweeps take a single --T")
    base = params.replace(T=args.T[0]) if args.T else params
    if args.sweep == "snr":
        lo, hi = args.from_db, args.to_db
        xs = np.linspace(lo, hi, args.points)
        points = [("snr_db", float(x), base.replace(gamma=db_to_linear(float(x)))) for x in xs]
    else:
        lo, hi = args.from_rate, args.to_rate
        if not 0 < lo < hi:
            raise ConfigError("need 0 < --from-rate < --to-rate")
        xs = np.geomspace(lo, hi, args.points)
        points = [("R", float(x), base.replace(R=float(x))) for x in xs]
    frame = frame_pmf(base, model, accounts)
    rows = []
    for name, x, p in points:
        halt = halt_probability(p, frame)
        valid = halt <= args.max_halt
        if args.strict and not valid:
            duty_cycle_from_frame(p, frame, args.max_halt)
        rows.append({name: x, "p_out": outage_probability(p), "halt_probability": halt,
                     "valid": valid, "duty_cycle": duty_cycle_from_frame(p, frame, None)})
    x = points[0][0]
    plot = dict(x=x, ys=["duty_cycle"], xlabel="SNR [dB]" if x == "snr_db" else "R [bit/s]",
                ylabel="duty cycle", logx=x == "R", logy=True)
    return rows, [x, "p_out", "halt_probability", "valid", "duty_cycle"], \
        [f"accounts: {_fmt_set(accounts)}", f"T: {base.T:g}"], plot


def view_frame_pmf(args, params, model):
    p = params.replace(T=args.T[0]) if args.T else params
    accounts = select_accounts(args.accounts, model, p, _reference_T(args, p), args.seed)
    frame = frame_pmf(p, model, accounts)
    pmf = frame.pmf
    cdf = pmf.cdf(pmf.values)
    rows = [{"bits": int(v), "probability": float(q), "cdf": float(c)}
            for v, q, c in zip(pmf.values, pmf.probs, cdf)]
    comments = [f"accounts: {_fmt_set(accounts)}", f"T: {p.T:g}",
                "mean: " + " ".join(f"{k}={v!r}" for k, v in frame.decomposition().items())]
    plot = dict(x="bits", ys=["cdf"], xlabel="frame size [bit]", ylabel="CDF", step=True)
    return rows, ["bits", "probability", "cdf"], comments, plot


def view_tw(args, params, model):
    p = params.replace(T=args.T[0]) if args.T else params
    accounts = select_accounts(args.accounts, model, p, _reference_T(args, p), args.seed)
    tw = tw_distribution(p, frame_pmf(p, model, accounts))
    sf = tw.pmf.sf(tw.pmf.values)
    rows = [{"seconds": float(s), "probability": float(q), "ccdf": float(c)}
            for s, q, c in zip(tw.seconds, tw.pmf.probs, sf)]
    comments = [f"accounts: {_fmt_set(accounts)}", f"T: {p.T:g}",
                f"halt_probability: {tw.halt_probability!r}", f"mean_seconds: {tw.mean()!r}"]
    plot = dict(x="seconds", ys=["ccdf"], xlabel="T_w [s]", ylabel="P(T_w > t)", step=True, logy=True)
    return rows, ["seconds", "probability", "ccdf"], comments, plot


def view_pomi(args, params, model):
    grid = args.u_grid or list(range(1, 51))
    rows = [{"u": u, "expected_nodes": pomi_expected_nodes(params.L, params.eta, u),
             "expected_bits": pomi_expected_bits(params, u),
             "rounded_bits": int(round_half_up(pomi_expected_bits(params, u)))} for u in grid]
    cols = ["u", "expected_nodes", "expected_bits", "rounded_bits"]
    ys = ["expected_nodes"]
    if args.trials:
        cfg = SimConfig(params, model, (), seed=args.seed)
        for row, s in zip(rows, pomi_size_experiment(cfg, grid, args.trials)):
            row.update(empirical_mean_nodes=s.mean_nodes, empirical_var_nodes=s.var_nodes,
                       empirical_wire_bits=s.mean_wire_bits)
        cols += ["empirical_mean_nodes", "empirical_var_nodes", "empirical_wire_bits"]
        ys.append("empirical_mean_nodes")
    plot = dict(x="u", ys=ys, xlabel="updated accounts u", ylabel="proof nodes")
    return rows, cols, [], plot


VIEWS = {"gain": view_gain, "duty": view_duty, "frame-pmf": view_frame_pmf, "tw": view_tw,
         "pomi": view_pomi}


def _plot(plot, rows, path):
    from .plotting import line_plot
    line_plot(rows, path=path, **plot)


def cmd_analyze(args) -> int:
    params = load_params(args)
    model = AccountModel.from_power_law(REFERENCE_FIT, args.M)
    rows, cols, comments, plot = VIEWS[args.view](args, params, model)
    emit(render_csv(rows, cols, [params_comment(params), f"view: {args.view}", *comments]), args.out)
    if args.plot:
        if plot is None:
            raise ConfigError("nothing to plot for a single point")
        _plot(plot, rows, args.plot)
    return 0


# -- simulate ------------------------------------------------------------------------

SIM_COLUMNS = ["T", "seed", "protocol", "blocks", "frames_sent", "retransmissions", "halted_frames",
               "bits_total", "duty_cycle", "mean_delay", "max_airtime", "verified_frames",
               "failed_verifications", "empirical_gain"]
DECOMPOSED = ["bits_overhead_H", "bits_headers", "bits_accounts", "bits_pomi"]


def _sim_job(job):
    cfg, both = job
    return run_pair(cfg) if both else (run(cfg),)


def _report_row(T, r):
    row = {k: getattr(r, k) for k in SIM_COLUMNS if hasattr(r, k) and k != "mean_delay"}
    row.update(T=T, mean_delay=r.mean_delay,
               empirical_gain="" if r.empirical_gain is None else r.empirical_gain)
    row.update({k: getattr(r, k) for k in DECOMPOSED})
    return row


def _rel_gap(a, b):
    return abs(a - b) / abs(b) if b else math.inf


def cmd_simulate(args) -> int:
    params = load_params(args)
    model = AccountModel.from_power_law(REFERENCE_FIT, args.M)
    grid = args.T or [params.T]
    ref = args.active_T or max(grid)
    accounts = select_accounts(args.accounts, model, params, ref, args.seed)
    both = args.protocol == "both"
    jobs = []
    for T in grid:
        p = params.replace(T=T)
        base = SimConfig(p, model, tuple(accounts), horizon=args.horizon * T if args.horizon else None,
                         protocol="aggregation" if both else args.protocol, layout=args.layout,
                         sizing=args.sizing, verify=not args.no_verify,
                         background_updates=args.background)
        jobs.extend(((T, s), (base.replace(seed=s), both)) for s in args.seeds)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sim_job, [j for _, j in jobs], chunksize=4))
    else:
        results = [_sim_job(j) for _, j in jobs]

    rows, summary = [], []
    by_T: dict[float, list] = {}
    for ((T, _), _), reports in zip(jobs, results):
        by_T.setdefault(T, []).append(reports)
        rows.extend(_report_row(T, r) for r in reports)
    for T in grid:
        p = params.replace(T=T)
        entry = {"T": T, "accounts": accounts, "seeds": len(by_T[T])}
        agg_runs = [r for reps in by_T[T] for r in reps if r.protocol == "aggregation"]
        p2_runs = [r for reps in by_T[T] for r in reps if r.protocol == "p2"]
        if agg_runs:
            pooled = pool_reports(agg_runs)
            duty_a = duty_cycle_from_frame(p, frame_pmf(p, model, accounts), None)
            entry.update(duty_empirical=pooled.duty_cycle, duty_analytical=duty_a,
                         duty_rel_gap=_rel_gap(pooled.duty_cycle, duty_a),
                         halted_frames=pooled.halted_frames)
        if p2_runs:
            pooled_p2 = pool_reports(p2_runs)
            entry["p2_bits_per_block_empirical"] = pooled_p2.bits_total / pooled_p2.blocks
            entry["p2_bits_per_block_analytical"] = p2_expected_bits(p, model, accounts)
        if agg_runs and p2_runs:
            g_emp = gain_empirical(pooled, pooled_p2)
            g_ana = aggregation_gain(p, model, accounts)
            entry.update(gain_empirical=g_emp, gain_analytical=g_ana, gap=_rel_gap(g_emp, g_ana))
        entry["failed_verifications"] = sum(r.failed_verifications for reps in by_T[T] for r in reps)
        summary.append(entry)

    cols = SIM_COLUMNS[:8] + (DECOMPOSED if args.decompose else []) + SIM_COLUMNS[8:]
    comments = [params_comment(params), f"accounts: {_fmt_set(accounts)}",
                f"layout: {args.layout} sizing: {args.sizing}"]
    emit(render_csv(rows, cols, comments), args.out)
    text = json.dumps({"params": params.as_dict(), "grid": summary}, indent=2) + "\n"
    if args.summary:
        Path(args.summary).write_text(text, encoding="utf-8")
    elif args.out:
        sys.stdout.write(text)
    if args.plot:
        from .plotting import line_plot
        key = "gain_empirical" if both else "duty_empirical"
        ys = [key, key.replace("empirical", "analytical")]
        line_plot(summary, "T", ys, args.plot, xlabel="T [s]", logx=True)
    return 0


# -- fit, gaps, privacy, gen-data --------------------------------------------------------

def cmd_fit(args) -> int:
    table = load_frequency_csv(args.path)
    fit = fit_broken_power_law(table.frequencies, args.max_breakpoint)
    out = fit.as_dict()
    out["total_blocks"] = table.total_blocks
    sys.stdout.write(json.dumps(out, indent=2) + "\n")
    if args.plot:
        from .plotting import line_plot
        model = AccountModel.from_power_law(fit.params, len(table))
        rows = [{"rank": r, "observed": f, "fitted": q}
                for r, f, q in zip(table.ranks.tolist(), table.frequencies.tolist(),
                                   model.probabilities.tolist()) if f > 0]
        line_plot(rows, "rank", ["observed", "fitted"], args.plot, ylabel="relative frequency",
                  logx=True, logy=True)
    return 0


def cmd_gaps(args) -> int:
    traces = load_trace_csv(args.path)
    span = args.blocks or (max(int(b[-1]) for b in traces.values()) -
                           min(int(b[0]) for b in traces.values()) + 1)
    rows = []
    for j in sorted(traces):
        b = traces[j]
        if b.size < 2:
            continue
        p = min(1.0, b.size / span)
        cmp = geometric_gap_comparison(b, p)
        rows.append({"account": j, "events": int(b.size), "p": p, "ks_distance": cmp.distance})
    emit(render_csv(rows, ["account", "events", "p", "ks_distance"], [f"blocks: {span}"]), args.out)
    return 0


def cmd_privacy(args) -> int:
    params = load_params(args)
    if args.T:
        params = params.replace(T=args.T)
    model = AccountModel.from_power_law(REFERENCE_FIT, args.M)
    budget = math.inf if args.budget_bits is None else args.budget_bits
    plan = build_obfuscation_set(args.secret, model, params, budget, np.random.default_rng(args.seed))
    sys.stdout.write(json.dumps(plan.as_dict(), indent=2) + "\n")
    return 0


def cmd_gen_data(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.kind == "freq":
        table = synthetic_frequency_table(REFERENCE_FIT, args.n, args.total_blocks, args.noise, rng)
        write_frequency_csv(table, args.path)
    else:
        model = AccountModel.from_power_law(REFERENCE_FIT, max(args.accounts))
        traces = synthetic_trace(model.subset(args.accounts), args.blocks, rng)
        write_trace_csv({j: traces[i + 1] for i, j in enumerate(args.accounts)}, args.path)
    return 0


# -- parser --------------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--params", metavar="FILE", help="key=value file overriding the default parameters")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one parameter")
    p.add_argument("--snr-db", type=float, help="mean SNR in dB")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--M", type=int, default=10_000, help="modeled accounts (default 10000)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockagg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="closed-form views")
    _common(a)
    a.add_argument("--view", choices=sorted(VIEWS), default="gain")
    a.add_argument("--T", type=parse_floats, help="aggregation period(s) in s, comma-separated")
    a.add_argument("--accounts", default="active:20")
    a.add_argument("--active-T", type=float, help="period used to pick active accounts (default: largest --T)")
    a.add_argument("--sweep", choices=["none", "snr", "rate"], default="none")
    a.add_argument("--from-db", type=float, default=0.0)
    a.add_argument("--to-db", type=float, default=60.0)
    a.add_argument("--from-rate", type=float, default=2e4)
    a.add_argument("--to-rate", type=float, default=2e6)
    a.add_argument("--points", type=int, default=31)
    a.add_argument("--max-halt", type=float, default=1e-3)
    a.add_argument("--strict", action="store_true", help="fail on sweep points above --max-halt")
    a.add_argument("--u-grid", type=parse_int_list)
    a.add_argument("--trials", type=int, default=0, help="also sample proofs in a populated trie")
    a.add_argument("--out")
    a.add_argument("--plot", metavar="PATH")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="Monte-Carlo runs")
    _common(s)
    s.add_argument("--protocol", choices=["aggregation", "p2", "both"], default="both")
    s.add_argument("--T", type=parse_floats)
    s.add_argument("--accounts", default="active:20")
    s.add_argument("--active-T", type=float)
    s.add_argument("--seeds", type=parse_int_list, default=[1])
    s.add_argument("--horizon", type=float, help="simulated periods per run (default 10)")
    s.add_argument("--layout", choices=["full", "hashed"], default="full")
    s.add_argument("--sizing", choices=["model", "wire"], default="model")
    s.add_argument("--background", action="store_true", help="also update unobserved accounts")
    s.add_argument("--no-verify", action="store_true", help="skip proof verification")
    s.add_argument("--decompose", action="store_true", help="add the four bit components")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", help="batch CSV path (summary JSON then goes to stdout)")
    s.add_argument("--summary", help="summary JSON path")
    s.add_argument("--plot", metavar="PATH")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit the broken power law to a frequency CSV")
    f.add_argument("path")
    f.add_argument("--max-breakpoint", type=int, default=500)
    f.add_argument("--plot", metavar="PATH")
    f.set_defaults(func=cmd_fit)

    g = sub.add_parser("gaps", help="geometric check of inter-update gaps in a trace CSV")
    g.add_argument("path")
    g.add_argument("--blocks", type=int, help="blocks covered by the trace (default: observed span)")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gaps)

    pv = sub.add_parser("privacy", help="obfuscation set for one secret account")
    _common(pv)
    pv.add_argument("--secret", type=int, required=True)
    pv.add_argument("--budget-bits", type=float, help="bits per period (default: unlimited)")
    pv.add_argument("--T", type=float)
    pv.set_defaults(func=cmd_privacy)

    d = sub.add_parser("gen-data", help="write a synthetic dataset")
    d.add_argument("kind", choices=["freq", "trace"])
    d.add_argument("path")
    d.add_argument("--n", type=int, default=10_000, help="ranks in a frequency table")
    d.add_argument("--total-blocks", type=int, default=1_300_000)
    d.add_argument("--blocks", type=int, default=100_000, help="blocks in a trace")
    d.add_argument("--noise", type=float, default=0.0, help="log-normal sigma on frequencies")
    d.add_argument("--accounts", type=parse_int_list, default=list(range(1, 21)))
    d.add_argument("--seed", type=int, default=DEFAULT_SEED)
    d.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except (BlockAggError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
