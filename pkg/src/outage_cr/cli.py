"""Command-line front end.

Exit codes: 0 ok, 2 usage or invalid parameter, 3 unreadable or malformed
input, 4 acceptance criterion failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_USAGE, EXIT_INPUT, EXIT_CRITERION = 2, 3, 4
_START = [time.perf_counter()]


class InputError(Exception):
    """Unreadable or malformed input file."""


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _matrix(text: str) -> np.ndarray:
    """'a,b;c,d' with complex entries allowed (Python syntax, e.g. 1+2j)."""
    try:
        rows = [[complex(v.strip().replace(" ", "")) for v in r.split(",")] for r in text.split(";")]
        return np.array(rows)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad matrix {text!r}; use 'a,b;c,d'") from exc


# ---------------------------------------------------------------------------
# output


class Output:
    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.params = {k: v for k, v in sorted(vars(args).items())
                       if k not in ("func", "out", "config", "threads") and v is not None}

    def meta(self) -> dict:
        return {"program": "outage-cr", "version": __version__, "command": self.command,
                "seed": self.args.seed, "parameters": _jsonable(self.params)}

    def _write(self, text: str, path: Path | None):
        if path is None:
            sys.stdout.write(text)
        else:
            path.write_text(text)

    def table(self, rows: list[dict], summary: dict | None = None):
        fmt = self.args.format
        out = Path(self.args.out) if self.args.out else None
        if fmt == "json":
            doc = {"meta": self.meta(), "rows": _jsonable(rows)}
            if summary is not None:
                doc["summary"] = _jsonable(summary)
            self._write(json.dumps(doc, indent=2, sort_keys=True) + "\n", out)
        else:
            buf = io.StringIO()
            buf.write(f"# {json.dumps(self.meta(), sort_keys=True)}\n")
            if rows:
                w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
                w.writeheader()
                for r in rows:
                    w.writerow({k: _cell(v) for k, v in r.items()})
            self._write(buf.getvalue(), out)
            if summary is not None:
                text = json.dumps({"meta": self.meta(), "summary": _jsonable(summary)}, indent=2,
                                  sort_keys=True) + "\n"
                if out is None:
                    sys.stdout.write(text)
                else:
                    out.with_suffix(".summary.json").write_text(text)
        wall = time.perf_counter() - _START[0]
        if out is not None:
            # wall time lives in a sidecar so the main artifact stays byte-identical
            side = dict(self.meta(), wall_time_s=wall)
            out.with_suffix(".meta.json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
        else:
            print(f"wall time {wall:.2f}s", file=sys.stderr)


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        flat = np.ravel(v)
        if np.iscomplexobj(flat):
            return " ".join(repr(complex(x)) for x in flat)
        return " ".join(repr(float(x)) for x in flat)
    return v


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, complex):
        return {"re": v.real, "im": v.imag}
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, Path):
        return str(v)
    return v


# ---------------------------------------------------------------------------
# builders shared by subcommands


def _ensemble(args):
    from .channel import Empirical, PointMass, RayleighIid, load_empirical_csv

    kind = args.ensemble
    if kind == "rayleigh":
        return RayleighIid(args.n_rx, args.n_tx, args.scale)
    if kind == "pointmass":
        if args.state is None:
            raise ValueError("--ensemble pointmass needs --state")
        return PointMass(_matrix(args.state) if isinstance(args.state, str) else np.asarray(args.state))
    if kind == "csv":
        if not args.ensemble_csv:
            raise ValueError("--ensemble csv needs --ensemble-csv")
        try:
            return load_empirical_csv(args.ensemble_csv)
        except OSError as exc:
            raise InputError(f"cannot read {args.ensemble_csv}: {exc.strerror}") from exc
        except ValueError as exc:
            raise InputError(str(exc)) from exc
    raise ValueError(f"unknown ensemble {kind!r}")


def _source(args):
    from .cr import JointSource, dsbs, load_source_csv

    if getattr(args, "source", None):
        try:
            return load_source_csv(args.source)
        except OSError as exc:
            raise InputError(f"cannot read {args.source}: {exc.strerror}") from exc
        except ValueError as exc:
            raise InputError(str(exc)) from exc
    if getattr(args, "dsbs", None) is not None:
        return dsbs(args.dsbs)
    raise ValueError("give --source CSV or --dsbs p")


def _check_eta(eta):
    if not 0.0 <= eta < 1.0:
        raise ValueError(f"eta must lie in [0, 1), got {eta}")


def _check_power(p):
    if p <= 0:
        raise ValueError(f"power must be positive, got {p}")


def _root(args, label):
    from .rng import derive

    return derive(args.seed, args.command, label)


# ---------------------------------------------------------------------------
# subcommands


def cmd_outage_capacity(args):
    from .outage import OutageSpec, capacity_sweep

    etas, powers = _floats(args.eta), _floats(args.power)
    for e in etas:
        _check_eta(e)
    for p in powers:
        _check_power(p)
    spec = OutageSpec(eta=etas[0], power=powers[0], sigma_sq=args.sigma_sq,
                      n_state_samples=args.samples, restarts=args.restarts)
    res = capacity_sweep(_ensemble(args), spec, etas, powers, _root(args, "sweep"), threads=args.threads)
    rows = []
    for r in res:
        est = r["estimate"]
        rows.append({"eta": r["eta"], "power": r["power"], "capacity_bits": est.value_bits,
                     "lower_bracket": est.lower_bracket, "upper_bracket": est.upper_bracket,
                     "ci_half_width": est.diagnostics["ci_half_width"],
                     "samples": est.diagnostics["samples"], "seed": args.seed})
    Output(args, "outage-capacity").table(rows)


def cmd_siso_capacity(args):
    from .outage import OutageSpec, eta_outage_capacity, rayleigh_gain_quantile, siso_outage_capacity

    _check_eta(args.eta)
    _check_power(args.power)
    args.n_rx = args.n_tx = 1
    ens = _ensemble(args)
    r_q, r_pipe = _root(args, "quantile"), _root(args, "pipeline")
    if args.ensemble == "rayleigh":
        closed = siso_outage_capacity(args.eta, args.power, args.sigma_sq,
                                      gain_quantile=lambda e: rayleigh_gain_quantile(e, args.scale))
    else:
        closed = siso_outage_capacity(args.eta, args.power, args.sigma_sq, ensemble=ens,
                                      n_samples=args.samples, rng=r_q)
    empirical = siso_outage_capacity(args.eta, args.power, args.sigma_sq, ensemble=ens,
                                     n_samples=args.samples, rng=r_q)
    spec = OutageSpec(eta=args.eta, power=args.power, sigma_sq=args.sigma_sq, n_state_samples=args.samples)
    pipe = eta_outage_capacity(ens, spec, r_pipe, threads=args.threads)
    Output(args, "siso-capacity").table([{
        "eta": args.eta, "power": args.power, "sigma_sq": args.sigma_sq,
        "capacity_bits": closed, "empirical_quantile_bits": empirical,
        "pipeline_bits": pipe.value_bits, "samples": args.samples, "seed": args.seed}])


def _cr_options(args):
    from .cr import CrOptions

    return CrOptions(u_card=args.u_card, seed=args.seed, threads=args.threads)


def cmd_cr_capacity(args):
    from .cr import cr_capacity, cr_capacity_bruteforce

    if args.c is None:
        raise ValueError("cr-capacity needs --c")
    if args.c < 0:
        raise ValueError("--c must be nonnegative")
    src = _source(args)
    pt = cr_capacity(src, args.c, _cr_options(args))
    row = {"c": args.c, "cr_rate": pt.cr_rate, "iuy": pt.iuy, "h_x": src.h_x,
           "h_x_given_y": src.h_x_given_y, "u_card": pt.channel.u_card, "channel": pt.channel.rows}
    if args.bruteforce:
        bf = cr_capacity_bruteforce(src, args.c, args.bruteforce, u_card=args.u_card)
        row["bruteforce_rate"] = bf.cr_rate
    Output(args, "cr-capacity").table([row])


def cmd_cr_curve(args):
    from .cr import cr_curve

    src = _source(args)
    if args.c_grid:
        grid = _floats(args.c_grid)
    else:
        top = args.c_max if args.c_max is not None else src.h_x_given_y
        grid = list(np.linspace(0.0, top, args.points))
    pts = cr_curve(src, grid, _cr_options(args))
    rows = [{"c": p.comm_rate_c, "cr_rate": p.cr_rate, "iuy": p.iuy, "channel": p.channel.rows}
            for p in pts]
    Output(args, "cr-curve").table(rows)


def cmd_simulate_protocol(args):
    from .channel import RayleighIid
    from .cr import TestChannel
    from .outage import OutageSpec
    from .protocol import GenieBitPipe, ProtocolConfig, run_protocol

    src = _source(args)
    _check_power(args.power)
    q = args.aux_q
    if src.pmf.shape[0] != 2 and args.aux_q is not None:
        raise ValueError("--aux-q applies to binary sources only")
    nx = src.pmf.shape[0]
    rows = np.eye(nx) if q is None else np.array([[1 - q, q], [q, 1 - q]])
    aux = TestChannel(rows)
    transport = GenieBitPipe(force_failure=args.transport == "forced-failure")
    cfg = ProtocolConfig(args.n, args.mu, args.typ_delta, args.alpha, transport=transport,
                         trials=args.trials, n_states=args.states,
                         decoder_typicality=not args.no_decoder_typicality)
    ens = RayleighIid(1, 1, args.scale) if args.ensemble == "rayleigh" else _ensemble(args)
    spec = OutageSpec(eta=0.1, power=args.power, sigma_sq=args.sigma_sq)
    out = run_protocol(src, aux, cfg, ens, spec, _root(args, "protocol"), threads=args.threads)
    table = [{"state": i, "state_entries": out.states[i].ravel(), "rate_bits": float(out.state_rates[i]),
              "disagreement": float(out.per_state_disagreement[i])}
             for i in range(len(out.states))]
    summary = {"outage_fraction": out.outage_fraction, "entropy_rate": out.entropy_rate_estimate,
               "k_alphabet_size": out.k_alphabet_size, "n1": out.n1, "n2": out.n2,
               "cardinality_ok": out.cardinality_ok,
               "median_disagreement": float(np.median(out.per_state_disagreement)),
               "encoder_hit_rate": out.encoder_hit_rate}
    Output(args, "simulate-protocol").table(table, summary)


def cmd_compound_verify(args):
    from .compound import verify_bounds

    rows = verify_bounds(_root(args, "bounds"), trials=args.trials, ratio_trials=args.ratio_trials)
    table = [{"bound_name": r["bound_name"], "parameters": json.dumps(r["parameters"], sort_keys=True),
              "analytic_value": r["analytic_value"], "empirical_value": r["empirical_value"],
              "trials": r["trials"], "ci_half_width": r["ci_half_width"], "units": r["units"],
              "pass": "pass" if r["passed"] else "fail"} for r in rows]
    Output(args, "compound-verify").table(table)
    return 0 if all(r["passed"] for r in rows) else EXIT_CRITERION


def cmd_id_demo(args):
    from .channel import RayleighIid
    from .cr import TestChannel, dsbs
    from .identification import TwoStageTransport, estimate_id_errors, second_stage_size
    from .outage import OutageSpec
    from .protocol import ProtocolConfig

    src = dsbs(args.dsbs if args.dsbs is not None else 0.05)
    q = args.aux_q
    aux = TestChannel([[1 - q, q], [q, 1 - q]])
    length, m2 = second_stage_size(args.n, args.rate_delta)
    m2 = args.m2 or m2
    cfg = ProtocolConfig(args.n, args.mu, args.typ_delta, 0.1, trials=args.trials, n_states=args.states)
    out = estimate_id_errors(src, aux, cfg, RayleighIid(1, 1, 1.0), OutageSpec(eta=0.1, power=args.power),
                             args.identities, m2, _root(args, "id"),
                             transport=TwoStageTransport(noiseless=not args.noisy),
                             lambda1=args.lambda1, lambda2=args.lambda2, threads=args.threads)
    summary = {"identity_count": out.identity_count, "second_stage_messages": out.second_stage_messages,
               "second_stage_length": out.second_stage_length,
               "measured_lambda1": out.measured_lambda1, "measured_lambda2": out.measured_lambda2,
               "lambda_sum_below_one": out.lambda_sum_ok, "outage_e1": out.outage_e1,
               "outage_e2": out.outage_e2, "e1_per_state": out.e1_per_state,
               "e2_per_state": out.e2_per_state}
    args.format = "json"
    Output(args, "id-demo").table([], summary)


def cmd_bounds(args):
    from . import compound as c

    lemma = args.lemma
    if lemma == "chernoff":
        val = c.chernoff_info_density_bound(args.n, args.n_rx, args.delta)
        prm = {"n": args.n, "n_rx": args.n_rx, "delta": args.delta}
    elif lemma == "power-overflow":
        val = c.power_overflow_bound(args.n, args.m, args.delta)
        prm = {"n": args.n, "m": args.m, "delta": args.delta}
    elif lemma == "likelihood-ratio":
        rho = args.rho if args.rho is not None else c.output_power_threshold(args.a, args.power, args.n_rx, args.sigma_sq)[0]
        val = 2.0 ** c.likelihood_ratio_exponent(args.dist, args.n, args.power, rho, args.a, args.sigma_sq)
        prm = {"n": args.n, "dist": args.dist, "power": args.power, "rho": rho, "a": args.a}
    elif lemma == "output-power":
        rho, factor = c.output_power_threshold(args.a, args.power, args.n_rx, args.sigma_sq)
        val = factor ** args.n
        prm = {"a": args.a, "power": args.power, "n_rx": args.n_rx, "rho": rho, "factor": factor}
    else:  # feinstein
        val = c.compound_code_bound(args.family_size, args.n, args.rate, args.theta, args.power,
                                    args.n_rx, beta=args.beta)
        prm = {"family_size": args.family_size, "n": args.n, "rate": args.rate, "theta": args.theta,
               "beta": args.beta if args.beta is not None else args.power / 10}
    Output(args, "bounds").table([{"lemma": lemma, "parameters": json.dumps(prm, sort_keys=True),
                                   "value": val}])


def cmd_verify(args):
    from .acceptance import run_suite

    only = {int(k) for k in _floats(args.criteria)} if args.criteria else None
    results = run_suite(args.seed, args.threads, args.alt_threads, only)
    for r in results:
        print(r.line(), file=sys.stderr)
    rows = [{"criterion": r.number, "name": r.name, "passed": r.passed, "summary": r.summary,
             "runtime_s": round(r.runtime_s, 3)} for r in results]
    Output(args, "verify").table(rows)
    return 0 if all(r.passed for r in results) else EXIT_CRITERION


# ---------------------------------------------------------------------------
# parser


def _add_ensemble(p, default="rayleigh"):
    p.add_argument("--ensemble", choices=["rayleigh", "pointmass", "csv"], default=default)
    p.add_argument("--ensemble-csv", help="empirical states CSV")
    p.add_argument("--state", help="point-mass state as 'a,b;c,d'")
    p.add_argument("--n-rx", type=int, default=1)
    p.add_argument("--n-tx", type=int, default=1)
    p.add_argument("--scale", type=float, default=1.0, help="Rayleigh per-entry standard deviation")


def _add_source(p):
    p.add_argument("--source", help="joint pmf CSV with row/column labels")
    p.add_argument("--dsbs", type=float, help="use a doubly symmetric binary source with this crossover")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--format", choices=["csv", "json"], default=None)
    common.add_argument("--config", help="TOML or JSON file of defaults; explicit flags win")

    parser = argparse.ArgumentParser(prog="outage-cr", parents=[common],
                                     description="eta-outage capacity, CR capacity and protocol simulations")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("outage-capacity", parents=[common], help="eta-outage capacity over an (eta, P) grid")
    _add_ensemble(p)
    p.add_argument("--eta", default="0.1", help="comma-separated outage levels")
    p.add_argument("--power", default="1", help="comma-separated power constraints")
    p.add_argument("--sigma-sq", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--restarts", type=int, default=8)
    p.set_defaults(func=cmd_outage_capacity)

    p = sub.add_parser("siso-capacity", parents=[common], help="single-antenna closed form and pipeline")
    _add_ensemble(p)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--power", type=float, default=10.0)
    p.add_argument("--sigma-sq", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=100_000)
    p.set_defaults(func=cmd_siso_capacity)

    p = sub.add_parser("cr-capacity", parents=[common], help="CR capacity at one rate budget")
    _add_source(p)
    p.add_argument("--c", type=float, help="communication rate budget (bits), required")
    p.add_argument("--u-card", type=int)
    p.add_argument("--bruteforce", type=float, metavar="RES", help="also run the grid oracle")
    p.set_defaults(func=cmd_cr_capacity)

    p = sub.add_parser("cr-curve", parents=[common], help="CR capacity along a budget grid")
    _add_source(p)
    p.add_argument("--c-grid", help="comma-separated ascending budgets")
    p.add_argument("--c-max", type=float)
    p.add_argument("--points", type=int, default=11)
    p.add_argument("--u-card", type=int)
    p.set_defaults(func=cmd_cr_curve)

    p = sub.add_parser("simulate-protocol", parents=[common], help="end-to-end CR protocol simulation")
    _add_source(p)
    _add_ensemble(p)
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--mu", type=float, default=0.3)
    p.add_argument("--typ-delta", type=float, default=0.15)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--aux-q", type=float, default=0.02, help="crossover of a binary symmetric aux channel")
    p.add_argument("--transport", choices=["genie", "forced-failure"], default="genie")
    p.add_argument("--no-decoder-typicality", action="store_true")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--states", type=int, default=20)
    p.add_argument("--power", type=float, default=1000.0)
    p.add_argument("--sigma-sq", type=float, default=1.0)
    p.set_defaults(func=cmd_simulate_protocol)

    p = sub.add_parser("compound-verify", parents=[common], help="Monte Carlo check of every bound")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--ratio-trials", type=int, default=1000)
    p.set_defaults(func=cmd_compound_verify)

    p = sub.add_parser("id-demo", parents=[common], help="toy identification via common randomness")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--identities", type=int, default=16)
    p.add_argument("--m2", type=int, help="second-stage message count (default 2^ceil(delta sqrt n))")
    p.add_argument("--rate-delta", type=float, default=0.75)
    p.add_argument("--lambda1", type=float, default=0.25)
    p.add_argument("--lambda2", type=float, default=0.5)
    p.add_argument("--dsbs", type=float)
    p.add_argument("--aux-q", type=float, default=0.02)
    p.add_argument("--mu", type=float, default=0.3)
    p.add_argument("--typ-delta", type=float, default=0.15)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--states", type=int, default=10)
    p.add_argument("--power", type=float, default=1000.0)
    p.add_argument("--noisy", action="store_true", help="genie transports instead of noiseless ones")
    p.set_defaults(func=cmd_id_demo)

    p = sub.add_parser("bounds", parents=[common], help="evaluate one closed-form bound")
    p.add_argument("--lemma", required=True,
                   choices=["chernoff", "power-overflow", "likelihood-ratio", "output-power", "feinstein"])
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--n-rx", type=int, default=1)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--m", type=float, default=1.0)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--power", type=float, default=1.0)
    p.add_argument("--sigma-sq", type=float, default=1.0)
    p.add_argument("--rho", type=float)
    p.add_argument("--dist", type=float, default=0.1)
    p.add_argument("--family-size", type=int, default=1)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    p.add_argument("--criteria", help="comma-separated subset, e.g. 1,2,5")
    p.add_argument("--alt-threads", type=int, default=4, help="thread count for the reproducibility rerun")
    p.set_defaults(func=cmd_verify)
    return parser


def _load_config(path: str) -> dict:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        if path.endswith(".json"):
            data = json.loads(raw)
        else:
            data = tomllib.loads(raw.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise InputError(f"bad config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError(f"config {path} must hold a table of settings")
    return {k.replace("-", "_"): v for k, v in data.items()}


def main(argv=None) -> int:
    _START[0] = time.perf_counter()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            cfg = _load_config(args.config)
            # config values become defaults, so explicit flags still win
            sub = parser._subparsers._group_actions[0].choices[args.command]
            known = {a.dest for a in sub._actions}
            unknown = sorted(set(cfg) - known)
            if unknown:
                raise ValueError(f"unknown config keys: {', '.join(unknown)}")
            for k, v in cfg.items():
                if isinstance(v, list):
                    cfg[k] = ",".join(str(x) for x in v)
            sub.set_defaults(**cfg)
            args = parser.parse_args(argv)
        if args.format is None:
            args.format = "csv"
        code = args.func(args)
        return code or 0
    except InputError as exc:
        print(f"outage-cr: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"outage-cr: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
