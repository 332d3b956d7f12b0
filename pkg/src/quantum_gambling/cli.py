"""Command-line front end: ``qgamble analyze|verify|simulate|serve|connect``.

Exit codes: 0 success, 1 usage error, 2 verification failure, 3 network
failure.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import analysis
from . import quantum as q
from .harness import ExperimentSpec, run_experiment, write_jsonl, write_table
from .protocol import (
    BiasedAlice,
    FalseClaimBob,
    GeneralAlice,
    HonestAlice,
    HonestBob,
    LiarBob,
    NeverVerifyBob,
    Outcome,
    SessionResult,
    play_games,
    serve_games,
    session_monitor,
    write_records,
)
from .transport import DEFAULT_PORT, ChannelClosed, ChannelTimeout, connect, listen

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_NETWORK = 0, 1, 2, 3

ALICE_GRAMMAR = "honest | eps=<x in [-0.5,0.5]> | eps=worst | general-seed=<int>"
BOB_GRAMMAR = "honest | eta=<x in [0,1]> | liar=<p> | false-claim=<p> | never-verify"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be positive: {s!r}")
    return v


def _unit(s: str) -> float:
    v = float(s)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1]: {s!r}")
    return v


def parse_alice(desc: str, R: float):
    if desc == "honest":
        return HonestAlice()
    key, _, val = desc.partition("=")
    try:
        if key == "eps":
            if val == "worst":
                eps, _ = analysis.min_gain_over_eps(R, analysis.eta_tilde(R))
                return BiasedAlice(eps)
            return BiasedAlice(float(val))
        if key == "general-seed":
            seed = int(val)
            prep = q.random_general(np.random.default_rng(seed), ancilla_dim=2)
            return GeneralAlice(prep, label=desc)
    except ValueError as exc:
        raise UsageError(f"bad --alice {desc!r}: {exc}; grammar: {ALICE_GRAMMAR}") from None
    raise UsageError(f"bad --alice {desc!r}; grammar: {ALICE_GRAMMAR}")


def parse_bob(desc: str, R: float):
    eta = analysis.eta_tilde(R)
    if desc == "honest":
        return HonestBob(eta)
    if desc == "never-verify":
        return NeverVerifyBob(0.0)
    key, _, val = desc.partition("=")
    try:
        if key == "eta":
            return HonestBob(float(val))
        if key == "liar":
            return LiarBob(eta, float(val))
        if key == "false-claim":
            return FalseClaimBob(eta, float(val))
    except ValueError as exc:
        raise UsageError(f"bad --bob {desc!r}: {exc}; grammar: {BOB_GRAMMAR}") from None
    raise UsageError(f"bad --bob {desc!r}; grammar: {BOB_GRAMMAR}")


def analyze_rows(R_values) -> list[dict]:
    rows = []
    for R in R_values:
        delta = analysis.delta_closed(R)
        d_approx, e_approx = analysis.asymptotics(R)
        rows.append({
            "R": R,
            "delta": delta,
            "eta_tilde": analysis.eta_tilde(R),
            "delta_approx": d_approx,
            "eta_approx": e_approx,
            "G_B_prot": analysis.honest_play_gain(R),
            "P_D_worst": analysis.worst_case_detection_prob(R),
            "N_advisory": analysis.max_games_advisory(R),
            # only meaningful for R = 1, where Bob's gain is +1 or -1
            "p_win_min": analysis.coin_toss_win_probability(delta) if R == 1 else None,
        })
    return rows


def cmd_analyze(args) -> int:
    write_table(analyze_rows(args.R), sys.stdout, args.format)
    return EXIT_OK


def verify_rows(r_min, r_max, points, tol, perturb_r=None, perturb_by=0.0):
    Rs = np.geomspace(r_min, r_max, points) if points > 1 else np.array([r_min])
    target = None
    if perturb_r is not None:
        target = int(np.argmin(np.abs(np.log(Rs) - math.log(perturb_r))))
    rows = []
    for i, R in enumerate(Rs):
        R = float(R)
        res = analysis.minimax_numeric(R)
        d_closed = analysis.delta_closed(R) + (perturb_by if i == target else 0.0)
        e_closed = analysis.eta_tilde(R)
        dev = max(abs(res.delta - d_closed), abs(res.eta_star - e_closed))
        rows.append({"R": R, "delta_numeric": res.delta, "delta_closed": d_closed,
                     "eta_numeric": res.eta_star, "eta_closed": e_closed,
                     "eps_star": res.eps_star_at_eta_star, "deviation": dev,
                     "status": "pass" if dev <= tol else "FAIL"})
    return rows


def cmd_verify(args) -> int:
    if not args.r_min <= args.r_max or args.points < 1:
        raise UsageError("need r-min <= r-max and points >= 1")
    rows = verify_rows(args.r_min, args.r_max, args.points, args.tol, args.perturb_r, args.perturb_by)
    write_table(rows, sys.stdout, args.format)
    worst = max(rows, key=lambda r: r["deviation"])
    failed = [r for r in rows if r["status"] != "pass"]
    print(f"max deviation {worst['deviation']:.3e} at R={worst['R']:.6g} (tol {args.tol:g})")
    if failed:
        print("FAIL at R=" + ", ".join(f"{r['R']:.6g}" for r in failed))
        return EXIT_VERIFY
    print("PASS")
    return EXIT_OK


def cmd_simulate(args) -> int:
    alice = parse_alice(args.alice, args.R)
    bob = parse_bob(args.bob, args.R)
    spec = ExperimentSpec(args.R, args.games, alice, bob, args.p_err, args.seed, args.parallelism)
    stats = run_experiment(spec, args.threshold_sigma)
    row = stats.to_row()
    if args.format == "jsonl":
        write_jsonl([row], sys.stdout)
    else:
        write_table([row], sys.stdout, args.format)
    if args.records:
        from .harness import records
        with open(args.records, "w") as fh:
            write_records(records(spec), fh)
    z = "n/a" if stats.z_score is None else f"{stats.z_score:.3f}"
    print(f"verdict: {stats.verdict}  z={z}  N*delta^2={stats.n_delta_sq:.4g}")
    return EXIT_OK


def _summary(role: str, result: SessionResult) -> str:
    counts = {o: 0 for o in Outcome}
    for r in result.records:
        counts[r.outcome] += 1
    bob, alice = result.totals
    parts = [f"games={len(result.records)}"] + [f"{o.value}={counts[o]}" for o in Outcome]
    parts += [f"bob_total={bob:.6g}", f"alice_total={alice:.6g}"]
    return f"settlement[{role}] " + " ".join(parts)


def _finish_session(role: str, result: SessionResult, args) -> int:
    print(_summary(role, result))
    report = session_monitor(result.records, args.p_err if role == "alice" else 0.0) \
        if result.records else None
    if report is not None:
        print(f"monitor: {report.verdict.value} anomalies={report.anomalies}")
    if args.records:
        with open(args.records, "w") as fh:
            write_records(result.records, fh)
    if result.error:
        print(f"session ended early: {result.error}", file=sys.stderr)
        return EXIT_NETWORK
    return EXIT_OK


def cmd_serve(args) -> int:
    if args.role != "alice":
        raise UsageError("serve runs the casino: --role alice")
    parse_alice(args.alice, args.R or 1.0)  # reject bad descriptors before listening
    try:
        listener = listen(args.port, args.host)
    except OSError as exc:
        print(f"cannot listen on {args.host}:{args.port}: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    print(f"listening on {listener.address[0]}:{listener.port}", flush=True)
    try:
        endpoint = listener.accept(args.accept_timeout)
    except ChannelTimeout:
        print("no player connected", file=sys.stderr)
        return EXIT_NETWORK
    finally:
        listener.close()
    try:
        # the strategy may depend on R, which the player proposes in HELLO
        result = serve_games(endpoint, lambda R: parse_alice(args.alice, R), args.seed, p_err=args.p_err, timeout=args.timeout,
                             expected_R=args.R)
    finally:
        endpoint.close()
    return _finish_session("alice", result, args)


def cmd_connect(args) -> int:
    if args.role != "bob":
        raise UsageError("connect runs the player: --role bob")
    bob = parse_bob(args.bob, args.R)
    try:
        endpoint = connect(args.addr, timeout=args.timeout)
    except ChannelClosed as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NETWORK
    try:
        result = play_games(endpoint, bob, args.R, args.games, args.seed, timeout=args.timeout)
    finally:
        endpoint.close()
    args.p_err = 0.0
    return _finish_session("bob", result, args)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qgamble", description="Two-party quantum gambling: analysis, "
                "oracle verification, Monte Carlo and networked play.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="closed-form bounds per R")
    a.add_argument("--R", type=_positive, nargs="+", required=True)
    a.add_argument("--format", choices=["table", "csv"], default="table")
    a.set_defaults(func=cmd_analyze)

    v = sub.add_parser("verify", help="numeric minimax vs closed form")
    v.add_argument("--r-min", type=_positive, default=1.0)
    v.add_argument("--r-max", type=_positive, default=1e6)
    v.add_argument("--points", type=int, default=13)
    v.add_argument("--tol", type=_positive, default=1e-6)
    v.add_argument("--format", choices=["table", "csv"], default="table")
    v.add_argument("--perturb-r", type=_positive, default=None,
                   help="self-test: shift the closed-form delta at the grid point nearest this R")
    v.add_argument("--perturb-by", type=float, default=1e-3)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", help="Monte Carlo experiment")
    s.add_argument("--R", type=_positive, required=True)
    s.add_argument("--games", type=int, default=10000)
    s.add_argument("--alice", default="honest", help=ALICE_GRAMMAR)
    s.add_argument("--bob", default="honest", help=BOB_GRAMMAR)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--p-err", type=_unit, default=0.0)
    s.add_argument("--parallelism", type=int, default=1)
    s.add_argument("--threshold-sigma", type=_positive, default=4.0)
    s.add_argument("--format", choices=["table", "csv", "jsonl"], default="table")
    s.add_argument("--records", help="write one JSON game record per line to this file")
    s.set_defaults(func=cmd_simulate)

    sv = sub.add_parser("serve", help="host the casino and the physics oracle")
    sv.add_argument("--role", required=True, choices=["alice", "bob"])
    sv.add_argument("--port", type=int, default=DEFAULT_PORT)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--alice", default="honest", help=ALICE_GRAMMAR)
    sv.add_argument("--R", type=_positive, default=None, help="only accept this R")
    sv.add_argument("--seed", type=int, default=0)
    sv.add_argument("--p-err", type=_unit, default=0.0)
    sv.add_argument("--timeout", type=_positive, default=30.0)
    sv.add_argument("--accept-timeout", type=_positive, default=None)
    sv.add_argument("--records")
    sv.set_defaults(func=cmd_serve)

    c = sub.add_parser("connect", help="play as Bob against a remote casino")
    c.add_argument("--role", required=True, choices=["alice", "bob"])
    c.add_argument("--addr", default=f"127.0.0.1:{DEFAULT_PORT}")
    c.add_argument("--R", type=_positive, required=True)
    c.add_argument("--games", type=int, default=100)
    c.add_argument("--bob", default="honest", help=BOB_GRAMMAR)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--timeout", type=_positive, default=30.0)
    c.add_argument("--records")
    c.set_defaults(func=cmd_connect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"qgamble: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
