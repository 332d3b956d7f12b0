"""Batch Monte Carlo experiments over the full protocol.

Every game runs through the real session state machines and the physics
oracle. Game ``i`` of an experiment draws only from substreams keyed by
``(seed, i)``, so results do not depend on how games are split across worker
processes.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from . import quantum as q
from .protocol import (
    AliceStrategy,
    BobStrategy,
    FalseClaimBob,
    GameParams,
    GameRecord,
    HonestAlice,
    HonestBob,
    LiarBob,
    MonitorReport,
    NeverVerifyBob,
    Outcome,
    Substreams,
    binomial_verdict,
    run_game,
)
from .transport import OracleEndpoint

OUTCOME_ORDER = list(Outcome)
_CODE = {o: i for i, o in enumerate(OUTCOME_ORDER)}


@dataclass(frozen=True)
class ExperimentSpec:
    R: float
    N: int
    alice: AliceStrategy
    bob: BobStrategy
    p_err: float = 0.0
    seed: int = 0
    parallelism: int = 1

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not self.R > 0:
            raise ValueError("R must be positive")
        if not 0 <= self.p_err <= 1:
            raise ValueError("p_err must lie in [0, 1]")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")


def analytic_bob_gain(R: float, alice: AliceStrategy, bob: BobStrategy) -> float | None:
    """Exact expected Bob gain over settled games, from oracle probabilities.

    Returns ``None`` when no game can settle.
    """
    eta = bob.eta
    split = q.split_b(q.prepare(alice.preparation()), eta)
    p_b = q.prob_in_mode(split, q.B)
    if p_b >= 1.0:
        return 1.0
    missed = q.collapse(split, q.B, False)
    p_d = q.prob_detect(missed, eta)
    p_a = q.prob_in_mode(missed, q.A)
    if isinstance(bob, HonestBob):
        return analysis.gain_from_probs(p_b, p_d, R)
    if isinstance(bob, NeverVerifyBob):
        return p_b - (1 - p_b)
    if isinstance(bob, LiarBob):
        claim = 1 - (1 - p_d) * (1 - bob.lie_prob)
        if alice.honest:
            # claims become disputes and drop out of the settled average
            weight = p_b + (1 - p_b) * (1 - claim)
            return None if weight == 0 else (p_b - (1 - p_b) * (1 - claim)) / weight
        return p_b + (1 - p_b) * (claim * R - (1 - claim))
    if isinstance(bob, FalseClaimBob):
        lie = bob.lie_prob
        bluff = (1 - p_a) - p_a
        return p_b + (1 - p_b) * (lie * bluff + (1 - lie) * (p_d * R - (1 - p_d)))
    raise TypeError(f"unsupported Bob strategy {bob!r}")


@dataclass
class ExperimentStats:
    R: float
    N: int
    alice: str
    bob: str
    seed: int
    p_err: float
    n_settled: int
    mean_bob_gain: float
    mean_alice_gain: float
    stddev_bob_gain: float
    stderr_bob_gain: float
    total_bob_gain: float
    total_alice_gain: float
    outcome_counts: dict[str, int]
    canceled_rate: float
    disputed_rate: float
    analytic_reference: float | None
    z_score: float | None
    n_delta_sq: float
    monitor: MonitorReport
    bob_gains: np.ndarray | None = field(default=None, repr=False)

    COLUMNS = ("R", "N", "alice", "bob", "seed", "p_err", "n_settled", "mean_bob_gain",
               "mean_alice_gain", "stddev_bob_gain", "stderr_bob_gain", "analytic_reference",
               "z_score", "canceled_rate", "disputed_rate", "n_delta_sq", "verdict",
               *(o.value for o in OUTCOME_ORDER))

    @property
    def verdict(self) -> str:
        return self.monitor.verdict.value

    def to_row(self) -> dict:
        row = {c: getattr(self, c) for c in self.COLUMNS[:16]}
        row["verdict"] = self.verdict
        row.update(self.outcome_counts)
        return row


def _play_chunk(spec: ExperimentSpec, start: int, stop: int):
    streams = Substreams(spec.seed)
    oracle = OracleEndpoint()
    codes = np.empty(stop - start, dtype=np.int8)
    gains = np.empty(stop - start, dtype=float)
    for j, i in enumerate(range(start, stop)):
        rec = run_game(GameParams.for_index(spec.R, spec.seed, i), spec.alice, spec.bob,
                       oracle=oracle, streams=streams, p_err=spec.p_err)
        codes[j] = _CODE[rec.outcome]
        gains[j] = rec.bob_gain
    return codes, gains


def play(spec: ExperimentSpec) -> tuple[np.ndarray, np.ndarray]:
    """Outcome codes (indices into ``OUTCOME_ORDER``) and Bob gains per game."""
    if spec.parallelism == 1:
        return _play_chunk(spec, 0, spec.N)
    bounds = np.linspace(0, spec.N, spec.parallelism * 4 + 1).astype(int)
    chunks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=spec.parallelism) as pool:
        parts = list(pool.map(_play_chunk, [spec] * len(chunks), *zip(*chunks)))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def records(spec: ExperimentSpec) -> list[GameRecord]:
    """Full game records, for export; sequential."""
    streams = Substreams(spec.seed)
    oracle = OracleEndpoint()
    return [run_game(GameParams.for_index(spec.R, spec.seed, i), spec.alice, spec.bob,
                     oracle=oracle, streams=streams, p_err=spec.p_err)
            for i in range(spec.N)]


def summarize(spec: ExperimentSpec, codes: np.ndarray, gains: np.ndarray,
              threshold_sigma: float = 4.0, keep_gains: bool = False) -> ExperimentStats:
    counts = {o.value: int(np.count_nonzero(codes == _CODE[o])) for o in OUTCOME_ORDER}
    settled = np.isin(codes, [_CODE[o] for o in OUTCOME_ORDER if o.settled])
    g = gains[settled]
    n = len(g)
    total_bob = math.fsum(g)
    total_alice = math.fsum(-g)
    mean = total_bob / n if n else math.nan
    if n > 1:
        std = math.sqrt(math.fsum((g - mean) ** 2) / (n - 1))
    else:
        std = math.nan
    stderr = std / math.sqrt(n) if n > 1 else math.nan
    ref = analytic_bob_gain(spec.R, spec.alice, spec.bob)
    z = None
    if ref is not None and n > 1:
        z = (mean - ref) / stderr if stderr > 0 else (0.0 if mean == ref else math.inf)
    anomalies = spec.N - n
    return ExperimentStats(
        R=spec.R, N=spec.N, alice=spec.alice.describe(), bob=spec.bob.describe(),
        seed=spec.seed, p_err=spec.p_err, n_settled=n,
        mean_bob_gain=mean, mean_alice_gain=(total_alice / n if n else math.nan),
        stddev_bob_gain=std, stderr_bob_gain=stderr,
        total_bob_gain=total_bob, total_alice_gain=total_alice,
        outcome_counts=counts,
        canceled_rate=counts[Outcome.CANCELED.value] / spec.N,
        disputed_rate=counts[Outcome.DISPUTED.value] / spec.N,
        analytic_reference=ref, z_score=z,
        n_delta_sq=spec.N * analysis.delta_closed(spec.R) ** 2,
        monitor=binomial_verdict(spec.N, anomalies, spec.p_err, threshold_sigma),
        bob_gains=gains if keep_gains else None,
    )


def run_experiment(spec: ExperimentSpec, threshold_sigma: float = 4.0,
                   keep_gains: bool = False) -> ExperimentStats:
    codes, gains = play(spec)
    return summarize(spec, codes, gains, threshold_sigma, keep_gains)


def sweep(R_values, alice_grid, bob_grid, N: int, seed: int = 0, p_err: float = 0.0,
          parallelism: int = 1) -> list[ExperimentStats]:
    """Cross product of experiments in ``R``-major, then Alice, then Bob order.

    Grid entries may be strategies or callables ``R -> strategy`` (for
    strategies that depend on ``R``, like Bob's optimal split).
    """
    if not R_values or not alice_grid or not bob_grid:
        raise ValueError("sweep grids must be nonempty")
    rows = []
    for R in R_values:
        for a in alice_grid:
            for b in bob_grid:
                alice = a(R) if callable(a) else a
                bob = b(R) if callable(b) else b
                rows.append(run_experiment(ExperimentSpec(R, N, alice, bob, p_err, seed, parallelism)))
    return rows


def error_injection_report(spec: ExperimentSpec, threshold_sigma: float = 4.0) -> ExperimentStats:
    """Run with channel faults and report cancellation rate plus monitor verdict."""
    if not 0 < spec.p_err < 1:
        raise ValueError("error injection needs p_err in (0, 1)")
    return run_experiment(spec, threshold_sigma)


@dataclass(frozen=True)
class ScalingResult:
    Ns: tuple[int, ...]
    blocks: tuple[int, ...]
    mean_totals: tuple[float, ...]
    std_totals: tuple[float, ...]
    mean_exponent: float
    std_exponent: float


def scaling_study(R: float, Ns=(100, 1000, 10000), pool_blocks: int = 100, seed: int = 0,
                  alice: AliceStrategy | None = None, bob: BobStrategy | None = None) -> ScalingResult:
    """How the total gain over ``N`` games spreads and drifts with ``N``.

    Plays ``pool_blocks * max(Ns)`` games once, cuts them into disjoint blocks
    of each size, and fits log-log slopes of |mean block total| and of the
    standard deviation of block totals against ``N``.
    """
    alice = alice or HonestAlice()
    bob = bob or HonestBob(analysis.eta_tilde(R))
    pool = pool_blocks * max(Ns)
    codes, gains = play(ExperimentSpec(R, pool, alice, bob, seed=seed))
    means, stds, blocks = [], [], []
    for n in Ns:
        k = pool // n
        totals = gains[: k * n].reshape(k, n).sum(axis=1)
        means.append(abs(float(totals.mean())))
        stds.append(float(totals.std(ddof=1)))
        blocks.append(k)
    logN = np.log(np.asarray(Ns, dtype=float))
    mean_slope = float(np.polyfit(logN, np.log(means), 1)[0])
    std_slope = float(np.polyfit(logN, np.log(stds), 1)[0])
    return ScalingResult(tuple(Ns), tuple(blocks), tuple(means), tuple(stds), mean_slope, std_slope)


def _fmt(v, precise: bool) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if precise:
            return repr(v)
        return f"{v:.6g}"
    return str(v)


def write_table(rows: list[dict], fh, fmt: str = "table") -> None:
    """Emit rows as an aligned text table (6 significant digits) or csv
    (full precision)."""
    if not rows:
        return
    columns = list(rows[0])
    if fmt == "csv":
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c], True) for c in columns])
        return
    cells = [[_fmt(r[c], False) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    fh.write("  ".join(c.rjust(w) for c, w in zip(columns, widths)) + "\n")
    for row in cells:
        fh.write("  ".join(v.rjust(w) for v, w in zip(row, widths)) + "\n")


def write_jsonl(rows: list[dict], fh) -> None:
    for r in rows:
        fh.write(json.dumps(r, sort_keys=True) + "\n")
