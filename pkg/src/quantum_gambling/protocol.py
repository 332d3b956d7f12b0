"""Alice (casino) and Bob (player) session state machines and game settlement.

Each session reacts to one incoming :class:`WireMessage` at a time and returns
the messages it sends in reply; quantum operations go through an oracle
client, so the same sessions run over the direct in-process driver
(:func:`run_game`) and over any channel (:func:`serve_games`,
:func:`play_games`).
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

from . import quantum as q
from .transport import (
    ChannelClosed,
    ChannelTimeout,
    LocalOracle,
    OracleEndpoint,
    OracleReply,
    OracleRequest,
    ProtocolViolation,
    RemoteOracle,
    WireMessage,
    encode,
    msg,
    preparation_to_payload,
)

BET = 1


class Outcome(str, enum.Enum):
    BOB_FOUND_PARTICLE = "BobFoundParticle"
    BOB_DETECTED_PREPARATION = "BobDetectedPreparation"
    ALICE_WINS = "AliceWins"
    BOB_LIE_CAUGHT = "BobLieCaught"
    DISPUTED = "Disputed"
    CANCELED = "Canceled"

    @property
    def settled(self) -> bool:
        return self not in (Outcome.DISPUTED, Outcome.CANCELED)


def settle(outcome: Outcome, R: float) -> tuple[float, float]:
    """``(bob_gain, alice_gain)`` in coins for a terminal outcome."""
    if outcome is Outcome.BOB_FOUND_PARTICLE:
        bob = float(BET)
    elif outcome is Outcome.BOB_DETECTED_PREPARATION:
        bob = float(R)
    elif outcome in (Outcome.ALICE_WINS, Outcome.BOB_LIE_CAUGHT):
        bob = -float(BET)
    else:
        return 0.0, 0.0
    return bob, -bob


# --- strategies -------------------------------------------------------------

def _check_unit(name, x):
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name}={x} outside [0, 1]")


class _AliceBase:
    @cached_property
    def honest(self) -> bool:
        return is_honest_preparation(self.preparation())

    @cached_property
    def preparation_payload(self) -> dict:
        return preparation_to_payload(self.preparation())


@dataclass(frozen=True)
class HonestAlice(_AliceBase):
    def preparation(self) -> q.Preparation:
        return q.Epsilon(0.0)

    def describe(self) -> str:
        return "honest"


@dataclass(frozen=True)
class BiasedAlice(_AliceBase):
    eps: float

    def __post_init__(self):
        q.Epsilon(self.eps)

    def preparation(self) -> q.Preparation:
        return q.Epsilon(self.eps)

    def describe(self) -> str:
        return f"eps={self.eps!r}"


@dataclass(frozen=True)
class GeneralAlice(_AliceBase):
    prep: q.General
    label: str = "general"

    def preparation(self) -> q.Preparation:
        return self.prep

    def describe(self) -> str:
        return self.label


AliceStrategy = HonestAlice | BiasedAlice | GeneralAlice


def is_honest_preparation(p: q.Preparation, tol: float = 1e-12) -> bool:
    """True when the box part of the preparation is the equal superposition,
    whatever the (then irrelevant) ancilla state."""
    amps = q.prepare(p).amplitudes
    overlap = (amps[0] + amps[1]) / math.sqrt(2)
    return float(np.vdot(overlap, overlap).real) >= 1 - tol


@dataclass(frozen=True)
class HonestBob:
    eta: float

    def __post_init__(self):
        _check_unit("eta", self.eta)

    def describe(self) -> str:
        return f"eta={self.eta!r}"


@dataclass(frozen=True)
class NeverVerifyBob:
    """Opens box B and concedes whenever the particle is not there."""

    eta: float = 0.0

    def __post_init__(self):
        _check_unit("eta", self.eta)

    def describe(self) -> str:
        return f"never-verify,eta={self.eta!r}"


@dataclass(frozen=True)
class LiarBob:
    """Verifies, then claims a detected deviation with probability ``lie_prob``."""

    eta: float
    lie_prob: float = 1.0

    def __post_init__(self):
        _check_unit("eta", self.eta)
        _check_unit("lie_prob", self.lie_prob)

    def describe(self) -> str:
        return f"liar={self.lie_prob!r},eta={self.eta!r}"


@dataclass(frozen=True)
class FalseClaimBob:
    """Claims to have found the particle in B with probability ``lie_prob``
    after missing it; otherwise verifies honestly."""

    eta: float
    lie_prob: float = 1.0

    def __post_init__(self):
        _check_unit("eta", self.eta)
        _check_unit("lie_prob", self.lie_prob)

    def describe(self) -> str:
        return f"false-claim={self.lie_prob!r},eta={self.eta!r}"


BobStrategy = HonestBob | NeverVerifyBob | LiarBob | FalseClaimBob


# --- records ----------------------------------------------------------------

@dataclass(frozen=True)
class GameParams:
    R: float
    game_id: str
    seed: int
    index: int = 0

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")

    @classmethod
    def for_index(cls, R: float, seed: int, index: int) -> "GameParams":
        return cls(float(R), f"g{index}", seed, index)


@dataclass(frozen=True)
class GameRecord:
    params: GameParams
    alice: str
    bob: str
    transcript: tuple[WireMessage, ...]
    measurements: tuple[tuple[str, str, bool], ...]
    outcome: Outcome
    bob_gain: float
    alice_gain: float

    def transcript_bytes(self) -> bytes:
        return b"".join(encode(m) for m in self.transcript)

    def to_dict(self) -> dict:
        return {
            "game_id": self.params.game_id,
            "index": self.params.index,
            "seed": self.params.seed,
            "R": self.params.R,
            "alice": self.alice,
            "bob": self.bob,
            "transcript": [{"type": m.type, "payload": m.payload} for m in self.transcript],
            "measurements": [list(m) for m in self.measurements],
            "outcome": self.outcome.value,
            "bob_gain": self.bob_gain,
            "alice_gain": self.alice_gain,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def write_records(records: Iterable[GameRecord], fh) -> None:
    for r in records:
        fh.write(r.to_json_line() + "\n")


# --- sessions ---------------------------------------------------------------

class _Session:
    role = ""

    def __init__(self, params: GameParams, oracle):
        self.params = params
        self.oracle = oracle
        self.phase = "idle"
        self.outcome: Outcome | None = None

    @property
    def done(self) -> bool:
        return self.phase == "done"

    def _violation(self, m: WireMessage):
        raise ProtocolViolation(f"{self.role}: unexpected {m.type} in phase {self.phase}")

    def _check(self, m: WireMessage):
        if m.game_id != self.params.game_id:
            raise ProtocolViolation(f"{self.role}: unknown game_id {m.game_id!r}")

    def _request(self, type_: str, **payload) -> bool:
        return self.oracle(OracleRequest(type_, self.params.game_id, payload))

    def cancel(self):
        self.outcome = Outcome.CANCELED
        self.phase = "done"

    def gains(self) -> tuple[float, float]:
        return settle(self.outcome, self.params.R)

    def _settle_msg(self) -> WireMessage:
        bob, alice = self.gains()
        return msg("SETTLE", self.params.game_id, outcome=self.outcome.value,
                   bob_gain=bob, alice_gain=alice)


class AliceSession(_Session):
    role = "alice"

    def __init__(self, params: GameParams, strategy: AliceStrategy, oracle):
        super().__init__(params, oracle)
        self.strategy = strategy
        self.honest = strategy.honest
        self._sent_settle: WireMessage | None = None

    def start(self) -> list[WireMessage]:
        if self.phase != "idle":
            raise ProtocolViolation("alice: game already started")
        self._request("PREPARE", preparation=self.strategy.preparation_payload)
        self.phase = "await_claim"
        return [msg("BOX_B_READY", self.params.game_id)]

    def _finish(self, outcome: Outcome, extra=()) -> list[WireMessage]:
        self.outcome = outcome
        self._sent_settle = self._settle_msg()
        self.phase = "await_ack"
        return [*extra, self._sent_settle]

    def handle(self, m: WireMessage) -> list[WireMessage]:
        self._check(m)
        if m.type in ("CANCEL", "ABORT") and not self.done:
            self.cancel()
            return []
        gid = self.params.game_id
        if self.phase == "await_claim":
            if m.type == "CLAIM_WIN":
                # rule 1 pays only if box A turns out empty
                found_in_a = self._request("OPEN_A")
                outcome = Outcome.BOB_LIE_CAUGHT if found_in_a else Outcome.BOB_FOUND_PARTICLE
                return self._finish(outcome, [msg("OPEN_A_RESULT", gid, found_in_a=found_in_a)])
            if m.type == "REQUEST_BOX_A":
                self.phase = "await_verify"
                return [msg("BOX_A_READY", gid)]
        elif self.phase == "await_verify" and m.type == "VERIFY_RESULT":
            if not m["detected"]:
                return self._finish(Outcome.ALICE_WINS)
            # an honest preparation can never be caught, so the claim is a lie
            return self._finish(Outcome.DISPUTED if self.honest else Outcome.BOB_DETECTED_PREPARATION)
        elif self.phase == "await_ack" and m.type == "SETTLE":
            if m != self._sent_settle:
                raise ProtocolViolation("alice: settlement acknowledgement differs")
            self.phase = "done"
            return []
        self._violation(m)


class BobSession(_Session):
    role = "bob"

    def __init__(self, params: GameParams, strategy: BobStrategy, oracle,
                 rng: np.random.Generator | None = None):
        super().__init__(params, oracle)
        self.strategy = strategy
        self.rng = rng
        self.phase = "await_box_b"
        self._expected: set[Outcome] = set()

    def _lies(self) -> bool:
        return bool(self.rng.random() < self.strategy.lie_prob)

    def handle(self, m: WireMessage) -> list[WireMessage]:
        self._check(m)
        if m.type in ("CANCEL", "ABORT") and not self.done:
            self.cancel()
            return []
        gid = self.params.game_id
        s = self.strategy
        if self.phase == "await_box_b" and m.type == "BOX_B_READY":
            self._request("SPLIT", eta=s.eta)
            if self._request("MEASURE_B"):
                self.phase = "await_open"
                return [msg("CLAIM_WIN", gid)]
            if isinstance(s, FalseClaimBob) and self._lies():
                self.phase = "await_open"
                return [msg("CLAIM_WIN", gid)]
            self.phase = "await_box_a"
            return [msg("REQUEST_BOX_A", gid)]
        if self.phase == "await_box_a" and m.type == "BOX_A_READY":
            if isinstance(s, NeverVerifyBob):
                detected = False
            else:
                detected = not self._request("PROJECT_VERIFY", eta=s.eta)
                if isinstance(s, LiarBob) and self._lies():
                    detected = True
            self._expected = ({Outcome.BOB_DETECTED_PREPARATION, Outcome.DISPUTED}
                              if detected else {Outcome.ALICE_WINS})
            self.phase = "await_settle"
            return [msg("VERIFY_RESULT", gid, detected=detected)]
        if self.phase == "await_open" and m.type == "OPEN_A_RESULT":
            self._expected = {Outcome.BOB_LIE_CAUGHT if m["found_in_a"] else Outcome.BOB_FOUND_PARTICLE}
            self.phase = "await_settle"
            return []
        if self.phase == "await_settle" and m.type == "SETTLE":
            try:
                outcome = Outcome(m["outcome"])
            except ValueError:
                outcome = None
            if outcome in self._expected:
                self.outcome = outcome
                if m == self._settle_msg():
                    self.phase = "done"
                    return [m]
            # result disagreement: the run is void
            self.cancel()
            return [msg("CANCEL", gid, reason="settlement disagrees with local result")]
        self._violation(m)


# --- drivers ----------------------------------------------------------------

class Substreams:
    """Deterministic per-game random streams keyed by ``(seed, index, purpose)``.

    Backed by counter-based Philox generators that are re-positioned rather
    than rebuilt; a returned generator is valid until the next call for the
    same purpose.
    """

    PURPOSES = {"oracle": 0, "bob": 1, "channel": 2}

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._bitgens = {}
        self._gens = {}
        for name in self.PURPOSES:
            bg = np.random.Philox(key=self.seed % 2**64)
            self._bitgens[name] = bg
            self._gens[name] = np.random.Generator(bg)
        self._template = self._bitgens["oracle"].state

    def get(self, purpose: str, index: int) -> np.random.Generator:
        state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array([0, self.PURPOSES[purpose], index, 0], dtype=np.uint64),
                "key": self._template["state"]["key"],
            },
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        self._bitgens[purpose].state = state
        return self._gens[purpose]

    def oracle(self, index):
        return self.get("oracle", index)

    def bob(self, index):
        return self.get("bob", index)

    def channel(self, index):
        return self.get("channel", index)


def corrupt_settlement(m: WireMessage) -> WireMessage:
    """Channel fault model: a SETTLE arrives with its result altered."""
    flipped = {
        Outcome.ALICE_WINS.value: Outcome.BOB_FOUND_PARTICLE.value,
        Outcome.BOB_FOUND_PARTICLE.value: Outcome.ALICE_WINS.value,
        Outcome.BOB_LIE_CAUGHT.value: Outcome.BOB_FOUND_PARTICLE.value,
        Outcome.BOB_DETECTED_PREPARATION.value: Outcome.ALICE_WINS.value,
        Outcome.DISPUTED.value: Outcome.ALICE_WINS.value,
    }[m["outcome"]]
    return msg("SETTLE", m.game_id, outcome=flipped, bob_gain=-m["bob_gain"], alice_gain=-m["alice_gain"])


class _Noise:
    def __init__(self, corrupt: bool):
        self.pending = corrupt

    def apply(self, m: WireMessage) -> WireMessage:
        if self.pending and m.type == "SETTLE":
            self.pending = False
            return corrupt_settlement(m)
        return m


def _draw_corruption(streams: Substreams, index: int, p_err: float) -> bool:
    if not 0.0 <= p_err <= 1.0:
        raise ValueError(f"p_err={p_err} outside [0, 1]")
    return p_err > 0 and bool(streams.channel(index).random() < p_err)


def _bob_rng(bob, streams, index):
    # only lying strategies draw private randomness
    return streams.bob(index) if isinstance(bob, (LiarBob, FalseClaimBob)) else None


def run_game(params: GameParams, alice: AliceStrategy, bob: BobStrategy, *,
             oracle: OracleEndpoint | None = None, streams: Substreams | None = None,
             p_err: float = 0.0) -> GameRecord:
    """Play one game with both parties in-process.

    Messages are delivered in FIFO order; the transcript lists them as sent.
    With probability ``p_err`` Alice's settlement is corrupted in transit,
    which Bob observes as a disagreement and the run is canceled.
    """
    streams = streams or Substreams(params.seed)
    oracle = oracle or OracleEndpoint()
    gid = params.game_id
    noise = _Noise(True) if _draw_corruption(streams, params.index, p_err) else None
    oracle.open_game(gid, streams.oracle(params.index))
    try:
        a = AliceSession(params, alice, LocalOracle(oracle, "alice"))
        b = BobSession(params, bob, LocalOracle(oracle, "bob"), _bob_rng(bob, streams, params.index))
        transcript = []
        pending = deque((b, m) for m in a.start())
        while pending:
            dest, m = pending.popleft()
            transcript.append(m)
            if dest is b:
                if noise is not None:
                    m = noise.apply(m)
                for r in b.handle(m):
                    pending.append((a, r))
            else:
                for r in a.handle(m):
                    pending.append((b, r))
    finally:
        measurements = oracle.close_game(gid)
    if not (a.done and b.done) or a.outcome is not b.outcome:
        raise ProtocolViolation(f"game {gid} ended inconsistently: {a.outcome} vs {b.outcome}")
    bob_gain, alice_gain = a.gains()
    return GameRecord(params, alice.describe(), bob.describe(), tuple(transcript),
                      measurements, a.outcome, bob_gain, alice_gain)


def _canceled_record(params, alice_desc, bob_desc, transcript, measurements=()):
    return GameRecord(params, alice_desc, bob_desc, tuple(transcript), tuple(measurements),
                      Outcome.CANCELED, 0.0, 0.0)


@dataclass
class SessionResult:
    records: list[GameRecord] = field(default_factory=list)
    error: str | None = None

    @property
    def totals(self) -> tuple[float, float]:
        return (math.fsum(r.bob_gain for r in self.records),
                math.fsum(r.alice_gain for r in self.records))


def serve_games(endpoint, alice: AliceStrategy, seed: int, *, p_err: float = 0.0,
                oracle: OracleEndpoint | None = None, timeout: float | None = 30.0,
                expected_R: float | None = None) -> SessionResult:
    """Casino side of a networked session; hosts the physics oracle.

    Waits for Bob's HELLO, then plays the requested number of games, answering
    Bob's oracle requests on the same channel. ``alice`` may be a strategy or a
    callable ``R -> strategy``.
    """
    oracle = oracle or OracleEndpoint()
    streams = Substreams(seed)
    result = SessionResult()
    try:
        hello = endpoint.recv(timeout)
    except (ChannelClosed, ChannelTimeout) as exc:
        result.error = str(exc)
        return result
    if not isinstance(hello, WireMessage) or hello.type != "HELLO":
        endpoint.send(msg("ABORT", hello.game_id, reason="expected HELLO"))
        result.error = "expected HELLO"
        return result
    R, games = hello["R"], hello["games"]
    if not R > 0 or games < 0 or (expected_R is not None and R != expected_R):
        endpoint.send(msg("ABORT", hello.game_id, reason=f"unacceptable R={R} games={games}"))
        result.error = f"rejected HELLO R={R} games={games}"
        return result
    endpoint.send(msg("ACCEPT", hello.game_id, R=R, games=games))
    if not hasattr(alice, "preparation"):
        alice = alice(R)  # factory for R-dependent strategies

    for index in range(games):
        params = GameParams.for_index(R, seed, index)
        gid = params.game_id
        noise = _Noise(_draw_corruption(streams, index, p_err))
        oracle.open_game(gid, streams.oracle(index))
        a = AliceSession(params, alice, LocalOracle(oracle, "alice"))
        transcript = []
        try:
            out = a.start()
            while True:
                for m in out:
                    transcript.append(m)
                    endpoint.send(noise.apply(m))
                if a.done:
                    break
                incoming = endpoint.recv(timeout)
                if isinstance(incoming, OracleRequest):
                    try:
                        endpoint.send(oracle.handle(incoming, "bob"))
                    except ProtocolViolation as exc:
                        endpoint.send(msg("ABORT", gid, reason=str(exc)))
                        raise
                    out = []
                    continue
                if not isinstance(incoming, WireMessage):
                    raise ProtocolViolation(f"alice: unexpected frame {incoming.type}")
                transcript.append(incoming)
                out = a.handle(incoming)
                if incoming.type == "ABORT":
                    raise ChannelClosed(f"peer aborted: {incoming['reason']}")
        except (ChannelClosed, ChannelTimeout, ProtocolViolation) as exc:
            measurements = oracle.close_game(gid)
            result.records.append(_canceled_record(params, alice.describe(), "remote", transcript, measurements))
            result.error = f"{type(exc).__name__}: {exc}"
            if isinstance(exc, ChannelTimeout):
                _try_send(endpoint, msg("ABORT", gid, reason="timeout"))
            return result
        measurements = oracle.close_game(gid)
        bob_gain, alice_gain = a.gains()
        result.records.append(GameRecord(params, alice.describe(), "remote", tuple(transcript),
                                         measurements, a.outcome, bob_gain, alice_gain))
    return result


def _try_send(endpoint, m):
    try:
        endpoint.send(m)
    except (ChannelClosed, OSError):
        pass


def play_games(endpoint, bob: BobStrategy, R: float, games: int, seed: int, *,
               timeout: float | None = 30.0, session_id: str = "session") -> SessionResult:
    """Player side of a networked session; oracle requests travel over the channel."""
    streams = Substreams(seed)
    oracle = RemoteOracle(endpoint, timeout)
    result = SessionResult()
    try:
        endpoint.send(msg("HELLO", session_id, R=R, games=games))
        reply = endpoint.recv(timeout)
    except (ChannelClosed, ChannelTimeout) as exc:
        result.error = str(exc)
        return result
    if reply.type != "ACCEPT":
        result.error = f"session refused: {reply.payload}"
        return result
    R = reply["R"]
    for index in range(games):
        params = GameParams.for_index(R, seed, index)
        b = BobSession(params, bob, oracle, _bob_rng(bob, streams, index))
        transcript = []
        try:
            while not b.done:
                incoming = endpoint.recv(timeout)
                if not isinstance(incoming, WireMessage):
                    raise ProtocolViolation(f"bob: unexpected frame {incoming.type}")
                transcript.append(incoming)
                if incoming.type == "ABORT":
                    raise ChannelClosed(f"peer aborted: {incoming['reason']}")
                out = b.handle(incoming)
                for m in out:
                    transcript.append(m)
                    endpoint.send(m)
        except (ChannelClosed, ChannelTimeout, ProtocolViolation) as exc:
            result.records.append(_canceled_record(params, "remote", bob.describe(), transcript))
            result.error = f"{type(exc).__name__}: {exc}"
            if isinstance(exc, ProtocolViolation):
                _try_send(endpoint, msg("ABORT", params.game_id, reason=str(exc)))
            return result
        bob_gain, alice_gain = b.gains()
        result.records.append(GameRecord(params, "remote", bob.describe(), tuple(transcript), (),
                                         b.outcome, bob_gain, alice_gain))
    return result


# --- session monitor --------------------------------------------------------

class SessionVerdict(str, enum.Enum):
    CLEAN = "CLEAN"
    CHEATING_SUSPECTED = "CHEATING_SUSPECTED"
    INDETERMINATE = "INDETERMINATE"


@dataclass(frozen=True)
class MonitorReport:
    verdict: SessionVerdict
    games: int
    anomalies: int
    expected: float
    z: float


def session_monitor(outcomes: Iterable, expected_error_rate: float,
                    threshold_sigma: float = 4.0) -> MonitorReport:
    """Flag a session whose canceled plus disputed runs exceed a binomial
    model of honest channel errors by more than ``threshold_sigma``."""
    tags = [o.outcome if isinstance(o, GameRecord) else Outcome(o) for o in outcomes]
    return binomial_verdict(len(tags), sum(1 for t in tags if not t.settled),
                            expected_error_rate, threshold_sigma)


def binomial_verdict(n: int, anomalies: int, expected_error_rate: float,
                     threshold_sigma: float = 4.0) -> MonitorReport:
    if n == 0:
        return MonitorReport(SessionVerdict.INDETERMINATE, 0, 0, 0.0, 0.0)
    p = expected_error_rate
    mean = n * p
    sd = math.sqrt(n * p * (1 - p))
    if sd == 0:
        z = math.inf if anomalies > mean else 0.0
    else:
        z = (anomalies - mean) / sd
    verdict = SessionVerdict.CHEATING_SUSPECTED if z > threshold_sigma else SessionVerdict.CLEAN
    return MonitorReport(verdict, n, anomalies, mean, z)
