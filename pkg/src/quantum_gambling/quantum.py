"""Dense state-vector simulator for the two-box gambling particle.

The simulator is the trusted referee of the game: it holds the joint state of
the particle (box modes) and of Alice's optional ancilla, and exposes only the
operations the parties are physically able to perform.

Layout: amplitudes are a ``(n_modes, ancilla_dim)`` complex array whose rows
are ordered ``A, B, B', C_0 .. C_{k-1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

NORM_TOL = 1e-9
DEFAULT_EXTRA_BOXES = 2


class QuantumError(Exception):
    """Base class for simulator errors."""


class InvalidPreparation(QuantumError, ValueError):
    pass


class ParameterError(QuantumError, ValueError):
    pass


class InternalConsistencyError(QuantumError, RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class Mode:
    """A box mode: ``A``, ``B``, ``Bprime`` or ``C`` with an index."""

    tag: str
    index: int = 0

    def __post_init__(self):
        if self.tag not in ("A", "B", "Bprime", "C"):
            raise ValueError(f"unknown mode tag {self.tag!r}")
        if self.index < 0 or (self.tag != "C" and self.index != 0):
            raise ValueError(f"bad index {self.index} for mode {self.tag}")

    def __str__(self):
        return f"C{self.index}" if self.tag == "C" else self.tag


A = Mode("A")
B = Mode("B")
BPRIME = Mode("Bprime")


def C(i: int) -> Mode:
    return Mode("C", i)


def _row(mode: Mode, num_extra: int) -> int:
    if mode.tag == "A":
        return 0
    if mode.tag == "B":
        return 1
    if mode.tag == "Bprime":
        return 2
    if mode.index >= num_extra:
        raise ValueError(f"{mode} outside the {num_extra} extra boxes of this state")
    return 3 + mode.index


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Normalized pure state over box modes tensored with an ancilla.

    ``amplitudes[row, k]`` is the amplitude of ``|mode>|Phi_k>``. Instances are
    treated as immutable values; every operation returns a new state. A
    writable complex array passed in is adopted (and frozen) without copying.
    """

    amplitudes: np.ndarray
    split_applied: bool = False

    def __post_init__(self):
        amps = self.amplitudes
        if not (isinstance(amps, np.ndarray) and amps.dtype == complex and amps.flags.writeable):
            amps = np.array(amps, dtype=complex)
        if amps.ndim != 2 or amps.shape[0] < 3 or amps.shape[1] < 1:
            raise ValueError(f"bad amplitude shape {amps.shape}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def ancilla_dim(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def num_extra(self) -> int:
        return self.amplitudes.shape[0] - 3

    @property
    def modes(self) -> list[Mode]:
        return [A, B, BPRIME] + [C(i) for i in range(self.num_extra)]

    def amplitude(self, mode: Mode, k: int = 0) -> complex:
        return complex(self.amplitudes[_row(mode, self.num_extra), k])

    def mode_vector(self, mode: Mode) -> np.ndarray:
        """Ancilla vector attached to ``mode`` (unnormalized)."""
        return self.amplitudes[_row(mode, self.num_extra)]

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def as_dict(self) -> dict[tuple[Mode, int], complex]:
        out = {}
        for mode in self.modes:
            for k in range(self.ancilla_dim):
                amp = self.amplitude(mode, k)
                if amp != 0:
                    out[(mode, k)] = amp
        return out

    def allclose(self, other: "QuantumState", atol: float = 1e-12) -> bool:
        return self.amplitudes.shape == other.amplitudes.shape and bool(
            np.allclose(self.amplitudes, other.amplitudes, rtol=0, atol=atol)
        )


@dataclass(frozen=True)
class Epsilon:
    """Alice's reduced preparation sqrt(1/2+eps)|a> + sqrt(1/2-eps)|b>."""

    eps: float

    def __post_init__(self):
        if not -0.5 <= self.eps <= 0.5:
            raise InvalidPreparation(f"eps={self.eps} outside [-1/2, 1/2]")


@dataclass(frozen=True)
class General:
    """Arbitrary preparation over ``A``, ``B`` and the extra boxes ``C_i``,
    optionally entangled with an ancilla of dimension ``ancilla_dim``.

    Amplitudes must already be normalized; use :meth:`normalized` to build
    one from raw weights.
    """

    amplitudes: Mapping[tuple[Mode, int], complex]
    ancilla_dim: int = 1
    num_extra: int = DEFAULT_EXTRA_BOXES

    def __post_init__(self):
        if self.ancilla_dim < 1 or self.num_extra < 0:
            raise InvalidPreparation("ancilla_dim must be >= 1 and num_extra >= 0")
        amps = dict(self.amplitudes)
        for (mode, k) in amps:
            if mode.tag == "Bprime":
                raise InvalidPreparation("B' does not exist before Bob splits box B")
            if mode.tag == "C" and mode.index >= self.num_extra:
                raise InvalidPreparation(f"{mode} exceeds num_extra={self.num_extra}")
            if not 0 <= k < self.ancilla_dim:
                raise InvalidPreparation(f"ancilla index {k} out of range")
        total = math.fsum(abs(a) ** 2 for a in amps.values())
        if total == 0:
            raise InvalidPreparation("all amplitudes are zero")
        if abs(total - 1) > NORM_TOL:
            raise InvalidPreparation(f"amplitudes have squared norm {total}, expected 1")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def normalized(cls, amplitudes, ancilla_dim=1, num_extra=DEFAULT_EXTRA_BOXES):
        total = math.fsum(abs(a) ** 2 for a in amplitudes.values())
        if total == 0:
            raise InvalidPreparation("all amplitudes are zero")
        scale = 1 / math.sqrt(total)
        return cls({key: a * scale for key, a in amplitudes.items()}, ancilla_dim, num_extra)


Preparation = Epsilon | General


def random_general(rng: np.random.Generator, ancilla_dim: int = 1,
                   num_extra: int = DEFAULT_EXTRA_BOXES) -> General:
    """Haar-like random preparation with complex amplitudes on every allowed slot."""
    modes = [A, B] + [C(i) for i in range(num_extra)]
    raw = rng.normal(size=(len(modes), ancilla_dim)) + 1j * rng.normal(size=(len(modes), ancilla_dim))
    amps = {(m, k): complex(raw[i, k]) for i, m in enumerate(modes) for k in range(ancilla_dim)}
    return General.normalized(amps, ancilla_dim, num_extra)


def prepare(p: Preparation) -> QuantumState:
    if isinstance(p, Epsilon):
        amps = np.zeros((3 + DEFAULT_EXTRA_BOXES, 1), dtype=complex)
        # exact 0/1 at the boundaries
        amps[0, 0] = math.sqrt(0.5 + p.eps)
        amps[1, 0] = math.sqrt(0.5 - p.eps)
        return QuantumState(amps)
    if isinstance(p, General):
        amps = np.zeros((3 + p.num_extra, p.ancilla_dim), dtype=complex)
        for (mode, k), a in p.amplitudes.items():
            amps[_row(mode, p.num_extra), k] = a
        return QuantumState(amps)
    raise InvalidPreparation(f"unsupported preparation {p!r}")


def _check_eta(eta: float) -> None:
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"eta={eta} outside [0, 1]")


def split_b(s: QuantumState, eta: float) -> QuantumState:
    """Apply |b> -> sqrt(1-eta)|b> + sqrt(eta)|b'> to every ancilla branch."""
    _check_eta(eta)
    if s.split_applied:
        raise ParameterError("box B has already been split")
    amps = np.array(s.amplitudes)
    beta = amps[1].copy()
    amps[1] = beta * math.sqrt(1 - eta)
    amps[2] = beta * math.sqrt(eta)
    return QuantumState(amps, split_applied=True)


def prob_in_mode(s: QuantumState, m: Mode) -> float:
    v = s.amplitudes[_row(m, s.num_extra)]
    return float(np.vdot(v, v).real)


@dataclass(frozen=True)
class MeasurementOutcome:
    found: bool
    post_state: QuantumState = field(repr=False)
    probability_used: float


def _renormalized(amps: np.ndarray, split_applied: bool) -> QuantumState:
    weight = float(np.vdot(amps, amps).real)
    if weight <= 0.0:
        raise InternalConsistencyError("attempted to renormalize a zero vector")
    return QuantumState(amps / math.sqrt(weight), split_applied=split_applied)


def _sample(p: float, rng: np.random.Generator) -> bool:
    # u in [0, 1): p == 0 never fires, p == 1 always fires
    return rng.random() < p


def collapse(s: QuantumState, m: Mode, found: bool) -> QuantumState:
    """Renormalized post-measurement state for a given branch of "in mode m?"."""
    row = _row(m, s.num_extra)
    if found:
        amps = np.zeros_like(s.amplitudes)
        amps[row] = s.amplitudes[row]
    else:
        amps = np.array(s.amplitudes)
        amps[row] = 0
    return _renormalized(amps, s.split_applied)


def measure_mode(s: QuantumState, m: Mode, rng: np.random.Generator) -> MeasurementOutcome:
    """Projective measurement "is the particle in mode m?"."""
    p = min(max(prob_in_mode(s, m), 0.0), 1.0)
    found = _sample(p, rng)
    return MeasurementOutcome(found, collapse(s, m, found), p if found else 1.0 - p)


def reference_state(eta: float, num_extra: int = DEFAULT_EXTRA_BOXES,
                    ancilla_dim: int = 1) -> QuantumState:
    """The state an honest preparation is left in after Bob misses the particle.

    With ``ancilla_dim > 1`` the ancilla is put in basis state 0; only the box
    part of the result is used when projecting.
    """
    _check_eta(eta)
    amps = np.zeros((3 + num_extra, ancilla_dim), dtype=complex)
    amps[0, 0] = math.sqrt(1 / (1 + eta))
    amps[2, 0] = math.sqrt(eta / (1 + eta))
    return QuantumState(amps, split_applied=True)


def _reference_box_vector(eta: float, n_modes: int) -> np.ndarray:
    ref = np.zeros(n_modes, dtype=complex)
    ref[0] = math.sqrt(1 / (1 + eta))
    ref[2] = math.sqrt(eta / (1 + eta))
    return ref


def _overlap_with_reference(s: QuantumState, eta: float) -> tuple[np.ndarray, np.ndarray]:
    ref = _reference_box_vector(eta, s.amplitudes.shape[0])
    # partial inner product over the box modes leaves an ancilla vector
    return ref, ref.conj() @ s.amplitudes


def prob_detect(s_after_not_found: QuantumState, eta: float) -> float:
    """Probability that projecting onto the honest reference state fails."""
    _check_eta(eta)
    _, overlap = _overlap_with_reference(s_after_not_found, eta)
    return min(max(1.0 - float(np.vdot(overlap, overlap).real), 0.0), 1.0)


def verify_preparation(s_after_not_found: QuantumState, eta: float,
                       rng: np.random.Generator) -> MeasurementOutcome:
    """Bob's verification. ``found=False`` means a deviation from the honest
    preparation was detected."""
    _check_eta(eta)
    ref, overlap = _overlap_with_reference(s_after_not_found, eta)
    p_pass = min(max(float(np.vdot(overlap, overlap).real), 0.0), 1.0)
    projected = np.outer(ref, overlap)
    if _sample(p_pass, rng):
        return MeasurementOutcome(True, _renormalized(projected, True), p_pass)
    rest = s_after_not_found.amplitudes - projected
    return MeasurementOutcome(False, _renormalized(rest, True), 1.0 - p_pass)
