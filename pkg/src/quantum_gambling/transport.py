"""Classical messages, their wire codec, channels and the oracle endpoint.

Frame layout: a 4-byte big-endian body length, then a UTF-8 JSON object with
exactly the keys ``type``, ``game_id`` and ``payload``, serialized with sorted
keys and no whitespace so equal messages encode to identical bytes.
"""

from __future__ import annotations

import json
import queue
import socket
import struct
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import quantum as q

PROTOCOL_VERSION = 1
DEFAULT_PORT = 7201
MAX_BODY = 2**20
_HEADER = struct.Struct(">I")


class TransportError(Exception):
    pass


class EncodeError(TransportError):
    pass


class DecodeError(TransportError):
    pass


class IncompleteFrame(DecodeError):
    """Not enough bytes for a whole frame yet."""


class UnknownMessageType(DecodeError):
    def __init__(self, tag):
        super().__init__(f"unknown message type {tag!r} (protocol version {PROTOCOL_VERSION})")
        self.tag = tag


class ChannelClosed(TransportError):
    pass


class ChannelTimeout(TransportError):
    pass


class ProtocolViolation(Exception):
    pass


def _as_float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError(f"expected a number, got {v!r}")
    return float(v)


def _as_int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError(f"expected an integer, got {v!r}")
    return v


def _as_bool(v):
    if not isinstance(v, bool):
        raise TypeError(f"expected a boolean, got {v!r}")
    return v


def _as_str(v):
    if not isinstance(v, str):
        raise TypeError(f"expected a string, got {v!r}")
    return v


def _as_obj(v):
    if not isinstance(v, dict):
        raise TypeError(f"expected an object, got {v!r}")
    return v


MESSAGE_SCHEMAS: dict[str, dict[str, Callable]] = {
    "HELLO": {"R": _as_float, "games": _as_int},
    "ACCEPT": {"R": _as_float, "games": _as_int},
    "BOX_B_READY": {},
    "CLAIM_WIN": {},
    "OPEN_A_RESULT": {"found_in_a": _as_bool},
    "REQUEST_BOX_A": {},
    "BOX_A_READY": {},
    "VERIFY_RESULT": {"detected": _as_bool},
    "SETTLE": {"outcome": _as_str, "bob_gain": _as_float, "alice_gain": _as_float},
    "CANCEL": {"reason": _as_str},
    "ABORT": {"reason": _as_str},
}

ORACLE_SCHEMAS: dict[str, dict[str, Callable]] = {
    "PREPARE": {"preparation": _as_obj},
    "SPLIT": {"eta": _as_float},
    "MEASURE_B": {},
    "OPEN_A": {},
    "PROJECT_VERIFY": {"eta": _as_float},
}

REPLY_SCHEMAS: dict[str, dict[str, Callable]] = {
    "ORACLE_RESULT": {"found": _as_bool},
}


@dataclass(frozen=True)
class _Frame:
    type: str
    game_id: str
    payload: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        schema = self._schemas().get(self.type)
        if schema is None:
            raise UnknownMessageType(self.type)
        if type(self.game_id) is not str or not self.game_id:
            raise ValueError("game_id must be a non-empty string")
        payload = self.payload
        if payload.keys() != schema.keys():
            missing = set(schema) - set(payload)
            extra = set(payload) - set(schema)
            raise ValueError(f"{self.type} payload: missing {sorted(missing)}, unexpected {sorted(extra)}")
        try:
            clean = {k: conv(payload[k]) for k, conv in schema.items()}
        except TypeError as exc:
            raise ValueError(f"{self.type} payload: {exc}") from None
        object.__setattr__(self, "payload", clean)

    @classmethod
    def _schemas(cls):
        raise NotImplementedError

    def __getitem__(self, key):
        return self.payload[key]


class WireMessage(_Frame):
    """Party-to-party classical message."""

    @classmethod
    def _schemas(cls):
        return MESSAGE_SCHEMAS


class OracleRequest(_Frame):
    """Operation request sent by a party to the physics oracle."""

    @classmethod
    def _schemas(cls):
        return ORACLE_SCHEMAS


class OracleReply(_Frame):
    """Classical outcome returned by the oracle; never carries amplitudes."""

    @classmethod
    def _schemas(cls):
        return REPLY_SCHEMAS


_CLASS_BY_TAG = {
    **{t: WireMessage for t in MESSAGE_SCHEMAS},
    **{t: OracleRequest for t in ORACLE_SCHEMAS},
    **{t: OracleReply for t in REPLY_SCHEMAS},
}


def msg(type_: str, game_id: str, **payload) -> WireMessage:
    return WireMessage(type_, game_id, payload)


def _reject_constant(name):
    raise DecodeError(f"non-finite number {name} in body")


def encode(frame: _Frame) -> bytes:
    try:
        body = json.dumps(
            {"type": frame.type, "game_id": frame.game_id, "payload": frame.payload},
            sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False,
        ).encode("utf-8")
    except (ValueError, UnicodeEncodeError) as exc:
        raise EncodeError(str(exc)) from None
    if len(body) > MAX_BODY:
        raise EncodeError(f"frame body of {len(body)} bytes exceeds {MAX_BODY}")
    return _HEADER.pack(len(body)) + body


def _decode_body(body: bytes) -> _Frame:
    try:
        obj = json.loads(body.decode("utf-8"), parse_constant=_reject_constant)
    except UnicodeDecodeError as exc:
        raise DecodeError(f"invalid UTF-8: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DecodeError(f"invalid body: {exc}") from None
    if not isinstance(obj, dict) or set(obj) != {"type", "game_id", "payload"}:
        raise DecodeError("body must be an object with type, game_id and payload")
    tag = obj["type"]
    if not isinstance(tag, str):
        raise DecodeError("type must be a string")
    cls = _CLASS_BY_TAG.get(tag)
    if cls is None:
        raise UnknownMessageType(tag)
    if not isinstance(obj["payload"], dict):
        raise DecodeError("payload must be an object")
    try:
        return cls(tag, obj["game_id"], obj["payload"])
    except ValueError as exc:
        raise DecodeError(str(exc)) from None


def decode(data: bytes) -> _Frame:
    """Decode exactly one complete frame."""
    if len(data) < _HEADER.size:
        raise IncompleteFrame(f"need {_HEADER.size} header bytes, have {len(data)}")
    (n,) = _HEADER.unpack_from(data)
    if n > MAX_BODY:
        raise DecodeError(f"malformed length {n}")
    if len(data) < _HEADER.size + n:
        raise IncompleteFrame(f"need {n} body bytes, have {len(data) - _HEADER.size}")
    if len(data) > _HEADER.size + n:
        raise DecodeError(f"{len(data) - _HEADER.size - n} trailing bytes after frame")
    return _decode_body(data[_HEADER.size:])


class FrameReader:
    """Incremental decoder for a byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[_Frame]:
        self._buf += data
        frames = []
        while len(self._buf) >= _HEADER.size:
            (n,) = _HEADER.unpack_from(self._buf)
            if n > MAX_BODY:
                raise DecodeError(f"malformed length {n}")
            end = _HEADER.size + n
            if len(self._buf) < end:
                break
            body = bytes(self._buf[_HEADER.size:end])
            del self._buf[:end]
            frames.append(_decode_body(body))
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)


# --- channels ---------------------------------------------------------------

_CLOSED = object()


class LocalEndpoint:
    """One side of an in-process, reliable, ordered channel."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    def send(self, frame: _Frame) -> None:
        if self._closed:
            raise ChannelClosed("endpoint closed")
        self._outbox.put(frame)

    def recv(self, timeout: float | None = None) -> _Frame:
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise ChannelTimeout(f"no message within {timeout}s") from None
        if item is _CLOSED:
            self._inbox.put(_CLOSED)
            raise ChannelClosed("peer closed")
        return item

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(_CLOSED)


def channel_pair() -> tuple[LocalEndpoint, LocalEndpoint]:
    a_to_b, b_to_a = queue.Queue(), queue.Queue()
    return LocalEndpoint(b_to_a, a_to_b), LocalEndpoint(a_to_b, b_to_a)


class SocketEndpoint:
    """Stream-socket endpoint framing messages with :func:`encode`."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._reader = FrameReader()
        self._ready: list[_Frame] = []
        self._lock = threading.Lock()

    def send(self, frame: _Frame) -> None:
        data = encode(frame)
        try:
            with self._lock:
                self._sock.sendall(data)
        except OSError as exc:
            raise ChannelClosed(str(exc)) from None

    def recv(self, timeout: float | None = None) -> _Frame:
        self._sock.settimeout(timeout)
        while not self._ready:
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                raise ChannelTimeout(f"no message within {timeout}s") from None
            except OSError as exc:
                raise ChannelClosed(str(exc)) from None
            if not chunk:
                raise ChannelClosed("peer closed the connection")
            self._ready.extend(self._reader.feed(chunk))
        return self._ready.pop(0)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class Listener:
    def __init__(self, port: int = DEFAULT_PORT, host: str = "127.0.0.1"):
        self._sock = socket.create_server((host, port), reuse_port=False)
        self.address = self._sock.getsockname()[:2]

    @property
    def port(self) -> int:
        return self.address[1]

    def accept(self, timeout: float | None = None) -> SocketEndpoint:
        self._sock.settimeout(timeout)
        try:
            conn, _ = self._sock.accept()
        except socket.timeout:
            raise ChannelTimeout("no connection") from None
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return SocketEndpoint(conn)

    def close(self) -> None:
        self._sock.close()


def listen(port: int = DEFAULT_PORT, host: str = "127.0.0.1") -> Listener:
    return Listener(port, host)


def parse_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep:
        return address, DEFAULT_PORT
    return host or "127.0.0.1", int(port)


def connect(address: str | tuple[str, int], timeout: float | None = 10.0) -> SocketEndpoint:
    if isinstance(address, str):
        address = parse_address(address)
    try:
        sock = socket.create_connection(address, timeout=timeout)
    except OSError as exc:
        raise ChannelClosed(f"cannot connect to {address}: {exc}") from None
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return SocketEndpoint(sock)


# --- physics oracle ---------------------------------------------------------

def preparation_to_payload(p: q.Preparation) -> dict:
    if isinstance(p, q.Epsilon):
        return {"kind": "epsilon", "eps": float(p.eps)}
    amps = [[str(m), k, float(a.real), float(a.imag)]
            for (m, k), a in sorted(p.amplitudes.items(), key=lambda kv: (kv[0][0], kv[0][1]))]
    return {"kind": "general", "ancilla_dim": p.ancilla_dim, "num_extra": p.num_extra,
            "amplitudes": amps}


def _mode_from_str(s: str) -> q.Mode:
    if s in ("A", "B", "Bprime"):
        return q.Mode(s)
    if s.startswith("C") and s[1:].isdigit():
        return q.C(int(s[1:]))
    raise ValueError(f"unknown mode {s!r}")


def preparation_from_payload(d: dict) -> q.Preparation:
    try:
        if d["kind"] == "epsilon":
            return q.Epsilon(float(d["eps"]))
        if d["kind"] == "general":
            amps = {(_mode_from_str(m), int(k)): complex(re, im) for m, k, re, im in d["amplitudes"]}
            return q.General(amps, int(d["ancilla_dim"]), int(d["num_extra"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise q.InvalidPreparation(f"bad preparation payload: {exc}") from None
    raise q.InvalidPreparation(f"unknown preparation kind {d.get('kind')!r}")


ROLE_OPS = {
    "alice": {"PREPARE", "OPEN_A"},
    "bob": {"SPLIT", "MEASURE_B", "PROJECT_VERIFY"},
}

# op -> phases it is legal in, and the phase it leads to
_TRANSITIONS = {
    "PREPARE": ({"new"}, "prepared"),
    "SPLIT": ({"prepared"}, "split"),
    "MEASURE_B": ({"split"}, "measured"),
    "OPEN_A": ({"measured"}, "done"),
    "PROJECT_VERIFY": ({"measured"}, "done"),
}


@dataclass
class _Slot:
    rng: np.random.Generator
    phase: str = "new"
    state: q.QuantumState | None = None
    found_b: bool | None = None
    log: list = field(default_factory=list)


class OracleEndpoint:
    """Trusted referee holding the joint quantum state of each open game.

    Parties interact only through :meth:`handle`, receiving booleans. Requests
    must arrive in protocol order and from the party entitled to make them.
    """

    def __init__(self):
        self._games: dict[str, _Slot] = {}
        self._lock = threading.Lock()

    def open_game(self, game_id: str, rng: np.random.Generator) -> None:
        with self._lock:
            if game_id in self._games:
                raise ProtocolViolation(f"game {game_id} already open")
            self._games[game_id] = _Slot(rng)

    def close_game(self, game_id: str) -> tuple:
        """Forget a game and return its measurement log."""
        with self._lock:
            slot = self._games.pop(game_id, None)
        return tuple(slot.log) if slot else ()

    def handle(self, request: OracleRequest, role: str) -> OracleReply:
        return OracleReply("ORACLE_RESULT", request.game_id, {"found": self.perform(request, role)})

    def perform(self, request: OracleRequest, role: str) -> bool:
        with self._lock:
            slot = self._games.get(request.game_id)
            if slot is None:
                raise ProtocolViolation(f"unknown game {request.game_id}")
            op = request.type
            if op not in ROLE_OPS.get(role, ()):
                raise ProtocolViolation(f"{role} may not request {op}")
            allowed, nxt = _TRANSITIONS[op]
            if slot.phase not in allowed:
                raise ProtocolViolation(f"{op} out of order (phase {slot.phase})")
            if op == "PROJECT_VERIFY" and slot.found_b:
                raise ProtocolViolation("box A verification after the particle was found in B")
            found = self._apply(slot, request)
            slot.phase = nxt
            slot.log.append((role, op, found))
            return found

    def _apply(self, slot: _Slot, request: OracleRequest) -> bool:
        op = request.type
        if op == "PREPARE":
            slot.state = q.prepare(preparation_from_payload(request["preparation"]))
            return True
        if op == "SPLIT":
            slot.state = q.split_b(slot.state, request["eta"])
            return True
        if op == "MEASURE_B":
            out = q.measure_mode(slot.state, q.B, slot.rng)
            slot.found_b = out.found
        elif op == "OPEN_A":
            out = q.measure_mode(slot.state, q.A, slot.rng)
        else:
            out = q.verify_preparation(slot.state, request["eta"], slot.rng)
        slot.state = out.post_state
        return out.found


class LocalOracle:
    """Direct in-process client bound to one role."""

    def __init__(self, endpoint: OracleEndpoint, role: str):
        self.endpoint = endpoint
        self.role = role

    def __call__(self, request: OracleRequest) -> bool:
        return self.endpoint.perform(request, self.role)


class RemoteOracle:
    """Client that forwards requests over a channel to the oracle's host."""

    def __init__(self, endpoint, timeout: float | None = None):
        self.endpoint = endpoint
        self.timeout = timeout

    def __call__(self, request: OracleRequest) -> bool:
        self.endpoint.send(request)
        reply = self.endpoint.recv(self.timeout)
        if isinstance(reply, WireMessage) and reply.type == "ABORT":
            raise ProtocolViolation(f"peer aborted: {reply['reason']}")
        if not isinstance(reply, OracleReply) or reply.game_id != request.game_id:
            raise ProtocolViolation(f"expected an oracle reply, got {reply.type}")
        return reply["found"]
