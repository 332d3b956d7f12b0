"""Codec, channel and oracle-endpoint tests."""

import json
import random
import threading

import numpy as np
import pytest

from quantum_gambling import analysis as an
from quantum_gambling import quantum as q
from quantum_gambling import transport as t
from quantum_gambling.protocol import GameParams, HonestAlice, HonestBob, Substreams, run_game

ALL_TAGS = {**t.MESSAGE_SCHEMAS, **t.ORACLE_SCHEMAS, **t.REPLY_SCHEMAS}
ALPHABET = "abcXYZ019 _-:/\"\\\n\té€😀"


def random_text(rng: random.Random, lo=1, hi=12):
    return "".join(rng.choice(ALPHABET) for _ in range(rng.randint(lo, hi)))


def random_value(conv, rng: random.Random):
    if conv is t._as_float:
        return rng.choice([rng.uniform(-1e6, 1e6), rng.expovariate(1e-3), float(rng.randint(1, 10**6)),
                           rng.uniform(0, 1) * 10 ** rng.randint(-300, 300), 0.0, -0.0])
    if conv is t._as_int:
        return rng.randint(0, 2**62)
    if conv is t._as_bool:
        return rng.random() < 0.5
    if conv is t._as_str:
        return random_text(rng, 0, 40)
    prep = q.random_general(np.random.default_rng(rng.randint(0, 2**32)), ancilla_dim=rng.randint(1, 3))
    return t.preparation_to_payload(prep)


def random_frame(rng: random.Random):
    tag = rng.choice(sorted(ALL_TAGS))
    payload = {k: random_value(conv, rng) for k, conv in ALL_TAGS[tag].items()}
    return t._CLASS_BY_TAG[tag](tag, random_text(rng), payload)


@pytest.fixture(scope="module")
def corpus():
    rng = random.Random(20240601)
    return [random_frame(rng) for _ in range(10_000)]


class TestCodec:
    def test_claim_win_round_trip(self):
        m = t.msg("CLAIM_WIN", "g1")
        assert t.decode(t.encode(m)) == m

    def test_header_and_body_layout(self):
        data = t.encode(t.msg("VERIFY_RESULT", "g7", detected=True))
        n = int.from_bytes(data[:4], "big")
        assert n == len(data) - 4
        assert json.loads(data[4:]) == {"game_id": "g7", "payload": {"detected": True}, "type": "VERIFY_RESULT"}
        assert data[4:] == b'{"game_id":"g7","payload":{"detected":true},"type":"VERIFY_RESULT"}'

    def test_canonical_bytes(self):
        a = t.msg("SETTLE", "g2", outcome="AliceWins", bob_gain=-1, alice_gain=1)
        b = t.WireMessage("SETTLE", "g2", {"alice_gain": 1.0, "outcome": "AliceWins", "bob_gain": -1.0})
        assert a == b
        assert t.encode(a) == t.encode(b)

    def test_corpus_round_trip(self, corpus):
        failures = [m for m in corpus if t.decode(t.encode(m)) != m]
        assert not failures
        assert {m.type for m in corpus} == set(ALL_TAGS)

    def test_corpus_through_stream_reader(self, corpus):
        stream = b"".join(t.encode(m) for m in corpus[:2000])
        reader = t.FrameReader()
        out = []
        rng = random.Random(3)
        i = 0
        while i < len(stream):
            j = i + rng.randint(1, 300)
            out.extend(reader.feed(stream[i:j]))
            i = j
        assert out == corpus[:2000]
        assert reader.pending == 0

    def test_truncation_fuzz(self, corpus):
        rng = random.Random(11)
        for m in corpus[:3000]:
            data = t.encode(m)
            cut = rng.randrange(len(data))
            with pytest.raises(t.IncompleteFrame):
                t.decode(data[:cut])

    def test_byte_corruption_never_crashes(self, corpus):
        rng = random.Random(12)
        for m in corpus[:3000]:
            data = bytearray(t.encode(m))
            i = rng.randrange(4, len(data))
            data[i] = rng.randrange(256)
            try:
                t.decode(bytes(data))
            except t.DecodeError:
                pass

    def test_empty_input_is_incomplete(self):
        with pytest.raises(t.IncompleteFrame):
            t.decode(b"")

    def test_unknown_tag_named(self):
        body = b'{"game_id":"g1","payload":{},"type":"FOO"}'
        with pytest.raises(t.UnknownMessageType, match="FOO") as exc:
            t.decode(len(body).to_bytes(4, "big") + body)
        assert exc.value.tag == "FOO"
        assert "version 1" in str(exc.value)

    @pytest.mark.parametrize("body", [
        b'\xff\xfe',
        b'{"game_id":"g1","payload":{},"type":"CLAIM_WIN"',
        b'[1,2]',
        b'{"game_id":"g1","type":"CLAIM_WIN"}',
        b'{"game_id":"g1","payload":{},"type":"VERIFY_RESULT"}',
        b'{"game_id":"g1","payload":{"detected":1},"type":"VERIFY_RESULT"}',
        b'{"game_id":"","payload":{},"type":"CLAIM_WIN"}',
        b'{"game_id":"g1","payload":{"R":NaN,"games":1},"type":"HELLO"}',
        b'{"game_id":"g1","payload":{"extra":1},"type":"CLAIM_WIN"}',
    ])
    def test_malformed_bodies(self, body):
        with pytest.raises(t.DecodeError):
            t.decode(len(body).to_bytes(4, "big") + body)

    def test_malformed_length(self):
        with pytest.raises(t.DecodeError):
            t.decode((t.MAX_BODY + 1).to_bytes(4, "big") + b"{}")

    def test_trailing_bytes(self):
        with pytest.raises(t.DecodeError):
            t.decode(t.encode(t.msg("CLAIM_WIN", "g1")) + b"x")

    def test_oversized_payload(self):
        m = t.msg("CANCEL", "g1", reason="x" * (t.MAX_BODY + 1))
        with pytest.raises(t.EncodeError):
            t.encode(m)

    def test_non_finite_rejected_on_encode(self):
        with pytest.raises(t.EncodeError):
            t.encode(t.msg("HELLO", "s", R=float("inf"), games=1))

    def test_constructor_validates_payload(self):
        with pytest.raises(ValueError):
            t.msg("HELLO", "s", R=1.0)
        with pytest.raises(ValueError):
            t.msg("HELLO", "s", R=True, games=1)

    def test_preparation_payload_round_trip(self):
        p = q.random_general(np.random.default_rng(1), ancilla_dim=3, num_extra=1)
        back = t.preparation_from_payload(json.loads(json.dumps(t.preparation_to_payload(p))))
        assert q.prepare(back).allclose(q.prepare(p), atol=0)
        assert t.preparation_from_payload(t.preparation_to_payload(q.Epsilon(0.25))) == q.Epsilon(0.25)
        with pytest.raises(q.InvalidPreparation):
            t.preparation_from_payload({"kind": "magic"})


def _exercise(a, b):
    sent = [t.msg("CLAIM_WIN", f"g{i}") for i in range(50)]
    for m in sent:
        a.send(m)
    assert [b.recv(5) for _ in sent] == sent
    b.send(t.msg("ABORT", "g0", reason="bye"))
    assert a.recv(5)["reason"] == "bye"


class TestChannels:
    def test_local_pair_ordered(self):
        _exercise(*t.channel_pair())

    def test_local_timeout(self):
        a, _ = t.channel_pair()
        with pytest.raises(t.ChannelTimeout):
            a.recv(0.01)

    def test_local_close_seen_by_peer(self):
        a, b = t.channel_pair()
        a.close()
        with pytest.raises(t.ChannelClosed):
            b.recv(1)
        with pytest.raises(t.ChannelClosed):
            b.recv(1)
        with pytest.raises(t.ChannelClosed):
            a.send(t.msg("CLAIM_WIN", "g"))

    def test_socket_loopback(self):
        listener = t.listen(0)
        box = {}
        th = threading.Thread(target=lambda: box.setdefault("ep", listener.accept(5)))
        th.start()
        client = t.connect(("127.0.0.1", listener.port))
        th.join()
        server = box["ep"]
        try:
            _exercise(client, server)
            with pytest.raises(t.ChannelTimeout):
                server.recv(0.05)
            client.close()
            with pytest.raises(t.ChannelClosed):
                server.recv(2)
        finally:
            server.close()
            listener.close()

    def test_connect_refused(self):
        listener = t.listen(0)
        port = listener.port
        listener.close()
        with pytest.raises(t.ChannelClosed):
            t.connect(("127.0.0.1", port), timeout=2)

    def test_parse_address(self):
        assert t.parse_address("10.0.0.2:99") == ("10.0.0.2", 99)
        assert t.parse_address("host") == ("host", t.DEFAULT_PORT)
        assert t.parse_address(":7") == ("127.0.0.1", 7)


def req(type_, gid="g", **payload):
    return t.OracleRequest(type_, gid, payload)


PREP0 = t.preparation_to_payload(q.Epsilon(0))


class TestOracleEndpoint:
    def open(self, seed=0):
        o = t.OracleEndpoint()
        o.open_game("g", np.random.default_rng(seed))
        return o

    def test_split_before_prepare_rejected(self):
        o = self.open()
        with pytest.raises(t.ProtocolViolation, match="out of order"):
            o.perform(req("SPLIT", eta=0.2), "bob")

    def test_role_enforced(self):
        o = self.open()
        with pytest.raises(t.ProtocolViolation):
            o.perform(req("PREPARE", preparation=PREP0), "bob")
        o.perform(req("PREPARE", preparation=PREP0), "alice")
        with pytest.raises(t.ProtocolViolation):
            o.perform(req("SPLIT", eta=0.2), "alice")

    def test_unknown_game(self):
        with pytest.raises(t.ProtocolViolation):
            t.OracleEndpoint().perform(req("PREPARE", preparation=PREP0), "alice")

    def test_duplicate_game(self):
        o = self.open()
        with pytest.raises(t.ProtocolViolation):
            o.open_game("g", np.random.default_rng())

    def test_no_verification_after_found(self):
        o = self.open()
        o.perform(req("PREPARE", preparation=t.preparation_to_payload(q.Epsilon(-0.5))), "alice")
        o.perform(req("SPLIT", eta=0.0), "bob")
        assert o.perform(req("MEASURE_B"), "bob") is True
        with pytest.raises(t.ProtocolViolation):
            o.perform(req("PROJECT_VERIFY", eta=0.0), "bob")

    def test_replies_are_classical_only(self):
        o = self.open()
        replies = [o.handle(req("PREPARE", preparation=PREP0), "alice"),
                   o.handle(req("SPLIT", eta=0.3), "bob"),
                   o.handle(req("MEASURE_B"), "bob")]
        for r in replies:
            assert isinstance(r, t.OracleReply)
            assert set(r.payload) == {"found"}
            assert isinstance(r["found"], bool)

    def test_measure_b_visible_to_bob_only(self):
        """Bob's result comes back to the caller alone; Alice cannot re-ask
        for it or probe box B, and the oracle state is not exposed."""
        o = self.open(3)
        o.perform(req("PREPARE", preparation=PREP0), "alice")
        o.perform(req("SPLIT", eta=0.5), "bob")
        o.perform(req("MEASURE_B"), "bob")
        for op in ("MEASURE_B", "SPLIT", "PROJECT_VERIFY"):
            with pytest.raises(t.ProtocolViolation):
                o.perform(req(op, **({"eta": 0.5} if op != "MEASURE_B" else {})), "alice")
        assert o.perform(req("OPEN_A"), "alice") in (True, False)
        assert not any(name.startswith(("state", "amplitude")) for name in dir(o))

    def test_no_amplitudes_in_any_schema(self):
        # only PREPARE (Alice to the referee) carries a state description
        for tag, schema in {**t.MESSAGE_SCHEMAS, **t.REPLY_SCHEMAS}.items():
            assert t._as_obj not in schema.values(), tag
        assert [k for k, s in t.ORACLE_SCHEMAS.items() if t._as_obj in s.values()] == ["PREPARE"]
        assert "PREPARE" not in t.ROLE_OPS["bob"]


def direct_game(R, seed, index, eps=0.0):
    """Reference game computed with direct quantum-core calls."""
    rng = Substreams(seed).oracle(index)
    eta = an.eta_tilde(R)
    s = q.split_b(q.prepare(q.Epsilon(eps)), eta)
    out_b = q.measure_mode(s, q.B, rng)
    log = [("alice", "PREPARE", True), ("bob", "SPLIT", True), ("bob", "MEASURE_B", out_b.found)]
    if out_b.found:
        out_a = q.measure_mode(out_b.post_state, q.A, rng)
        log.append(("alice", "OPEN_A", out_a.found))
    else:
        v = q.verify_preparation(out_b.post_state, eta, rng)
        log.append(("bob", "PROJECT_VERIFY", v.found))
    return tuple(log)


class TestOracleDifferential:
    @pytest.mark.parametrize("R", [1.0, 3.0, 100.0])
    def test_endpoint_matches_direct_calls(self, R):
        bob = HonestBob(an.eta_tilde(R))
        for i in range(300):
            rec = run_game(GameParams.for_index(R, 77, i), HonestAlice(), bob)
            assert rec.measurements == direct_game(R, 77, i)
