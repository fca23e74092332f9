import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narravine.portnet import (
    MAX_FRAME_BYTES,
    BadPortName,
    DuplicateName,
    FrameTooLarge,
    MessageKind,
    PortMessage,
    PortRegistry,
    UnknownPort,
    validate_port_name,
)


@pytest.fixture
def registry():
    r = PortRegistry()
    yield r
    r.close()


def collect(into, event=None, want=None):
    def cb(msg):
        into.append(msg)
        if event is not None and want is not None and len(into) >= want:
            event.set()
    return cb


def wait_count(items, n, timeout=10.0):
    deadline = time.monotonic() + timeout
    while len(items) < n and time.monotonic() < deadline:
        time.sleep(0.005)
    return len(items)


def test_port_names_must_be_slash_prefixed():
    validate_port_name("/fine/name")
    for bad in ("", "noslash", "/has space", "/tab\there"):
        with pytest.raises(BadPortName):
            validate_port_name(bad)


def test_register_rejects_duplicates(registry):
    registry.register("/dup")
    with pytest.raises(DuplicateName):
        registry.register("/dup")


def test_lookup_unknown_port_raises(registry):
    with pytest.raises(UnknownPort):
        registry.lookup("/nobody/home")


def test_static_table_resolves_without_local_port(registry):
    registry.load_static({"/remote/thing": {"host": "127.0.0.1", "tcp_port": 19999}})
    addr = registry.lookup("/remote/thing")
    assert addr.tcp_port == 19999


def test_publish_reaches_subscriber_in_order(registry):
    got = []
    done = threading.Event()
    sink = registry.register("/sink")
    sink.subscribe(collect(got, done, 500))
    src = registry.register("/src")
    src.connect("/sink")
    for i in range(500):
        src.publish({"i": i})
    assert done.wait(10.0)
    assert [m.payload["i"] for m in got] == list(range(500))
    # per-connection sequence numbers are strictly increasing
    seqs = [m.seq for m in got]
    assert seqs == sorted(seqs)


def test_round_trip_echo_preserves_payloads(registry):
    n = 300
    back = []
    done = threading.Event()

    echo_port = registry.register("/echo")
    home = registry.register("/home")
    home.subscribe(collect(back, done, n))
    echo_port.connect("/home")
    echo_port.subscribe(lambda m: echo_port.publish(m.payload, kind=MessageKind.REPLY))
    home.connect("/echo")

    sent = [{"i": i, "blob": "x" * (i % 17)} for i in range(n)]
    for p in sent:
        home.publish(p)
    assert done.wait(10.0)
    assert [m.payload for m in back] == sent
    assert all(m.kind is MessageKind.REPLY for m in back)


def test_reconnect_after_subscriber_restart(registry):
    got = []
    sub = registry.register("/flaky")
    sub.subscribe(collect(got))
    src = registry.register("/steady")
    conn = src.connect("/flaky")

    src.publish({"phase": "before"})
    assert wait_count(got, 1) == 1

    registry.deregister("/flaky")
    time.sleep(0.05)
    src.publish({"phase": "lost"})  # at-most-once: dropped while down

    sub2 = registry.register("/flaky")
    sub2.subscribe(collect(got))
    deadline = time.monotonic() + 10.0
    while time.monotonic() < deadline:
        src.publish({"phase": "after"})
        if any(m.payload.get("phase") == "after" for m in got):
            break
        time.sleep(0.05)
    assert any(m.payload.get("phase") == "after" for m in got)
    assert conn.live


def test_oversized_frame_is_rejected_on_send():
    msg = PortMessage(seq=1, sent_at=0, kind=MessageKind.EVENT,
                      payload={"blob": "y" * (MAX_FRAME_BYTES + 1)})
    with pytest.raises(FrameTooLarge):
        msg.encode()


def test_command_kind_survives_the_wire(registry):
    got = []
    done = threading.Event()
    sink = registry.register("/kinds")
    sink.subscribe(collect(got, done, 1))
    src = registry.register("/kinds-src")
    src.connect("/kinds")
    src.publish({"verb": "go"}, kind=MessageKind.COMMAND)
    assert done.wait(5.0)
    assert got[0].kind is MessageKind.COMMAND


json_scalars = st.one_of(
    st.none(), st.booleans(), st.integers(min_value=-10**9, max_value=10**9),
    st.text(max_size=40),
)


@settings(max_examples=100, deadline=None)
@given(payload=st.dictionaries(st.text(min_size=1, max_size=10), json_scalars, max_size=6),
       seq=st.integers(min_value=0, max_value=2**31),
       kind=st.sampled_from(list(MessageKind)))
def test_frame_encode_decode_round_trip(payload, seq, kind):
    msg = PortMessage(seq=seq, sent_at=123, kind=kind, payload=payload)
    body = msg.encode()[4:]
    decoded = PortMessage.decode(body)
    assert decoded == msg
