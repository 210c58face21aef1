import pytest
from hypothesis import given, settings, strategies as st

from phantomlab.netlab import CLOUD, Network, RoutingDenied, Scheduler
from phantomlab.wire import Method, Request, success


class Echo:
    def __init__(self, name):
        self.name = name
        self.got = []
        self.closed = []

    def receive(self, src, req, conn):
        self.got.append((src, req.method.value))
        return success(req, echo=src)

    def on_connection_closed(self, conn):
        self.closed.append(conn.id)


def lab(**kw):
    net = Network(**kw)
    net.add_segment("internet", nat=False)
    for name, seg in ((CLOUD, "internet"), ("dev", "home"), ("app", "home"), ("evil", "attacker")):
        net.attach(Echo(name), seg)
    return net


def ping(i=1):
    return Request(Method.DISCOVER, {}, i)


def test_nat_routing_rules():
    net = lab()
    assert net.route_allowed("dev", CLOUD)
    assert net.route_allowed("dev", "app")
    assert not net.route_allowed(CLOUD, "dev")
    assert not net.route_allowed("evil", "dev")
    assert not net.route_allowed("dev", "nobody")


def test_connection_allows_push_and_close_notifies_both_ends():
    net = lab()
    conn = net.connect("dev", CLOUD)
    assert net.route_allowed(CLOUD, "dev", conn)
    assert not net.route_allowed(CLOUD, "app", conn)
    net.close(conn)
    assert net.endpoints["dev"].closed == [conn.id] == net.endpoints[CLOUD].closed
    net.close(conn)  # idempotent
    assert net.endpoints["dev"].closed == [conn.id]
    with pytest.raises(RoutingDenied):
        net.connect(CLOUD, "dev")


def test_send_delivers_after_delay():
    net = lab()
    p = net.send("dev", CLOUD, ping(), delay=3)
    net.run_until(2)
    assert not p.resolved
    net.run_until()
    assert p.status == "delivered" and p.response.data == {"echo": "dev"}
    assert net.clock == 3


def test_denied_and_dropped_are_recorded():
    net = lab()
    assert net.send("evil", "dev", ping()).status == "denied"
    conn = net.connect("dev", CLOUD)
    p = net.send("dev", CLOUD, ping(), conn=conn)
    net.close(conn)
    net.run_until()
    assert p.status == "dropped"
    assert [r["kind"] for r in net.trace] == ["denied", "dropped"]


def test_same_tick_events_run_in_schedule_order():
    s = Scheduler()
    out = []
    for i in range(5):
        s.schedule_at(4, out.append, i)
    s.schedule_at(1, out.append, "first")
    while len(s):
        fn, args = s.pop()
        fn(*args)
    assert out == ["first", 0, 1, 2, 3, 4]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["dev", "app", "evil"]), st.integers(0, 5)),
                max_size=40), st.floats(0, 1), st.integers(0, 1000))
def test_message_conservation(sends, loss, seed):
    net = lab(seed=seed, loss=loss)
    pendings = [net.send(src, CLOUD, ping(i), delay=d) for i, (src, d) in enumerate(sends)]
    net.run_until()
    assert all(p.status in ("delivered", "dropped") for p in pendings)
    kinds = [r["kind"] for r in net.trace]
    assert len(kinds) == len(sends)
    assert kinds.count("delivered") == sum(p.status == "delivered" for p in pendings)
    assert len(net.endpoints[CLOUD].got) == kinds.count("delivered")


def test_loss_is_seeded():
    def run(seed):
        net = lab(seed=seed, loss=0.5)
        ps = [net.send("dev", CLOUD, ping(i)) for i in range(64)]
        net.run_until()
        return [p.status for p in ps]
    assert run(3) == run(3)
    assert run(3) != run(4)


def test_trace_jsonl_is_stable():
    def run():
        net = lab()
        net.call("dev", CLOUD, ping())
        net.at(5, lambda: None)
        net.run_until(2, mark_horizon=True)
        return net.trace_jsonl()
    text = run()
    assert text == run()
    assert text.splitlines()[-1].startswith('{"code":null,"combo":null,"dst":null,"kind":"horizon"')


def test_duplicate_endpoint_rejected():
    net = lab()
    with pytest.raises(ValueError):
        net.attach(Echo("dev"), "home")
