"""Deterministic discrete-event transport.

One :class:`Network` owns the clock, the event queue, LAN segments, connections
and the trace.  Events run in ``(tick, insertion order)`` order.  Every record
produced while an event runs is stamped, once the event finishes, with the
observed state combination, so a single request/response exchange is atomic
from the observer's point of view.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from . import wire
from .wire import Request, Response

CLOUD = "cloud"


class RoutingDenied(Exception):
    pass


@dataclass
class Segment:
    id: str
    nat: bool = True
    members: set = field(default_factory=set)


@dataclass
class Connection:
    id: int
    a: str
    b: str
    opened_at: int
    open: bool = True
    closed_at: Optional[int] = None

    def joins(self, x: str, y: str) -> bool:
        return {x, y} == {self.a, self.b}

    def peer(self, name: str) -> str:
        return self.b if name == self.a else self.a


@dataclass
class Pending:
    src: str
    dst: str
    message: Request
    status: str = "pending"
    response: Optional[Response] = None

    @property
    def resolved(self) -> bool:
        return self.status != "pending"


class Scheduler:
    def __init__(self, seed: int = 0):
        self.clock = 0
        self.rng = random.Random(seed)
        self._queue: list = []
        self._seq = 0

    def schedule_at(self, time: int, fn: Callable, *args) -> None:
        if time < self.clock:
            raise ValueError(f"cannot schedule in the past ({time} < {self.clock})")
        heapq.heappush(self._queue, (time, self._seq, fn, args))
        self._seq += 1

    def schedule(self, delay: int, fn: Callable, *args) -> None:
        self.schedule_at(self.clock + delay, fn, *args)

    def next_time(self) -> Optional[int]:
        return self._queue[0][0] if self._queue else None

    def __len__(self) -> int:
        return len(self._queue)

    def pop(self):
        time, _, fn, args = heapq.heappop(self._queue)
        self.clock = time
        return fn, args


class Network:
    """Segments, connections, message delivery and the event trace."""

    def __init__(self, seed: int = 0, *, wire_check: bool = True, loss: float = 0.0):
        self.sched = Scheduler(seed)
        self.wire_check = wire_check
        self.loss = loss
        self.segments: dict[str, Segment] = {}
        self.endpoints: dict[str, Any] = {}
        self.segment_of: dict[str, str] = {}
        self.connections: dict[int, Connection] = {}
        self.trace: list[dict] = []
        self._observer: Optional[Callable[[], tuple]] = None
        self._last_combo = None
        self._unstamped = 0
        self._in_event = 0
        self._conn_ids = 0

    @property
    def clock(self) -> int:
        return self.sched.clock

    # --- topology ---------------------------------------------------------

    def add_segment(self, seg_id: str, nat: bool = True) -> Segment:
        seg = self.segments.setdefault(seg_id, Segment(seg_id, nat))
        return seg

    def attach(self, endpoint, segment: str) -> None:
        name = endpoint.name
        if name in self.endpoints:
            raise ValueError(f"duplicate endpoint {name!r}")
        self.add_segment(segment, nat=segment != "internet")
        self.segments[segment].members.add(name)
        self.endpoints[name] = endpoint
        self.segment_of[name] = segment
        if hasattr(endpoint, "attached"):
            endpoint.attached(self)

    def route_allowed(self, src: str, dst: str, conn: Optional[Connection] = None) -> bool:
        if src not in self.endpoints or dst not in self.endpoints:
            return False
        if conn is not None:
            return conn.joins(src, dst)
        same = self.segment_of[src] == self.segment_of[dst]
        return same or not self.segments[self.segment_of[dst]].nat

    def connect(self, a: str, b: str) -> Connection:
        if not self.route_allowed(a, b):
            raise RoutingDenied(f"{a} cannot open a connection to {b}")
        self._conn_ids += 1
        conn = Connection(self._conn_ids, a, b, self.clock)
        self.connections[conn.id] = conn
        return conn

    def close(self, conn: Optional[Connection]) -> None:
        if conn is None or not conn.open:
            return
        conn.open = False
        conn.closed_at = self.clock
        for name in (conn.a, conn.b):
            hook = getattr(self.endpoints.get(name), "on_connection_closed", None)
            if hook is not None:
                hook(conn)

    # --- observation ------------------------------------------------------

    def observe(self, observer: Optional[Callable[[], tuple]]) -> None:
        """``observer()`` returns ``(StateCombination, legal)`` for trace stamping."""
        self._observer = observer
        self._last_combo = observer()[0] if observer else None

    def record(self, kind: str, src: Optional[str] = None, dst: Optional[str] = None,
               method: Optional[str] = None, code: Optional[int] = None) -> dict:
        rec = {"tick": self.clock, "kind": kind, "src": src, "dst": dst,
               "method": method, "code": code, "combo": None, "legal": None}
        self.trace.append(rec)
        self._unstamped += 1
        if not self._in_event:
            self._stamp()
        return rec

    def _stamp(self) -> None:
        if self._observer is None:
            self._unstamped = 0
            return
        current, legal = self._observer()
        if current != self._last_combo:
            previous = self._last_combo
            self._last_combo = current
            for i, name in enumerate(("cloud", "device", "app")):
                if previous is None or previous[i] != current[i]:
                    self.trace.append({"tick": self.clock, "kind": "transition", "src": name,
                                       "dst": None, "method": None, "code": None,
                                       "combo": None, "legal": None})
                    self._unstamped += 1
        labels = list(current.labels())
        for rec in self.trace[len(self.trace) - self._unstamped:]:
            rec["combo"] = labels
            rec["legal"] = legal
        self._unstamped = 0

    # --- events -----------------------------------------------------------

    def at(self, delay: int, fn: Callable, *args) -> None:
        self.sched.schedule(delay, fn, *args)

    def _run_event(self, fn, args) -> None:
        self._in_event += 1
        try:
            fn(*args)
        finally:
            self._in_event -= 1
        if not self._in_event:
            self._stamp()

    def step(self) -> bool:
        if not len(self.sched):
            return False
        fn, args = self.sched.pop()
        self._run_event(fn, args)
        return True

    def immediate(self, fn: Callable, *args):
        """Run ``fn`` now as its own event (used for local, non-message actions)."""
        box = []
        self._run_event(lambda: box.append(fn(*args)), ())
        return box[0]

    def run_until(self, t_max: Optional[int] = None, *, mark_horizon: bool = False) -> bool:
        """Run events up to ``t_max`` (inclusive) or to quiescence; True if quiescent."""
        while len(self.sched):
            nxt = self.sched.next_time()
            if t_max is not None and nxt > t_max:
                break
            self.step()
        if t_max is not None and t_max > self.clock:
            self.sched.clock = t_max
        quiescent = not len(self.sched)
        if mark_horizon and not quiescent:
            self.record("horizon")
        return quiescent

    def run_for(self, ticks: int) -> bool:
        return self.run_until(self.clock + ticks)

    # --- messages ---------------------------------------------------------

    def send(self, src: str, dst: str, message: Request, *, delay: int = 1,
             conn: Optional[Connection] = None,
             on_reply: Optional[Callable] = None) -> Pending:
        pending = Pending(src, dst, message)
        if not self.route_allowed(src, dst, conn):
            pending.status = "denied"
            self.record("denied", src, dst, message.method.value)
            return pending
        self.sched.schedule(delay, self._deliver, pending, conn, on_reply)
        return pending

    def _deliver(self, pending: Pending, conn, on_reply) -> None:
        if conn is not None and not conn.open:
            pending.status = "dropped"
            self.record("dropped", pending.src, pending.dst, pending.message.method.value)
        elif self.loss and self.sched.rng.random() < self.loss:
            pending.status = "dropped"
            self.record("dropped", pending.src, pending.dst, pending.message.method.value)
        else:
            pending.response = self._hand_over(pending.src, pending.dst, pending.message, conn)
            pending.status = "delivered"
        if on_reply is not None:
            on_reply(pending)

    def _hand_over(self, src: str, dst: str, message: Request, conn) -> Optional[Response]:
        rec = self.record("delivered", src, dst, message.method.value)
        if self.wire_check:
            message = wire.decode(wire.encode(message))
        response = self.endpoints[dst].receive(src, message, conn)
        if response is not None:
            if self.wire_check:
                response = wire.decode(wire.encode(response))
            rec["code"] = int(response.code)
        return response

    def deliver_now(self, src: str, dst: str, message: Request,
                    conn: Optional[Connection] = None) -> Optional[Response]:
        """Synchronous delivery inside the current event (cloud pushes and relays)."""
        if not self.route_allowed(src, dst, conn):
            self.record("denied", src, dst, message.method.value)
            return None
        if conn is not None and not conn.open:
            self.record("dropped", src, dst, message.method.value)
            return None
        return self._hand_over(src, dst, message, conn)

    def wait(self, pending: Pending) -> Pending:
        """Run the scheduler until ``pending`` resolves (or the queue drains)."""
        while not pending.resolved and self.step():
            pass
        return pending

    def call(self, src: str, dst: str, message: Request, *, delay: int = 1,
             conn: Optional[Connection] = None) -> Pending:
        """Send and run the scheduler until this exchange resolves."""
        return self.wait(self.send(src, dst, message, delay=delay, conn=conn))

    # --- output -----------------------------------------------------------

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"
                       for rec in self.trace)

    def write_trace(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.trace_jsonl())
