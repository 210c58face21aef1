"""Explicit-state breadth-first exploration of reachable state combinations.

Each state is a whole :class:`World` with timers disabled.  A step runs one
enabled action (an app, device or attacker move) to quiescence; every
combination stamped on the trace along the way counts as reached.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from ..cloud import PolicyConfig
from ..core import DeviceState, StateCombination, legal_combination
from ..phantom import InsufficientInformation
from .profiles import get_profile
from .world import World


@dataclass(frozen=True)
class ExploreResult:
    reached: frozenset
    illegal: frozenset
    states: int
    depth: int

    def sorted_reached(self) -> list:
        return sorted(self.reached, key=lambda c: tuple(s.value for s in c))


def _reset(w: World):
    if w.device.state is DeviceState.S1 and w.device.conn is None:
        return None
    w.net.immediate(w.device.reset)
    return True


ACTIONS: list[tuple[str, Callable]] = [
    ("app.discover", lambda w: w.app.discover(w.device.name)),
    ("app.provision", lambda w: w.app.provision(w.device.name)),
    ("app.bind", lambda w: w.app.bind() if w.device.type_i else None),
    ("app.unbind", lambda w: w.app.unbind()),
    ("app.control", lambda w: w.app.control("toggle")),
    ("device.register", lambda w: w.device.register()),
    ("device.bind", lambda w: w.device.bind()),
    ("device.login", lambda w: w.device.login()),
    ("device.status", lambda w: w.device.upload_status(1)),
    ("device.reset", _reset),
]

ATTACKER_ACTIONS: list[tuple[str, Callable]] = [
    ("phantom.register", lambda w: w.phantom.register() if w.device.type_i else None),
    ("phantom.login", lambda w: w.phantom.login() if w.phantom.device_id else None),
    ("phantom.unbind", lambda w: w.phantom.unbind() if w.device.type_i else None),
    ("phantom.bind", lambda w: None if w.device.type_i else w.phantom.bind()),
    ("trudy.bind", lambda w: w.trudy_app.bind(w.phantom.device_id)
     if w.device.type_i and w.phantom.device_id else None),
    ("trudy.control", lambda w: w.trudy_app.control("toggle") if w.trudy_app.device_id else None),
]


def _key(w: World) -> tuple:
    c, d, app, ph = w.cloud, w.device, w.app, getattr(w, "phantom", None)
    vid = w.victim_id
    rec = c.records.get(vid) if vid else None
    sess = c.sessions.get(vid) if vid else None
    parts = [
        w.combination(), vid is not None, rec is not None and rec.registered,
        c.owner_of(vid) if vid else None, sess.holder if sess else None,
        d.device_id is not None, d.owner is not None, d.local_binding,
        d.conn is not None and d.conn.open, d.token is not None and rec is not None
        and d.token in rec.tokens, d.pending_proof is not None,
        app.device_id is not None, bool(app.known_devices),
        w.trudy_app.state, w.trudy_app.device_id is not None,
    ]
    if ph is not None:
        parts += [ph.device_id is not None, ph.conn is not None and ph.conn.open,
                  ph.token is not None and rec is not None and ph.token in rec.tokens]
    return tuple(parts)


def _apply(w: World, fn: Callable) -> bool:
    try:
        result = fn(w)
    except InsufficientInformation:
        return False
    if result is None:
        return False
    w.net.run_until()
    return True


def _harvest(w: World, into: set) -> None:
    for rec in w.net.trace:
        if rec["combo"] is not None:
            into.add(StateCombination.parse(rec["combo"]))
    w.net.trace = []


def explore_reachable(profile, policy: Optional[PolicyConfig] = None, depth: int = 12, *,
                      attacker: bool = False, seed: int = 0,
                      max_states: int = 200_000) -> ExploreResult:
    """All combinations reachable within ``depth`` actions, and the illegal subset."""
    profile = get_profile(profile)
    policy = policy or profile.policy()
    root = World(profile, policy, seed=seed, timers=False, wire_check=False)
    if attacker:
        root.phantom = root.add_phantom()
        root.phantom.attacker_account = root.trudy
        root.trudy_app.device_id = root.phantom.device_id
    actions = ACTIONS + (ATTACKER_ACTIONS if attacker else [])
    reached = {root.combination()}
    root.net.trace = []
    seen = {_key(root)}
    frontier = deque([(root, 0)])
    while frontier and len(seen) < max_states:
        world, d = frontier.popleft()
        if d >= depth:
            continue
        for _, fn in actions:
            nxt = copy.deepcopy(world)
            if not _apply(nxt, fn):
                continue
            _harvest(nxt, reached)
            reached.add(nxt.combination())
            key = _key(nxt)
            if key in seen:
                continue
            seen.add(key)
            frontier.append((nxt, d + 1))
    illegal = frozenset(c for c in reached if not legal_combination(policy.platform, c))
    return ExploreResult(frozenset(reached), illegal, len(seen), depth)
