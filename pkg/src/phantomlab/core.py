"""Domain types and the three entity state machines.

State numbering follows the reference life-cycle:

    cloud   S1 Unregistered  S2 Registered   S3 Bound        S4 Running
    device  S1 Factory       S2 Provisioned  S3 Registered/  S4 Operational
                                             locally bound
    app     S1 Idle          S2 Setup        S3 Bound        S4 Controlling

The cloud's unbind edge (3) and status-upload edge (6) keep their numbers;
every other edge carries an internal name.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union


class PlatformType(enum.Enum):
    TYPE_I = "TypeI"
    TYPE_II = "TypeII"


class InfoCategory(enum.Enum):
    PUBLIC = "P"
    GUESSABLE = "G"
    HARD_CODED = "H"


class Entity(enum.Enum):
    CLOUD = "cloud"
    DEVICE = "device"
    APP = "app"


class CloudState(enum.Enum):
    S1 = 1
    S2 = 2
    S3 = 3
    S4 = 4


class DeviceState(enum.Enum):
    S1 = 1
    S2 = 2
    S3 = 3
    S4 = 4


class AppState(enum.Enum):
    S1 = 1
    S2 = 2
    S3 = 3
    S4 = 4


EntityState = Union[CloudState, DeviceState, AppState]

_STATE_ENUM = {Entity.CLOUD: CloudState, Entity.DEVICE: DeviceState, Entity.APP: AppState}


class TransitionEvent(enum.Enum):
    REGISTER = "register"
    BIND = "bind"
    LOGIN = "login"
    UNBIND = "unbind"
    RESET = "reset"
    STATUS_UPLOAD = "status-upload"
    CONTROL = "control"
    PROVISION = "provision"
    DISCOVER = "discover"


class Flaw(enum.Enum):
    F1_1 = "F1.1"
    F1_2 = "F1.2"
    F1_3 = "F1.3"
    F2 = "F2"
    F3 = "F3"
    F4 = "F4"

    @classmethod
    def parse(cls, text: str) -> "Flaw":
        norm = text.strip().upper().replace("_", ".")
        for flaw in cls:
            if flaw.value == norm:
                return flaw
        raise ValueError(f"unknown flaw {text!r}")


class Mitigation(enum.Enum):
    M1_DEVICE_AUTH = "M1"
    M2_AUTHZ_CHECKS = "M2"
    M3_STATE_GUARD = "M3"

    @classmethod
    def parse(cls, text: str) -> "Mitigation":
        head = text.strip().upper()[:2]
        for mit in cls:
            if mit.value == head:
                return mit
        raise ValueError(f"unknown mitigation {text!r}")


def format_flaws(flaws) -> str:
    order = list(Flaw)
    return "{" + ",".join(f.value for f in sorted(flaws, key=order.index)) + "}"


class StateCombination(NamedTuple):
    cloud: CloudState
    device: DeviceState
    app: AppState

    def labels(self) -> tuple[str, str, str]:
        return (self.cloud.name, self.device.name, self.app.name)

    def __str__(self) -> str:
        return "(" + ",".join(self.labels()) + ")"

    @classmethod
    def parse(cls, text) -> "StateCombination":
        """Accept ``"(S1,S4,S1)"``, ``"S1,S4,S1"`` or a 3-sequence of labels."""
        if isinstance(text, str):
            parts = re.findall(r"S[1-4]", text.upper())
        else:
            parts = [str(p).upper() for p in text]
        if len(parts) != 3:
            raise ValueError(f"not a state combination: {text!r}")
        return cls(CloudState[parts[0]], DeviceState[parts[1]], AppState[parts[2]])


def combo(cloud: int, device: int, app: int) -> StateCombination:
    return StateCombination(CloudState(cloud), DeviceState(device), AppState(app))


def _rows(*rows):
    out = set()
    for clouds, devices, apps in rows:
        for c in clouds:
            for d in devices:
                for a in apps:
                    out.add(combo(c, d, a))
    return frozenset(out)


LEGAL_COMBINATIONS = {
    PlatformType.TYPE_I: _rows(
        ((1,), (1, 2), (1, 2)),
        ((2,), (3,), (2,)),
        ((3,), (3,), (3,)),
        ((4,), (4,), (4,)),
    ),
    PlatformType.TYPE_II: _rows(
        ((2,), (1, 2), (1, 2)),
        ((3,), (3,), (3,)),
        ((4,), (4,), (4,)),
    ),
}

INITIAL_COMBINATION = {
    PlatformType.TYPE_I: combo(1, 1, 1),
    PlatformType.TYPE_II: combo(2, 1, 1),
}


def legal_combination(platform: PlatformType, combination: StateCombination) -> bool:
    return combination in LEGAL_COMBINATIONS[platform]


@dataclass(frozen=True)
class DeviceIdentity:
    """Identity information; ``device_id`` is absent on Type I devices until registration."""

    mac: str
    model: str
    cid: Optional[str] = None
    sn: Optional[str] = None
    device_id: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "mac", normalize_mac(self.mac))

    @property
    def vendor_prefix(self) -> str:
        return self.mac[:8]

    def field(self, name: str) -> Optional[str]:
        return getattr(self, name)


@dataclass(frozen=True)
class LegitimacyInfo:
    key: Optional[str] = None
    sign: Optional[str] = None
    hwid: Optional[str] = None
    tagkey: Optional[str] = None


_MAC_RE = re.compile(r"^[0-9A-F]{2}(:[0-9A-F]{2}){5}$")


def normalize_mac(mac: str) -> str:
    text = mac.strip().upper().replace("-", ":")
    if ":" not in text and len(text) == 12:
        text = ":".join(text[i:i + 2] for i in range(0, 12, 2))
    if not _MAC_RE.match(text):
        raise ValueError(f"malformed MAC address {mac!r}")
    return text


def mac_to_int(mac: str) -> int:
    return int(normalize_mac(mac).replace(":", ""), 16)


def int_to_mac(value: int) -> str:
    if not 0 <= value < 1 << 48:
        raise ValueError("MAC value out of range")
    raw = f"{value:012X}"
    return ":".join(raw[i:i + 2] for i in range(0, 12, 2))


@dataclass(frozen=True)
class ProtocolRules:
    """Per-platform protocol knowledge shared by the cloud, real devices and phantoms.

    ``identity_fields`` feed device-ID generation (Type I only); ``legitimacy_fields``
    must accompany every device-side request.
    """

    platform: PlatformType
    identity_fields: tuple[str, ...] = ()
    legitimacy_fields: tuple[str, ...] = ()
    device_side_unbind: bool = True


# --- state machines -------------------------------------------------------


@dataclass(frozen=True)
class GuardMode:
    """``strict`` fires only reference edges; otherwise flaw edges fire too."""

    strict: bool = True
    flaws: frozenset = frozenset()

    @classmethod
    def permissive(cls, flaws) -> "GuardMode":
        return cls(strict=False, flaws=frozenset(flaws))


STRICT = GuardMode()


class GuardRejection(Exception):
    def __init__(self, entity: Entity, state: EntityState, event: TransitionEvent):
        super().__init__(f"{entity.value} in {state.name} does not accept {event.value}")
        self.entity = entity
        self.state = state
        self.event = event


@dataclass(frozen=True)
class Edge:
    name: str
    source: int
    event: TransitionEvent
    target: int
    platforms: frozenset = frozenset(PlatformType)
    flaw: Optional[Flaw] = None


_I = frozenset({PlatformType.TYPE_I})
_II = frozenset({PlatformType.TYPE_II})
E = TransitionEvent


def _edges(*specs) -> tuple[Edge, ...]:
    return tuple(Edge(*spec) for spec in specs)


CLOUD_EDGES = _edges(
    ("register", 1, E.REGISTER, 2, _I),
    ("bind", 2, E.BIND, 3),
    ("first-login", 3, E.LOGIN, 4),
    ("status-upload(6)", 4, E.STATUS_UPLOAD, 4),
    ("control-relay", 4, E.CONTROL, 4),
    ("unbind(3)", 4, E.UNBIND, 1, _I),
    ("unbind(3)", 4, E.UNBIND, 2, _II),
    ("reset-rollback", 2, E.RESET, 1, _I),
    ("reset-rollback", 3, E.RESET, 1, _I),
    ("reset-rollback", 4, E.RESET, 1, _I),
    ("reset-rollback", 3, E.RESET, 2, _II),
    ("reset-rollback", 4, E.RESET, 2, _II),
    # edges that only fire when the named flaw is present
    ("re-register", 2, E.REGISTER, 2, _I, Flaw.F1_1),
    ("re-register", 3, E.REGISTER, 3, _I, Flaw.F1_1),
    ("re-register", 4, E.REGISTER, 4, _I, Flaw.F1_1),
    ("rebind", 3, E.BIND, 3, _II, Flaw.F1_2),
    ("rebind", 4, E.BIND, 3, _II, Flaw.F1_2),
    ("relogin-running", 4, E.LOGIN, 4, frozenset(PlatformType), Flaw.F1_3),
    ("dangling-upload", 1, E.STATUS_UPLOAD, 1, frozenset(PlatformType), Flaw.F2),
    ("dangling-upload", 2, E.STATUS_UPLOAD, 2, frozenset(PlatformType), Flaw.F2),
    ("dangling-control", 1, E.CONTROL, 1, frozenset(PlatformType), Flaw.F2),
    ("dangling-control", 2, E.CONTROL, 2, frozenset(PlatformType), Flaw.F2),
)

DEVICE_EDGES = _edges(
    ("discover", 1, E.DISCOVER, 1),
    ("discover", 2, E.DISCOVER, 2),
    ("discover", 3, E.DISCOVER, 3),
    ("discover", 4, E.DISCOVER, 4),
    ("provision", 1, E.PROVISION, 2),
    ("provision", 2, E.PROVISION, 2),
    ("register", 2, E.REGISTER, 3, _I),
    ("local-bind", 2, E.BIND, 3, _II),
    ("login", 3, E.LOGIN, 4),
    ("reconnect", 4, E.LOGIN, 4),
    ("status-upload", 4, E.STATUS_UPLOAD, 4),
    ("execute", 4, E.CONTROL, 4),
    ("erase-binding", 3, E.UNBIND, 2),
    ("erase-binding", 4, E.UNBIND, 2),
    ("reset", 1, E.RESET, 1),
    ("reset", 2, E.RESET, 1),
    ("reset", 3, E.RESET, 1),
    ("reset", 4, E.RESET, 1),
)

APP_EDGES = _edges(
    ("add-device", 1, E.DISCOVER, 2),
    ("add-device", 2, E.DISCOVER, 2),
    ("provision", 2, E.PROVISION, 2),
    ("bound", 2, E.BIND, 3),
    ("device-online", 3, E.LOGIN, 4),
    ("device-online", 4, E.LOGIN, 4),
    ("control", 4, E.CONTROL, 4),
    ("monitor", 4, E.STATUS_UPLOAD, 4),
    ("unbound", 3, E.UNBIND, 1),
    ("unbound", 4, E.UNBIND, 1),
)

_TABLES = {Entity.CLOUD: CLOUD_EDGES, Entity.DEVICE: DEVICE_EDGES, Entity.APP: APP_EDGES}


def find_edge(entity: Entity, state: EntityState, event: TransitionEvent,
              guard: GuardMode = STRICT,
              platform: PlatformType = PlatformType.TYPE_I) -> Optional[Edge]:
    for edge in _TABLES[entity]:
        if edge.source != state.value or edge.event is not event:
            continue
        if platform not in edge.platforms:
            continue
        if edge.flaw is not None and (guard.strict or edge.flaw not in guard.flaws):
            continue
        return edge
    return None


def entity_step(entity: Entity, state: EntityState, event: TransitionEvent,
                guard: GuardMode = STRICT,
                platform: PlatformType = PlatformType.TYPE_I) -> EntityState:
    """Fire one edge; raise :class:`GuardRejection` when no edge accepts the event."""
    if not isinstance(state, _STATE_ENUM[entity]):
        raise TypeError(f"{state!r} is not a {entity.value} state")
    if entity is Entity.CLOUD and platform is PlatformType.TYPE_II and state is CloudState.S1:
        raise GuardRejection(entity, state, event)
    edge = find_edge(entity, state, event, guard, platform)
    if edge is None:
        raise GuardRejection(entity, state, event)
    return _STATE_ENUM[entity](edge.target)


def edge_name(entity: Entity, state: EntityState, event: TransitionEvent,
              guard: GuardMode = STRICT,
              platform: PlatformType = PlatformType.TYPE_I) -> Optional[str]:
    edge = find_edge(entity, state, event, guard, platform)
    return edge.name if edge else None
