"""Attacker toolkit: phantom devices built only from information the attacker holds."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .agents import device_request
from .core import (
    DeviceIdentity,
    InfoCategory,
    LegitimacyInfo,
    PlatformType,
    ProtocolRules,
    int_to_mac,
    mac_to_int,
)
from .netlab import CLOUD, Connection, Network, Pending
from .wire import AccountRef, Code, Method, Request, RequestCtx, Response, success

_PLACEHOLDER_MAC = "00:00:00:00:00:00"


class InsufficientInformation(Exception):
    def __init__(self, field_name: str, category: Optional[InfoCategory]):
        label = category.value if isinstance(category, InfoCategory) else "not obtainable"
        super().__init__(f"missing {field_name} ({label})")
        self.field = field_name
        self.category = category


class ProbeResult(enum.Enum):
    TAKEN = "Taken"
    OCCUPIED = "Free-and-now-occupied"


class ProbeError(Exception):
    def __init__(self, code: int, msg: str = ""):
        super().__init__(f"bind probe rejected with {code} {msg}".strip())
        self.code = code


def granted_knowledge(schema: Mapping[str, InfoCategory], grants: Iterable[InfoCategory],
                      identity: DeviceIdentity, legitimacy: LegitimacyInfo) -> dict:
    """Project a victim's true information onto what the grants let an attacker learn."""
    grants = set(grants)
    out = {}
    for name, category in schema.items():
        if category not in grants:
            continue
        if name == "sign":
            out[name] = True  # the ability to compute a signature with a known key
            continue
        value = getattr(identity, name, None) if hasattr(identity, name) else None
        if value is None:
            value = getattr(legitimacy, name, None)
        if value is not None:
            out[name] = value
    return out


@dataclass(eq=False)
class PhantomDevice:
    """A program impersonating a device at the protocol level."""

    name: str
    rules: ProtocolRules
    schema: dict
    knowledge: dict
    attacker_account: Optional[AccountRef] = None
    login_flood_period: int = 1
    device_id: Optional[str] = None
    token: Optional[str] = None
    conn: Optional[Connection] = None
    net: Optional[Network] = None
    received: list = field(default_factory=list)
    harvest_errors: dict = field(default_factory=dict)
    _flooding: bool = False
    _rid: int = 0

    def __post_init__(self):
        if self.device_id is None and self.knowledge.get("device_id"):
            self.device_id = self.knowledge["device_id"]

    def attached(self, net: Network) -> None:
        self.net = net

    # --- information discipline -------------------------------------------

    def require(self, name: str):
        if name in self.knowledge:
            return self.knowledge[name]
        raise InsufficientInformation(name, self.schema.get(name))

    @property
    def claimed_identity(self) -> DeviceIdentity:
        k = self.knowledge
        return DeviceIdentity(mac=k.get("mac", _PLACEHOLDER_MAC), model=k.get("model", ""),
                              cid=k.get("cid"), sn=k.get("sn"), device_id=self.device_id)

    @property
    def claimed_legitimacy(self) -> LegitimacyInfo:
        k = self.knowledge
        return LegitimacyInfo(key=k.get("key"), hwid=k.get("hwid"), tagkey=k.get("tagkey"))

    def _next_id(self) -> int:
        self._rid += 1
        return self._rid

    # --- inbound ------------------------------------------------------------

    def receive(self, src: str, req: Request, conn) -> Response:
        self.received.append((self.net.clock if self.net else 0, src, req.method.value,
                              dict(req.params)))
        if req.method is Method.PROVISION and req.account is not None:
            self.attacker_account = req.account
        if req.method is Method.DISCOVER:
            return success(req, mac=self.knowledge.get("mac", _PLACEHOLDER_MAC),
                           model=self.knowledge.get("model", ""), uuid=self.device_id)
        return success(req)

    def on_connection_closed(self, conn: Connection) -> None:
        if conn is self.conn:
            self.conn = None

    # --- actions ------------------------------------------------------------

    def register(self) -> Pending:
        req = forge(Method.REGISTER_DEVICE, self)

        def done(p: Pending):
            if p.response is not None and p.response.ok:
                self.device_id = p.response.data["uuid"]
        return self.net.send(self.name, CLOUD, req, on_reply=done)

    def login(self) -> Pending:
        req = forge(Method.LOGIN_DEVICE, self)
        conn = self.net.connect(self.name, CLOUD)
        self.conn = conn

        def done(p: Pending):
            if p.response is not None and p.response.ok:
                self.token = p.response.data["token"]
        return self.net.send(self.name, CLOUD, req, conn=conn, on_reply=done)

    def bind(self) -> Pending:
        return self.net.send(self.name, CLOUD, forge(Method.BIND_DEVICE, self))

    def unbind(self) -> Pending:
        return self.net.send(self.name, CLOUD, forge(Method.UNBIND_DEVICE, self))

    def upload_status(self, value) -> Pending:
        req = forge(Method.STATUS_UPLOAD, self, {"status": value})
        return self.net.send(self.name, CLOUD, req, conn=self.conn)

    def flood(self, period: Optional[int] = None) -> None:
        """Log in again every ``period`` ticks until :meth:`stop_flood`."""
        forge(Method.LOGIN_DEVICE, self)  # fail fast when information is missing
        self._flooding = True
        self.login_flood_period = period or self.login_flood_period
        self.net.at(0, self._flood_tick)

    def _flood_tick(self) -> None:
        if not self._flooding:
            return
        self.login()
        self.net.at(self.login_flood_period, self._flood_tick)

    def stop_flood(self) -> None:
        self._flooding = False


def forge(kind: Method, phantom: PhantomDevice, params: Optional[dict] = None) -> Request:
    """Build a schema-valid device request from the phantom's knowledge only."""
    rules = phantom.rules
    params = dict(params or {})
    account = None
    for name in rules.legitimacy_fields:
        if kind in (Method.REGISTER_DEVICE, Method.LOGIN_DEVICE, Method.BIND_DEVICE,
                    Method.UNBIND_DEVICE):
            phantom.require(name)
    if kind is Method.REGISTER_DEVICE:
        if rules.platform is not PlatformType.TYPE_I:
            raise InsufficientInformation("register", None)
        for name in rules.identity_fields:
            phantom.require(name)
        params.setdefault("model", phantom.require("model"))
        params.setdefault("mac", phantom.require("mac"))
        if "sn" in rules.identity_fields:
            params.setdefault("sn", phantom.require("sn"))
    elif kind is Method.OTA_UPDATE:
        if "model" not in params:
            params["model"] = phantom.require("model")
    elif kind in (Method.LOGIN_DEVICE, Method.BIND_DEVICE, Method.UNBIND_DEVICE,
                  Method.STATUS_UPLOAD):
        if not phantom.device_id:
            category = phantom.schema.get("device_id")
            raise InsufficientInformation("device_id", category)
        if kind is Method.BIND_DEVICE:
            if phantom.attacker_account is None:
                raise InsufficientInformation("account", None)
            account = phantom.attacker_account
        if kind is Method.UNBIND_DEVICE:
            if not phantom.token:
                raise InsufficientInformation("token", None)
            params.setdefault("token", phantom.token)
    else:
        raise ValueError(f"{kind.value} is not a device-originated request")
    if kind is Method.REGISTER_DEVICE and "cid" in rules.identity_fields:
        phantom.require("cid")
    req = device_request(rules, kind, params, identity=phantom.claimed_identity,
                         legitimacy=phantom.claimed_legitimacy, device_id=phantom.device_id,
                         account=account, time=phantom.net.clock if phantom.net else 0,
                         rid=phantom._next_id())
    return req.validate()


def enumerate_macs(prefix: str, low: int = 0, count: int = 1 << 16, *, model: str = "",
                   cid: Optional[str] = None, serials: Optional[Mapping[str, str]] = None
                   ) -> list[DeviceIdentity]:
    """``count`` candidate identities sharing the 3-byte ``prefix``, consecutive suffixes."""
    if not 0 < count <= 1 << 24 or not 0 <= low or low + count > 1 << 24:
        raise ValueError("suffix range must stay within 3 bytes")
    base = mac_to_int(prefix.rstrip(":") + ":00:00:00") if len(prefix) <= 8 else mac_to_int(prefix)
    base &= ~0xFFFFFF
    out = []
    for i in range(low, low + count):
        mac = int_to_mac(base | i)
        sn = serials.get(mac) if serials else None
        out.append(DeviceIdentity(mac=mac, model=model, cid=cid, sn=sn))
    return out


def bind_probe(net: Network, src: str, device_id: str, attacker_account: AccountRef) -> ProbeResult:
    """Try to bind ``device_id`` to the attacker; already-bound ids report Taken."""
    req = Request(Method.APP_BIND, {}, 1, request_ctx=RequestCtx(uuid=device_id),
                  account=attacker_account)
    pending = net.call(src, CLOUD, req)
    resp = pending.response
    if resp is None:
        raise ProbeError(-1, pending.status)
    if resp.ok:
        return ProbeResult.OCCUPIED
    if resp.code == Code.ALREADY_BOUND:
        return ProbeResult.TAKEN
    raise ProbeError(int(resp.code), resp.msg)


def harvest_firmware(phantom: PhantomDevice, models: Iterable[str]) -> dict:
    """One OTA request per model; rejected models land in ``phantom.harvest_errors``."""
    images = {}
    for model in models:
        req = forge(Method.OTA_UPDATE, phantom, {"model": model})
        pending = phantom.net.call(phantom.name, CLOUD, req)
        resp = pending.response
        if resp is not None and resp.ok:
            images[model] = resp.data["image"]
        else:
            phantom.harvest_errors[model] = None if resp is None else int(resp.code)
    return images
