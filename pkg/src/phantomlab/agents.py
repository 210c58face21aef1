"""Legitimate device and mobile-app agents.

Both agents consult their own state machine before acting and only move state
when a response (or a cloud push) confirms the step, so every transition
happens inside the delivery event that caused it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .cloud import reset_proof
from .core import (
    STRICT,
    AppState,
    DeviceIdentity,
    DeviceState,
    Entity,
    GuardRejection,
    LegitimacyInfo,
    PlatformType,
    ProtocolRules,
    TransitionEvent,
    entity_step,
    find_edge,
)
from .netlab import CLOUD, Connection, Network, Pending, RoutingDenied
from .wire import (
    AccountRef,
    Code,
    Method,
    Request,
    RequestCtx,
    Response,
    SystemInfo,
    sign_request,
    success,
)

E = TransitionEvent

_SECRET_METHODS = {Method.REGISTER_DEVICE, Method.BIND_DEVICE, Method.UNBIND_DEVICE,
                   Method.LOGIN_DEVICE, Method.OTA_UPDATE}
_LEGIT_METHODS = {Method.BIND_DEVICE, Method.UNBIND_DEVICE, Method.LOGIN_DEVICE}


class LifecycleFailure(Exception):
    def __init__(self, phase: str, code: Optional[int], detail: str = ""):
        super().__init__(f"life-cycle failed at {phase} (code={code}) {detail}".strip())
        self.phase = phase
        self.code = code


def device_request(rules: ProtocolRules, method: Method, params: dict, *,
                   identity: DeviceIdentity, legitimacy: LegitimacyInfo,
                   device_id: Optional[str] = None, secret: Optional[str] = None,
                   account: Optional[AccountRef] = None, time: int = 0, rid: int = 0) -> Request:
    """Build a device-side request the way the platform's firmware would."""
    params = dict(params)
    if method in _LEGIT_METHODS:
        for name in rules.legitimacy_fields:
            if name == "mac":
                params["mac"] = identity.mac
            elif name in ("hwid", "tagkey"):
                params[name] = getattr(legitimacy, name)
    if secret is not None and method in _SECRET_METHODS:
        params["secret"] = secret
    uuid = device_id if method not in (Method.REGISTER_DEVICE, Method.OTA_UPDATE) else None
    system = SystemInfo(time=time)
    if "key" in rules.legitimacy_fields and legitimacy.key:
        system = SystemInfo(key=legitimacy.key, time=time)
    req = Request(method, params, rid, system, RequestCtx(identity.cid, uuid), account)
    if "sign" in rules.legitimacy_fields and legitimacy.key:
        req = sign_request(req, legitimacy.key)
    return req


class _Endpoint:
    name: str
    net: Optional[Network] = None
    segment: str = ""

    def attached(self, net: Network) -> None:
        self.net = net

    def _rid(self) -> int:
        self._next_id = getattr(self, "_next_id", 0) + 1
        return self._next_id


@dataclass(eq=False)
class DeviceAgent(_Endpoint):
    name: str
    identity: DeviceIdentity
    legitimacy: LegitimacyInfo
    rules: ProtocolRules
    secret: Optional[str] = None
    heartbeat_period: int = 10
    relogin_backoff: int = 10
    timers: bool = True
    use_secret: bool = False
    sync_reset: bool = False
    state: DeviceState = DeviceState.S1
    device_id: Optional[str] = None
    owner: Optional[AccountRef] = None
    local_binding: Optional[str] = None
    ssid: Optional[str] = None
    conn: Optional[Connection] = None
    token: Optional[str] = None
    status: object = None
    reset_counter: int = 0
    pending_proof: Optional[str] = None
    executed: list = field(default_factory=list)
    relogins: int = 0
    login_attempts: list = field(default_factory=list)
    _relogin_scheduled: bool = False

    def __post_init__(self):
        if self.device_id is None:
            self.device_id = self.identity.device_id

    @property
    def type_i(self) -> bool:
        return self.rules.platform is PlatformType.TYPE_I

    def can(self, event: TransitionEvent) -> bool:
        return find_edge(Entity.DEVICE, self.state, event, STRICT, self.rules.platform) is not None

    def _step(self, event: TransitionEvent) -> None:
        self.state = entity_step(Entity.DEVICE, self.state, event, STRICT, self.rules.platform)

    def request(self, method: Method, params: Optional[dict] = None,
                account: Optional[AccountRef] = None) -> Request:
        return device_request(
            self.rules, method, params or {}, identity=self.identity, legitimacy=self.legitimacy,
            device_id=self.device_id, secret=self.secret if self.use_secret else None,
            account=account, time=self.net.clock if self.net else 0, rid=self._rid())

    # --- inbound ----------------------------------------------------------

    def receive(self, src: str, req: Request, conn: Optional[Connection]) -> Response:
        if req.method is Method.DISCOVER:
            self._step(E.DISCOVER)
            return success(req, mac=self.identity.mac, model=self.identity.model,
                           uuid=self.device_id)
        if req.method is Method.PROVISION:
            if not self.can(E.PROVISION) or req.account is None:
                return Response(int(Code.GUARD_REJECTION), "not accepting provisioning", {}, req.id)
            self._step(E.PROVISION)
            self.owner = req.account
            self.ssid = req.params["ssid"]
            return success(req)
        from_cloud = src == CLOUD and conn is not None and conn is self.conn
        if req.method is Method.CONTROL_COMMAND and from_cloud and self.can(E.CONTROL):
            self._step(E.CONTROL)
            self.executed.append((self.net.clock, req.params.get("command"), req.params.get("value")))
            return success(req, executed=req.params.get("command"))
        if req.method is Method.UNBIND_DEVICE and from_cloud and self.can(E.UNBIND):
            self._step(E.UNBIND)
            self.local_binding = None
            self.owner = None
            self.token = None
            if self.type_i:
                self.device_id = None
            return success(req)
        return Response(int(Code.GUARD_REJECTION), "unexpected request", {}, req.id)

    def on_connection_closed(self, conn: Connection) -> None:
        if conn is not self.conn:
            return
        self.conn = None
        if self.state is DeviceState.S4:
            self._schedule_relogin()

    # --- life-cycle actions -----------------------------------------------

    def register(self) -> Optional[Pending]:
        if not self.type_i or not self.can(E.REGISTER) or self.owner is None:
            return None
        req = self.request(Method.REGISTER_DEVICE,
                           {"model": self.identity.model, "mac": self.identity.mac,
                            **({"sn": self.identity.sn} if self.identity.sn else {})})
        return self.net.send(self.name, CLOUD, req, on_reply=self._register_reply)

    def _register_reply(self, p: Pending) -> None:
        if p.response is not None and p.response.ok and self.can(E.REGISTER):
            self.device_id = p.response.data["uuid"]
            self._step(E.REGISTER)

    def bind(self) -> Optional[Pending]:
        if self.type_i or not self.can(E.BIND) or self.owner is None:
            return None
        params = {"reset_proof": self.pending_proof} if self.pending_proof else {}
        req = self.request(Method.BIND_DEVICE, params, account=self.owner)
        return self.net.send(self.name, CLOUD, req, on_reply=self._bind_reply)

    def _bind_reply(self, p: Pending) -> None:
        if p.response is not None and p.response.ok and self.can(E.BIND):
            self._step(E.BIND)
            self.local_binding = self.owner.user_id
            self.pending_proof = None

    def login(self) -> Optional[Pending]:
        if not self.can(E.LOGIN) or not self.device_id:
            return None
        if self.conn is not None and self.conn.open:
            return None  # still logged in on a live connection
        try:
            conn = self.net.connect(self.name, CLOUD)
        except RoutingDenied:
            return None
        self.conn = conn
        self.login_attempts.append(self.net.clock)
        req = self.request(Method.LOGIN_DEVICE, account=self.owner)
        return self.net.send(self.name, CLOUD, req, conn=conn, on_reply=self._login_reply)

    def _login_reply(self, p: Pending) -> None:
        ok = p.response is not None and p.response.ok
        if ok and self.can(E.LOGIN) and self.conn is not None and self.conn.open:
            self._step(E.LOGIN)
            self.token = p.response.data["token"]
            if self.timers:
                self.net.at(self.heartbeat_period, self._heartbeat, self.conn)
            return
        if self.conn is not None and self.conn.open and not ok:
            old, self.conn = self.conn, None
            self.net.close(old)
        self._schedule_relogin()

    def upload_status(self, value) -> Optional[Pending]:
        if not self.can(E.STATUS_UPLOAD) or self.conn is None:
            return None
        req = self.request(Method.STATUS_UPLOAD, {"status": value})
        self.status = value
        return self.net.send(self.name, CLOUD, req, conn=self.conn)

    def reset(self) -> "DeviceAgent":
        """Physical reset button: back to S1, binding forgotten, reset nonce emitted."""
        if self.state is DeviceState.S1 and self.conn is None:
            return self
        had_id, token, owner = self.device_id, self.token, self.owner
        self._step(E.RESET)
        self.local_binding = None
        self.owner = None
        self.token = None
        self.ssid = None
        if had_id and self.secret:
            self.reset_counter += 1
            self.pending_proof = reset_proof(had_id, self.reset_counter, self.secret)
        if self.sync_reset and had_id and self.net is not None:
            params = {"reset": True}
            if token:
                params["token"] = token
            req = self.request(Method.UNBIND_DEVICE, params, account=owner)
            self.net.deliver_now(self.name, CLOUD, req)
        if self.type_i:
            self.device_id = None
        if self.conn is not None:
            old, self.conn = self.conn, None
            self.net.close(old)
        return self

    # --- timers -----------------------------------------------------------

    def heartbeat_and_reconnect(self) -> None:
        """Start the heartbeat loop on the current session connection."""
        if self.conn is not None:
            self.net.at(self.heartbeat_period, self._heartbeat, self.conn)

    def _heartbeat(self, conn: Connection) -> None:
        if conn is not self.conn or not conn.open or self.state is not DeviceState.S4:
            return
        req = self.request(Method.STATUS_UPLOAD)
        self.net.send(self.name, CLOUD, req, conn=conn, on_reply=self._heartbeat_reply)
        self.net.at(self.heartbeat_period, self._heartbeat, conn)

    def _heartbeat_reply(self, p: Pending) -> None:
        if p.response is None or not p.response.ok:
            self._schedule_relogin()

    def _schedule_relogin(self) -> None:
        if not self.timers or self._relogin_scheduled:
            return
        if self.state not in (DeviceState.S3, DeviceState.S4) or not self.device_id:
            return
        self._relogin_scheduled = True
        self.net.at(self.relogin_backoff, self._relogin)

    def _relogin(self) -> None:
        self._relogin_scheduled = False
        if self.state in (DeviceState.S3, DeviceState.S4) and self.device_id:
            self.relogins += 1
            self.login()


@dataclass(eq=False)
class AppAgent(_Endpoint):
    name: str
    account: AccountRef
    platform: PlatformType
    strict: bool = True
    state: AppState = AppState.S1
    device_id: Optional[str] = None
    known_devices: list = field(default_factory=list)
    conn: Optional[Connection] = None
    last_status: object = None
    last_response: Optional[Response] = None
    pushes: list = field(default_factory=list)

    def attached(self, net: Network) -> None:
        self.net = net
        self.sign_in()

    def sign_in(self) -> bool:
        cloud = self.net.endpoints.get(CLOUD) if self.net else None
        if cloud is None or (self.conn is not None and self.conn.open):
            return False
        self.conn = self.net.connect(self.name, CLOUD)
        return cloud.subscribe(self.account, self.conn)

    def can(self, event: TransitionEvent) -> bool:
        if not self.strict:
            return True
        return find_edge(Entity.APP, self.state, event, STRICT, self.platform) is not None

    def _step(self, event: TransitionEvent) -> None:
        try:
            self.state = entity_step(Entity.APP, self.state, event, STRICT, self.platform)
        except GuardRejection:
            if self.strict:
                raise

    def _req(self, method: Method, params=None, uuid=None, account=True) -> Request:
        return Request(method, params or {}, self._rid(), request_ctx=RequestCtx(uuid=uuid),
                       account=self.account if account else None)

    def _send(self, dst: str, req: Request, on_reply) -> Pending:
        def reply(p: Pending):
            self.last_response = p.response
            if p.response is not None and p.response.ok:
                on_reply(p)
        return self.net.send(self.name, dst, req, on_reply=reply)

    # --- inbound pushes ---------------------------------------------------

    def receive(self, src: str, req: Request, conn) -> Response:
        if src != CLOUD or req.method is not Method.STATUS_UPLOAD:
            return Response(int(Code.UNSUPPORTED), "apps accept only cloud pushes", {}, req.id)
        event = req.params.get("event")
        uuid = req.uuid
        self.pushes.append((self.net.clock, event, uuid))
        if event == "bound" and self.state is AppState.S2:
            self.device_id = uuid
            if uuid not in self.known_devices:
                self.known_devices.append(uuid)
            self._step(E.BIND)
        elif event == "online" and uuid == self.device_id and self.state in (AppState.S3, AppState.S4):
            self._step(E.LOGIN)
        elif event == "unbound" and uuid == self.device_id and self.state in (AppState.S3, AppState.S4):
            self._forget(uuid)
            self._step(E.UNBIND)
        elif event == "status" and uuid == self.device_id:
            self.last_status = req.params.get("status")
        return success(req)

    def _forget(self, uuid) -> None:
        if uuid in self.known_devices:
            self.known_devices.remove(uuid)

    # --- user actions -----------------------------------------------------

    def discover(self, device_name: str) -> Optional[Pending]:
        if not self.can(E.DISCOVER):
            return None

        def done(p):
            self._step(E.DISCOVER)
            if p.response.data.get("uuid"):
                self.device_id = p.response.data["uuid"]
        return self._send(device_name, self._req(Method.DISCOVER, account=False), done)

    def provision(self, device_name: str, ssid: str = "home-wifi") -> Optional[Pending]:
        if not self.can(E.PROVISION):
            return None
        return self._send(device_name, self._req(Method.PROVISION, {"ssid": ssid}),
                          lambda p: self._step(E.PROVISION))

    def bind(self, device_id: Optional[str] = None) -> Optional[Pending]:
        device_id = device_id or self.device_id
        if not device_id or not self.can(E.BIND):
            return None

        def done(p):
            self.device_id = device_id
            if device_id not in self.known_devices:
                self.known_devices.append(device_id)
            self._step(E.BIND)
            if p.response.data.get("online"):
                self._step(E.LOGIN)
        return self._send(CLOUD, self._req(Method.APP_BIND, uuid=device_id), done)

    def unbind(self) -> Optional[Pending]:
        if self.device_id not in self.known_devices and self.strict:
            return None
        if not self.can(E.UNBIND):
            return None

        def done(p):
            self._forget(self.device_id)
            self._step(E.UNBIND)
        return self._send(CLOUD, self._req(Method.APP_UNBIND, uuid=self.device_id), done)

    def control(self, command: str = "toggle", value=None) -> Optional[Pending]:
        if self.device_id not in self.known_devices and self.strict:
            return None
        if not self.can(E.CONTROL):
            return None
        params = {"command": command}
        if value is not None:
            params["value"] = value
        return self._send(CLOUD, self._req(Method.APP_CONTROL, params, uuid=self.device_id),
                          lambda p: self._step(E.CONTROL))


def _await(net: Network, pending: Optional[Pending], phase: str) -> Response:
    if pending is None:
        raise LifecycleFailure(phase, None, "action not enabled in the current state")
    net.wait(pending)
    if pending.response is None:
        raise LifecycleFailure(phase, None, pending.status)
    if not pending.response.ok:
        raise LifecycleFailure(phase, int(pending.response.code), pending.response.msg)
    return pending.response


def run_lifecycle(device: DeviceAgent, app: AppAgent, cloud, net: Network, *,
                  full: bool = False, status=21) -> list:
    """Drive discovery through control; with ``full`` also unbind and reset."""
    _await(net, app.discover(device.name), "discovery")
    _await(net, app.provision(device.name), "provisioning")
    if device.type_i:
        _await(net, device.register(), "registration")
        _await(net, app.discover(device.name), "discovery")
        _await(net, app.bind(), "binding")
    else:
        _await(net, device.bind(), "binding")
    _await(net, device.login(), "login")
    _await(net, device.upload_status(status), "status")
    _await(net, app.control("on"), "control")
    if full:
        _await(net, app.unbind(), "unbinding")
        net.immediate(device.reset)
    return net.trace
