"""The IoT cloud: identity management, bindings, sessions, OTA and the policy engine.

Cloud state is never stored directly.  It is derived per device from facts:

    not registered                    -> S1
    registered, no binding            -> S2
    binding, no live session          -> S3
    binding and a live session        -> S4

A device whose registration was revoked while its connection survived (flaw F2)
therefore derives to S1 even though a session exists: the dangling device.
"""

from __future__ import annotations

import enum
import hashlib
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .core import (
    CloudState,
    DeviceIdentity,
    Entity,
    Flaw,
    GuardMode,
    GuardRejection,
    LegitimacyInfo,
    Mitigation,
    PlatformType,
    ProtocolRules,
    TransitionEvent,
    entity_step,
    find_edge,
)
from .netlab import CLOUD, Connection, Network
from .wire import (
    AccountRef,
    Code,
    Method,
    Request,
    RequestCtx,
    Response,
    SchemaViolation,
    compute_sign,
    failure,
    success,
    validate_request,
    verify_sign,
)

E = TransitionEvent

TYPE_I_ONLY = frozenset({Flaw.F1_1, Flaw.F4})
TYPE_II_ONLY = frozenset({Flaw.F1_2})
M2_REMOVES = frozenset({Flaw.F3, Flaw.F4})
M3_REMOVES = frozenset({Flaw.F1_1, Flaw.F1_2, Flaw.F1_3, Flaw.F2})


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class MissingIdentityField(ValueError):
    pass


class Principal(enum.Enum):
    REAL_DEVICE = "RealDevice"
    PHANTOM = "Phantom"


def _parse_set(values, parser, field_name):
    if values is None:
        return frozenset()
    if isinstance(values, str):
        values = [v for v in values.replace(";", ",").split(",") if v.strip()]
    out = set()
    for v in values:
        try:
            out.add(v if not isinstance(v, str) else parser(v))
        except ValueError as exc:
            raise ConfigError(field_name, str(exc)) from None
    return frozenset(out)


def parse_platform(value) -> PlatformType:
    if isinstance(value, PlatformType):
        return value
    norm = str(value).replace("_", "").replace(" ", "").lower()
    for p in PlatformType:
        if p.value.lower() == norm:
            return p
    raise ConfigError("platform", f"unknown platform {value!r} (expected TypeI or TypeII)")


@dataclass(frozen=True)
class PolicyConfig:
    platform: PlatformType
    flaws: frozenset = frozenset()
    mitigations: frozenset = frozenset()
    profile: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "flaws", _parse_set(self.flaws, Flaw.parse, "flaws"))
        object.__setattr__(self, "mitigations",
                           _parse_set(self.mitigations, Mitigation.parse, "mitigations"))
        if self.platform is PlatformType.TYPE_II and self.flaws & TYPE_I_ONLY:
            bad = sorted(f.value for f in self.flaws & TYPE_I_ONLY)
            raise ConfigError("flaws", f"{','.join(bad)} only apply to TypeI platforms")
        if self.platform is PlatformType.TYPE_I and self.flaws & TYPE_II_ONLY:
            raise ConfigError("flaws", "F1.2 only applies to TypeII platforms")

    def has(self, mitigation: Mitigation) -> bool:
        return mitigation in self.mitigations

    @property
    def effective_flaws(self) -> frozenset:
        flaws = set(self.flaws)
        if self.has(Mitigation.M2_AUTHZ_CHECKS):
            flaws -= M2_REMOVES
        if self.has(Mitigation.M3_STATE_GUARD):
            flaws -= M3_REMOVES
        return frozenset(flaws)

    @property
    def guard(self) -> GuardMode:
        if self.has(Mitigation.M3_STATE_GUARD):
            return GuardMode(strict=True)
        return GuardMode.permissive(self.effective_flaws)

    @classmethod
    def from_mapping(cls, data: dict, default_platform=None) -> "PolicyConfig":
        unknown = set(data) - {"platform", "flaws", "mitigations", "profile"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown key")
        platform = data.get("platform", default_platform)
        if platform is None:
            raise ConfigError("platform", "missing")
        return cls(parse_platform(platform), data.get("flaws"), data.get("mitigations"),
                   data.get("profile"))


def load_mapping(path) -> dict:
    """Read a JSON or YAML config file into a mapping."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {p}: {exc.strerror}") from None
    try:
        if p.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            import yaml

            data = yaml.safe_load(text)
    except Exception as exc:  # parser errors vary by format
        raise ConfigError("config", f"cannot parse {p}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    return data


def device_id_gen(identity: DeviceIdentity, salt: Optional[str] = None,
                  fields=("model", "mac", "cid")) -> str:
    """Uppercase 32-hex digest over the identity fields, plus ``salt`` when given."""
    values = []
    for name in fields:
        value = identity.field(name)
        if not value:
            raise MissingIdentityField(name)
        values.append(value)
    if salt:
        values.append(salt)
    return hashlib.md5("|".join(values).encode("utf-8")).hexdigest().upper()


def reset_proof(device_id: str, counter: int, secret: str) -> str:
    return f"{counter}:{compute_sign(f'reset:{device_id}{counter}'.encode(), secret)}"


@dataclass(frozen=True)
class BindingRecord:
    device_id: str
    account: str
    bound_at: int


@dataclass
class Session:
    device_id: str
    connection: Connection
    last_heartbeat: int
    principal: Principal
    holder: str


@dataclass
class ManufacturerRecord:
    identity: DeviceIdentity
    legitimacy: LegitimacyInfo
    secret: str


@dataclass
class DeviceRegistryEntry:
    device_id: str
    identity: DeviceIdentity
    maker: ManufacturerRecord
    registered: bool = False
    tokens: set = field(default_factory=set)
    reset_counter: int = 0

    @property
    def device_secret(self) -> str:
        return self.maker.secret


class FirmwareRepo:
    def __init__(self):
        self.images: dict[tuple[str, str], str] = {}

    def add(self, model: str, version: str, image: str) -> None:
        self.images[(model, version)] = image

    def seed(self, models, rng: random.Random, version: str = "1.0.0") -> None:
        for model in models:
            self.add(model, version, "%032x" % rng.getrandbits(128))

    def models(self) -> set:
        return {m for m, _ in self.images}

    def latest(self, model: str) -> Optional[tuple[str, str]]:
        versions = [v for m, v in self.images if m == model]
        if not versions:
            return None
        version = max(versions, key=lambda v: tuple(int(x) for x in v.split(".") if x.isdigit()))
        return version, self.images[(model, version)]


class _Reject(Exception):
    def __init__(self, code: Code, msg: Optional[str] = None):
        super().__init__(msg or code.name)
        self.code = code
        self.msg = msg


class CloudService:
    """Network endpoint implementing the cloud side of the protocol."""

    name = CLOUD

    def __init__(self, policy: PolicyConfig, rules: ProtocolRules, *, seed=0,
                 label_of: Optional[Callable[[str], Principal]] = None):
        if rules.platform is not policy.platform:
            raise ConfigError("platform", "policy and protocol rules disagree")
        self.policy = policy
        self.rules = rules
        self.rng = random.Random(f"{seed}:cloud")
        self.label_of = label_of or (lambda name: Principal.REAL_DEVICE)
        self.net: Optional[Network] = None
        self.accounts: dict[str, str] = {}
        self.makers: dict[tuple, ManufacturerRecord] = {}
        self.records: dict[str, DeviceRegistryEntry] = {}
        self.ids_by_key: dict[tuple, str] = {}
        self.salts: dict[tuple, str] = {}
        self.bindings: dict[str, BindingRecord] = {}
        self.sessions: dict[str, Session] = {}
        self.push: dict[str, Connection] = {}
        self.statuses: dict[str, object] = {}
        self.firmware = FirmwareRepo()
        self.flaw_hits: Counter = Counter()
        self.response_log: list[tuple] = []

    # --- setup ------------------------------------------------------------

    def attached(self, net: Network) -> None:
        self.net = net

    @property
    def type_i(self) -> bool:
        return self.policy.platform is PlatformType.TYPE_I

    @property
    def m1(self) -> bool:
        return self.policy.has(Mitigation.M1_DEVICE_AUTH)

    @property
    def m2(self) -> bool:
        return self.policy.has(Mitigation.M2_AUTHZ_CHECKS)

    @property
    def m3(self) -> bool:
        return self.policy.has(Mitigation.M3_STATE_GUARD)

    def flaw_on(self, flaw: Flaw) -> bool:
        return flaw in self.policy.effective_flaws

    def _token(self) -> str:
        return "%032x" % self.rng.getrandbits(128)

    def create_account(self, user_id: str) -> AccountRef:
        cred = self.accounts.setdefault(user_id, self._token())
        return AccountRef(user_id, cred)

    def identity_key(self, identity: DeviceIdentity) -> tuple:
        return tuple(identity.field(f) for f in self.rules.identity_fields)

    def provision_device(self, identity: DeviceIdentity, legitimacy: LegitimacyInfo,
                         secret: Optional[str] = None) -> ManufacturerRecord:
        """Manufacturer-side provisioning: allowlist the identity and store its secret."""
        rec = ManufacturerRecord(identity, legitimacy, secret or self._token())
        if self.type_i:
            self.makers[self.identity_key(identity)] = rec
        else:
            if not identity.device_id:
                raise MissingIdentityField("device_id")
            self.makers[(identity.device_id,)] = rec
            self.records[identity.device_id] = DeviceRegistryEntry(
                identity.device_id, identity, rec, registered=True)
        return rec

    def subscribe(self, account: AccountRef, conn: Connection) -> bool:
        """Out-of-band app sign-in: attach a push connection to an account."""
        if not self._valid(account):
            return False
        self.push[account.user_id] = conn
        return True

    # --- observation ------------------------------------------------------

    def cloud_state(self, device_id: Optional[str]) -> CloudState:
        rec = self.records.get(device_id) if device_id else None
        if rec is None or not rec.registered:
            return CloudState.S1
        if device_id not in self.bindings:
            return CloudState.S2
        if device_id not in self.sessions:
            return CloudState.S3
        return CloudState.S4

    def device_id_for(self, identity: DeviceIdentity) -> Optional[str]:
        if identity.device_id and identity.device_id in self.records:
            return identity.device_id
        if self.type_i:
            return self.ids_by_key.get(self.identity_key(identity))
        return None

    def owner_of(self, device_id: str) -> Optional[str]:
        b = self.bindings.get(device_id)
        return b.account if b else None

    def session_holder(self, device_id: str) -> Optional[str]:
        s = self.sessions.get(device_id)
        return s.holder if s else None

    # --- transport hooks --------------------------------------------------

    def on_connection_closed(self, conn: Connection) -> None:
        for device_id, sess in list(self.sessions.items()):
            if sess.connection is conn:
                del self.sessions[device_id]
                self.net.record("session", None, CLOUD)
        for user, push in list(self.push.items()):
            if push is conn:
                del self.push[user]

    def receive(self, src: str, req: Request, conn: Optional[Connection]) -> Response:
        try:
            validate_request(req)
            handler = self._handlers()[req.method]
            resp = handler(src, req, conn)
        except SchemaViolation as exc:
            resp = failure(req, Code.SCHEMA_VIOLATION, str(exc))
        except _Reject as exc:
            resp = failure(req, exc.code, exc.msg)
        except KeyError:
            resp = failure(req, Code.UNSUPPORTED)
        self.response_log.append((self.net.clock if self.net else 0, src, req.method.value,
                                  int(resp.code), json.dumps(resp.data, sort_keys=True)))
        return resp

    def _handlers(self):
        return {
            Method.REGISTER_DEVICE: self.handle_register,
            Method.BIND_DEVICE: self.handle_device_bind,
            Method.UNBIND_DEVICE: self.handle_device_unbind,
            Method.LOGIN_DEVICE: self.handle_login,
            Method.STATUS_UPLOAD: self.handle_status_upload,
            Method.OTA_UPDATE: self.handle_ota,
            Method.APP_BIND: self.handle_bind,
            Method.APP_UNBIND: self.handle_unbind,
            Method.APP_CONTROL: self.handle_control,
        }

    # --- guard helpers ----------------------------------------------------

    def _fire(self, device_id: Optional[str], event: TransitionEvent,
              code: Code = Code.GUARD_REJECTION) -> CloudState:
        """Check the cloud machine for ``event``; record any flaw edge used."""
        state = self.cloud_state(device_id)
        try:
            target = entity_step(Entity.CLOUD, state, event, self.policy.guard, self.policy.platform)
        except GuardRejection as exc:
            raise _Reject(code, str(exc)) from None
        edge = find_edge(Entity.CLOUD, state, event, self.policy.guard, self.policy.platform)
        if edge.flaw is not None:
            self.flaw_hits[edge.flaw] += 1
        return target

    def _valid(self, account: Optional[AccountRef]) -> bool:
        return (account is not None and account.user_id in self.accounts
                and self.accounts[account.user_id] == account.credential)

    def _record(self, device_id: Optional[str]) -> DeviceRegistryEntry:
        rec = self.records.get(device_id) if device_id else None
        if rec is None:
            raise _Reject(Code.UNKNOWN_DEVICE)
        return rec

    def _check_legitimacy(self, req: Request, maker: ManufacturerRecord) -> None:
        for name in self.rules.legitimacy_fields:
            if name == "key":
                if not req.system.key:
                    raise SchemaViolation("system.key required by this platform", missing=["key"])
                if req.system.key != maker.legitimacy.key:
                    raise _Reject(Code.BAD_LEGITIMACY, "key mismatch")
            elif name == "sign":
                if not req.system.sign:
                    raise SchemaViolation("system.sign required by this platform", missing=["sign"])
                if not verify_sign(req):
                    raise _Reject(Code.BAD_LEGITIMACY, "bad signature")
            else:
                if name not in req.params:
                    raise SchemaViolation(f"{name} required by this platform", missing=[name])
                expected = (maker.identity.mac if name == "mac"
                            else getattr(maker.legitimacy, name))
                value = req.params[name]
                if name == "mac" and isinstance(value, str):
                    value = value.upper()
                if value != expected:
                    raise _Reject(Code.BAD_LEGITIMACY, f"{name} mismatch")

    def _check_secret(self, req: Request, secret: str) -> None:
        if self.m1 and req.params.get("secret") != secret:
            raise _Reject(Code.BAD_DEVICE_SECRET)

    def _check_owner(self, account: Optional[AccountRef], device_id: str) -> None:
        if not self._valid(account):
            raise _Reject(Code.BAD_CREDENTIAL)
        if self.owner_of(device_id) != account.user_id:
            raise _Reject(Code.BAD_CREDENTIAL, "account is not the owner")

    def _push_app(self, user_id: Optional[str], device_id: str, event: str, status=None) -> None:
        conn = self.push.get(user_id) if user_id else None
        if conn is None:
            return
        params = {"event": event}
        if status is not None:
            params["status"] = status
        msg = Request(Method.STATUS_UPLOAD, params, request_ctx=RequestCtx(uuid=device_id))
        self.net.deliver_now(CLOUD, conn.peer(CLOUD), msg, conn)

    def _drop_session(self, device_id: str, erase: bool) -> None:
        sess = self.sessions.pop(device_id, None)
        if sess is None:
            return
        if erase:
            msg = Request(Method.UNBIND_DEVICE, {}, request_ctx=RequestCtx(uuid=device_id))
            self.net.deliver_now(CLOUD, sess.holder, msg, sess.connection)
        self.net.record("session", None, CLOUD)
        self.net.close(sess.connection)

    def _revoke(self, device_id: str, notify_owner: bool, reset: bool = False) -> None:
        rec = self.records[device_id]
        binding = self.bindings.pop(device_id, None)
        rec.tokens.clear()
        if self.type_i:
            rec.registered = False
        if device_id in self.sessions:
            if self.flaw_on(Flaw.F2) and not reset:
                self.flaw_hits[Flaw.F2] += 1
            else:
                self._drop_session(device_id, erase=not reset)
        if notify_owner and binding is not None:
            self._push_app(binding.account, device_id, "unbound")

    # --- handlers ---------------------------------------------------------

    def handle_register(self, src: str, req: Request, conn) -> Response:
        if not self.type_i:
            raise _Reject(Code.UNSUPPORTED, "device IDs are pre-provisioned")
        identity = DeviceIdentity(mac=req.params["mac"], model=req.params["model"],
                                  cid=req.request_ctx.cid, sn=req.params.get("sn"))
        key = self.identity_key(identity)
        missing = [f for f, v in zip(self.rules.identity_fields, key) if not v]
        if missing:
            raise _Reject(Code.MISSING_IDENTITY_FIELD, f"missing {missing[0]}")
        maker = self.makers.get(key)
        if maker is None:
            raise _Reject(Code.UNKNOWN_DEVICE, "identity not issued by the manufacturer")
        self._check_legitimacy(req, maker)
        self._check_secret(req, maker.secret)
        device_id = self.ids_by_key.get(key)
        self._fire(device_id, E.REGISTER)
        if device_id is None or not self.records[device_id].registered:
            salt = "%032x" % self.rng.getrandbits(128) if self.m1 else None
            device_id = device_id_gen(identity, salt, self.rules.identity_fields)
            self.ids_by_key[key] = device_id
            self.records[device_id] = DeviceRegistryEntry(device_id, identity, maker, True)
        return success(req, uuid=device_id)

    def handle_bind(self, src: str, req: Request, conn) -> Response:
        """App-initiated bind (Type I)."""
        if not self.type_i:
            raise _Reject(Code.UNSUPPORTED, "binding is device-initiated on this platform")
        if not self._valid(req.account):
            raise _Reject(Code.BAD_CREDENTIAL)
        device_id = req.uuid
        rec = self._record(device_id)
        if not rec.registered:
            raise _Reject(Code.UNKNOWN_DEVICE, "device is not registered")
        if device_id in self.bindings:
            raise _Reject(Code.ALREADY_BOUND)
        self._fire(device_id, E.BIND)
        self.bindings[device_id] = BindingRecord(device_id, req.account.user_id, self.net.clock)
        online = device_id in self.sessions
        if online:
            # the surviving connection skips the login step
            self.flaw_hits[Flaw.F2] += 1
        return success(req, uuid=device_id, online=online)

    def handle_device_bind(self, src: str, req: Request, conn) -> Response:
        """Device-initiated bind (Type II)."""
        if self.type_i:
            raise _Reject(Code.UNSUPPORTED, "binding is app-initiated on this platform")
        rec = self._record(req.uuid)
        self._check_legitimacy(req, rec.maker)
        self._check_secret(req, rec.device_secret)
        if not self._valid(req.account):
            raise _Reject(Code.BAD_CREDENTIAL)
        device_id = rec.device_id
        previous = self.bindings.get(device_id)
        if previous is not None and not self.m3 and Flaw.F1_2 not in self.policy.effective_flaws:
            raise _Reject(Code.ALREADY_BOUND)
        changes_owner = previous is not None and previous.account != req.account.user_id
        if changes_owner and self.m2:
            self._check_reset_proof(rec, req.params.get("reset_proof"))
        self._fire(device_id, E.BIND)
        if previous is not None:
            rec.tokens.clear()
            if device_id in self.sessions:
                self._drop_session(device_id, erase=False)
            if changes_owner and self.m3:
                self._push_app(previous.account, device_id, "unbound")
        self.bindings[device_id] = BindingRecord(device_id, req.account.user_id, self.net.clock)
        self._push_app(req.account.user_id, device_id, "bound")
        return success(req, uuid=device_id)

    def _check_reset_proof(self, rec: DeviceRegistryEntry, proof) -> None:
        try:
            counter_text, _ = str(proof).split(":", 1)
            counter = int(counter_text)
        except (ValueError, TypeError):
            raise _Reject(Code.BAD_CREDENTIAL, "ownership change requires a reset proof") from None
        if counter <= rec.reset_counter or proof != reset_proof(rec.device_id, counter,
                                                                rec.device_secret):
            raise _Reject(Code.BAD_CREDENTIAL, "invalid reset proof")
        rec.reset_counter = counter

    def handle_login(self, src: str, req: Request, conn) -> Response:
        rec = self._record(req.uuid)
        self._check_legitimacy(req, rec.maker)
        self._check_secret(req, rec.device_secret)
        if conn is None or not conn.open:
            raise SchemaViolation("login must travel on a device connection")
        device_id = rec.device_id
        state = self._fire(device_id, E.LOGIN)
        owner = self.owner_of(device_id)
        owner_ok = self._valid(req.account) and req.account.user_id == owner
        if Flaw.F3 not in self.policy.effective_flaws:
            self._check_owner(req.account, device_id)
        elif not owner_ok:
            self.flaw_hits[Flaw.F3] += 1
        if device_id in self.sessions:
            self._drop_session(device_id, erase=False)
        token = self._token()
        rec.tokens.add(token)
        self.sessions[device_id] = Session(device_id, conn, self.net.clock, self.label_of(src), src)
        self.net.record("session", src, CLOUD, req.method.value)
        self._push_app(owner, device_id, "online")
        assert state is CloudState.S4
        return success(req, token=token, session=conn.id)

    def handle_status_upload(self, src: str, req: Request, conn) -> Response:
        device_id = req.uuid
        sess = self.sessions.get(device_id)
        if sess is None or conn is None or sess.connection is not conn:
            raise _Reject(Code.DEVICE_OFFLINE)
        self._fire(device_id, E.STATUS_UPLOAD)
        sess.last_heartbeat = self.net.clock
        if "status" in req.params:
            self.statuses[device_id] = req.params["status"]
            self._push_app(self.owner_of(device_id), device_id, "status", req.params["status"])
        return success(req)

    def handle_device_unbind(self, src: str, req: Request, conn) -> Response:
        rec = self._record(req.uuid)
        device_id = rec.device_id
        if req.params.get("reset"):
            return self._reset_report(req, rec)
        if not self.type_i or not self.rules.device_side_unbind:
            raise _Reject(Code.UNSUPPORTED, "device-side unbinding is not supported")
        self._check_legitimacy(req, rec.maker)
        self._check_secret(req, rec.device_secret)
        if req.params.get("token") not in rec.tokens:
            raise _Reject(Code.BAD_CREDENTIAL, "no valid login token")
        if Flaw.F4 not in self.policy.effective_flaws:
            self._check_owner(req.account, device_id)
        elif not (self._valid(req.account) and req.account.user_id == self.owner_of(device_id)):
            self.flaw_hits[Flaw.F4] += 1
        self._fire(device_id, E.UNBIND)
        self._revoke(device_id, notify_owner=self.m3)
        return success(req)

    def _reset_report(self, req: Request, rec: DeviceRegistryEntry) -> Response:
        """A synchronized factory reset: the device asks the cloud to forget it."""
        self._check_legitimacy(req, rec.maker)
        self._check_secret(req, rec.device_secret)
        device_id = rec.device_id
        owner = self.owner_of(device_id)
        authorized = (owner is None or req.params.get("token") in rec.tokens
                      or (self._valid(req.account) and req.account.user_id == owner))
        if not authorized:
            raise _Reject(Code.BAD_CREDENTIAL)
        self._fire(device_id, E.RESET)
        self._revoke(device_id, notify_owner=True, reset=True)
        return success(req)

    def handle_unbind(self, src: str, req: Request, conn) -> Response:
        """App-initiated unbind."""
        if not self._valid(req.account):
            raise _Reject(Code.BAD_CREDENTIAL)
        device_id = req.uuid
        if self.owner_of(device_id) != req.account.user_id:
            raise _Reject(Code.NOT_BOUND)
        self._fire(device_id, E.UNBIND)
        self._revoke(device_id, notify_owner=False)
        return success(req)

    def handle_control(self, src: str, req: Request, conn) -> Response:
        if not self._valid(req.account):
            raise _Reject(Code.BAD_CREDENTIAL)
        device_id = req.uuid
        if self.owner_of(device_id) != req.account.user_id:
            raise _Reject(Code.NOT_BOUND)
        sess = self.sessions.get(device_id)
        if sess is None:
            raise _Reject(Code.DEVICE_OFFLINE)
        self._fire(device_id, E.CONTROL, Code.DEVICE_OFFLINE)
        params = {k: v for k, v in req.params.items() if k in ("command", "value")}
        relay = Request(Method.CONTROL_COMMAND, params, id=req.id,
                        request_ctx=RequestCtx(uuid=device_id))
        reply = self.net.deliver_now(CLOUD, sess.holder, relay, sess.connection)
        if reply is None:
            raise _Reject(Code.DEVICE_OFFLINE)
        return success(req, device_code=int(reply.code))

    def handle_ota(self, src: str, req: Request, conn) -> Response:
        model = req.params["model"]
        found = self.firmware.latest(model)
        if found is None:
            raise _Reject(Code.UNKNOWN_MODEL)
        if self.m1:
            secrets = {r.device_secret for r in self.records.values()
                       if r.registered and r.identity.model == model}
            if req.params.get("secret") not in secrets:
                raise _Reject(Code.BAD_DEVICE_SECRET)
        version, image = found
        return success(req, model=model, version=version, image=image)
