"""Protocol messages and their canonical JSON encoding.

Field names follow vendor-style JSON traffic: a request carries ``system``
(key/sign/time), ``request`` (cid/uuid), ``method``, ``params`` and ``id``; a
response carries ``result`` (code/msg/data) and ``id``.  Signatures are a
simulated keyed digest, not any vendor's real algorithm.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Union


class Method(enum.Enum):
    REGISTER_DEVICE = "registerDevice"
    BIND_DEVICE = "bindDevice"
    UNBIND_DEVICE = "unbindDevice"
    LOGIN_DEVICE = "loginDevice"
    STATUS_UPLOAD = "statusUpload"
    CONTROL_COMMAND = "controlCommand"
    OTA_UPDATE = "otaUpdate"
    DISCOVER = "discover"
    PROVISION = "provision"
    APP_BIND = "appBind"
    APP_UNBIND = "appUnbind"
    APP_CONTROL = "appControl"


class Code(enum.IntEnum):
    SUCCESS = 1000
    SCHEMA_VIOLATION = 4000
    BAD_CREDENTIAL = 4001
    BAD_LEGITIMACY = 4002
    GUARD_REJECTION = 4003
    UNKNOWN_DEVICE = 4004
    UNSUPPORTED = 4005
    ALREADY_BOUND = 4006
    NOT_BOUND = 4007
    DEVICE_OFFLINE = 4008
    BAD_DEVICE_SECRET = 4009
    UNKNOWN_MODEL = 4010
    MISSING_IDENTITY_FIELD = 4011


@dataclass(frozen=True)
class ParamSchema:
    required: frozenset = frozenset()
    optional: frozenset = frozenset()
    needs_uuid: bool = False
    needs_account: bool = False


def _schema(required=(), optional=(), uuid=False, account=False) -> ParamSchema:
    return ParamSchema(frozenset(required), frozenset(optional), uuid, account)


_LEGIT = ("mac", "hwid", "tagkey", "secret")

SCHEMAS: dict[Method, ParamSchema] = {
    Method.REGISTER_DEVICE: _schema(("model", "mac"), ("version", "sn", "secret")),
    Method.BIND_DEVICE: _schema((), _LEGIT + ("reset_proof",), uuid=True, account=True),
    Method.UNBIND_DEVICE: _schema((), _LEGIT + ("token", "reset"), uuid=True),
    Method.LOGIN_DEVICE: _schema((), _LEGIT, uuid=True),
    Method.STATUS_UPLOAD: _schema((), ("status", "event"), uuid=True),
    Method.CONTROL_COMMAND: _schema(("command",), ("value",), uuid=True),
    Method.OTA_UPDATE: _schema(("model",), ("version", "secret")),
    Method.DISCOVER: _schema(),
    Method.PROVISION: _schema(("ssid",)),
    Method.APP_BIND: _schema(uuid=True, account=True),
    Method.APP_UNBIND: _schema(uuid=True, account=True),
    Method.APP_CONTROL: _schema(("command",), ("value",), uuid=True, account=True),
}


class SchemaViolation(ValueError):
    def __init__(self, message: str, missing=(), extra=()):
        detail = message
        if missing:
            detail += f"; missing={sorted(missing)}"
        if extra:
            detail += f"; extra={sorted(extra)}"
        super().__init__(detail)
        self.missing = sorted(missing)
        self.extra = sorted(extra)


@dataclass(frozen=True)
class AccountRef:
    user_id: str
    credential: str


@dataclass(frozen=True)
class SystemInfo:
    sign: Optional[str] = None
    key: Optional[str] = None
    time: int = 0


@dataclass(frozen=True)
class RequestCtx:
    cid: Optional[str] = None
    uuid: Optional[str] = None


@dataclass
class Request:
    method: Method
    params: dict = field(default_factory=dict)
    id: int = 0
    system: SystemInfo = field(default_factory=SystemInfo)
    request_ctx: RequestCtx = field(default_factory=RequestCtx)
    account: Optional[AccountRef] = None

    @property
    def uuid(self) -> Optional[str]:
        return self.request_ctx.uuid

    def validate(self) -> "Request":
        validate_request(self)
        return self


@dataclass
class Response:
    code: int
    msg: str = "success"
    data: dict = field(default_factory=dict)
    id: int = 0

    @property
    def ok(self) -> bool:
        return self.code == Code.SUCCESS


Message = Union[Request, Response]


def success(req: Request, **data) -> Response:
    return Response(Code.SUCCESS, "success", data, req.id)


def failure(req: Request, code: Code, msg: Optional[str] = None) -> Response:
    return Response(int(code), msg or code.name.lower(), {}, req.id)


# --- validation -----------------------------------------------------------

_SCALARS = (str, int, float, bool, type(None))


def _check_json_value(value: Any, where: str) -> None:
    if isinstance(value, _SCALARS):
        if isinstance(value, float) and not math.isfinite(value):
            raise SchemaViolation(f"{where}: non-finite float is not encodable")
        return
    if isinstance(value, list):
        for i, item in enumerate(value):
            _check_json_value(item, f"{where}[{i}]")
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise SchemaViolation(f"{where}: non-string key {key!r}")
            _check_json_value(item, f"{where}.{key}")
        return
    raise SchemaViolation(f"{where}: unsupported value {type(value).__name__}")


def _opt_str(value, where):
    if value is not None and not isinstance(value, str):
        raise SchemaViolation(f"{where} must be a string or null")


def validate_request(req: Request) -> None:
    if not isinstance(req.method, Method):
        raise SchemaViolation(f"unknown method {req.method!r}")
    schema = SCHEMAS[req.method]
    if not isinstance(req.params, dict):
        raise SchemaViolation("params must be an object")
    keys = set(req.params)
    missing = schema.required - keys
    extra = keys - schema.required - schema.optional
    if missing or extra:
        raise SchemaViolation(f"{req.method.value} params", missing, extra)
    _check_json_value(req.params, "params")
    if isinstance(req.id, bool) or not isinstance(req.id, int):
        raise SchemaViolation("id must be an integer")
    _opt_str(req.system.sign, "system.sign")
    _opt_str(req.system.key, "system.key")
    if isinstance(req.system.time, bool) or not isinstance(req.system.time, int):
        raise SchemaViolation("system.time must be an integer tick")
    _opt_str(req.request_ctx.cid, "request.cid")
    _opt_str(req.request_ctx.uuid, "request.uuid")
    if schema.needs_uuid and not req.request_ctx.uuid:
        raise SchemaViolation(f"{req.method.value} requires request.uuid", missing=["uuid"])
    if schema.needs_account and req.account is None:
        raise SchemaViolation(f"{req.method.value} requires account", missing=["account"])
    if req.account is not None:
        _opt_str(req.account.user_id, "account.user_id")
        _opt_str(req.account.credential, "account.credential")


def validate_response(resp: Response) -> None:
    if isinstance(resp.code, bool) or not isinstance(resp.code, int):
        raise SchemaViolation("result.code must be an integer")
    if not isinstance(resp.msg, str):
        raise SchemaViolation("result.msg must be a string")
    if not isinstance(resp.data, dict):
        raise SchemaViolation("result.data must be an object")
    _check_json_value(resp.data, "result.data")
    if isinstance(resp.id, bool) or not isinstance(resp.id, int):
        raise SchemaViolation("id must be an integer")


# --- codec ----------------------------------------------------------------


def to_obj(message: Message) -> dict:
    if isinstance(message, Request):
        validate_request(message)
        return {
            "system": {
                "sign": message.system.sign,
                "key": message.system.key,
                "time": message.system.time,
            },
            "request": {"cid": message.request_ctx.cid, "uuid": message.request_ctx.uuid},
            "method": message.method.value,
            "params": message.params,
            "id": message.id,
            "account": None if message.account is None else {
                "user_id": message.account.user_id,
                "credential": message.account.credential,
            },
        }
    if isinstance(message, Response):
        validate_response(message)
        return {
            "result": {"code": int(message.code), "msg": message.msg, "data": message.data},
            "id": message.id,
        }
    raise TypeError(f"cannot encode {type(message).__name__}")


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False).encode("utf-8")


def encode(message: Message) -> bytes:
    return canonical_json(to_obj(message))


def _exact_keys(obj: Any, expected: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise SchemaViolation(f"{where} must be an object")
    keys = set(obj)
    if keys != expected:
        raise SchemaViolation(where, expected - keys, keys - expected)


def from_obj(obj: Any) -> Message:
    if isinstance(obj, dict) and "result" in obj:
        _exact_keys(obj, {"result", "id"}, "response")
        _exact_keys(obj["result"], {"code", "msg", "data"}, "result")
        resp = Response(obj["result"]["code"], obj["result"]["msg"],
                        obj["result"]["data"], obj["id"])
        validate_response(resp)
        return resp
    _exact_keys(obj, {"system", "request", "method", "params", "id", "account"}, "request")
    _exact_keys(obj["system"], {"sign", "key", "time"}, "system")
    _exact_keys(obj["request"], {"cid", "uuid"}, "request")
    try:
        method = Method(obj["method"])
    except ValueError:
        raise SchemaViolation(f"unknown method {obj['method']!r}") from None
    account = obj["account"]
    if account is not None:
        _exact_keys(account, {"user_id", "credential"}, "account")
        account = AccountRef(account["user_id"], account["credential"])
    req = Request(
        method=method,
        params=obj["params"],
        id=obj["id"],
        system=SystemInfo(obj["system"]["sign"], obj["system"]["key"], obj["system"]["time"]),
        request_ctx=RequestCtx(obj["request"]["cid"], obj["request"]["uuid"]),
        account=account,
    )
    validate_request(req)
    return req


def decode(data: Union[bytes, str]) -> Message:
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"not JSON: {exc}") from None
    return from_obj(obj)


# --- simulated signing ----------------------------------------------------


def compute_sign(payload: bytes, key: str) -> str:
    """Keyed digest of ``payload`` rendered as 32 lowercase hex characters."""
    if not key:
        raise ValueError("signing key must be non-empty")
    return hmac.new(key.encode("utf-8"), payload, hashlib.md5).hexdigest()


def signing_payload(req: Request) -> bytes:
    return encode(replace(req, system=replace(req.system, sign=None)))


def sign_request(req: Request, key: str) -> Request:
    """Return a copy of ``req`` carrying ``key`` and its signature."""
    unsigned = replace(req, system=replace(req.system, key=key, sign=None))
    return replace(unsigned, system=replace(unsigned.system,
                                            sign=compute_sign(signing_payload(unsigned), key)))


def verify_sign(req: Request) -> bool:
    if not req.system.key or not req.system.sign:
        return False
    return hmac.compare_digest(req.system.sign, compute_sign(signing_payload(req), req.system.key))
