"""A complete simulated home: cloud, victim device, owner app and attacker endpoints."""

from __future__ import annotations

import random
from typing import Iterable, Optional

from ..agents import AppAgent, DeviceAgent, device_request, run_lifecycle
from ..cloud import CloudService, PolicyConfig, Principal
from ..core import (
    DeviceIdentity,
    InfoCategory,
    LegitimacyInfo,
    Mitigation,
    PlatformType,
    StateCombination,
    legal_combination,
)
from ..netlab import CLOUD, Network, Pending
from ..phantom import PhantomDevice, granted_knowledge
from ..wire import Code, Method, Request, RequestCtx, failure
from .profiles import PlatformProfile, get_profile

HOME, ATTACKER, INTERNET = "home-lan", "attacker-lan", "internet"
DEFAULT_GRANTS = frozenset(InfoCategory)

# Fixed registration tuple for the Alink victim outlet.
ALINK_VICTIM_IDENTITY = DeviceIdentity(mac="60:01:94:A2:D5:7C", model="JIKONG_LIVING_OUTLET_00003",
                                  cid="000000000000000010671484")
ALINK_VICTIM_KEY = "5gPFl8G4GyFZ1fPWk20m"

_ALNUM = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"


def parse_grants(values) -> frozenset:
    if values is None:
        return DEFAULT_GRANTS
    if isinstance(values, str):
        values = [v for v in values.replace(";", ",").split(",") if v.strip()]
    out = set()
    for v in values:
        if isinstance(v, InfoCategory):
            out.add(v)
            continue
        key = str(v).strip().upper()
        names = {"P": "P", "PUBLIC": "P", "G": "G", "GUESSABLE": "G", "H": "H",
                 "HARDCODED": "H", "HARD-CODED": "H", "HARD_CODED": "H"}
        if key not in names:
            raise ValueError(f"unknown information grant {v!r} (expected P, G or H)")
        out.add(InfoCategory(names[key]))
    return frozenset(out)


def make_device_info(profile: PlatformProfile, rng: random.Random, index: int = 0,
                     mac_low: Optional[int] = None, model: Optional[str] = None,
                     cid: Optional[str] = None) -> tuple[DeviceIdentity, LegitimacyInfo]:
    """Manufacture one device's identity and legitimacy information for ``profile``."""
    if profile.name == "Alink" and index == 0 and mac_low is None:
        return ALINK_VICTIM_IDENTITY, LegitimacyInfo(key=ALINK_VICTIM_KEY)
    low = rng.getrandbits(24) if mac_low is None else mac_low
    mac = f"{profile.mac_prefix}:{low >> 16 & 0xFF:02X}:{low >> 8 & 0xFF:02X}:{low & 0xFF:02X}"
    model = model or f"{profile.model_prefix}_{index % 1000:05d}"
    identity = DeviceIdentity(
        mac=mac, model=model,
        cid=(cid or "%024d" % rng.randrange(10 ** 17)) if "cid" in profile.identity_fields else None,
        sn=("SN%010X" % rng.getrandbits(40)) if "sn" in profile.identity_fields else None,
        device_id=("%032X" % rng.getrandbits(128)) if profile.platform is PlatformType.TYPE_II else None,
    )
    legit = LegitimacyInfo(
        key="".join(rng.choice(_ALNUM) for _ in range(20)) if "key" in profile.legitimacy_fields else None,
        hwid="%032X" % rng.getrandbits(128) if "hwid" in profile.legitimacy_fields else None,
        tagkey="%016x" % rng.getrandbits(64) if "tagkey" in profile.legitimacy_fields else None,
    )
    return identity, legit


class World:
    def __init__(self, profile, policy: Optional[PolicyConfig] = None, *, seed: int = 0,
                 timers: bool = True, heartbeat_period: int = 10, relogin_backoff: int = 10,
                 flip_principals: bool = False, wire_check: bool = True):
        self.profile = get_profile(profile)
        self.policy = policy or self.profile.policy()
        self.seed = seed
        self.flip_principals = flip_principals
        self.rng = random.Random(f"{seed}:world")
        self.net = Network(seed, wire_check=wire_check)
        self.net.add_segment(INTERNET, nat=False)
        self.net.add_segment(HOME)
        self.net.add_segment(ATTACKER)
        self.phantom_names: set = set()
        self.metrics: dict = {}
        self.cloud = CloudService(self.policy, self.profile.rules, seed=seed, label_of=self.label_of)
        self.net.attach(self.cloud, INTERNET)
        self.alice = self.cloud.create_account("alice")
        self.trudy = self.cloud.create_account("trudy")
        identity, legit = make_device_info(self.profile, self.rng)
        maker = self.cloud.provision_device(identity, legit)
        self.cloud.firmware.seed([identity.model], self.rng)
        self.device = DeviceAgent(
            "device", identity, legit, self.profile.rules, secret=maker.secret,
            heartbeat_period=heartbeat_period, relogin_backoff=relogin_backoff, timers=timers,
            use_secret=self.policy.has(Mitigation.M1_DEVICE_AUTH),
            sync_reset=self.policy.has(Mitigation.M3_STATE_GUARD))
        self.net.attach(self.device, HOME)
        self.app = AppAgent("alice-app", self.alice, self.policy.platform)
        self.net.attach(self.app, HOME)
        self.trudy_app = AppAgent("trudy-app", self.trudy, self.policy.platform, strict=False)
        self.net.attach(self.trudy_app, ATTACKER)
        self.net.observe(self.observe)

    # --- ground truth -----------------------------------------------------

    def label_of(self, endpoint: str) -> Principal:
        phantom = endpoint in self.phantom_names
        if self.flip_principals:
            phantom = not phantom
        return Principal.PHANTOM if phantom else Principal.REAL_DEVICE

    @property
    def victim_id(self) -> Optional[str]:
        return self.device.device_id or self.cloud.device_id_for(self.device.identity)

    def combination(self) -> StateCombination:
        return StateCombination(self.cloud.cloud_state(self.victim_id), self.device.state,
                                self.app.state)

    def observe(self) -> tuple:
        combo = self.combination()
        return combo, legal_combination(self.policy.platform, combo)

    def session_principal(self) -> Optional[Principal]:
        sess = self.cloud.sessions.get(self.victim_id) if self.victim_id else None
        return sess.principal if sess else None

    # --- actors -----------------------------------------------------------

    def add_phantom(self, grants: Iterable = DEFAULT_GRANTS, name: str = "phantom",
                    flood_period: int = 1) -> PhantomDevice:
        knowledge = granted_knowledge(self.profile.info_schema, parse_grants(grants),
                                      self.device.identity, self.device.legitimacy)
        phantom = PhantomDevice(name, self.profile.rules, dict(self.profile.info_schema),
                                knowledge, login_flood_period=flood_period)
        self.phantom_names.add(name)
        self.net.attach(phantom, ATTACKER)
        return phantom

    def baseline(self, full: bool = False) -> list:
        return run_lifecycle(self.device, self.app, self.cloud, self.net, full=full)

    def wait(self, pending: Optional[Pending]) -> Optional[Pending]:
        if pending is not None:
            self.net.wait(pending)
        return pending

    def run_for(self, ticks: int) -> None:
        self.net.run_for(ticks)

    def factory_register(self, identity: DeviceIdentity, legit: LegitimacyInfo,
                         owner=None) -> Optional[str]:
        """Register a manufactured device (and optionally bind it) from the factory line."""
        maker = self.cloud.provision_device(identity, legit)
        if "factory" not in self.net.endpoints:
            self.net.attach(_Factory("factory"), INTERNET)
        if self.policy.platform is PlatformType.TYPE_II:
            return identity.device_id
        req = device_request(self.profile.rules, Method.REGISTER_DEVICE,
                             {"model": identity.model, "mac": identity.mac,
                              **({"sn": identity.sn} if identity.sn else {})},
                             identity=identity, legitimacy=legit,
                             secret=maker.secret if self.device.use_secret else None,
                             time=self.net.clock)
        resp = self.net.call("factory", CLOUD, req).response
        if resp is None or not resp.ok:
            return None
        device_id = resp.data["uuid"]
        if owner is not None:
            bind = Request(Method.APP_BIND, {}, 1, request_ctx=RequestCtx(uuid=device_id),
                           account=owner)
            self.net.call("factory", CLOUD, bind)
        return device_id


class _Factory:
    """Endpoint standing in for the manufacturer's provisioning line."""

    def __init__(self, name: str):
        self.name = name

    def receive(self, src, req, conn):
        return failure(req, Code.UNSUPPORTED)
