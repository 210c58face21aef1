"""Attack scripts, success predicates, the attack matrix and flaw ablation."""

from __future__ import annotations

import enum
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from ..agents import LifecycleFailure
from ..cloud import Principal
from ..core import (
    Flaw,
    InfoCategory,
    LegitimacyInfo,
    Mitigation,
    PlatformType,
    StateCombination,
    format_flaws,
)
from ..netlab import Pending
from ..phantom import (
    InsufficientInformation,
    PhantomDevice,
    ProbeError,
    ProbeResult,
    bind_probe,
    enumerate_macs,
    forge,
    granted_knowledge,
    harvest_firmware,
)
from ..wire import Code, Method
from .profiles import PROFILES, TABLE3, AttackKind, PlatformProfile, get_profile
from .world import ATTACKER, World, make_device_info, parse_grants

A = AttackKind


class Verdict(enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    NOT_APPLICABLE = "NotApplicable"


class NotApplicable(Exception):
    pass


class StepRejected(Exception):
    def __init__(self, step: str, code: Optional[int]):
        super().__init__(f"step {step} rejected (code={code})")
        self.step = step
        self.code = code


@dataclass
class ScenarioOutcome:
    profile: str
    attack: AttackKind
    verdict: Verdict
    predicate_report: dict
    trace: list
    final_combo: StateCombination
    reason: str = ""
    exercised_flaws: frozenset = frozenset()
    metrics: dict = field(default_factory=dict)
    responses: list = field(default_factory=list, repr=False)
    world: Any = field(default=None, repr=False, compare=False)

    @property
    def success(self) -> bool:
        return self.verdict is Verdict.SUCCESS

    def summary(self) -> str:
        head = self.verdict.value.upper() if self.verdict is not Verdict.NOT_APPLICABLE else "NOT APPLICABLE"
        return head

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "attack": self.attack.value,
            "verdict": self.verdict.value,
            "success": self.success,
            "predicates": self.predicate_report,
            "final_combo": list(self.final_combo.labels()),
            "reason": self.reason,
            "exercised_flaws": sorted(f.value for f in self.exercised_flaws),
            "metrics": self.metrics,
        }


@dataclass
class AttackParams:
    """Scale knobs for the scripted attacks."""

    window: int = 1000
    flood_period: int = 1
    scan: int = 256
    planted: int = 16
    taken: int = 4
    models: int = 100
    heartbeat_period: int = 10
    relogin_backoff: int = 10
    wire_check: bool = True


def _step(world: World, pending: Optional[Pending], name: str):
    if pending is None:
        raise StepRejected(name, None)
    world.wait(pending)
    resp = pending.response
    if resp is None or not resp.ok:
        code = None if resp is None else int(resp.code)
        if code == Code.UNSUPPORTED:
            raise NotApplicable(f"step {name} is not supported by this platform")
        raise StepRejected(name, code)
    return resp


def control_recipients(world: World, mark: int) -> list[str]:
    """Endpoints that received a relayed control command after trace index ``mark``."""
    return [r["dst"] for r in world.net.trace[mark:]
            if r["kind"] == "delivered" and r["method"] == Method.CONTROL_COMMAND.value
            and r["src"] == "cloud"]


def session_tenure(trace: list, start: int, end: int, label_of) -> dict:
    """Fraction of ticks in ``[start, end]`` each principal held the session at tick end."""
    holder = None
    changes = []
    for rec in trace:
        if rec["kind"] != "session":
            continue
        if rec["tick"] < start:
            holder = rec["src"]
        else:
            changes.append((rec["tick"], rec["src"]))
    counts = {p.value: 0 for p in Principal}
    counts["none"] = 0
    i = 0
    for tick in range(start, end + 1):
        while i < len(changes) and changes[i][0] <= tick:
            holder = changes[i][1]
            i += 1
        key = "none" if holder is None else label_of(holder).value
        counts[key] += 1
    total = end - start + 1
    return {k: v / total for k, v in counts.items()}


# --- attack scripts ---------------------------------------------------------


def _substitution(world: World, ph: PhantomDevice, params: AttackParams) -> dict:
    if world.policy.platform is PlatformType.TYPE_I:
        _step(world, ph.register(), "T.1")
    _step(world, ph.login(), "T.2")
    start = world.net.clock + 1
    ph.flood(params.flood_period)
    world.run_for(params.window)
    end = world.net.clock
    mark = len(world.net.trace)
    world.wait(world.app.control("unlock"))
    ph.stop_flood()
    recipients = control_recipients(world, mark)
    tenure = session_tenure(world.net.trace, start, end, world.label_of)
    world.metrics["phantom_tenure"] = tenure[Principal.PHANTOM.value]
    world.metrics["phantom_logins"] = len([r for r in world.net.trace if r["kind"] == "session"
                                           and r["src"] == ph.name])
    return {
        "phantom_holds_session": world.session_principal() is Principal.PHANTOM,
        "control_reaches_phantom": bool(recipients)
        and world.label_of(recipients[-1]) is Principal.PHANTOM,
        "binding_unchanged": world.cloud.owner_of(world.victim_id) == world.alice.user_id,
    }


def _hijacking(world: World, ph: PhantomDevice, params: AttackParams) -> dict:
    if world.policy.platform is PlatformType.TYPE_I:
        _step(world, ph.register(), "T.1")
        _step(world, ph.login(), "T.2")
        world.run_for(params.relogin_backoff + 3)
        _step(world, ph.unbind(), "T.3")
        _step(world, ph.register(), "T.4")
        _step(world, world.trudy_app.bind(ph.device_id), "T.4")
    else:
        _step(world, world.trudy_app.discover(ph.name), "R.1")
        _step(world, world.trudy_app.provision(ph.name), "R.1")
        _step(world, ph.bind(), "R.2")
        world.run_for(params.relogin_backoff + 3)
    world.trudy_app.device_id = ph.device_id
    mark = len(world.net.trace)
    pending = world.wait(world.trudy_app.control("unlock"))
    recipients = control_recipients(world, mark)
    delivered = (pending is not None and pending.response is not None and pending.response.ok
                 and pending.response.data.get("device_code") == Code.SUCCESS)
    return {
        "attacker_bound": world.cloud.owner_of(ph.device_id) == world.trudy.user_id,
        "real_device_holds_session": world.session_principal() is Principal.REAL_DEVICE,
        "control_reaches_real_device": delivered and bool(recipients)
        and world.label_of(recipients[-1]) is Principal.REAL_DEVICE,
    }


def _dos(world: World, ph: PhantomDevice, params: AttackParams) -> dict:
    if world.policy.platform is PlatformType.TYPE_I:
        _step(world, ph.register(), "T.1")
        _step(world, ph.login(), "T.2")
        _step(world, ph.unbind(), "T.3")
    else:
        _step(world, world.trudy_app.discover(ph.name), "R.1")
        _step(world, world.trudy_app.provision(ph.name), "R.1")
        _step(world, ph.bind(), "R.2")
    world.run_for(1)
    pending = world.wait(world.app.control("unlock"))
    code = None
    if pending is not None and pending.response is not None:
        code = int(pending.response.code)
    world.metrics["victim_control_code"] = code
    return {
        "victim_unbound": world.cloud.owner_of(world.victim_id) != world.alice.user_id,
        "victim_control_not_bound": code == Code.NOT_BOUND,
    }


def _occupation(world: World, grants: frozenset, params: AttackParams) -> dict:
    profile = world.profile
    if world.policy.platform is not PlatformType.TYPE_I:
        raise NotApplicable("device IDs are hard-coded; there is nothing to pre-register")
    rng = random.Random(f"{world.seed}:population")
    high = rng.randrange(256)
    low0 = high << 16
    if params.scan > 1 << 16:
        raise ValueError("scan range is limited to the low two bytes")
    model = f"{profile.model_prefix}_{rng.randrange(1000, 10000):05d}"
    template, legit = make_device_info(profile, rng, index=1, mac_low=low0, model=model)
    shared = LegitimacyInfo(key=legit.key, hwid=legit.hwid, tagkey=legit.tagkey)
    slots = rng.sample(range(params.scan), params.planted + params.taken)
    planted, taken, serials = {}, {}, {}
    for n, slot in enumerate(slots):
        ident, _ = make_device_info(profile, rng, index=1, mac_low=low0 + slot, model=model,
                                    cid=template.cid)
        owner = None
        if n >= params.planted:
            owner = world.cloud.create_account(f"owner{n}")
        device_id = world.factory_register(ident, shared, owner)
        if ident.sn:
            serials[ident.mac] = ident.sn
        (taken if owner else planted)[device_id] = owner.user_id if owner else None
    scanner_knowledge = granted_knowledge(profile.info_schema, grants, template, shared)
    scanner_knowledge.pop("mac", None)
    scanner_knowledge.pop("sn", None)
    scanner = PhantomDevice("scanner", profile.rules, dict(profile.info_schema), scanner_knowledge)
    world.phantom_names.add(scanner.name)
    world.net.attach(scanner, ATTACKER)
    if InfoCategory.GUESSABLE not in grants:
        raise InsufficientInformation("mac", InfoCategory.GUESSABLE)
    if "sn" in profile.identity_fields and InfoCategory.HARD_CODED not in grants:
        raise InsufficientInformation("sn", InfoCategory.HARD_CODED)
    known_serials = serials if InfoCategory.HARD_CODED in grants else {}
    occupied, seen_taken, rejected = set(), set(), 0
    candidates = enumerate_macs(profile.mac_prefix, low0, params.scan, model=model,
                                cid=template.cid, serials=known_serials)
    for cand in candidates:
        if "sn" in profile.identity_fields and not cand.sn:
            continue
        scanner.knowledge["mac"] = cand.mac
        if cand.sn:
            scanner.knowledge["sn"] = cand.sn
        scanner.device_id = None
        resp = world.net.call(scanner.name, "cloud", forge(Method.REGISTER_DEVICE, scanner)).response
        if resp is None or not resp.ok:
            rejected += 1
            continue
        try:
            result = bind_probe(world.net, world.trudy_app.name, resp.data["uuid"], world.trudy)
        except ProbeError:
            rejected += 1
            continue
        (occupied if result is ProbeResult.OCCUPIED else seen_taken).add(resp.data["uuid"])
    buyer_failures = 0
    for device_id in planted:
        try:
            if bind_probe(world.net, world.app.name, device_id, world.alice) is ProbeResult.TAKEN:
                buyer_failures += 1
        except ProbeError:
            pass
    world.metrics.update(planted=len(planted), occupied=len(occupied), taken_seen=len(seen_taken),
                         rejected=rejected, candidates=params.scan, buyer_failures=buyer_failures)
    return {
        "planted_all_occupied": bool(planted) and set(planted) <= occupied,
        "only_planted_occupied": occupied <= set(planted),
        "buyer_binds_fail": buyer_failures == len(planted),
        "taken_untouched": all(world.cloud.owner_of(d) == o for d, o in taken.items()),
    }


def _firmware_theft(world: World, grants: frozenset, params: AttackParams) -> dict:
    if InfoCategory.PUBLIC not in grants:
        raise InsufficientInformation("model", InfoCategory.PUBLIC)
    rng = random.Random(f"{world.seed}:firmware")
    models = [f"{world.profile.model_prefix}_FW{i:04d}" for i in range(params.models)]
    world.cloud.firmware.seed(models, rng)
    ph = PhantomDevice("harvester", world.profile.rules, dict(world.profile.info_schema), {})
    world.phantom_names.add(ph.name)
    world.net.attach(ph, ATTACKER)
    images = harvest_firmware(ph, models)
    world.metrics.update(seeded=len(models), harvested=len(images),
                         distinct_images=len(set(images.values())))
    return {"all_images_harvested": len(images) == len(models) and len(set(images.values())) == len(models)}


# --- entry points -----------------------------------------------------------


def run_attack(profile, attack, mitigations: Iterable = (), grants=None, seed: int = 0, *,
               flaws: Optional[Iterable] = None, params: Optional[AttackParams] = None,
               flip_principals: bool = False) -> ScenarioOutcome:
    """Run the victim life-cycle followed by the scripted attack and evaluate it."""
    profile = get_profile(profile)
    attack = attack if isinstance(attack, AttackKind) else AttackKind.parse(attack)
    params = params or AttackParams()
    grants = parse_grants(grants)
    policy = profile.policy(flaws, {m if isinstance(m, Mitigation) else Mitigation.parse(m)
                                    for m in mitigations})
    world = World(profile, policy, seed=seed, heartbeat_period=params.heartbeat_period,
                  relogin_backoff=params.relogin_backoff, flip_principals=flip_principals,
                  wire_check=params.wire_check)
    verdict, reason, report = Verdict.FAILURE, "", {}
    try:
        if attack is A.OCCUPATION:
            report = _occupation(world, grants, params)
        elif attack is A.FIRMWARE_THEFT:
            report = _firmware_theft(world, grants, params)
        else:
            world.baseline()
            world.run_for(5)
            ph = world.add_phantom(grants, flood_period=params.flood_period)
            script = {A.SUBSTITUTION: _substitution, A.HIJACKING: _hijacking, A.DOS: _dos}[attack]
            report = script(world, ph, params)
        verdict = Verdict.SUCCESS if report and all(report.values()) else Verdict.FAILURE
        if verdict is Verdict.FAILURE:
            reason = "predicate false: " + ",".join(k for k, v in report.items() if not v)
    except InsufficientInformation as exc:
        verdict, reason = Verdict.NOT_APPLICABLE, f"insufficient information: {exc}"
    except NotApplicable as exc:
        verdict, reason = Verdict.NOT_APPLICABLE, str(exc)
    except StepRejected as exc:
        reason = str(exc)
    except LifecycleFailure as exc:
        reason = f"baseline: {exc}"
    if len(world.net.sched):
        world.net.record("horizon")
    return ScenarioOutcome(
        profile=profile.name, attack=attack, verdict=verdict, predicate_report=report,
        trace=world.net.trace, final_combo=world.combination(), reason=reason,
        exercised_flaws=frozenset(world.cloud.flaw_hits), metrics=world.metrics,
        responses=world.cloud.response_log, world=world)


def exploited_flaws(profile, attack, mitigations: Iterable = (), grants=None, seed: int = 0, *,
                    flaws: Optional[Iterable] = None,
                    params: Optional[AttackParams] = None) -> frozenset:
    """Flaws whose individual removal turns a successful attack into a failure."""
    profile = get_profile(profile)
    base = frozenset(profile.identified_flaws if flaws is None else flaws)
    mitigations = tuple(mitigations)
    if not run_attack(profile, attack, mitigations, grants, seed, flaws=base, params=params).success:
        return frozenset()
    needed = set()
    for flaw in sorted(base, key=list(Flaw).index):
        out = run_attack(profile, attack, mitigations, grants, seed, flaws=base - {flaw},
                         params=params)
        if not out.success:
            needed.add(flaw)
    return frozenset(needed)


@dataclass
class AttackMatrix:
    cells: dict
    mitigations: frozenset = frozenset()

    def verdict(self, profile: str, attack: AttackKind) -> Verdict:
        return self.cells[(profile, attack)].verdict

    def success_cells(self, include_firmware: bool = False) -> dict:
        out: dict = {}
        for (profile, attack), outcome in self.cells.items():
            out.setdefault(profile, set())
            if outcome.success and (include_firmware or attack is not A.FIRMWARE_THEFT):
                out[profile].add(attack)
        return out

    def table3_mismatches(self) -> list:
        """Cells that disagree with the reference matrix (firmware theft always succeeds)."""
        bad = []
        for (profile, attack), outcome in sorted(self.cells.items(),
                                                 key=lambda kv: (kv[0][0], kv[0][1].value)):
            if attack is A.FIRMWARE_THEFT:
                expected = Mitigation.M1_DEVICE_AUTH not in self.mitigations
            else:
                expected = attack in TABLE3.get(profile, frozenset())
            if outcome.success != expected:
                bad.append((profile, attack.value, expected, outcome.verdict.value))
        return bad

    def matches_table3(self) -> bool:
        covered = {p for p, _ in self.cells} >= set(TABLE3) and \
            {a for _, a in self.cells} >= set(AttackKind)
        return covered and not self.table3_mismatches()

    def to_json(self) -> dict:
        matrix: dict = {}
        for (profile, attack), outcome in self.cells.items():
            matrix.setdefault(profile, {})[attack.value] = outcome.verdict.value
        return {"mitigations": sorted(m.value for m in self.mitigations), "matrix": matrix,
                "matches_table3": self.matches_table3()}

    def render(self) -> str:
        profiles = list(dict.fromkeys(p for p, _ in self.cells))
        attacks = [a for a in AttackKind if any(a is b for _, b in self.cells)]
        width = max(len(a.value) for a in attacks) + 2
        lines = ["profile".ljust(12) + "".join(a.value.ljust(width) for a in attacks)]
        for p in profiles:
            row = p.ljust(12)
            for a in attacks:
                out = self.cells.get((p, a))
                row += (out.verdict.value if out else "-").ljust(width)
            lines.append(row.rstrip())
        return "\n".join(lines)


def attack_matrix(profiles: Optional[Iterable] = None, attacks: Optional[Iterable] = None,
                  mitigations: Iterable = (), grants=None, seed: int = 0, *,
                  flaws: Optional[dict] = None, params: Optional[AttackParams] = None,
                  jobs: int = 1) -> AttackMatrix:
    """Run every (profile, attack) cell; cells are independent worlds."""
    profiles = [get_profile(p) for p in (profiles or PROFILES)]
    attacks = [a if isinstance(a, AttackKind) else AttackKind.parse(a)
               for a in (attacks or AttackKind)]
    mitigations = frozenset(m if isinstance(m, Mitigation) else Mitigation.parse(m)
                            for m in mitigations)
    flaws = flaws or {}
    jobs_list = [(p, a) for p in profiles for a in attacks]

    def run(cell):
        p, a = cell
        out = run_attack(p, a, mitigations, grants, seed, flaws=flaws.get(p.name), params=params)
        out.world = None
        out.trace = []
        return (p.name, a), out

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, jobs_list))
    else:
        results = [run(c) for c in jobs_list]
    return AttackMatrix(dict(results), mitigations)


def describe(outcome: ScenarioOutcome, exploited: Optional[frozenset] = None) -> str:
    head = outcome.summary()
    if outcome.success and exploited is not None:
        head += f", flaws={format_flaws(exploited)}"
    lines = [head, f"final combination {outcome.final_combo}"]
    if outcome.reason:
        lines.append(f"reason: {outcome.reason}")
    return "\n".join(lines)


def outcome_json(outcome: ScenarioOutcome, exploited: Optional[frozenset] = None) -> str:
    data = outcome.to_dict()
    if exploited is not None:
        data["exploited_flaws"] = sorted(f.value for f in exploited)
    return json.dumps(data, sort_keys=True, indent=2)
