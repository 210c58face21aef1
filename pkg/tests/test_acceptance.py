"""Acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line; the lines are echoed in the pytest
terminal summary (and printed directly when run as ``python tests/test_acceptance.py``).
"""

import hashlib
import os
import subprocess
import sys
import time

import pytest
from hypothesis import HealthCheck, given, settings

from phantomlab.cloud import Principal
from phantomlab.core import Flaw, Mitigation, StateCombination, combo, legal_combination
from phantomlab.netlab import Network
from phantomlab.scenarios import (
    PROFILES,
    AttackKind as A,
    AttackParams,
    World,
    attack_matrix,
    explore_reachable,
    get_profile,
    run_attack,
)
from phantomlab.wire import decode, encode

from strategies import messages

RESULTS: list[str] = []

# Expected success cells and exploited-flaw lists, written out literally so the
# suite does not depend on the package's own reference tables.
F = Flaw
EXPECTED = {
    "Alink": {A.HIJACKING: {F.F1_1, F.F1_3, F.F2, F.F3, F.F4},
              A.SUBSTITUTION: {F.F1_1, F.F1_3, F.F3},
              A.DOS: {F.F1_1, F.F1_3, F.F3, F.F4},
              A.OCCUPATION: {F.F1_1}},
    "Joylink": {A.SUBSTITUTION: {F.F1_1, F.F1_3, F.F3}, A.OCCUPATION: {F.F1_1}},
    "KASA": {A.HIJACKING: {F.F1_2, F.F3}, A.SUBSTITUTION: {F.F1_3, F.F3}, A.DOS: {F.F1_2}},
    "MIJIA": {A.HIJACKING: {F.F1_2, F.F3}, A.SUBSTITUTION: {F.F1_3, F.F3}, A.DOS: {F.F1_2}},
    "SmartThings": {A.DOS: {F.F1_2}},
}
ALL_MITIGATIONS = frozenset(Mitigation)


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} ({detail})"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_01_attack_matrix():
    t0 = time.perf_counter()
    m = attack_matrix()
    elapsed = time.perf_counter() - t0
    cells = m.success_cells()
    expected = {p: set(cells_) for p, cells_ in EXPECTED.items()}
    exact = cells == expected and m.matches_table3()
    report(1, "attack matrix matches the reference", exact and elapsed < 5,
           f"{sum(map(len, cells.values()))} success cells, exact={exact}, {elapsed:.2f}s < 5s")


def test_02_flaw_ablation():
    t0 = time.perf_counter()
    total, bad = 0, []
    for profile, attacks in EXPECTED.items():
        identified = get_profile(profile).identified_flaws
        for attack, needed in attacks.items():
            for flaw in identified:
                out = run_attack(profile, attack, flaws=identified - {flaw})
                total += 1
                if out.success == (flaw in needed):
                    bad.append(f"{profile}/{attack.value}-{flaw.value}")
    elapsed = time.perf_counter() - t0
    report(2, "single-flaw ablation is minimal", not bad and elapsed < 30,
           f"{total - len(bad)}/{total} ablations as expected, {elapsed:.1f}s < 30s"
           + (f", wrong: {bad}" if bad else ""))


def test_03_mitigation_kill_suite():
    failures = []
    m = attack_matrix(mitigations=ALL_MITIGATIONS)
    for (profile, attack), out in m.cells.items():
        if out.success:
            failures.append(f"{profile}/{attack.value}")
    for name in PROFILES:
        w = World(name, get_profile(name).policy(mitigations=ALL_MITIGATIONS), timers=False)
        w.baseline()
        stamped = [StateCombination.parse(r["combo"]) for r in w.net.trace if r["combo"]]
        if w.combination() != combo(4, 4, 4):
            failures.append(f"{name} baseline ended in {w.combination()}")
        if not all(legal_combination(w.policy.platform, c) for c in stamped):
            failures.append(f"{name} baseline passed an illegal combination")
    report(3, "M1+M2+M3 stop every attack, baselines stay legal", not failures,
           f"{len(m.cells)} attack cells, {len(PROFILES)} baselines, failures={failures}")


def test_04_dangling_state():
    dangling = combo(1, 4, 1)
    checks = {}
    for name in ("Alink", "Joylink"):
        profile = get_profile(name)
        for label, policy in (("identified", profile.policy()),
                              ("F2 only", profile.policy(flaws={F.F2}))):
            r = explore_reachable(profile, policy, depth=12)
            checks[f"{name} {label}"] = dangling in r.reached and dangling in r.illegal
        r = explore_reachable(profile, profile.policy(mitigations={Mitigation.M3_STATE_GUARD}),
                              depth=12)
        checks[f"{name} M3"] = dangling not in r.reached
    report(4, "(S1,S4,S1) reachable with F2, unreachable with M3", all(checks.values()),
           ", ".join(f"{k}={'ok' if v else 'WRONG'}" for k, v in checks.items()))


def _phantom_tenure(trace, start, end, phantom):
    """Independent tick counter: who holds the session at the end of each tick."""
    holder, per_tick = None, {}
    for rec in trace:
        if rec["kind"] == "session":
            per_tick[rec["tick"]] = rec["src"]
            if rec["tick"] < start:
                holder = rec["src"]
    held = 0
    for tick in range(start, end + 1):
        holder = per_tick.get(tick, holder)
        held += holder == phantom
    return held / (end - start + 1)


def test_05_substitution_competition():
    params = AttackParams(window=1000, flood_period=1, relogin_backoff=10)
    rows = []
    for name in ("Alink", "Joylink", "KASA", "MIJIA"):
        out = run_attack(name, A.SUBSTITUTION, params=params)
        trace = out.trace
        logins = [r["tick"] for r in trace if r["kind"] == "session" and r["src"] == "phantom"]
        start = logins[0] + 1 if logins else 0
        tenure = _phantom_tenure(trace, start, start + params.window - 1, "phantom")
        relays = [r for r in trace if r["kind"] == "delivered" and r["method"] == "controlCommand"]
        last = out.world.label_of(relays[-1]["dst"]) if relays else None
        rows.append((name, tenure, last is Principal.PHANTOM and out.success))
    ok = all(t >= 0.9 and hit for _, t, hit in rows)
    report(5, "phantom wins the session race", ok,
           ", ".join(f"{n} tenure={t:.3f} control->Phantom={h}" for n, t, h in rows))


def test_06_occupation_desk_scale():
    t0 = time.perf_counter()
    out = run_attack("Alink", A.OCCUPATION, params=AttackParams(scan=65536, planted=256, taken=32))
    m = out.metrics
    ok = (out.success and m["candidates"] == 65536 and m["planted"] == 256
          and m["occupied"] == 256 and m["buyer_failures"] == 256)
    report(6, "occupation recovers the planted set", ok,
           f"occupied {m.get('occupied')}/256 of 65536 MACs, buyer failures "
           f"{m.get('buyer_failures')}, {time.perf_counter() - t0:.1f}s")


def test_07_firmware_theft():
    params = AttackParams(models=100)
    counts, mitigated = {}, {}
    for name in PROFILES:
        counts[name] = run_attack(name, A.FIRMWARE_THEFT, params=params).metrics["harvested"]
        mitigated[name] = run_attack(name, A.FIRMWARE_THEFT, {Mitigation.M1_DEVICE_AUTH},
                                     params=params).metrics["harvested"]
    ok = all(v == 100 for v in counts.values()) and all(v == 0 for v in mitigated.values())
    report(7, "firmware harvest 100/100, 0 with M1", ok, f"harvested={counts}, with M1={mitigated}")


DETERMINISM_CASES = [("Alink", A.SUBSTITUTION), ("KASA", A.HIJACKING), ("MIJIA", A.DOS),
                     ("Joylink", A.OCCUPATION), ("SmartThings", A.FIRMWARE_THEFT)]


def test_08_determinism(tmp_path):
    diffs, runs = [], 0
    for name, attack in DETERMINISM_CASES:
        digests = set()
        for i in range(10):
            net = Network()
            net.trace = run_attack(name, attack, seed=1234).trace
            path = tmp_path / f"{name}-{attack.value}-{i}.jsonl"
            net.write_trace(path)
            digests.add(hashlib.sha256(path.read_bytes()).hexdigest())
            runs += 1
        if len(digests) != 1:
            diffs.append(f"{name}/{attack.value}")
    report(8, "equal seeds give byte-identical traces", not diffs,
           f"{runs} runs over {len(DETERMINISM_CASES)} scenarios, differing={diffs}")


_STABILITY_SCRIPT = """
import hashlib, random
from phantomlab.wire import SCHEMAS, AccountRef, Method, Request, RequestCtx, Response, encode
h = hashlib.sha256()
rng = random.Random(7)
for i in range(500):
    method = rng.choice(list(Method))
    schema = SCHEMAS[method]
    keys = set(schema.required) | {k for k in sorted(schema.optional) if rng.random() < 0.5}
    params = {k: rng.choice([rng.random(), rng.randrange(-99, 99), str(rng.random()),
                             {"z": 1, "a": [True, None]}]) for k in sorted(keys)}
    req = Request(method, params, i, request_ctx=RequestCtx(uuid="U%d" % i),
                  account=AccountRef("u", "c"))
    h.update(encode(req))
    h.update(encode(Response(1000, "success", {"b": 2, "a": {"y": 1, "x": 0}}, i)))
print(h.hexdigest())
"""


def _encoding_digest(hash_seed: str) -> str:
    """Digest of 500 fixed encodings computed in a fresh interpreter."""
    env = dict(os.environ, PYTHONHASHSEED=hash_seed)
    out = subprocess.run([sys.executable, "-c", _STABILITY_SCRIPT],
                         capture_output=True, text=True, env=env, check=True)
    return out.stdout.strip()


_codec = {"n": 0, "bad": 0}


@settings(max_examples=10_000, deadline=None, derandomize=True,
          suppress_health_check=list(HealthCheck))
@given(messages)
def _roundtrip(msg):
    _codec["n"] += 1
    data = encode(msg)
    back = decode(data)
    if back != msg or encode(back) != data:
        _codec["bad"] += 1


def test_09_codec_properties():
    _codec.update(n=0, bad=0)
    _roundtrip()
    digests = {_encoding_digest(s) for s in ("0", "1", "12345")}
    ok = _codec["n"] >= 10_000 and _codec["bad"] == 0 and len(digests) == 1
    report(9, "codec round-trips and encodes canonically", ok,
           f"{_codec['n']} random messages, {_codec['bad']} mismatches, "
           f"{len(digests)} distinct digest(s) across 3 interpreter runs")


def test_10_ground_truth_isolation():
    differing, flipped, cells = [], 0, 0
    for policy_mits in ((), ALL_MITIGATIONS):
        for name in PROFILES:
            for attack in A:
                a = run_attack(name, attack, policy_mits)
                b = run_attack(name, attack, policy_mits, flip_principals=True)
                cells += 1
                if a.responses != b.responses:
                    differing.append(f"{name}/{attack.value}")
                sa, sb = a.world.cloud.sessions, b.world.cloud.sessions
                flipped += sum(sa[k].principal is not sb[k].principal for k in sa if k in sb)
    report(10, "flipping principal labels changes no response", not differing and flipped > 0,
           f"{cells} scenarios, {flipped} sessions relabelled, differing={differing}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
