"""Command-line front end.

Exit codes: 0 success, 1 outcome differs from ``--expect``, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from typing import Optional

from .cloud import ConfigError, load_mapping
from .core import Flaw, Mitigation, format_flaws
from .netlab import Network
from .scenarios import (
    PROFILES,
    TABLE3,
    AttackKind,
    attack_matrix,
    explore_reachable,
    exploited_flaws,
    get_profile,
    parse_grants,
    run_attack,
)
from .scenarios.attacks import Verdict, describe, outcome_json

SCENARIO_KEYS = {"profile", "attack", "flaws", "mitigations", "grants", "seed", "depth",
                 "attacker", "expect"}


@dataclass
class RunConfig:
    command: str
    profile: Optional[str] = None
    attack: Optional[AttackKind] = None
    flaws_override: Optional[frozenset] = None
    mitigations: frozenset = frozenset()
    grants: frozenset = frozenset()
    seed: int = 0
    depth: int = 12
    attacker: bool = False
    trace_path: Optional[str] = None
    report_path: Optional[str] = None
    expect: Optional[str] = None
    jobs: int = 1


def _csv(value) -> list:
    if value is None:
        return []
    if isinstance(value, (list, tuple, set, frozenset)):
        return [str(v) for v in value]
    text = str(value).strip()
    if text.lower() in ("", "none", "{}"):
        return []
    return [v for v in text.strip("{}").replace(";", ",").split(",") if v.strip()]


def _parse_flaws(value) -> Optional[frozenset]:
    if value is None:
        return None
    try:
        return frozenset(Flaw.parse(v) for v in _csv(value))
    except ValueError as exc:
        raise ConfigError("flaws", str(exc)) from None


def _parse_mitigations(value) -> frozenset:
    try:
        return frozenset(Mitigation.parse(v) for v in _csv(value))
    except ValueError as exc:
        raise ConfigError("mitigations", str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phantomlab",
                                     description="Smart-home cloud security simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, profile=True):
        if profile:
            p.add_argument("--profile", help="platform profile (see list-profiles)")
        p.add_argument("--flaws", help="comma-separated flaw set overriding the profile's")
        p.add_argument("--mitigations", help="comma-separated mitigations, e.g. M1,M2,M3")
        p.add_argument("--seed", type=int, help="RNG seed (default: $PHANTOMLAB_SEED or 0)")
        p.add_argument("--report", help="write a JSON report to this path")
        p.add_argument("--scenario", help="JSON or YAML scenario file")

    run = sub.add_parser("run", help="run one attack scenario")
    common(run)
    run.add_argument("--attack", help="Substitution, Hijacking, DoS, Occupation or FirmwareTheft")
    run.add_argument("--grants", help="information categories granted to the attacker (P,G,H)")
    run.add_argument("--trace", help="write the event trace (JSONL) to this path")
    run.add_argument("--expect", help="expected verdict: success, failure or NotApplicable")

    matrix = sub.add_parser("matrix", help="run every profile against every attack")
    common(matrix, profile=False)
    matrix.add_argument("--grants", help="information categories granted to the attacker")
    matrix.add_argument("--expect", help="'table3' to compare against the reference matrix")
    matrix.add_argument("--jobs", type=int, default=1, help="worker threads")

    explore = sub.add_parser("explore", help="enumerate reachable state combinations")
    common(explore)
    explore.add_argument("--depth", type=int, help="maximum number of actions (default 12)")
    explore.add_argument("--attacker", action="store_true", help="include attacker moves")

    sub.add_parser("list-profiles", help="show the built-in platform profiles")
    return parser


def resolve(args: argparse.Namespace) -> RunConfig:
    """Merge scenario file, flags and environment into a validated :class:`RunConfig`."""
    data: dict = {}
    if getattr(args, "scenario", None):
        data = load_mapping(args.scenario)
        unknown = set(data) - SCENARIO_KEYS
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown scenario key")

    def pick(name):
        value = getattr(args, name, None)
        return data.get(name) if value is None else value

    cfg = RunConfig(args.command)
    if args.command == "list-profiles":
        return cfg
    seed = pick("seed")
    if seed is None:
        env = os.environ.get("PHANTOMLAB_SEED")
        try:
            seed = int(env) if env not in (None, "") else 0
        except ValueError:
            raise ConfigError("PHANTOMLAB_SEED", f"not an integer: {env!r}") from None
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed", "must be an integer")
    cfg.seed = seed
    cfg.flaws_override = _parse_flaws(pick("flaws"))
    cfg.mitigations = _parse_mitigations(pick("mitigations"))
    cfg.report_path = getattr(args, "report", None)
    if args.command in ("run", "explore"):
        name = pick("profile")
        if not name:
            raise ConfigError("profile", f"required for {args.command}")
        try:
            cfg.profile = get_profile(name).name
        except KeyError as exc:
            raise ConfigError("profile", exc.args[0]) from None
        policy = get_profile(cfg.profile).policy(cfg.flaws_override, cfg.mitigations)
        del policy  # constructed only to validate the flaw set for this platform
    if args.command in ("run", "matrix"):
        try:
            cfg.grants = parse_grants(pick("grants"))
        except ValueError as exc:
            raise ConfigError("grants", str(exc)) from None
        cfg.expect = pick("expect")
    if args.command == "run":
        attack = pick("attack")
        if not attack:
            raise ConfigError("attack", "required for run")
        try:
            cfg.attack = AttackKind.parse(str(attack))
        except ValueError as exc:
            raise ConfigError("attack", str(exc)) from None
        cfg.trace_path = args.trace
        if cfg.expect is not None:
            try:
                cfg.expect = _parse_verdict(cfg.expect).value
            except ValueError as exc:
                raise ConfigError("expect", str(exc)) from None
    if args.command == "matrix":
        if cfg.expect is not None and str(cfg.expect).lower() != "table3":
            raise ConfigError("expect", "matrix only supports --expect table3")
        if cfg.flaws_override is not None:
            raise ConfigError("flaws", "matrix uses each profile's own flaw set")
        cfg.jobs = args.jobs
        if cfg.jobs < 1:
            raise ConfigError("jobs", "must be at least 1")
    if args.command == "explore":
        depth = pick("depth")
        cfg.depth = 12 if depth is None else depth
        if isinstance(cfg.depth, bool) or not isinstance(cfg.depth, int) or cfg.depth < 0:
            raise ConfigError("depth", "must be a non-negative integer")
        cfg.attacker = bool(args.attacker or data.get("attacker", False))
    return cfg


def _parse_verdict(text: str) -> Verdict:
    norm = text.strip().lower().replace("_", "").replace("-", "").replace(" ", "")
    for v in Verdict:
        if v.value.lower() == norm:
            return v
    raise ValueError(f"unknown verdict {text!r} (expected success, failure or NotApplicable)")


def _write(path: Optional[str], text: str) -> None:
    if path:
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise ConfigError("output", f"cannot write {path}: {exc.strerror}") from None


def cmd_run(cfg: RunConfig, out) -> int:
    outcome = run_attack(cfg.profile, cfg.attack, cfg.mitigations, cfg.grants, cfg.seed,
                         flaws=cfg.flaws_override)
    exploited = None
    if outcome.success:
        exploited = exploited_flaws(cfg.profile, cfg.attack, cfg.mitigations, cfg.grants,
                                    cfg.seed, flaws=cfg.flaws_override)
    print(f"{cfg.profile} / {cfg.attack.value} (seed {cfg.seed})", file=out)
    print(describe(outcome, exploited), file=out)
    if cfg.trace_path:
        net = Network()
        net.trace = outcome.trace
        _write(cfg.trace_path, net.trace_jsonl())
    _write(cfg.report_path, outcome_json(outcome, exploited) + "\n")
    if cfg.expect is not None and outcome.verdict.value != cfg.expect:
        print(f"expected {cfg.expect}, got {outcome.verdict.value}", file=out)
        return 1
    return 0


def cmd_matrix(cfg: RunConfig, out) -> int:
    matrix = attack_matrix(mitigations=cfg.mitigations, grants=cfg.grants, seed=cfg.seed,
                           jobs=cfg.jobs)
    print(matrix.render(), file=out)
    _write(cfg.report_path, json.dumps(matrix.to_json(), sort_keys=True, indent=2) + "\n")
    if cfg.expect:
        bad = matrix.table3_mismatches()
        if bad:
            for profile, attack, expected, got in bad:
                print(f"mismatch: {profile}/{attack} expected "
                      f"{'success' if expected else 'no success'}, got {got}", file=out)
            return 1
        print("matrix matches table3", file=out)
    return 0


def cmd_explore(cfg: RunConfig, out) -> int:
    profile = get_profile(cfg.profile)
    policy = profile.policy(cfg.flaws_override, cfg.mitigations)
    result = explore_reachable(profile, policy, cfg.depth, attacker=cfg.attacker, seed=cfg.seed)
    for combo in result.sorted_reached():
        mark = "  ILLEGAL" if combo in result.illegal else ""
        print(f"{combo}{mark}", file=out)
    print(f"{len(result.reached)} reached, {len(result.illegal)} illegal, "
          f"{result.states} states explored", file=out)
    report = {"profile": profile.name, "depth": cfg.depth, "attacker": cfg.attacker,
              "flaws": sorted(f.value for f in policy.flaws),
              "mitigations": sorted(m.value for m in policy.mitigations),
              "reached": [str(c) for c in result.sorted_reached()],
              "illegal": [str(c) for c in sorted(result.illegal,
                                                 key=lambda c: tuple(s.value for s in c))]}
    _write(cfg.report_path, json.dumps(report, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_list_profiles(cfg: RunConfig, out) -> int:
    for profile in PROFILES.values():
        schema = ", ".join(f"{k}({v.value})" for k, v in profile.info_schema.items())
        quirks = ",".join(sorted(q.value for q in profile.quirks)) or "-"
        attacks = ",".join(a.value for a in AttackKind if a in TABLE3[profile.name]) or "-"
        print(f"{profile.name:12} {profile.platform.value:7} flaws={format_flaws(profile.identified_flaws)}"
              f" quirks={quirks}", file=out)
        print(f"{'':12} info: {schema}; attacks: {attacks}", file=out)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = sys.stdout
    try:
        cfg = resolve(args)
        handler = {"run": cmd_run, "matrix": cmd_matrix, "explore": cmd_explore,
                   "list-profiles": cmd_list_profiles}[cfg.command]
        return handler(cfg, out)
    except ConfigError as exc:
        print(f"phantomlab: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # never show a traceback to the user
        print(f"phantomlab: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
