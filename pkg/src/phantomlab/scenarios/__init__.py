"""Profiles, attack scenarios, the attack matrix and the reachability explorer."""

from .attacks import (
    AttackMatrix,
    AttackParams,
    ScenarioOutcome,
    Verdict,
    attack_matrix,
    exploited_flaws,
    run_attack,
    session_tenure,
)
from .explore import ExploreResult, explore_reachable
from .profiles import PROFILES, TABLE3, TABLE3_EXPLOITED, AttackKind, PlatformProfile, Quirk, get_profile
from .world import World, parse_grants

__all__ = [
    "AttackKind", "AttackMatrix", "AttackParams", "ExploreResult", "PROFILES", "PlatformProfile",
    "Quirk", "ScenarioOutcome", "TABLE3", "TABLE3_EXPLOITED", "Verdict", "World",
    "attack_matrix", "explore_reachable", "exploited_flaws", "get_profile", "parse_grants",
    "run_attack", "session_tenure",
]
