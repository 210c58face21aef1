"""Platform profiles and the reference flaw-to-attack matrix."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..cloud import PolicyConfig
from ..core import Flaw, InfoCategory, PlatformType, ProtocolRules

P, G, H = InfoCategory.PUBLIC, InfoCategory.GUESSABLE, InfoCategory.HARD_CODED
F = Flaw


class AttackKind(enum.Enum):
    SUBSTITUTION = "Substitution"
    HIJACKING = "Hijacking"
    DOS = "DoS"
    OCCUPATION = "Occupation"
    FIRMWARE_THEFT = "FirmwareTheft"

    @classmethod
    def parse(cls, text: str) -> "AttackKind":
        norm = text.strip().replace("-", "").replace("_", "").replace(" ", "").lower()
        aliases = {"hijack": "hijacking", "firmware": "firmwaretheft", "occupy": "occupation"}
        norm = aliases.get(norm, norm)
        for kind in cls:
            if kind.value.lower() == norm:
                return kind
        raise ValueError(f"unknown attack {text!r}")


class Quirk(enum.Enum):
    NO_DEVICE_SIDE_UNBIND = "NoDeviceSideUnbind"
    LOGIN_CREDENTIAL_CHECK = "LoginCredentialCheck"


@dataclass(frozen=True, eq=False)
class PlatformProfile:
    name: str
    platform: PlatformType
    identified_flaws: frozenset
    info_schema: dict
    identity_fields: tuple = ()
    legitimacy_fields: tuple = ()
    quirks: frozenset = frozenset()
    model_prefix: str = "MODEL"
    mac_prefix: str = "3C:2C:94"

    @property
    def rules(self) -> ProtocolRules:
        return ProtocolRules(self.platform, self.identity_fields, self.legitimacy_fields,
                             device_side_unbind=Quirk.NO_DEVICE_SIDE_UNBIND not in self.quirks)

    def policy(self, flaws: Optional[Iterable] = None, mitigations: Iterable = ()) -> PolicyConfig:
        chosen = self.identified_flaws if flaws is None else flaws
        return PolicyConfig(self.platform, frozenset(chosen), frozenset(mitigations), self.name)


def _profile(name, platform, flaws, schema, identity=(), legit=(), quirks=(), **kw):
    return PlatformProfile(name, platform, frozenset(flaws), dict(schema), tuple(identity),
                           tuple(legit), frozenset(quirks), **kw)


PROFILES: dict[str, PlatformProfile] = {p.name: p for p in (
    _profile("Alink", PlatformType.TYPE_I, {F.F1_1, F.F1_3, F.F2, F.F3, F.F4},
             {"mac": G, "cid": P, "model": P, "key": P, "sign": P},
             identity=("model", "mac", "cid"), legit=("key", "sign"),
             model_prefix="JIKONG_LIVING_OUTLET", mac_prefix="60:01:94"),
    _profile("Joylink", PlatformType.TYPE_I, {F.F1_1, F.F1_3, F.F2, F.F3},
             {"mac": G, "sn": H, "model": P},
             identity=("model", "mac", "sn"), quirks={Quirk.NO_DEVICE_SIDE_UNBIND},
             model_prefix="JD_SMART_PLUG", mac_prefix="3C:2C:94"),
    _profile("KASA", PlatformType.TYPE_II, {F.F1_2, F.F1_3, F.F3},
             {"device_id": H, "mac": G, "hwid": P}, legit=("mac", "hwid"),
             model_prefix="HS110", mac_prefix="50:C7:BF"),
    _profile("MIJIA", PlatformType.TYPE_II, {F.F1_2, F.F1_3, F.F3},
             {"device_id": H, "tagkey": H}, legit=("tagkey",),
             model_prefix="MIJIA_PLUG", mac_prefix="78:11:DC"),
    _profile("SmartThings", PlatformType.TYPE_II, {F.F1_2, F.F1_3},
             {"device_id": H}, quirks={Quirk.LOGIN_CREDENTIAL_CHECK},
             model_prefix="ST_OUTLET", mac_prefix="28:6D:97"),
)}


def get_profile(name) -> PlatformProfile:
    if isinstance(name, PlatformProfile):
        return name
    for key, profile in PROFILES.items():
        if key.lower() == str(name).strip().lower():
            return profile
    raise KeyError(f"unknown profile {name!r} (known: {', '.join(PROFILES)})")


A = AttackKind

# Success cells of the reference matrix (firmware theft is evaluated per policy).
TABLE3: dict[str, frozenset] = {
    "Alink": frozenset({A.HIJACKING, A.SUBSTITUTION, A.DOS, A.OCCUPATION}),
    "Joylink": frozenset({A.SUBSTITUTION, A.OCCUPATION}),
    "KASA": frozenset({A.HIJACKING, A.SUBSTITUTION, A.DOS}),
    "MIJIA": frozenset({A.HIJACKING, A.SUBSTITUTION, A.DOS}),
    "SmartThings": frozenset({A.DOS}),
}

# Flaws each success cell depends on.
TABLE3_EXPLOITED: dict[tuple[str, AttackKind], frozenset] = {
    ("Alink", A.HIJACKING): frozenset({F.F1_1, F.F1_3, F.F2, F.F3, F.F4}),
    ("Alink", A.SUBSTITUTION): frozenset({F.F1_1, F.F1_3, F.F3}),
    ("Alink", A.DOS): frozenset({F.F1_1, F.F1_3, F.F3, F.F4}),
    ("Alink", A.OCCUPATION): frozenset({F.F1_1}),
    ("Joylink", A.SUBSTITUTION): frozenset({F.F1_1, F.F1_3, F.F3}),
    ("Joylink", A.OCCUPATION): frozenset({F.F1_1}),
    ("KASA", A.HIJACKING): frozenset({F.F1_2, F.F3}),
    ("KASA", A.SUBSTITUTION): frozenset({F.F1_3, F.F3}),
    ("KASA", A.DOS): frozenset({F.F1_2}),
    ("MIJIA", A.HIJACKING): frozenset({F.F1_2, F.F3}),
    ("MIJIA", A.SUBSTITUTION): frozenset({F.F1_3, F.F3}),
    ("MIJIA", A.DOS): frozenset({F.F1_2}),
    ("SmartThings", A.DOS): frozenset({F.F1_2}),
}
