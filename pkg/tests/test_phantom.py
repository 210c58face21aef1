import random

import pytest

from phantomlab.core import InfoCategory as C
from phantomlab.phantom import (
    InsufficientInformation,
    ProbeError,
    ProbeResult,
    bind_probe,
    enumerate_macs,
    forge,
    granted_knowledge,
    harvest_firmware,
)
from phantomlab.scenarios import World, get_profile
from phantomlab.scenarios.world import make_device_info
from phantomlab.wire import Method


def test_knowledge_follows_grants():
    w = World("Alink", timers=False)
    d = w.device
    schema = get_profile("Alink").info_schema
    k = granted_knowledge(schema, {C.PUBLIC}, d.identity, d.legitimacy)
    assert set(k) == {"cid", "model", "key", "sign"}
    k = granted_knowledge(schema, set(C), d.identity, d.legitimacy)
    assert k["mac"] == d.identity.mac and k["sign"] is True


def test_missing_information_blocks_forging():
    w = World("Alink", timers=False)
    ph = w.add_phantom(grants={C.PUBLIC})
    with pytest.raises(InsufficientInformation) as exc:
        forge(Method.REGISTER_DEVICE, ph)
    assert exc.value.field == "mac" and exc.value.category is C.GUESSABLE


def test_type_ii_phantom_needs_hard_coded_id():
    w = World("KASA", timers=False)
    ph = w.add_phantom(grants={C.PUBLIC, C.GUESSABLE})
    with pytest.raises(InsufficientInformation) as exc:
        forge(Method.LOGIN_DEVICE, ph)
    assert exc.value.field == "device_id" and exc.value.category is C.HARD_CODED
    full = w.add_phantom(name="p2")
    assert forge(Method.LOGIN_DEVICE, full).uuid == w.device.identity.device_id


def test_forged_register_is_accepted_like_the_real_device():
    w = World("Alink", timers=False)
    ph = w.add_phantom()
    w.wait(ph.register())
    assert ph.device_id == w.cloud.device_id_for(w.device.identity)


def test_forge_rejects_cloud_methods():
    w = World("Alink", timers=False)
    with pytest.raises(ValueError):
        forge(Method.APP_BIND, w.add_phantom())


def test_enumerate_macs():
    ids = enumerate_macs("60:01:94", low=0xFFFE, count=4, model="m")
    assert [i.mac for i in ids] == ["60:01:94:00:FF:FE", "60:01:94:00:FF:FF",
                                    "60:01:94:01:00:00", "60:01:94:01:00:01"]
    assert len(enumerate_macs("60:01:94")) == 65536
    with pytest.raises(ValueError):
        enumerate_macs("60:01:94", low=(1 << 24) - 1, count=2)


def test_bind_probe_outcomes():
    w = World("Alink", timers=False)
    w.baseline()
    ph = w.add_phantom()
    assert bind_probe(w.net, "trudy-app", w.victim_id, w.trudy) is ProbeResult.TAKEN
    with pytest.raises(ProbeError):
        bind_probe(w.net, "trudy-app", "0" * 32, w.trudy)
    other = w.factory_register(*_second_device(w))
    assert bind_probe(w.net, ph.name, other, w.trudy) is ProbeResult.OCCUPIED
    assert w.cloud.owner_of(other) == "trudy"


def _second_device(w):
    return make_device_info(w.profile, random.Random(1), index=1)


def test_harvest_firmware_records_errors():
    w = World("Alink", timers=False)
    ph = w.add_phantom()
    model = w.device.identity.model
    images = harvest_firmware(ph, [model, "UNKNOWN"])
    assert list(images) == [model]
    assert ph.harvest_errors == {"UNKNOWN": 4010}


def test_flood_logs_in_every_period():
    w = World("Alink", timers=False)
    w.baseline()
    ph = w.add_phantom()
    w.wait(ph.register())
    ph.flood(period=2)
    w.run_for(10)
    ph.stop_flood()
    logins = [e for e in w.cloud.response_log if e[1] == ph.name and e[2] == "loginDevice"]
    assert len(logins) == 5
    assert w.cloud.session_holder(w.victim_id) == ph.name
