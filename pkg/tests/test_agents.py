import pytest

from phantomlab.agents import LifecycleFailure, run_lifecycle
from phantomlab.core import AppState, DeviceState, Mitigation
from phantomlab.netlab import CLOUD
from phantomlab.scenarios import World, get_profile
from phantomlab.wire import Method, Request, RequestCtx


def test_actions_disabled_out_of_state():
    w = World("Alink", timers=False)
    assert w.device.login() is None  # no device id yet
    assert w.device.register() is None  # not provisioned
    assert w.device.upload_status(1) is None
    assert w.app.bind() is None
    assert w.app.control() is None


def test_login_disabled_while_connected():
    w = World("Alink", timers=False)
    w.baseline()
    assert w.device.conn.open
    assert w.device.login() is None


def test_provision_requires_account():
    w = World("KASA", timers=False)
    w.wait(w.app.discover("device"))
    w.wait(w.app.provision("device"))
    assert w.device.state is DeviceState.S2
    assert w.device.owner == w.alice


def test_type_i_discover_after_register_learns_uuid():
    w = World("Joylink", timers=False)
    w.baseline()
    assert w.app.device_id == w.device.device_id == w.victim_id
    assert w.app.state is AppState.S4


def test_app_pushes():
    w = World("KASA", timers=False)
    w.baseline()
    events = [e for _, e, _ in w.app.pushes]
    assert events[:3] == ["bound", "online", "status"]
    assert w.app.last_status == 21


def test_heartbeats_keep_session():
    w = World("Alink", heartbeat_period=10)
    w.baseline()
    start = len(w.cloud.response_log)
    w.run_for(100)
    uploads = [e for e in w.cloud.response_log[start:] if e[2] == "statusUpload"]
    assert len(uploads) == 10
    assert all(e[3] == 1000 for e in uploads)


def test_relogin_after_connection_loss():
    w = World("Alink", relogin_backoff=7)
    w.baseline()
    t = w.net.clock
    w.net.close(w.device.conn)
    w.run_for(20)
    assert w.device.relogins == 1
    assert w.device.login_attempts[-1] == t + 7
    assert w.combination().labels() == ("S4", "S4", "S4")


def test_reset_returns_to_factory():
    w = World("Alink", timers=False)
    w.baseline()
    w.net.immediate(w.device.reset)
    d = w.device
    assert d.state is DeviceState.S1 and d.device_id is None and d.owner is None
    assert d.conn is None
    assert not w.cloud.sessions


def test_reset_is_noop_in_factory_state():
    w = World("Alink", timers=False)
    before = len(w.net.trace)
    w.net.immediate(w.device.reset)
    assert w.device.state is DeviceState.S1 and len(w.net.trace) == before


def test_reset_under_m3_reports_to_cloud():
    policy = get_profile("KASA").policy(mitigations={Mitigation.M3_STATE_GUARD})
    w = World("KASA", policy, timers=False)
    w.baseline()
    w.net.immediate(w.device.reset)
    assert w.cloud.owner_of(w.victim_id) is None
    assert w.app.state is AppState.S1
    assert w.combination().labels() == ("S2", "S1", "S1")


def test_reset_emits_proof_only_with_secret():
    w = World("KASA", timers=False)
    w.baseline()
    w.net.immediate(w.device.reset)
    assert w.device.pending_proof and w.device.pending_proof.startswith("1:")


def test_device_refuses_control_from_strangers():
    w = World("Alink", timers=False)
    w.baseline()
    before = list(w.device.executed)
    req = Request(Method.CONTROL_COMMAND, {"command": "on"}, 1,
                  request_ctx=RequestCtx(uuid=w.victim_id))
    assert w.net.call("alice-app", "device", req).response.code == 4003
    assert w.device.executed == before


def test_lifecycle_failure_names_phase():
    w = World("Alink", timers=False)
    w.cloud.makers.clear()  # the manufacturer never issued this identity
    with pytest.raises(LifecycleFailure) as exc:
        run_lifecycle(w.device, w.app, w.cloud, w.net)
    assert exc.value.phase == "registration" and exc.value.code == 4004


def test_app_signs_in_for_pushes():
    w = World("Alink", timers=False)
    assert w.cloud.push["alice"].joins("alice-app", CLOUD)
