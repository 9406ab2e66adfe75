from types import SimpleNamespace

import numpy as np
import pytest

from gridsentry import DetectableAttackError, ValidationError, build_descriptor, kron_reduce
from gridsentry.attacks import (AttackMode, AttackSignature, Scenario, false_data_injection,
                                line_outage, power_input_change, replay_attack,
                                scenario_from_dict, sensor_attack, stealth_attack,
                                synth_undetectable)
from gridsentry.netmodel import measurements_from_list
from gridsentry.sim import simulate_reduced


def test_generator_power_step(g2l1_id):
    d, _ = g2l1_id
    sig, mode = power_input_change(d, "g1", AttackMode.step(0.1, t_on=1.0))
    assert sig.K == (2,) and sig.labels == ("omega1",)
    assert mode(0.5)[0] == 0.0 and mode(1.0)[0] == pytest.approx(0.1)


def test_load_ramp(g2l1_id):
    d, _ = g2l1_id
    sig, mode = power_input_change(d, "b3", AttackMode.ramp(0.2, t_on=1.0))
    assert sig.labels == ("theta3",)
    assert mode(2.0)[0] == pytest.approx(0.2)


def test_zero_mode_rejected(g2l1_id):
    d, _ = g2l1_id
    with pytest.raises(ValidationError):
        power_input_change(d, "g1", AttackMode.step(0.0))
    with pytest.raises(ValidationError):
        sensor_attack(d, 0, AttackMode.step(0.0))


def test_sensor_bias(g2l1_id):
    d, kr = g2l1_id
    sig, mode = sensor_attack(d, 0, AttackMode.step(0.05))
    assert sig.K == (d.n_state,)
    tr = simulate_reduced(kr, Scenario(sig, mode), None, 0.1)
    assert np.allclose(tr.outputs[:, 0], 0.05) and np.allclose(tr.outputs[:, 1:], 0)
    sig2, _ = sensor_attack(d, [0, 3], AttackMode.step([0.1, 0.2]))
    assert sig2.k == 2


def test_mode_kinds():
    m = AttackMode.sinusoid(2.0, 3.0, 0.5, t_on=1.0, t_off=4.0)
    t = 2.2
    assert m(t)[0] == pytest.approx(2.0 * np.sin(3.0 * (t - 1.0) + 0.5))
    assert m(4.5)[0] == 0.0
    e = AttackMode.exponential([1.0, -1.0], -0.5)
    assert np.allclose(e(2.0), [np.exp(-1.0), -np.exp(-1.0)])
    x = AttackMode.expression("0.1*t + tau", 2, t_on=1.0)
    assert np.allclose(x(3.0), 0.3 + 2.0)
    with pytest.raises(ValidationError):
        AttackMode.expression("undefined_name(t)")
    with pytest.raises(ValidationError):
        AttackMode.step(1.0, t_on=2.0, t_off=1.0)


def test_no_flow_outage_is_invisible(g2l1_id):
    d, kr = g2l1_id
    sc = line_outage(d, "b1", "b3")
    tr = simulate_reduced(kr, sc, [1.0, 1.0, 0.0, 0.0], 1.0)
    assert np.allclose(tr.inputs, 0, atol=1e-14)


def test_outage_matches_edge_deleted_network():
    from gridsentry import load_network, bundled
    net = load_network(bundled("ieee14.json"))
    C = np.eye(24)[:3]
    d = build_descriptor(net, C=C)
    kr = kron_reduce(d)
    cut = kron_reduce(build_descriptor(net.without_line("b4", "b5"), C=C))
    rng = np.random.default_rng(0)
    for _ in range(3):
        x0 = rng.standard_normal(10)
        a = simulate_reduced(kr, line_outage(d, "b4", "b5"), x0, 2.0)
        b = simulate_reduced(cut, None, x0, 2.0)
        assert np.abs(a.states - b.states).max() <= 1e-8


def test_outage_errors(g2l1_id):
    d, _ = g2l1_id
    with pytest.raises(ValidationError):
        line_outage(d, "b1", "b2")
    with pytest.raises(ValidationError, match="internal"):
        line_outage(d, "g1", "b1")
    # b1-b3 is a bridge cutting g1 off, but g1 still feeds b1: allowed
    line_outage(d, "b1", "b3")


def test_outage_stranding_load_bus():
    from gridsentry.netmodel import NetworkSpec
    net = NetworkSpec([1.0], [1.0], 2, [1.0], ((0, 1, 1.0),))
    d = build_descriptor(net, C=np.eye(4)[:1])
    with pytest.raises(ValidationError, match="path"):
        line_outage(d, "b1", "b2")


def test_duplicated_sensor_synthesis(g2l1_dup):
    d, kr = g2l1_dup
    atk = synth_undetectable(kr, [d.n_state, d.n_state + 1])
    assert atk.check_residual <= 1e-6
    assert np.linalg.norm(atk.x0) == pytest.approx(1.0)
    assert atk.zero.s.real == pytest.approx(0.0, abs=1e-9)
    tr = simulate_reduced(kr, atk.scenario, atk.x0, 10.0)
    assert np.abs(tr.outputs).max() <= 1e-8


def test_synthesis_rejects_detectable_set(g2l1_id):
    d, kr = g2l1_id
    with pytest.raises(DetectableAttackError):
        synth_undetectable(kr, [d.n_state])


def test_synthesis_complex_zero():
    from gridsentry import load_network, bundled
    net = load_network(bundled("g2l1.json"))
    meas = measurements_from_list([{"type": "rotor_angle", "gen": "g1"},
                                   {"type": "rotor_angle", "gen": "g2"}])
    d = build_descriptor(net, meas)
    kr = kron_reduce(d)
    # theta1 together with sensor y1 has a complex zero pair on this set
    atk = synth_undetectable(kr, [4, d.n_state], horizon=5.0)
    assert atk.check_residual <= 1e-6


def test_stealth_feasibility(g2l1_dup):
    d, kr = g2l1_dup
    none = stealth_attack(kr, [d.n_state])
    assert not none.feasible and none.certificate["dim_intersection"] == 0
    pair = stealth_attack(kr, [d.n_state, d.n_state + 1])
    assert pair.feasible and pair.certificate["dim_intersection"] == 1
    assert pair.certificate["residual"] <= 1e-10
    with pytest.raises(ValidationError):
        stealth_attack(kr, [0])


def test_fdi_on_stable_networks(g2l1_id, ieee14):
    for _, kr in (g2l1_id, ieee14):
        rep = false_data_injection(kr)
        assert not rep.feasible
        assert rep.certificate["unstable_modes"] == 0
        assert rep.certificate["max_real_eigenvalue"] <= 1e-9


def test_fdi_on_unstable_mock():
    A = np.array([[1.0, 0.0], [0.0, -1.0]])
    C = np.array([[1.0, 0.0], [0.0, 1.0]])
    D = np.hstack([np.zeros((2, 2)), np.eye(2)])
    mock = SimpleNamespace(A=A, C=C, D=D, n_state_channels=2, n_inputs=4,
                           channel_labels=("x1", "x2", "y1", "y2"))
    rep = false_data_injection(mock)
    assert rep.feasible and rep.scenario.K == (2,)
    g = rep.scenario.mode(1.0)
    assert g[0] == pytest.approx(-abs(rep.x0[0]) * np.e * np.sign(rep.x0[0]))


def test_replay(g2l1_id):
    d, kr = g2l1_id
    outs = list(range(d.n_state, d.n_inputs))
    full = replay_attack(kr, outs)
    assert full.feasible and full.certificate["image_included"]
    rep = replay_attack(kr, [3] + outs)
    assert rep.feasible and rep.certificate["degenerate_pencil"]
    assert not replay_attack(kr, [3, d.n_state]).feasible


def test_scenario_json(g2l1_id):
    d, _ = g2l1_id
    sc = scenario_from_dict({"type": "sensor", "channels": [2],
                             "mode": {"kind": "step", "amplitude": 0.2}, "t_on": 1.0}, d)
    assert sc.K == (d.n_state + 2,)
    sc = scenario_from_dict({"type": "custom", "channels": ["omega1", "y1"],
                             "mode": {"kind": "sin", "amplitude": [1, 2], "freq": 1.0}}, d)
    assert sc.K == (2, d.n_state)
    assert scenario_from_dict({"type": "line_outage", "channels": ["b1", "b3"]}, d).feedback
    assert scenario_from_dict({"type": "none"}, d) is None
    for bad in ({"type": "warp"}, {"type": "sensor", "channels": []},
                {"type": "sensor", "channels": [0], "mode": {"kind": "boom"}}):
        with pytest.raises(ValidationError):
            scenario_from_dict(bad, d)


def test_signature_validation(g2l1_id):
    d, _ = g2l1_id
    with pytest.raises(ValidationError):
        AttackSignature(())
    with pytest.raises(ValidationError):
        AttackSignature.of(d, [0, 0])
    a, b = AttackSignature.of(d, [1]), AttackSignature.of(d, [0, 3])
    assert a.union(b).K == (0, 1, 3)
