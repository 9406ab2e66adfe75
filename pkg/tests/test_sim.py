import numpy as np
import pytest

from gridsentry import SimulationError, ValidationError, build_descriptor, kron_reduce
from gridsentry.attacks import AttackMode, Scenario, AttackSignature, sensor_attack
from gridsentry.sim import (Trajectory, consistent_init, simulate_descriptor,
                            simulate_reduced)

from conftest import dae_rk4, random_descriptor


def test_zero_trajectory(g2l1_id):
    _, kr = g2l1_id
    tr = simulate_reduced(kr, None, None, 1.0)
    assert np.all(tr.states == 0) and np.all(tr.outputs == 0)
    assert len(tr.times) == 1001


def test_uniform_angle_is_equilibrium(g2l1_id):
    _, kr = g2l1_id
    tr = simulate_reduced(kr, None, [1.0, 1.0, 0.0, 0.0], 2.0)
    assert np.allclose(tr.states, [1.0, 1.0, 0.0, 0.0], atol=1e-12)


def test_fourth_order_convergence(g2l1_id):
    d, kr = g2l1_id
    sc = Scenario(AttackSignature.of(d, [2]), AttackMode.sinusoid(0.5, 1.3))
    x0 = [0.3, -0.1, 0.2, 0.0]
    ys = [simulate_reduced(kr, sc, x0, 4.0, h).outputs for h in (0.04, 0.02, 0.01)]
    e1 = np.abs(ys[0] - ys[1][::2]).max()
    e2 = np.abs(ys[1] - ys[2][::2]).max()
    assert 12 < e1 / e2 < 20        # ratio 16 for a fourth-order scheme


def test_consistent_init(g2l1_id):
    d, _ = g2l1_id
    x = consistent_init(d, [1, 1, 0, 0, 0, 0, 0])
    assert np.allclose(x[4:], [1, 1, 1])
    assert np.allclose(consistent_init(d, x), x)
    f0 = np.zeros(7)
    f0[6] = 0.4
    shifted = consistent_init(d, x, f0)
    L_inv = np.linalg.inv(d.laplacian.L_ll)
    assert np.allclose(shifted[4:] - x[4:], L_inv @ f0[4:])


def test_inconsistent_initial_state(g2l1_id):
    d, _ = g2l1_id
    with pytest.raises(SimulationError, match="algebraic"):
        simulate_descriptor(d, None, [1, 0, 0, 0, 0, 0, 0], 0.1)


def test_sensor_attack_leaves_state(g2l1_id):
    d, kr = g2l1_id
    sig, mode = sensor_attack(d, 0, AttackMode.step(0.2, 0.5))
    x0 = consistent_init(d, [0.1, 0.2, 0.0, 0.1, 0, 0, 0])
    a = simulate_descriptor(d, None, x0, 2.0)
    b = simulate_descriptor(d, Scenario(sig, mode), x0, 2.0)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.theta, b.theta)
    diff = b.outputs - a.outputs
    assert np.allclose(diff[:, 1:], 0)
    assert np.allclose(diff[a.times >= 0.5, 0], 0.2)


def test_descriptor_matches_reference_integrator():
    rng = np.random.default_rng(6)
    d = random_descriptor(rng)
    K = sorted(rng.choice(d.n_inputs, 3, replace=False))
    sc = Scenario(AttackSignature.of(d, K), AttackMode.sinusoid(rng.uniform(0.5, 1, 3), 2.0))
    x0 = consistent_init(d, rng.standard_normal(d.n_state), sc.input_vector(0, None, d.n_inputs)[:d.n_state])
    tr = simulate_descriptor(d, sc, x0, 2.0, 1e-2)
    ref = dae_rk4(d, lambda t: sc.input_vector(t, None, d.n_inputs), x0, 2.0, 1e-2)
    assert np.abs(tr.outputs - ref).max() <= 1e-10 * max(1.0, np.abs(ref).max())


def test_energy_decreases():
    rng = np.random.default_rng(7)
    d = random_descriptor(rng)
    kr = kron_reduce(d)
    n = d.n_gen
    tr = simulate_reduced(kr, None, rng.standard_normal(2 * n), 5.0, 1e-2)
    M = np.diag(d.network.inertia)
    delta, omega = tr.states[:, :n], tr.states[:, n:]
    V = np.einsum("ti,ij,tj->t", omega, M, omega) + np.einsum("ti,ij,tj->t", delta, kr.L_red, delta)
    assert np.all(np.diff(V) <= 1e-10)


def test_linearity(g2l1_id):
    d, kr = g2l1_id
    s1 = Scenario(AttackSignature.of(d, [3]), AttackMode.step(0.3))
    s2 = Scenario(AttackSignature.of(d, [3]), AttackMode.ramp(-0.1))
    s12 = Scenario(AttackSignature.of(d, [3]),
                   AttackMode(1, s1.mode.terms + s2.mode.terms))
    x1, x2 = np.array([0.1, 0, 0, 0.2]), np.array([0, -0.3, 0.1, 0])
    y1 = simulate_reduced(kr, s1, x1, 2.0).outputs
    y2 = simulate_reduced(kr, s2, x2, 2.0).outputs
    y12 = simulate_reduced(kr, s12, x1 + x2, 2.0).outputs
    assert np.allclose(y1 + y2, y12, atol=1e-12)


def test_blowup_reported(g2l1_id):
    d, kr = g2l1_id
    sc = Scenario(AttackSignature.of(d, [2]), AttackMode.exponential(1.0, 400.0))
    with pytest.raises(SimulationError) as err:
        simulate_reduced(kr, sc, None, 5.0, 1e-2)
    assert err.value.last_time is not None and err.value.last_time < 5.0


def test_bad_step(g2l1_id):
    _, kr = g2l1_id
    with pytest.raises(ValidationError):
        simulate_reduced(kr, None, None, 1.0, -1e-3)
    with pytest.raises(ValidationError):
        simulate_reduced(kr, None, None, 1.0, 0.3)


def test_known_input(g2l1_id):
    d, kr = g2l1_id
    P = lambda t: np.r_[0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.05]
    a = simulate_reduced(kr, None, None, 1.0, known_input=P)
    sc = Scenario(AttackSignature.of(d, [2, 6]), AttackMode.step([0.1, 0.05]))
    b = simulate_reduced(kr, sc, None, 1.0)
    assert np.allclose(a.outputs, b.outputs)
    assert a.known.shape == (1001, 7)


def test_csv_export(g2l1_id, tmp_path):
    d, kr = g2l1_id
    tr = simulate_reduced(kr, None, [0.1, 0, 0, 0], 0.01, recover=True)
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    head = path.read_text().splitlines()[0].split(",")
    assert head[:5] == ["t", "delta1", "delta2", "omega1", "omega2"]
    assert head[-1] == f"y{kr.n_out}" and "theta3" in head


def test_nonuniform_grid_rejected():
    with pytest.raises(ValidationError):
        Trajectory(np.array([0.0, 1.0, 3.0]), np.zeros((3, 2)), np.zeros((3, 1)), np.zeros((3, 1)))
