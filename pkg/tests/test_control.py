"""Tracking, energy regulation, swing-up, and closed-loop simulator tests."""

import numpy as np
import pytest

from mechlearn.control import (
    ControlMetrics,
    DesiredTrajectory,
    Gains,
    balance_gains,
    closed_loop_simulate,
    energy_controller,
    inverse_dynamics_controller,
    model_energy_value,
    save_episode,
    swingup_controller,
    swingup_success,
    upright_rest_energy,
)
from mechlearn.errors import DivergedRollout
from mechlearn.evaluation import CosineTrajectory
from mechlearn.integrators import Trajectory
from mechlearn.models import AnalyticHamiltonianModel, AnalyticLagrangianModel
from mechlearn.plants import analytic_energy, make_plant


def two_link_tracking_setup(duration=4.0, dt=0.01):
    plant = make_plant("two-link")
    spec = CosineTrajectory(
        amplitude=np.array([0.8, 0.6]),
        frequency=np.array([0.5, 0.7]),
        chirp=np.array([0.05, 0.03]),
        phase=np.array([0.0, 1.0]),
    )
    des = DesiredTrajectory.from_cosine(spec, duration=duration, dt=dt)
    gains = Gains(kp=np.full(2, 50.0), kd=np.full(2, 10.0))
    return plant, des, gains


# ---------------------------------------------------------------- gains


def test_gains_reject_nonpositive_feedback():
    with pytest.raises(ValueError):
        Gains(kp=np.array([1.0, -1.0]), kd=np.ones(2))
    with pytest.raises(ValueError):
        Gains(kp=np.ones(2), kd=np.zeros(2) - 1.0)
    with pytest.raises(ValueError):
        Gains(kp=np.ones(2), kd=np.ones(2), k_energy=-0.5)


def test_gains_defaults():
    g = Gains(kp=np.ones(2), kd=np.ones(2))
    assert g.k_energy == 1.0
    assert g.k_position == 1.0


# ---------------------------------------------- desired trajectories


def test_desired_from_cosine_matches_generator():
    spec = CosineTrajectory(
        amplitude=np.array([0.5]), frequency=np.array([0.8]),
        chirp=np.array([0.02]), phase=np.array([0.3]),
    )
    des = DesiredTrajectory.from_cosine(spec, duration=2.0, dt=0.01)
    assert des.q.shape == (201, 1)
    for k in (0, 57, 200):
        q, qd, qdd = spec.at(k * 0.01)
        assert np.allclose(des.q[k], q)
        assert np.allclose(des.qd[k], qd)
        assert np.allclose(des.qdd[k], qdd)


def test_setpoint_on_grid_and_beyond():
    plant, des, gains = two_link_tracking_setup(duration=1.0)
    q, qd, qdd, beyond = des.setpoint(0.37)
    k = int(round(0.37 / 0.01))
    assert not beyond
    assert np.array_equal(q, des.q[k])
    assert np.array_equal(qd, des.qd[k])
    # past the horizon the setpoint freezes at the last position, at rest
    q, qd, qdd, beyond = des.setpoint(5.0)
    assert beyond
    assert np.array_equal(q, des.q[-1])
    assert np.array_equal(qd, np.zeros(2))
    assert np.array_equal(qdd, np.zeros(2))


def test_velocity_scaled_reindexes_the_spec():
    plant, des, gains = two_link_tracking_setup()
    fast = des.velocity_scaled(2.0)
    assert np.allclose(fast.spec.frequency, 2.0 * des.spec.frequency)
    assert np.allclose(fast.spec.chirp, 4.0 * des.spec.chirp)
    assert fast.q.shape == des.q.shape
    # same phase at t = 0, twice the slope scale overall
    assert np.allclose(fast.q[0], des.q[0])
    assert np.allclose(fast.qd[0], 2.0 * des.qd[0])


def test_velocity_scaled_requires_a_spec():
    des = DesiredTrajectory(
        t=np.arange(3) * 0.1, q=np.zeros((3, 1)), qd=np.zeros((3, 1)),
        qdd=np.zeros((3, 1)), dt=0.1,
    )
    with pytest.raises(ValueError):
        des.velocity_scaled(1.5)


# ------------------------------------------- inverse-dynamics tracking


def test_feedforward_on_trajectory_is_model_inverse():
    plant, des, gains = two_link_tracking_setup()
    model = AnalyticLagrangianModel(plant)
    ctrl = inverse_dynamics_controller(model, gains, des)
    # sitting exactly on the setpoint: the PD term drops out
    x = np.concatenate([des.q[0], des.qd[0]])
    u = ctrl(x, 0.0)
    expect = plant.inverse(des.q[0], des.qd[0], des.qdd[0])
    assert np.allclose(u, expect, rtol=1e-12, atol=1e-12)


def test_none_model_is_pure_pd():
    plant, des, gains = two_link_tracking_setup()
    ctrl = inverse_dynamics_controller(None, gains, des)
    x = np.array([0.3, -0.2, 0.1, 0.4])
    u = ctrl(x, 0.0)
    expect = gains.kp * (des.q[0] - x[:2]) + gains.kd * (des.qd[0] - x[2:])
    assert np.array_equal(u, expect)


def test_feedforward_beats_pure_pd_tenfold():
    plant, des, gains = two_link_tracking_setup()
    model = AnalyticLagrangianModel(plant)
    x0 = np.concatenate([des.q[0], des.qd[0]])
    mses = {}
    for name, m in (("pd", None), ("id", model)):
        ctrl = inverse_dynamics_controller(m, gains, des)
        _, metrics = closed_loop_simulate(
            plant, ctrl, 0.01, 4.0, x0, desired=des)
        mses[name] = metrics.tracking_mse
    assert mses["id"] * 10.0 < mses["pd"]


def test_tracking_degrades_monotonically_with_speed():
    plant, des, gains = two_link_tracking_setup()
    # feed-forward from a plant with 15% heavier links: the model error
    # grows with the commanded accelerations, so faster references hurt
    heavy = plant.with_params(mass=tuple(1.15 * np.array(plant.params.mass)))
    model = AnalyticLagrangianModel(heavy)
    mses = []
    for factor in (1.0, 1.5, 2.0):
        d = des.velocity_scaled(factor)
        ctrl = inverse_dynamics_controller(model, gains, d)
        x0 = np.concatenate([d.q[0], d.qd[0]])
        _, metrics = closed_loop_simulate(plant, ctrl, 0.01, 4.0, x0, desired=d)
        mses.append(metrics.tracking_mse)
    assert mses[0] < mses[1] < mses[2]


def test_momentum_model_energy_value_matches_velocity_form():
    plant = make_plant("cartpole")
    lag = AnalyticLagrangianModel(plant)
    ham = AnalyticHamiltonianModel(plant)
    q = np.array([0.3, 2.0])
    qd = np.array([-0.5, 1.2])
    assert np.isclose(model_energy_value(ham, q, qd),
                      model_energy_value(lag, q, qd), rtol=1e-12)


# ----------------------------------------------------- energy shaping


def test_energy_controller_formula():
    plant = make_plant("cartpole")
    model = AnalyticLagrangianModel(plant)
    gains = Gains(kp=np.ones(2), kd=np.ones(2), k_energy=3.0, k_position=0.7)
    e_des = upright_rest_energy(model, plant)
    ctrl = energy_controller(model, gains, e_des)
    x = np.array([0.4, 2.5, -0.3, 1.1])
    e = model_energy_value(model, x[:2], x[2:])
    by_hand = 3.0 * (e - e_des) * np.sign(x[3] * np.cos(x[1])) - 0.7 * x[0]
    assert np.allclose(ctrl(x), [by_hand], rtol=1e-12)


def test_energy_controller_idle_at_target():
    plant = make_plant("cartpole")
    model = AnalyticLagrangianModel(plant)
    e_des = upright_rest_energy(model, plant)
    gains = Gains(kp=np.ones(2), kd=np.ones(2), k_energy=5.0, k_position=0.4)
    ctrl = energy_controller(model, gains, e_des)
    # at the upright rest state the energy error and the guard both vanish
    u = ctrl(np.concatenate([plant.upright(), np.zeros(2)]))
    assert np.allclose(u, [0.0], atol=1e-12)


def test_energy_error_contracts_over_swing_windows():
    # pure pumping (guard off, no saturation) on the frictionless cartpole:
    # the worst energy error within each one-second window shrinks
    plant = make_plant("cartpole")
    model = AnalyticLagrangianModel(plant)
    e_des = upright_rest_energy(model, plant)
    gains = Gains(kp=np.ones(2), kd=np.ones(2), k_energy=8.0,
                  k_position=1e-12)
    ctrl = energy_controller(model, gains, e_des)
    x0 = np.concatenate([plant.hanging(), np.zeros(2)])
    x0[1] -= 0.05
    traj, _ = closed_loop_simulate(plant, ctrl, 0.01, 12.0, x0, e_des=e_des)
    err = np.abs(traj.E - e_des)
    per_second = err[:1200].reshape(12, 100).max(axis=1)
    assert np.all(np.diff(per_second) <= 1e-9)
    assert per_second[-1] < 1e-3


# -------------------------------------------------- balance and catch


def test_balance_gains_hold_cartpole_upright():
    plant = make_plant("cartpole")
    K, x_ref = balance_gains(plant, weights=[10.0, 10.0, 1.0, 1.0],
                             effort=1.0)
    assert np.array_equal(x_ref, np.concatenate([plant.upright(), np.zeros(2)]))
    ctrl = lambda x, t=0.0: -K @ (x - x_ref)
    x0 = x_ref.copy()
    x0[1] += 0.25
    traj, metrics = closed_loop_simulate(plant, ctrl, 0.01, 5.0, x0)
    assert metrics.success


def test_balance_gains_hold_furuta_upright():
    plant = make_plant("furuta")
    K, x_ref = balance_gains(plant, weights=[0.5, 10.0, 0.05, 0.2],
                             effort=50.0)
    ctrl = lambda x, t=0.0: -K @ (x - x_ref)
    x0 = x_ref.copy()
    x0[1] += 0.25
    traj, metrics = closed_loop_simulate(plant, ctrl, 0.005, 5.0, x0,
                                         saturation=0.15)
    assert metrics.success


def test_swingup_cartpole():
    plant = make_plant("cartpole")
    model = AnalyticLagrangianModel(plant)
    e_des = upright_rest_energy(model, plant)
    balance = balance_gains(plant, weights=[10.0, 10.0, 1.0, 1.0], effort=1.0)
    gains = Gains(kp=np.ones(2), kd=np.ones(2), k_energy=8.0, k_position=0.5)
    ctrl = swingup_controller(model, gains, e_des, plant, balance,
                              catch_angle=0.5, catch_rate=1.6)
    x0 = np.concatenate([plant.hanging(), np.zeros(2)])
    x0[1] -= 0.05
    traj, metrics = closed_loop_simulate(plant, ctrl, 0.01, 15.0, x0,
                                         e_des=e_des, saturation=10.0)
    assert metrics.success
    assert abs(metrics.energy_error[-1]) < 1e-2


def test_swingup_furuta():
    plant = make_plant("furuta")
    model = AnalyticLagrangianModel(plant)
    e_des = upright_rest_energy(model, plant)
    balance = balance_gains(plant, weights=[0.5, 10.0, 0.05, 0.2],
                            effort=50.0)
    gains = Gains(kp=np.ones(2), kd=np.ones(2), k_energy=1.0, k_position=0.1)
    ctrl = swingup_controller(model, gains, e_des, plant, balance,
                              catch_angle=0.5, catch_rate=3.0)
    x0 = np.concatenate([plant.hanging(), np.zeros(2)])
    x0[1] -= 0.05
    traj, metrics = closed_loop_simulate(plant, ctrl, 0.005, 15.0, x0,
                                         e_des=e_des, saturation=0.15)
    assert metrics.success


def test_swingup_success_scores_the_final_window():
    plant = make_plant("cartpole")
    t = np.arange(501) * 0.01
    up = np.concatenate([plant.upright(), np.zeros(2)])
    down = np.concatenate([plant.hanging(), np.zeros(2)])
    X = np.tile(up, (501, 1))
    U = np.zeros((500, 1))
    assert swingup_success(Trajectory(t=t, X=X, U=U), plant)
    assert not swingup_success(Trajectory(t=t, X=np.tile(down, (501, 1)), U=U),
                               plant)
    # an episode that reaches the top late still counts
    late = np.tile(down, (501, 1))
    late[-200:] = up
    assert swingup_success(Trajectory(t=t, X=late, U=U), plant)
    # fast spinning at the top does not
    spin = np.tile(up, (501, 1))
    spin[:, 3] = 2.0
    assert not swingup_success(Trajectory(t=t, X=spin, U=U), plant)


# ------------------------------------------------- closed-loop details


def test_rest_state_stays_at_rest():
    plant = make_plant("two-link")
    ctrl = lambda x, t=0.0: np.zeros(2)
    x0 = np.concatenate([plant.hanging(), np.zeros(2)])
    traj, _ = closed_loop_simulate(plant, ctrl, 0.01, 1.0, x0)
    assert np.allclose(traj.X, x0, atol=1e-12)
    assert np.allclose(traj.E, traj.E[0], atol=1e-12)


def test_sensor_noise_is_seeded():
    plant, des, gains = two_link_tracking_setup(duration=1.0)
    model = AnalyticLagrangianModel(plant)
    x0 = np.concatenate([des.q[0], des.qd[0]])
    runs = []
    for seed in (7, 7, 8):
        ctrl = inverse_dynamics_controller(model, gains, des)
        traj, _ = closed_loop_simulate(plant, ctrl, 0.01, 1.0, x0,
                                       sensor_noise=1e-3, seed=seed)
        runs.append(traj.X)
    assert np.array_equal(runs[0], runs[1])
    assert not np.array_equal(runs[0], runs[2])


def test_noise_only_affects_the_controller():
    # zero feedback: the rollout must not depend on the sensor noise at all
    plant = make_plant("two-link")
    ctrl = lambda x, t=0.0: np.zeros(2)
    x0 = np.array([0.5, -0.3, 0.0, 0.0])
    clean, _ = closed_loop_simulate(plant, ctrl, 0.01, 1.0, x0)
    noisy, _ = closed_loop_simulate(plant, ctrl, 0.01, 1.0, x0,
                                    sensor_noise=0.5, seed=3)
    assert np.array_equal(clean.X, noisy.X)


def test_saturation_clips_recorded_actuation():
    plant = make_plant("cartpole")
    ctrl = lambda x, t=0.0: np.array([37.0])
    x0 = np.concatenate([plant.hanging(), np.zeros(2)])
    traj, _ = closed_loop_simulate(plant, ctrl, 0.01, 0.5, x0, saturation=2.0)
    assert np.all(np.abs(traj.U) <= 2.0)
    assert np.allclose(traj.U, 2.0)


def test_unstable_feedback_raises_diverged():
    plant = make_plant("two-link")
    ctrl = lambda x, t=0.0: 50.0 * x[2:] + 5.0
    x0 = np.concatenate([plant.hanging(), np.zeros(2)])
    with pytest.raises(DivergedRollout) as info:
        closed_loop_simulate(plant, ctrl, 0.01, 10.0, x0, diverge_limit=1e3)
    assert info.value.step >= 1


def test_metrics_default_to_absent():
    m = ControlMetrics()
    assert m.tracking_mse is None
    assert m.energy_error is None
    assert m.success is None


def test_save_episode_roundtrip(tmp_path):
    plant = make_plant("cartpole")
    model = AnalyticLagrangianModel(plant)
    e_des = upright_rest_energy(model, plant)
    gains = Gains(kp=np.ones(2), kd=np.ones(2), k_energy=8.0, k_position=0.5)
    ctrl = energy_controller(model, gains, e_des)
    x0 = np.concatenate([plant.hanging(), np.zeros(2)])
    x0[1] -= 0.05
    traj, _ = closed_loop_simulate(plant, ctrl, 0.01, 0.5, x0, e_des=e_des)
    path = tmp_path / "episode.csv"
    save_episode(traj, e_des, path)
    header = path.read_text().splitlines()[0]
    assert header == "t,q0,q1,dq0,dq1,u0,E,E_des"
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    assert table.shape == (51, 8)
    assert np.array_equal(table[:, 0], traj.t)
    assert np.allclose(table[:, 7], e_des)
    # actuation column repeats its last value on the terminal row
    assert table[-1, 5] == table[-2, 5]
    assert np.array_equal(table[:, 6], traj.E)


def test_episode_energy_column_is_the_plant_energy():
    plant = make_plant("furuta")
    ctrl = lambda x, t=0.0: np.array([0.05])
    x0 = np.concatenate([plant.hanging(), np.zeros(2)])
    traj, _ = closed_loop_simulate(plant, ctrl, 0.005, 0.5, x0)
    expect = analytic_energy(plant, traj.X[:, :2], traj.X[:, 2:])
    assert np.allclose(traj.E, expect, rtol=1e-12)
