"""Model-based controllers and the closed-loop evaluation harness.

Two controller families:

* inverse-dynamics tracking on fully actuated plants: PD feedback plus the
  model's inverse-dynamics torque evaluated at the desired state;
* energy regulation for underactuated swing-up: actuation proportional to
  the energy error, directed by the pendulum's phase, with a position guard
  on the actuated joint.  A linear balance catch (gains computed once
  against the analytic plant) takes over near the upright state, since the
  energy law alone shapes the orbit but cannot park on the saddle.

The closed-loop harness integrates the plant with RK4 under zero-order
hold, optionally feeding the controller noisy position measurements, and
scores tracking error, energy error, and swing-up success.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_are

from .errors import DivergedRollout
from .evaluation import CosineTrajectory
from .integrators import Trajectory, rk4_step
from .plants import analytic_energy, plant_field


def _wrap_angle(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class Gains:
    """Diagonal PD gains plus the energy-law scalars."""

    kp: np.ndarray
    kd: np.ndarray
    k_energy: float = 1.0
    k_position: float = 1.0

    def __post_init__(self):
        kp = np.atleast_1d(np.asarray(self.kp, dtype=float))
        kd = np.atleast_1d(np.asarray(self.kd, dtype=float))
        if np.any(kp <= 0) or np.any(kd <= 0):
            raise ValueError("PD gains must be strictly positive")
        if self.k_energy <= 0 or self.k_position <= 0:
            raise ValueError("energy and position gains must be strictly positive")
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kd", kd)


@dataclass
class DesiredTrajectory:
    """Sampled reference (q, qd, qdd) on a uniform grid."""

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    dt: float
    spec: CosineTrajectory = None

    @classmethod
    def from_cosine(cls, spec, duration, dt):
        steps = int(round(duration / dt))
        t = np.arange(steps + 1) * dt
        q, qd, qdd = spec.at(t)
        return cls(t=t, q=q, qd=qd, qdd=qdd, dt=float(dt), spec=spec)

    def velocity_scaled(self, factor):
        """Same geometric path traversed `factor` times faster."""
        if self.spec is None:
            raise ValueError("velocity scaling needs the generating spec")
        duration = self.t[-1]
        return DesiredTrajectory.from_cosine(
            self.spec.velocity_scaled(factor), duration, self.dt
        )

    def setpoint(self, t):
        """(q_des, qd_des, qdd_des, beyond) at time t; past the horizon the
        last position is held at rest."""
        k = int(round(t / self.dt))
        if 0 <= k < self.t.shape[0]:
            return self.q[k], self.qd[k], self.qdd[k], False
        n = self.q.shape[1]
        return self.q[-1], np.zeros(n), np.zeros(n), True


def inverse_dynamics_controller(model, gains, traj):
    """PD tracking plus the model's feed-forward torque at the desired
    state.  A `None` model drops the feed-forward, leaving pure PD; past
    the trajectory horizon the controller holds the last setpoint with
    pure PD either way."""

    def control(x, t=0.0):
        x = np.asarray(x, dtype=float)
        n = x.shape[0] // 2
        q, qd = x[:n], x[n:]
        q_des, qd_des, qdd_des, beyond = traj.setpoint(t)
        u = gains.kp * (q_des - q) + gains.kd * (qd_des - qd)
        if model is not None and not beyond:
            u = u + model.inverse(q_des, qd_des, qdd_des)
        return u

    return control


def model_energy_value(model, q, qd):
    """Total energy at a velocity-space state, whatever the model's own
    coordinates are."""
    if getattr(model, "coordinates", "velocity") == "momentum":
        return model.energy(q, model.momentum(q, qd))
    return model.energy(q, qd)


def upright_rest_energy(model, plant):
    """The model's own energy at the plant's upright rest state: the target
    the energy controller regulates to."""
    return model_energy_value(model, plant.upright(), np.zeros(plant.n))


def energy_controller(model, gains, e_des, pendulum_index=1, actuated_index=0):
    """Swing-up energy regulation for a single-input underactuated plant.

    u = k_E (E - E_des) sign(th_dot cos th) - k_pos q_act, with th the
    pendulum angle measured from upright.  With energy below target the law
    accelerates the support against the pendulum's phase, feeding energy
    in; above target it brakes.  The guard term keeps the actuated joint
    near its origin."""

    def control(x, t=0.0):
        x = np.asarray(x, dtype=float)
        n = x.shape[0] // 2
        q, qd = x[:n], x[n:]
        energy_err = model_energy_value(model, q, qd) - e_des
        direction = np.sign(qd[pendulum_index] * np.cos(q[pendulum_index]))
        u = gains.k_energy * energy_err * direction \
            - gains.k_position * q[actuated_index]
        return np.array([u])

    return control


def balance_gains(plant, weights=None, effort=1.0, friction=None):
    """LQR state feedback stabilizing the upright rest state.

    Linearizes the actuated analytic dynamics by central differences and
    solves the continuous-time Riccati equation.  Returns (K, x_ref) with
    the control law u = -K (x - x_ref); computed once from the analytic
    plant and then frozen, whatever model does the swing-up.
    """
    n = plant.n
    x_ref = np.concatenate([plant.upright(), np.zeros(n)])
    u0 = np.zeros(plant.act_dim)
    f = plant_field(plant, friction=friction, actuated=True)
    h = 1e-6
    A = np.zeros((2 * n, 2 * n))
    for i in range(2 * n):
        dx = np.zeros(2 * n)
        dx[i] = h
        A[:, i] = (f(x_ref + dx, u0) - f(x_ref - dx, u0)) / (2 * h)
    Bm = np.zeros((2 * n, plant.act_dim))
    for i in range(plant.act_dim):
        du = np.zeros(plant.act_dim)
        du[i] = h
        Bm[:, i] = (f(x_ref, u0 + du) - f(x_ref, u0 - du)) / (2 * h)
    if weights is None:
        weights = np.concatenate([np.full(n, 10.0), np.ones(n)])
    Q = np.diag(np.asarray(weights, dtype=float))
    R = effort * np.eye(plant.act_dim)
    P = solve_continuous_are(A, Bm, Q, R)
    K = np.linalg.solve(R, Bm.T @ P)
    return K, x_ref


def swingup_controller(model, gains, e_des, plant, balance,
                       catch_angle=0.3, catch_rate=2.0):
    """Energy pumping away from the top, linear balance once the pendulum
    enters the catch region.  The switch is a pure function of the state,
    so the controller stays deterministic in (x, t)."""
    K, x_ref = balance
    n = plant.n
    pend = plant.pendulum_index
    pump = energy_controller(model, gains, e_des, pendulum_index=pend)

    def control(x, t=0.0):
        x = np.asarray(x, dtype=float)
        dev = x - x_ref
        dev[:n] = _wrap_angle(dev[:n]) if plant.kind == "furuta" else np.concatenate(
            [dev[:1], _wrap_angle(dev[1:n])]
        )
        if abs(dev[pend]) <= catch_angle and abs(x[n + pend]) <= catch_rate:
            return -K @ dev
        return pump(x, t)

    return control


@dataclass
class ControlMetrics:
    """Episode scores; fields stay None when their reference is absent."""

    tracking_mse: float = None
    energy_error: np.ndarray = None
    success: bool = None


def swingup_success(traj, plant, window=2.0, angle_tol=0.1, rate_tol=0.5):
    """Pendulum within the upright tolerance and all joints slow over the
    final window of the episode."""
    n = plant.n
    pend = plant.pendulum_index
    dt = traj.t[1] - traj.t[0]
    k = max(1, int(round(window / dt)))
    tail = traj.X[-k:]
    dev = _wrap_angle(tail[:, pend] - plant.upright()[pend])
    return bool(
        np.all(np.abs(dev) <= angle_tol)
        and np.all(np.abs(tail[:, n:]) <= rate_tol)
    )


def closed_loop_simulate(plant, controller, dt, horizon, x0, sensor_noise=0.0,
                         seed=0, desired=None, e_des=None, friction=None,
                         saturation=None, diverge_limit=1e6):
    """Simulate the plant under feedback; returns (Trajectory, ControlMetrics).

    One RK4 step per control period with the actuation held constant across
    it.  `sensor_noise` is the standard deviation of additive Gaussian noise
    on the positions the controller sees (the integrator always uses the
    true state).  Tracking error is scored against `desired` when given,
    the energy-error series against `e_des`, and the swing-up flag whenever
    the plant designates a pendulum coordinate.
    """
    n = plant.n
    field = plant_field(plant, friction=friction, actuated=True)
    steps = int(round(horizon / dt))
    x = np.asarray(x0, dtype=float).copy()
    X = np.zeros((steps + 1, 2 * n))
    U = np.zeros((steps, plant.act_dim))
    X[0] = x
    rng = np.random.default_rng(seed)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            x_obs = x.copy()
            if sensor_noise > 0:
                x_obs[:n] += rng.normal(scale=sensor_noise, size=n)
            u = np.atleast_1d(np.asarray(controller(x_obs, k * dt), dtype=float))
            if saturation is not None:
                u = np.clip(u, -saturation, saturation)
            x = rk4_step(field, x, u, dt)
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > diverge_limit:
                raise DivergedRollout(
                    f"closed-loop state left the sanity bound at step {k + 1}",
                    step=k + 1,
                )
            U[k] = u
            X[k + 1] = x
    t = np.arange(steps + 1) * dt
    E = analytic_energy(plant, X[:, :n], X[:, n:])
    traj = Trajectory(t=t, X=X, U=U, E=E)

    metrics = ControlMetrics()
    if desired is not None:
        m = min(steps + 1, desired.q.shape[0])
        metrics.tracking_mse = float(
            np.mean((X[:m, :n] - desired.q[:m]) ** 2)
        )
    if e_des is not None:
        metrics.energy_error = E - e_des
    if plant.pendulum_index is not None:
        metrics.success = swingup_success(traj, plant)
    return traj, metrics


def save_episode(traj, e_des, path):
    """Episode log as CSV: t, positions, velocities, actuation, energy, and
    the energy target (actuation repeats its last row on the final state)."""
    X = traj.X
    n = X.shape[1] // 2
    U = traj.U
    if U.shape[0] == X.shape[0] - 1:
        U = np.vstack([U, U[-1]])
    cols = ["t"] + [f"q{i}" for i in range(n)] + [f"dq{i}" for i in range(n)]
    cols += [f"u{i}" for i in range(U.shape[1])] + ["E", "E_des"]
    table = np.column_stack([
        traj.t, X, U, traj.E, np.full(traj.t.shape[0], e_des),
    ])
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in table:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
