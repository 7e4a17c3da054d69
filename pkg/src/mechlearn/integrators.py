"""Fixed-step explicit integrators and rollout bookkeeping.

Two steppers: explicit Euler and the classical fourth-order Runge-Kutta
scheme.  Inputs are zero-order-hold: one control vector per step, held
constant across the Runge-Kutta substages.  Rollout time stamps come from
the step index (t_k = k dt), never from repeated accumulation, so the grids
of different runs line up exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergedRollout


def euler_step(field, x, u, dt):
    return x + dt * np.asarray(field(x, u))


def rk4_step(field, x, u, dt):
    k1 = np.asarray(field(x, u))
    k2 = np.asarray(field(x + 0.5 * dt * k1, u))
    k3 = np.asarray(field(x + 0.5 * dt * k2, u))
    k4 = np.asarray(field(x + dt * k3, u))
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


STEPPERS = {"euler": euler_step, "rk4": rk4_step}


@dataclass
class Trajectory:
    """Rollout record: samples X[k] at t[k] = k dt, inputs U[k] applied over
    the step from t[k] to t[k+1].  `E` holds the supplied energy functional
    sampled along the trajectory, when one was given."""

    t: np.ndarray
    X: np.ndarray
    U: np.ndarray
    E: np.ndarray = None

    @property
    def steps(self):
        return self.X.shape[0] - 1


def rollout(field, x0, dt, steps, controls=None, method="rk4", diverge_limit=1e6,
            energy_fn=None):
    """Integrate `field` for `steps` fixed steps from `x0`.

    `controls` is a (steps, m) array or None for an unforced run (the field
    then sees zeros of half the state width).  Raises DivergedRollout as
    soon as a step produces a non-finite state or one with magnitude above
    `diverge_limit`; the error's `step` attribute is the 0-based index of
    the offending step.  `energy_fn`, when given, is evaluated at every
    sample and recorded on the trajectory.
    """
    if method not in STEPPERS:
        raise ValueError(f"unknown integration method {method!r}")
    step_fn = STEPPERS[method]
    x0 = np.asarray(x0, dtype=float)
    if controls is None:
        controls = np.zeros((steps, x0.shape[-1] // 2))
    else:
        controls = np.asarray(controls, dtype=float)
        if controls.shape[0] != steps:
            raise ValueError(
                f"controls has {controls.shape[0]} rows for {steps} steps"
            )
    X = np.empty((steps + 1, x0.shape[-1]))
    X[0] = x0
    x = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            x = step_fn(field, x, controls[k], dt)
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > diverge_limit:
                raise DivergedRollout(
                    f"rollout diverged at step {k} (t = {k * dt:.6g})", step=k
                )
            X[k + 1] = x
    t = np.arange(steps + 1) * dt
    E = None
    if energy_fn is not None:
        E = np.array([energy_fn(xk) for xk in X])
    return Trajectory(t=t, X=X, U=controls, E=E)
