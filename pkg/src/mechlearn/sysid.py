"""Linear-in-parameters system identification with ridge pull toward a
nominal parameter vector.

Rigid-body inverse dynamics is linear in a small set of lumped base
parameters theta: tau = A(q, qd, qdd) theta.  The regressor blocks below
were derived by hand for each plant and are gated by an identity test
against the analytic inverse dynamics before any fitting is trusted.

The fit solves

    theta* = theta0 + argmin_d || [A; lam I] d - [tau - A theta0; 0] ||

via QR (column-pivoted least squares on the stacked system), equivalent to
theta* = theta0 + (A^T A + lam^2 I)^-1 A^T (tau - A theta0) but without
forming normal equations.  The unregularized condition number is reported
with every fit; recovered parameters are checked for physical plausibility
(positive lumped masses/inertias) but never clamped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lstsq

from .errors import RankDeficient, ShapeError

# base-parameter dimension per plant kind
PARAM_COUNTS = {"two-link": 5, "cartpole": 3, "furuta": 4}

# columns of the regressor that survive at qd = qdd = 0 (pure gravity)
GRAVITY_COLUMNS = {"two-link": (3, 4), "cartpole": (1,), "furuta": (3,)}


def true_parameters(plant):
    """Lumped base parameters of an analytic plant."""
    p = plant.params
    if plant.kind == "two-link":
        m1, m2 = p.mass
        l1 = p.length[0]
        r1, r2 = p.com
        I1, I2 = p.inertia
        return np.array(
            [
                I1 + m1 * r1**2 + m2 * l1**2,
                I2 + m2 * r2**2,
                m2 * l1 * r2,
                m1 * r1 + m2 * l1,
                m2 * r2,
            ]
        )
    if plant.kind == "cartpole":
        mc, mp = p.mass
        rp = p.com[1]
        Ip = p.inertia[1]
        return np.array([mc + mp, mp * rp, Ip + mp * rp**2])
    if plant.kind == "furuta":
        ma, mp = p.mass
        La = p.length[0]
        ra, rp = p.com
        Ia, Ip = p.inertia
        return np.array(
            [Ia + ma * ra**2 + mp * La**2, Ip + mp * rp**2, mp * La * rp, mp * rp]
        )
    raise ValueError(f"unsupported plant kind {plant.kind!r}")


def build_regressor(kind, Q, Qd, Qdd, gravity=9.81):
    """Per-sample regressor blocks A with tau = A theta, shape (B, n, k)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Qd = np.atleast_2d(np.asarray(Qd, dtype=float))
    Qdd = np.atleast_2d(np.asarray(Qdd, dtype=float))
    B = Q.shape[0]
    g = gravity
    if kind == "two-link":
        s1 = np.sin(Q[:, 0])
        s2, c2 = np.sin(Q[:, 1]), np.cos(Q[:, 1])
        s12 = np.sin(Q[:, 0] + Q[:, 1])
        q1d, q2d = Qd[:, 0], Qd[:, 1]
        a1, a2 = Qdd[:, 0], Qdd[:, 1]
        A = np.zeros((B, 2, 5))
        A[:, 0, 0] = a1
        A[:, 0, 1] = a1 + a2
        A[:, 0, 2] = c2 * (2 * a1 + a2) - s2 * (2 * q1d * q2d + q2d**2)
        A[:, 0, 3] = g * s1
        A[:, 0, 4] = g * s12
        A[:, 1, 1] = a1 + a2
        A[:, 1, 2] = c2 * a1 + s2 * q1d**2
        A[:, 1, 4] = g * s12
        return A
    if kind == "cartpole":
        sth, cth = np.sin(Q[:, 1]), np.cos(Q[:, 1])
        thd = Qd[:, 1]
        ax, ath = Qdd[:, 0], Qdd[:, 1]
        A = np.zeros((B, 2, 3))
        A[:, 0, 0] = ax
        A[:, 0, 1] = cth * ath - sth * thd**2
        A[:, 1, 1] = cth * ax - g * sth
        A[:, 1, 2] = ath
        return A
    if kind == "furuta":
        sth, cth = np.sin(Q[:, 1]), np.cos(Q[:, 1])
        phid, thd = Qd[:, 0], Qd[:, 1]
        aphi, ath = Qdd[:, 0], Qdd[:, 1]
        A = np.zeros((B, 2, 4))
        A[:, 0, 0] = aphi
        A[:, 0, 1] = sth**2 * aphi + 2 * sth * cth * phid * thd
        A[:, 0, 2] = cth * ath - sth * thd**2
        A[:, 1, 1] = ath - sth * cth * phid**2
        A[:, 1, 2] = cth * aphi
        A[:, 1, 3] = -g * sth
        return A
    raise ValueError(f"unsupported plant kind {kind!r}")


@dataclass(frozen=True)
class SysidFit:
    """Fit record: recovered parameters plus the diagnostics that travel
    with them."""

    theta: np.ndarray
    theta0: np.ndarray
    ridge: float
    condition: float
    residual_rms: float
    objective: float
    nonphysical: np.ndarray  # mask of base parameters violating positivity

    @property
    def physically_plausible(self):
        return not bool(self.nonphysical.any())


def fit_parameters(A, tau, theta0, ridge=0.0):
    """Regularized least squares pulled toward theta0.

    `A` is (B, n, k) regressor blocks (or an already stacked (N, k) matrix),
    `tau` the matching torques.  With ridge = 0 a rank-deficient stacked
    regressor raises RankDeficient naming the null-space dimension.
    """
    A = np.asarray(A, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if A.ndim == 3:
        A2 = A.reshape(-1, A.shape[-1])
    else:
        A2 = A
    b = tau.reshape(-1)
    k = A2.shape[1]
    if A2.shape[0] < k:
        raise ShapeError(
            f"need at least {k} stacked rows to identify {k} parameters, "
            f"got {A2.shape[0]}"
        )
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (k,):
        raise ShapeError(f"theta0 has shape {theta0.shape}, expected ({k},)")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")

    condition = float(np.linalg.cond(A2))
    if ridge == 0.0:
        rank = np.linalg.matrix_rank(A2)
        if rank < k:
            raise RankDeficient(
                f"regressor rank {rank} < {k} parameters with no ridge",
                nullity=int(k - rank),
            )
        Astk, bstk = A2, b - A2 @ theta0
    else:
        Astk = np.vstack([A2, ridge * np.eye(k)])
        bstk = np.concatenate([b - A2 @ theta0, np.zeros(k)])
    # gelsy = column-pivoted QR
    delta = lstsq(Astk, bstk, lapack_driver="gelsy")[0]
    theta = theta0 + delta
    resid = b - A2 @ theta
    residual_rms = float(np.sqrt(np.mean(resid**2)))
    objective = float(resid @ resid + ridge**2 * (delta @ delta))
    return SysidFit(
        theta=theta,
        theta0=theta0.copy(),
        ridge=float(ridge),
        condition=condition,
        residual_rms=residual_rms,
        objective=objective,
        nonphysical=theta <= 0,
    )


class IdentifiedPlantModel:
    """Dynamics model backed by identified base parameters.

    Inverse dynamics is the regressor contraction itself; the forward map
    reassembles the (theta-linear) mass matrix column by column with unit
    acceleration probes and solves it.  The energy uses the same lumped
    parameters, so an exactly recovered theta reproduces the analytic
    energy with no offset.
    """

    kind = "sysid"
    coordinates = "velocity"
    n = 2

    def __init__(self, plant_kind, theta, gravity=9.81):
        if plant_kind not in PARAM_COUNTS:
            raise ValueError(f"unsupported plant kind {plant_kind!r}")
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (PARAM_COUNTS[plant_kind],):
            raise ShapeError(
                f"theta has shape {theta.shape}, expected "
                f"({PARAM_COUNTS[plant_kind]},)"
            )
        self.plant_kind = plant_kind
        self.theta = theta
        self.gravity = float(gravity)

    def _contract(self, Q, Qd, Qdd):
        A = build_regressor(self.plant_kind, Q, Qd, Qdd, self.gravity)
        return A @ self.theta

    def inverse(self, q, qd, qdd):
        q = np.asarray(q, dtype=float)
        single = q.ndim == 1
        tau = self._contract(q, qd, qdd)
        return tau[0] if single else tau

    def mass_matrix_batch(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        B = Q.shape[0]
        zero = np.zeros_like(Q)
        rest = self._contract(Q, zero, zero)
        H = np.empty((B, 2, 2))
        for j in range(2):
            e = np.zeros_like(Q)
            e[:, j] = 1.0
            H[:, :, j] = self._contract(Q, zero, e) - rest
        return H

    def forward(self, q, qd, tau):
        q = np.asarray(q, dtype=float)
        single = q.ndim == 1
        Q = np.atleast_2d(q)
        Qd = np.atleast_2d(np.asarray(qd, dtype=float))
        Tau = np.atleast_2d(np.asarray(tau, dtype=float))
        H = self.mass_matrix_batch(Q)
        bias = self._contract(Q, Qd, np.zeros_like(Q))
        qdd = np.linalg.solve(H, (Tau - bias)[..., None])[..., 0]
        return qdd[0] if single else qdd

    def potential(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        th = self.theta
        g = self.gravity
        if self.plant_kind == "two-link":
            return -g * (
                th[3] * np.cos(Q[:, 0]) + th[4] * np.cos(Q[:, 0] + Q[:, 1])
            )
        if self.plant_kind == "cartpole":
            return g * th[1] * np.cos(Q[:, 1])
        return g * th[3] * np.cos(Q[:, 1])

    def energy(self, q, qd):
        Q = np.atleast_2d(np.asarray(q, dtype=float))
        Qd = np.atleast_2d(np.asarray(qd, dtype=float))
        H = self.mass_matrix_batch(Q)
        kinetic = 0.5 * np.einsum("bi,bij,bj->b", Qd, H, Qd)
        E = kinetic + self.potential(Q)
        return float(E[0]) if np.asarray(q).ndim == 1 else E
