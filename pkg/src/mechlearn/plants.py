"""Analytic benchmark plants: two-link arm, cartpole, rotary pendulum.

Closed-form mass matrix, Coriolis vector, gravity vector, and potential for
each system, derived from Lagrangian mechanics.  Conventions:

* two-link arm: q1 measured from the downward vertical, q2 relative to the
  first link; both joints actuated.
* cartpole: q = (cart position, pole angle), angle measured from the
  UPRIGHT vertical; only the cart is actuated.
* rotary (Furuta) pendulum: q = (arm angle, pendulum angle), pendulum angle
  from the upright vertical; only the arm is actuated.  The pendulum body
  inertia about its long axis is neglected (standard thin-rod model).

Parameters are plain per-link records; the derived mass matrix is symmetric
positive definite over the whole configuration space for any admissible
values.  Friction enters as a generalized force on the right-hand side,
tau_total = u + tau_f, so the forward map solves
H qdd = u + tau_f - c - g.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import spd_solve

PLANT_KINDS = ("two-link", "cartpole", "furuta")

FRICTION_KINDS = ("none", "coulomb", "viscous", "stiction", "stribeck")


@dataclass(frozen=True)
class PlantParams:
    """Per-link physical record. `com` is the center-of-mass offset along
    the link, `inertia` the rotational inertia about the center of mass."""

    kind: str
    mass: tuple
    length: tuple
    com: tuple
    inertia: tuple
    gravity: float = 9.81

    def __post_init__(self):
        if self.kind not in PLANT_KINDS:
            raise ValueError(f"unknown plant kind {self.kind!r}")
        for m in self.mass:
            if m <= 0:
                raise ValueError("masses must be positive")
        for i in self.inertia:
            if i < 0:
                raise ValueError("inertias must be non-negative")


@dataclass(frozen=True)
class FrictionModel:
    """Joint friction torque as a function of joint velocity.

    Constants are per joint: `coulomb` is the dry level, `viscous` the
    damping slope, `stiction` the breakaway excess, `width` the velocity
    scale of the breakaway decay, `damping` the extra slope of the combined
    law.  sign(0) = 0, so every kind vanishes at rest.
    """

    kind: str = "none"
    coulomb: tuple = ()
    viscous: tuple = ()
    stiction: tuple = ()
    width: tuple = ()
    damping: tuple = ()

    def __post_init__(self):
        if self.kind not in FRICTION_KINDS:
            raise ValueError(f"unknown friction kind {self.kind!r}")
        for name in ("coulomb", "viscous", "stiction", "width", "damping"):
            for v in getattr(self, name):
                if v < 0:
                    raise ValueError(f"{name} constants must be non-negative")

    @property
    def discontinuous(self):
        """True when the law jumps at zero velocity (hard on inverse models;
        recorded with generated datasets)."""
        return self.kind in ("coulomb", "stiction", "stribeck")

    def torque(self, qd):
        qd = np.asarray(qd, dtype=float)
        if self.kind == "none":
            return np.zeros_like(qd)
        if self.kind == "coulomb":
            return -np.asarray(self.coulomb) * np.sign(qd)
        if self.kind == "viscous":
            return -np.asarray(self.viscous) * qd
        if self.kind == "stiction":
            ts = np.asarray(self.stiction)
            nu = np.asarray(self.width)
            return -ts * np.sign(qd) * np.exp(-(qd**2) / nu)
        ts = np.asarray(self.stiction)
        nu = np.asarray(self.width)
        level = np.asarray(self.coulomb) + ts * np.exp(-(qd**2) / nu)
        return -level * np.sign(qd) - np.asarray(self.damping) * qd


def friction_torque(fm, qd):
    return fm.torque(qd)


class Plant:
    """Shared machinery over the per-kind closed forms.

    Subclasses fill in `mass_matrix`, `mass_matrix_grad`, `coriolis`,
    `gravity`, `potential`, each batched over a leading sample axis.
    """

    n = 2
    kind = None
    pendulum_index = None

    def __init__(self, params):
        if params.kind != self.kind:
            raise ValueError(f"params are for {params.kind!r}, plant is {self.kind!r}")
        self.params = params

    def with_params(self, **changes):
        return type(self)(replace(self.params, **changes))

    @property
    def act_dim(self):
        return self.actuation.shape[1]

    def energy(self, Q, Qd):
        H = self.mass_matrix(Q)
        return 0.5 * np.einsum("...i,...ij,...j->...", Qd, H, Qd) + self.potential(Q)

    def kinetic(self, Q, Qd):
        H = self.mass_matrix(Q)
        return 0.5 * np.einsum("...i,...ij,...j->...", Qd, H, Qd)

    def forward(self, Q, Qd, Tau, friction=None):
        rhs = Tau - self.coriolis(Q, Qd) - self.gravity(Q)
        if friction is not None:
            rhs = rhs + friction.torque(Qd)
        return spd_solve(self.mass_matrix(Q), rhs)

    def inverse(self, Q, Qd, Qdd, friction=None):
        tau = (
            np.einsum("...ij,...j->...i", self.mass_matrix(Q), Qdd)
            + self.coriolis(Q, Qd)
            + self.gravity(Q)
        )
        if friction is not None:
            tau = tau - friction.torque(Qd)
        return tau


class TwoLinkPlant(Plant):
    kind = "two-link"
    actuation = np.eye(2)

    def __init__(self, params=None):
        if params is None:
            # unit point masses at the link ends
            params = PlantParams(
                kind="two-link",
                mass=(1.0, 1.0),
                length=(1.0, 1.0),
                com=(1.0, 1.0),
                inertia=(0.0, 0.0),
            )
        super().__init__(params)
        p = params
        m1, m2 = p.mass
        l1 = p.length[0]
        r1, r2 = p.com
        I1, I2 = p.inertia
        # grouped coefficients of the closed forms
        self._a = I1 + I2 + m1 * r1**2 + m2 * (l1**2 + r2**2)
        self._b = m2 * l1 * r2
        self._c = I2 + m2 * r2**2
        self._g1 = (m1 * r1 + m2 * l1) * p.gravity
        self._g2 = m2 * r2 * p.gravity

    def hanging(self):
        return np.zeros(2)

    def upright(self):
        return np.array([np.pi, 0.0])

    def mass_matrix(self, Q):
        Q = np.asarray(Q, dtype=float)
        c2 = np.cos(Q[..., 1])
        H = np.zeros(Q.shape[:-1] + (2, 2))
        H[..., 0, 0] = self._a + 2.0 * self._b * c2
        H[..., 0, 1] = H[..., 1, 0] = self._c + self._b * c2
        H[..., 1, 1] = self._c
        return H

    def mass_matrix_grad(self, Q):
        Q = np.asarray(Q, dtype=float)
        s2 = np.sin(Q[..., 1])
        T = np.zeros(Q.shape[:-1] + (2, 2, 2))
        T[..., 1, 0, 0] = -2.0 * self._b * s2
        T[..., 1, 0, 1] = T[..., 1, 1, 0] = -self._b * s2
        return T

    def coriolis(self, Q, Qd):
        Q = np.asarray(Q, dtype=float)
        Qd = np.asarray(Qd, dtype=float)
        s2 = np.sin(Q[..., 1])
        q1d, q2d = Qd[..., 0], Qd[..., 1]
        c = np.zeros_like(Qd)
        c[..., 0] = -self._b * s2 * (2.0 * q1d * q2d + q2d**2)
        c[..., 1] = self._b * s2 * q1d**2
        return c

    def potential(self, Q):
        Q = np.asarray(Q, dtype=float)
        return -self._g1 * np.cos(Q[..., 0]) - self._g2 * np.cos(Q[..., 0] + Q[..., 1])

    def gravity(self, Q):
        Q = np.asarray(Q, dtype=float)
        s1 = np.sin(Q[..., 0])
        s12 = np.sin(Q[..., 0] + Q[..., 1])
        g = np.zeros_like(Q)
        g[..., 0] = self._g1 * s1 + self._g2 * s12
        g[..., 1] = self._g2 * s12
        return g


class CartPolePlant(Plant):
    kind = "cartpole"
    actuation = np.array([[1.0], [0.0]])
    pendulum_index = 1

    def __init__(self, params=None):
        if params is None:
            params = PlantParams(
                kind="cartpole",
                mass=(1.0, 0.1),
                length=(0.0, 0.5),
                com=(0.0, 0.5),
                inertia=(0.0, 0.0),
            )
        super().__init__(params)
        p = params
        self._mt = p.mass[0] + p.mass[1]
        self._k = p.mass[1] * p.com[1]          # m_p r_p
        self._j = p.inertia[1] + p.mass[1] * p.com[1] ** 2
        self._gk = self._k * p.gravity

    def hanging(self):
        return np.array([0.0, np.pi])

    def upright(self):
        return np.zeros(2)

    def mass_matrix(self, Q):
        Q = np.asarray(Q, dtype=float)
        cth = np.cos(Q[..., 1])
        H = np.zeros(Q.shape[:-1] + (2, 2))
        H[..., 0, 0] = self._mt
        H[..., 0, 1] = H[..., 1, 0] = self._k * cth
        H[..., 1, 1] = self._j
        return H

    def mass_matrix_grad(self, Q):
        Q = np.asarray(Q, dtype=float)
        sth = np.sin(Q[..., 1])
        T = np.zeros(Q.shape[:-1] + (2, 2, 2))
        T[..., 1, 0, 1] = T[..., 1, 1, 0] = -self._k * sth
        return T

    def coriolis(self, Q, Qd):
        Q = np.asarray(Q, dtype=float)
        Qd = np.asarray(Qd, dtype=float)
        c = np.zeros_like(Qd)
        c[..., 0] = -self._k * np.sin(Q[..., 1]) * Qd[..., 1] ** 2
        return c

    def potential(self, Q):
        Q = np.asarray(Q, dtype=float)
        return self._gk * np.cos(Q[..., 1])

    def gravity(self, Q):
        Q = np.asarray(Q, dtype=float)
        g = np.zeros_like(Q)
        g[..., 1] = -self._gk * np.sin(Q[..., 1])
        return g


class FurutaPlant(Plant):
    kind = "furuta"
    actuation = np.array([[1.0], [0.0]])
    pendulum_index = 1

    def __init__(self, params=None):
        if params is None:
            params = PlantParams(
                kind="furuta",
                mass=(0.024, 0.128),
                length=(0.095, 0.085),
                com=(0.095, 0.085),
                inertia=(0.0, 0.0),
            )
        super().__init__(params)
        p = params
        ma, mp = p.mass
        La = p.length[0]
        ra, rp = p.com
        Ia, Ip = p.inertia
        self._j_arm = Ia + ma * ra**2 + mp * La**2
        self._j_pend = Ip + mp * rp**2
        self._k = mp * La * rp
        self._gk = mp * rp * p.gravity

    def hanging(self):
        return np.array([0.0, np.pi])

    def upright(self):
        return np.zeros(2)

    def mass_matrix(self, Q):
        Q = np.asarray(Q, dtype=float)
        th = Q[..., 1]
        sth, cth = np.sin(th), np.cos(th)
        H = np.zeros(Q.shape[:-1] + (2, 2))
        H[..., 0, 0] = self._j_arm + self._j_pend * sth**2
        H[..., 0, 1] = H[..., 1, 0] = self._k * cth
        H[..., 1, 1] = self._j_pend
        return H

    def mass_matrix_grad(self, Q):
        Q = np.asarray(Q, dtype=float)
        th = Q[..., 1]
        sth, cth = np.sin(th), np.cos(th)
        T = np.zeros(Q.shape[:-1] + (2, 2, 2))
        T[..., 1, 0, 0] = 2.0 * self._j_pend * sth * cth
        T[..., 1, 0, 1] = T[..., 1, 1, 0] = -self._k * sth
        return T

    def coriolis(self, Q, Qd):
        Q = np.asarray(Q, dtype=float)
        Qd = np.asarray(Qd, dtype=float)
        th = Q[..., 1]
        sth, cth = np.sin(th), np.cos(th)
        phid, thd = Qd[..., 0], Qd[..., 1]
        c = np.zeros_like(Qd)
        c[..., 0] = 2.0 * self._j_pend * sth * cth * phid * thd - self._k * sth * thd**2
        c[..., 1] = -self._j_pend * sth * cth * phid**2
        return c

    def potential(self, Q):
        Q = np.asarray(Q, dtype=float)
        return self._gk * np.cos(Q[..., 1])

    def gravity(self, Q):
        Q = np.asarray(Q, dtype=float)
        g = np.zeros_like(Q)
        g[..., 1] = -self._gk * np.sin(Q[..., 1])
        return g


_PLANTS = {
    "two-link": TwoLinkPlant,
    "cartpole": CartPolePlant,
    "furuta": FurutaPlant,
}


def make_plant(kind, params=None):
    if kind not in _PLANTS:
        raise ValueError(f"unknown plant kind {kind!r}")
    return _PLANTS[kind](params)


def _single(Q):
    Q = np.asarray(Q, dtype=float)
    return (Q[None, :], True) if Q.ndim == 1 else (Q, False)


def analytic_mass_matrix(plant, q):
    Q, single = _single(q)
    H = plant.mass_matrix(Q)
    return H[0] if single else H


def analytic_coriolis(plant, q, qd):
    Q, single = _single(q)
    Qd, _ = _single(qd)
    c = plant.coriolis(Q, Qd)
    return c[0] if single else c


def analytic_gravity(plant, q):
    Q, single = _single(q)
    g = plant.gravity(Q)
    return g[0] if single else g


def analytic_energy(plant, q, qd):
    Q, single = _single(q)
    Qd, _ = _single(qd)
    E = plant.energy(Q, Qd)
    return float(E[0]) if single else E


def analytic_forward(plant, q, qd, tau, friction=None):
    Q, single = _single(q)
    Qd, _ = _single(qd)
    Tau, _ = _single(tau)
    qdd = plant.forward(Q, Qd, Tau, friction)
    return qdd[0] if single else qdd


def analytic_inverse(plant, q, qd, qdd, friction=None):
    Q, single = _single(q)
    Qd, _ = _single(qd)
    Qdd, _ = _single(qdd)
    tau = plant.inverse(Q, Qd, Qdd, friction)
    return tau[0] if single else tau


def to_hamiltonian_observation(plant, q, qd, qdd=None, tau=None, friction=None):
    """Phase-space observables (p, pd) from velocity-space ones.

    p = H qd and pd = Hdot qd + H qdd by the product rule; when qdd is not
    supplied it comes from the forward dynamics under `tau` (zero if absent).
    """
    Q, single = _single(q)
    Qd, _ = _single(qd)
    if qdd is None:
        if tau is None:
            tau = np.zeros_like(Qd)
        qdd = plant.forward(Q, Qd, np.broadcast_to(tau, Qd.shape), friction)
    Qdd, _ = _single(qdd)
    H = plant.mass_matrix(Q)
    T = plant.mass_matrix_grad(Q)
    P = np.einsum("...ij,...j->...i", H, Qd)
    Hdot = np.einsum("...kij,...k->...ij", T, Qd)
    Pd = np.einsum("...ij,...j->...i", Hdot, Qd) + np.einsum(
        "...ij,...j->...i", H, Qdd
    )
    return (P[0], Pd[0]) if single else (P, Pd)


def plant_field(plant, friction=None, actuated=False):
    """State-derivative callable f(x, u) with x = (q, qd).

    With `actuated` the input has the plant's actuator width and is mapped
    through the actuation matrix; otherwise it is a full generalized-force
    vector (the convention of the datasets and learned models).
    """
    n = plant.n
    B = plant.actuation

    def field(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        Q, Qd = x[..., :n], x[..., n:]
        tau = np.einsum("ij,...j->...i", B, u) if actuated else u
        qdd = plant.forward(Q, Qd, tau, friction)
        return np.concatenate([Qd, qdd], axis=-1)

    return field


def default_ranges(plant):
    """Sampling boxes for uniform dataset generation: positions, velocities,
    and applied generalized forces (accelerations follow from the dynamics)."""
    if plant.kind == "two-link":
        return {
            "position": (np.array([-np.pi, -np.pi]), np.array([np.pi, np.pi])),
            "velocity": (np.full(2, -5.0), np.full(2, 5.0)),
            "torque": (np.full(2, -30.0), np.full(2, 30.0)),
        }
    if plant.kind == "cartpole":
        return {
            "position": (np.array([-1.0, -np.pi]), np.array([1.0, np.pi])),
            "velocity": (np.array([-3.0, -8.0]), np.array([3.0, 8.0])),
            "torque": (np.array([-10.0, -1.0]), np.array([10.0, 1.0])),
        }
    return {
        "position": (np.array([-np.pi, -np.pi]), np.array([np.pi, np.pi])),
        "velocity": (np.full(2, -10.0), np.full(2, 10.0)),
        "torque": (np.array([-0.5, -0.1]), np.array([0.5, 0.1])),
    }
