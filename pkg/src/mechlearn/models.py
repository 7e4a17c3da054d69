"""Energy models for rigid-body systems.

Four learnable variants share this module:

* structured Lagrangian: a lower-triangular network head is assembled into a
  positive definite mass matrix H(q) = L L^T + eps I, a second scalar network
  is the potential V(q); kinetic energy is 1/2 qd^T H qd.
* structured Hamiltonian: the same head construction, but the assembled
  matrix is the INVERSE mass matrix B(q), paired with V(q); the energy is
  1/2 p^T B p + V.
* black-box Lagrangian / Hamiltonian: one scalar network over (q, qd) or
  (q, p) with no imposed structure.

All variants accept a per-joint feature transform (identity or cos/sin
lift) so revolute coordinates can be made periodic.  Analytic adapters wrap
a plant so the exact energies run through the identical dynamics maps, and
a plain two-network regressor serves as the unstructured baseline.

Derivative bookkeeping: a "core" evaluation at a batch of configurations
carries the assembled matrix, its configuration gradient, and the potential
gradient, together with the network caches needed to (a) push loss adjoints
back to the flat parameter vector and (b) form vector-Jacobian products
with respect to the configuration itself (used by the one-step integrator
losses).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import diffnet
from .errors import ShapeError, UnknownFormatVersion

# Raw diagonal offset making softplus(0 + alpha) = 1: a freshly initialized
# head starts near the identity mass matrix.
ALPHA_UNIT = float(np.log(np.e - 1.0))

FEATURE_KINDS = ("identity", "sincos")

_MODEL_FORMAT = "mechlearn-model-v1"


class FeatureTransform:
    """Per-joint input lift z = g(q).

    `kinds[i]` is "identity" (z gets q_i) or "sincos" (z gets cos q_i and
    sin q_i).  Each output depends on exactly one joint, which keeps the
    pullbacks of gradients and Hessians cheap and exact.
    """

    def __init__(self, kinds):
        kinds = tuple(str(k) for k in kinds)
        for k in kinds:
            if k not in FEATURE_KINDS:
                raise ValueError(f"unknown feature kind {k!r}")
        self.kinds = kinds
        src = []
        out_kind = []
        for j, k in enumerate(kinds):
            if k == "identity":
                src.append(j)
                out_kind.append("id")
            else:
                src.extend([j, j])
                out_kind.extend(["cos", "sin"])
        self.src = np.array(src, dtype=int)
        self._out_kind = tuple(out_kind)
        self.out_dim = len(src)
        # one-hot e_src (x) e_src per output, used by Hessian pullbacks
        E2 = np.zeros((self.out_dim, self.n, self.n))
        for j, s in enumerate(self.src):
            E2[j, s, s] = 1.0
        self.E2 = E2

    @property
    def n(self):
        return len(self.kinds)

    @classmethod
    def identity(cls, n):
        return cls(("identity",) * n)

    @classmethod
    def sincos(cls, n):
        return cls(("sincos",) * n)

    def __eq__(self, other):
        return isinstance(other, FeatureTransform) and self.kinds == other.kinds

    def __repr__(self):
        return f"FeatureTransform({self.kinds!r})"

    def value(self, Q):
        Q = np.asarray(Q, dtype=float)
        cols = []
        for j, kind in enumerate(self._out_kind):
            qj = Q[..., self.src[j]]
            if kind == "id":
                cols.append(qj)
            elif kind == "cos":
                cols.append(np.cos(qj))
            else:
                cols.append(np.sin(qj))
        return np.stack(cols, axis=-1)

    def jacobian(self, Q):
        """dz/dq with shape (..., out_dim, n)."""
        Q = np.asarray(Q, dtype=float)
        G = np.zeros(Q.shape[:-1] + (self.out_dim, self.n))
        for j, kind in enumerate(self._out_kind):
            s = self.src[j]
            qj = Q[..., s]
            if kind == "id":
                G[..., j, s] = 1.0
            elif kind == "cos":
                G[..., j, s] = -np.sin(qj)
            else:
                G[..., j, s] = np.cos(qj)
        return G

    def curvature(self, Q):
        """Second derivative of each output wrt its source joint, (..., out_dim)."""
        Q = np.asarray(Q, dtype=float)
        C = np.zeros(Q.shape[:-1] + (self.out_dim,))
        for j, kind in enumerate(self._out_kind):
            qj = Q[..., self.src[j]]
            if kind == "cos":
                C[..., j] = -np.cos(qj)
            elif kind == "sin":
                C[..., j] = -np.sin(qj)
        return C


def transform_features(feature, q):
    """Feature value and Jacobian at a single configuration."""
    q = np.asarray(q, dtype=float)
    return feature.value(q), feature.jacobian(q)


def pullback_gradient(feature, q, grad_z):
    """Map a gradient in feature space back to configuration space."""
    G = feature.jacobian(np.asarray(q, dtype=float))
    return np.einsum("...zr,...z->...r", G, np.asarray(grad_z, dtype=float))


def _tril_layout(n):
    rows, cols = np.tril_indices(n)
    return rows, cols, rows == cols


class MassMatrixHead:
    """Network head emitting a positive definite matrix via Cholesky factors.

    The network outputs n(n+1)/2 raw values filling a lower triangle row by
    row.  Diagonal entries pass through softplus(raw + alpha) + epsilon,
    off-diagonals stay raw, and the assembled matrix L L^T + epsilon I has
    every eigenvalue >= epsilon by construction.
    """

    def __init__(self, n, spec, params, epsilon=1e-2, alpha=ALPHA_UNIT):
        n = int(n)
        if spec.output_dim != n * (n + 1) // 2:
            raise ShapeError(
                f"head for n={n} needs {n * (n + 1) // 2} outputs, spec has {spec.output_dim}"
            )
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.n = n
        self.spec = spec
        self.params = np.asarray(params, dtype=float)
        self.epsilon = float(epsilon)
        self.alpha = float(alpha)
        self._rows, self._cols, self._dmask = _tril_layout(n)

    @classmethod
    def create(cls, n, in_dim, hidden=(64, 64), activation="softplus", rng=None,
               epsilon=1e-2, alpha=ALPHA_UNIT):
        spec = diffnet.NetSpec.dense(in_dim, hidden, n * (n + 1) // 2, activation)
        rng = np.random.default_rng() if rng is None else rng
        return cls(n, spec, diffnet.init_params(spec, rng), epsilon, alpha)

    def build_factor(self, raw):
        """Raw head outputs (B, m) -> (L, sig) with sig the diagonal chain slope."""
        raw = np.asarray(raw, dtype=float)
        B = raw.shape[0]
        u = raw[:, self._dmask] + self.alpha
        sp = diffnet.softplus(u)
        sig = expit(u)
        vals = raw.copy()
        vals[:, self._dmask] = sp + self.epsilon
        L = np.zeros((B, self.n, self.n))
        L[:, self._rows, self._cols] = vals
        return L, sig

    def build_factor_grad(self, raw_jac, sig):
        """Raw Jacobians (B, m, n) -> dL/dq with shape (B, n, n, n), index [k, i, j]."""
        vals = np.moveaxis(np.asarray(raw_jac, dtype=float), 2, 1).copy()  # (B, nq, m)
        vals[:, :, self._dmask] *= sig[:, None, :]
        B, nq = vals.shape[:2]
        M = np.zeros((B, nq, self.n, self.n))
        M[:, :, self._rows, self._cols] = vals
        return M


def assemble_mass_matrix(head, raw):
    """Single raw vector -> (L, H) with H = L L^T + epsilon I."""
    L, _ = head.build_factor(np.asarray(raw, dtype=float)[None, :])
    L = L[0]
    return L, L @ L.T + head.epsilon * np.eye(head.n)


@dataclass
class QuadCore:
    """Evaluated quadratic-energy terms at a batch of configurations.

    `A_mat` is the assembled positive definite matrix (mass matrix for
    Lagrangian models, inverse mass matrix for Hamiltonian ones), `T` its
    configuration gradient with layout [b, k, i, j] = dA_ij/dq_k, `V` the
    potential and `gV` its gradient.  Network-backed models attach caches
    for the reverse sweeps; analytic adapters leave them unset.
    """

    Q: np.ndarray
    A_mat: np.ndarray
    T: np.ndarray
    V: np.ndarray
    gV: np.ndarray
    order: int = 1
    G: np.ndarray = None
    mass_fwd: object = field(default=None, repr=False)
    pot_fwd: object = field(default=None, repr=False)
    raw_jac_q: np.ndarray = field(default=None, repr=False)
    raw_hess_q: np.ndarray = field(default=None, repr=False)
    L: np.ndarray = field(default=None, repr=False)
    M: np.ndarray = field(default=None, repr=False)
    sig: np.ndarray = field(default=None, repr=False)
    potH_q: np.ndarray = field(default=None, repr=False)


def _as_batch(Q, n, name="q"):
    Q = np.asarray(Q, dtype=float)
    single = Q.ndim == 1
    if single:
        Q = Q[None, :]
    if Q.ndim != 2 or Q.shape[1] != n:
        raise ShapeError(f"{name} has shape {Q.shape}, expected (*, {n})")
    return Q, single


class _StructuredEnergyBase:
    """Shared machinery of the two structured variants."""

    def __init__(self, head, potential_spec, potential_params, feature):
        self.head = head
        self.potential_spec = potential_spec
        self.potential_params = np.asarray(potential_params, dtype=float)
        self.feature = feature if feature is not None else FeatureTransform.identity(head.n)
        if self.feature.out_dim != head.spec.input_dim:
            raise ShapeError("feature output dim does not match the head input dim")
        if self.feature.out_dim != potential_spec.input_dim:
            raise ShapeError("feature output dim does not match the potential input dim")

    @property
    def n(self):
        return self.head.n

    @property
    def params(self):
        return np.concatenate([self.head.params, self.potential_params])

    def set_params(self, vec):
        vec = np.asarray(vec, dtype=float)
        nm = diffnet.param_count(self.head.spec)
        npo = diffnet.param_count(self.potential_spec)
        if vec.shape != (nm + npo,):
            raise ShapeError("parameter vector has the wrong length")
        self.head.params = vec[:nm].copy()
        self.potential_params = vec[nm:].copy()

    def core(self, Q, order=1):
        Q, _ = _as_batch(Q, self.n)
        feat = self.feature
        Z = feat.value(Q)
        G = feat.jacobian(Q)
        mass_fwd = diffnet.forward(self.head.spec, self.head.params, Z, order=order)
        raw_jac_q = np.einsum("bmz,bzr->bmr", mass_fwd.jacobian, G)
        L, sig = self.head.build_factor(mass_fwd.value)
        M = self.head.build_factor_grad(raw_jac_q, sig)
        A_mat = L @ np.swapaxes(L, 1, 2) + self.head.epsilon * np.eye(self.n)
        P = np.einsum("bkim,bjm->bkij", M, L)
        T = P + np.swapaxes(P, 2, 3)
        pot_fwd = diffnet.forward(self.potential_spec, self.potential_params, Z, order=order)
        V = pot_fwd.value[:, 0]
        gV = np.einsum("bz,bzr->br", pot_fwd.jacobian[:, 0, :], G)
        core = QuadCore(
            Q=Q, A_mat=A_mat, T=T, V=V, gV=gV, order=order, G=G,
            mass_fwd=mass_fwd, pot_fwd=pot_fwd, raw_jac_q=raw_jac_q,
            L=L, M=M, sig=sig,
        )
        if order >= 2:
            C = feat.curvature(Q)
            E2 = feat.E2
            core.raw_hess_q = np.einsum(
                "bmzw,bzr,bws->bmrs", mass_fwd.hessian, G, G
            ) + np.einsum("bmz,bz,zrs->bmrs", mass_fwd.jacobian, C, E2)
            core.potH_q = np.einsum(
                "bzw,bzr,bws->brs", pot_fwd.hessian[:, 0], G, G
            ) + np.einsum("bz,bz,zrs->brs", pot_fwd.jacobian[:, 0], C, E2)
        return core

    def core_param_backward(self, core, bar_A=None, bar_T=None, bar_g=None, bar_V=None):
        """Adjoints on (A_mat, T, gV, V) -> gradient wrt the flat parameters."""
        L, M, sig = core.L, core.M, core.sig
        rows, cols, dmask = self.head._rows, self.head._cols, self.head._dmask
        B = core.Q.shape[0]
        if bar_A is None:
            bar_L = np.zeros_like(L)
        else:
            bar_L = np.einsum("bij,bjm->bim", bar_A + np.swapaxes(bar_A, 1, 2), L)
        bar_M = None
        if bar_T is not None:
            S = bar_T + np.swapaxes(bar_T, 2, 3)
            bar_M = np.einsum("bkij,bjm->bkim", S, L)
            bar_L += np.einsum("bkij,bkjm->bim", S, M)
        bar_raw = bar_L[:, rows, cols]
        bar_raw[:, dmask] *= sig
        bar_Jz = None
        if bar_M is not None:
            mv = bar_M[:, :, rows, cols]  # (B, nq, m)
            bar_raw_jac_q = np.moveaxis(mv, 1, 2).copy()
            bar_raw_jac_q[:, dmask, :] *= sig[:, :, None]
            sig_p = sig * (1.0 - sig)
            rjd = core.raw_jac_q[:, dmask, :]
            bar_raw[:, dmask] += sig_p * np.einsum("bkd,bdk->bd", mv[:, :, dmask], rjd)
            bar_Jz = np.einsum("bmr,bzr->bmz", bar_raw_jac_q, core.G)
        mass_grad = diffnet.backward(core.mass_fwd, bar_value=bar_raw, bar_jacobian=bar_Jz)
        bar_JzV = None
        if bar_g is not None:
            bar_JzV = np.einsum("br,bzr->bz", bar_g, core.G)[:, None, :]
        bv = None if bar_V is None else np.asarray(bar_V, dtype=float).reshape(B, 1)
        pot_grad = diffnet.backward(core.pot_fwd, bar_value=bv, bar_jacobian=bar_JzV)
        return np.concatenate([mass_grad, pot_grad])

    def core_input_vjp(self, core, bar_A=None, bar_T=None, bar_g=None, bar_V=None):
        """Adjoints on (A_mat, T, gV, V) -> gradient wrt the configuration q.

        Needs a core evaluated at order 2 whenever bar_T or bar_g is present
        (those paths read second derivatives of the networks).
        """
        out = np.zeros_like(core.Q)
        if bar_A is not None:
            out += np.einsum("bij,brij->br", bar_A, core.T)
        if bar_T is not None:
            if core.raw_hess_q is None:
                raise ShapeError("configuration vjp through T needs an order-2 core")
            rows, cols, dmask = self.head._rows, self.head._cols, self.head._dmask
            S = bar_T + np.swapaxes(bar_T, 2, 3)
            Qm = np.einsum("bkij,bkjm->bim", S, core.M)
            out += np.einsum("bim,brim->br", Qm, core.M)
            ladj = np.einsum("bkij,bjm->bkim", S, core.L)
            G1 = ladj[:, :, rows, cols]  # (B, nq, m)
            eff = np.moveaxis(G1, 1, 2).copy()  # (B, m, nq)
            eff[:, dmask, :] *= core.sig[:, :, None]
            out += np.einsum("bmk,bmkr->br", eff, core.raw_hess_q)
            sig_p = core.sig * (1.0 - core.sig)
            rjd = core.raw_jac_q[:, dmask, :]
            w = np.einsum("bkd,bdk->bd", G1[:, :, dmask], rjd)
            out += np.einsum("bd,bdr->br", sig_p * w, rjd)
        if bar_g is not None:
            if core.potH_q is None:
                raise ShapeError("configuration vjp through gV needs an order-2 core")
            out += np.einsum("bj,bjr->br", bar_g, core.potH_q)
        if bar_V is not None:
            out += np.asarray(bar_V, dtype=float)[:, None] * core.gV
        return out


class StructuredLagrangianModel(_StructuredEnergyBase):
    """Mass-matrix network + potential network, Lagrangian coordinates (q, qd)."""

    kind = "delan-structured"
    coordinates = "velocity"

    @classmethod
    def create(cls, n, hidden=(64, 64), activation="softplus", feature=None,
               epsilon=1e-2, alpha=ALPHA_UNIT, seed=0):
        feature = feature if feature is not None else FeatureTransform.identity(n)
        ss = np.random.SeedSequence(seed)
        rng_mass, rng_pot = [np.random.default_rng(s) for s in ss.spawn(2)]
        head = MassMatrixHead.create(
            n, feature.out_dim, hidden, activation, rng_mass, epsilon, alpha
        )
        pot_spec = diffnet.NetSpec.dense(feature.out_dim, hidden, 1, activation)
        return cls(head, pot_spec, diffnet.init_params(pot_spec, rng_pot), feature)

    def mass_matrix(self, q):
        """H(q) and its configuration gradient dH/dq at one configuration."""
        core = self.core(q)
        return core.A_mat[0], core.T[0]

    def potential(self, q):
        core = self.core(q)
        return float(core.V[0]), core.gV[0]

    def lagrangian(self, q, qd):
        core = self.core(q)
        qd = np.asarray(qd, dtype=float)
        return float(0.5 * qd @ core.A_mat[0] @ qd - core.V[0])

    def energy(self, q, qd):
        core = self.core(q)
        qd = np.asarray(qd, dtype=float)
        return float(0.5 * qd @ core.A_mat[0] @ qd + core.V[0])

    def momentum(self, q, qd):
        core = self.core(q)
        return core.A_mat[0] @ np.asarray(qd, dtype=float)

    def inverse(self, q, qd, qdd):
        from . import dynamics

        core = self.core(np.asarray(q, dtype=float))
        Qd, single = _as_batch(qd, self.n, "qd")
        Qdd, _ = _as_batch(qdd, self.n, "qdd")
        tau = dynamics.lagrangian_inverse(core, Qd, Qdd)
        return tau[0] if single else tau

    def forward(self, q, qd, tau):
        from . import dynamics

        core = self.core(np.asarray(q, dtype=float))
        Qd, single = _as_batch(qd, self.n, "qd")
        Tau, _ = _as_batch(tau, self.n, "tau")
        qdd = dynamics.lagrangian_forward(core, Qd, Tau)
        return qdd[0] if single else qdd

    def decompose(self, q, qd, qdd):
        from . import dynamics

        core = self.core(np.asarray(q, dtype=float))
        Qd, single = _as_batch(qd, self.n, "qd")
        Qdd, _ = _as_batch(qdd, self.n, "qdd")
        dec = dynamics.lagrangian_decompose(core, Qd, Qdd)
        if single:
            return dynamics.ForceDecomposition(
                dec.inertial[0], dec.coriolis[0], dec.gravitational[0]
            )
        return dec


class StructuredHamiltonianModel(_StructuredEnergyBase):
    """Inverse-mass network + potential network, phase-space coordinates (q, p)."""

    kind = "hnn-structured"
    coordinates = "momentum"

    @classmethod
    def create(cls, n, hidden=(64, 64), activation="softplus", feature=None,
               epsilon=1e-2, alpha=ALPHA_UNIT, seed=0):
        feature = feature if feature is not None else FeatureTransform.identity(n)
        ss = np.random.SeedSequence(seed)
        rng_mass, rng_pot = [np.random.default_rng(s) for s in ss.spawn(2)]
        head = MassMatrixHead.create(
            n, feature.out_dim, hidden, activation, rng_mass, epsilon, alpha
        )
        pot_spec = diffnet.NetSpec.dense(feature.out_dim, hidden, 1, activation)
        return cls(head, pot_spec, diffnet.init_params(pot_spec, rng_pot), feature)

    def inverse_mass(self, q):
        """B(q) = assembled inverse mass matrix, with dB/dq."""
        core = self.core(q)
        return core.A_mat[0], core.T[0]

    def potential(self, q):
        core = self.core(q)
        return float(core.V[0]), core.gV[0]

    def energy(self, q, p):
        core = self.core(q)
        p = np.asarray(p, dtype=float)
        return float(0.5 * p @ core.A_mat[0] @ p + core.V[0])

    def velocity(self, q, p):
        core = self.core(q)
        return core.A_mat[0] @ np.asarray(p, dtype=float)

    def momentum(self, q, qd):
        """Solve B p = qd; the head emits B, so this inverts it once."""
        core = self.core(q)
        return np.linalg.solve(core.A_mat[0], np.asarray(qd, dtype=float))

    def forward(self, q, p, tau):
        from . import dynamics

        core = self.core(np.asarray(q, dtype=float))
        P, single = _as_batch(p, self.n, "p")
        Tau, _ = _as_batch(tau, self.n, "tau")
        qd, pd = dynamics.hamiltonian_forward(core, P, Tau)
        return (qd[0], pd[0]) if single else (qd, pd)

    def inverse(self, q, p, pd):
        from . import dynamics

        core = self.core(np.asarray(q, dtype=float))
        P, single = _as_batch(p, self.n, "p")
        Pd, _ = _as_batch(pd, self.n, "pd")
        tau = dynamics.hamiltonian_inverse(core, P, Pd)
        return tau[0] if single else tau


@dataclass
class ScalarEnergyTerms:
    """Gradients (and velocity Hessian blocks) of a scalar energy network."""

    value: np.ndarray        # (B,)
    grad_q: np.ndarray = None  # (B, n)
    grad_v: np.ndarray = None  # (B, n) wrt the velocity-like second argument
    H_vv: np.ndarray = None  # (B, n, n)
    H_vq: np.ndarray = None  # (B, n, n)
    fwd: object = field(default=None, repr=False)
    G: np.ndarray = field(default=None, repr=False)


class _ScalarEnergyBase:
    """Shared plumbing of the two black-box variants."""

    def __init__(self, spec, params, feature, n):
        self.spec = spec
        self.params = np.asarray(params, dtype=float)
        self.feature = feature if feature is not None else FeatureTransform.identity(n)
        self._n = int(n)
        if spec.input_dim != self.feature.out_dim + n:
            raise ShapeError("network input dim must be feature dim + n")
        if spec.output_dim != 1:
            raise ShapeError("scalar energy network needs a single output")

    @property
    def n(self):
        return self._n

    def set_params(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != self.params.shape:
            raise ShapeError("parameter vector has the wrong length")
        self.params = vec.copy()

    def terms(self, Q, W, order=2):
        """Value, gradients, and velocity Hessian blocks at (q, w)."""
        Q, _ = _as_batch(Q, self.n)
        W, _ = _as_batch(W, self.n, "second argument")
        dz = self.feature.out_dim
        Z = self.feature.value(Q)
        G = self.feature.jacobian(Q)
        X = np.concatenate([Z, W], axis=1)
        fwd = diffnet.forward(self.spec, self.params, X, order=order)
        t = ScalarEnergyTerms(value=fwd.value[:, 0], fwd=fwd, G=G)
        if order >= 1:
            gz = fwd.jacobian[:, 0, :dz]
            t.grad_v = fwd.jacobian[:, 0, dz:]
            t.grad_q = np.einsum("bz,bzr->br", gz, G)
        if order >= 2:
            Hfull = fwd.hessian[:, 0]
            t.H_vv = Hfull[:, dz:, dz:]
            t.H_vq = np.einsum("bij,bjr->bir", Hfull[:, dz:, :dz], G)
        return t

    def terms_param_backward(self, t, bar_value=None, bar_grad_q=None, bar_grad_v=None,
                             bar_H_vv=None, bar_H_vq=None):
        """Adjoints on the term struct -> gradient wrt the flat parameters."""
        B = t.fwd.X.shape[0]
        dz = self.feature.out_dim
        n = self.n
        bar_val = None
        if bar_value is not None:
            bar_val = np.asarray(bar_value, dtype=float).reshape(B, 1)
        bar_jac = None
        if bar_grad_q is not None or bar_grad_v is not None:
            bar_jac = np.zeros((B, 1, dz + n))
            if bar_grad_q is not None:
                bar_jac[:, 0, :dz] += np.einsum("br,bzr->bz", bar_grad_q, t.G)
            if bar_grad_v is not None:
                bar_jac[:, 0, dz:] += bar_grad_v
        bar_hess = None
        if bar_H_vv is not None or bar_H_vq is not None:
            bar_hess = np.zeros((B, 1, dz + n, dz + n))
            if bar_H_vv is not None:
                bar_hess[:, 0, dz:, dz:] += bar_H_vv
            if bar_H_vq is not None:
                bar_hess[:, 0, dz:, :dz] += np.einsum("bir,bzr->biz", bar_H_vq, t.G)
        return diffnet.backward(t.fwd, bar_value=bar_val, bar_jacobian=bar_jac,
                                bar_hessian=bar_hess)


class BlackBoxLagrangianModel(_ScalarEnergyBase):
    """Unstructured scalar Lagrangian L(q, qd); dynamics via the Euler-Lagrange
    equation in Hessian form.  The velocity Hessian carries a small damping
    delta on the diagonal before it is solved, and rollouts watch its
    condition number."""

    kind = "delan-blackbox"
    coordinates = "velocity"

    def __init__(self, spec, params, feature=None, n=None, hessian_damping=1e-6,
                 cond_limit=1e8):
        if n is None:
            raise ShapeError("n is required")
        super().__init__(spec, params, feature, n)
        self.hessian_damping = float(hessian_damping)
        self.cond_limit = float(cond_limit)

    @classmethod
    def create(cls, n, hidden=(64, 64), activation="softplus", feature=None,
               hessian_damping=1e-6, cond_limit=1e8, seed=0):
        feature = feature if feature is not None else FeatureTransform.identity(n)
        spec = diffnet.NetSpec.dense(feature.out_dim + n, hidden, 1, activation)
        params = diffnet.init_params(spec, np.random.default_rng(np.random.SeedSequence(seed)))
        return cls(spec, params, feature, n, hessian_damping, cond_limit)

    def lagrangian(self, q, qd):
        t = self.terms(q, qd, order=0)
        return float(t.value[0])

    def energy(self, q, qd):
        """Legendre transform qd . dL/dqd - L."""
        t = self.terms(q, qd, order=1)
        qd = np.asarray(qd, dtype=float)
        return float(t.grad_v[0] @ qd - t.value[0])

    def momentum(self, q, qd):
        return self.terms(q, qd, order=1).grad_v[0]

    def inverse(self, q, qd, qdd):
        from . import dynamics

        t = self.terms(q, qd, order=2)
        Qd, single = _as_batch(qd, self.n, "qd")
        Qdd, _ = _as_batch(qdd, self.n, "qdd")
        tau = dynamics.euler_lagrange_inverse(t, Qd, Qdd)
        return tau[0] if single else tau

    def forward(self, q, qd, tau):
        from . import dynamics

        t = self.terms(q, qd, order=2)
        Qd, single = _as_batch(qd, self.n, "qd")
        Tau, _ = _as_batch(tau, self.n, "tau")
        qdd = dynamics.euler_lagrange_forward(
            t, Qd, Tau, self.hessian_damping, self.cond_limit
        )
        return qdd[0] if single else qdd


class BlackBoxHamiltonianModel(_ScalarEnergyBase):
    """Unstructured scalar Hamiltonian E(q, p); dynamics are Hamilton's
    equations on its gradients, so only first derivatives are needed."""

    kind = "hnn-blackbox"
    coordinates = "momentum"

    @classmethod
    def create(cls, n, hidden=(64, 64), activation="softplus", feature=None, seed=0):
        feature = feature if feature is not None else FeatureTransform.identity(n)
        spec = diffnet.NetSpec.dense(feature.out_dim + n, hidden, 1, activation)
        params = diffnet.init_params(spec, np.random.default_rng(np.random.SeedSequence(seed)))
        return cls(spec, params, feature, n)

    def energy(self, q, p):
        return float(self.terms(q, p, order=0).value[0])

    def velocity(self, q, p):
        return self.terms(q, p, order=1).grad_v[0]

    def forward(self, q, p, tau):
        t = self.terms(q, p, order=1)
        Tau, single = _as_batch(tau, self.n, "tau")
        qd = t.grad_v
        pd = Tau - t.grad_q
        return (qd[0], pd[0]) if single else (qd, pd)

    def inverse(self, q, p, pd):
        t = self.terms(q, p, order=1)
        Pd, single = _as_batch(pd, self.n, "pd")
        tau = Pd + t.grad_q
        return tau[0] if single else tau


class AnalyticLagrangianModel:
    """Adapter plugging a plant's exact energies into the model-side maps."""

    kind = "analytic"
    coordinates = "velocity"

    def __init__(self, plant):
        self.plant = plant

    @property
    def n(self):
        return self.plant.n

    def core(self, Q, order=1):
        Q, _ = _as_batch(Q, self.n)
        return QuadCore(
            Q=Q,
            A_mat=self.plant.mass_matrix(Q),
            T=self.plant.mass_matrix_grad(Q),
            V=self.plant.potential(Q),
            gV=self.plant.gravity(Q),
            order=order,
        )

    def mass_matrix(self, q):
        core = self.core(q)
        return core.A_mat[0], core.T[0]

    def potential(self, q):
        core = self.core(q)
        return float(core.V[0]), core.gV[0]

    def lagrangian(self, q, qd):
        core = self.core(q)
        qd = np.asarray(qd, dtype=float)
        return float(0.5 * qd @ core.A_mat[0] @ qd - core.V[0])

    energy = StructuredLagrangianModel.energy
    momentum = StructuredLagrangianModel.momentum
    inverse = StructuredLagrangianModel.inverse
    forward = StructuredLagrangianModel.forward
    decompose = StructuredLagrangianModel.decompose


class AnalyticHamiltonianModel:
    """Adapter exposing a plant in phase-space coordinates: B = H^-1 and
    dB/dq = -B (dH/dq) B, both exact up to the linear solves."""

    kind = "analytic"
    coordinates = "momentum"

    def __init__(self, plant):
        self.plant = plant

    @property
    def n(self):
        return self.plant.n

    def core(self, Q, order=1):
        Q, _ = _as_batch(Q, self.n)
        H = self.plant.mass_matrix(Q)
        T = self.plant.mass_matrix_grad(Q)
        Bm = np.linalg.inv(H)
        TB = -np.einsum("bij,bkjl,blm->bkim", Bm, T, Bm)
        return QuadCore(
            Q=Q, A_mat=Bm, T=TB,
            V=self.plant.potential(Q), gV=self.plant.gravity(Q), order=order,
        )

    energy = StructuredHamiltonianModel.energy
    velocity = StructuredHamiltonianModel.velocity
    forward = StructuredHamiltonianModel.forward
    inverse = StructuredHamiltonianModel.inverse

    def momentum(self, q, qd):
        H = self.plant.mass_matrix(np.asarray(q, dtype=float)[None, :])[0]
        return H @ np.asarray(qd, dtype=float)


class FeedForwardBaseline:
    """Two plain regressors: (q, qd, tau) -> qdd and (q, qd, qdd) -> tau.

    No shared energy, no structure; the baseline every structured variant is
    compared against.
    """

    kind = "ffnn"
    coordinates = "velocity"

    def __init__(self, forward_spec, forward_params, inverse_spec, inverse_params,
                 feature=None, n=None):
        if n is None:
            raise ShapeError("n is required")
        self._n = int(n)
        self.feature = feature if feature is not None else FeatureTransform.identity(n)
        dz = self.feature.out_dim
        for s in (forward_spec, inverse_spec):
            if s.input_dim != dz + 2 * n or s.output_dim != n:
                raise ShapeError("baseline nets map (features, qd, third) -> n outputs")
        self.forward_spec = forward_spec
        self.forward_params = np.asarray(forward_params, dtype=float)
        self.inverse_spec = inverse_spec
        self.inverse_params = np.asarray(inverse_params, dtype=float)

    @property
    def n(self):
        return self._n

    @classmethod
    def create(cls, n, hidden=(96, 96), activation="softplus", feature=None, seed=0):
        feature = feature if feature is not None else FeatureTransform.identity(n)
        dz = feature.out_dim
        fs = diffnet.NetSpec.dense(dz + 2 * n, hidden, n, activation)
        is_ = diffnet.NetSpec.dense(dz + 2 * n, hidden, n, activation)
        ss = np.random.SeedSequence(seed)
        r1, r2 = [np.random.default_rng(s) for s in ss.spawn(2)]
        return cls(fs, diffnet.init_params(fs, r1), is_, diffnet.init_params(is_, r2),
                   feature, n)

    @property
    def params(self):
        return np.concatenate([self.forward_params, self.inverse_params])

    def set_params(self, vec):
        vec = np.asarray(vec, dtype=float)
        nf = diffnet.param_count(self.forward_spec)
        ni = diffnet.param_count(self.inverse_spec)
        if vec.shape != (nf + ni,):
            raise ShapeError("parameter vector has the wrong length")
        self.forward_params = vec[:nf].copy()
        self.inverse_params = vec[nf:].copy()

    def _stack(self, Q, Qd, third):
        Z = self.feature.value(Q)
        return np.concatenate([Z, Qd, third], axis=1)

    def forward(self, q, qd, tau):
        Q, single = _as_batch(q, self.n)
        Qd, _ = _as_batch(qd, self.n, "qd")
        Tau, _ = _as_batch(tau, self.n, "tau")
        out = diffnet.net_eval(self.forward_spec, self.forward_params,
                               self._stack(Q, Qd, Tau))
        return out[0] if single else out

    def inverse(self, q, qd, qdd):
        Q, single = _as_batch(q, self.n)
        Qd, _ = _as_batch(qd, self.n, "qd")
        Qdd, _ = _as_batch(qdd, self.n, "qdd")
        out = diffnet.net_eval(self.inverse_spec, self.inverse_params,
                               self._stack(Q, Qd, Qdd))
        return out[0] if single else out


def _put_net(store, prefix, spec, params):
    store[f"{prefix}_input_dim"] = np.array(spec.input_dim)
    store[f"{prefix}_widths"] = np.array(spec.layer_widths, dtype=np.int64)
    store[f"{prefix}_output_dim"] = np.array(spec.output_dim)
    store[f"{prefix}_acts"] = np.array(spec.activations)
    store[f"{prefix}_params"] = np.asarray(params, dtype=float)


def _get_net(data, prefix):
    spec = diffnet.NetSpec(
        input_dim=int(data[f"{prefix}_input_dim"]),
        layer_widths=tuple(int(w) for w in data[f"{prefix}_widths"]),
        output_dim=int(data[f"{prefix}_output_dim"]),
        activations=tuple(str(a) for a in data[f"{prefix}_acts"]),
    )
    return spec, np.array(data[f"{prefix}_params"], dtype=float)


def save_model(path, model):
    """Write a learnable model to an npz file; reload is bit-exact."""
    store = {
        "format": np.array(_MODEL_FORMAT),
        "kind": np.array(model.kind),
        "n": np.array(model.n),
        "feature": np.array(model.feature.kinds),
    }
    if isinstance(model, _StructuredEnergyBase):
        store["epsilon"] = np.array(model.head.epsilon)
        store["alpha"] = np.array(model.head.alpha)
        _put_net(store, "mass", model.head.spec, model.head.params)
        _put_net(store, "pot", model.potential_spec, model.potential_params)
    elif isinstance(model, BlackBoxLagrangianModel):
        store["hessian_damping"] = np.array(model.hessian_damping)
        store["cond_limit"] = np.array(model.cond_limit)
        _put_net(store, "net", model.spec, model.params)
    elif isinstance(model, BlackBoxHamiltonianModel):
        _put_net(store, "net", model.spec, model.params)
    elif isinstance(model, FeedForwardBaseline):
        _put_net(store, "fwd", model.forward_spec, model.forward_params)
        _put_net(store, "inv", model.inverse_spec, model.inverse_params)
    else:
        raise ValueError(f"cannot save model of type {type(model).__name__}")
    np.savez(path, **store)


def load_model(path):
    with np.load(path, allow_pickle=False) as data:
        fmt = str(data["format"])
        if fmt != _MODEL_FORMAT:
            raise UnknownFormatVersion(f"cannot read model format {fmt!r}")
        kind = str(data["kind"])
        n = int(data["n"])
        feature = FeatureTransform(tuple(str(k) for k in data["feature"]))
        if kind in ("delan-structured", "hnn-structured"):
            mass_spec, mass_params = _get_net(data, "mass")
            pot_spec, pot_params = _get_net(data, "pot")
            head = MassMatrixHead(n, mass_spec, mass_params,
                                  epsilon=float(data["epsilon"]),
                                  alpha=float(data["alpha"]))
            cls = (StructuredLagrangianModel if kind == "delan-structured"
                   else StructuredHamiltonianModel)
            return cls(head, pot_spec, pot_params, feature)
        if kind == "delan-blackbox":
            spec, params = _get_net(data, "net")
            return BlackBoxLagrangianModel(
                spec, params, feature, n,
                hessian_damping=float(data["hessian_damping"]),
                cond_limit=float(data["cond_limit"]),
            )
        if kind == "hnn-blackbox":
            spec, params = _get_net(data, "net")
            return BlackBoxHamiltonianModel(spec, params, feature, n)
        if kind == "ffnn":
            fs, fp = _get_net(data, "fwd")
            is_, ip = _get_net(data, "inv")
            return FeedForwardBaseline(fs, fp, is_, ip, feature, n)
    raise UnknownFormatVersion(f"unknown model kind {kind!r}")
