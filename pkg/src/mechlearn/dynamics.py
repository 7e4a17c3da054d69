"""Equations of motion on top of the quadratic-energy core.

Lagrangian side (coordinates q, qd):

    tau = H(q) qdd + c(q, qd) + g(q)
    c_i  = sum_kj dH_ij/dq_k qd_k qd_j - 1/2 sum_pq dH_pq/dq_i qd_p qd_q

The forward map solves the symmetric positive definite system H qdd = rhs;
the mass matrix is never inverted explicitly.

Hamiltonian side (coordinates q, p) with B = H^-1:

    qd = B p
    pd = tau - dE/dq,   dE_k/dq = 1/2 p^T (dB/dq_k) p + dV/dq_k

The black-box Lagrangian has no assembled mass matrix; its equation of
motion uses the velocity Hessian of the scalar network directly and damps
the solve with a small diagonal shift.

Besides the value-level maps this module carries their reverse-mode
counterparts: `*_bars` helpers turn a residual adjoint into adjoints on the
core quantities (A_mat, T, gV) plus the data-side inputs, ready to feed
`core_param_backward` / `core_input_vjp` on the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NearSingularHessian


@dataclass(frozen=True)
class ForceDecomposition:
    """Generalized-force split of the inverse map; `total` matches the
    inverse model output bit for bit (same additions, same order)."""

    inertial: np.ndarray
    coriolis: np.ndarray
    gravitational: np.ndarray

    @property
    def total(self):
        return self.inertial + self.coriolis + self.gravitational


def spd_solve(A, Y):
    """Solve A X = Y for symmetric positive definite A, batched.

    Cholesky factor once, then forward/back substitution unrolled over the
    (small) coordinate dimension so the batch stays vectorized.
    """
    A = np.asarray(A, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = A.shape[-1]
    Lc = np.linalg.cholesky(A)
    Z = np.zeros_like(Y)
    for i in range(n):
        acc = Y[..., i]
        for j in range(i):
            acc = acc - Lc[..., i, j] * Z[..., j]
        Z[..., i] = acc / Lc[..., i, i]
    X = np.zeros_like(Y)
    for i in range(n - 1, -1, -1):
        acc = Z[..., i]
        for j in range(i + 1, n):
            acc = acc - Lc[..., j, i] * X[..., j]
        X[..., i] = acc / Lc[..., i, i]
    return X


def coriolis_vector(T, Qd):
    """Velocity-product forces from the mass-matrix gradient T[b,k,i,j]."""
    Tdot = np.einsum("bkij,bk->bij", T, Qd)
    return np.einsum("bij,bj->bi", Tdot, Qd) - 0.5 * np.einsum(
        "bipq,bp,bq->bi", T, Qd, Qd
    )


def lagrangian_inverse(core, Qd, Qdd):
    """tau for given motion; association matches `lagrangian_decompose`."""
    inertial = np.einsum("bij,bj->bi", core.A_mat, Qdd)
    return inertial + coriolis_vector(core.T, Qd) + core.gV


def lagrangian_decompose(core, Qd, Qdd):
    return ForceDecomposition(
        inertial=np.einsum("bij,bj->bi", core.A_mat, Qdd),
        coriolis=coriolis_vector(core.T, Qd),
        gravitational=np.broadcast_to(core.gV, Qd.shape).copy(),
    )


def lagrangian_forward(core, Qd, Tau):
    rhs = Tau - coriolis_vector(core.T, Qd) - core.gV
    return spd_solve(core.A_mat, rhs)


def _coriolis_qd_bar(T, Qd, R):
    """Adjoint of coriolis_vector wrt qd for residual adjoint R."""
    return (
        np.einsum("bi,bmij,bj->bm", R, T, Qd)
        + np.einsum("bi,bkim,bk->bm", R, T, Qd)
        - np.einsum("bi,bimq,bq->bm", R, T, Qd)
    )


def lagrangian_inverse_bars(core, Qd, Qdd, R):
    """Reverse-mode of `lagrangian_inverse` through a residual adjoint R.

    Returns core-side bars (A, T, g) and data-side bars (qd, qdd).
    """
    bar_A = np.einsum("bi,bj->bij", R, Qdd)
    bar_T = np.einsum("bk,bi,bj->bkij", Qd, R, Qd) - 0.5 * np.einsum(
        "bi,bp,bq->bipq", R, Qd, Qd
    )
    bar_g = R.copy()
    bar_Qdd = np.einsum("bij,bi->bj", core.A_mat, R)
    bar_Qd = _coriolis_qd_bar(core.T, Qd, R)
    return bar_A, bar_T, bar_g, bar_Qd, bar_Qdd


def lagrangian_forward_bars(core, Qd, Qdd_hat, U):
    """Reverse-mode of `lagrangian_forward` through an output adjoint U.

    `Qdd_hat` is the already-computed forward solution.  Returns core-side
    bars (A, T, g) plus data-side bars (qd, tau).
    """
    w = spd_solve(core.A_mat, U)
    bar_A = -np.einsum("bi,bj->bij", w, Qdd_hat)
    R = -w
    bar_T = np.einsum("bk,bi,bj->bkij", Qd, R, Qd) - 0.5 * np.einsum(
        "bi,bp,bq->bipq", R, Qd, Qd
    )
    bar_g = R.copy()
    bar_Qd = _coriolis_qd_bar(core.T, Qd, R)
    return bar_A, bar_T, bar_g, bar_Qd, w


def hamiltonian_energy_grad_q(core, P):
    """dE/dq for the phase-space core (T here is dB/dq)."""
    return 0.5 * np.einsum("bkpq,bp,bq->bk", core.T, P, P) + core.gV


def hamiltonian_forward(core, P, Tau):
    qd = np.einsum("bij,bj->bi", core.A_mat, P)
    pd = Tau - hamiltonian_energy_grad_q(core, P)
    return qd, pd


def hamiltonian_inverse(core, P, Pd):
    return Pd + hamiltonian_energy_grad_q(core, P)


def hamiltonian_inverse_bars(core, P, R):
    """Reverse-mode of `hamiltonian_inverse` through a residual adjoint R."""
    bar_T = 0.5 * np.einsum("bk,bp,bq->bkpq", R, P, P)
    bar_g = R.copy()
    bar_P = np.einsum("bk,bkpq,bq->bp", R, core.T, P)
    bar_Pd = R.copy()
    return bar_T, bar_g, bar_P, bar_Pd


def hamiltonian_forward_bars(core, P, CQ, CP):
    """Reverse-mode of `hamiltonian_forward` through adjoints (CQ, CP) on
    (qd, pd).  Returns core-side bars (A, T, g) and data-side bars (p, tau)."""
    bar_A = np.einsum("bi,bj->bij", CQ, P)
    bar_P = np.einsum("bij,bi->bj", core.A_mat, CQ)
    bar_T = -0.5 * np.einsum("bk,bp,bq->bkpq", CP, P, P)
    bar_g = -CP
    bar_P = bar_P - np.einsum("bk,bkpq,bq->bp", CP, core.T, P)
    return bar_A, bar_T, bar_g, bar_P, CP.copy()


def euler_lagrange_inverse(t, Qd, Qdd):
    """Black-box Euler-Lagrange: tau = L_vv qdd + L_vq qd - dL/dq."""
    return (
        np.einsum("bij,bj->bi", t.H_vv, Qdd)
        + np.einsum("bij,bj->bi", t.H_vq, Qd)
        - t.grad_q
    )


def euler_lagrange_forward(t, Qd, Tau, damping=1e-6, cond_limit=1e8):
    """Solve the damped velocity Hessian for the acceleration.

    Raises NearSingularHessian when any batch member's damped Hessian has a
    2-norm condition number above `cond_limit`.
    """
    n = t.H_vv.shape[-1]
    Hd = t.H_vv + damping * np.eye(n)
    cond = np.linalg.cond(Hd)
    worst = int(np.argmax(cond))
    if not np.all(np.isfinite(cond)) or cond[worst] > cond_limit:
        raise NearSingularHessian(
            f"velocity Hessian condition number {cond[worst]:.3e} exceeds "
            f"{cond_limit:.1e}",
            condition=float(cond[worst]),
            batch_index=worst,
        )
    rhs = Tau - np.einsum("bij,bj->bi", t.H_vq, Qd) + t.grad_q
    return np.linalg.solve(Hd, rhs[..., None])[..., 0]


def model_field(model):
    """State-derivative callable f(x, u) for rollouts; x stacks (q, qd) for
    velocity-coordinate models and (q, p) for momentum-coordinate ones."""
    n = model.n

    if model.coordinates == "velocity":

        def field(X, U):
            X = np.asarray(X, dtype=float)
            U = np.asarray(U, dtype=float)
            Q, Qd = X[..., :n], X[..., n:]
            acc = model.forward(Q, Qd, U)
            return np.concatenate([Qd, acc], axis=-1)

    else:

        def field(X, U):
            X = np.asarray(X, dtype=float)
            U = np.asarray(U, dtype=float)
            Q, P = X[..., :n], X[..., n:]
            qd, pd = model.forward(Q, P, U)
            return np.concatenate([qd, pd], axis=-1)

    return field


def model_energy_fn(model):
    """Scalar total-energy callable e(x) for a single stacked state."""
    n = model.n

    def energy(x):
        x = np.asarray(x, dtype=float)
        return model.energy(x[:n], x[n:])

    return energy


def field_vjp(model, X, U, bar_out):
    """Reverse-mode of `model_field(model)` at a batch of states.

    Returns (param_grad, bar_X, bar_U).  Supported for structured models and
    the feed-forward baseline; the black-box variants would need third
    derivatives of their scalar network, which the engine does not carry.
    """
    from . import models as _models

    n = model.n
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    bar_out = np.asarray(bar_out, dtype=float)
    b1, b2 = bar_out[:, :n], bar_out[:, n:]

    if isinstance(model, _models.FeedForwardBaseline):
        Q, Qd = X[:, :n], X[:, n:]
        from . import diffnet

        Z = model.feature.value(Q)
        Xin = np.concatenate([Z, Qd, U], axis=1)
        fwd = diffnet.forward(model.forward_spec, model.forward_params, Xin, order=1)
        bar_val = b2
        grad_f = diffnet.backward(fwd, bar_value=bar_val)
        bar_in = diffnet.input_vjp(fwd, bar_value=bar_val)
        dz = model.feature.out_dim
        G = model.feature.jacobian(Q)
        bar_Q = np.einsum("bz,bzr->br", bar_in[:, :dz], G)
        bar_Qd = bar_in[:, dz:dz + n] + b1
        bar_U = bar_in[:, dz + n:]
        param_grad = np.concatenate(
            [grad_f, np.zeros(diffnet.param_count(model.inverse_spec))]
        )
        return param_grad, np.concatenate([bar_Q, bar_Qd], axis=1), bar_U

    if not isinstance(model, _models._StructuredEnergyBase):
        raise NotImplementedError(
            "one-step state losses need configuration derivatives of the "
            "equation of motion, which only the structured variants and the "
            "feed-forward baseline provide"
        )

    core = model.core(X[:, :n], order=2)
    if model.coordinates == "velocity":
        Qd = X[:, n:]
        acc = lagrangian_forward(core, Qd, U)
        bar_A, bar_T, bar_g, bar_Qd, bar_U = lagrangian_forward_bars(core, Qd, acc, b2)
        bar_Qd = bar_Qd + b1
    else:
        P = X[:, n:]
        bar_A, bar_T, bar_g, bar_P, bar_U = hamiltonian_forward_bars(core, P, b1, b2)
        bar_Qd = bar_P
    param_grad = model.core_param_backward(core, bar_A, bar_T, bar_g)
    bar_Q = model.core_input_vjp(core, bar_A, bar_T, bar_g)
    return param_grad, np.concatenate([bar_Q, bar_Qd], axis=1), bar_U
