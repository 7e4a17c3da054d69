"""Losses, diagonal weighting, the optimizer, and the training loop.

Residual losses come in three families:

* inverse (optionally combined with forward) on velocity-coordinate models:
  weighted squared torque residual, plus the acceleration residual for the
  combined kind;
* hamiltonian on momentum-coordinate models: weighted residuals of both of
  Hamilton's equations against observed (q̇, ṗ);
* one-step state losses through an explicit integrator, unweighted in the
  stacked state.

Each loss has a value-only form and a value-plus-parameter-gradient form;
the gradient paths reuse the reverse-mode helpers of the dynamics module,
so they stay exact rather than approximate.  The training loop is an
adaptive first-order method with bias-corrected moment estimates and
decoupled weight decay, fully reproducible from the config seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import diffnet, dynamics, integrators, models
from .errors import NumericOverflowError
from .evaluation import train_test_split

LOSS_KINDS = ("inverse", "combined", "hamiltonian", "state-euler", "state-rk4")

_VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class DiagWeights:
    """Per-dimension inverse-variance weights for the residual channels."""

    tau: np.ndarray
    qdd: np.ndarray
    qd: np.ndarray
    pd: np.ndarray

    def __post_init__(self):
        for name in ("tau", "qdd", "qd", "pd"):
            w = np.asarray(getattr(self, name), dtype=float)
            if np.any(w <= 0) or not np.all(np.isfinite(w)):
                raise ValueError(f"{name} weights must be strictly positive")
            object.__setattr__(self, name, w)

    @classmethod
    def ones(cls, n):
        one = np.ones(n)
        return cls(tau=one, qdd=one.copy(), qd=one.copy(), pd=one.copy())


def estimate_weights(dataset, floor=_VARIANCE_FLOOR):
    """Inverse-variance weights per channel, floored to stay finite."""
    if len(dataset) == 0:
        raise ValueError("cannot estimate weights from an empty dataset")

    def inv_var(arr):
        return 1.0 / np.maximum(arr.var(axis=0), floor)

    return DiagWeights(
        tau=inv_var(dataset.tau),
        qdd=inv_var(dataset.qdd),
        qd=inv_var(dataset.qd),
        pd=inv_var(dataset.pd),
    )


@dataclass
class Batch:
    """Aligned sample arrays; `next` carries the successor rows of a
    trajectory for one-step state losses."""

    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    tau: np.ndarray
    p: np.ndarray
    pd: np.ndarray
    dt: float = None
    next: "Batch" = None

    def __len__(self):
        return self.q.shape[0]

    def take(self, idx):
        nxt = self.next.take(idx) if self.next is not None else None
        return Batch(
            q=self.q[idx], qd=self.qd[idx], qdd=self.qdd[idx],
            tau=self.tau[idx], p=self.p[idx], pd=self.pd[idx],
            dt=self.dt, next=nxt,
        )


def full_batch(dataset):
    return Batch(q=dataset.q, qd=dataset.qd, qdd=dataset.qdd,
                 tau=dataset.tau, p=dataset.p, pd=dataset.pd)


def transition_batch(dataset):
    """Consecutive-row pairs of a trajectory dataset for state losses."""
    if dataset.generator != "trajectory" or dataset.dt <= 0:
        raise ValueError("state losses need a time-ordered trajectory dataset")
    head = full_batch(dataset)
    tail = head.take(slice(1, None))
    out = head.take(slice(None, -1))
    out.dt = dataset.dt
    out.next = tail
    return out


def _decay_value(model, weight_decay):
    if weight_decay == 0.0:
        return 0.0
    return weight_decay * float(np.dot(model.params, model.params))


def _weighted(r, w):
    """Mean over the batch of the weighted squared residual."""
    return float(np.mean(np.sum(w * r**2, axis=1)))


def delan_loss(model, batch, W, kind="inverse", weight_decay=0.0):
    """Torque-residual loss for velocity-coordinate models; the combined
    kind adds the acceleration residual of the forward direction."""
    if kind not in ("inverse", "combined"):
        raise ValueError(f"unknown loss kind {kind!r}")
    if model.coordinates != "velocity":
        raise ValueError("torque-residual losses expect a velocity-coordinate model")
    r = model.inverse(batch.q, batch.qd, batch.qdd) - batch.tau
    loss = _weighted(r, W.tau)
    if kind == "combined":
        rf = model.forward(batch.q, batch.qd, batch.tau) - batch.qdd
        loss += _weighted(rf, W.qdd)
    return loss + _decay_value(model, weight_decay)


def delan_loss_grad(model, batch, W, kind="inverse", weight_decay=0.0):
    """(loss, d loss / d params) for `delan_loss`."""
    if kind not in ("inverse", "combined"):
        raise ValueError(f"unknown loss kind {kind!r}")
    if model.coordinates != "velocity":
        raise ValueError("torque-residual losses expect a velocity-coordinate model")
    B = len(batch)

    if isinstance(model, models.FeedForwardBaseline):
        Xin = model._stack(batch.q, batch.qd, batch.qdd)
        fwd = diffnet.forward(model.inverse_spec, model.inverse_params, Xin, order=0)
        r = fwd.value - batch.tau
        loss = _weighted(r, W.tau)
        g_inv = diffnet.backward(fwd, bar_value=2.0 / B * W.tau * r)
        g_fwd = np.zeros(diffnet.param_count(model.forward_spec))
        if kind == "combined":
            Xf = model._stack(batch.q, batch.qd, batch.tau)
            ffwd = diffnet.forward(model.forward_spec, model.forward_params, Xf, order=0)
            rf = ffwd.value - batch.qdd
            loss += _weighted(rf, W.qdd)
            g_fwd = diffnet.backward(ffwd, bar_value=2.0 / B * W.qdd * rf)
        grad = np.concatenate([g_fwd, g_inv])

    elif isinstance(model, models._StructuredEnergyBase):
        core = model.core(batch.q, order=1)
        r = dynamics.lagrangian_inverse(core, batch.qd, batch.qdd) - batch.tau
        loss = _weighted(r, W.tau)
        bar_A, bar_T, bar_g, _, _ = dynamics.lagrangian_inverse_bars(
            core, batch.qd, batch.qdd, 2.0 / B * W.tau * r
        )
        if kind == "combined":
            acc = dynamics.lagrangian_forward(core, batch.qd, batch.tau)
            rf = acc - batch.qdd
            loss += _weighted(rf, W.qdd)
            fA, fT, fg, _, _ = dynamics.lagrangian_forward_bars(
                core, batch.qd, acc, 2.0 / B * W.qdd * rf
            )
            bar_A, bar_T, bar_g = bar_A + fA, bar_T + fT, bar_g + fg
        grad = model.core_param_backward(core, bar_A, bar_T, bar_g)

    elif isinstance(model, models.BlackBoxLagrangianModel):
        t = model.terms(batch.q, batch.qd, order=2)
        r = dynamics.euler_lagrange_inverse(t, batch.qd, batch.qdd) - batch.tau
        loss = _weighted(r, W.tau)
        R = 2.0 / B * W.tau * r
        bar_gq = -R
        bar_Hvv = np.einsum("bi,bj->bij", R, batch.qdd)
        bar_Hvq = np.einsum("bi,bj->bij", R, batch.qd)
        if kind == "combined":
            Hd = t.H_vv + model.hessian_damping * np.eye(model.n)
            acc = dynamics.euler_lagrange_forward(
                t, batch.qd, batch.tau, model.hessian_damping, model.cond_limit
            )
            rf = acc - batch.qdd
            loss += _weighted(rf, W.qdd)
            w = np.linalg.solve(Hd, (2.0 / B * W.qdd * rf)[..., None])[..., 0]
            bar_gq = bar_gq + w
            bar_Hvv = bar_Hvv - np.einsum("bi,bj->bij", w, acc)
            bar_Hvq = bar_Hvq - np.einsum("bi,bj->bij", w, batch.qd)
        grad = model.terms_param_backward(
            t, bar_grad_q=bar_gq, bar_H_vv=bar_Hvv, bar_H_vq=bar_Hvq
        )

    else:
        raise NotImplementedError(
            f"no parameter gradient for model kind {model.kind!r}"
        )

    loss += _decay_value(model, weight_decay)
    if weight_decay != 0.0:
        grad = grad + 2.0 * weight_decay * model.params
    return loss, grad


def hnn_loss(model, batch, W, weight_decay=0.0):
    """Residuals of both of Hamilton's equations for momentum models."""
    if model.coordinates != "momentum":
        raise ValueError("phase-space losses expect a momentum-coordinate model")
    r1 = model.inverse(batch.q, batch.p, batch.pd) - batch.tau
    qd_hat, _ = model.forward(batch.q, batch.p, batch.tau)
    r2 = batch.qd - qd_hat
    loss = _weighted(r1, W.pd) + _weighted(r2, W.qd)
    return loss + _decay_value(model, weight_decay)


def hnn_loss_grad(model, batch, W, weight_decay=0.0):
    """(loss, d loss / d params) for `hnn_loss`."""
    if model.coordinates != "momentum":
        raise ValueError("phase-space losses expect a momentum-coordinate model")
    B = len(batch)

    if isinstance(model, models._StructuredEnergyBase):
        core = model.core(batch.q, order=1)
        r1 = dynamics.hamiltonian_inverse(core, batch.p, batch.pd) - batch.tau
        qd_hat = np.einsum("bij,bj->bi", core.A_mat, batch.p)
        r2 = batch.qd - qd_hat
        loss = _weighted(r1, W.pd) + _weighted(r2, W.qd)
        R1 = 2.0 / B * W.pd * r1
        bar_T, bar_g, _, _ = dynamics.hamiltonian_inverse_bars(core, batch.p, R1)
        CQ = -2.0 / B * W.qd * r2
        bar_A = np.einsum("bi,bj->bij", CQ, batch.p)
        grad = model.core_param_backward(core, bar_A, bar_T, bar_g)

    elif isinstance(model, models.BlackBoxHamiltonianModel):
        t = model.terms(batch.q, batch.p, order=1)
        r1 = batch.pd + t.grad_q - batch.tau
        r2 = batch.qd - t.grad_v
        loss = _weighted(r1, W.pd) + _weighted(r2, W.qd)
        grad = model.terms_param_backward(
            t,
            bar_grad_q=2.0 / B * W.pd * r1,
            bar_grad_v=-2.0 / B * W.qd * r2,
        )

    else:
        raise NotImplementedError(
            f"no parameter gradient for model kind {model.kind!r}"
        )

    loss += _decay_value(model, weight_decay)
    if weight_decay != 0.0:
        grad = grad + 2.0 * weight_decay * model.params
    return loss, grad


def _state_arrays(model, batch):
    if batch.next is None or batch.dt is None:
        raise ValueError("state losses need transition pairs with a step size")
    if model.coordinates == "velocity":
        X = np.concatenate([batch.q, batch.qd], axis=1)
        X_next = np.concatenate([batch.next.q, batch.next.qd], axis=1)
    else:
        X = np.concatenate([batch.q, batch.p], axis=1)
        X_next = np.concatenate([batch.next.q, batch.next.p], axis=1)
    return X, X_next


def state_loss(model, batch, method="euler", weight_decay=0.0):
    """One-step prediction error through an explicit integrator, unweighted
    in the stacked state."""
    X, X_next = _state_arrays(model, batch)
    step = integrators.STEPPERS[method]
    pred = step(dynamics.model_field(model), X, batch.tau, batch.dt)
    loss = float(np.mean(np.sum((pred - X_next) ** 2, axis=1)))
    return loss + _decay_value(model, weight_decay)


def state_loss_grad(model, batch, method="euler", weight_decay=0.0):
    """(loss, d loss / d params) for `state_loss`.

    Chains the field's reverse mode through every integrator stage, so it is
    available exactly where `field_vjp` is (structured models and the
    baseline; the black-box variants raise).
    """
    X, X_next = _state_arrays(model, batch)
    U = batch.tau
    dt = batch.dt
    f = dynamics.model_field(model)

    if method == "euler":
        k1 = f(X, U)
        pred = X + dt * k1
        r = pred - X_next
        loss = float(np.mean(np.sum(r**2, axis=1)))
        bar_pred = 2.0 / len(batch) * r
        grad, _, _ = dynamics.field_vjp(model, X, U, dt * bar_pred)
    elif method == "rk4":
        k1 = f(X, U)
        X2 = X + 0.5 * dt * k1
        k2 = f(X2, U)
        X3 = X + 0.5 * dt * k2
        k3 = f(X3, U)
        X4 = X + dt * k3
        k4 = f(X4, U)
        pred = X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        r = pred - X_next
        loss = float(np.mean(np.sum(r**2, axis=1)))
        bar_pred = 2.0 / len(batch) * r
        bar_k1 = (dt / 6.0) * bar_pred
        bar_k2 = (dt / 3.0) * bar_pred
        bar_k3 = (dt / 3.0) * bar_pred
        bar_k4 = (dt / 6.0) * bar_pred
        g4, bX4, _ = dynamics.field_vjp(model, X4, U, bar_k4)
        bar_k3 = bar_k3 + dt * bX4
        g3, bX3, _ = dynamics.field_vjp(model, X3, U, bar_k3)
        bar_k2 = bar_k2 + 0.5 * dt * bX3
        g2, bX2, _ = dynamics.field_vjp(model, X2, U, bar_k2)
        bar_k1 = bar_k1 + 0.5 * dt * bX2
        g1, _, _ = dynamics.field_vjp(model, X, U, bar_k1)
        grad = g1 + g2 + g3 + g4
    else:
        raise ValueError(f"unknown integrator {method!r}")

    loss += _decay_value(model, weight_decay)
    if weight_decay != 0.0:
        grad = grad + 2.0 * weight_decay * model.params
    return loss, grad


def loss_value(model, batch, W, kind, weight_decay=0.0):
    """Dispatch on the loss kind, value only."""
    if kind in ("inverse", "combined"):
        return delan_loss(model, batch, W, kind, weight_decay)
    if kind == "hamiltonian":
        return hnn_loss(model, batch, W, weight_decay)
    if kind in ("state-euler", "state-rk4"):
        return state_loss(model, batch, kind.split("-")[1], weight_decay)
    raise ValueError(f"unknown loss kind {kind!r}")


def loss_and_grad(model, batch, W, kind, weight_decay=0.0):
    """Dispatch on the loss kind, value plus parameter gradient."""
    if kind in ("inverse", "combined"):
        return delan_loss_grad(model, batch, W, kind, weight_decay)
    if kind == "hamiltonian":
        return hnn_loss_grad(model, batch, W, weight_decay)
    if kind in ("state-euler", "state-rk4"):
        return state_loss_grad(model, batch, kind.split("-")[1], weight_decay)
    raise ValueError(f"unknown loss kind {kind!r}")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 100
    weight_decay: float = 1e-5
    seed: int = 0
    loss: str = "inverse"
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning rate and weight decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch size and epochs must be positive")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss!r}")


@dataclass
class AdamState:
    """Bias-corrected moment estimates with decoupled weight decay."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params):
        return cls(m=np.zeros_like(params), v=np.zeros_like(params))

    def update(self, params, grad, lr, weight_decay=0.0):
        self.step += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.step)
        v_hat = self.v / (1 - self.beta2**self.step)
        return params - lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                              + weight_decay * params)


def train(model, dataset, config, W=None, test_dataset=None):
    """Minibatch training loop; returns (model, history).

    The dataset is split 80/20 with the config seed unless an explicit test
    set is provided.  Weights default to inverse variances of the train
    split.  History rows carry (epoch, train_loss, test_loss, wall_time);
    losses in the history exclude the decay term, which acts directly on the
    parameters instead.  A non-finite loss aborts with the epoch and batch
    recorded.
    """
    if test_dataset is None:
        train_set, test_set = train_test_split(dataset, 0.8, config.seed)
    else:
        train_set, test_set = dataset, test_dataset
    if config.loss in ("state-euler", "state-rk4"):
        train_b = transition_batch(train_set)
        test_b = transition_batch(test_set)
    else:
        train_b = full_batch(train_set)
        test_b = full_batch(test_set)
    if W is None:
        W = estimate_weights(train_set)

    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0x7261)))
    opt = AdamState.for_params(model.params)
    history = []
    t0 = time.perf_counter()
    n_batches = max(1, len(train_b) // config.batch_size)

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_b))
        epoch_loss = 0.0
        for bi in range(n_batches):
            idx = order[bi * config.batch_size : (bi + 1) * config.batch_size]
            if idx.size == 0:
                continue
            value, grad = loss_and_grad(model, train_b.take(idx), W, config.loss)
            if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                raise NumericOverflowError(
                    f"non-finite loss at epoch {epoch}, batch {bi}",
                    batch_index=bi, context=f"epoch {epoch}",
                )
            model.set_params(opt.update(
                model.params, grad, config.learning_rate, config.weight_decay
            ))
            epoch_loss += value
        test_loss = loss_value(model, test_b, W, config.loss) if len(test_b) else float("nan")
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / n_batches,
            "test_loss": test_loss,
            "wall_time": time.perf_counter() - t0,
        })
    return model, history


def save_history(history, path, wall_time=True):
    """History rows as CSV: epoch, train_loss, test_loss, wall_time.

    `wall_time=False` drops the timing column, leaving a file that is
    bit-identical across re-runs of the same seeded training."""
    with open(path, "w") as fh:
        cols = "epoch,train_loss,test_loss"
        fh.write(cols + (",wall_time\n" if wall_time else "\n"))
        for row in history:
            fh.write(
                f"{row['epoch']},{row['train_loss']:.17g},{row['test_loss']:.17g}"
            )
            if wall_time:
                fh.write(f",{row['wall_time']:.6f}")
            fh.write("\n")
