"""Small fully connected networks with analytic derivatives.

The engine targets the network sizes used for energy models of low
dimensional rigid body systems: a few dense layers, smooth activations,
float64 throughout.  A forward sweep propagates values together with first
and second derivatives with respect to the network input.  The matching
reverse sweep accumulates the gradient of a scalar objective with respect
to the flat parameter vector, and it handles objectives that read the input
derivatives themselves (training losses for energy models contain network
gradients, so parameter gradients need the mixed second and third order
chain rules).  Everything is written out as explicit layer recurrences; no
tape or graph framework is involved, and repeated evaluation is bit
deterministic.

Layer recurrences, with x the network input, h the layer activation,
J = dh/dx and S = d2h/dx2:

    z = W h_prev + b
    A = W J_prev                 (pre-activation Jacobian)
    C = W . S_prev               (pre-activation Hessian, contracted over units)
    h = act(z)
    J[k, :]    = act'(z_k) A[k, :]
    S[k, :, :] = act''(z_k) outer(A[k], A[k]) + act'(z_k) C[k]

The reverse sweep is the exact adjoint of these assignments; activation
derivatives up to third order appear once a Hessian adjoint is present.

Parameters live in one flat float64 vector.  Layout, fixed per architecture:
for each layer in order, the weight matrix row-major, then the bias.  Saved
parameter files restore bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import NumericOverflowError, ShapeError, UnknownFormatVersion

ACTIVATIONS = ("softplus", "tanh", "linear")

_FORMAT = "mechlearn-net-v1"


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    """Inverse of softplus for y > 0, stable for large y."""
    y = np.asarray(y, dtype=float)
    return y + np.log1p(-np.exp(-y))


def _act_eval(name, z, order):
    """Value and first/second derivatives of an activation at z.

    Returns (s, s1, s2); entries beyond `order` are None.
    """
    if name == "linear":
        s = z
        s1 = np.ones_like(z) if order >= 1 else None
        s2 = np.zeros_like(z) if order >= 2 else None
    elif name == "tanh":
        s = np.tanh(z)
        s1 = 1.0 - s * s if order >= 1 else None
        s2 = -2.0 * s * s1 if order >= 2 else None
    elif name == "softplus":
        s = softplus(z)
        s1 = expit(z) if order >= 1 else None
        s2 = s1 * (1.0 - s1) if order >= 2 else None
    else:
        raise ValueError(f"unknown activation {name!r}")
    return s, s1, s2


def _act_third(name, h, s1, s2):
    """Third derivative from cached value/first/second derivatives."""
    if name == "linear":
        return np.zeros_like(h)
    if name == "tanh":
        return s1 * (6.0 * h * h - 2.0)
    if name == "softplus":
        return s2 * (1.0 - 2.0 * s1)
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class NetSpec:
    """Architecture of a dense network.

    `layer_widths` are the hidden widths (may be empty for a single linear
    map); `activations` names one activation per hidden layer.
    """

    input_dim: int
    layer_widths: tuple
    output_dim: int
    activations: tuple

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        object.__setattr__(self, "activations", tuple(str(a) for a in self.activations))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ShapeError("network needs positive input and output dims")
        if any(w < 1 for w in self.layer_widths):
            raise ShapeError("hidden widths must be positive")
        if len(self.activations) != len(self.layer_widths):
            raise ShapeError("need exactly one activation per hidden layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @classmethod
    def dense(cls, input_dim, hidden, output_dim, activation="softplus"):
        hidden = tuple(hidden)
        return cls(input_dim, hidden, output_dim, (activation,) * len(hidden))


def layer_shapes(spec):
    """(fan_in, fan_out) per layer, output layer included."""
    dims = (spec.input_dim,) + spec.layer_widths + (spec.output_dim,)
    return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


def param_count(spec):
    return sum(fi * fo + fo for fi, fo in layer_shapes(spec))


def unpack_params(spec, params):
    """Views (W, b) per layer into the flat vector. No copies."""
    params = np.asarray(params)
    if params.shape != (param_count(spec),):
        raise ShapeError(
            f"parameter vector has shape {params.shape}, expected ({param_count(spec)},)"
        )
    out = []
    k = 0
    for fi, fo in layer_shapes(spec):
        W = params[k : k + fi * fo].reshape(fo, fi)
        k += fi * fo
        b = params[k : k + fo]
        k += fo
        out.append((W, b))
    return out


def init_params(spec, rng):
    """Gaussian weights scaled by 1/sqrt(fan_in), zero biases."""
    params = np.zeros(param_count(spec))
    for W, b in unpack_params(spec, params):
        fo, fi = W.shape
        W[...] = rng.normal(0.0, 1.0 / np.sqrt(fi), size=(fo, fi))
        b[...] = 0.0
    return params


@dataclass
class _LayerCache:
    name: str
    W: np.ndarray
    h_prev: np.ndarray
    J_prev: np.ndarray  # None encodes the identity (first layer)
    S_prev: np.ndarray  # None encodes zero
    h: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    A: np.ndarray = None
    C: np.ndarray = None


@dataclass
class NetForward:
    """Forward cache: batched outputs plus what the reverse sweep needs."""

    spec: NetSpec
    order: int
    X: np.ndarray
    value: np.ndarray
    jacobian: np.ndarray
    hessian: np.ndarray
    single: bool
    _hidden: list = field(default_factory=list, repr=False)
    _out_W: np.ndarray = field(default=None, repr=False)
    _out_h: np.ndarray = field(default=None, repr=False)
    _out_J: np.ndarray = field(default=None, repr=False)
    _out_S: np.ndarray = field(default=None, repr=False)


def forward(spec, params, X, order=0):
    """Propagate values (order 0), input Jacobians (1), input Hessians (2)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ShapeError(f"input has shape {X.shape}, expected (*, {spec.input_dim})")
    layers = unpack_params(spec, params)
    B = X.shape[0]

    h, J, S = X, None, None
    hidden = []
    for (W, b), name in zip(layers[:-1], spec.activations):
        z = h @ W.T + b
        # one derivative order beyond the propagated one: the reverse sweep
        # chains value adjoints through act' and Jacobian adjoints through act''
        s, s1, s2 = _act_eval(name, z, min(order + 1, 2))
        cache = _LayerCache(name=name, W=W, h_prev=h, J_prev=J, S_prev=S, h=s, s1=s1, s2=s2)
        Jn = Sn = None
        if order >= 1:
            A = np.broadcast_to(W, (B,) + W.shape) if J is None else np.einsum(
                "km,bmd->bkd", W, J
            )
            cache.A = A
            Jn = s1[:, :, None] * A
        if order >= 2:
            Sn = s2[:, :, None, None] * (A[:, :, :, None] * A[:, :, None, :])
            if S is not None:
                C = np.einsum("km,bmde->bkde", W, S)
                cache.C = C
                Sn = Sn + s1[:, :, None, None] * C
        hidden.append(cache)
        h, J, S = s, Jn, Sn

    W, b = layers[-1]
    value = h @ W.T + b
    jac = hess = None
    if order >= 1:
        jac = (
            np.broadcast_to(W, (B,) + W.shape).copy()
            if J is None
            else np.einsum("om,bmd->bod", W, J)
        )
    if order >= 2:
        d = spec.input_dim
        hess = (
            np.zeros((B, spec.output_dim, d, d))
            if S is None
            else np.einsum("om,bmde->bode", W, S)
        )
    return NetForward(
        spec=spec,
        order=order,
        X=X,
        value=value,
        jacobian=jac,
        hessian=hess,
        single=single,
        _hidden=hidden,
        _out_W=W,
        _out_h=h,
        _out_J=J,
        _out_S=S,
    )


def _promote(bar, fwd, ndim):
    if bar is None:
        return None
    bar = np.asarray(bar, dtype=float)
    if fwd.single and bar.ndim == ndim - 1:
        bar = bar[None, ...]
    return bar


def backward(fwd, bar_value=None, bar_jacobian=None, bar_hessian=None):
    """Gradient wrt the flat parameters of sum_b <bar, output_b>.

    The adjoints may cover the value, the input Jacobian, and the input
    Hessian in any combination; the forward cache must have been computed
    to a sufficient order.
    """
    spec = fwd.spec
    bar_value = _promote(bar_value, fwd, 2)
    bar_jacobian = _promote(bar_jacobian, fwd, 3)
    bar_hessian = _promote(bar_hessian, fwd, 4)
    if bar_jacobian is not None and fwd.order < 1:
        raise ShapeError("jacobian adjoint needs a forward pass of order >= 1")
    if bar_hessian is not None and fwd.order < 2:
        raise ShapeError("hessian adjoint needs a forward pass of order >= 2")

    grad = np.zeros(param_count(spec))
    gviews = unpack_params(spec, grad)

    # Output layer: value = W h + b, J_out = W J, S_out = W . S.
    W = fwd._out_W
    gW, gb = gviews[-1]
    bar_h = bar_J = bar_S = None
    if bar_value is not None:
        gW += np.einsum("bo,bm->om", bar_value, fwd._out_h)
        gb += bar_value.sum(axis=0)
        bar_h = bar_value @ W
    if bar_jacobian is not None:
        if fwd._out_J is None:
            gW += np.einsum("bod->od", bar_jacobian)
        else:
            gW += np.einsum("bod,bmd->om", bar_jacobian, fwd._out_J)
            bar_J = np.einsum("om,bod->bmd", W, bar_jacobian)
    if bar_hessian is not None and fwd._out_S is not None:
        gW += np.einsum("bode,bmde->om", bar_hessian, fwd._out_S)
        bar_S = np.einsum("om,bode->bmde", W, bar_hessian)

    for li in range(len(fwd._hidden) - 1, -1, -1):
        c = fwd._hidden[li]
        gW, gb = gviews[li]
        s1, s2, A = c.s1, c.s2, c.A

        bar_s1 = bar_s2 = bar_A = bar_C = None
        if bar_J is not None:
            bar_s1 = np.einsum("bkd,bkd->bk", bar_J, A)
            bar_A = s1[:, :, None] * bar_J
        if bar_S is not None:
            sym = bar_S + np.swapaxes(bar_S, 2, 3)
            bar_s2 = np.einsum("bkde,bkd,bke->bk", bar_S, A, A)
            contrib = s2[:, :, None] * np.einsum("bkde,bke->bkd", sym, A)
            bar_A = contrib if bar_A is None else bar_A + contrib
            if c.C is not None:
                extra = np.einsum("bkde,bkde->bk", bar_S, c.C)
                bar_s1 = extra if bar_s1 is None else bar_s1 + extra
                bar_C = s1[:, :, None, None] * bar_S

        bar_z = np.zeros_like(c.h)
        if bar_h is not None:
            bar_z += bar_h * s1
        if bar_s1 is not None:
            bar_z += bar_s1 * s2
        if bar_s2 is not None:
            bar_z += bar_s2 * _act_third(c.name, c.h, s1, s2)

        gW += np.einsum("bk,bm->km", bar_z, c.h_prev)
        gb += bar_z.sum(axis=0)
        next_h = bar_z @ c.W
        next_J = next_S = None
        if bar_A is not None:
            if c.J_prev is None:
                gW += np.einsum("bkm->km", bar_A)
            else:
                gW += np.einsum("bkd,bmd->km", bar_A, c.J_prev)
                next_J = np.einsum("km,bkd->bmd", c.W, bar_A)
        if bar_C is not None:
            gW += np.einsum("bkde,bmde->km", bar_C, c.S_prev)
            next_S = np.einsum("km,bkde->bmde", c.W, bar_C)
        bar_h, bar_J, bar_S = next_h, next_J, next_S

    return grad


def input_vjp(fwd, bar_value=None, bar_jacobian=None):
    """Gradient wrt the network input of <bar_value, y> + <bar_jacobian, J>.

    Uses the propagated Jacobian (and Hessian when a Jacobian adjoint is
    present); returns one row per batch sample.
    """
    bar_value = _promote(bar_value, fwd, 2)
    bar_jacobian = _promote(bar_jacobian, fwd, 3)
    out = np.zeros_like(fwd.X)
    if bar_value is not None:
        if fwd.order < 1:
            raise ShapeError("input vjp needs a forward pass of order >= 1")
        out += np.einsum("bo,bod->bd", bar_value, fwd.jacobian)
    if bar_jacobian is not None:
        if fwd.order < 2:
            raise ShapeError("jacobian input vjp needs a forward pass of order >= 2")
        out += np.einsum("bod,bode->be", bar_jacobian, fwd.hessian)
    return out[0] if fwd.single else out


def net_eval(spec, params, x):
    """Network value at a single input (or a batch)."""
    f = forward(spec, params, x, order=0)
    return f.value[0] if f.single else f.value


def net_input_jacobian(spec, params, x):
    """d value / d input, shape (output_dim, input_dim) for a single input."""
    f = forward(spec, params, x, order=1)
    return f.jacobian[0] if f.single else f.jacobian


def net_input_hessian(spec, params, x):
    """d2 value / d input2, shape (output_dim, input_dim, input_dim)."""
    f = forward(spec, params, x, order=2)
    return f.hessian[0] if f.single else f.hessian


def _check_finite(fwd):
    arrays = [a for a in (fwd.value, fwd.jacobian, fwd.hessian) if a is not None]
    for arr in arrays:
        flat_ok = np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
        if not flat_ok.all():
            idx = int(np.argmin(flat_ok))
            raise NumericOverflowError(
                f"non-finite network output at batch index {idx}", batch_index=idx
            )


def objective_param_grad(spec, params, X, objective, order=2):
    """Value and parameter gradient of a scalar objective over a batch.

    `objective(fwd)` receives the forward cache and returns
    (value, bar_value, bar_jacobian, bar_hessian); adjoints that the
    objective does not use may be None.  Non-finite intermediates raise
    NumericOverflowError carrying the offending batch index.
    """
    fwd = forward(spec, params, X, order=order)
    _check_finite(fwd)
    value, bar_value, bar_jacobian, bar_hessian = objective(fwd)
    grad = backward(fwd, bar_value, bar_jacobian, bar_hessian)
    return float(value), grad


def save_params(path, spec, params):
    """Write spec + parameters to an npz file; reload is bit-exact."""
    params = np.asarray(params, dtype=float)
    if params.shape != (param_count(spec),):
        raise ShapeError("parameter vector does not match the spec layout")
    np.savez(
        path,
        format=np.array(_FORMAT),
        input_dim=np.array(spec.input_dim),
        layer_widths=np.array(spec.layer_widths, dtype=np.int64),
        output_dim=np.array(spec.output_dim),
        activations=np.array(spec.activations),
        params=params,
    )


def load_params(path):
    with np.load(path, allow_pickle=False) as data:
        fmt = str(data["format"])
        if fmt != _FORMAT:
            raise UnknownFormatVersion(f"cannot read network format {fmt!r}")
        spec = NetSpec(
            input_dim=int(data["input_dim"]),
            layer_widths=tuple(int(w) for w in data["layer_widths"]),
            output_dim=int(data["output_dim"]),
            activations=tuple(str(a) for a in data["activations"]),
        )
        params = np.array(data["params"], dtype=float)
    return spec, params
