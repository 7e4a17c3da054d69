"""Energy-model tests: assembly, derivative paths, invariants, file IO.

Derivative checks follow one pattern: build a fixed random linear functional
of the core outputs, evaluate its gradient through the model's reverse path,
and compare against central finite differences of the same functional.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mechlearn import diffnet
from mechlearn.errors import ShapeError, UnknownFormatVersion
from mechlearn.models import (
    ALPHA_UNIT,
    AnalyticHamiltonianModel,
    AnalyticLagrangianModel,
    BlackBoxHamiltonianModel,
    BlackBoxLagrangianModel,
    FeatureTransform,
    FeedForwardBaseline,
    MassMatrixHead,
    StructuredHamiltonianModel,
    StructuredLagrangianModel,
    assemble_mass_matrix,
    load_model,
    save_model,
    transform_features,
)

from numcheck import fd_gradient, fd_jacobian, rel_err


# ---------------------------------------------------------------------------
# feature transforms


def test_identity_feature_is_passthrough():
    f = FeatureTransform.identity(3)
    q = np.array([0.3, -1.2, 2.0])
    z, G = transform_features(f, q)
    assert np.array_equal(z, q)
    assert np.array_equal(G, np.eye(3))


def test_sincos_feature_values():
    f = FeatureTransform.sincos(2)
    q = np.array([0.5, -0.25])
    z = f.value(q)
    expected = np.array([np.cos(0.5), np.sin(0.5), np.cos(-0.25), np.sin(-0.25)])
    assert np.allclose(z, expected, rtol=0, atol=0)


def test_mixed_feature_jacobian_and_curvature_match_fd():
    f = FeatureTransform(("sincos", "identity", "sincos"))
    rng = np.random.default_rng(3)
    q = rng.normal(size=3)
    G = f.jacobian(q)
    G_fd = fd_jacobian(lambda x: f.value(x), q)
    assert rel_err(G, G_fd) < 1e-8
    # each output depends on one joint, so the curvature scalar is the full
    # second derivative; second-difference stencil along the source joint
    h = 1e-4
    for j in range(f.out_dim):
        s = f.src[j]
        qp, qm = q.copy(), q.copy()
        qp[s] += h
        qm[s] -= h
        d2 = (f.value(qp)[j] - 2 * f.value(q)[j] + f.value(qm)[j]) / h**2
        assert abs(f.curvature(q)[j] - d2) < 1e-6


def test_feature_rejects_unknown_kind():
    with pytest.raises(ValueError):
        FeatureTransform(("identity", "spline"))


# ---------------------------------------------------------------------------
# mass-matrix head assembly


def _head(n, seed=0, epsilon=1e-2):
    rng = np.random.default_rng(seed)
    return MassMatrixHead.create(n, n, hidden=(8,), rng=rng, epsilon=epsilon)


def test_assembled_matrix_matches_direct_construction():
    head = _head(3, seed=5)
    raw = np.random.default_rng(1).normal(size=6)
    L, H = assemble_mass_matrix(head, raw)
    # row-major lower triangle, diagonal through softplus(raw + alpha) + eps
    idx = 0
    Lref = np.zeros((3, 3))
    for i in range(3):
        for j in range(i + 1):
            if i == j:
                Lref[i, j] = np.logaddexp(0.0, raw[idx] + ALPHA_UNIT) + head.epsilon
            else:
                Lref[i, j] = raw[idx]
            idx += 1
    assert np.array_equal(L, Lref)
    assert rel_err(H, Lref @ Lref.T + head.epsilon * np.eye(3)) < 1e-15


def test_zero_raw_vector_gives_near_identity():
    head = _head(2, epsilon=1e-2)
    _, H = assemble_mass_matrix(head, np.zeros(3))
    # softplus(alpha) = 1, so the diagonal factor entries are 1 + eps
    d = (1 + head.epsilon) ** 2 + head.epsilon
    assert np.allclose(H, np.diag([d, d]), atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=3),
    data=st.data(),
)
def test_minimum_eigenvalue_never_below_epsilon(n, data):
    head = _head(n, seed=7)
    m = n * (n + 1) // 2
    raw = np.array(
        data.draw(
            st.lists(
                st.floats(min_value=-50, max_value=50, allow_nan=False),
                min_size=m,
                max_size=m,
            )
        )
    )
    _, H = assemble_mass_matrix(head, raw)
    assert np.linalg.eigvalsh(H)[0] >= head.epsilon - 1e-12


def test_eigenvalue_floor_under_random_network_outputs():
    head = _head(3, seed=11)
    rng = np.random.default_rng(2)
    raw = rng.normal(scale=5.0, size=(300, 6))
    L, _ = head.build_factor(raw)
    H = L @ np.swapaxes(L, 1, 2) + head.epsilon * np.eye(3)
    assert np.linalg.eigvalsh(H)[:, 0].min() >= head.epsilon - 1e-12


# ---------------------------------------------------------------------------
# structured core: values and derivative paths


def _small_lagrangian(n=2, feature=None, seed=0):
    return StructuredLagrangianModel.create(
        n, hidden=(6,), activation="softplus", feature=feature, seed=seed
    )


def test_core_mass_gradient_matches_fd():
    model = _small_lagrangian()
    rng = np.random.default_rng(4)
    Q = rng.normal(size=(3, 2))
    core = model.core(Q)

    for b in range(3):
        for k in range(2):

            def entry(qk, b=b, k=k):
                q = Q[b].copy()
                q[k] = qk
                return model.core(q).A_mat[0]

            fd = fd_jacobian(lambda v: entry(v[0]).ravel(), np.array([Q[b, k]]))
            assert rel_err(core.T[b, k].ravel(), fd[:, 0]) < 1e-6


def test_core_potential_gradient_matches_fd():
    model = _small_lagrangian(feature=FeatureTransform.sincos(2), seed=3)
    rng = np.random.default_rng(8)
    q = rng.normal(size=2)
    core = model.core(q)
    fd = fd_gradient(lambda x: float(model.core(x).V[0]), q)
    assert rel_err(core.gV[0], fd) < 1e-6


def _core_functional(model, Q, weights, order=1):
    c = model.core(Q, order=order)
    WA, WT, Wg, WV = weights
    return (
        float(np.sum(WA * c.A_mat))
        + float(np.sum(WT * c.T))
        + float(np.sum(Wg * c.gV))
        + float(np.sum(WV * c.V))
    )


def _random_core_weights(rng, B, n):
    return (
        rng.normal(size=(B, n, n)),
        rng.normal(size=(B, n, n, n)),
        rng.normal(size=(B, n)),
        rng.normal(size=B),
    )


@pytest.mark.parametrize("variant", ["lagrangian", "hamiltonian"])
@pytest.mark.parametrize("kinds", [("identity", "identity"), ("sincos", "identity")])
def test_core_param_backward_matches_fd(variant, kinds):
    feature = FeatureTransform(kinds)
    cls = StructuredLagrangianModel if variant == "lagrangian" else StructuredHamiltonianModel
    model = cls.create(2, hidden=(5,), feature=feature, seed=1)
    rng = np.random.default_rng(9)
    Q = rng.normal(size=(3, 2))
    weights = _random_core_weights(rng, 3, 2)

    core = model.core(Q, order=1)
    grad = model.core_param_backward(
        core, bar_A=weights[0], bar_T=weights[1], bar_g=weights[2], bar_V=weights[3]
    )

    p0 = model.params

    def f(p):
        model.set_params(p)
        try:
            return _core_functional(model, Q, weights)
        finally:
            model.set_params(p0)

    fd = fd_gradient(f, p0)
    assert rel_err(grad, fd) < 1e-5


def test_core_input_vjp_matches_fd():
    feature = FeatureTransform(("sincos", "identity"))
    model = _small_lagrangian(feature=feature, seed=2)
    rng = np.random.default_rng(10)
    Q = rng.normal(size=(3, 2))
    weights = _random_core_weights(rng, 3, 2)

    core = model.core(Q, order=2)
    got = model.core_input_vjp(
        core, bar_A=weights[0], bar_T=weights[1], bar_g=weights[2], bar_V=weights[3]
    )

    fd = np.zeros_like(Q)
    h = 1e-6
    for b in range(3):
        for k in range(2):
            qp, qm = Q.copy(), Q.copy()
            qp[b, k] += h
            qm[b, k] -= h
            fd[b, k] = (
                _core_functional(model, qp, weights) - _core_functional(model, qm, weights)
            ) / (2 * h)
    assert rel_err(got, fd) < 1e-5


def test_input_vjp_through_mass_gradient_requires_order_two():
    model = _small_lagrangian()
    core = model.core(np.zeros(2), order=1)
    with pytest.raises(ShapeError):
        model.core_input_vjp(core, bar_T=np.ones((1, 2, 2, 2)))


# ---------------------------------------------------------------------------
# invariants


def test_potential_shift_leaves_forces_unchanged():
    model = _small_lagrangian(seed=6)
    q = np.array([0.4, -0.9])
    qd = np.array([1.0, -0.5])
    qdd = np.array([0.2, 0.3])
    tau0 = model.inverse(q, qd, qdd)
    V0 = model.potential(q)[0]

    # shift the potential network's output bias; forces only see the gradient
    shifted = model.params
    shifted[-1] += 7.5
    model.set_params(shifted)
    assert abs(model.potential(q)[0] - (V0 + 7.5)) < 1e-12
    assert rel_err(model.inverse(q, qd, qdd), tau0) < 1e-12


def test_sincos_model_is_periodic():
    feature = FeatureTransform.sincos(2)
    model = _small_lagrangian(feature=feature, seed=12)
    q = np.array([0.7, -2.1])
    qd = np.array([0.3, 0.8])
    qdd = np.array([-0.2, 0.5])
    shift = q + 2 * np.pi * np.array([3, -2])
    assert rel_err(model.inverse(shift, qd, qdd), model.inverse(q, qd, qdd)) < 1e-9
    assert abs(model.energy(shift, qd) - model.energy(q, qd)) < 1e-9


def test_structured_energy_matches_legendre_transform():
    model = _small_lagrangian(seed=13)
    rng = np.random.default_rng(14)
    for _ in range(5):
        q, qd = rng.normal(size=2), rng.normal(size=2)
        p = model.momentum(q, qd)
        legendre = float(p @ qd - model.lagrangian(q, qd))
        assert abs(model.energy(q, qd) - legendre) < 1e-12


def test_hamiltonian_momentum_inverts_velocity_map():
    model = StructuredHamiltonianModel.create(2, hidden=(6,), seed=4)
    q = np.array([0.2, 1.1])
    qd = np.array([-0.4, 0.9])
    p = model.momentum(q, qd)
    assert rel_err(model.velocity(q, p), qd) < 1e-12


# ---------------------------------------------------------------------------
# black-box variants


def test_blackbox_lagrangian_terms_match_fd():
    model = BlackBoxLagrangianModel.create(2, hidden=(6,), seed=5)
    rng = np.random.default_rng(15)
    q, qd = rng.normal(size=2), rng.normal(size=2)
    t = model.terms(q, qd, order=2)

    def L_of(x):
        return model.lagrangian(x[:2], x[2:])

    x = np.concatenate([q, qd])
    g = fd_gradient(L_of, x)
    assert rel_err(t.grad_q[0], g[:2]) < 1e-6
    assert rel_err(t.grad_v[0], g[2:]) < 1e-6

    # difference the analytic velocity gradient for the Hessian blocks
    def grad_v_of(x):
        return model.terms(x[:2], x[2:], order=1).grad_v[0]

    Hfd = fd_jacobian(grad_v_of, x)
    assert rel_err(t.H_vv[0], Hfd[:, 2:]) < 1e-6
    assert rel_err(t.H_vq[0], Hfd[:, :2]) < 1e-6


def test_blackbox_param_backward_matches_fd():
    model = BlackBoxLagrangianModel.create(
        2, hidden=(5,), feature=FeatureTransform(("sincos", "identity")), seed=6
    )
    rng = np.random.default_rng(16)
    Q = rng.normal(size=(2, 2))
    W = rng.normal(size=(2, 2))
    wv = rng.normal(size=2)
    wq = rng.normal(size=(2, 2))
    wvel = rng.normal(size=(2, 2))
    WVV = rng.normal(size=(2, 2, 2))
    WVQ = rng.normal(size=(2, 2, 2))

    t = model.terms(Q, W, order=2)
    grad = model.terms_param_backward(
        t, bar_value=wv, bar_grad_q=wq, bar_grad_v=wvel, bar_H_vv=WVV, bar_H_vq=WVQ
    )

    p0 = model.params.copy()

    def f(p):
        model.set_params(p)
        try:
            tt = model.terms(Q, W, order=2)
            return (
                float(wv @ tt.value)
                + float(np.sum(wq * tt.grad_q))
                + float(np.sum(wvel * tt.grad_v))
                + float(np.sum(WVV * tt.H_vv))
                + float(np.sum(WVQ * tt.H_vq))
            )
        finally:
            model.set_params(p0)

    fd = fd_gradient(f, p0)
    assert rel_err(grad, fd) < 1e-5


def test_blackbox_legendre_energy_and_momentum():
    model = BlackBoxLagrangianModel.create(2, hidden=(6,), seed=7)
    q = np.array([0.1, -0.6])
    qd = np.array([0.9, 0.4])
    p = model.momentum(q, qd)
    assert abs(model.energy(q, qd) - (p @ qd - model.lagrangian(q, qd))) < 1e-12


def test_blackbox_hamiltonian_round_trip():
    model = BlackBoxHamiltonianModel.create(2, hidden=(6,), seed=8)
    q = np.array([0.3, 0.2])
    p = np.array([-0.7, 1.2])
    pd = np.array([0.4, -0.1])
    tau = model.inverse(q, p, pd)
    _, pd_back = model.forward(q, p, tau)
    assert rel_err(pd_back, pd) < 1e-12


# ---------------------------------------------------------------------------
# analytic adapters (toy closed-form plant, self-contained)


class _ToyPlant:
    """Hand-written 2-dof system with configuration-dependent inertia."""

    n = 2

    def mass_matrix(self, Q):
        c2 = np.cos(Q[:, 1])
        H = np.empty((Q.shape[0], 2, 2))
        H[:, 0, 0] = 3.0 + 2.0 * c2
        H[:, 0, 1] = H[:, 1, 0] = 1.0 + c2
        H[:, 1, 1] = 1.5
        return H

    def mass_matrix_grad(self, Q):
        s2 = np.sin(Q[:, 1])
        T = np.zeros((Q.shape[0], 2, 2, 2))
        T[:, 1, 0, 0] = -2.0 * s2
        T[:, 1, 0, 1] = T[:, 1, 1, 0] = -s2
        return T

    def potential(self, Q):
        return 2.0 * np.cos(Q[:, 0]) + 0.5 * np.cos(Q[:, 0] + Q[:, 1])

    def gravity(self, Q):
        g = np.empty_like(Q)
        s1 = np.sin(Q[:, 0])
        s12 = np.sin(Q[:, 0] + Q[:, 1])
        g[:, 0] = -2.0 * s1 - 0.5 * s12
        g[:, 1] = -0.5 * s12
        return g


def test_analytic_hamiltonian_core_inverts_mass_matrix():
    plant = _ToyPlant()
    ham = AnalyticHamiltonianModel(plant)
    rng = np.random.default_rng(17)
    Q = rng.normal(size=(4, 2))
    core = ham.core(Q)
    H = plant.mass_matrix(Q)
    prod = np.einsum("bij,bjk->bik", core.A_mat, H)
    assert rel_err(prod, np.broadcast_to(np.eye(2), prod.shape)) < 1e-12

    # dB/dq against finite differences of the inverse
    for k in range(2):
        h = 1e-6
        Qp, Qm = Q.copy(), Q.copy()
        Qp[:, k] += h
        Qm[:, k] -= h
        fd = (
            np.linalg.inv(plant.mass_matrix(Qp)) - np.linalg.inv(plant.mass_matrix(Qm))
        ) / (2 * h)
        assert rel_err(core.T[:, k], fd) < 1e-6


def test_lagrangian_and_hamiltonian_adapters_agree_on_torque():
    plant = _ToyPlant()
    lag = AnalyticLagrangianModel(plant)
    ham = AnalyticHamiltonianModel(plant)
    rng = np.random.default_rng(18)
    for _ in range(10):
        q, qd, qdd = rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)
        tau_l = lag.inverse(q, qd, qdd)
        H = plant.mass_matrix(q[None, :])[0]
        T = plant.mass_matrix_grad(q[None, :])[0]
        p = H @ qd
        pd = H @ qdd + np.einsum("kij,k,j->i", T, qd, qd)
        tau_h = ham.inverse(q, p, pd)
        assert rel_err(tau_h, tau_l) < 1e-9


def test_adapter_energies_agree():
    plant = _ToyPlant()
    lag = AnalyticLagrangianModel(plant)
    ham = AnalyticHamiltonianModel(plant)
    rng = np.random.default_rng(19)
    q, qd = rng.normal(size=2), rng.normal(size=2)
    p = ham.momentum(q, qd)
    assert abs(lag.energy(q, qd) - ham.energy(q, p)) < 1e-12


# ---------------------------------------------------------------------------
# baseline shapes


def test_baseline_maps_have_model_shapes():
    model = FeedForwardBaseline.create(2, hidden=(8,), seed=9)
    q, qd, tau = np.zeros(2), np.ones(2), np.full(2, 0.5)
    acc = model.forward(q, qd, tau)
    assert acc.shape == (2,)
    batch = model.forward(np.zeros((5, 2)), np.ones((5, 2)), np.zeros((5, 2)))
    assert batch.shape == (5, 2)
    assert rel_err(batch[0], model.forward(np.zeros(2), np.ones(2), np.zeros(2))) < 1e-14
    assert model.inverse(q, qd, acc).shape == (2,)


# ---------------------------------------------------------------------------
# file IO


@pytest.mark.parametrize(
    "build",
    [
        lambda: StructuredLagrangianModel.create(
            2, hidden=(6, 5), feature=FeatureTransform.sincos(2), seed=21
        ),
        lambda: StructuredHamiltonianModel.create(2, hidden=(6,), seed=22),
        lambda: BlackBoxLagrangianModel.create(2, hidden=(7,), seed=23),
        lambda: BlackBoxHamiltonianModel.create(2, hidden=(5,), seed=24),
        lambda: FeedForwardBaseline.create(2, hidden=(6,), seed=25),
    ],
    ids=["structured-lag", "structured-ham", "blackbox-lag", "blackbox-ham", "ffnn"],
)
def test_model_io_round_trip_is_bit_exact(build, tmp_path):
    model = build()
    path = tmp_path / "model.npz"
    save_model(path, model)
    back = load_model(path)
    assert type(back) is type(model)
    assert back.n == model.n
    assert back.feature == model.feature
    if hasattr(model, "params"):
        assert np.array_equal(back.params, model.params)
    q = np.array([0.37, -0.81])
    w = np.array([0.55, 0.12])
    u = np.array([0.2, -0.4])
    if model.kind == "ffnn":
        assert np.array_equal(back.forward(q, w, u), model.forward(q, w, u))
    elif model.coordinates == "velocity":
        assert np.array_equal(back.inverse(q, w, u), model.inverse(q, w, u))
    else:
        assert np.array_equal(back.inverse(q, w, u), model.inverse(q, w, u))


def test_model_io_rejects_unknown_format(tmp_path):
    path = tmp_path / "bad.npz"
    np.savez(path, format=np.array("mechlearn-model-v9"), kind=np.array("x"))
    with pytest.raises(UnknownFormatVersion):
        load_model(path)
