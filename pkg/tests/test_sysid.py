"""System-identification tests.

The regressor identity against the analytic inverse dynamics is the gate:
every fitting experiment rests on A(q, qd, qdd) theta_true == tau holding
to near machine precision.
"""

import numpy as np
import pytest

from mechlearn.errors import RankDeficient, ShapeError
from mechlearn.plants import PlantParams, analytic_energy, analytic_forward, analytic_inverse, make_plant
from mechlearn.sysid import (
    GRAVITY_COLUMNS,
    PARAM_COUNTS,
    IdentifiedPlantModel,
    build_regressor,
    fit_parameters,
    true_parameters,
)

from numcheck import rel_err


def _random_states(rng, B):
    return (
        rng.uniform(-np.pi, np.pi, size=(B, 2)),
        rng.uniform(-4, 4, size=(B, 2)),
        rng.uniform(-8, 8, size=(B, 2)),
    )


@pytest.mark.parametrize("kind", ["two-link", "cartpole", "furuta"])
def test_regressor_identity_against_analytic_inverse(kind):
    plant = make_plant(kind)
    theta = true_parameters(plant)
    rng = np.random.default_rng(0)
    Q, Qd, Qdd = _random_states(rng, 1000)
    A = build_regressor(kind, Q, Qd, Qdd)
    tau_lin = A @ theta
    tau_ref = analytic_inverse(plant, Q, Qd, Qdd)
    assert np.max(np.abs(tau_lin - tau_ref)) < 1e-10


@pytest.mark.parametrize("kind", ["two-link", "cartpole", "furuta"])
def test_regressor_identity_with_nondefault_parameters(kind):
    overrides = {
        "two-link": PlantParams(kind="two-link", mass=(1.7, 0.4), length=(0.8, 1.2),
                                com=(0.5, 0.9), inertia=(0.03, 0.01)),
        "cartpole": PlantParams(kind="cartpole", mass=(2.0, 0.25), length=(0.0, 0.8),
                                com=(0.0, 0.4), inertia=(0.0, 0.02)),
        "furuta": PlantParams(kind="furuta", mass=(0.05, 0.2), length=(0.12, 0.1),
                              com=(0.07, 0.09), inertia=(1e-4, 2e-4)),
    }
    plant = make_plant(kind, overrides[kind])
    theta = true_parameters(plant)
    rng = np.random.default_rng(1)
    Q, Qd, Qdd = _random_states(rng, 200)
    A = build_regressor(kind, Q, Qd, Qdd)
    assert np.max(np.abs(A @ theta - analytic_inverse(plant, Q, Qd, Qdd))) < 1e-10


@pytest.mark.parametrize("kind", ["two-link", "cartpole", "furuta"])
def test_only_gravity_columns_survive_at_rest(kind):
    rng = np.random.default_rng(2)
    Q = rng.uniform(-np.pi, np.pi, size=(20, 2))
    zero = np.zeros_like(Q)
    A = build_regressor(kind, Q, zero, zero)
    grav = set(GRAVITY_COLUMNS[kind])
    for col in range(PARAM_COUNTS[kind]):
        if col in grav:
            assert np.any(A[:, :, col] != 0)
        else:
            assert np.all(A[:, :, col] == 0)


def test_doubling_masses_doubles_torque():
    base = make_plant("two-link")
    heavy = make_plant(
        "two-link",
        PlantParams(kind="two-link", mass=(2.0, 2.0), length=(1.0, 1.0),
                    com=(1.0, 1.0), inertia=(0.0, 0.0)),
    )
    assert rel_err(true_parameters(heavy), 2 * true_parameters(base)) < 1e-15
    rng = np.random.default_rng(3)
    Q, Qd, Qdd = _random_states(rng, 50)
    assert rel_err(
        analytic_inverse(heavy, Q, Qd, Qdd), 2 * analytic_inverse(base, Q, Qd, Qdd)
    ) < 1e-12


@pytest.mark.parametrize("kind", ["two-link", "cartpole", "furuta"])
def test_exact_recovery_from_noiseless_data(kind):
    plant = make_plant(kind)
    theta_true = true_parameters(plant)
    rng = np.random.default_rng(4)
    Q, Qd, Qdd = _random_states(rng, 300)
    A = build_regressor(kind, Q, Qd, Qdd)
    tau = analytic_inverse(plant, Q, Qd, Qdd)
    fit = fit_parameters(A, tau, np.zeros_like(theta_true), ridge=0.0)
    assert np.max(np.abs(tau.reshape(-1) - (A @ fit.theta).reshape(-1))) < 1e-8
    assert rel_err(fit.theta, theta_true) < 1e-8
    assert fit.physically_plausible
    assert np.isfinite(fit.condition) and fit.condition >= 1.0


def test_huge_ridge_pins_parameters_to_nominal():
    plant = make_plant("two-link")
    rng = np.random.default_rng(5)
    Q, Qd, Qdd = _random_states(rng, 100)
    A = build_regressor("two-link", Q, Qd, Qdd)
    tau = analytic_inverse(plant, Q, Qd, Qdd)
    theta0 = np.array([2.0, 1.0, 0.5, 1.5, 0.8])
    fit = fit_parameters(A, tau, theta0, ridge=1e8)
    assert np.max(np.abs(fit.theta - theta0)) < 1e-6


def test_true_nominal_is_a_fixed_point_for_any_ridge():
    plant = make_plant("furuta")
    theta_true = true_parameters(plant)
    rng = np.random.default_rng(6)
    Q, Qd, Qdd = _random_states(rng, 150)
    A = build_regressor("furuta", Q, Qd, Qdd)
    tau = analytic_inverse(plant, Q, Qd, Qdd)
    for ridge in (0.0, 1e-3, 1.0, 1e4):
        fit = fit_parameters(A, tau, theta_true, ridge=ridge)
        assert np.max(np.abs(fit.theta - theta_true)) < 1e-10


def test_rank_deficiency_reports_nullity():
    plant = make_plant("two-link")
    q = np.array([0.4, -0.8])
    qd = np.array([1.0, 0.5])
    qdd = np.array([0.3, -0.2])
    # one state repeated: rank cannot exceed the two rows of a single block
    Q = np.tile(q, (10, 1))
    Qd = np.tile(qd, (10, 1))
    Qdd = np.tile(qdd, (10, 1))
    A = build_regressor("two-link", Q, Qd, Qdd)
    tau = analytic_inverse(plant, Q, Qd, Qdd)
    with pytest.raises(RankDeficient) as info:
        fit_parameters(A, tau, np.zeros(5), ridge=0.0)
    assert info.value.nullity >= 3


def test_too_few_rows_is_a_shape_error():
    A = np.zeros((1, 2, 5))
    with pytest.raises(ShapeError):
        fit_parameters(A, np.zeros((1, 2)), np.zeros(5))


def test_fit_objective_never_exceeds_nominal_objective():
    plant = make_plant("two-link")
    rng = np.random.default_rng(7)
    Q, Qd, Qdd = _random_states(rng, 200)
    A = build_regressor("two-link", Q, Qd, Qdd)
    tau = analytic_inverse(plant, Q, Qd, Qdd)
    tau = tau + rng.normal(scale=0.5, size=tau.shape)  # make it inconsistent
    theta0 = true_parameters(plant) * 1.3
    r0 = tau.reshape(-1) - (A @ theta0).reshape(-1)
    nominal_objective = float(r0 @ r0)
    for ridge in (0.0, 0.1, 10.0, 1e3):
        fit = fit_parameters(A, tau, theta0, ridge=ridge)
        assert fit.objective <= nominal_objective + 1e-9


def test_nonphysical_parameters_are_flagged_not_clamped():
    theta_bad = true_parameters(make_plant("cartpole")).copy()
    theta_bad[1] = -theta_bad[1]
    rng = np.random.default_rng(8)
    Q, Qd, Qdd = _random_states(rng, 100)
    A = build_regressor("cartpole", Q, Qd, Qdd)
    tau = A @ theta_bad
    fit = fit_parameters(A, tau, np.zeros(3), ridge=0.0)
    assert rel_err(fit.theta, theta_bad) < 1e-8
    assert fit.nonphysical[1] and not fit.physically_plausible


# ---------------------------------------------------------------------------
# identified-parameter model


@pytest.mark.parametrize("kind", ["two-link", "cartpole", "furuta"])
def test_identified_model_with_true_theta_matches_plant(kind):
    plant = make_plant(kind)
    model = IdentifiedPlantModel(kind, true_parameters(plant))
    rng = np.random.default_rng(9)
    for _ in range(10):
        q = rng.uniform(-np.pi, np.pi, size=2)
        qd = rng.uniform(-3, 3, size=2)
        qdd = rng.uniform(-5, 5, size=2)
        tau = analytic_inverse(plant, q, qd, qdd)
        assert rel_err(model.inverse(q, qd, qdd), tau) < 1e-10
        assert rel_err(model.forward(q, qd, tau), qdd) < 1e-9
        assert abs(model.energy(q, qd) - analytic_energy(plant, q, qd)) < 1e-10


def test_identified_model_round_trip_with_perturbed_theta():
    theta = true_parameters(make_plant("two-link")) * np.array(
        [1.1, 0.9, 1.05, 0.95, 1.2]
    )
    model = IdentifiedPlantModel("two-link", theta)
    rng = np.random.default_rng(10)
    q, qd, qdd = rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)
    tau = model.inverse(q, qd, qdd)
    assert rel_err(model.forward(q, qd, tau), qdd) < 1e-9


def test_identified_model_validates_theta_shape():
    with pytest.raises(ShapeError):
        IdentifiedPlantModel("cartpole", np.zeros(5))
    with pytest.raises(ValueError):
        IdentifiedPlantModel("acrobot", np.zeros(3))
