"""Command-line entry point wiring the library into reproducible runs.

Every command reads one experiment config, writes its outputs under the
configured output directory, and records a manifest naming each file
together with the config hash, root seed, and build version.  Module
errors land in a structured error record and a nonzero exit code, so
batch drivers can tell a diverged rollout from a typo.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .config import (
    VARIANTS,
    build_friction,
    build_plant,
    config_hash,
    load_config,
    save_config,
)
from .control import (
    DesiredTrajectory,
    Gains,
    balance_gains,
    closed_loop_simulate,
    inverse_dynamics_controller,
    save_episode,
    swingup_controller,
    upright_rest_energy,
)
from .dynamics import model_field
from .errors import DivergedRollout, MechlearnError, NearSingularHessian
from .evaluation import (
    CosineTrajectory,
    Dataset,
    generate_trajectory,
    generate_uniform,
    nmse,
    train_test_split,
    vpt,
    with_position_noise,
)
from .integrators import rollout
from .plants import plant_field
from .models import (
    AnalyticLagrangianModel,
    BlackBoxHamiltonianModel,
    BlackBoxLagrangianModel,
    FeedForwardBaseline,
    StructuredHamiltonianModel,
    StructuredLagrangianModel,
    load_model,
    save_model,
)
from .sysid import IdentifiedPlantModel, build_regressor, fit_parameters, true_parameters
from .training import save_history, train


def _path(config, name):
    return os.path.join(config.out, name)


def _write_record(path, section, entries):
    """One structured text record: a [section] of key = value lines."""
    with open(path, "w") as fh:
        fh.write(f"[{section}]\n")
        for key, value in entries:
            if isinstance(value, float):
                value = repr(value)
            fh.write(f"{key} = {value}\n")


def _write_metrics(config, name, entries):
    _write_record(_path(config, name), "metrics", entries)


def _write_manifest(config, command, outputs):
    """Record the run: config copy + hash, seed, build, every output file."""
    save_config(config, _path(config, "config.ini"))
    path = _path(config, f"manifest-{command}.txt")
    with open(path, "w") as fh:
        fh.write("[manifest]\n")
        fh.write(f"command = {command}\n")
        fh.write(f"config_hash = {config_hash(config)}\n")
        fh.write(f"seed = {config.seed}\n")
        fh.write(f"build = {__version__}\n")
        fh.write("\n[outputs]\n")
        fh.write("config = config.ini\n")
        for key, value in outputs:
            fh.write(f"{key} = {value}\n")


def _write_error(config, command, err):
    entries = [
        ("command", command),
        ("kind", type(err).__name__),
        ("message", str(err)),
    ]
    for attr in ("batch_index", "context", "condition", "step", "nullity"):
        value = getattr(err, attr, None)
        if value is not None:
            entries.append((attr, value))
    _write_record(_path(config, "error.txt"), "error", entries)


def _split(config, dataset):
    """The train/test split every command shares; fraction 1 keeps all
    samples on both sides (no held-out data)."""
    fraction = config.data.train_fraction
    if fraction >= 1.0:
        return dataset, dataset
    return train_test_split(dataset, fraction, config.seed_for("split"))


def _build_trainable(config, plant):
    hidden = tuple(config.train.hidden)
    seed = config.seed_for("train")
    n = plant.n
    if config.variant == "delan-structured":
        return StructuredLagrangianModel.create(n, hidden=hidden, seed=seed)
    if config.variant == "hnn-structured":
        return StructuredHamiltonianModel.create(n, hidden=hidden, seed=seed)
    if config.variant == "delan-blackbox":
        return BlackBoxLagrangianModel.create(n, hidden=hidden, seed=seed)
    if config.variant == "hnn-blackbox":
        return BlackBoxHamiltonianModel.create(n, hidden=hidden, seed=seed)
    if config.variant == "ffnn":
        return FeedForwardBaseline.create(n, hidden=hidden, seed=seed)
    raise ValueError(f"variant {config.variant!r} is not trainable")


def _load_model_for(config, plant):
    """The model a non-training command should evaluate or control with."""
    if config.variant == "analytic":
        return AnalyticLagrangianModel(plant)
    if config.variant == "sysid":
        table = np.loadtxt(_path(config, "sysid_theta.csv"),
                           delimiter=",", skiprows=1, ndmin=2)
        return IdentifiedPlantModel(config.plant, table[:, 1],
                                    gravity=plant.params.gravity)
    return load_model(_path(config, "model.npz"))


def cmd_gen_data(config):
    """Generate the configured dataset and write dataset.csv."""
    plant = build_plant(config)
    friction = build_friction(config)
    data = config.data
    seed = config.seed_for("data")
    if data.generator == "uniform":
        ds = generate_uniform(plant, data.samples, seed, friction=friction)
    else:
        ds = generate_trajectory(plant, data.duration, data.dt, seed,
                                 friction=friction)
        if data.noise > 0:
            ds = with_position_noise(plant, ds, data.noise,
                                     config.seed_for("noise"),
                                     cutoff_hz=data.cutoff_hz,
                                     friction=friction)
    ds.save(_path(config, "dataset.csv"))
    return [("dataset", "dataset.csv")]


def cmd_train(config):
    """Train the configured variant on dataset.csv; write model + history."""
    plant = build_plant(config)
    dataset = Dataset.load(_path(config, "dataset.csv"))
    train_set, test_set = _split(config, dataset)
    model = _build_trainable(config, plant)
    tc = replace(config.train, seed=config.seed_for("train"))
    model, history = train(model, train_set, tc, test_dataset=test_set)
    save_model(_path(config, "model.npz"), model)
    save_history(history, _path(config, "history.csv"), wall_time=False)
    return [("model", "model.npz"), ("history", "history.csv")]


def cmd_eval(config):
    """Held-out inverse/forward fit and force-decomposition errors."""
    plant = build_plant(config)
    dataset = Dataset.load(_path(config, "dataset.csv"))
    _, test = _split(config, dataset)
    model = _load_model_for(config, plant)

    entries = [("variant", config.variant), ("samples", len(test))]
    if getattr(model, "coordinates", "velocity") == "momentum":
        tau_hat = model.inverse(test.q, test.p, test.pd)
        entries.append(("inverse_nmse", nmse(tau_hat, test.tau)))
        qd_hat, pd_hat = model.forward(test.q, test.p, test.tau)
        entries.append(("forward_nmse", nmse(pd_hat, test.pd)))
        entries.append(("velocity_nmse", nmse(qd_hat, test.qd)))
    else:
        tau_hat = model.inverse(test.q, test.qd, test.qdd)
        entries.append(("inverse_nmse", nmse(tau_hat, test.tau)))
        acc_hat = model.forward(test.q, test.qd, test.tau)
        entries.append(("forward_nmse", nmse(acc_hat, test.qdd)))
    if hasattr(model, "decompose"):
        dec = model.decompose(test.q, test.qd, test.qdd)
        ref = AnalyticLagrangianModel(plant).decompose(test.q, test.qd, test.qdd)
        entries.append(("inertial_nmse", nmse(dec.inertial, ref.inertial)))
        entries.append(("coriolis_nmse", nmse(dec.coriolis, ref.coriolis)))
        entries.append(("gravity_nmse", nmse(dec.gravitational, ref.gravitational)))
    _write_metrics(config, "eval_metrics.txt", entries)
    return [("metrics", "eval_metrics.txt")]


def _episode_seed(config, index):
    return int(np.random.SeedSequence(
        (config.seed_for("rollout"), index)).generate_state(1)[0])


def cmd_rollout(config):
    """Free-run prediction under recorded torques; VPT per episode.

    The reference is the plant itself integrated under the same held
    torque sequence as the model, so both sides see identical inputs and
    stepping.  A rollout that diverges or trips the black-box Hessian
    guard scores zero seconds instead of aborting the command."""
    plant = build_plant(config)
    model = _load_model_for(config, plant)
    spec = config.rollout
    momentum = getattr(model, "coordinates", "velocity") == "momentum"
    field = model_field(model)
    true_field = plant_field(plant)
    n = plant.n

    outputs = []
    entries = [("variant", config.variant), ("count", spec.count),
               ("threshold", spec.threshold)]
    vpts = []
    for k in range(spec.count):
        source = generate_trajectory(plant, spec.duration, config.data.dt,
                                     _episode_seed(config, k))
        controls = source.tau[:-1]
        steps = len(source) - 1
        x0_true = np.concatenate([source.q[0], source.qd[0]])
        truth = rollout(true_field, x0_true, source.dt, steps,
                        controls=controls)
        x0 = np.concatenate(
            [source.q[0], source.p[0] if momentum else source.qd[0]])
        status = "ok"
        try:
            traj = rollout(field, x0, source.dt, steps, controls=controls)
            seconds = vpt(traj.X, truth.X, source.dt, spec.threshold)
        except (DivergedRollout, NearSingularHessian) as err:
            status = type(err).__name__
            seconds = 0.0
            traj = None
        vpts.append(seconds)
        entries.append((f"vpt_{k}", seconds))
        entries.append((f"status_{k}", status))
        true_name = f"rollout_true_{k}.csv"
        _save_states(_path(config, true_name), truth.t, truth.X, n)
        outputs.append((f"true_{k}", true_name))
        if traj is not None:
            pred_name = f"rollout_pred_{k}.csv"
            _save_states(_path(config, pred_name), traj.t, traj.X, n,
                         momentum=momentum)
            outputs.append((f"pred_{k}", pred_name))
    entries.append(("vpt_mean", float(np.mean(vpts))))
    _write_metrics(config, "rollout_metrics.txt", entries)
    return [("metrics", "rollout_metrics.txt")] + outputs


def _save_states(path, t, X, n, momentum=False):
    rate = "p" if momentum else "dq"
    cols = ["t"] + [f"q{i}" for i in range(n)] + [f"{rate}{i}" for i in range(n)]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for ti, row in zip(t, X):
            fh.write(",".join(f"{v:.17g}" for v in (ti, *row)) + "\n")


def cmd_control(config):
    """One closed-loop episode: cosine tracking or energy swing-up."""
    plant = build_plant(config)
    friction = build_friction(config)
    model = _load_model_for(config, plant)
    spec = config.control
    seed = config.seed_for("control")

    if spec.mode == "tracking":
        shape = CosineTrajectory(
            amplitude=np.asarray(spec.amplitude),
            frequency=np.asarray(spec.frequency),
            chirp=np.asarray(spec.chirp),
            phase=np.asarray(spec.phase),
        )
        desired = DesiredTrajectory.from_cosine(shape, spec.horizon, spec.dt)
        if spec.velocity_scale != 1.0:
            desired = desired.velocity_scaled(spec.velocity_scale)
        gains = Gains(kp=np.asarray(spec.kp), kd=np.asarray(spec.kd))
        x0 = np.concatenate([desired.q[0], desired.qd[0]])
        entries = [("variant", config.variant), ("mode", "tracking"),
                   ("velocity_scale", spec.velocity_scale)]
        outputs = []
        for name, m in (("model", model), ("pd", None)):
            ctrl = inverse_dynamics_controller(m, gains, desired)
            traj, metrics = closed_loop_simulate(
                plant, ctrl, spec.dt, spec.horizon, x0,
                sensor_noise=spec.sensor_noise, seed=seed, desired=desired,
                friction=friction, saturation=spec.saturation)
            entries.append((f"tracking_mse_{name}", metrics.tracking_mse))
            episode = f"episode_{name}.csv"
            save_episode(traj, float("nan"), _path(config, episode))
            outputs.append((f"episode_{name}", episode))
        _write_metrics(config, "control_metrics.txt", entries)
        return [("metrics", "control_metrics.txt")] + outputs

    n = plant.n
    gains = Gains(kp=np.ones(n), kd=np.ones(n),
                  k_energy=spec.k_energy, k_position=spec.k_position)
    balance = balance_gains(
        plant,
        weights=None if spec.balance_weights is None
        else list(spec.balance_weights),
        effort=spec.balance_effort, friction=friction)
    e_des = upright_rest_energy(model, plant)
    ctrl = swingup_controller(model, gains, e_des, plant, balance,
                              catch_angle=spec.catch_angle,
                              catch_rate=spec.catch_rate)
    x0 = np.concatenate([plant.hanging(), np.zeros(n)])
    x0[plant.pendulum_index] -= 0.05
    traj, metrics = closed_loop_simulate(
        plant, ctrl, spec.dt, spec.horizon, x0,
        sensor_noise=spec.sensor_noise, seed=seed, e_des=e_des,
        friction=friction, saturation=spec.saturation)
    save_episode(traj, e_des, _path(config, "episode_swingup.csv"))
    entries = [
        ("variant", config.variant), ("mode", "swingup"),
        ("success", metrics.success),
        ("energy_target", e_des),
        ("final_energy_error", float(metrics.energy_error[-1])),
    ]
    _write_metrics(config, "control_metrics.txt", entries)
    return [("metrics", "control_metrics.txt"),
            ("episode", "episode_swingup.csv")]


def cmd_sysid(config):
    """Linear identification toward nominal parameters on dataset.csv."""
    plant = build_plant(config)
    dataset = Dataset.load(_path(config, "dataset.csv"))
    train_set, _ = _split(config, dataset)
    A = build_regressor(config.plant, train_set.q, train_set.qd,
                        train_set.qdd, gravity=plant.params.gravity)
    theta0 = true_parameters(type(plant)())  # nominal prior: default params
    fit = fit_parameters(A, train_set.tau, theta0, ridge=config.sysid_ridge)
    with open(_path(config, "sysid_theta.csv"), "w") as fh:
        fh.write("index,theta,theta0,nonphysical\n")
        for i, (th, th0, bad) in enumerate(
                zip(fit.theta, fit.theta0, fit.nonphysical)):
            fh.write(f"{i},{th:.17g},{th0:.17g},{int(bad)}\n")
    _write_metrics(config, "sysid_metrics.txt", [
        ("ridge", fit.ridge),
        ("condition", fit.condition),
        ("residual_rms", fit.residual_rms),
        ("objective", fit.objective),
        ("distance_to_nominal", float(np.linalg.norm(fit.theta - fit.theta0))),
        ("physically_plausible", fit.physically_plausible),
    ])
    return [("theta", "sysid_theta.csv"), ("metrics", "sysid_metrics.txt")]


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "rollout": cmd_rollout,
    "control": cmd_control,
    "sysid": cmd_sysid,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mechlearn",
        description="reproducible experiments on learned rigid-body dynamics",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen-data": "generate the configured dataset",
        "train": "train the configured model variant",
        "eval": "score inverse/forward fit on held-out data",
        "rollout": "free-run prediction and valid prediction time",
        "control": "closed-loop tracking or swing-up episode",
        "sysid": "identify base parameters by linear regression",
    }
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", required=True, help="experiment config file")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="root seed (overrides config)")
        sp.add_argument("--variant", choices=VARIANTS,
                        help="model variant (overrides config)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.variant is not None:
            config = replace(config, variant=args.variant)
        out = args.out or os.environ.get("MECHLEARN_OUT") or config.out
        config = replace(config, out=out)
    except (OSError, ValueError) as err:
        print(f"mechlearn: {err}", file=sys.stderr)
        return 2
    os.makedirs(config.out, exist_ok=True)
    try:
        outputs = COMMANDS[args.command](config)
    except MechlearnError as err:
        _write_error(config, args.command, err)
        print(f"mechlearn {args.command}: {type(err).__name__}: {err}",
              file=sys.stderr)
        return 1
    except (OSError, ValueError) as err:
        print(f"mechlearn {args.command}: {err}", file=sys.stderr)
        return 2
    _write_manifest(config, args.command, outputs)
    return 0


if __name__ == "__main__":
    sys.exit(main())
