"""Experiment configuration files and seed bookkeeping.

Configs are flat INI text: one section per concern, scalar or
comma-separated values, every key known to the schema below.  The same
canonical serialization backs equality, on-disk round trips, and the
config hash recorded in run manifests, so a stored file pins an
experiment completely (together with the build version).
"""

import configparser
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .plants import FRICTION_KINDS, PLANT_KINDS, FrictionModel, make_plant
from .training import TrainConfig

VARIANTS = (
    "delan-structured",
    "delan-blackbox",
    "hnn-structured",
    "hnn-blackbox",
    "ffnn",
    "sysid",
    "analytic",
)

GENERATORS = ("uniform", "trajectory")
CONTROL_MODES = ("tracking", "swingup")

# fixed counters for deriving per-purpose seed streams from the root seed
SEED_PURPOSES = {
    "data": 0,
    "split": 1,
    "train": 2,
    "noise": 3,
    "rollout": 4,
    "control": 5,
    "sysid": 6,
}


def derive_seed(root, purpose):
    """Independent integer seed for one purpose under a root seed.

    Streams are split by a fixed per-purpose counter, so adding a new
    purpose never perturbs the draws of existing ones.
    """
    if purpose not in SEED_PURPOSES:
        raise ValueError(f"unknown seed purpose {purpose!r}")
    ss = np.random.SeedSequence((int(root), SEED_PURPOSES[purpose]))
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class DataSpec:
    """What cmd_gen_data produces and the training split drawn from it."""

    generator: str = "uniform"
    samples: int = 1000
    duration: float = 10.0
    dt: float = 0.01
    noise: float = 0.0
    cutoff_hz: float = None
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.samples < 0:
            raise ValueError("samples must be non-negative")
        if self.duration <= 0 or self.dt <= 0:
            raise ValueError("duration and dt must be positive")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")


@dataclass(frozen=True)
class RolloutSpec:
    duration: float = 2.0
    threshold: float = 1e-2
    count: int = 5

    def __post_init__(self):
        if self.duration <= 0 or self.threshold <= 0 or self.count < 1:
            raise ValueError("rollout spec values must be positive")


@dataclass(frozen=True)
class ControlSpec:
    """Closed-loop episode description for cmd_control.

    `mode` picks tracking (inverse-dynamics PD along a cosine reference)
    or swing-up (energy pumping with an LQR catch).  The reference arrays
    are per-joint; `horizon` is the episode length in seconds.
    """

    mode: str = "tracking"
    kp: tuple = (50.0, 50.0)
    kd: tuple = (10.0, 10.0)
    amplitude: tuple = (0.8, 0.6)
    frequency: tuple = (0.5, 0.7)
    chirp: tuple = (0.05, 0.03)
    phase: tuple = (0.0, 1.0)
    velocity_scale: float = 1.0
    k_energy: float = 8.0
    k_position: float = 0.5
    catch_angle: float = 0.5
    catch_rate: float = 1.6
    balance_weights: tuple = None
    balance_effort: float = 1.0
    saturation: float = None
    sensor_noise: float = 0.0
    dt: float = 0.01
    horizon: float = 4.0

    def __post_init__(self):
        if self.mode not in CONTROL_MODES:
            raise ValueError(f"unknown control mode {self.mode!r}")
        if self.dt <= 0 or self.horizon <= 0:
            raise ValueError("dt and horizon must be positive")
        if self.velocity_scale <= 0:
            raise ValueError("velocity_scale must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment, pinned: plant, model variant, data, training,
    evaluation, and control settings under a single root seed."""

    plant: str = "two-link"
    variant: str = "delan-structured"
    seed: int = 0
    out: str = "runs/latest"
    params_file: str = None
    plant_overrides: tuple = ()  # sorted (key, value-tuple-or-float) pairs
    friction: str = "none"
    friction_constants: tuple = ()  # sorted (name, per-joint tuple) pairs
    data: DataSpec = field(default_factory=DataSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    rollout: RolloutSpec = field(default_factory=RolloutSpec)
    control: ControlSpec = field(default_factory=ControlSpec)
    sysid_ridge: float = 0.0

    def __post_init__(self):
        if self.plant not in PLANT_KINDS:
            raise ValueError(f"unknown plant kind {self.plant!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.friction not in FRICTION_KINDS:
            raise ValueError(f"unknown friction kind {self.friction!r}")
        if self.sysid_ridge < 0:
            raise ValueError("sysid_ridge must be non-negative")

    def seed_for(self, purpose):
        return derive_seed(self.seed, purpose)


def build_plant(config):
    """Instantiate the configured plant with any parameter overrides."""
    plant = make_plant(config.plant)
    overrides = dict(config.plant_overrides)
    if overrides:
        plant = plant.with_params(**overrides)
    return plant


def build_friction(config):
    """The configured friction model, or None for the frictionless case."""
    if config.friction == "none":
        return None
    return FrictionModel(kind=config.friction, **dict(config.friction_constants))


# ------------------------------------------------------------ INI schema
#
# (section, attribute, key, codec); attribute paths with a dot reach into
# the nested spec dataclasses.  Serialization follows this order exactly,
# which makes the dump canonical.

def _fmt_float(v):
    return repr(float(v))


def _parse_floats(text):
    return tuple(float(p) for p in text.split(",")) if text.strip() else ()


_CODECS = {
    "str": (str, lambda v: v),
    "int": (lambda s: int(s), str),
    "float": (lambda s: float(s), _fmt_float),
    "opt_str": (lambda s: s if s.strip() else None,
                lambda v: "" if v is None else v),
    "opt_float": (lambda s: float(s) if s.strip() else None,
                  lambda v: "" if v is None else _fmt_float(v)),
    "floats": (_parse_floats, lambda v: ", ".join(_fmt_float(x) for x in v)),
    "opt_floats": (lambda s: _parse_floats(s) if s.strip() else None,
                   lambda v: "" if v is None else ", ".join(_fmt_float(x) for x in v)),
    "ints": (lambda s: tuple(int(p) for p in s.split(",")) if s.strip() else (),
             lambda v: ", ".join(str(x) for x in v)),
}

_SCHEMA = (
    ("experiment", "plant", "plant", "str"),
    ("experiment", "variant", "variant", "str"),
    ("experiment", "seed", "seed", "int"),
    ("experiment", "out", "out", "str"),
    ("experiment", "params_file", "params_file", "opt_str"),
    ("data", "data.generator", "generator", "str"),
    ("data", "data.samples", "samples", "int"),
    ("data", "data.duration", "duration", "float"),
    ("data", "data.dt", "dt", "float"),
    ("data", "data.noise", "noise", "float"),
    ("data", "data.cutoff_hz", "cutoff_hz", "opt_float"),
    ("data", "data.train_fraction", "train_fraction", "float"),
    ("train", "train.loss", "loss", "str"),
    ("train", "train.epochs", "epochs", "int"),
    ("train", "train.batch_size", "batch_size", "int"),
    ("train", "train.learning_rate", "learning_rate", "float"),
    ("train", "train.weight_decay", "weight_decay", "float"),
    ("train", "train.hidden", "hidden", "ints"),
    ("rollout", "rollout.duration", "duration", "float"),
    ("rollout", "rollout.threshold", "threshold", "float"),
    ("rollout", "rollout.count", "count", "int"),
    ("control", "control.mode", "mode", "str"),
    ("control", "control.kp", "kp", "floats"),
    ("control", "control.kd", "kd", "floats"),
    ("control", "control.amplitude", "amplitude", "floats"),
    ("control", "control.frequency", "frequency", "floats"),
    ("control", "control.chirp", "chirp", "floats"),
    ("control", "control.phase", "phase", "floats"),
    ("control", "control.velocity_scale", "velocity_scale", "float"),
    ("control", "control.k_energy", "k_energy", "float"),
    ("control", "control.k_position", "k_position", "float"),
    ("control", "control.catch_angle", "catch_angle", "float"),
    ("control", "control.catch_rate", "catch_rate", "float"),
    ("control", "control.balance_weights", "balance_weights", "opt_floats"),
    ("control", "control.balance_effort", "balance_effort", "float"),
    ("control", "control.saturation", "saturation", "opt_float"),
    ("control", "control.sensor_noise", "sensor_noise", "float"),
    ("control", "control.dt", "dt", "float"),
    ("control", "control.horizon", "horizon", "float"),
    ("sysid", "sysid_ridge", "ridge", "float"),
)

# [plant] section: parameter overrides plus the friction description.
_PLANT_PARAM_KEYS = ("mass", "length", "com", "inertia")
_FRICTION_KEYS = ("coulomb", "viscous", "stiction", "width", "damping")


def _get_attr(config, path):
    obj = config
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def config_text(config):
    """Canonical INI serialization; equal configs produce equal text."""
    out = io.StringIO()
    section = None
    for sec, path, key, codec in _SCHEMA:
        if sec != section:
            if section is not None:
                out.write("\n")
            out.write(f"[{sec}]\n")
            section = sec
        encode = _CODECS[codec][1]
        out.write(f"{key} = {encode(_get_attr(config, path))}\n")
    plant_lines = []
    for key, value in config.plant_overrides:
        if key == "gravity":
            plant_lines.append(f"gravity = {_fmt_float(value)}")
        else:
            plant_lines.append(f"{key} = {_CODECS['floats'][1](value)}")
    if config.friction != "none":
        plant_lines.append(f"friction = {config.friction}")
        for name, value in config.friction_constants:
            plant_lines.append(f"{name} = {_CODECS['floats'][1](value)}")
    if plant_lines:
        out.write("\n[plant]\n")
        for line in plant_lines:
            out.write(line + "\n")
    return out.getvalue()


def save_config(config, path):
    with open(path, "w") as fh:
        fh.write(config_text(config))


def config_hash(config):
    """sha256 of the canonical serialization."""
    return hashlib.sha256(config_text(config).encode()).hexdigest()


def _parse_plant_section(items):
    """Split a [plant] section into parameter overrides and friction."""
    overrides = {}
    friction = "none"
    constants = {}
    for key, raw in items:
        if key in _PLANT_PARAM_KEYS:
            overrides[key] = _parse_floats(raw)
        elif key == "gravity":
            overrides[key] = float(raw)
        elif key == "friction":
            friction = raw.strip()
        elif key in _FRICTION_KEYS:
            constants[key] = _parse_floats(raw)
        else:
            raise ValueError(f"unknown key {key!r} in [plant]")
    return overrides, friction, constants


def load_plant_overrides(path):
    """Read a stand-alone plant parameter file (same INI dialect, a single
    [plant] section)."""
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    if set(cp.sections()) != {"plant"}:
        raise ValueError(f"{path}: expected exactly one [plant] section")
    return _parse_plant_section(cp.items("plant"))


def load_config(path):
    """Parse an experiment config, rejecting unknown sections or keys."""
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)

    known = {}
    for sec, path_, key, codec in _SCHEMA:
        known.setdefault(sec, {})[key] = (path_, codec)
    for sec in cp.sections():
        if sec != "plant" and sec not in known:
            raise ValueError(f"unknown section [{sec}]")

    values = {}
    nested = {"data": {}, "train": {}, "rollout": {}, "control": {}}
    for sec, table in known.items():
        if not cp.has_section(sec):
            continue
        for key, raw in cp.items(sec):
            if key not in table:
                raise ValueError(f"unknown key {key!r} in [{sec}]")
            path_, codec = table[key]
            value = _CODECS[codec][0](raw)
            if "." in path_:
                group, attr = path_.split(".")
                nested[group][attr] = value
            else:
                values[path_] = value

    overrides, friction, constants = {}, "none", {}
    if cp.has_section("plant"):
        overrides, friction, constants = _parse_plant_section(cp.items("plant"))
    if values.get("params_file"):
        o2, f2, c2 = load_plant_overrides(values["params_file"])
        # inline [plant] keys win over the referenced file
        overrides = {**o2, **overrides}
        if friction == "none":
            friction, constants = f2, {**c2, **constants}

    return ExperimentConfig(
        data=DataSpec(**nested["data"]),
        train=TrainConfig(**nested["train"]),
        rollout=RolloutSpec(**nested["rollout"]),
        control=ControlSpec(**nested["control"]),
        plant_overrides=tuple(sorted(overrides.items())),
        friction=friction,
        friction_constants=tuple(sorted(constants.items())),
        **values,
    )
