"""Dataset generation, observation processing, and prediction metrics.

Datasets carry one row per sample with positions, velocities,
accelerations, applied generalized forces, and the matching phase-space
observables, plus the metadata needed to regenerate them (plant kind,
generator, seed, dt, noise level, friction kind).  Two generators:

* uniform: i.i.d. (q, qd, tau) in per-plant boxes, accelerations from the
  analytic forward dynamics;
* trajectory: per-joint cosine references with a slow chirp, torques from
  the analytic inverse dynamics along the reference.

Observation processing mirrors a position-only encoder pipeline: central
finite differences for the derivatives, then a forward-backward (zero
phase) second-order Butterworth low-pass.

File format: CSV with a versioned comment header; readers reject unknown
versions.  Floats are written with 17 significant digits, so a save/load
round trip is bit-exact.  Range overrides beyond the per-plant defaults are
the caller's to record (the command-line layer hashes its full
configuration for that purpose).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import butter, filtfilt

from .errors import SeriesTooShort, ShapeError, UnknownFormatVersion
from .plants import default_ranges, to_hamiltonian_observation

_FORMAT = "mechlearn-dataset-v1"

# smallest series differentiate_and_filter accepts: second-order filtfilt
# pads with 3 * (2 * order + 1) = 15 samples
_MIN_SERIES = 16


@dataclass
class Dataset:
    """Sample table plus the metadata that determines regeneration."""

    plant_kind: str
    generator: str
    seed: int
    dt: float
    noise: float
    friction_kind: str
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    tau: np.ndarray
    p: np.ndarray
    pd: np.ndarray
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return self.q.shape[0]

    @property
    def n(self):
        return self.q.shape[1]

    def save(self, path):
        n = self.n
        cols = ["t"]
        for name in ("q", "dq", "ddq", "tau", "p", "dp"):
            cols.extend(f"{name}{j}" for j in range(n))
        table = np.column_stack(
            [self.t, self.q, self.qd, self.qdd, self.tau, self.p, self.pd]
        )
        buf = io.StringIO()
        buf.write(
            f"# {_FORMAT} plant={self.plant_kind} generator={self.generator} "
            f"seed={self.seed} dt={self.dt!r} noise={self.noise!r} "
            f"friction={self.friction_kind} n={n}\n"
        )
        buf.write(",".join(cols) + "\n")
        for row in table:
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        with open(path, "w") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            header = fh.readline().strip()
            if not header.startswith("# "):
                raise UnknownFormatVersion("missing dataset header line")
            fields = header[2:].split()
            if not fields or fields[0] != _FORMAT:
                raise UnknownFormatVersion(
                    f"cannot read dataset format {fields[0] if fields else '?'!r}"
                )
            meta = dict(kv.split("=", 1) for kv in fields[1:])
            fh.readline()  # column names
            body = fh.read()
        n = int(meta["n"])
        if body.strip():
            table = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
        else:
            table = np.zeros((0, 1 + 6 * n))
        blocks = [table[:, 0]] + [
            table[:, 1 + k * n : 1 + (k + 1) * n] for k in range(6)
        ]
        return cls(
            plant_kind=meta["plant"],
            generator=meta["generator"],
            seed=int(meta["seed"]),
            dt=float(meta["dt"]),
            noise=float(meta["noise"]),
            friction_kind=meta["friction"],
            t=blocks[0],
            q=blocks[1],
            qd=blocks[2],
            qdd=blocks[3],
            tau=blocks[4],
            p=blocks[5],
            pd=blocks[6],
        )


def generate_uniform(plant, n_samples, seed, ranges=None, friction=None):
    """I.i.d. uniform states and forces; accelerations from the dynamics."""
    if ranges is None:
        ranges = default_ranges(plant)
    for key in ("position", "velocity", "torque"):
        lo, hi = ranges[key]
        if np.any(np.asarray(hi) <= np.asarray(lo)):
            raise ValueError(f"empty {key} range")
    rng = np.random.default_rng(seed)
    n = plant.n
    q_lo, q_hi = ranges["position"]
    v_lo, v_hi = ranges["velocity"]
    u_lo, u_hi = ranges["torque"]
    Q = rng.uniform(q_lo, q_hi, size=(n_samples, n))
    Qd = rng.uniform(v_lo, v_hi, size=(n_samples, n))
    Tau = rng.uniform(u_lo, u_hi, size=(n_samples, n))
    Qdd = plant.forward(Q, Qd, Tau, friction)
    P, Pd = to_hamiltonian_observation(plant, Q, Qd, qdd=Qdd)
    return Dataset(
        plant_kind=plant.kind,
        generator="uniform",
        seed=int(seed),
        dt=0.0,
        noise=0.0,
        friction_kind=friction.kind if friction is not None else "none",
        t=np.zeros(n_samples),
        q=Q,
        qd=Qd,
        qdd=Qdd,
        tau=Tau,
        p=P,
        pd=Pd,
    )


class CosineTrajectory:
    """Per-joint references q_j(t) = A_j cos(2 pi (f_j + r_j t) t + phi_j).

    The chirp rate r sweeps the instantaneous frequency slowly upward, so
    no two joints stay phase-locked.  Derivatives are analytic.
    """

    def __init__(self, amplitude, frequency, chirp, phase):
        self.amplitude = np.asarray(amplitude, dtype=float)
        self.frequency = np.asarray(frequency, dtype=float)
        self.chirp = np.asarray(chirp, dtype=float)
        self.phase = np.asarray(phase, dtype=float)
        shapes = {a.shape for a in (self.amplitude, self.frequency, self.chirp, self.phase)}
        if len(shapes) != 1:
            raise ShapeError("per-joint parameter arrays must share a shape")

    @property
    def n(self):
        return self.amplitude.shape[0]

    @classmethod
    def random(cls, n, rng, amplitude=(0.3, 1.0), frequency=(0.3, 1.2),
               chirp=(0.01, 0.05)):
        return cls(
            amplitude=rng.uniform(*amplitude, size=n),
            frequency=rng.uniform(*frequency, size=n),
            chirp=rng.uniform(*chirp, size=n),
            phase=rng.uniform(0.0, 2 * np.pi, size=n),
        )

    def velocity_scaled(self, factor):
        """Same paths traversed `factor` times faster: q'(t) = q(factor t)."""
        return CosineTrajectory(
            amplitude=self.amplitude,
            frequency=factor * self.frequency,
            chirp=factor**2 * self.chirp,
            phase=self.phase,
        )

    def at(self, t):
        """(q, qd, qdd) rows for an array of times, shapes (K, n)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))[:, None]
        A = self.amplitude[None, :]
        psi = 2 * np.pi * (self.frequency[None, :] + self.chirp[None, :] * t) * t \
            + self.phase[None, :]
        dpsi = 2 * np.pi * (self.frequency[None, :] + 2 * self.chirp[None, :] * t)
        ddpsi = 4 * np.pi * self.chirp[None, :]
        q = A * np.cos(psi)
        qd = -A * np.sin(psi) * dpsi
        qdd = -A * np.cos(psi) * dpsi**2 - A * np.sin(psi) * ddpsi
        return q, qd, qdd


def generate_trajectory(plant, duration, dt, seed, spec=None, friction=None):
    """Reference-trajectory dataset: chirped cosines and the torques that
    realize them on the analytic plant."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if spec is None:
        spec = CosineTrajectory.random(plant.n, np.random.default_rng(seed))
    steps = int(round(duration / dt))
    t = np.arange(steps + 1) * dt
    Q, Qd, Qdd = spec.at(t)
    Tau = plant.inverse(Q, Qd, Qdd, friction)
    P, Pd = to_hamiltonian_observation(plant, Q, Qd, qdd=Qdd)
    return Dataset(
        plant_kind=plant.kind,
        generator="trajectory",
        seed=int(seed),
        dt=float(dt),
        noise=0.0,
        friction_kind=friction.kind if friction is not None else "none",
        t=t,
        q=Q,
        qd=Qd,
        qdd=Qdd,
        tau=Tau,
        p=P,
        pd=Pd,
    )


def differentiate_and_filter(Q, dt, cutoff_hz=None):
    """Velocities and accelerations from a position series.

    Central differences (second-order one-sided at the ends) followed by a
    forward-backward second-order Butterworth low-pass, which leaves no
    phase lag.  `cutoff_hz` defaults to a tenth of the Nyquist frequency.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 1:
        Q = Q[:, None]
    if Q.shape[0] < _MIN_SERIES:
        raise SeriesTooShort(
            f"need at least {_MIN_SERIES} samples to differentiate and filter, "
            f"got {Q.shape[0]}"
        )
    fs = 1.0 / dt
    if cutoff_hz is None:
        cutoff_hz = fs / 20.0
    b, a = butter(2, cutoff_hz / (fs / 2.0))
    qd_raw = np.gradient(Q, dt, axis=0, edge_order=2)
    qdd_raw = np.gradient(qd_raw, dt, axis=0, edge_order=2)
    qd = filtfilt(b, a, qd_raw, axis=0)
    qdd = filtfilt(b, a, qdd_raw, axis=0)
    return qd, qdd


def with_position_noise(plant, dataset, sigma, seed, cutoff_hz=None, friction=None):
    """Re-observe a trajectory dataset through noisy position encoders.

    Positions get additive Gaussian noise; velocities and accelerations are
    reconstructed with `differentiate_and_filter`; commanded torques stay as
    recorded; phase-space observables are recomputed from the analytic mass
    matrix at the noisy states.
    """
    if dataset.generator != "trajectory":
        raise ValueError("position noise needs a time-ordered trajectory dataset")
    rng = np.random.default_rng(seed)
    Qn = dataset.q + rng.normal(scale=sigma, size=dataset.q.shape)
    Qd, Qdd = differentiate_and_filter(Qn, dataset.dt, cutoff_hz)
    P, Pd = to_hamiltonian_observation(plant, Qn, Qd, qdd=Qdd)
    return replace(dataset, noise=float(sigma), q=Qn, qd=Qd, qdd=Qdd, p=P, pd=Pd)


def nmse(pred, target, floor=1e-8):
    """Mean squared error normalized per dimension by the target variance."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.ndim == 1:
        pred, target = pred[:, None], target[:, None]
    mse = np.mean((pred - target) ** 2, axis=0)
    var = np.maximum(target.var(axis=0), floor)
    return float(np.mean(mse / var))


def vpt(X_pred, X_true, dt, threshold=1e-2):
    """Valid prediction time: seconds until the per-step position MSE first
    exceeds `threshold`; the full horizon if it never does."""
    X_pred = np.asarray(X_pred, dtype=float)
    X_true = np.asarray(X_true, dtype=float)
    if X_pred.shape != X_true.shape:
        raise ShapeError(f"shape mismatch: {X_pred.shape} vs {X_true.shape}")
    n = X_pred.shape[1] // 2
    err = np.mean((X_pred[:, :n] - X_true[:, :n]) ** 2, axis=1)
    # step 0 is the shared initial condition, so the scan starts at step 1
    over = np.nonzero(err[1:] > threshold)[0]
    horizon = (X_pred.shape[0] - 1) * dt
    if over.size == 0:
        return float(horizon)
    return float((over[0] + 1) * dt)


def train_test_split(dataset, train_fraction, seed):
    """Deterministic shuffled split into two datasets."""
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(dataset))
    cut = int(round(train_fraction * len(dataset)))
    parts = []
    for sel in (idx[:cut], idx[cut:]):
        parts.append(
            replace(
                dataset,
                t=dataset.t[sel],
                q=dataset.q[sel],
                qd=dataset.qd[sel],
                qdd=dataset.qdd[sel],
                tau=dataset.tau[sel],
                p=dataset.p[sel],
                pd=dataset.pd[sel],
            )
        )
    return parts[0], parts[1]
