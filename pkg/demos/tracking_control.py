"""Feed-forward torque versus plain PD on a chirped cosine reference, and
what happens to either as the reference speeds up."""

import numpy as np

from mechlearn.control import (
    DesiredTrajectory,
    Gains,
    closed_loop_simulate,
    inverse_dynamics_controller,
)
from mechlearn.evaluation import CosineTrajectory
from mechlearn.models import AnalyticLagrangianModel
from mechlearn.plants import make_plant

plant = make_plant("two-link")
spec = CosineTrajectory(
    amplitude=np.array([0.8, 0.6]), frequency=np.array([0.5, 0.7]),
    chirp=np.array([0.05, 0.03]), phase=np.array([0.0, 1.0]))
des = DesiredTrajectory.from_cosine(spec, duration=4.0, dt=0.01)
gains = Gains(kp=np.full(2, 50.0), kd=np.full(2, 10.0))
model = AnalyticLagrangianModel(plant)

print("tracking MSE over 4 s, 100 Hz control:")
for factor in (1.0, 1.5, 2.0):
    d = des.velocity_scaled(factor)
    x0 = np.concatenate([d.q[0], d.qd[0]])
    row = [f"speed x{factor:g}:"]
    for label, m in (("feed-forward", model), ("pd only", None)):
        ctrl = inverse_dynamics_controller(m, gains, d)
        _, metrics = closed_loop_simulate(plant, ctrl, 0.01, 4.0, x0,
                                          desired=d)
        row.append(f"{label} {metrics.tracking_mse:.2e}")
    print("  " + "  ".join(row))
