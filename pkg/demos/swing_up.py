"""Energy swing-up of the cartpole and the Furuta pendulum: pump energy
toward the upright rest value, then hand over to an LQR catch.

Both runs print the phase-by-phase story: pumping until the pendulum
carries enough energy, the catch, and the final stillness.
"""

import numpy as np

from mechlearn.control import (
    Gains,
    balance_gains,
    closed_loop_simulate,
    swingup_controller,
    upright_rest_energy,
)
from mechlearn.models import AnalyticLagrangianModel
from mechlearn.plants import make_plant

SETUPS = {
    "cartpole": dict(weights=[10.0, 10.0, 1.0, 1.0], effort=1.0,
                     k_energy=8.0, k_position=0.5, catch_angle=0.5,
                     catch_rate=1.6, dt=0.01, saturation=10.0),
    "furuta": dict(weights=[0.5, 10.0, 0.05, 0.2], effort=50.0,
                   k_energy=1.0, k_position=0.1, catch_angle=0.5,
                   catch_rate=3.0, dt=0.005, saturation=0.15),
}

for kind, s in SETUPS.items():
    plant = make_plant(kind)
    model = AnalyticLagrangianModel(plant)
    e_des = upright_rest_energy(model, plant)
    balance = balance_gains(plant, weights=s["weights"], effort=s["effort"])
    gains = Gains(kp=np.ones(2), kd=np.ones(2), k_energy=s["k_energy"],
                  k_position=s["k_position"])
    ctrl = swingup_controller(model, gains, e_des, plant, balance,
                              catch_angle=s["catch_angle"],
                              catch_rate=s["catch_rate"])
    x0 = np.concatenate([plant.hanging(), np.zeros(2)])
    x0[plant.pendulum_index] -= 0.05  # nudge off the hanging equilibrium

    traj, metrics = closed_loop_simulate(plant, ctrl, s["dt"], 15.0, x0,
                                         e_des=e_des,
                                         saturation=s["saturation"])
    pend = plant.pendulum_index
    catch_t = None
    for k, x in enumerate(traj.X):
        dev = (x[pend] - plant.upright()[pend] + np.pi) % (2 * np.pi) - np.pi
        if abs(dev) <= s["catch_angle"] and abs(x[plant.n + pend]) <= s["catch_rate"]:
            catch_t = traj.t[k]
            break
    print(f"{kind}: swing-up {'succeeded' if metrics.success else 'FAILED'}")
    print(f"  energy error at start {metrics.energy_error[0]:+.3f}, "
          f"at end {metrics.energy_error[-1]:+.1e}")
    print(f"  first entered the catch region at t = {catch_t:.2f} s")
    print(f"  final state {traj.X[-1].round(4)}")
