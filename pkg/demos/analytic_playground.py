"""Tour of the three analytic plants: energies, a free swing, and how well
the fixed-step integrators hold the Hamiltonian over ten seconds."""

import numpy as np

from mechlearn.dynamics import model_energy_fn, model_field
from mechlearn.integrators import rollout
from mechlearn.models import AnalyticLagrangianModel
from mechlearn.plants import make_plant

for kind in ("two-link", "cartpole", "furuta"):
    plant = make_plant(kind)
    q = plant.hanging() + 0.3
    qd = np.full(plant.n, 0.5)
    H = plant.mass_matrix(q[None])[0]
    print(f"{kind}: n={plant.n}, E(hanging+0.3, 0.5)={plant.energy(q[None], qd[None])[0]:.4f}")
    print(f"  mass matrix eigenvalues {np.linalg.eigvalsh(H).round(4)}")

    model = AnalyticLagrangianModel(plant)
    x0 = np.concatenate([q, qd])
    for method, dt in (("euler", 1e-3), ("rk4", 1e-3)):
        traj = rollout(model_field(model), x0, dt, int(10.0 / dt),
                       method=method, energy_fn=model_energy_fn(model))
        drift = np.max(np.abs(traj.E - traj.E[0]))
        print(f"  {method:5s} dt={dt:g}: |energy drift| over 10 s = {drift:.2e}")
