"""The failure mode the structured parameterization exists to avoid: a
free-form Lagrangian's velocity Hessian can wander toward singularity,
and the forward dynamics blow up with it.

Ten random initializations, a short training run each, then a free-run
prediction.  Some seeds survive; typically at least one trips the
near-singular guard or drifts off within the first fraction of a second.
"""

import numpy as np

from mechlearn.dynamics import model_field
from mechlearn.errors import DivergedRollout, NearSingularHessian
from mechlearn.evaluation import generate_trajectory, generate_uniform, vpt
from mechlearn.integrators import rollout
from mechlearn.models import BlackBoxLagrangianModel, FeatureTransform
from mechlearn.plants import make_plant, plant_field
from mechlearn.training import TrainConfig, train

plant = make_plant("two-link")
dataset = generate_uniform(plant, 4000, seed=0)
source = generate_trajectory(plant, 2.0, 0.01, seed=100)
x0 = np.concatenate([source.q[0], source.qd[0]])
truth = rollout(plant_field(plant), x0, source.dt, len(source) - 1,
                controls=source.tau[:-1])

for seed in range(10):
    model = BlackBoxLagrangianModel.create(
        2, hidden=(32, 32), feature=FeatureTransform(("sincos", "sincos")),
        seed=seed)
    cfg = TrainConfig(loss="inverse", epochs=3, batch_size=256,
                      learning_rate=1e-3, weight_decay=0.0, seed=seed)
    model, _ = train(model, dataset, cfg)
    try:
        traj = rollout(model_field(model), x0, source.dt, len(source) - 1,
                       controls=source.tau[:-1])
        seconds = vpt(traj.X, truth.X, source.dt)
        print(f"seed {seed}: tracked the plant for {seconds:.2f} s of 2.0 s")
    except NearSingularHessian as err:
        print(f"seed {seed}: NEAR-SINGULAR velocity Hessian ({err})")
    except DivergedRollout as err:
        print(f"seed {seed}: diverged at step {err.step}")
