"""Free-run prediction shoot-out: structured against black-box against a
plain feed-forward net, all trained on the same small dataset.

The reference for every episode is the plant stepped under the exact
torque sequence the model sees, so the comparison isolates model error
from control discretization.  Expect the structured variants to stay on
the reference for longer and the black-box Lagrangian to be the one that
occasionally blows up.
"""

import numpy as np

from mechlearn.dynamics import model_field
from mechlearn.errors import DivergedRollout, NearSingularHessian
from mechlearn.evaluation import generate_trajectory, generate_uniform, vpt
from mechlearn.integrators import rollout
from mechlearn.models import (
    BlackBoxLagrangianModel,
    FeatureTransform,
    FeedForwardBaseline,
    StructuredLagrangianModel,
)
from mechlearn.plants import make_plant, plant_field
from mechlearn.training import TrainConfig, train

plant = make_plant("two-link")
dataset = generate_uniform(plant, 4000, seed=0)
feat = FeatureTransform(("sincos", "sincos"))

contenders = {
    "structured": (StructuredLagrangianModel.create(2, hidden=(48, 48),
                                                    feature=feat, seed=0),
                   "inverse", 40),
    "black-box": (BlackBoxLagrangianModel.create(2, hidden=(48, 48),
                                                 feature=feat, seed=0),
                  "inverse", 20),
    "feed-forward": (FeedForwardBaseline.create(2, hidden=(96, 96),
                                                feature=feat, seed=0),
                     "combined", 60),
}

episodes = []
for k in range(3):
    source = generate_trajectory(plant, 2.0, 0.01, seed=100 + k)
    x0 = np.concatenate([source.q[0], source.qd[0]])
    truth = rollout(plant_field(plant), x0, source.dt, len(source) - 1,
                    controls=source.tau[:-1])
    episodes.append((source, truth))

for name, (model, loss, epochs) in contenders.items():
    cfg = TrainConfig(loss=loss, epochs=epochs, batch_size=256,
                      learning_rate=1e-3, weight_decay=0.0, seed=0)
    model, _ = train(model, dataset, cfg)
    seconds = []
    for source, truth in episodes:
        x0 = np.concatenate([source.q[0], source.qd[0]])
        try:
            traj = rollout(model_field(model), x0, source.dt,
                           len(source) - 1, controls=source.tau[:-1])
            seconds.append(vpt(traj.X, truth.X, source.dt))
        except (DivergedRollout, NearSingularHessian) as err:
            print(f"  {name}: episode aborted ({type(err).__name__})")
            seconds.append(0.0)
    print(f"{name:13s} mean valid prediction time "
          f"{np.mean(seconds):.2f} s of 2.0 s")
