"""Train a structured Lagrangian network on two-link inverse dynamics and
split its torque prediction into inertial, coriolis, and gravity parts.

A couple of minutes of CPU; bump the epoch counts for tighter numbers.
"""

import numpy as np

from mechlearn.evaluation import generate_uniform, nmse, train_test_split
from mechlearn.models import (
    AnalyticLagrangianModel,
    FeatureTransform,
    StructuredLagrangianModel,
)
from mechlearn.plants import make_plant
from mechlearn.training import TrainConfig, train

plant = make_plant("two-link")
dataset = generate_uniform(plant, 4000, seed=0)
train_set, test_set = train_test_split(dataset, 0.8, seed=1)

# sine/cosine input features: the mass matrix and gravity torque of a
# revolute arm are trigonometric polynomials of the joint angles
model = StructuredLagrangianModel.create(
    2, hidden=(64, 64), feature=FeatureTransform(("sincos", "sincos")), seed=0)

for lr, epochs in ((3e-3, 30), (1e-3, 30)):
    cfg = TrainConfig(loss="inverse", epochs=epochs, batch_size=256,
                      learning_rate=lr, weight_decay=0.0, seed=0)
    model, history = train(model, train_set, cfg, test_dataset=test_set)
    print(f"lr {lr:g} x {epochs}: held-out loss {history[-1]['test_loss']:.2e}")

tau_hat = model.inverse(test_set.q, test_set.qd, test_set.qdd)
print(f"held-out inverse nMSE {nmse(tau_hat, test_set.tau):.2e}")

ref = AnalyticLagrangianModel(plant)
dec = model.decompose(test_set.q, test_set.qd, test_set.qdd)
truth = ref.decompose(test_set.q, test_set.qd, test_set.qdd)
for name in ("inertial", "coriolis", "gravitational"):
    err = nmse(getattr(dec, name), getattr(truth, name))
    print(f"{name:14s} component nMSE {err:.2e}")
