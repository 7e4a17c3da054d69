"""mechlearn: physics-consistent learning of rigid-body dynamics.

The library couples small dense networks with the structure of mechanics:
mass-matrix and potential networks assembled into Lagrangian or Hamiltonian
dynamics (with unstructured scalar-energy variants as baselines), analytic
reference plants, fixed-step integrators, linear system identification, and
model-based tracking and swing-up control.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    config,
    control,
    diffnet,
    dynamics,
    errors,
    evaluation,
    integrators,
    models,
    plants,
    sysid,
    training,
)
