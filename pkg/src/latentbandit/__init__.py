"""Latent bandit simulator.

Synthetic worlds driven by a nonlinear mixing of per-patient latent means,
contrastively trained latent variable models that invert the mixing up to an
affine map, greedy bandit agents that exploit the recovered latents, and an
evaluation harness (MCC, reward R2, regret curves).
"""

__version__ = "0.1.0"

from latentbandit.errors import (
    ConfigError,
    NumericalError,
    SingularMatrixError,
    TrainingDivergence,
)

__all__ = [
    "ConfigError",
    "NumericalError",
    "SingularMatrixError",
    "TrainingDivergence",
    "__version__",
]
