"""Ground-truth worlds and synthetic observational data.

A world couples an invertible nonlinear mixing map with a unit-norm arm set.
Each patient q has a stationary latent mean Z_q; per-timestep latents are
Z_q plus isotropic Gaussian noise, observations are the mixed latents, and
rewards are linear in the *stationary* mean:

    Z_qt = Z_q + eta_t,   X_t = g(Z_qt),   R = theta_a . Z_q + eps.

Hidden latents are kept in a separate record type so that training code can
only ever see (X, action, reward, patient id).
"""

from dataclasses import dataclass

import numpy as np

from latentbandit.errors import ConfigError
from latentbandit.nets import (
    LeakyReluNet,
    forward_leaky,
    net_from_dict,
    net_to_dict,
    random_leaky_net,
)
from latentbandit.rng import substream

WORLD_SCHEMA_VERSION = 1
_MAX_RANK_ATTEMPTS = 100


@dataclass
class WorldSpec:
    """Generative parameters: mixing g, noise scales, unit-norm arms, seed."""

    dim: int
    mixing: LeakyReluNet
    sigma: float
    arms: np.ndarray  # (K, dim), rows have unit l2 norm
    reward_sigma: float
    seed: int

    def __post_init__(self):
        self.arms = np.asarray(self.arms, dtype=float)
        if self.dim < 1:
            raise ConfigError("latent dimension must be >= 1")
        if self.sigma <= 0:
            raise ConfigError("latent noise stddev must be > 0")
        if self.reward_sigma < 0:
            raise ConfigError("reward noise stddev must be >= 0")
        if self.arms.ndim != 2 or self.arms.shape[1] != self.dim:
            raise ConfigError("arms must be a (K, dim) array")
        norms = np.linalg.norm(self.arms, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ConfigError("arm vectors must have unit norm")
        if self.mixing.n_layers and self.mixing.dim != self.dim:
            raise ConfigError("mixing net dimension must match latent dimension")

    @property
    def n_arms(self):
        return self.arms.shape[0]

    @property
    def n_layers(self):
        return self.mixing.n_layers


@dataclass
class PatientInstance:
    patient_id: int
    z_mean: np.ndarray  # (dim,)


@dataclass
class NoisyObservation:
    x: np.ndarray
    z_hidden: np.ndarray  # ground truth Z_qt, for evaluation only


@dataclass
class ObservationalDataset:
    """Agent-visible history: uniformly logged (X, A, R) per patient."""

    x: np.ndarray  # (Q, T_o, dim)
    actions: np.ndarray  # (Q, T_o) int
    rewards: np.ndarray  # (Q, T_o)

    @property
    def n_patients(self):
        return self.x.shape[0]

    @property
    def n_steps(self):
        return self.x.shape[1]

    @property
    def dim(self):
        return self.x.shape[2]


@dataclass
class HiddenLatents:
    """Evaluation-only side channel: true means and per-step latents."""

    means: np.ndarray  # (Q, dim)
    noisy: np.ndarray  # (Q, T_o, dim)


# ---------------------------------------------------------------------------
# sampling


def sample_world(
    dim, n_layers, sigma, reward_sigma, n_arms, seed, alpha=0.2, max_layer_cond=15.0
):
    """Draw a world: Gaussian arms normalized to unit vectors, random mixing.

    Mixing layers are resampled until their condition number is below
    ``max_layer_cond`` (pass 0 to disable), so the ground-truth inverse and
    the recovery problem stay well posed.
    """
    if dim < 1:
        raise ConfigError("dim must be >= 1")
    if n_arms < 2:
        raise ConfigError("need at least 2 arms")
    if sigma <= 0:
        raise ConfigError("sigma must be > 0")
    rng = substream(seed, "world")
    arms = rng.standard_normal((n_arms, dim))
    norms = np.linalg.norm(arms, axis=1)
    while np.any(norms < 1e-12):  # zero draw has probability 0
        arms = rng.standard_normal((n_arms, dim))
        norms = np.linalg.norm(arms, axis=1)
    arms /= norms[:, None]
    mixing = random_leaky_net(
        dim, n_layers, alpha, rng, max_cond=max_layer_cond or None
    )
    return WorldSpec(dim, mixing, sigma, arms, reward_sigma, seed)


def sample_patient(world, rng, patient_id=0):
    """Z_q ~ N(0, I)."""
    return PatientInstance(patient_id, rng.standard_normal(world.dim))


def emit_observation(world, patient, rng):
    z_t = patient.z_mean + world.sigma * rng.standard_normal(world.dim)
    return NoisyObservation(forward_leaky(world.mixing, z_t), z_t)


def emit_observations(world, patient, rng, n):
    """Batch of n observations; returns (x (n,dim), z_hidden (n,dim))."""
    z = patient.z_mean[None, :] + world.sigma * rng.standard_normal((n, world.dim))
    return forward_leaky(world.mixing, z), z


def emit_reward(world, patient, arm, rng):
    """theta_arm . Z_q + eps; depends on the stationary mean, not Z_qt."""
    if not 0 <= arm < world.n_arms:
        raise ConfigError(f"arm {arm} out of range [0, {world.n_arms})")
    noise = world.reward_sigma * rng.standard_normal() if world.reward_sigma else 0.0
    return float(world.arms[arm] @ patient.z_mean + noise)


def expected_rewards(world, z_mean):
    return world.arms @ z_mean


def arm_gaps(world, z_mean):
    """Optimal arm plus minimal and maximal expected-reward gaps."""
    values = expected_rewards(world, z_mean)
    a_star = int(np.argmax(values))
    others = np.delete(values, a_star)
    best = values[a_star]
    return a_star, float(best - np.max(others)), float(best - np.min(others))


def means_full_rank(means, dim):
    return np.linalg.matrix_rank(np.asarray(means)) >= dim


def sample_patient_means(world, n_patients, seed):
    """Patient means with the rank-d safeguard (resample on deficiency)."""
    if n_patients < world.dim:
        raise ConfigError(
            f"need at least dim={world.dim} patients for full-rank means, got {n_patients}"
        )
    for attempt in range(_MAX_RANK_ATTEMPTS):
        rng = substream(seed, "patient-means", attempt)
        means = rng.standard_normal((n_patients, world.dim))
        if means_full_rank(means, world.dim):
            return means
    raise ConfigError("could not sample full-rank patient means")


def dataset_from_means(world, means, t_steps, seed):
    """Uniform-action logged history for the given patient means."""
    means = np.asarray(means, dtype=float)
    q, dim = means.shape
    x = np.empty((q, t_steps, dim))
    noisy = np.empty((q, t_steps, dim))
    actions = np.empty((q, t_steps), dtype=np.int64)
    rewards = np.empty((q, t_steps))
    for i in range(q):
        rng = substream(seed, "patient", i)
        eta = world.sigma * rng.standard_normal((t_steps, dim))
        noisy[i] = means[i][None, :] + eta
        x[i] = forward_leaky(world.mixing, noisy[i])
        actions[i] = rng.integers(0, world.n_arms, size=t_steps)
        eps = world.reward_sigma * rng.standard_normal(t_steps)
        rewards[i] = world.arms[actions[i]] @ means[i] + eps
    return (
        ObservationalDataset(x, actions, rewards),
        HiddenLatents(means, noisy),
    )


def build_observational_dataset(world, n_patients, t_steps, seed=None):
    """Q patients, T_o uniformly-logged steps each; means are full rank."""
    if seed is None:
        seed = world.seed
    means = sample_patient_means(world, n_patients, seed)
    return dataset_from_means(world, means, t_steps, seed)


# ---------------------------------------------------------------------------
# serialization


def world_to_dict(world):
    return {
        "schema_version": WORLD_SCHEMA_VERSION,
        "dim": world.dim,
        "sigma": world.sigma,
        "reward_sigma": world.reward_sigma,
        "seed": world.seed,
        "arms": world.arms.tolist(),
        "mixing": net_to_dict(world.mixing),
    }


def world_from_dict(obj):
    if obj.get("schema_version") != WORLD_SCHEMA_VERSION:
        raise ConfigError(f"unsupported world schema_version {obj.get('schema_version')!r}")
    return WorldSpec(
        dim=int(obj["dim"]),
        mixing=net_from_dict(obj["mixing"]),
        sigma=float(obj["sigma"]),
        arms=np.asarray(obj["arms"], dtype=float),
        reward_sigma=float(obj["reward_sigma"]),
        seed=int(obj["seed"]),
    )
