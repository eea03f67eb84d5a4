"""Bandit agents and the episode loop.

Greedy agents maintain a running estimate of the patient's latent mean from
extracted features and play the arm maximizing the estimated reward.
Greedy1 uses the plain feature mean; Greedy2 additionally reconciles the
mean with the observed rewards by solving a penalized least-squares problem
in closed form each step. The Thompson baseline ignores context and keeps a
conjugate Gaussian posterior per arm with known reward variance.

Episode protocol (per step): observe x_t, update the latent estimate, act,
receive the reward, feed it back. Greedy agents therefore always act after
at least one observation. Observation and reward noise are pre-drawn per
instance from dedicated substreams, so different algorithms run against
identical noise streams.
"""

from dataclasses import dataclass

import numpy as np

from latentbandit.errors import ConfigError
from latentbandit.nets import inverse_leaky
from latentbandit.world import arm_gaps, emit_observations


@dataclass
class BanditTrace:
    algorithm: str
    instance: int
    actions: np.ndarray  # (T,) int
    rewards: np.ndarray  # (T,)
    inst_regret: np.ndarray  # (T,) expected shortfall vs optimal arm
    cum_regret: np.ndarray  # (T,)
    optimal_flag: np.ndarray  # (T,) bool
    gap_min: float = 0.0
    gap_max: float = 0.0

    @property
    def horizon(self):
        return len(self.actions)


# ---------------------------------------------------------------------------
# greedy latent estimators


@dataclass
class Greedy1State:
    feat_sum: np.ndarray
    count: int = 0

    @property
    def z_hat(self):
        if self.count == 0:
            raise ConfigError("latent estimate undefined before any observation")
        return self.feat_sum / self.count


def greedy1_update(state: Greedy1State, features):
    """Running mean of extracted features."""
    state.feat_sum = state.feat_sum + features
    state.count += 1
    return state


@dataclass
class Greedy2State:
    feat_sum: np.ndarray
    theta: np.ndarray  # (K, n) arm parameters used for explaining rewards
    lam: float = 1.0  # proximal weight; 1 reproduces the penalized loss verbatim
    count: int = 0
    gram: np.ndarray = None  # running sum of theta_a theta_a^T over plays
    vec: np.ndarray = None  # running sum of theta_a * r over plays

    def __post_init__(self):
        n = self.feat_sum.shape[0]
        if self.lam <= 0:
            raise ConfigError("proximal weight must be > 0")
        if self.gram is None:
            self.gram = np.zeros((n, n))
        if self.vec is None:
            self.vec = np.zeros(n)

    @property
    def z_hat(self):
        if self.count == 0:
            raise ConfigError("latent estimate undefined before any observation")
        mean = self.feat_sum / self.count
        # unique minimizer of sum (r - theta.z)^2 + lam * ||z - mean||^2
        a = self.gram + self.lam * np.eye(self.gram.shape[0])
        return np.linalg.solve(a, self.vec + self.lam * mean)


def greedy2_update(state: Greedy2State, features, reward_event=None):
    """Mean update, plus reward bookkeeping when (arm, reward) is given."""
    state.feat_sum = state.feat_sum + features
    state.count += 1
    if reward_event is not None:
        arm, reward = reward_event
        th = state.theta[arm]
        state.gram = state.gram + np.outer(th, th)
        state.vec = state.vec + th * reward
    return state


def greedy_act(state, arms):
    """argmax_a theta_a . z_hat; ties break to the lowest arm id."""
    scores = arms @ state.z_hat
    return int(np.argmax(scores))


# ---------------------------------------------------------------------------
# Thompson sampling baseline


@dataclass
class ThompsonState:
    post_mean: np.ndarray  # (K,)
    post_var: np.ndarray  # (K,)
    reward_var: float  # known reward noise variance

    def __post_init__(self):
        if np.any(self.post_var <= 0):
            raise ConfigError("prior variances must be > 0")
        if self.reward_var < 0:
            raise ConfigError("reward variance must be >= 0")


def thompson_act(state: ThompsonState, rng):
    draws = state.post_mean + np.sqrt(state.post_var) * rng.standard_normal(
        state.post_mean.shape[0]
    )
    return int(np.argmax(draws))


def thompson_update(state: ThompsonState, arm, reward):
    """Conjugate Gaussian-Gaussian update for the played arm."""
    if state.reward_var == 0.0:
        state.post_mean[arm] = reward
        state.post_var[arm] = 0.0
        return state
    prec = 1.0 / state.post_var[arm] + 1.0 / state.reward_var
    state.post_mean[arm] = (
        state.post_mean[arm] / state.post_var[arm] + reward / state.reward_var
    ) / prec
    state.post_var[arm] = 1.0 / prec
    return state


# ---------------------------------------------------------------------------
# agents


class Greedy1Agent:
    def __init__(self, algorithm, extract, act_theta):
        self.algorithm = algorithm
        self.extract = extract
        self.act_theta = act_theta
        self.state = Greedy1State(np.zeros(act_theta.shape[1]))
        self._features = None

    def begin_episode(self, x_all):
        self._features = self.extract(x_all)

    def observe(self, t):
        greedy1_update(self.state, self._features[t])

    def act(self, rng):
        return greedy_act(self.state, self.act_theta)

    def feedback(self, arm, reward):
        pass


class Greedy2Agent:
    def __init__(self, algorithm, extract, act_theta, lam=1.0):
        self.algorithm = algorithm
        self.extract = extract
        self.act_theta = act_theta
        self.state = Greedy2State(np.zeros(act_theta.shape[1]), act_theta, lam)
        self._features = None

    def begin_episode(self, x_all):
        self._features = self.extract(x_all)

    def observe(self, t):
        greedy2_update(self.state, self._features[t])

    def act(self, rng):
        return greedy_act(self.state, self.act_theta)

    def feedback(self, arm, reward):
        th = self.state.theta[arm]
        self.state.gram = self.state.gram + np.outer(th, th)
        self.state.vec = self.state.vec + th * reward


class ThompsonAgent:
    def __init__(self, algorithm, n_arms, prior_var, reward_var):
        self.algorithm = algorithm
        self.state = ThompsonState(
            np.zeros(n_arms), np.full(n_arms, float(prior_var)), float(reward_var)
        )

    def begin_episode(self, x_all):
        pass

    def observe(self, t):
        pass

    def act(self, rng):
        return thompson_act(self.state, rng)

    def feedback(self, arm, reward):
        thompson_update(self.state, arm, reward)


def oracle_extractor(world):
    """Ground-truth inverse mixing map, vectorized over observations."""

    def extract(x):
        return inverse_leaky(world.mixing, x)

    return extract


def model_extractor(model):
    from latentbandit.lvm import extract_latents

    def extract(x):
        return extract_latents(model, x)

    return extract


def make_agent(name, world, model=None, arm_estimates=None, lam=1.0, prior_var=1.0):
    """Instantiate an agent by algorithm name.

    greedy1/greedy2 use the trained LVM; oracle-greedy1/oracle-greedy2 use
    the true inverse mixing and true arm vectors; thompson uses the ground
    truth reward variance.
    """
    if name in ("greedy1", "greedy2"):
        if model is None or arm_estimates is None:
            raise ConfigError(f"{name} requires a trained model and arm estimates")
        theta = arm_estimates.theta.copy()
        if not np.all(arm_estimates.usable):
            # arms never logged cannot be scored; exclude them from argmax
            theta[~arm_estimates.usable] = -np.inf
        extract = model_extractor(model)
        if name == "greedy1":
            return Greedy1Agent(name, extract, theta)
        return Greedy2Agent(name, extract, theta, lam)
    if name in ("oracle-greedy1", "oracle-greedy2"):
        extract = oracle_extractor(world)
        if name == "oracle-greedy1":
            return Greedy1Agent(name, extract, world.arms)
        return Greedy2Agent(name, extract, world.arms, lam)
    if name == "thompson":
        return ThompsonAgent(name, world.n_arms, prior_var, world.reward_sigma**2)
    raise ConfigError(f"unknown algorithm {name!r}")


# ---------------------------------------------------------------------------
# episode loop


def run_episode(world, patient, agent, horizon, obs_rng, reward_rng, agent_rng, instance=0):
    """One bandit episode; regret is measured against the true optimal arm."""
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    true_values = world.arms @ patient.z_mean
    a_star, gap_min, gap_max = arm_gaps(world, patient.z_mean)
    x_all, _ = emit_observations(world, patient, obs_rng, horizon)
    # reward noise drawn per step, independent of the chosen arm, so agents
    # facing the same substreams see identical noise realisations
    eps = world.reward_sigma * reward_rng.standard_normal(horizon)

    actions = np.empty(horizon, dtype=np.int64)
    rewards = np.empty(horizon)
    inst_regret = np.empty(horizon)

    agent.begin_episode(x_all)
    for t in range(horizon):
        agent.observe(t)
        a = agent.act(agent_rng)
        if not 0 <= a < world.n_arms:
            raise RuntimeError(f"agent requested unknown arm {a} (contract violation)")
        r = float(true_values[a] + eps[t])
        agent.feedback(a, r)
        actions[t] = a
        rewards[t] = r
        inst_regret[t] = true_values[a_star] - true_values[a]

    return BanditTrace(
        agent.algorithm,
        instance,
        actions,
        rewards,
        inst_regret,
        np.cumsum(inst_regret),
        actions == a_star,
        gap_min,
        gap_max,
    )
