import numpy as np
import pytest
from scipy.optimize import minimize

from latentbandit.bandits import (
    Greedy1State,
    Greedy2State,
    ThompsonState,
    greedy1_update,
    greedy2_update,
    greedy_act,
    make_agent,
    run_episode,
    thompson_act,
    thompson_update,
)
from latentbandit.errors import ConfigError
from latentbandit.experiments import run_bandit_instance, run_bandit_suite
from latentbandit.metrics import aggregate_regret
from latentbandit.rng import substream
from latentbandit.world import sample_patient, sample_world


def greedy2_objective(z, thetas, rewards, lam, mean):
    z = np.asarray(z)
    fit = sum((r - th @ z) ** 2 for th, r in zip(thetas, rewards))
    return fit + lam * np.sum((z - mean) ** 2)


def brute_force_greedy2(thetas, rewards, lam, mean):
    """Independent oracle: coarse grid search, then local descent."""
    d = mean.shape[0]
    grid_pts = np.linspace(-3, 3, 7)
    best, best_val = None, np.inf
    for idx in np.ndindex(*([7] * d)):
        z = mean + np.array([grid_pts[i] for i in idx])
        val = greedy2_objective(z, thetas, rewards, lam, mean)
        if val < best_val:
            best, best_val = z, val
    res = minimize(
        greedy2_objective,
        best,
        args=(thetas, rewards, lam, mean),
        method="Nelder-Mead",
        options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 50000, "maxfev": 50000},
    )
    return res.x


# ---------------------------------------------------------------------------
# greedy1


def test_greedy1_single_observation():
    state = Greedy1State(np.zeros(3))
    greedy1_update(state, np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(state.z_hat, [1.0, 2.0, 3.0])


def test_greedy1_constant_stream():
    state = Greedy1State(np.zeros(2))
    v = np.array([0.5, -1.5])
    for _ in range(10):
        greedy1_update(state, v)
        assert np.allclose(state.z_hat, v)


def test_greedy1_matches_batch_mean():
    rng = substream(1, "x")
    state = Greedy1State(np.zeros(4))
    xs = []
    for t in range(100):
        x = rng.standard_normal(4)
        xs.append(x)
        greedy1_update(state, x)
        assert np.max(np.abs(state.z_hat - np.mean(xs, axis=0))) < 1e-12


def test_greedy1_error_decays_as_inverse_sqrt():
    rng = substream(2, "noise")
    reps, horizon, d = 200, 1000, 3
    noise = rng.standard_normal((reps, horizon, d))
    cum = np.cumsum(noise, axis=1)
    counts = np.arange(1, horizon + 1)[None, :, None]
    err = np.linalg.norm(cum / counts, axis=2).mean(axis=0)
    ts = np.unique(np.geomspace(10, horizon, 30).astype(int))
    slope = np.polyfit(np.log(ts), np.log(err[ts - 1]), 1)[0]
    assert -0.65 < slope < -0.35


def test_greedy1_undefined_before_first_observation():
    state = Greedy1State(np.zeros(2))
    with pytest.raises(ConfigError):
        _ = state.z_hat


# ---------------------------------------------------------------------------
# greedy2


def test_greedy2_empty_history_returns_mean():
    theta = np.eye(3)
    state = Greedy2State(np.zeros(3), theta, lam=1.0)
    greedy2_update(state, np.array([1.0, -2.0, 0.5]))
    assert np.allclose(state.z_hat, [1.0, -2.0, 0.5], atol=1e-12)


def test_greedy2_dominant_prox_limit():
    rng = substream(3, "g2")
    theta = rng.standard_normal((5, 3))
    state = Greedy2State(np.zeros(3), theta, lam=1e12)
    mean = rng.standard_normal(3)
    greedy2_update(state, mean)
    for a in range(5):
        greedy2_update(state, mean, (a, rng.standard_normal()))
    assert np.max(np.abs(state.z_hat - mean)) < 1e-4


def test_greedy2_closed_form_matches_brute_force():
    rng = substream(4, "g2")
    for trial in range(10):
        theta = rng.standard_normal((6, 3))
        theta /= np.linalg.norm(theta, axis=1, keepdims=True)
        state = Greedy2State(np.zeros(3), theta, lam=1.0)
        mean_obs = rng.standard_normal(3)
        greedy2_update(state, mean_obs)
        arms, rewards = [], []
        for _ in range(5):
            a = int(rng.integers(0, 6))
            r = float(rng.standard_normal())
            greedy2_update(state, np.zeros(3), (a, r))  # zero features: mean stays
            arms.append(a)
            rewards.append(r)
        mean_est = state.feat_sum / state.count
        want = brute_force_greedy2([theta[a] for a in arms], rewards, 1.0, mean_est)
        assert np.max(np.abs(state.z_hat - want)) < 1e-6


def test_greedy2_closed_form_is_minimizer():
    rng = substream(5, "g2")
    theta = rng.standard_normal((4, 3))
    state = Greedy2State(np.zeros(3), theta, lam=1.0)
    greedy2_update(state, rng.standard_normal(3))
    for _ in range(6):
        greedy2_update(state, np.zeros(3), (int(rng.integers(0, 4)), float(rng.standard_normal())))
    z = state.z_hat
    mean_est = state.feat_sum / state.count
    # first-order optimality of the quadratic objective at the closed form
    grad = 2 * (state.gram @ z - state.vec) + 2 * state.lam * (z - mean_est)
    assert np.max(np.abs(grad)) < 1e-9
    base = z @ state.gram @ z - 2 * state.vec @ z + state.lam * np.sum((z - mean_est) ** 2)
    for _ in range(100):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        zp = z + 1e-3 * direction
        val = zp @ state.gram @ zp - 2 * state.vec @ zp + state.lam * np.sum(
            (zp - mean_est) ** 2
        )
        assert val >= base - 1e-12


# ---------------------------------------------------------------------------
# greedy_act


def test_greedy_act_argmax():
    state = Greedy1State(np.zeros(2))
    greedy1_update(state, np.array([0.9, 0.1]))
    arms = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert greedy_act(state, arms) == 0


def test_greedy_act_tie_breaks_to_lowest():
    state = Greedy1State(np.zeros(2))
    greedy1_update(state, np.zeros(2))
    arms = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
    assert greedy_act(state, arms) == 0


def test_greedy_act_scale_invariant():
    rng = substream(6, "act")
    arms = rng.standard_normal((5, 3))
    for _ in range(20):
        z = rng.standard_normal(3)
        state = Greedy1State(z.copy())
        state.count = 1
        base = greedy_act(state, arms)
        for c in [0.1, 2.0, 1000.0]:
            scaled = Greedy1State(c * z)
            scaled.count = 1
            assert greedy_act(scaled, arms) == base


# ---------------------------------------------------------------------------
# thompson


def test_thompson_conjugate_single_update():
    s0sq, rvar, r = 2.0, 0.5, 1.3
    state = ThompsonState(np.zeros(2), np.full(2, s0sq), rvar)
    thompson_update(state, 0, r)
    assert state.post_mean[0] == pytest.approx(r * s0sq / (s0sq + rvar))
    assert state.post_var[0] == pytest.approx(1.0 / (1 / s0sq + 1 / rvar))
    assert state.post_mean[1] == 0.0


def test_thompson_noiseless_collapse():
    state = ThompsonState(np.zeros(2), np.ones(2), 0.0)
    thompson_update(state, 1, 0.7)
    assert state.post_mean[1] == 0.7
    assert state.post_var[1] == 0.0
    draws = thompson_act(state, substream(7, "t"))
    assert draws in (0, 1)


def test_thompson_variance_strictly_decreasing():
    state = ThompsonState(np.zeros(1), np.ones(1), 0.3)
    last = state.post_var[0]
    for _ in range(10):
        thompson_update(state, 0, 0.1)
        assert state.post_var[0] < last
        last = state.post_var[0]


def test_thompson_finds_optimal_arm():
    # 2 arms, gap 0.5, reward noise 0.1: near-perfect play after 200 steps
    rng = substream(8, "mc")
    means = np.array([0.5, 0.0])
    late_optimal = []
    for rep in range(200):
        state = ThompsonState(np.zeros(2), np.ones(2), 0.01)
        plays = []
        for t in range(200):
            a = thompson_act(state, rng)
            r = means[a] + 0.1 * rng.standard_normal()
            thompson_update(state, a, r)
            plays.append(a)
        late_optimal.append(np.mean(np.array(plays[-50:]) == 0))
    assert np.mean(late_optimal) >= 0.95


# ---------------------------------------------------------------------------
# run_episode


def bandit_world(**kw):
    args = dict(dim=3, n_layers=1, sigma=0.3, reward_sigma=0.1, n_arms=4, seed=101)
    args.update(kw)
    return sample_world(**args)


def run_one(world, name, horizon=50, instance=0, **agent_kw):
    patient = sample_patient(world, substream(world.seed, "bandit", instance, "patient"))
    agent = make_agent(name, world, **agent_kw)
    return run_episode(
        world,
        patient,
        agent,
        horizon,
        obs_rng=substream(world.seed, "bandit", instance, "obs"),
        reward_rng=substream(world.seed, "bandit", instance, "reward"),
        agent_rng=substream(world.seed, "bandit", instance, "agent", name),
        instance=instance,
    )


def test_oracle_noiseless_zero_regret():
    world = bandit_world(sigma=1e-300, reward_sigma=0.0)
    trace = run_one(world, "oracle-greedy1")
    assert np.all(trace.optimal_flag)
    assert np.all(trace.cum_regret == 0.0)


def test_cumulative_regret_bookkeeping():
    world = bandit_world()
    trace = run_one(world, "thompson", horizon=100)
    assert np.max(np.abs(trace.cum_regret - np.cumsum(trace.inst_regret))) < 1e-12
    assert np.all(trace.inst_regret >= 0)
    assert np.all(np.diff(trace.cum_regret) >= 0)


def test_greedy1_and_greedy2_identical_without_rewards():
    world = bandit_world()
    patient = sample_patient(world, substream(5, "p"))
    a1 = make_agent("oracle-greedy1", world)
    a2 = make_agent("oracle-greedy2", world, lam=1.0)
    rng = substream(6, "obs")
    from latentbandit.world import emit_observations

    x, _ = emit_observations(world, patient, rng, 30)
    a1.begin_episode(x)
    a2.begin_episode(x)
    for t in range(30):
        a1.observe(t)
        a2.observe(t)
        # no feedback: greedy2's reward history stays empty
        assert a1.act(None) == a2.act(None)


def test_unknown_arm_contract_violation():
    world = bandit_world()
    patient = sample_patient(world, substream(7, "p"))

    class RogueAgent:
        algorithm = "rogue"

        def begin_episode(self, x):
            pass

        def observe(self, t):
            pass

        def act(self, rng):
            return 99

        def feedback(self, a, r):
            pass

    with pytest.raises(RuntimeError, match="contract"):
        run_episode(
            world,
            patient,
            RogueAgent(),
            5,
            obs_rng=substream(8, "o"),
            reward_rng=substream(8, "r"),
            agent_rng=substream(8, "a"),
        )


def test_learned_agent_requires_model():
    world = bandit_world()
    with pytest.raises(ConfigError):
        make_agent("greedy1", world)
    with pytest.raises(ConfigError):
        make_agent("nonsense", world)


def test_suite_pairing_and_threads():
    world = bandit_world()
    algos = ["oracle-greedy1", "thompson"]
    t1 = run_bandit_suite(world, algos, 6, 40, seed=55, threads=1)
    t4 = run_bandit_suite(world, algos, 6, 40, seed=55, threads=4)
    assert len(t1) == 12
    for a, b in zip(t1, t4):
        assert a.algorithm == b.algorithm and a.instance == b.instance
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.rewards, b.rewards)
    summary = aggregate_regret(t1)
    assert summary.n_instances == {"oracle-greedy1": 6, "thompson": 6}


def test_oracle_constant_regret_trend():
    # mean cumulative regret of oracle greedy1 flattens out
    world = bandit_world(dim=3, n_arms=5, sigma=0.3, reward_sigma=0.1, seed=77)
    traces = run_bandit_suite(world, ["oracle-greedy1"], 60, 400, seed=77)
    summary = aggregate_regret(traces)
    cum = summary.cum_mean["oracle-greedy1"]
    assert cum[-1] < 1.05 * cum[len(cum) // 2] + 0.05
