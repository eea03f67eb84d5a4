"""Experiment orchestration: bandit suites and LVM evaluation.

All randomness flows from the run seed through named substreams. Each bandit
instance i draws its patient, observation noise and reward noise from
substreams keyed by i only, so every algorithm faces the same instances and
the same noise streams, and results do not depend on the number of worker
threads or on execution order.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from latentbandit.bandits import make_agent, run_episode
from latentbandit.lvm import extract_latents, patient_mean_latents
from latentbandit.metrics import mcc, r2
from latentbandit.rng import substream
from latentbandit.world import (
    PatientInstance,
    dataset_from_means,
    emit_observations,
    sample_patient,
)

DEFAULT_ALGORITHMS = ("greedy1", "greedy2", "oracle-greedy1", "oracle-greedy2", "thompson")


def run_bandit_instance(
    world, algorithms, horizon, seed, instance, model=None, arm_estimates=None,
    lam=1.0, prior_var=1.0,
):
    """All algorithms on one shared instance; returns one trace per algorithm."""
    patient = sample_patient(
        world, substream(seed, "bandit", instance, "patient"), patient_id=instance
    )
    traces = []
    for name in algorithms:
        agent = make_agent(
            name, world, model=model, arm_estimates=arm_estimates,
            lam=lam, prior_var=prior_var,
        )
        trace = run_episode(
            world,
            patient,
            agent,
            horizon,
            obs_rng=substream(seed, "bandit", instance, "obs"),
            reward_rng=substream(seed, "bandit", instance, "reward"),
            agent_rng=substream(seed, "bandit", instance, "agent", name),
            instance=instance,
        )
        traces.append(trace)
    return traces


def run_bandit_suite(
    world, algorithms, n_instances, horizon, seed, model=None, arm_estimates=None,
    lam=1.0, prior_var=1.0, threads=1,
):
    """Run the algorithm set over fresh instances; trace order is fixed."""
    slots = [None] * n_instances

    def work(i):
        slots[i] = run_bandit_instance(
            world, algorithms, horizon, seed, i,
            model=model, arm_estimates=arm_estimates, lam=lam, prior_var=prior_var,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(n_instances)))
    else:
        for i in range(n_instances):
            work(i)

    return [trace for group in slots for trace in group]


# ---------------------------------------------------------------------------
# LVM evaluation (Table-1 style)


def evaluate_lvm(
    world, model, arm_estimates, dataset, train_means, seed,
    n_test_patients=50, t_test=None, accuracy_draws=20,
):
    """MCC (both alignments), classification accuracy and reward R2.

    Test patients are fresh draws from the world; their latent means are
    estimated from t_test logged-style observations each. Reward R2 compares
    predicted vs true expected rewards per arm, averaged over arms.
    """
    if t_test is None:
        t_test = dataset.n_steps
    test_rng = substream(seed, "eval", "test-patients")
    test_means = test_rng.standard_normal((n_test_patients, world.dim))
    test_data, _ = dataset_from_means(world, test_means, t_test, substream_seed(seed))

    z_train = patient_mean_latents(model, dataset)
    z_test = patient_mean_latents(model, test_data)

    mcc_train = mcc(train_means, z_train)
    mcc_test = mcc(test_means, z_test)

    true_train = train_means @ world.arms.T
    true_test = test_means @ world.arms.T
    pred_train = z_train @ arm_estimates.theta.T
    pred_test = z_test @ arm_estimates.theta.T
    usable = np.nonzero(arm_estimates.usable)[0]
    r2_train = float(np.mean([r2(true_train[:, a], pred_train[:, a]) for a in usable]))
    r2_test = float(np.mean([r2(true_test[:, a], pred_test[:, a]) for a in usable]))

    accuracy = _classification_accuracy(
        world, model, train_means, seed, n_per_patient=accuracy_draws
    )

    return {
        "mcc_perm": mcc_test.mcc_perm,
        "mcc_affine": mcc_test.mcc_affine,
        "mcc_perm_train": mcc_train.mcc_perm,
        "mcc_affine_train": mcc_train.mcc_affine,
        "r2_train": r2_train,
        "r2_test": r2_test,
        "accuracy": accuracy,
    }


def substream_seed(seed):
    # dataset_from_means needs an integer seed for its per-patient substreams
    return int(substream(seed, "eval", "test-data").integers(0, 2**63 - 1))


def _classification_accuracy(world, model, train_means, seed, n_per_patient=20):
    """Accuracy of the patient classifier on fresh observations of the
    training patients."""
    rng = substream(seed, "eval", "accuracy")
    hits = 0
    total = 0
    for q in range(train_means.shape[0]):
        patient = PatientInstance(q, train_means[q])
        x, _ = emit_observations(world, patient, rng, n_per_patient)
        h = extract_latents(model, x)
        logits = h @ model.head_w.T + model.head_b
        hits += int((logits.argmax(axis=1) == q).sum())
        total += n_per_patient
    return hits / total
