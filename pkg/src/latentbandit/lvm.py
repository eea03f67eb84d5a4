"""Latent variable model: patient-discriminating contrastive training.

The model is a maxout feature extractor h with a Q-way softmax head on top.
Training maximizes the likelihood of patient labels given observations; under
the identifiability conditions the trained h recovers the inverse mixing map
up to an invertible affine transform, which the downstream linear reward
model absorbs.

Training runs in two stages: first only the softmax head is fit on frozen
features, then extractor and head are fit jointly. After training the
features are re-centered so the per-patient mean features average to zero
across training patients; this picks a representative of the affine
equivalence class for which the intercept-free arm regression is well posed
(classifier outputs are unchanged, the head bias absorbs the shift).
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from latentbandit.errors import ConfigError, SingularMatrixError, TrainingDivergence
from latentbandit.nets import (
    MaxoutNet,
    SgdMomentumState,
    backward_maxout,
    forward_maxout,
    net_from_dict,
    net_to_dict,
    random_maxout_net,
    sgd_step,
)
from latentbandit.rng import substream

LVM_SCHEMA_VERSION = 1


@dataclass
class LvmModel:
    extractor: MaxoutNet
    head_w: np.ndarray  # (Q, n)
    head_b: np.ndarray  # (Q,)
    input_center: np.ndarray = None  # observation standardizer, fit on train data
    input_scale: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.head_w = np.asarray(self.head_w, dtype=float)
        self.head_b = np.asarray(self.head_b, dtype=float)
        d = self.extractor.in_dim
        if self.input_center is None:
            self.input_center = np.zeros(d)
        if self.input_scale is None:
            self.input_scale = np.ones(d)
        self.input_center = np.asarray(self.input_center, dtype=float)
        self.input_scale = np.asarray(self.input_scale, dtype=float)
        if self.head_w.shape[0] != self.head_b.shape[0]:
            raise ConfigError("head weight/bias class counts differ")
        if self.head_w.shape[1] != self.extractor.out_dim:
            raise ConfigError("head width must match extractor output dim")

    @property
    def n_classes(self):
        return self.head_w.shape[0]

    @property
    def latent_dim(self):
        return self.extractor.out_dim


@dataclass
class ClassifierOutput:
    logits: np.ndarray
    probabilities: np.ndarray


@dataclass
class ArmEstimates:
    theta: np.ndarray  # (K, n)
    n_samples: np.ndarray  # (K,) int
    resid_var: np.ndarray  # (K,)

    @property
    def usable(self):
        return self.n_samples > 0


@dataclass
class TrainingParams:
    epochs: int = 3000
    stage1_frac: float = 0.2
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    l2: float = 1e-4  # applied to weight matrices only, never biases
    decay: float = 0.1
    n_hidden: int = 2
    width: int = 0  # 0 means: 3x the data dimension
    pieces: int = 2
    holdout_frac: float = 0.1
    patience: int = 100
    early_stop: bool = True
    standardize: bool = True
    restarts: int = 3  # independent fits; the best holdout loss wins

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.0 <= self.stage1_frac <= 1.0:
            raise ConfigError("stage1_frac must be in [0, 1]")
        if not 0.0 <= self.holdout_frac < 1.0:
            raise ConfigError("holdout_frac must be in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    stage: int
    lr: float
    train_loss: float
    holdout_loss: float
    holdout_accuracy: float


# ---------------------------------------------------------------------------
# inference


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    logp = _log_softmax(logits)
    return np.exp(logp)


def classify(model, x):
    """Q-way softmax over patient classes for a single observation."""
    h, _ = forward_maxout(model.extractor, _standardized(model, x))
    logits = model.head_w @ h + model.head_b
    return ClassifierOutput(logits, softmax(logits))


def classify_pinned(model, x):
    """Reference parameterization: class 0's logit pinned to zero.

    p_xi = exp(w_xi.h + b_xi) / (1 + sum_{j>=1} exp(w_j.h + b_j)) after
    subtracting class 0's row; identical to `classify` up to float noise.
    """
    h, _ = forward_maxout(model.extractor, _standardized(model, x))
    logits = model.head_w @ h + model.head_b
    pinned = logits - logits[0]
    expd = np.exp(pinned[1:])
    denom = 1.0 + expd.sum()
    probs = np.concatenate([[1.0 / denom], expd / denom])
    return ClassifierOutput(pinned, probs)


def _standardized(model, x):
    return (np.asarray(x, dtype=float) - model.input_center) / model.input_scale


def extract_latents(model, x):
    """h(x) for a batch (N, d) or single (d,) observation."""
    h, _ = forward_maxout(model.extractor, _standardized(model, x))
    return h


def extract_latent(model, x):
    return extract_latents(model, np.asarray(x, dtype=float))


def patient_mean_latents(model, dataset):
    """Per-patient mean of extracted features over the logged history."""
    q, t, d = dataset.x.shape
    h = extract_latents(model, dataset.x.reshape(q * t, d))
    return h.reshape(q, t, -1).mean(axis=1)


# ---------------------------------------------------------------------------
# training


def _batch_loss_and_grads(extractor, head_w, head_b, xb, yb, train_extractor):
    h, cache = forward_maxout(extractor, xb)
    logits = h @ head_w.T + head_b
    logp = _log_softmax(logits)
    n = xb.shape[0]
    loss = -float(logp[np.arange(n), yb].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), yb] -= 1.0
    dlogits /= n
    dw = dlogits.T @ h
    db = dlogits.sum(axis=0)
    ext_tape = None
    if train_extractor:
        dh = dlogits @ head_w
        ext_tape = backward_maxout(extractor, cache, dh)
    return loss, dw, db, ext_tape


def _dataset_arrays(dataset):
    q, t, d = dataset.x.shape
    x = dataset.x.reshape(q * t, d)
    y = np.repeat(np.arange(q), t)
    return x, y


def _holdout_split(n_patients, n_steps, frac, rng):
    """Per-patient episode split; returns boolean holdout mask over rows."""
    mask = np.zeros(n_patients * n_steps, dtype=bool)
    n_hold = int(round(frac * n_steps))
    if n_hold == 0:
        return mask
    for q in range(n_patients):
        idx = rng.choice(n_steps, size=n_hold, replace=False)
        mask[q * n_steps + idx] = True
    return mask


def _evaluate(extractor, head_w, head_b, x, y):
    h, _ = forward_maxout(extractor, x)
    logits = h @ head_w.T + head_b
    logp = _log_softmax(logits)
    loss = -float(logp[np.arange(x.shape[0]), y].mean())
    acc = float((logits.argmax(axis=1) == y).mean())
    return loss, acc


def train_contrastive(dataset, params: TrainingParams, seed):
    """Fit the LVM on logged observations; returns (model, epoch log).

    With restarts > 1, independent fits run from derived seeds and the model
    with the lowest holdout loss (training loss if there is no holdout
    split) is returned together with its own epoch log.
    """
    if params.restarts > 1:
        best = None
        for r in range(params.restarts):
            sub_seed = int(substream(seed, "restart", r).integers(0, 2**62))
            model, log = _train_single(dataset, params, sub_seed)
            if params.holdout_frac > 0:
                score = min(e.holdout_loss for e in log)
            else:
                score = log[-1].train_loss
            if best is None or score < best[0]:
                best = (score, model, log)
        best[1].meta["restarts"] = params.restarts
        return best[1], best[2]
    return _train_single(dataset, params, seed)


def _train_single(dataset, params: TrainingParams, seed):
    n_patients = dataset.n_patients
    dim = dataset.dim
    if n_patients < dim:
        raise ConfigError(f"need at least dim={dim} patients, got {n_patients}")
    # SGD cannot reliably reach a good optimum at width = dim even though the
    # exact inverse is representable there; mild overparameterization fixes it
    width = params.width or 3 * dim
    rng = substream(seed, "train")

    extractor = random_maxout_net(dim, dim, params.n_hidden, width, params.pieces, rng)
    head_w = np.zeros((n_patients, dim))
    head_b = np.zeros(n_patients)

    x_all, y_all = _dataset_arrays(dataset)
    hold_mask = _holdout_split(n_patients, dataset.n_steps, params.holdout_frac, rng)
    if params.standardize:
        center = x_all[~hold_mask].mean(axis=0)
        scale = x_all[~hold_mask].std(axis=0)
        scale = np.where(scale == 0, 1.0, scale)
    else:
        center, scale = np.zeros(dim), np.ones(dim)
    x_all = (x_all - center) / scale
    x_train, y_train = x_all[~hold_mask], y_all[~hold_mask]
    x_hold, y_hold = x_all[hold_mask], y_all[hold_mask]
    has_holdout = x_hold.shape[0] > 0

    stage1_epochs = int(round(params.stage1_frac * params.epochs))
    # l2 is folded into weight gradients below (weights only, never biases)
    head_state = SgdMomentumState(
        params.learning_rate, params.momentum, 0.0, params.decay, params.epochs
    )
    ext_state = SgdMomentumState(
        params.learning_rate, params.momentum, 0.0, params.decay, params.epochs
    )
    ext_params = extractor.params()
    ext_weight_idx = [i for i in range(0, len(ext_params) - 1, 2)]  # w, b pairs

    log = []
    best = None  # (holdout loss, epoch, param snapshot)
    since_best = 0
    n_train = x_train.shape[0]

    for epoch in range(params.epochs):
        stage = 1 if epoch < stage1_epochs else 2
        if epoch == stage1_epochs:
            since_best = 0  # joint training starts: give stage 2 a fresh window
        order = rng.permutation(n_train)
        losses = []
        for start in range(0, n_train, params.batch_size):
            sel = order[start : start + params.batch_size]
            loss, dw, db, ext_tape = _batch_loss_and_grads(
                extractor, head_w, head_b, x_train[sel], y_train[sel], stage == 2
            )
            losses.append(loss)
            sgd_step([head_w, head_b], [dw + params.l2 * head_w, db], head_state, epoch=epoch)
            if ext_tape is not None:
                grads = ext_tape.param_grads
                ps = extractor.params()
                for i in ext_weight_idx:
                    grads[i] = grads[i] + params.l2 * ps[i]
                sgd_step(ps, grads, ext_state, epoch=epoch)
                extractor.version += 1
        train_loss = float(np.mean(losses))
        if not np.isfinite(train_loss):
            raise TrainingDivergence(
                f"training loss became non-finite at epoch {epoch}",
                diagnostics={
                    "epoch": epoch,
                    "stage": stage,
                    "lr": head_state.lr_at(epoch),
                    "recent_losses": losses[-5:],
                },
            )
        if has_holdout:
            hold_loss, hold_acc = _evaluate(extractor, head_w, head_b, x_hold, y_hold)
        else:
            hold_loss, hold_acc = float("nan"), float("nan")
        log.append(
            EpochRecord(epoch, stage, head_state.lr_at(epoch), train_loss, hold_loss, hold_acc)
        )

        if has_holdout and params.early_stop:
            if best is None or hold_loss < best[0] - 1e-12:
                best = (
                    hold_loss,
                    epoch,
                    (copy.deepcopy(extractor), head_w.copy(), head_b.copy()),
                )
                since_best = 0
            else:
                since_best += 1
                if since_best > params.patience and stage == 2:
                    break

    best_epoch = len(log) - 1
    if best is not None:
        extractor, head_w, head_b = best[2]
        best_epoch = best[1]

    model = LvmModel(
        extractor,
        head_w,
        head_b,
        input_center=center,
        input_scale=scale,
        meta={
            "epochs_run": len(log),
            "best_epoch": best_epoch,
            "final_train_loss": log[-1].train_loss,
            "final_holdout_loss": log[-1].holdout_loss,
            "seed": int(seed),
        },
    )
    _recenter_latents(model, dataset)
    return model, log


def _recenter_latents(model, dataset):
    # shift features so per-patient mean features average to zero; the head
    # bias absorbs the shift, so classifier probabilities are unchanged
    center = patient_mean_latents(model, dataset).mean(axis=0)
    model.extractor.b_out = model.extractor.b_out - center
    model.extractor.version += 1
    model.head_b = model.head_b + model.head_w @ center


# ---------------------------------------------------------------------------
# arm estimation


def estimate_arms(model, dataset, ridge=1e-6, n_arms=None):
    """Ridge-regress logged rewards per arm on per-patient mean features."""
    if ridge < 0:
        raise ConfigError("ridge must be >= 0")
    zhat = patient_mean_latents(model, dataset)  # (Q, n)
    n_dim = zhat.shape[1]
    actions = dataset.actions
    if n_arms is None:
        n_arms = int(actions.max()) + 1
    theta = np.zeros((n_arms, n_dim))
    counts = np.zeros(n_arms, dtype=np.int64)
    resid = np.zeros(n_arms)
    rows_per_patient = dataset.n_steps
    patient_of_row = np.repeat(np.arange(dataset.n_patients), rows_per_patient)
    acts = actions.ravel()
    rewards = dataset.rewards.ravel()
    for a in range(n_arms):
        sel = acts == a
        counts[a] = int(sel.sum())
        if counts[a] == 0:
            continue
        z = zhat[patient_of_row[sel]]
        y = rewards[sel]
        gram = z.T @ z + ridge * np.eye(n_dim)
        if ridge == 0.0 and np.linalg.cond(gram) > 1e12:
            raise SingularMatrixError(
                f"normal equations singular for arm {a}; use ridge > 0"
            )
        try:
            theta[a] = np.linalg.solve(gram, z.T @ y)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError(
                f"normal equations singular for arm {a}; use ridge > 0"
            ) from exc
        resid[a] = float(np.mean((y - z @ theta[a]) ** 2))
    return ArmEstimates(theta, counts, resid)


# ---------------------------------------------------------------------------
# density-ratio diagnostic


@dataclass
class Lemma1Report:
    """Per-class Pearson correlation between relative logits and true
    log-density differences (reference class 0)."""

    correlations: np.ndarray  # (Q-1,)

    @property
    def mean_correlation(self):
        return float(np.mean(self.correlations))


def lemma1_diagnostic(model, world, patients, x_sample):
    """Compare learned relative logits against ground-truth density ratios.

    The true per-class log density of an observation is the Gaussian latent
    log density at f(x) = g^{-1}(x) plus log|det Jf(x)|; the Jacobian term is
    class-independent, so it cancels in the differences computed here.
    Diagnostic only: no pass/fail threshold inside.
    """
    from latentbandit.nets import inverse_leaky

    x_sample = np.asarray(x_sample, dtype=float)
    f = inverse_leaky(world.mixing, x_sample)  # (N, d)
    mus = np.stack([p.z_mean for p in patients])  # (Q, d)
    if mus.shape[0] != model.n_classes:
        raise ConfigError("patient count must match model classes")
    sq = ((f[:, None, :] - mus[None, :, :]) ** 2).sum(axis=2)  # (N, Q)
    true_diff = (sq[:, :1] - sq) / (2.0 * world.sigma**2)  # vs class 0

    h = extract_latents(model, x_sample)
    logits = h @ model.head_w.T + model.head_b
    logit_diff = logits - logits[:, :1]

    corrs = np.zeros(model.n_classes - 1)
    for xi in range(1, model.n_classes):
        a, b = logit_diff[:, xi], true_diff[:, xi]
        sa, sb = a.std(), b.std()
        if sa == 0 or sb == 0:
            corrs[xi - 1] = 0.0
        else:
            corrs[xi - 1] = float(np.corrcoef(a, b)[0, 1])
    return Lemma1Report(corrs)


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model):
    return {
        "schema_version": LVM_SCHEMA_VERSION,
        "extractor": net_to_dict(model.extractor),
        "head_w": model.head_w.tolist(),
        "head_b": model.head_b.tolist(),
        "input_center": model.input_center.tolist(),
        "input_scale": model.input_scale.tolist(),
        "meta": model.meta,
    }


def model_from_dict(obj):
    if obj.get("schema_version") != LVM_SCHEMA_VERSION:
        raise ConfigError(f"unsupported lvm schema_version {obj.get('schema_version')!r}")
    return LvmModel(
        net_from_dict(obj["extractor"]),
        np.asarray(obj["head_w"], dtype=float),
        np.asarray(obj["head_b"], dtype=float),
        input_center=np.asarray(obj["input_center"], dtype=float),
        input_scale=np.asarray(obj["input_scale"], dtype=float),
        meta=dict(obj.get("meta", {})),
    )


def arms_to_list(est: ArmEstimates):
    return [
        {
            "arm_id": int(a),
            "theta": est.theta[a].tolist(),
            "n_samples": int(est.n_samples[a]),
            "resid_var": float(est.resid_var[a]),
        }
        for a in range(est.theta.shape[0])
    ]


def arms_from_list(items):
    items = sorted(items, key=lambda d: d["arm_id"])
    theta = np.asarray([d["theta"] for d in items], dtype=float)
    counts = np.asarray([d["n_samples"] for d in items], dtype=np.int64)
    resid = np.asarray([d["resid_var"] for d in items], dtype=float)
    return ArmEstimates(theta, counts, resid)
