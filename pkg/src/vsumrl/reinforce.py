"""Rewards, regularizers, Bernoulli rollouts and policy-gradient training.

An episode samples a binary keep/drop action per frame from the scorer's
probabilities. The episode reward is the sum of a representativeness term
(exponential of the negative mean distance from every frame to its nearest
selected frame) and a diversity term (mean pairwise cosine dissimilarity
among selected frames). Rewards reach the parameters only through the
score-function estimator ``(R - c) * grad log pi`` with a moving-average
baseline ``c``; the regularizers (and the supervised prediction loss)
backpropagate directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataio import FeatureSequence, pad_to_pow2
from .errors import ConfigError, DegenerateInputError, DivergenceError, NumericError, \
    SaturationError
from .model import ForwardResult, ModelConfig, forward, init_params
from .validation import check_frame_vectors, check_random_state, check_scores

PROBABILITY_FLOOR = 1e-6
BINARY_LOSS_CAP = 1e6


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-episode reward components; ``flag`` marks degenerate selections."""

    representativeness: float
    diversity: float
    total: float
    flag: str = ""


@dataclass
class TrainConfig:
    paradigm: str = "unsupervised"
    target_proportion: float = 0.5   # regularizer pulls mean score here
    binary_weight: float = 0.01      # weight of the binariness regularizer
    episodes: int = 5                # sampled rollouts per video
    baseline_decay: float = 0.9
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-6
    epochs: int = 50
    lr_step_epochs: int = 30
    lr_decay: float = 0.5
    use_rep_reward: bool = True
    use_div_reward: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.paradigm not in ("unsupervised", "supervised"):
            raise ConfigError(f"paradigm must be unsupervised or supervised, "
                              f"got {self.paradigm!r}")
        if self.binary_weight < 0:
            raise ConfigError("binary_weight must be >= 0")
        if not 0.0 < self.target_proportion < 1.0:
            raise ConfigError("target_proportion must lie in (0, 1)")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ConfigError("baseline_decay must lie in [0, 1)")
        if self.epochs < 0 or self.lr_step_epochs < 1:
            raise ConfigError("epochs must be >= 0 and lr_step_epochs >= 1")


@dataclass
class Baseline:
    """Moving average of past episode rewards, subtracted inside the estimator."""

    decay: float = 0.9
    value: float = 0.0
    count: int = 0

    def update(self, reward: float) -> None:
        self.value = self.decay * self.value + (1.0 - self.decay) * reward
        self.count += 1


# ---------------------------------------------------------------------------
# rewards


def representativeness_reward(frame_vectors: np.ndarray, selected) -> float:
    """exp(-mean over frames of the L2 distance to the nearest selected frame)."""
    x = check_frame_vectors(frame_vectors)
    selected = np.asarray(sorted(set(int(i) for i in selected)), dtype=np.int64)
    if selected.size == 0:
        raise DegenerateInputError("representativeness requires a nonempty selection")
    distances = np.linalg.norm(x[:, None, :] - x[selected][None, :, :], axis=2)
    return float(np.exp(-distances.min(axis=1).mean()))


def diversity_reward(frame_vectors: np.ndarray, selected) -> float:
    """Mean pairwise cosine dissimilarity (1 - cos) among selected frames."""
    x = check_frame_vectors(frame_vectors)
    selected = np.asarray(sorted(set(int(i) for i in selected)), dtype=np.int64)
    if selected.size < 2:
        raise DegenerateInputError("diversity requires at least two selected frames")
    chosen = x[selected]
    norms = np.linalg.norm(chosen, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("diversity is undefined for zero-norm feature vectors")
    cosine = np.clip((chosen @ chosen.T) / np.outer(norms, norms), -1.0, 1.0)
    dissimilarity = 1.0 - cosine
    np.fill_diagonal(dissimilarity, 0.0)
    m = selected.size
    return float(dissimilarity.sum() / (m * (m - 1)))


def episode_reward(frame_vectors: np.ndarray, actions: np.ndarray,
                   use_rep: bool = True, use_div: bool = True) -> RewardBreakdown:
    """Reward of one action trace; degenerate selections score 0 and are flagged."""
    selected = np.flatnonzero(np.asarray(actions))
    if selected.size == 0:
        return RewardBreakdown(0.0, 0.0, 0.0, flag="empty-selection")
    rep = representativeness_reward(frame_vectors, selected) if use_rep else 0.0
    flag = ""
    if use_div:
        if selected.size >= 2:
            div = diversity_reward(frame_vectors, selected)
        else:
            div, flag = 0.0, "single-selection"
    else:
        div = 0.0
    return RewardBreakdown(rep, div, rep + div, flag=flag)


# ---------------------------------------------------------------------------
# regularizers and losses (plain values)


def proportion_loss(scores: np.ndarray, target: float) -> float:
    """Squared gap between the mean selection probability and the target."""
    p = check_scores(scores)
    return float((p.mean() - target) ** 2)


def binary_loss(scores: np.ndarray) -> float:
    """Reciprocal of the mean |p - 0.5|; diverges when every score is 0.5."""
    p = check_scores(scores)
    gap = np.abs(p - 0.5).mean()
    if gap == 0.0:
        raise SaturationError(
            "every probability equals 0.5; treat the binariness penalty as 1e6")
    return float(1.0 / gap)


def regularizer_loss(scores: np.ndarray, target: float, binary_weight: float) -> float:
    try:
        binary = binary_loss(scores)
    except SaturationError:
        binary = BINARY_LOSS_CAP
    return proportion_loss(scores, target) + binary_weight * binary


def unsupervised_loss(scores: np.ndarray, rewards: Sequence[RewardBreakdown],
                      cfg: TrainConfig) -> float:
    """Regularizers minus the mean episode reward."""
    mean_reward = float(np.mean([r.total for r in rewards])) if rewards else 0.0
    return regularizer_loss(scores, cfg.target_proportion, cfg.binary_weight) - mean_reward


def prediction_loss(scores: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error against reference frame importance scores."""
    p = check_scores(scores)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != p.shape:
        raise ValueError(f"targets have shape {t.shape}, scores have {p.shape}")
    return float(np.mean((p - t) ** 2))


def supervised_loss(scores: np.ndarray, targets: np.ndarray,
                    rewards: Sequence[RewardBreakdown], cfg: TrainConfig) -> float:
    return prediction_loss(scores, targets) + unsupervised_loss(scores, rewards, cfg)


# ---------------------------------------------------------------------------
# sampling


def clamp_probabilities(scores: np.ndarray) -> np.ndarray:
    return np.clip(scores, PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)


def sample_actions(scores: np.ndarray, rng) -> np.ndarray:
    """Independent Bernoulli draws from clamped probabilities."""
    rng = check_random_state(rng)
    p = clamp_probabilities(check_scores(scores))
    return (rng.random(p.shape[0]) < p).astype(np.int64)


# ---------------------------------------------------------------------------
# policy gradient


@dataclass
class StepResult:
    gradients: dict[str, np.ndarray]
    rewards: list[RewardBreakdown]
    losses: dict[str, float]


class RewardTables:
    """Per-video pairwise distance and cosine-dissimilarity matrices.

    Episode rewards are pure functions of these static tables, so sampling
    many episodes per step costs little more than sampling few.
    """

    def __init__(self, frame_vectors: np.ndarray):
        x = check_frame_vectors(frame_vectors)
        diff = x[:, None, :] - x[None, :, :]
        self.distances = np.sqrt((diff * diff).sum(axis=2))
        norms = np.linalg.norm(x, axis=1)
        self.zero_norm = bool(np.any(norms == 0.0))
        if not self.zero_norm:
            cosine = np.clip((x @ x.T) / np.outer(norms, norms), -1.0, 1.0)
            self.dissimilarity = 1.0 - cosine
            np.fill_diagonal(self.dissimilarity, 0.0)
        else:
            self.dissimilarity = None

    def episode(self, actions: np.ndarray, use_rep: bool, use_div: bool) -> RewardBreakdown:
        selected = np.flatnonzero(np.asarray(actions))
        if selected.size == 0:
            return RewardBreakdown(0.0, 0.0, 0.0, flag="empty-selection")
        rep = 0.0
        if use_rep:
            rep = float(np.exp(-self.distances[:, selected].min(axis=1).mean()))
        div, flag = 0.0, ""
        if use_div:
            if selected.size < 2:
                flag = "single-selection"
            else:
                if self.dissimilarity is None:
                    raise DegenerateInputError(
                        "diversity is undefined for zero-norm feature vectors")
                m = selected.size
                div = float(self.dissimilarity[np.ix_(selected, selected)].sum()
                            / (m * (m - 1)))
        return RewardBreakdown(rep, div, rep + div, flag=flag)


def _surrogate_nodes(result: ForwardResult, traces: np.ndarray, advantages: np.ndarray,
                     cfg: TrainConfig, targets: np.ndarray | None):
    """Build the differentiable surrogate whose gradient is the training update.

    The reinforcement term collapses the per-episode score-function sums
    into constant per-frame weights: sum_e adv_e * [a log p + (1-a) log(1-p)]
    equals <w_sel, log p> + <w_rej, log(1-p)> with w_sel = sum_e adv_e a_e / k.
    """
    k = traces.shape[0]
    w_sel = (advantages[:, None] * traces).sum(axis=0) / k
    w_rej = (advantages[:, None] * (1 - traces)).sum(axis=0) / k
    if result.logits is not None:
        log_keep = ad.log_sigmoid(result.logits)
        log_drop = ad.log_sigmoid(ad.scale(result.logits, -1.0))
    else:
        log_keep = ad.log(result.probs)
        log_drop = ad.log(ad.add_constant(ad.scale(result.probs, -1.0), 1.0))
    reinforce_term = ad.add(ad.sum_all(ad.scale(log_keep, w_sel)),
                            ad.sum_all(ad.scale(log_drop, w_rej)))
    loss = ad.scale(reinforce_term, -1.0)
    losses = {"reinforce": float(loss.data)}

    proportion = ad.square(ad.add_constant(ad.mean_all(result.probs),
                                           -cfg.target_proportion))
    losses["proportion"] = float(proportion.data)
    loss = ad.add(loss, proportion)

    gap = ad.mean_all(ad.absolute(ad.add_constant(result.probs, -0.5)))
    if gap.data == 0.0:
        losses["binary"] = BINARY_LOSS_CAP
    else:
        binary = ad.reciprocal(gap)
        losses["binary"] = float(binary.data)
        loss = ad.add(loss, ad.scale(binary, cfg.binary_weight))

    if cfg.paradigm == "supervised":
        if targets is None:
            raise ConfigError("supervised training requires target scores")
        diff = ad.add_constant(result.probs, -np.asarray(targets, dtype=np.float64))
        pred = ad.mean_all(ad.square(diff))
        losses["prediction"] = float(pred.data)
        loss = ad.add(loss, pred)
    losses["surrogate"] = float(loss.data)
    return loss, losses


def policy_gradient_step(policy_fn: Callable[[], ForwardResult], frame_vectors: np.ndarray,
                         params: Mapping[str, Tensor], cfg: TrainConfig, baseline: Baseline,
                         rng, targets: np.ndarray | None = None,
                         tables: RewardTables | None = None) -> StepResult:
    """One REINFORCE update for one video.

    Runs ``cfg.episodes`` sampled episodes against a fresh forward pass,
    averages ``(R - c) * grad log pi`` over episodes, adds the regularizer
    (and supervised) gradients, and finally folds the mean episode reward
    into the baseline.
    """
    rng = check_random_state(rng)
    result = policy_fn()
    probs = result.probs.data
    clamped = clamp_probabilities(probs)
    length = probs.shape[0]

    if tables is None:
        tables = RewardTables(frame_vectors)
    traces = (rng.random((cfg.episodes, length)) < clamped[None, :]).astype(np.int64)
    rewards = [tables.episode(trace, cfg.use_rep_reward, cfg.use_div_reward)
               for trace in traces]
    totals = np.array([r.total for r in rewards])
    advantages = totals - baseline.value

    loss, losses = _surrogate_nodes(result, traces, advantages, cfg, targets)
    gradients = ad.collect_gradients(loss, params)
    for name, grad in gradients.items():
        if not np.isfinite(grad).all():
            raise NumericError(
                f"non-finite gradient for {name!r}; episode rewards were "
                f"{[round(r.total, 6) for r in rewards]}")
    losses["mean_reward"] = float(totals.mean())
    losses["unsupervised"] = unsupervised_loss(probs, rewards, cfg)
    if cfg.paradigm == "supervised" and targets is not None:
        losses["supervised"] = losses["unsupervised"] + losses["prediction"]
    baseline.update(float(totals.mean()))
    return StepResult(gradients=gradients, rewards=rewards, losses=losses)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    history: list[dict]
    baseline: Baseline = field(default_factory=Baseline)


def train(videos: Sequence[FeatureSequence], model_cfg: ModelConfig, cfg: TrainConfig,
          targets: Mapping[str, np.ndarray] | None = None,
          log: Callable[[dict], None] | None = None) -> TrainResult:
    """SGD with momentum and weight decay over per-video REINFORCE steps.

    The learning rate halves every ``lr_step_epochs`` epochs (step decay).
    Deterministic for a fixed seed: fixed video order, one RNG stream.
    """
    if not videos:
        raise DegenerateInputError("training requires at least one video")
    if cfg.paradigm == "supervised":
        missing = [v.video_id for v in videos if targets is None or v.video_id not in targets]
        if missing:
            raise ConfigError(f"supervised training requires target scores; missing {missing}")

    prepared = []
    for seq in videos:
        padded, n_frames = pad_to_pow2(seq, model_cfg.levels)
        vectors = seq.frame_vectors()
        prepared.append((seq.video_id, padded, n_frames, vectors, RewardTables(vectors)))

    params = init_params(model_cfg, cfg.seed)
    # start the policy at the configured selection rate instead of 0.5
    params["head.bias"].data[:] = np.log(cfg.target_proportion
                                         / (1.0 - cfg.target_proportion))
    velocity = {name: np.zeros_like(t.data) for name, t in params.items()}
    baseline = Baseline(decay=cfg.baseline_decay)
    rng = np.random.default_rng([cfg.seed, 1])

    # prime the baseline at the initial policy's reward level, otherwise the
    # first steps see advantages the size of the full reward and the policy
    # saturates before any learning happens
    if cfg.epochs > 0:
        probe_rewards = []
        for _, padded, n_frames, _, tables in prepared:
            probs = forward(padded.features, params, model_cfg).probs.data[:n_frames]
            draws = (rng.random((cfg.episodes, n_frames))
                     < clamp_probabilities(probs)[None, :]).astype(np.int64)
            probe_rewards.extend(
                tables.episode(t, cfg.use_rep_reward, cfg.use_div_reward).total
                for t in draws)
        baseline.value = float(np.mean(probe_rewards))
    history: list[dict] = []
    last_good = {name: t.data.copy() for name, t in params.items()}

    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay ** (epoch // cfg.lr_step_epochs)
        epoch_rewards: list[RewardBreakdown] = []
        epoch_losses: list[float] = []
        for video_id, padded, n_frames, frame_vecs, tables in prepared:
            def rollout() -> ForwardResult:
                full = forward(padded.features, params, model_cfg)
                if full.probs.data.shape[0] == n_frames:
                    return full
                return ForwardResult(probs=ad.slice_range(full.probs, 0, n_frames),
                                     logits=ad.slice_range(full.logits, 0, n_frames))

            try:
                step = policy_gradient_step(rollout, frame_vecs, params, cfg, baseline, rng,
                                            targets.get(video_id) if targets else None,
                                            tables=tables)
            except NumericError as exc:
                raise DivergenceError(
                    f"training diverged at epoch {epoch} on {video_id!r}: {exc}",
                    last_good=last_good) from exc
            for name, tensor in params.items():
                update = step.gradients[name] + cfg.weight_decay * tensor.data
                velocity[name] = cfg.momentum * velocity[name] - lr * update
                tensor.data = tensor.data + velocity[name]
            epoch_rewards.extend(step.rewards)
            epoch_losses.append(step.losses["surrogate"])
            if log is not None:
                log({"epoch": epoch, "video": video_id, "lr": lr,
                     "representativeness": float(np.mean(
                         [r.representativeness for r in step.rewards])),
                     "diversity": float(np.mean([r.diversity for r in step.rewards])),
                     "empty_episodes": sum(r.flag == "empty-selection" for r in step.rewards),
                     **{f"loss_{k}": v for k, v in step.losses.items()}})

        if not all(np.isfinite(t.data).all() for t in params.values()):
            raise DivergenceError(
                f"parameters diverged at epoch {epoch}", last_good=last_good)
        last_good = {name: t.data.copy() for name, t in params.items()}
        history.append({
            "epoch": epoch,
            "lr": lr,
            "mean_representativeness": float(np.mean(
                [r.representativeness for r in epoch_rewards])),
            "mean_diversity": float(np.mean([r.diversity for r in epoch_rewards])),
            "mean_total_reward": float(np.mean([r.total for r in epoch_rewards])),
            "mean_surrogate_loss": float(np.mean(epoch_losses)),
            "baseline": baseline.value,
        })
    return TrainResult(params=params, history=history, baseline=baseline)
