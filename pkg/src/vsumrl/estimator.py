"""Scikit-learn style facade over the scorer, trainer and shot selector."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .dataio import AnnotationSet, FeatureSequence, pad_to_pow2
from .metrics import f1_multi_user
from .model import ModelConfig, forward
from .reinforce import TrainConfig, train
from .shots import build_summary


def as_feature_sequence(item, index: int = 0) -> FeatureSequence:
    """Accept FeatureSequence objects or raw [T, C, w, h] arrays."""
    if isinstance(item, FeatureSequence):
        return item
    return FeatureSequence(video_id=f"video{index:03d}", features=np.asarray(item),
                           expansion=1)


class VideoSummarizer(BaseEstimator, TransformerMixin):
    """Frame-importance estimator with key-shot summarization.

    ``fit`` trains the spatio-temporal U-Net scorer with policy-gradient
    reinforcement learning (optionally adding a supervised regression term
    against per-frame targets), ``predict`` returns per-frame importance
    scores, and ``transform`` converts scores into budgeted key-shot
    summary masks.

    Parameters mirror the training configuration; see ``TrainConfig`` for
    the optimization fields. ``squeezed_channels`` defaults to
    ``min(in_channels, 32)`` at fit time.
    """

    def __init__(self, squeezed_channels=None, levels=2, base_channels=16,
                 paradigm="unsupervised", epochs=50, learning_rate=0.05,
                 momentum=0.9, weight_decay=1e-6, lr_step_epochs=30, lr_decay=0.5,
                 episodes=5, baseline_decay=0.9, target_proportion=0.5,
                 binary_weight=0.01, use_rep_reward=True, use_div_reward=True,
                 budget=0.15, random_state=0):
        self.squeezed_channels = squeezed_channels
        self.levels = levels
        self.base_channels = base_channels
        self.paradigm = paradigm
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_step_epochs = lr_step_epochs
        self.lr_decay = lr_decay
        self.episodes = episodes
        self.baseline_decay = baseline_decay
        self.target_proportion = target_proportion
        self.binary_weight = binary_weight
        self.use_rep_reward = use_rep_reward
        self.use_div_reward = use_div_reward
        self.budget = budget
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(paradigm=self.paradigm,
                           target_proportion=self.target_proportion,
                           binary_weight=self.binary_weight,
                           episodes=self.episodes,
                           baseline_decay=self.baseline_decay,
                           learning_rate=self.learning_rate,
                           momentum=self.momentum,
                           weight_decay=self.weight_decay,
                           epochs=self.epochs,
                           lr_step_epochs=self.lr_step_epochs,
                           lr_decay=self.lr_decay,
                           use_rep_reward=self.use_rep_reward,
                           use_div_reward=self.use_div_reward,
                           seed=self.random_state)

    def fit(self, X, y=None):
        """Train on a collection of feature sequences.

        ``y`` supplies per-video target frame scores for the supervised
        paradigm, aligned with ``X`` (arrays of length ``frames``).
        """
        sequences = [as_feature_sequence(x, i) for i, x in enumerate(X)]
        if not sequences:
            raise ValueError("fit requires at least one video")
        channels = {s.channels for s in sequences}
        spatial = {(s.features.shape[2], s.features.shape[3]) for s in sequences}
        expansion = {s.expansion for s in sequences}
        if len(channels) > 1 or len(spatial) > 1 or len(expansion) > 1:
            raise ValueError("all videos must share channel count, spatial size "
                             "and expansion factor")
        in_channels = channels.pop()
        width, height = spatial.pop()
        squeezed = self.squeezed_channels or min(in_channels, 32)
        self.config_ = ModelConfig(in_channels=in_channels, squeezed_channels=squeezed,
                                   levels=self.levels, base_channels=self.base_channels,
                                   expansion=expansion.pop(), width=width, height=height)
        targets = None
        if y is not None:
            targets = {seq.video_id: np.asarray(t, dtype=np.float64)
                       for seq, t in zip(sequences, y)}
        result = train(sequences, self.config_, self._train_config(), targets=targets)
        self.params_ = result.params
        self.history_ = result.history
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this VideoSummarizer has not been fitted yet")

    def _scores_for(self, seq: FeatureSequence) -> np.ndarray:
        padded, n_frames = pad_to_pow2(seq, self.config_.levels)
        probs = forward(padded.features, self.params_, self.config_).probs.data
        return probs[:n_frames].copy()

    def predict(self, X) -> list[np.ndarray]:
        """Per-frame importance scores for each video."""
        self._check_fitted()
        return [self._scores_for(as_feature_sequence(x, i)) for i, x in enumerate(X)]

    def transform(self, X) -> list[np.ndarray]:
        """Budgeted key-shot summary masks for each video."""
        self._check_fitted()
        masks = []
        for i, x in enumerate(X):
            seq = as_feature_sequence(x, i)
            scores = self._scores_for(seq)
            masks.append(build_summary(scores, seq.frame_vectors(), self.budget).mask)
        return masks

    def summarize(self, x):
        """Full summary object (shots, selection, mask) for one video."""
        self._check_fitted()
        seq = as_feature_sequence(x)
        scores = self._scores_for(seq)
        return build_summary(scores, seq.frame_vectors(), self.budget)

    def score(self, X, y) -> float:
        """Mean of per-video mean-reduced F1 against annotation sets in ``y``."""
        self._check_fitted()
        masks = self.transform(X)
        values = []
        for mask, ann in zip(masks, y):
            if not isinstance(ann, AnnotationSet):
                raise TypeError("score expects AnnotationSet references")
            values.append(f1_multi_user(mask, ann, "mean",
                                        budget_fraction=self.budget).reduced_f1)
        return float(np.mean(values))
