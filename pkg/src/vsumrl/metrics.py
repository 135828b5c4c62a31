"""Temporal-overlap evaluation: precision/recall/F1, multi-annotator
reduction, oracle summaries, dataset splits and the summary-length study.

Overlap is counted in frames between binary masks. Zero denominators are
defined as zero: empty predictions give precision 0, empty references give
recall 0 and F1 is 0 whenever P + R is 0.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataio import AnnotationSet, FeatureSequence
from .errors import ConfigError, DegenerateInputError
from .shots import ShotItem, build_summary, knapsack_select, top_scoring_mask
from .validation import check_fraction, check_mask


def precision_recall(predicted, reference) -> tuple[float, float]:
    """Frame-overlap precision and recall of a predicted mask."""
    pred = check_mask(predicted, name="predicted mask")
    ref = check_mask(reference, length=pred.shape[0], name="reference mask")
    overlap = int((pred & ref).sum())
    n_pred = int(pred.sum())
    n_ref = int(ref.sum())
    precision = overlap / n_pred if n_pred else 0.0
    recall = overlap / n_ref if n_ref else 0.0
    return precision, recall


def f1(precision: float, recall: float) -> float:
    """Harmonic mean, 0 when both inputs are 0."""
    if not (0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0):
        raise ValueError("precision and recall must lie in [0, 1]")
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class EvalResult:
    per_user: list[tuple[float, float, float]]   # (precision, recall, f1)
    reduced_f1: float
    reduction: str
    budget_fraction: float | None = None

    @property
    def mean_precision(self) -> float:
        return float(np.mean([u[0] for u in self.per_user]))

    @property
    def mean_recall(self) -> float:
        return float(np.mean([u[1] for u in self.per_user]))


def reference_masks(annotations: AnnotationSet,
                    budget_fraction: float | None = None) -> list[np.ndarray]:
    """Per-user binary reference masks.

    Keyframe masks pass through unchanged. Score-style annotations are
    converted per user with the same machinery used for predictions: frame
    scores pick the top frames under the budget; shot scores run the
    knapsack over the annotated shots. Both conversions need a budget.
    """
    if annotations.kind == "keyframe_mask":
        return [u.astype(np.int64) for u in annotations.users]
    if budget_fraction is None:
        raise ConfigError(
            f"{annotations.kind} annotations need a budget to become masks")
    fraction = check_fraction(budget_fraction, "budget_fraction")
    n = annotations.n_frames
    capacity = int(np.floor(fraction * n))
    masks = []
    if annotations.kind == "frame_scores":
        for user in annotations.users:
            masks.append(top_scoring_mask(user, capacity))
        return masks
    for user in annotations.users:  # shot_scores
        items = [ShotItem(start=a, end=b, value=float(user[a:b].mean()), has_keyframe=True)
                 for a, b in zip(annotations.boundaries, annotations.boundaries[1:])]
        chosen = knapsack_select(items, capacity)
        mask = np.zeros(n, dtype=np.int64)
        for i in chosen:
            mask[items[i].start:items[i].end] = 1
        masks.append(mask)
    return masks


def f1_multi_user(predicted, annotations: AnnotationSet | Sequence,
                  reduction: str = "mean",
                  budget_fraction: float | None = None) -> EvalResult:
    """Per-user F1 reduced by mean or max over annotators."""
    if reduction not in ("mean", "max"):
        raise ValueError(f"reduction must be mean or max, got {reduction!r}")
    if isinstance(annotations, AnnotationSet):
        refs = reference_masks(annotations, budget_fraction)
    else:
        refs = [check_mask(r) for r in annotations]
    if not refs:
        raise DegenerateInputError("at least one reference annotation is required")
    per_user = []
    for ref in refs:
        p, r = precision_recall(predicted, ref)
        per_user.append((p, r, f1(p, r)))
    scores = [u[2] for u in per_user]
    reduced = float(np.mean(scores)) if reduction == "mean" else float(np.max(scores))
    return EvalResult(per_user=per_user, reduced_f1=reduced, reduction=reduction,
                      budget_fraction=budget_fraction)


# ---------------------------------------------------------------------------
# oracle summary


def consensus_scores(annotations: AnnotationSet) -> np.ndarray:
    """Mean per-user importance, the regression target for supervised runs."""
    return np.mean(annotations.users, axis=0)


def oracle_summary(annotations: AnnotationSet, budget_fraction: float,
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Greedy mask maximizing mean per-user F1, plus the consensus scores.

    Starting empty, repeatedly add the frame with the largest mean-F1 gain;
    stop at the budget or as soon as no frame improves the mean F1.
    """
    fraction = check_fraction(budget_fraction, "budget_fraction")
    refs = reference_masks(annotations, fraction)
    n = annotations.n_frames
    capacity = int(np.floor(fraction * n))
    ref_matrix = np.stack(refs).astype(np.float64)          # [U, n]
    ref_sizes = ref_matrix.sum(axis=1)

    mask = np.zeros(n, dtype=np.int64)
    overlap = np.zeros(len(refs))
    current = 0.0
    for size in range(1, capacity + 1):
        # mean F1 after adding each candidate frame, vectorized over frames
        gains = overlap[:, None] + ref_matrix                # [U, n]
        denom = size + ref_sizes[:, None]
        scores = np.where(denom > 0, 2.0 * gains / denom, 0.0).mean(axis=0)
        scores[mask == 1] = -1.0
        best = int(np.argmax(scores))
        if scores[best] <= current + 1e-15:
            break
        mask[best] = 1
        overlap += ref_matrix[:, best]
        current = scores[best]
    return mask, consensus_scores(annotations)


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    test: tuple[str, ...]


def split_dataset(video_ids: Sequence[str], n_splits: int = 5,
                  train_fraction: float = 0.8, seed: int = 0) -> list[Split]:
    """Random train/test partitions, deterministic per seed."""
    ids = list(video_ids)
    if len(ids) < 2:
        raise DegenerateInputError("need at least two videos to split")
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    fraction = check_fraction(train_fraction, "train_fraction")
    rng = np.random.default_rng(seed)
    n_train = min(max(int(len(ids) * fraction), 1), len(ids) - 1)
    splits = []
    for _ in range(n_splits):
        order = [ids[i] for i in rng.permutation(len(ids))]
        splits.append(Split(train=tuple(order[:n_train]), test=tuple(order[n_train:])))
    return splits


# ---------------------------------------------------------------------------
# dataset evaluation and the length study


def important_fraction(annotations: AnnotationSet) -> float:
    """Per-video ground-truth important-frame proportion (mean over users)."""
    return annotations.important_fraction()


@dataclass
class EvalRow:
    video_id: str
    split: int
    budget_label: str
    budget_fraction: float
    precision: float
    recall: float
    f1_mean: float
    f1_max: float


def predicted_mask(scores: np.ndarray, frame_vectors: np.ndarray,
                   budget_fraction: float, mode: str = "keyframe") -> np.ndarray:
    """Budgeted prediction mask, frame-level (top scores) or key-shot level."""
    if mode == "keyframe":
        capacity = int(np.floor(budget_fraction * len(scores)))
        return top_scoring_mask(scores, capacity)
    if mode == "keyshot":
        return build_summary(scores, frame_vectors, budget_fraction).mask
    raise ConfigError(f"unknown evaluation mode {mode!r}")


def resolve_budget(budget, annotations: AnnotationSet) -> tuple[str, float]:
    """A budget is a fraction or the sentinel "P" (per-video GT proportion)."""
    if isinstance(budget, str):
        if budget != "P":
            raise ConfigError(f"unknown budget {budget!r}")
        return "P", important_fraction(annotations)
    return f"{float(budget):g}", check_fraction(float(budget), "budget")


def evaluate_videos(score_fn: Callable[[FeatureSequence], np.ndarray],
                    videos: Sequence[tuple[FeatureSequence, AnnotationSet]],
                    budgets: Sequence = (0.15,), mode: str = "keyframe",
                    split: int = 0, jobs: int = 1) -> list[EvalRow]:
    """Score every video and evaluate each budget against its annotations."""

    def one(pair):
        seq, ann = pair
        if ann is None:
            raise ConfigError(f"video {seq.video_id!r} has no annotations to evaluate")
        scores = score_fn(seq)
        vectors = seq.frame_vectors()
        rows = []
        for budget in budgets:
            label, fraction = resolve_budget(budget, ann)
            pred = predicted_mask(scores, vectors, fraction, mode)
            mean_res = f1_multi_user(pred, ann, "mean", budget_fraction=fraction)
            max_res = f1_multi_user(pred, ann, "max", budget_fraction=fraction)
            rows.append(EvalRow(video_id=seq.video_id, split=split, budget_label=label,
                                budget_fraction=fraction,
                                precision=mean_res.mean_precision,
                                recall=mean_res.mean_recall,
                                f1_mean=mean_res.reduced_f1,
                                f1_max=max_res.reduced_f1))
        return rows

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            nested = list(pool.map(one, videos))
    else:
        nested = [one(pair) for pair in videos]
    return [row for rows in nested for row in rows]


def length_study(score_fn: Callable[[FeatureSequence], np.ndarray],
                 videos: Sequence[tuple[FeatureSequence, AnnotationSet]],
                 budgets: Sequence = (0.15, 0.20, 0.25, "P"),
                 mode: str = "keyframe", reduction: str = "mean",
                 jobs: int = 1) -> tuple[list[EvalRow], list[tuple[str, float]]]:
    """Reduced F1 per budget constraint; returns rows and plot pairs."""
    rows = evaluate_videos(score_fn, videos, budgets=budgets, mode=mode, jobs=jobs)
    pairs = []
    for budget in budgets:
        label = budget if isinstance(budget, str) else f"{float(budget):g}"
        values = [r.f1_mean if reduction == "mean" else r.f1_max
                  for r in rows if r.budget_label == label]
        pairs.append((label, float(np.mean(values))))
    return rows, pairs


# ---------------------------------------------------------------------------
# result files


def write_results(path, rows: Sequence[EvalRow]) -> None:
    lines = ["video\tsplit\tbudget\tfraction\tprecision\trecall\tf1_mean\tf1_max"]
    for r in rows:
        lines.append(f"{r.video_id}\t{r.split}\t{r.budget_label}\t{r.budget_fraction:.6f}"
                     f"\t{r.precision:.6f}\t{r.recall:.6f}\t{r.f1_mean:.6f}\t{r.f1_max:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_plot_data(path, pairs: Sequence[tuple[str, float]]) -> None:
    lines = ["budget\tmean_f1"]
    lines.extend(f"{label}\t{value:.6f}" for label, value in pairs)
    Path(path).write_text("\n".join(lines) + "\n")
