"""Key-shot extraction: change-point segmentation, keyframes, knapsack packing.

``build_summary`` chains the stages: segment the frames into shots by
kernel change-point detection, mark shots containing a thresholded
keyframe as candidates, then pick candidate shots by exact 0/1 knapsack
under a frame-count budget and emit the union mask.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, ParseError
from .validation import check_fraction, check_frame_vectors, check_mask, check_random_state, \
    check_scores

SUMMARY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ShotSegmentation:
    """Ordered change points 0 = b0 < ... < bm = L covering every frame."""

    boundaries: tuple[int, ...]

    def __post_init__(self):
        b = tuple(int(v) for v in self.boundaries)
        if len(b) < 2 or b[0] != 0 or any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError(f"boundaries must satisfy 0 = b0 < ... < bm, got {b}")
        object.__setattr__(self, "boundaries", b)

    @property
    def n_frames(self) -> int:
        return self.boundaries[-1]

    @property
    def shots(self) -> list[tuple[int, int]]:
        return list(zip(self.boundaries[:-1], self.boundaries[1:]))


@dataclass(frozen=True)
class ShotItem:
    start: int
    end: int
    value: float          # mean predicted frame score over the interval
    has_keyframe: bool

    @property
    def weight(self) -> int:
        return self.end - self.start


@dataclass
class Summary:
    mask: np.ndarray
    items: list[ShotItem]
    selected: tuple[int, ...]      # indices into items
    capacity: int
    budget_fraction: float
    status: str = "ok"


# ---------------------------------------------------------------------------
# kernel temporal segmentation


def _scatter_table(x: np.ndarray) -> np.ndarray:
    """g[i, j] = within-segment scatter of frames [i, j) under a linear kernel.

    Rows are L2-normalized first; g(i, j) = sum_t K_tt - mean over the block
    of K, both derived from prefix sums of the Gram matrix.
    """
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    gram = (x / safe) @ (x / safe).T
    n = x.shape[0]
    diag_cum = np.concatenate([[0.0], np.cumsum(np.diag(gram))])
    block = np.zeros((n + 1, n + 1))
    block[1:, 1:] = gram.cumsum(axis=0).cumsum(axis=1)

    i = np.arange(n + 1)[:, None]
    j = np.arange(n + 1)[None, :]
    lengths = np.maximum(j - i, 1)
    block_sum = block[j, j] - block[i, j] - block[j, i] + block[i, i]
    table = (diag_cum[j] - diag_cum[i]) - block_sum / lengths
    return np.where(j > i, table, 0.0)


def kts_segment(frame_vectors, max_segments: int | None = None,
                penalty: float = 1.0) -> ShotSegmentation:
    """Optimal change-point segmentation by dynamic programming.

    Minimizes total within-segment scatter plus ``penalty * m * (log(L/m) + 1)``
    over segment counts m up to ``max_segments`` (default L // 10, at least 1).
    """
    x = check_frame_vectors(frame_vectors)
    n = x.shape[0]
    if n == 0:
        raise DegenerateInputError("cannot segment an empty sequence")
    if max_segments is None:
        max_segments = max(1, n // 10)
    max_segments = min(int(max_segments), n)
    if max_segments < 1:
        raise ValueError("max_segments must be >= 1")
    if penalty < 0:
        raise ValueError("penalty must be >= 0")

    g = _scatter_table(x)
    # cost[c][j]: best scatter splitting the first j frames into c segments
    cost = np.full((max_segments + 1, n + 1), np.inf)
    back = np.zeros((max_segments + 1, n + 1), dtype=np.int64)
    cost[0, 0] = 0.0
    for c in range(1, max_segments + 1):
        for j in range(c, n + 1):
            candidates = cost[c - 1, c - 1:j] + g[c - 1:j, j]
            best = int(np.argmin(candidates))
            cost[c, j] = candidates[best]
            back[c, j] = best + c - 1

    objective = [cost[m, n] + penalty * m * (np.log(n / m) + 1.0)
                 for m in range(1, max_segments + 1)]
    m_best = int(np.argmin(objective)) + 1

    bounds = [n]
    j = n
    for c in range(m_best, 0, -1):
        j = int(back[c, j])
        bounds.append(j)
    return ShotSegmentation(boundaries=tuple(reversed(bounds)))


# ---------------------------------------------------------------------------
# keyframes and masks


def keyframes_from_scores(scores, mode: str = "threshold", seed=None) -> np.ndarray:
    """Frame indices selected from scores: ``threshold`` at 0.5 or ``sample``."""
    p = check_scores(scores)
    if mode == "threshold":
        return np.flatnonzero(p >= 0.5)
    if mode == "sample":
        rng = check_random_state(seed)
        clipped = np.clip(p, 1e-6, 1.0 - 1e-6)
        return np.flatnonzero(rng.random(p.shape[0]) < clipped)
    raise ValueError(f"unknown keyframe mode {mode!r}")


def top_scoring_mask(scores, capacity: int) -> np.ndarray:
    """Mask of the ``capacity`` highest-scoring frames; ties go to earlier frames."""
    p = check_scores(scores)
    capacity = int(capacity)
    if capacity < 0:
        raise ValueError("capacity must be >= 0")
    mask = np.zeros(p.shape[0], dtype=np.int64)
    if capacity:
        order = np.argsort(-p, kind="stable")
        mask[order[:capacity]] = 1
    return mask


# ---------------------------------------------------------------------------
# knapsack


def knapsack_select(items, capacity: int) -> tuple[int, ...]:
    """Exact 0/1 knapsack over shot items, maximizing total value.

    Ties break toward fewer total frames, then toward the lexicographically
    earliest index tuple, so results are deterministic.
    """
    capacity = int(capacity)
    if capacity < 0:
        raise ValueError("capacity must be >= 0")
    weights = [int(it.weight) for it in items]
    values = [float(it.value) for it in items]
    if any(w < 1 for w in weights):
        raise ValueError("item weights must be >= 1")

    # dp[c] = (value, total_weight, selection) best among subsets of weight <= c
    dp: list[tuple[float, int, tuple[int, ...]]] = [(0.0, 0, ())] * (capacity + 1)
    for index, (w, v) in enumerate(zip(weights, values)):
        if w > capacity:
            continue
        for c in range(capacity, w - 1, -1):
            prev_v, prev_w, prev_sel = dp[c - w]
            candidate = (prev_v + v, prev_w + w, prev_sel + (index,))
            current = dp[c]
            if (candidate[0] > current[0]
                    or (candidate[0] == current[0] and candidate[1] < current[1])
                    or (candidate[0] == current[0] and candidate[1] == current[1]
                        and candidate[2] < current[2])):
                dp[c] = candidate
    return dp[capacity][2]


# ---------------------------------------------------------------------------
# end-to-end summary


def build_summary(scores, frame_vectors, budget_fraction: float = 0.15,
                  max_segments: int | None = None, penalty: float = 1.0) -> Summary:
    """Scores to key-shot summary: segment, mark candidates, pack, union."""
    p = check_scores(scores)
    x = check_frame_vectors(frame_vectors)
    if p.shape[0] != x.shape[0]:
        raise ValueError(f"scores cover {p.shape[0]} frames, features {x.shape[0]}")
    fraction = check_fraction(budget_fraction, "budget_fraction")
    n = p.shape[0]

    segmentation = kts_segment(x, max_segments=max_segments, penalty=penalty)
    keyframes = keyframes_from_scores(p, mode="threshold")
    items = []
    for start, end in segmentation.shots:
        covered = bool(np.any((keyframes >= start) & (keyframes < end)))
        items.append(ShotItem(start=start, end=end,
                              value=float(p[start:end].mean()), has_keyframe=covered))
    candidates = [it for it in items if it.has_keyframe]
    capacity = int(np.floor(fraction * n))
    chosen_local = knapsack_select(candidates, capacity)
    candidate_indices = [i for i, it in enumerate(items) if it.has_keyframe]
    chosen = tuple(candidate_indices[i] for i in chosen_local)

    mask = np.zeros(n, dtype=np.int64)
    for i in chosen:
        mask[items[i].start:items[i].end] = 1
    status = "ok"
    if candidates and not chosen:
        status = "empty"
        warnings.warn("no candidate shot fits the summary budget", stacklevel=2)
    elif not candidates:
        status = "empty"
    return Summary(mask=mask, items=items, selected=chosen, capacity=capacity,
                   budget_fraction=fraction, status=status)


# ---------------------------------------------------------------------------
# summary file format


def write_summary(path, video_id: str, summary: Summary) -> None:
    """Line-oriented summary record: one shot per line plus the frame mask."""
    lines = [f"# vsumrl-summary v{SUMMARY_FORMAT_VERSION}",
             f"video {video_id} frames {len(summary.mask)} "
             f"budget {summary.budget_fraction!r} capacity {summary.capacity} "
             f"status {summary.status}"]
    for i, item in enumerate(summary.items):
        flag = 1 if i in summary.selected else 0
        lines.append(f"shot {item.start} {item.end} {item.value:.8f} {flag}")
    lines.append("mask " + "".join(str(int(v)) for v in summary.mask))
    Path(path).write_text("\n".join(lines) + "\n")


def read_summary(path) -> dict:
    """Parse a summary file back into its fields (for tooling and tests)."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("# vsumrl-summary"):
        raise ParseError(f"{path}:1: missing summary header")
    meta = lines[1].split()
    if len(meta) != 10 or meta[0] != "video":
        raise ParseError(f"{path}:2: malformed metadata line")
    shots = []
    selected = []
    mask = None
    for line_no, line in enumerate(lines[2:], start=3):
        parts = line.split()
        if parts[0] == "shot":
            start, end, value, flag = int(parts[1]), int(parts[2]), float(parts[3]), int(parts[4])
            if flag:
                selected.append(len(shots))
            shots.append((start, end, value))
        elif parts[0] == "mask":
            mask = np.array([int(ch) for ch in parts[1]], dtype=np.int64)
        else:
            raise ParseError(f"{path}:{line_no}: unknown record {parts[0]!r}")
    if mask is None:
        raise ParseError(f"{path}: missing mask record")
    return {"video_id": meta[1], "n_frames": int(meta[3]),
            "budget_fraction": float(meta[5]), "capacity": int(meta[7]),
            "status": meta[9], "shots": shots, "selected": tuple(selected),
            "mask": mask}
