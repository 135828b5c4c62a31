"""Feature and annotation file formats, padding, and the synthetic dataset.

Feature container (``.fseq``): 8-byte magic ``FSEQ0001``, five little-endian
uint32 fields (T, C, w, h, n), then T*C*w*h little-endian float32 values in
row-major order. Values are float32 on disk and float64 in memory.

Annotation files are line-oriented text: a header line
``video <id> frames <L> users <U> kind <kind>``, an optional
``boundaries b0 .. bm`` line (required when kind is ``shot_scores``), then
one line of L values per user. ``keyframe_mask`` values are 0/1; score
kinds lie in [0, 1].

A manifest lists one ``<video_id><TAB><feature_path><TAB><annotation_path>``
record per line (``-`` for missing annotations) after a ``@defaults`` line
carrying dataset-level settings.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateInputError, ParseError
from .validation import check_feature_array, check_random_state

FSEQ_MAGIC = b"FSEQ0001"
ANNOTATION_KINDS = ("frame_scores", "keyframe_mask", "shot_scores")
REDUCTIONS = ("mean", "max")
EVAL_MODES = ("keyframe", "keyshot")


@dataclass
class FeatureSequence:
    """A [T, C, w, h] feature tensor where each step spans ``expansion`` frames."""

    video_id: str
    features: np.ndarray
    expansion: int = 1
    provenance: str = "unknown"

    def __post_init__(self):
        self.features = check_feature_array(self.features, name=f"features[{self.video_id}]")
        if not isinstance(self.expansion, (int, np.integer)) or self.expansion < 1:
            raise ValueError(f"expansion must be a positive int, got {self.expansion!r}")
        self.expansion = int(self.expansion)

    @property
    def steps(self) -> int:
        return self.features.shape[0]

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    @property
    def frames(self) -> int:
        return self.steps * self.expansion

    def frame_vectors(self) -> np.ndarray:
        """Spatially pooled per-step vectors replicated to frame resolution."""
        pooled = self.features.mean(axis=(2, 3))
        return np.repeat(pooled, self.expansion, axis=0)


@dataclass
class AnnotationSet:
    """Per-user ground truth for one video."""

    video_id: str
    n_frames: int
    kind: str
    users: list[np.ndarray]
    boundaries: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ANNOTATION_KINDS:
            raise ValueError(f"unknown annotation kind {self.kind!r}")
        if self.n_frames < 1:
            raise ValueError("n_frames must be positive")
        if not self.users:
            raise ValueError("at least one user annotation is required")
        checked = []
        for i, values in enumerate(self.users):
            arr = np.asarray(values, dtype=np.float64)
            if arr.shape != (self.n_frames,):
                raise ValueError(
                    f"user {i} has {arr.shape[0] if arr.ndim == 1 else arr.shape} values, "
                    f"expected {self.n_frames}")
            if self.kind == "keyframe_mask":
                if not np.isin(arr, (0.0, 1.0)).all():
                    raise ValueError(f"user {i}: keyframe masks must be binary 0/1")
            elif arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError(f"user {i}: scores must lie in [0, 1]")
            checked.append(arr)
        self.users = checked
        if self.kind == "shot_scores":
            if self.boundaries is None:
                raise ValueError("shot_scores annotations require shot boundaries")
            b = tuple(int(v) for v in self.boundaries)
            if b[0] != 0 or b[-1] != self.n_frames or any(x >= y for x, y in zip(b, b[1:])):
                raise ValueError(f"boundaries must satisfy 0 = b0 < ... < bm = {self.n_frames}")
            self.boundaries = b

    @property
    def n_users(self) -> int:
        return len(self.users)

    def important_fraction(self) -> float:
        """Average per-user share of important frames (mask mean or score mass)."""
        return float(np.mean([u.mean() for u in self.users]))


# ---------------------------------------------------------------------------
# feature container


def write_features(path, seq: FeatureSequence) -> None:
    t, c, w, h = seq.features.shape
    payload = np.ascontiguousarray(seq.features, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(FSEQ_MAGIC)
        fh.write(struct.pack("<5I", t, c, w, h, seq.expansion))
        fh.write(payload)


def read_features(path, provenance: str = "file") -> FeatureSequence:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 8 or blob[:8] != FSEQ_MAGIC:
        raise ParseError(f"{path}: bad magic at byte 0, expected {FSEQ_MAGIC!r}")
    if len(blob) < 28:
        raise ParseError(f"{path}: truncated header, file ends at byte {len(blob)}")
    t, c, w, h, n = struct.unpack("<5I", blob[8:28])
    for name, value in (("T", t), ("C", c), ("w", w), ("h", h), ("n", n)):
        if value < 1:
            raise ParseError(f"{path}: header field {name} must be positive, got {value}")
    expected = 28 + 4 * t * c * w * h
    if len(blob) != expected:
        raise ParseError(f"{path}: payload ends at byte {len(blob)}, expected {expected}")
    values = np.frombuffer(blob, dtype="<f4", offset=28).astype(np.float64)
    finite = np.isfinite(values)
    if not finite.all():
        index = int(np.argmin(finite))
        raise ParseError(f"{path}: non-finite value at byte {28 + 4 * index}")
    return FeatureSequence(video_id=path.stem, features=values.reshape(t, c, w, h),
                           expansion=n, provenance=provenance)


# ---------------------------------------------------------------------------
# annotations


def write_annotations(path, ann: AnnotationSet) -> None:
    lines = [f"video {ann.video_id} frames {ann.n_frames} users {ann.n_users} kind {ann.kind}"]
    if ann.kind == "shot_scores":
        lines.append("boundaries " + " ".join(str(b) for b in ann.boundaries))
    for values in ann.users:
        lines.append(" ".join(repr(float(v)) for v in values))
    Path(path).write_text("\n".join(lines) + "\n")


def read_annotations(path) -> AnnotationSet:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ParseError(f"{path}:1: empty annotation file")
    header = lines[0].split()
    if (len(header) != 8 or header[0] != "video" or header[2] != "frames"
            or header[4] != "users" or header[6] != "kind"):
        raise ParseError(f"{path}:1: malformed header {lines[0]!r}")
    video_id = header[1]
    try:
        n_frames, n_users = int(header[3]), int(header[5])
    except ValueError as exc:
        raise ParseError(f"{path}:1: {exc}") from exc
    kind = header[7]
    if kind not in ANNOTATION_KINDS:
        raise ParseError(f"{path}:1: unknown annotation kind {kind!r}")

    cursor = 1
    boundaries = None
    if kind == "shot_scores":
        if cursor >= len(lines) or not lines[cursor].startswith("boundaries"):
            raise ParseError(f"{path}:{cursor + 1}: shot_scores requires a boundaries line")
        try:
            boundaries = tuple(int(v) for v in lines[cursor].split()[1:])
        except ValueError as exc:
            raise ParseError(f"{path}:{cursor + 1}: {exc}") from exc
        cursor += 1

    users = []
    for u in range(n_users):
        line_no = cursor + u + 1
        if cursor + u >= len(lines):
            raise ParseError(f"{path}:{line_no}: missing annotation line for user {u}")
        try:
            values = np.array([float(v) for v in lines[cursor + u].split()])
        except ValueError as exc:
            raise ParseError(f"{path}:{line_no}: {exc}") from exc
        if values.shape != (n_frames,):
            raise ParseError(
                f"{path}:{line_no}: expected {n_frames} values, got {values.shape[0]}")
        users.append(values)
    try:
        return AnnotationSet(video_id=video_id, n_frames=n_frames, kind=kind,
                             users=users, boundaries=boundaries)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# padding


def pad_to_pow2(seq: FeatureSequence, levels: int) -> tuple[FeatureSequence, int]:
    """Right-pad by replicating the final step until T divides 2**levels.

    Returns the padded sequence and the original frame count, so scores can
    be truncated back after a forward pass.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    block = 2 ** levels
    t = seq.steps
    remainder = t % block
    if remainder == 0:
        return seq, seq.frames
    pad = block - remainder
    padded = np.concatenate([seq.features, np.repeat(seq.features[-1:], pad, axis=0)])
    return replace(seq, features=padded), seq.frames


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestEntry:
    video_id: str
    features_path: Path
    annotations_path: Path | None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    defaults: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [e.video_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("video ids in a manifest must be unique")


_DEFAULT_PARSERS = {
    "n": int,
    "budget": float,
    "reduction": str,
    "eval": str,
}


def write_manifest(path, manifest: DatasetManifest) -> None:
    path = Path(path)
    lines = ["# vsumrl manifest v1"]
    if manifest.defaults:
        lines.append("@defaults " + " ".join(
            f"{k}={v}" for k, v in sorted(manifest.defaults.items())))
    for entry in manifest.entries:
        ann = entry.annotations_path
        lines.append("\t".join([
            entry.video_id,
            _relative_to(entry.features_path, path.parent),
            _relative_to(ann, path.parent) if ann is not None else "-",
        ]))
    path.write_text("\n".join(lines) + "\n")


def _relative_to(target, base) -> str:
    target = Path(target)
    try:
        return str(target.relative_to(base))
    except ValueError:
        return str(target)


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    defaults: dict = {}
    entries: list[ManifestEntry] = []
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("@defaults"):
            for token in line.split()[1:]:
                if "=" not in token:
                    raise ParseError(f"{path}:{line_no}: malformed default {token!r}")
                key, value = token.split("=", 1)
                if key not in _DEFAULT_PARSERS:
                    raise ParseError(f"{path}:{line_no}: unknown default key {key!r}")
                try:
                    defaults[key] = _DEFAULT_PARSERS[key](value)
                except ValueError as exc:
                    raise ParseError(f"{path}:{line_no}: {exc}") from exc
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{path}:{line_no}: expected 3 tab-separated fields")
        video_id, feat, ann = parts
        entries.append(ManifestEntry(
            video_id=video_id,
            features_path=path.parent / feat,
            annotations_path=None if ann == "-" else path.parent / ann))
    if defaults.get("reduction") not in (None, *REDUCTIONS):
        raise ParseError(f"{path}: reduction must be one of {REDUCTIONS}")
    if defaults.get("eval") not in (None, *EVAL_MODES):
        raise ParseError(f"{path}: eval must be one of {EVAL_MODES}")
    try:
        return DatasetManifest(entries=entries, defaults=defaults)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def load_dataset(manifest: DatasetManifest) -> list[tuple[FeatureSequence, AnnotationSet | None]]:
    """Read every feature/annotation pair referenced by a manifest."""
    loaded = []
    for entry in manifest.entries:
        if not Path(entry.features_path).exists():
            raise ParseError(f"feature file {entry.features_path} does not exist")
        seq = read_features(entry.features_path)
        seq.video_id = entry.video_id
        ann = None
        if entry.annotations_path is not None:
            if not Path(entry.annotations_path).exists():
                raise ParseError(f"annotation file {entry.annotations_path} does not exist")
            ann = read_annotations(entry.annotations_path)
            if ann.n_frames != seq.frames:
                raise ParseError(
                    f"{entry.video_id}: annotations cover {ann.n_frames} frames, "
                    f"features cover {seq.frames}")
        loaded.append((seq, ann))
    return loaded


# ---------------------------------------------------------------------------
# synthetic dataset


@dataclass
class SyntheticVideo:
    features: FeatureSequence
    annotations: AnnotationSet
    base_mask: np.ndarray
    boundaries: tuple[int, ...]


@dataclass
class SyntheticDataset:
    videos: list[SyntheticVideo]
    manifest_path: Path | None = None

    @property
    def video_ids(self) -> list[str]:
        return [v.features.video_id for v in self.videos]


def make_synthetic_dataset(n_videos: int = 20, clusters: int = 4, frames: int = 128,
                           feature_dim: int = 16, noise: float = 0.1,
                           keyframe_fraction: float = 0.3, users: int = 3,
                           seed: int = 0, out_dir=None) -> SyntheticDataset:
    """Piecewise-constant cluster sequences with planted keyframes.

    Each video has ``clusters`` contiguous segments with distinct Gaussian
    centers plus zero-mean Gaussian noise. The noise is structured like
    real footage: most of a segment is redundant filler (one shared noise
    draw at amplitude 2 * noise, i.e. near-identical frames), while a
    ``keyframe_fraction`` share carries independent per-frame noise at
    amplitude 1 * noise. Within every segment the frames with the smallest
    noise norm are planted as keyframes, up to ``keyframe_fraction`` of the
    segment; with this structure those are the individually distinct frames
    a coverage objective must select one by one. Simulated users receive
    jittered copies of the planted mask (a quarter of the keyframes swapped
    inside their segment, keeping Jaccard >= 0.5 with the base mask).
    """
    if clusters < 2:
        raise ConfigError(f"clusters must be >= 2, got {clusters}")
    if frames < clusters:
        raise DegenerateInputError(f"need at least one frame per cluster, got {frames}")
    if not 0.0 < keyframe_fraction < 1.0:
        raise ConfigError(f"keyframe_fraction must lie in (0, 1), got {keyframe_fraction}")
    if noise < 0.0:
        raise ConfigError("noise must be >= 0")
    if users < 1 or n_videos < 1:
        raise ConfigError("users and n_videos must be >= 1")

    rng = check_random_state(seed)
    videos: list[SyntheticVideo] = []
    for v in range(n_videos):
        video_id = f"synth{v:03d}"
        bounds = tuple(round(i * frames / clusters) for i in range(clusters + 1))
        # mutually orthogonal centers of equal norm: segment geometry (and so
        # the reward scale) is then the same for every video
        gaussian = rng.normal(size=(feature_dim, max(clusters, 1)))
        basis, _ = np.linalg.qr(gaussian)
        centers = basis.T[:clusters] * np.sqrt(feature_dim)
        segment_of = np.searchsorted(bounds[1:], np.arange(frames), side="right")
        jitter = np.empty((frames, feature_dim))
        for s in range(clusters):
            lo, hi = bounds[s], bounds[s + 1]
            count = int(keyframe_fraction * (hi - lo))
            distinct = rng.choice(hi - lo, size=count, replace=False)
            filler_draw = rng.normal(size=feature_dim) * (8.0 * noise)
            jitter[lo:hi] = filler_draw
            jitter[lo + distinct] = rng.normal(size=(count, feature_dim)) * noise
        data = centers[segment_of] + jitter

        base_mask = np.zeros(frames, dtype=np.int64)
        noise_norm = np.linalg.norm(jitter, axis=1)
        for s in range(clusters):
            lo, hi = bounds[s], bounds[s + 1]
            count = int(keyframe_fraction * (hi - lo))
            order = np.argsort(noise_norm[lo:hi], kind="stable")
            base_mask[lo + order[:count]] = 1

        user_masks = []
        for _ in range(users):
            mask = base_mask.copy()
            for s in range(clusters):
                lo, hi = bounds[s], bounds[s + 1]
                keys = np.flatnonzero(mask[lo:hi] == 1) + lo
                holes = np.flatnonzero(mask[lo:hi] == 0) + lo
                swaps = max(len(keys) // 8, 1) if len(keys) else 0
                if swaps == 0 or len(holes) < swaps:
                    continue
                mask[rng.choice(keys, size=swaps, replace=False)] = 0
                mask[rng.choice(holes, size=swaps, replace=False)] = 1
            user_masks.append(mask.astype(np.float64))

        seq = FeatureSequence(video_id=video_id, features=data[:, :, None, None],
                              expansion=1, provenance="synthetic")
        ann = AnnotationSet(video_id=video_id, n_frames=frames, kind="keyframe_mask",
                            users=user_masks)
        videos.append(SyntheticVideo(features=seq, annotations=ann,
                                     base_mask=base_mask, boundaries=bounds))

    manifest_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for video in videos:
            vid = video.features.video_id
            feat_path = out_dir / f"{vid}.fseq"
            ann_path = out_dir / f"{vid}.ann"
            write_features(feat_path, video.features)
            write_annotations(ann_path, video.annotations)
            entries.append(ManifestEntry(vid, feat_path, ann_path))
        manifest_path = out_dir / "manifest.txt"
        write_manifest(manifest_path, DatasetManifest(
            entries=entries,
            defaults={"n": 1, "budget": 0.15, "reduction": "mean", "eval": "keyframe"}))
    return SyntheticDataset(videos=videos, manifest_path=manifest_path)
