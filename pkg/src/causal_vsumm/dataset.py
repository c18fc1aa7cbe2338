"""Treatment-labelled dataset construction (CVSD-style corpora).

A corpus is a list of :class:`QueryVideoPair`. Pairs are padded to a fixed
length by frame repetition, a seeded subset is perturbed with visual and
textual treatments, and the result is serialised as JSON lines.
"""
from __future__ import annotations

import base64
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import treatments

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TARGET_LEN = 199
MAX_QUERY_LEN = 8


class SchemaError(ValueError):
    """A dataset or manifest file does not match the expected schema."""


@dataclass
class FrameAnnotation:
    frame_index: int
    score_labels: list[int]
    treatment: int = 0

    def __post_init__(self):
        if not self.score_labels:
            raise ValueError("score_labels must be non-empty")
        if self.treatment not in (0, 1):
            raise ValueError(f"treatment must be 0 or 1, got {self.treatment}")


@dataclass
class QueryVideoPair:
    """One (video, query) sample.

    ``frames`` is a float array of shape (F, 3, H, W) with values in [0, 1];
    ``frame_features`` is used instead when the video arrives pre-featurised.
    """

    pair_id: str
    query: list[str]
    annotations: list[FrameAnnotation]
    frames: np.ndarray | None = None
    frame_features: np.ndarray | None = None
    query_treatment: int = 0

    def __post_init__(self):
        if len(self.query) > MAX_QUERY_LEN:
            raise ValueError(f"query longer than {MAX_QUERY_LEN} tokens: {self.query}")
        if self.frames is None and self.frame_features is None:
            raise ValueError("a pair needs frames or frame_features")
        if len(self.annotations) != self.n_frames:
            raise ValueError(
                f"{self.pair_id}: {len(self.annotations)} annotations for {self.n_frames} frames"
            )

    @property
    def n_frames(self) -> int:
        video = self.frames if self.frames is not None else self.frame_features
        return len(video)

    @property
    def gold_labels(self) -> np.ndarray:
        return np.array([merge_annotations(a.score_labels) for a in self.annotations], dtype=np.int64)

    @property
    def treatments(self) -> np.ndarray:
        return np.array([a.treatment for a in self.annotations], dtype=np.int64)


@dataclass
class DatasetSplit:
    train: list[str] = field(default_factory=list)
    val: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)


def repeat_counts(n_frames: int, target_len: int = TARGET_LEN) -> np.ndarray:
    if n_frames < 1 or n_frames > target_len:
        raise ValueError(f"cannot pad {n_frames} frames to length {target_len}")
    r, extra = divmod(target_len, n_frames)
    counts = np.full(n_frames, r, dtype=np.int64)
    counts[:extra] += 1
    return counts


def pad_video(frames, target_len: int = TARGET_LEN):
    """Repeat frames in order until the sequence has ``target_len`` entries.

    Every frame appears ``target_len // F`` times and the first
    ``target_len % F`` frames get one extra copy.
    """
    counts = repeat_counts(len(frames), target_len)
    if isinstance(frames, np.ndarray):
        return np.repeat(frames, counts, axis=0)
    return [f for f, c in zip(frames, counts) for _ in range(c)]


def pad_pair(pair: QueryVideoPair, target_len: int = TARGET_LEN) -> QueryVideoPair:
    """Pad a pair's video and annotations in lockstep."""
    if pair.n_frames == target_len:
        return pair
    counts = repeat_counts(pair.n_frames, target_len)
    annotations = []
    for ann, c in zip(pair.annotations, counts):
        for _ in range(c):
            annotations.append(replace(ann, frame_index=len(annotations), score_labels=list(ann.score_labels)))
    return replace(
        pair,
        frames=None if pair.frames is None else np.repeat(pair.frames, counts, axis=0),
        frame_features=None if pair.frame_features is None else np.repeat(pair.frame_features, counts, axis=0),
        annotations=annotations,
    )


def merge_annotations(score_labels) -> int:
    """Majority label; ties go to the smaller label."""
    if len(score_labels) == 0:
        raise ValueError("cannot merge an empty annotation list")
    counts = Counter(int(s) for s in score_labels)
    best = max(counts.values())
    return min(label for label, c in counts.items() if c == best)


def build_cvsd(
    corpus: list[QueryVideoPair],
    seed: int,
    pair_fraction: float = 0.5,
    frame_fraction: float = 0.3,
    visual_treatment: str = "salt_pepper",
    textual_k: int = 2,
    salt_pepper_density: float = treatments.DEFAULT_SALT_PEPPER_DENSITY,
    blur_kernel: int = treatments.DEFAULT_BLUR_KERNEL,
    target_len: int = TARGET_LEN,
) -> list[QueryVideoPair]:
    """Return a treated copy of ``corpus``.

    ``round(pair_fraction * N)`` pairs are selected; each gets
    ``floor(frame_fraction * target_len)`` treated frames plus ``textual_k``
    dropped query words. Untreated pairs and frames are copied unchanged.
    """
    for name, frac in (("pair_fraction", pair_fraction), ("frame_fraction", frame_fraction)):
        if not 0.0 <= frac <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {frac}")
    if visual_treatment not in ("salt_pepper", "blur"):
        raise ValueError(f"unknown visual treatment {visual_treatment!r}")

    rng = np.random.default_rng(seed)
    n_selected = int(round(pair_fraction * len(corpus)))
    selected = set(rng.choice(len(corpus), size=n_selected, replace=False).tolist())
    n_treated_frames = math.floor(frame_fraction * target_len)

    out = []
    for i, pair in enumerate(corpus):
        pair = pad_pair(pair, target_len)
        annotations = [replace(a, score_labels=list(a.score_labels)) for a in pair.annotations]
        frames = None if pair.frames is None else pair.frames.copy()
        if i not in selected:
            out.append(replace(pair, annotations=annotations, frames=frames))
            continue

        if frames is None and n_treated_frames:
            raise ValueError(f"{pair.pair_id}: visual treatments need raw frames")
        frame_idx = np.sort(rng.choice(target_len, size=n_treated_frames, replace=False))
        for j in frame_idx:
            frame_seed = int(rng.integers(2**31))
            if visual_treatment == "salt_pepper":
                frames[j] = treatments.salt_pepper(frames[j], salt_pepper_density, frame_seed)
            else:
                frames[j] = treatments.blur(frames[j], blur_kernel)
            annotations[j].treatment = 1

        k = textual_k
        if k > len(pair.query):
            logger.info("%s: clamping textual_k=%d to query length %d", pair.pair_id, k, len(pair.query))
            k = len(pair.query)
        query = treatments.drop_words(pair.query, k, int(rng.integers(2**31)))
        out.append(replace(pair, query=query, query_treatment=1, annotations=annotations, frames=frames))
    return out


def split_corpus(corpus, seed: int, ratios=(0.6, 0.2, 0.2)) -> DatasetSplit:
    """Seeded shuffle into train/val/test; val and test sizes use floor, the rest goes to train."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    ids = [p.pair_id if isinstance(p, QueryVideoPair) else str(p) for p in corpus]
    if len(set(ids)) != len(ids):
        raise ValueError("pair ids must be unique")
    n = len(ids)
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    n_val = math.floor(ratios[1] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    n_train = n - n_val - n_test
    return DatasetSplit(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
    )


# --- serialisation -----------------------------------------------------------


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr)
    return {
        "dtype": arr.dtype.str,
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _decode_array(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    return np.frombuffer(raw, dtype=np.dtype(blob["dtype"])).reshape(blob["shape"]).copy()


def pair_to_record(pair: QueryVideoPair, media_dir: Path | None = None, base: Path | None = None) -> dict:
    record = {
        "schema_version": SCHEMA_VERSION,
        "pair_id": pair.pair_id,
        "query_tokens": list(pair.query),
        "query_treatment": int(pair.query_treatment),
        "annotations": [
            {"frame_index": a.frame_index, "score_labels": [int(s) for s in a.score_labels], "treatment": a.treatment}
            for a in pair.annotations
        ],
    }
    if pair.frames is not None:
        if media_dir is None:
            record["frames"] = _encode_array(pair.frames)
        else:
            media_dir.mkdir(parents=True, exist_ok=True)
            target = media_dir / f"{pair.pair_id}.npy"
            np.save(target, pair.frames, allow_pickle=False)
            record["frames_ref"] = target.relative_to(base).as_posix() if base else str(target)
    if pair.frame_features is not None:
        record["frame_features"] = _encode_array(pair.frame_features)
    return record


_REQUIRED = ("schema_version", "pair_id", "query_tokens", "query_treatment", "annotations")
_ANN_REQUIRED = ("frame_index", "score_labels", "treatment")


def record_to_pair(record: dict, base: Path | None = None) -> QueryVideoPair:
    missing = [k for k in _REQUIRED if k not in record]
    if missing:
        raise SchemaError(f"record {record.get('pair_id', '?')} is missing fields {missing}")
    if record["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {record['schema_version']} (reader is v{SCHEMA_VERSION})")
    annotations = []
    for ann in record["annotations"]:
        missing = [k for k in _ANN_REQUIRED if k not in ann]
        if missing:
            raise SchemaError(f"annotation in {record['pair_id']} is missing fields {missing}")
        annotations.append(FrameAnnotation(ann["frame_index"], list(ann["score_labels"]), ann["treatment"]))
    frames = None
    if "frames" in record:
        frames = _decode_array(record["frames"])
    elif "frames_ref" in record:
        ref = Path(record["frames_ref"])
        frames = np.load(base / ref if base and not ref.is_absolute() else ref, allow_pickle=False)
    features = _decode_array(record["frame_features"]) if "frame_features" in record else None
    if frames is None and features is None:
        raise SchemaError(f"record {record['pair_id']} has neither frames, frames_ref nor frame_features")
    return QueryVideoPair(
        pair_id=record["pair_id"],
        query=list(record["query_tokens"]),
        annotations=annotations,
        frames=frames,
        frame_features=features,
        query_treatment=record["query_treatment"],
    )


def save(corpus: list[QueryVideoPair], path, media_dir=None) -> Path:
    """Write one JSON record per line. With ``media_dir`` frames go to ``.npy`` files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    media = Path(media_dir) if media_dir is not None else None
    with path.open("w") as fh:
        for pair in corpus:
            fh.write(json.dumps(pair_to_record(pair, media, path.parent), sort_keys=True) + "\n")
    return path


def load(path) -> list[QueryVideoPair]:
    path = Path(path)
    corpus = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            corpus.append(record_to_pair(record, path.parent))
    return corpus


def save_manifest(split: DatasetSplit, path, extra: dict | None = None) -> Path:
    path = Path(path)
    payload = {"schema_version": SCHEMA_VERSION, "train": split.train, "val": split.val, "test": split.test}
    if extra:
        payload["config"] = extra
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> DatasetSplit:
    payload = json.loads(Path(path).read_text())
    for key in ("train", "val", "test"):
        if key not in payload:
            raise SchemaError(f"manifest {path} is missing {key!r}")
    return DatasetSplit(payload["train"], payload["val"], payload["test"])


# --- planted synthetic corpus ------------------------------------------------


def relevance(query_topic: int, frame_topic, n_topics: int, n_classes: int):
    """Planted affinity: a frame on the query's topic is maximally relevant,
    the next topic (cyclically) one class lower, and so on down to 0."""
    offset = (np.asarray(frame_topic) - query_topic) % n_topics
    return np.maximum(n_classes - 1 - offset, 0)


def topic_colours(n_topics: int) -> np.ndarray:
    """Mean RGB colour of each synthetic topic, shape (n_topics, 3)."""
    hues = np.linspace(0.2, 0.8, n_topics)
    return np.stack([np.roll(np.array([h, 1.0 - h, 0.5]), k) for k, h in enumerate(hues)])


def topic_words(vocab_size: int, n_topics: int) -> list[list[str]]:
    per_topic = vocab_size // (n_topics + 1)
    return [[f"w{i:03d}" for i in range(k * per_topic, (k + 1) * per_topic)] for k in range(n_topics)]


def synth_corpus(
    n_pairs: int,
    seed: int,
    vocab_size: int = 30,
    n_score_classes: int = 3,
    n_topics: int | None = None,
    n_annotators: int = 3,
    annotator_accuracy: float = 0.9,
    frame_size: int = 8,
    min_frames: int = 100,
    max_frames: int = TARGET_LEN,
    pixel_noise: float = 0.05,
) -> list[QueryVideoPair]:
    """Generate query-video pairs with planted query/frame affinity.

    Every pair has a query topic; frames are grouped in shots, each shot
    showing one topic's prototype image plus pixel noise. True relevance is
    :func:`relevance` of the two topics, and each annotator reports it with
    probability ``annotator_accuracy`` (otherwise a uniformly random other
    class). Videos are left unpadded.
    """
    n_topics = n_topics or max(3, n_score_classes)
    if vocab_size < 2 * n_topics:
        raise ValueError(f"vocab_size must be >= {2 * n_topics}")
    rng = np.random.default_rng(seed)
    by_topic = topic_words(vocab_size, n_topics)
    filler = [f"w{i:03d}" for i in range(n_topics * len(by_topic[0]), vocab_size)]

    # Topic prototypes: a distinct mean colour plus a fixed spatial pattern.
    prototypes = []
    for colour in topic_colours(n_topics):
        pattern = 0.15 * rng.standard_normal((1, frame_size, frame_size))
        prototypes.append(np.clip(colour[:, None, None] + pattern, 0.0, 1.0))
    prototypes = np.stack(prototypes)

    corpus = []
    for p in range(n_pairs):
        topic = int(rng.integers(n_topics))
        n_words = int(rng.integers(3, MAX_QUERY_LEN + 1))
        n_topic = int(rng.integers(2, n_words + 1))
        words = list(rng.choice(by_topic[topic], size=n_topic)) + list(rng.choice(filler, size=n_words - n_topic))
        query = [str(words[i]) for i in rng.permutation(n_words)]

        n_frames = int(rng.integers(min_frames, max_frames + 1))
        frame_topics = np.empty(n_frames, dtype=np.int64)
        start = 0
        while start < n_frames:
            shot = int(rng.integers(5, 21))
            frame_topics[start : start + shot] = rng.integers(n_topics)
            start += shot
        noise = pixel_noise * rng.standard_normal((n_frames, 3, frame_size, frame_size))
        frames = np.clip(prototypes[frame_topics] + noise, 0.0, 1.0).astype(np.float32)

        true = relevance(topic, frame_topics, n_topics, n_score_classes)
        annotations = []
        for j in range(n_frames):
            labels = []
            for _ in range(n_annotators):
                if rng.random() < annotator_accuracy:
                    labels.append(int(true[j]))
                else:
                    wrong = [c for c in range(n_score_classes) if c != true[j]]
                    labels.append(int(rng.choice(wrong)))
            annotations.append(FrameAnnotation(j, labels, 0))
        corpus.append(QueryVideoPair(f"pair{p:04d}", query, annotations, frames=frames))
    return corpus

