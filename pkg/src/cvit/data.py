"""Face-crop ingestion, normalisation, augmentation, video-level splits and batching."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)

CHANNEL_MEAN = np.array([0.485, 0.456, 0.406])
CHANNEL_STD = np.array([0.229, 0.224, 0.225])
LABELS = {"real": 0, "fake": 1}
LABEL_NAMES = {v: k for k, v in LABELS.items()}
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SPLITS = ("train", "val", "test")


@dataclass
class Sample:
    image: np.ndarray  # (3, S, S) float32 in [0, 1]
    label: int
    video_id: str
    frame_index: int
    path: Optional[str] = None  # relative to the dataset root

    @property
    def relative_path(self) -> str:
        if self.path is not None:
            return self.path
        return f"{LABEL_NAMES[self.label]}/{self.video_id}/{self.frame_index}.png"


def load_image(path, image_size: int = 224) -> np.ndarray:
    """Decode to RGB, bilinear-resize to a square, scale 0..255 to 0..1."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if img.size != (image_size, image_size):
                img = img.resize((image_size, image_size), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1)) / np.float32(255.0)


def _frame_index(path: Path, fallback: int) -> int:
    try:
        return int(path.stem)
    except ValueError:
        return fallback


def list_frames(directory) -> List[Path]:
    return sorted(p for p in Path(directory).iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def ingest(root, image_size: int = 224) -> List[Sample]:
    """Load every frame under ``root/{real,fake}/<video_id>/``.

    Undecodable files are skipped and counted in a warning. A missing or
    empty class directory is fatal.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    samples: List[Sample] = []
    skipped = 0
    for name, label in LABELS.items():
        class_dir = root / name
        videos = sorted(p for p in class_dir.iterdir() if p.is_dir()) if class_dir.is_dir() else []
        before = len(samples)
        for vdir in videos:
            for pos, frame in enumerate(list_frames(vdir)):
                try:
                    image = load_image(frame, image_size)
                except DataError as exc:
                    logger.debug("%s", exc)
                    skipped += 1
                    continue
                samples.append(Sample(image, label, vdir.name, _frame_index(frame, pos),
                                      frame.relative_to(root).as_posix()))
        if len(samples) == before:
            raise DataError(f"class directory {class_dir} holds no decodable frames")
    if skipped:
        logger.warning("skipped %d undecodable image file(s) under %s", skipped, root)
    return samples


def normalize(x: np.ndarray) -> np.ndarray:
    """Per-channel (x - mean) / std on (..., 3, H, W)."""
    x = np.asarray(x)
    mean = CHANNEL_MEAN.reshape(3, 1, 1).astype(x.dtype)
    std = CHANNEL_STD.reshape(3, 1, 1).astype(x.dtype)
    return (x - mean) / std


def denormalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return x * CHANNEL_STD.reshape(3, 1, 1).astype(x.dtype) + CHANNEL_MEAN.reshape(3, 1, 1).astype(x.dtype)


# ---------------------------------------------------------------- splits


@dataclass
class SplitManifest:
    train: List[Sample] = field(default_factory=list)
    val: List[Sample] = field(default_factory=list)
    test: List[Sample] = field(default_factory=list)
    ratios: Tuple[float, float, float] = (0.70, 0.15, 0.15)

    def __getitem__(self, name: str) -> List[Sample]:
        if name not in SPLITS:
            raise KeyError(name)
        return getattr(self, name)

    def items(self):
        return [(name, self[name]) for name in SPLITS]


def _allocate(counts: Sequence[int], ratios: Sequence[float]) -> List[List[int]]:
    """Per-class video counts per split.

    Floors of the ideal shares, then leftovers go where the running total
    over classes lags its target most, so totals track the ratios globally.
    """
    alloc = []
    done = np.zeros(len(ratios))
    seen = 0
    for n in counts:
        ideal = np.asarray(ratios) * n
        share = np.floor(ideal).astype(int)
        seen += n
        target = np.asarray(ratios) * seen
        for _ in range(n - share.sum()):
            lag = target - (done + share)
            share[int(np.argmax(lag))] += 1
        # every split gets a video of this class whenever there are enough
        if n >= len(ratios):
            for s in range(len(ratios)):
                if share[s] == 0:
                    share[int(np.argmax(share))] -= 1
                    share[s] += 1
        done += share
        alloc.append(share.tolist())
    return alloc


def split(samples: Sequence[Sample], ratios=(0.70, 0.15, 0.15), seed: int = 0) -> SplitManifest:
    """Assign whole videos to train/val/test, then trim each split to class balance."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    by_video: Dict[Tuple[int, str], List[Sample]] = {}
    for s in samples:
        by_video.setdefault((s.label, s.video_id), []).append(s)
    videos = {label: sorted(v for (lab, v) in by_video if lab == label) for label in LABEL_NAMES}
    for label, vids in videos.items():
        if not vids:
            raise DataError(f"no videos for class {LABEL_NAMES[label]!r}")
    alloc = _allocate([len(videos[0]), len(videos[1])], ratios)
    parts: Dict[str, List[Sample]] = {name: [] for name in SPLITS}
    for label in (0, 1):
        order = rng.permutation(len(videos[label]))
        start = 0
        for name, k in zip(SPLITS, alloc[label]):
            for i in order[start:start + k]:
                parts[name].extend(by_video[(label, videos[label][i])])
            start += k
    for name in SPLITS:
        parts[name] = _balance(parts[name], rng)
    return SplitManifest(parts["train"], parts["val"], parts["test"], ratios)


def _balance(items: List[Sample], rng) -> List[Sample]:
    real = [i for i, s in enumerate(items) if s.label == 0]
    fake = [i for i, s in enumerate(items) if s.label == 1]
    keep_n = min(len(real), len(fake))
    keep = set()
    for idx in (real, fake):
        chosen = rng.choice(len(idx), size=keep_n, replace=False) if len(idx) > keep_n else range(len(idx))
        keep.update(idx[j] for j in chosen)
    return [s for i, s in enumerate(items) if i in keep]


def write_manifest(manifest: SplitManifest, path) -> None:
    """One line per sample: ``split<TAB>label<TAB>video_id<TAB>relative_path``."""
    with open(path, "w", encoding="utf-8") as fh:
        for name, items in manifest.items():
            for s in items:
                fh.write(f"{name}\t{s.label}\t{s.video_id}\t{s.relative_path}\n")


def read_manifest(path) -> Dict[str, List[Tuple[int, str, str]]]:
    out: Dict[str, List[Tuple[int, str, str]]] = {name: [] for name in SPLITS}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4 or fields[0] not in out or fields[1] not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: malformed manifest line")
            out[fields[0]].append((int(fields[1]), fields[2], fields[3]))
    return out


def load_split(root, entries, image_size: int = 224) -> List[Sample]:
    root = Path(root)
    samples = []
    for pos, (label, video_id, rel) in enumerate(entries):
        p = root / rel
        samples.append(Sample(load_image(p, image_size), label, video_id, _frame_index(Path(rel), pos), rel))
    return samples


# ---------------------------------------------------------- augmentation


@dataclass(frozen=True)
class AugmentationPolicy:
    probability_augmented: float = 0.9
    flip_probability: float = 0.5
    max_rotation: float = 10.0  # degrees
    brightness: float = 0.2
    contrast: float = 0.2
    max_noise_std: float = 0.02

    def __post_init__(self):
        if not 0.0 <= self.probability_augmented <= 1.0:
            raise ConfigurationError("probability_augmented must lie in [0, 1]")


def draw_augmentation(policy: AugmentationPolicy, rng) -> Optional[dict]:
    """Random transform parameters, or None when this image stays untouched."""
    if rng.random() >= policy.probability_augmented:
        return None
    return {
        "flip": bool(rng.random() < policy.flip_probability),
        "angle": float(rng.uniform(-policy.max_rotation, policy.max_rotation)),
        "brightness": float(rng.uniform(-policy.brightness, policy.brightness)),
        "contrast": float(rng.uniform(1.0 - policy.contrast, 1.0 + policy.contrast)),
        "noise_std": float(rng.uniform(0.0, policy.max_noise_std)),
    }


def hflip(image: np.ndarray) -> np.ndarray:
    return image[..., ::-1].copy()


def apply_augmentation(image: np.ndarray, params: dict, rng) -> np.ndarray:
    out = hflip(image) if params["flip"] else image.astype(np.float64)
    if params["angle"]:
        out = ndimage.rotate(out, params["angle"], axes=(1, 2), reshape=False, order=1, mode="reflect")
    mean = out.mean()
    out = (out - mean) * params["contrast"] + mean + params["brightness"]
    if params["noise_std"] > 0:
        out = out + rng.normal(0.0, params["noise_std"], size=out.shape)
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def augment(sample: Sample, policy: AugmentationPolicy, rng) -> Sample:
    params = draw_augmentation(policy, rng)
    if params is None:
        return sample
    return replace(sample, image=apply_augmentation(sample.image, params, rng))


def expand_offline(samples: Sequence[Sample], policy: AugmentationPolicy, seed: int = 0) -> List[Sample]:
    """Originals plus one augmented copy of each image the policy selects (about 1.9x)."""
    rng = np.random.default_rng(seed)
    out = list(samples)
    for s in samples:
        params = draw_augmentation(policy, rng)
        if params is not None:
            out.append(replace(s, image=apply_augmentation(s.image, params, rng)))
    return out


# -------------------------------------------------------------- batching


def batches(samples: Sequence[Sample], batch_size: int = 32, seed: int = 0, mode: str = "train",
            policy: Optional[AugmentationPolicy] = None, epoch: int = 0,
            workers: int = 1) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images, labels)`` with normalised (B, 3, S, S) float32 images.

    Train mode shuffles with a per-epoch seed and augments each sample from
    its own seeded generator, so the stream does not depend on ``workers``.
    Eval mode keeps input order and only normalises. The last batch may be short.
    """
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"mode must be 'train' or 'eval', got {mode!r}")
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    n = len(samples)
    if mode == "train":
        order = np.random.default_rng([seed, epoch]).permutation(n)
        policy = policy or AugmentationPolicy()
    else:
        order = np.arange(n)

    def prepare(i: int) -> np.ndarray:
        s = samples[i]
        if mode == "train":
            s = augment(s, policy, np.random.default_rng([seed, epoch, int(i)]))
        return s.image

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            images = list(pool.map(prepare, idx)) if pool else [prepare(i) for i in idx]
            x = normalize(np.stack(images).astype(np.float32))
            y = np.array([samples[i].label for i in idx], dtype=np.int64)
            yield x, y
    finally:
        if pool:
            pool.shutdown()
