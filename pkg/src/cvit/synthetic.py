"""Procedural two-class texture data laid out like a face-crop dataset.

Real frames are smooth colour fields; fake frames carry the same kind of
field plus a faint oriented high-frequency grating, a crude stand-in for
generator upsampling artefacts. Frames of one video share their base field.
"""

from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np
from PIL import Image

from .data import LABEL_NAMES, Sample


def _smooth_field(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.empty((3, size, size))
    for c in range(3):
        acc = rng.uniform(0.3, 0.7) + np.zeros((size, size))
        for _ in range(3):
            cy, cx = rng.uniform(0, 1, 2)
            r = rng.uniform(0.15, 0.5)
            acc += rng.uniform(-0.25, 0.25) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        img[c] = acc
    return img


def _grating(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    theta = rng.uniform(0, np.pi)
    period = rng.uniform(2.5, 4.0)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
    return 0.12 * wave[None]


def video_frames(label: int, rng, frames: int, size: int) -> List[np.ndarray]:
    base = _smooth_field(rng, size)
    out = []
    for _ in range(frames):
        img = base + rng.normal(0.0, 0.01, base.shape)
        if label == 1:
            img = img + _grating(rng, size)
        out.append(np.clip(img, 0.0, 1.0).astype(np.float32))
    return out


def make_samples(videos_per_class: int, frames_per_video: int, size: int = 32, seed: int = 0) -> List[Sample]:
    rng = np.random.default_rng(seed)
    samples = []
    for label in (0, 1):
        for v in range(videos_per_class):
            vid = f"{LABEL_NAMES[label]}_{v:04d}"
            for f, img in enumerate(video_frames(label, rng, frames_per_video, size)):
                samples.append(Sample(img, label, vid, f))
    return samples


def write_dataset(root, videos_per_class: int, frames_per_video: int, size: int = 32, seed: int = 0) -> int:
    """Write PNG frames under ``root/{real,fake}/<video_id>/<frame>.png``; returns the frame count."""
    root = Path(root)
    n = 0
    for s in make_samples(videos_per_class, frames_per_video, size, seed):
        d = root / LABEL_NAMES[s.label] / s.video_id
        d.mkdir(parents=True, exist_ok=True)
        pixels = np.round(s.image.transpose(1, 2, 0) * 255.0).astype(np.uint8)
        Image.fromarray(pixels, "RGB").save(d / f"{s.frame_index:03d}.png")
        n += 1
    return n
