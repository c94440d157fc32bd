"""Samples, datasets on disk, and the synthetic context-dependent scene task.

The synthetic task draws a coloured border (the *cue*) around an interior made
of grayscale texture regions.  A pixel's class is ``cue * textures +
texture``: the texture is visible locally, but the cue is only visible at the
border, so pixels far from the border need long-range context to be labelled
correctly.
"""

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import pnm
from .errors import DataError
from .loss import VOID

CUE_COLORS = ((0.9, 0.15, 0.15), (0.15, 0.15, 0.9), (0.15, 0.8, 0.15), (0.85, 0.8, 0.1))
TEXTURE_NAMES = ("hstripes", "vstripes", "checker", "diagonal")
_LOW, _HIGH = 0.2, 0.8


@dataclass
class Sample:
    image: np.ndarray   # (C, H, W) float in [0, 1]
    labels: np.ndarray  # (H, W) uint8, VOID = ignored

    def __post_init__(self):
        if self.image.ndim != 3 or self.labels.ndim != 2 or self.image.shape[1:] != self.labels.shape:
            raise DataError(f"image {self.image.shape} and labels {self.labels.shape} do not match")


class Dataset:
    """Ordered collection of samples, either in memory or backed by files."""

    def __init__(self, samples=None, entries=None, num_classes=None):
        if (samples is None) == (entries is None):
            raise ValueError("give exactly one of samples or entries")
        self._samples = list(samples) if samples is not None else None
        self.entries = list(entries) if entries is not None else None
        self.num_classes = num_classes

    def __len__(self):
        return len(self._samples if self._samples is not None else self.entries)

    def __getitem__(self, i):
        if self._samples is not None:
            return self._samples[i]
        image_path, label_path = self.entries[i]
        return Sample(pnm.read_image(image_path), pnm.read_labels(label_path, self.num_classes))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def label_maps(self):
        for i in range(len(self)):
            if self._samples is not None:
                yield self._samples[i].labels
            else:
                yield pnm.read_labels(self.entries[i][1], self.num_classes)


# -- synthetic scenes ---------------------------------------------------------

@dataclass(frozen=True)
class SyntheticTaskConfig:
    image_size: int = 32
    textures: int = 4
    cues: int = 2
    border: int = 2
    noise: float = 0.0

    @property
    def num_classes(self):
        return self.textures * self.cues

    def validate(self):
        problems = []
        if not 1 <= self.textures <= len(TEXTURE_NAMES):
            problems.append(f"textures must be in 1..{len(TEXTURE_NAMES)}")
        if not 1 <= self.cues <= len(CUE_COLORS):
            problems.append(f"cues must be in 1..{len(CUE_COLORS)}")
        if self.border < 1:
            problems.append("border must be >= 1")
        if self.image_size - 2 * self.border < 4:
            problems.append("image_size too small for the border")
        if self.noise < 0:
            problems.append("noise must be >= 0")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValueError(f"invalid JSON: {e}") from None
        if not isinstance(raw, dict):
            raise ValueError("config must be a JSON object")
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**raw).validate()

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def texture(kind, h, w, top=0, left=0):
    """Two-level periodic pattern, phase-locked to absolute pixel coordinates."""
    i = np.arange(top, top + h)[:, None]
    j = np.arange(left, left + w)[None, :]
    if kind == 0:
        on = (i // 2) % 2 + 0 * j
    elif kind == 1:
        on = (j // 2) % 2 + 0 * i
    elif kind == 2:
        on = (i // 2 + j // 2) % 2
    else:
        on = ((i + j) // 2) % 2
    return np.where(on == 1, _HIGH, _LOW)


def scene_from_layout(config, cue, split, region_textures, rng=None):
    """Render a scene with the given cue, split point and 4 region textures."""
    n, b = config.image_size, config.border
    image = np.empty((3, n, n))
    image[:] = np.asarray(CUE_COLORS[cue])[:, None, None]
    labels = np.full((n, n), VOID, dtype=np.uint8)
    r, c = split
    bounds = [(b, r, b, c), (b, r, c, n - b), (r, n - b, b, c), (r, n - b, c, n - b)]
    for (r0, r1, c0, c1), tex in zip(bounds, region_textures):
        if r1 <= r0 or c1 <= c0:
            continue
        image[:, r0:r1, c0:c1] = texture(tex, r1 - r0, c1 - c0, r0, c0)
        labels[r0:r1, c0:c1] = cue * config.textures + tex
    if config.noise > 0 and rng is not None:
        image = image + rng.normal(0.0, config.noise, image.shape)
    image = pnm.to_uint8(np.clip(image, 0.0, 1.0)).astype(np.float64) / 255.0
    return Sample(image, labels)


def generate_scene(config, seed, index=0):
    """One synthetic sample; a pure function of ``(config, seed, index)``."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    n, b = config.image_size, config.border
    cue = int(rng.integers(config.cues))
    lo, hi = b + (n - 2 * b) // 4, n - b - (n - 2 * b) // 4
    split = (int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1)))
    region_textures = [int(t) for t in rng.integers(config.textures, size=4)]
    return scene_from_layout(config, cue, split, region_textures, rng)


def generate_dataset(config, count, seed):
    return Dataset([generate_scene(config, seed, i) for i in range(count)],
                   num_classes=config.num_classes)


# -- files ----------------------------------------------------------------------

MANIFEST = "manifest.txt"


def write_dataset(dataset, out_dir):
    """Write images (P6/P5), label maps (P5) and a manifest; returns its path."""
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "labels"), exist_ok=True)
    lines = []
    for i, sample in enumerate(dataset):
        ext = ".ppm" if sample.image.shape[0] == 3 else ".pgm"
        img = f"images/{i:05d}{ext}"
        lab = f"labels/{i:05d}.pgm"
        pnm.write_image(os.path.join(out_dir, img), sample.image)
        pnm.write_labels(os.path.join(out_dir, lab), sample.labels)
        lines.append(f"{img}\t{lab}\n")
    path = os.path.join(out_dir, MANIFEST)
    with open(path, "w") as fh:
        fh.writelines(lines)
    return path


def load_dataset(manifest_path, num_classes=None, check_labels=True):
    """Dataset described by a manifest of ``image<TAB>labels`` lines.

    Paths are relative to the manifest's directory.  Headers are checked
    eagerly (files exist, image and label sizes agree); with ``num_classes``
    and ``check_labels`` every label map is also scanned for out-of-range
    values.
    """
    try:
        with open(manifest_path) as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise DataError(f"{manifest_path}: {e.strerror}") from None
    root = os.path.dirname(os.path.abspath(manifest_path))
    entries = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{manifest_path}:{lineno}: expected 'image<TAB>labels'")
        img, lab = (os.path.join(root, p.strip()) for p in parts)
        for p in (img, lab):
            if not os.path.isfile(p):
                raise DataError(f"{manifest_path}:{lineno}: missing file {p}")
        _, ih, iw = pnm.read_header(img)
        lc, lh, lw = pnm.read_header(lab)
        if lc != 1:
            raise DataError(f"{lab}: label maps must be graymaps (P5)")
        if (ih, iw) != (lh, lw):
            raise DataError(f"{manifest_path}:{lineno}: image {ih}x{iw} vs labels {lh}x{lw}")
        if num_classes is not None and check_labels:
            pnm.read_labels(lab, num_classes)
        entries.append((img, lab))
    if not entries:
        raise DataError(f"{manifest_path}: manifest has no entries")
    return Dataset(entries=entries, num_classes=num_classes)
