"""Project folders, image ingestion, capture storage, and train/val splitting.

A project folder mirrors the SD card layout: one subdirectory per class label
holding the captured images, plus a ``header/`` subdirectory with config.json
and the exported weight files. Deploying to hardware is a plain copy of
``header/`` onto the card root.
"""

import io
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .codec import TrainConfig, emit_config, parse_config

log = logging.getLogger(__name__)

HEADER_DIR = "header"
CONFIG_NAME = "config.json"
WEIGHTS_BIN_NAME = "myWeights.bin"
WEIGHTS_H_NAME = "myWeights.h"

IMAGE_EXTS = {".jpg", ".jpeg", ".png"}
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_CAPTURE_RE = re.compile(r"^img_(\d+)\.(?:jpg|jpeg|png)$", re.IGNORECASE)


class DatasetError(Exception):
    """Base error for project-folder and ingestion problems."""


class IngestError(DatasetError):
    pass


class SplitError(DatasetError):
    pass


class UnknownLabel(DatasetError):
    pass


# ----------------------------------------------------------------------
# image decoding
# ----------------------------------------------------------------------

def prepare_image(im: Image.Image, input_size: int, grayscale: bool) -> np.ndarray:
    im = im.convert("RGB")
    if im.size != (input_size, input_size):
        im = im.resize((input_size, input_size), Image.BILINEAR)
    arr = np.asarray(im, dtype=np.float32) / np.float32(255.0)
    if grayscale:
        # luminance taken after the resize so both code paths see one resample
        weights = np.asarray(LUMA_WEIGHTS, dtype=np.float32)
        arr = (arr @ weights)[..., np.newaxis]
    return arr


def decode_image(data: bytes, input_size: int, grayscale: bool = False) -> np.ndarray:
    """Decode JPEG/PNG bytes to a float32 HxWxC array in [0, 1]."""
    with Image.open(io.BytesIO(data)) as im:
        return prepare_image(im, input_size, grayscale)


def load_image(path, input_size: int, grayscale: bool = False) -> np.ndarray:
    with Image.open(path) as im:
        return prepare_image(im, input_size, grayscale)


# ----------------------------------------------------------------------
# ingestion
# ----------------------------------------------------------------------

@dataclass
class LabeledImage:
    class_index: int
    pixels: np.ndarray          # input_size x input_size x C, float32 in [0,1]
    source: str = ""


@dataclass
class IngestResult:
    images: list
    skipped: list               # (path, reason) pairs for undecodable files


def _class_files(class_dir: Path) -> list:
    return sorted(p for p in class_dir.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_EXTS)


def ingest_detailed(root, config: TrainConfig) -> IngestResult:
    """Walk the class subdirectories in label order, sorted within each.

    The walk order is deterministic so downstream splits are reproducible.
    Undecodable files are skipped with a warning and reported; a class with
    no usable images is an error.
    """
    root = Path(root)
    images, skipped = [], []
    for class_index, label in enumerate(config.class_labels):
        class_dir = root / label
        if not class_dir.is_dir():
            raise IngestError(f"missing class directory: {class_dir}")
        count_before = len(images)
        for path in _class_files(class_dir):
            try:
                pixels = load_image(path, config.input_size, config.use_grayscale)
            except Exception as exc:
                log.warning("skipping undecodable image %s: %s", path, exc)
                skipped.append((str(path), str(exc)))
                continue
            images.append(LabeledImage(class_index, pixels, str(path)))
        if len(images) == count_before:
            raise IngestError(f"class {label!r} has no decodable images in {class_dir}")
    return IngestResult(images, skipped)


def ingest(root, config: TrainConfig) -> list:
    return ingest_detailed(root, config).images


# ----------------------------------------------------------------------
# splitting
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Validation holdout policy: a fixed count per class or a fraction."""
    seed: int = 0
    fixed_per_class: int | None = None
    fraction: float | None = None

    def __post_init__(self):
        if (self.fixed_per_class is None) == (self.fraction is None):
            raise ValueError("specify exactly one of fixed_per_class or fraction")
        if self.fixed_per_class is not None and self.fixed_per_class < 0:
            raise ValueError("fixed_per_class must not be negative")
        if self.fraction is not None and not 0.0 < self.fraction < 1.0:
            raise ValueError("fraction must be strictly between 0 and 1")

    @classmethod
    def fixed(cls, n: int, seed: int = 0) -> "SplitSpec":
        return cls(seed=seed, fixed_per_class=n)

    @classmethod
    def proportional(cls, fraction: float, seed: int = 0) -> "SplitSpec":
        return cls(seed=seed, fraction=fraction)


def split(dataset, spec: SplitSpec):
    """Partition into (train, validation), drawing the holdout per class.

    Deterministic under spec.seed; the two halves preserve dataset order and
    their disjoint union is exactly the input.
    """
    by_class = {}
    for pos, item in enumerate(dataset):
        by_class.setdefault(item.class_index, []).append(pos)

    val_positions = set()
    for class_index in sorted(by_class):
        positions = by_class[class_index]
        if spec.fixed_per_class is not None:
            n_val = spec.fixed_per_class
            if n_val > len(positions):
                raise SplitError(
                    f"class {class_index} has {len(positions)} images, "
                    f"cannot hold out {n_val}")
        else:
            n_val = int(round(spec.fraction * len(positions)))
        rng = np.random.default_rng([spec.seed, class_index])
        chosen = rng.choice(len(positions), size=n_val, replace=False)
        val_positions.update(positions[int(i)] for i in chosen)

    train = [item for pos, item in enumerate(dataset) if pos not in val_positions]
    val = [item for pos, item in enumerate(dataset) if pos in val_positions]
    return train, val


# ----------------------------------------------------------------------
# capture storage and project layout
# ----------------------------------------------------------------------

def config_path(root) -> Path:
    return Path(root) / HEADER_DIR / CONFIG_NAME


def load_project_config(root) -> TrainConfig:
    path = config_path(root)
    if not path.is_file():
        raise DatasetError(f"no {HEADER_DIR}/{CONFIG_NAME} under {root}")
    return parse_config(path.read_text())


def save_project_config(root, config: TrainConfig) -> Path:
    path = config_path(root)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(emit_config(config))
    return path


def init_project(root, config: TrainConfig) -> Path:
    """Create the class subdirectories and header/config.json."""
    root = Path(root)
    for label in config.class_labels:
        (root / label).mkdir(parents=True, exist_ok=True)
    save_project_config(root, config)
    return root


def next_capture_number(class_dir: Path) -> int:
    highest = 0
    if class_dir.is_dir():
        for p in class_dir.iterdir():
            m = _CAPTURE_RE.match(p.name)
            if m:
                highest = max(highest, int(m.group(1)))
    return highest + 1


def _as_jpeg(data: bytes) -> bytes:
    if data[:2] == b"\xff\xd8":
        return data
    with Image.open(io.BytesIO(data)) as im:
        buf = io.BytesIO()
        im.convert("RGB").save(buf, "JPEG", quality=90)
        return buf.getvalue()


def save_capture(data: bytes, class_label: str, root) -> Path:
    """Store one captured image as <root>/<label>/img_NNNN.jpg.

    The counter continues from the highest existing number in the class
    directory, so deleting older captures never causes overwrites.
    """
    config = load_project_config(root)
    if class_label not in config.class_labels:
        valid = ", ".join(config.class_labels)
        raise UnknownLabel(f"unknown class label {class_label!r}; valid labels: {valid}")
    class_dir = Path(root) / class_label
    class_dir.mkdir(parents=True, exist_ok=True)
    path = class_dir / f"img_{next_capture_number(class_dir):04d}.jpg"
    path.write_bytes(_as_jpeg(data))
    return path


def class_counts(root, labels) -> dict:
    root = Path(root)
    counts = {}
    for label in labels:
        class_dir = root / label
        counts[label] = len(_class_files(class_dir)) if class_dir.is_dir() else 0
    return counts


# ----------------------------------------------------------------------
# synthetic data
# ----------------------------------------------------------------------

_PALETTE = [
    (0.50, 0.50, 0.50),   # flat gray, the "nothing in view" class
    (0.85, 0.15, 0.15),
    (0.10, 0.35, 0.85),
    (0.10, 0.75, 0.20),
    (0.85, 0.75, 0.10),
]


def synthetic_image(class_index: int, size: int, rng) -> np.ndarray:
    """One synthetic sample: a class-specific color field plus texture and noise."""
    base = np.array(_PALETTE[class_index % len(_PALETTE)], dtype=np.float64)
    img = np.tile(base, (size, size, 1))
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    style = class_index % 3
    if style == 1:
        img[((xx + yy) // 8) % 2 == 1] *= 0.55    # diagonal stripes
    elif style == 2:
        img[(xx // 8) % 2 == 1] *= 0.55           # vertical bars
    img = img + rng.uniform(-0.06, 0.06, size=3)  # per-image color jitter
    img = img + rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def make_synthetic_dataset(root, labels, per_class: int = 30, *,
                           input_size: int = 64, seed: int = 0) -> list:
    """Write a separable synthetic image set under root, one dir per label.

    Images are PNG at exactly input_size so ingestion skips resampling and
    the files stay lossless end to end.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    paths = []
    for class_index, label in enumerate(labels):
        class_dir = root / label
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            img = synthetic_image(class_index, input_size, rng)
            data = np.rint(img * 255.0).astype(np.uint8)
            path = class_dir / f"img_{i + 1:04d}.png"
            Image.fromarray(data).save(path, "PNG")
            paths.append(path)
    return paths
