"""Load a ``<root>/<class_id>/<sample>.png|.pgm`` tree of 8-bit grayscale images."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .data import DataError, Dataset

log = logging.getLogger(__name__)

SUFFIXES = (".png", ".pgm")
IMAGE_SHAPE = (64, 144)


def load_image(path, shape=IMAGE_SHAPE) -> np.ndarray:
    """Float32 image in [0, 1]; other sizes are bilinearly resized to ``shape`` with a warning."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode != "L":
                log.warning("%s: mode %s converted to 8-bit grayscale", path, im.mode)
                im = im.convert("L")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if arr.shape != tuple(shape):
        log.warning("%s: %dx%d resized to %dx%d", path, arr.shape[0], arr.shape[1], shape[0], shape[1])
        resized = Image.fromarray(arr, mode="F").resize((shape[1], shape[0]), Image.BILINEAR)
        arr = np.clip(np.asarray(resized, dtype=np.float32), 0.0, 1.0)
    return arr


def ingest_dataset(root, shape=IMAGE_SHAPE) -> Dataset:
    """Class directories and files are both taken in lexicographic order."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    images, labels, class_ids, names, paths = [], [], [], [], []
    for cdir in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(p for p in cdir.iterdir() if p.is_file() and p.suffix.lower() in SUFFIXES)
        if not files:
            log.warning("class directory %s has no images; skipped", cdir)
            continue
        for f in files:
            images.append(load_image(f, shape))
            labels.append(len(class_ids))
            names.append(f.stem)
            paths.append(str(f))
        class_ids.append(cdir.name)
    if not images:
        raise DataError(f"no images found under {root}")
    return Dataset(np.stack(images), np.array(labels), class_ids, names, paths)
