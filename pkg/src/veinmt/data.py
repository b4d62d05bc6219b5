"""In-memory labelled image collection shared by ingestion, simulation and training."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Missing, unreadable or inconsistent input data (exit code 2)."""


@dataclass
class Dataset:
    images: np.ndarray          # (N, H, W) float32 in [0, 1]
    labels: np.ndarray          # (N,) int, index into class_ids
    class_ids: list[str]
    names: list[str]            # sample names (file stems), parallel to images
    paths: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3 or len(self.images) != len(self.labels) or len(self.names) != len(self.labels):
            raise ValueError("Dataset: images, labels and names must be parallel; images (N, H, W)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.images.shape[1:]

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    def by_class(self) -> dict[int, np.ndarray]:
        """Sample indices per class, in stored (lexicographic) order."""
        return {c: np.flatnonzero(self.labels == c) for c in range(self.num_classes)}

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        used = sorted(set(self.labels[idx].tolist()))
        remap = {c: i for i, c in enumerate(used)}
        return Dataset(
            self.images[idx],
            np.array([remap[c] for c in self.labels[idx]], dtype=np.int64),
            [self.class_ids[c] for c in used],
            [self.names[i] for i in idx],
            [self.paths[i] for i in idx] if self.paths else [],
        )

    def split_per_class(self, train_fraction: float = 0.5) -> tuple["Dataset", "Dataset"]:
        """Sample-disjoint split: the first part of every class trains, the rest tests."""
        tr, te = [], []
        for idx in self.by_class().values():
            cut = int(round(len(idx) * train_fraction))
            tr.extend(idx[:cut])
            te.extend(idx[cut:])
        return self.subset(sorted(tr)), self.subset(sorted(te))
