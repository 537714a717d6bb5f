"""Frame sampling and seeded batching."""

from __future__ import annotations

from typing import Iterator, Sequence, TypeVar

import numpy as np

from ..errors import ConfigError, DataError

T = TypeVar("T")


def sample_frames(frame_count: int, l_v: int, k: int) -> list[np.ndarray]:
    """Spread ``l_v`` indices evenly over the video and cut them into ``k`` clips.

    Indices are nearest-rounded points of an even grid from the first to the
    last frame, so short videos repeat frames instead of padding.
    """
    if k < 1 or l_v % k:
        raise ConfigError(f"l_v={l_v} frames cannot be split into k={k} equal clips")
    if frame_count < 1:
        raise DataError("video has no frames")
    if l_v == 1:
        idx = np.zeros(1, dtype=np.int64)
    else:
        grid = np.arange(l_v, dtype=np.float64) * (frame_count - 1) / (l_v - 1)
        idx = np.floor(grid + 0.5).astype(np.int64)
    return list(idx.reshape(k, l_v // k))


def make_batches(samples: Sequence[T], batch_size: int, seed: int, epoch: int = 0,
                 shuffle: bool = True) -> Iterator[list[T]]:
    """Yield batches in an order fixed by ``(seed, epoch)``."""
    if not len(samples):
        raise DataError("cannot batch an empty dataset")
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(samples))
    else:
        order = np.arange(len(samples))
    for start in range(0, len(order), batch_size):
        yield [samples[int(i)] for i in order[start:start + batch_size]]
