"""
Counter-based random streams and the worker pool.

Every random draw is addressed by a label path below one master seed. A path
maps to ``SeedSequence(entropy=master, spawn_key=path)`` feeding a Philox
generator, so any stream can be regenerated in isolation and results never
depend on how work is scheduled across threads.
"""

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np

logger = logging.getLogger(__name__)

BLOCK_ROWS = 4096

T = TypeVar("T")
R = TypeVar("R")
Label = Union[int, str]
Mapper = Callable[[Callable[[T], R], Sequence[T]], List[R]]


def _label_key(label: Label) -> int:
    if isinstance(label, (bool, np.bool_)):
        raise TypeError("stream labels must be int or str, not bool")
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"stream label must be >= 0, got {label}")
        return int(label)
    if isinstance(label, str):
        return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=4).digest(), "little")
    raise TypeError(f"stream labels must be int or str, got {type(label).__name__}")


class SeedTree:
    """
    Hierarchical seed: a master seed plus a path of labels.

    ``tree.child("noise", 3)`` addresses the stream of neuron 3 in the noise
    stage; string labels are hashed stably so paths are readable.
    """

    def __init__(self, master: int, path: Tuple[int, ...] = ()):
        if master < 0 or master >= 2**64:
            raise ValueError(f"master seed must be an unsigned 64-bit integer, got {master}")
        self.master = int(master)
        self.path = tuple(path)

    def child(self, *labels: Label) -> "SeedTree":
        return SeedTree(self.master, self.path + tuple(_label_key(label) for label in labels))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=self.master, spawn_key=self.path)

    def generator(self, *labels: Label) -> np.random.Generator:
        """Philox generator for this node (or a child when labels are given)."""
        node = self.child(*labels) if labels else self
        return np.random.Generator(np.random.Philox(node.seed_sequence()))

    def row_normals(self, label: Label, rows: int, cols: int, mapper: Optional[Mapper] = None) -> np.ndarray:
        """
        Standard normals of shape (rows, cols) with one stream per row.

        Row ``i`` comes from ``child(label, i)``, so any subset of rows can be
        regenerated and relabelled rows move with their stream.
        """
        return self.indexed_normals(label, range(rows), cols, mapper)

    def indexed_normals(
        self, label: Label, ids: Iterable[int], cols: int, mapper: Optional[Mapper] = None
    ) -> np.ndarray:
        """Standard normals with row ``k`` drawn from ``child(label, ids[k])``."""
        ids = list(ids)
        if not ids:
            return np.empty((0, cols))
        node = self.child(label)

        def draw(i: int) -> np.ndarray:
            return node.generator(i).standard_normal(cols)

        rows = (mapper or serial_map)(draw, ids)
        return np.vstack(rows)

    def block_normals(self, label: Label, rows: int, cols: int, mapper: Optional[Mapper] = None) -> np.ndarray:
        """
        Standard normals of shape (rows, cols) generated in fixed blocks of
        ``BLOCK_ROWS`` rows, one stream per block.
        """
        if rows == 0:
            return np.empty((0, cols))
        node = self.child(label)
        starts = list(range(0, rows, BLOCK_ROWS))

        def draw(start: int) -> np.ndarray:
            size = min(BLOCK_ROWS, rows - start)
            return node.generator(start // BLOCK_ROWS).standard_normal((size, cols))

        return np.vstack((mapper or serial_map)(draw, starts))

    def __repr__(self) -> str:
        return f"SeedTree(master={self.master}, path={self.path})"


SeedLike = Union[int, SeedTree]


def as_seed_tree(seed: SeedLike) -> SeedTree:
    """Accept a plain integer seed or an existing tree node."""
    if isinstance(seed, SeedTree):
        return seed
    return SeedTree(int(seed))


def serial_map(fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
    return [fn(item) for item in items]


class WorkerPool:
    """
    Thread pool owned by the command line and handed to library code as a
    ``map`` capability. Output order always matches input order.
    """

    def __init__(self, threads: int = 1):
        if threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        self.threads = threads
        self._executor: Optional[ThreadPoolExecutor] = None
        if threads > 1:
            self._executor = ThreadPoolExecutor(max_workers=threads, thread_name_prefix="neurofield")
            logger.info(f"Started worker pool with {threads} threads")

    def map(self, fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        if self._executor is None:
            return serial_map(fn, items)
        return list(self._executor.map(fn, items))

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()
