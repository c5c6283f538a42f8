"""Deterministic k-fold plans (plain, stratified, repeated, nested)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from ._seeding import derive_seed
from .utils.validation import ValidationError

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """64-bit-state generator (Steele, Lea & Flood 2014).

    Used for fold shuffling so plans are bit-identical on every platform and
    numpy version.  ``below(m)`` maps a 64-bit draw onto ``[0, m)`` with the
    multiply-shift reduction ``(x * m) >> 64``.
    """

    def __init__(self, state: int):
        self.state = int(state) & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, m: int) -> int:
        return (self.next() * m) >> 64

    def shuffle(self, items: list) -> list:
        """In-place Fisher-Yates; returns ``items``."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of rows to ``k`` folds.

    Also usable as an sklearn CV splitter (``split`` / ``get_n_splits``).
    """

    k: int
    assignments: np.ndarray
    seed: int
    strata: tuple | None = None
    indices: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "assignments", a)
        if self.indices is None:
            idx = np.arange(a.shape[0], dtype=np.int64)
        else:
            idx = np.asarray(self.indices, dtype=np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def n(self) -> int:
        return int(self.assignments.shape[0])

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)

    def test_index(self, fold: int) -> np.ndarray:
        return self.indices[self.assignments == fold]

    def train_index(self, fold: int) -> np.ndarray:
        return self.indices[self.assignments != fold]

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for f in range(self.k):
            yield self.train_index(f), self.test_index(f)

    def __len__(self) -> int:
        return self.k

    # sklearn splitter protocol
    def split(self, X=None, y=None, groups=None):
        if X is not None and len(X) != self.n:
            raise ValidationError(f"plan covers {self.n} rows, got {len(X)}")
        for f in range(self.k):
            yield (np.flatnonzero(self.assignments != f), np.flatnonzero(self.assignments == f))

    def get_n_splits(self, X=None, y=None, groups=None) -> int:
        return self.k

    def inner(self, fold: int, k: int, seed: int | None = None) -> "FoldPlan":
        """Plan over the training rows of ``fold``; indices stay global."""
        train = self.train_index(fold)
        pos = self.assignments != fold
        strata = None
        if self.strata is not None:
            strata = [s for s, keep in zip(self.strata, pos) if keep]
        base = self.seed if seed is None else seed
        sub = make_folds(train.shape[0], k, derive_seed(base, "inner", fold), strata=strata)
        return FoldPlan(k=sub.k, assignments=sub.assignments, seed=sub.seed, strata=sub.strata,
                        indices=train)


def make_folds(n: int, k: int, seed: int, strata: Sequence | None = None) -> FoldPlan:
    """Shuffle rows (within each stratum) and deal them round-robin to folds.

    With strata, each stratum is shuffled on its own stream and dealing
    continues from where the previous stratum stopped, which keeps overall
    fold sizes within one of each other as well as per stratum.
    """
    n = int(n)
    k = int(k)
    if k < 2:
        raise ValidationError("k must be >= 2")
    if k > n:
        raise ValidationError(f"cannot make {k} folds from {n} rows")
    if seed is None:
        raise ValidationError("a seed is required")
    assignments = np.empty(n, dtype=np.int64)
    if strata is None:
        groups = [list(range(n))]
        labels = None
    else:
        labels = tuple(strata)
        if len(labels) != n:
            raise ValidationError(f"{len(labels)} strata labels for {n} rows")
        order: dict = {}
        for i, s in enumerate(labels):
            order.setdefault(s, []).append(i)
        groups = list(order.values())
    offset = 0
    for g, rows in enumerate(groups):
        SplitMix64(derive_seed(seed, "folds", g)).shuffle(rows)
        for pos, row in enumerate(rows):
            assignments[row] = (offset + pos) % k
        offset = (offset + len(rows)) % k
    return FoldPlan(k=k, assignments=assignments, seed=int(seed), strata=labels)


def repeated_folds(n: int, k: int, repeats: int, seed: int, strata=None) -> list[FoldPlan]:
    return [make_folds(n, k, derive_seed(seed, "repeat", r), strata=strata) for r in range(repeats)]


def compare_combined_vs_split(*args, **kwargs):
    """Combined-versus-per-group evaluation; see :mod:`qrfx.supplement`."""
    from .supplement import compare_combined_vs_split as impl

    return impl(*args, **kwargs)
