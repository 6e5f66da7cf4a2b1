"""Label-space domain types and the elementary margin operations.

Labels are 0-indexed everywhere, including file formats and reports.
Probability vectors are plain float arrays validated at the boundaries;
label subsets are normalized to sorted tuples so that ties and iteration
order are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import DegenerateRenormalizationError, ValidationError

#: Sentinel label for a certifier that declines to certify.
ABSTAIN = -1

#: Absolute tolerance on the sum of a probability vector. File-ingested
#: probabilities carry rounding error; strict equality would reject them.
PROB_SUM_TOL = 1e-9


@dataclass(frozen=True)
class LabelSpace:
    """A classification output space of m labels, optionally named."""

    m: int
    names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.m < 2:
            raise ValidationError(f"a label space needs at least 2 labels, got {self.m}")
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))
            if len(self.names) != self.m:
                raise ValidationError("names length must equal m")
            if len(set(self.names)) != self.m:
                raise ValidationError("label names must be unique")


@dataclass(frozen=True)
class LabelPartition:
    """Disjoint, nonempty label-index classes covering {0, ..., m-1}."""

    classes: tuple[tuple[int, ...], ...]
    n_labels: int = field(default=0)

    def __post_init__(self):
        classes = tuple(tuple(sorted(int(i) for i in c)) for c in self.classes)
        object.__setattr__(self, "classes", classes)
        n = self.n_labels or (max((c[-1] for c in classes if c), default=-1) + 1)
        object.__setattr__(self, "n_labels", n)
        seen: set[int] = set()
        for c in classes:
            if not c:
                raise ValidationError("partition classes must be nonempty")
            for i in c:
                if not 0 <= i < n:
                    raise ValidationError(f"label {i} outside 0..{n - 1}")
                if i in seen:
                    raise ValidationError(f"label {i} appears in more than one class")
                seen.add(i)
        if len(seen) != n:
            missing = sorted(set(range(n)) - seen)
            raise ValidationError(f"partition does not cover labels {missing}")

    def class_of(self, label: int) -> int:
        for idx, c in enumerate(self.classes):
            if label in c:
                return idx
        raise ValidationError(f"label {label} not in partition")

    def __len__(self) -> int:
        return len(self.classes)


@dataclass(frozen=True)
class CertifiedPrediction:
    """Outcome of one certification: label, certified radius, and provenance.

    `radius` is None exactly when the certifier abstained; it is +inf only
    for singleton label subsets or degenerate exact-probability inputs.
    """

    label: int
    radius: Optional[float]
    p_a_lower: float
    sigma: float
    n_samples: int = 0

    def __post_init__(self):
        if self.label == ABSTAIN:
            if self.radius is not None:
                raise ValidationError("abstaining prediction must not carry a radius")
        else:
            if self.radius is None or self.radius < 0:
                raise ValidationError("certified radius must be nonnegative")
        if not 0.0 <= self.p_a_lower <= 1.0:
            raise ValidationError("p_a_lower must lie in [0, 1]")

    @property
    def abstained(self) -> bool:
        return self.label == ABSTAIN


def as_probability_vector(p, *, validate: bool = True) -> np.ndarray:
    """Coerce to a 1-D float64 array and optionally check simplex invariants."""
    v = np.asarray(p, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError("probability vector must be 1-D and nonempty")
    if validate:
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise ValidationError("probabilities must lie in [0, 1]")
        if abs(float(v.sum()) - 1.0) > PROB_SUM_TOL:
            raise ValidationError(f"probabilities sum to {v.sum()!r}, expected 1")
    return v


def normalize_subset(subset: Iterable[int], m: int) -> tuple[int, ...]:
    """Sorted, validated, duplicate-free label subset."""
    s = tuple(sorted({int(i) for i in subset}))
    if not s:
        raise ValidationError("label subset must be nonempty")
    if s[0] < 0 or s[-1] >= m:
        raise ValidationError(f"subset {s} not contained in 0..{m - 1}")
    return s


def hinge_gap(alpha, c: int, competitors: Iterable[int]) -> float:
    """Top-class probability of c minus the best competitor within a label set.

    Returns +inf when the competitor set minus {c} is empty (a singleton
    equivalence class cannot be attacked within itself). Shrinking the
    competitor set can only widen the gap.
    """
    v = as_probability_vector(alpha)
    if not 0 <= int(c) < v.size:
        raise ValidationError(f"label {c} outside 0..{v.size - 1}")
    subset = normalize_subset(competitors, v.size)
    others = [i for i in subset if i != int(c)]
    if not others:
        return math.inf
    return float(v[int(c)] - v[others].max())


def renormalize(p, subset: Iterable[int]) -> np.ndarray:
    """Restrict a probability vector to a subset and rescale to sum 1.

    The result is ordered by ascending label index. Zero total mass on the
    subset raises DegenerateRenormalizationError; callers treat that sample
    as an abstention.
    """
    v = as_probability_vector(p)
    s = normalize_subset(subset, v.size)
    picked = v[list(s)]
    total = float(picked.sum())
    if total <= 0.0:
        raise DegenerateRenormalizationError(f"zero probability mass on subset {s}")
    return picked / total


def argmax_label(p, subset: Optional[Iterable[int]] = None) -> int:
    """Index of the maximal probability, ties broken by lowest label index."""
    v = as_probability_vector(p)
    if subset is None:
        return int(np.argmax(v))
    s = normalize_subset(subset, v.size)
    local = int(np.argmax(v[list(s)]))
    return s[local]
