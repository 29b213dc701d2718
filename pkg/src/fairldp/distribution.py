"""Joint-distribution summaries and the two data-level unfairness metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGroup, NonBinaryLabel, ZeroPositiveRate

PROB_ATOL = 1e-9


def _frozen_vector(values, name: str, k: int) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != (k,):
        raise ValueError(f"{name} must be a length-{k} vector, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """Summary of a joint law over (sensitive value, binary label).

    Attributes:
        k: number of sensitive-attribute values.
        group_probs: group_probs[a] = Pr(A = a), strictly positive, sums to 1.
        pos_rates: pos_rates[a] = Pr(Y = 1 | A = a), each in [0, 1].
        pos_marginal: Pr(Y = 1). Stored explicitly so summaries of perturbed
            data can keep the original positive marginal, which the relative
            unfairness metric divides by.
    """

    k: int
    group_probs: np.ndarray
    pos_rates: np.ndarray
    pos_marginal: float

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"need k >= 2, got k = {self.k}")
        gp = _frozen_vector(self.group_probs, "group_probs", self.k)
        pr = _frozen_vector(self.pos_rates, "pos_rates", self.k)
        object.__setattr__(self, "group_probs", gp)
        object.__setattr__(self, "pos_rates", pr)
        object.__setattr__(self, "pos_marginal", float(self.pos_marginal))
        if np.any(gp <= 0.0):
            raise ValueError("group probabilities must be strictly positive")
        if abs(float(gp.sum()) - 1.0) > PROB_ATOL:
            raise ValueError(f"group probabilities sum to {float(gp.sum())!r}, not 1")
        if np.any(pr < 0.0) or np.any(pr > 1.0):
            raise ValueError("positive rates must lie in [0, 1]")
        if abs(float(gp @ pr) - self.pos_marginal) > PROB_ATOL:
            raise ValueError(
                f"pos_marginal {self.pos_marginal!r} inconsistent with "
                f"sum(group_probs * pos_rates) = {float(gp @ pr)!r}"
            )

    @classmethod
    def from_rates(cls, group_probs, pos_rates) -> "JointDistribution":
        """Build a distribution with the positive marginal filled in."""
        gp = np.asarray(group_probs, dtype=float)
        pr = np.asarray(pos_rates, dtype=float)
        return cls(
            k=gp.shape[0],
            group_probs=gp,
            pos_rates=pr,
            pos_marginal=float(gp @ pr),
        )


def estimate_distribution(dataset) -> JointDistribution:
    """Empirical plug-in estimate from a tabular dataset.

    Uses unsmoothed frequencies. A sensitive value with zero records is an
    error rather than being smoothed, because downstream formulas divide by
    group-probability-weighted sums.
    """
    if getattr(dataset, "indicator_columns", None) is not None:
        raise TypeError(
            "data-unfairness metrics are not defined for subset-valued "
            "sensitive reports; estimate the distribution before perturbing "
            "or use a value-valued mechanism"
        )
    sensitive = np.asarray(dataset.sensitive)
    labels = np.asarray(dataset.labels)
    k = int(dataset.k)
    if sensitive.shape[0] == 0:
        raise EmptyGroup(0)
    bad = ~np.isin(labels, (0, 1))
    if bad.any():
        first = labels[bad][0]
        raise NonBinaryLabel(f"label {first!r} is outside {{0, 1}}")
    n = sensitive.shape[0]
    counts = np.bincount(sensitive, minlength=k).astype(float)
    for a in range(k):
        if counts[a] == 0:
            raise EmptyGroup(a)
    pos_counts = np.bincount(sensitive, weights=(labels == 1).astype(float), minlength=k)
    return JointDistribution(
        k=k,
        group_probs=counts / n,
        pos_rates=pos_counts / counts,
        pos_marginal=float(np.mean(labels == 1)),
    )


def delta(dist: JointDistribution) -> float:
    """Largest relative deviation of a group's positive rate from the marginal."""
    if dist.pos_marginal <= 0.0:
        raise ZeroPositiveRate("pos_marginal = 0, relative deviation undefined")
    return float(np.max(np.abs(dist.pos_rates / dist.pos_marginal - 1.0)))


def delta_prime(dist: JointDistribution) -> float:
    """Largest pairwise absolute difference between group positive rates."""
    return float(np.max(dist.pos_rates) - np.min(dist.pos_rates))


def equivalence_bounds(dist: JointDistribution) -> tuple[float, float]:
    """Constants (c1, c2) tying the two metrics together.

    delta(d) <= c1 * delta_prime(d) and delta_prime(d) <= c2 * delta(d)
    hold for every valid distribution with a positive marginal.
    """
    if dist.pos_marginal <= 0.0:
        raise ZeroPositiveRate("pos_marginal = 0, bounds undefined")
    return 1.0 / dist.pos_marginal, 2.0 * dist.pos_marginal
