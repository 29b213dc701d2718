"""Local-privacy mechanisms over a finite alphabet.

Covers the randomized-response family (binary and k-ary), subset reports,
exact privacy verification, the induced post-perturbation distribution, and
seeded record-level perturbation of datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distribution import JointDistribution
from .errors import AlphabetMismatch, DegenerateOutput, InvalidEpsilon

ENTRY_ATOL = 1e-9


@dataclass(frozen=True, eq=False)
class MechanismMatrix:
    """Row-stochastic matrix Q with entries[i][j] = Pr(report j | truth i)."""

    k: int
    entries: np.ndarray

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"need k >= 2, got k = {self.k}")
        q = np.array(self.entries, dtype=float)
        if q.shape != (self.k, self.k):
            raise ValueError(f"entries must be {self.k}x{self.k}, got {q.shape}")
        if np.any(q < -ENTRY_ATOL) or np.any(q > 1.0 + ENTRY_ATOL):
            raise ValueError("entries must lie in [0, 1]")
        rows = q.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > ENTRY_ATOL):
            raise ValueError(f"rows must sum to 1, got sums {rows!r}")
        q = np.clip(q, 0.0, 1.0)
        q.setflags(write=False)
        object.__setattr__(self, "entries", q)

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "entries": [[float(v) for v in row] for row in self.entries],
            "epsilon_star": privacy_level(self),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "MechanismMatrix":
        return cls(k=int(payload["k"]), entries=np.array(payload["entries"], dtype=float))


@dataclass(frozen=True)
class BinaryMechanism:
    """The two-parameter binary mechanism.

    p = Pr(report 0 | truth 0) and q = Pr(report 1 | truth 1). Both sit in
    [1/2, 1]: anything below one half reports the opposite value more often
    than the truth and has no utility.
    """

    p: float
    q: float

    def __post_init__(self):
        for name, value in (("p", self.p), ("q", self.q)):
            if not 0.5 - ENTRY_ATOL <= value <= 1.0 + ENTRY_ATOL:
                raise ValueError(f"{name} = {value!r} outside [1/2, 1]")


@dataclass(frozen=True)
class SubsetReport:
    """A reported subset of the alphabet, always of size omega."""

    omega: int
    members: frozenset

    def __post_init__(self):
        if self.omega < 1:
            raise ValueError(f"omega must be >= 1, got {self.omega}")
        if len(self.members) != self.omega:
            raise ValueError(
                f"report has {len(self.members)} members, expected omega = {self.omega}"
            )
        if any((not isinstance(v, (int, np.integer))) or v < 0 for v in self.members):
            raise ValueError("members must be non-negative integers")

    def to_sorted_list(self) -> list[int]:
        return sorted(int(v) for v in self.members)


@dataclass(frozen=True)
class SsParams:
    """Subset-report parameters; iterates as (omega, p_true) for unpacking."""

    omega: int
    p_true: float
    k: int
    epsilon: float

    def __iter__(self):
        return iter((self.omega, self.p_true))

    @property
    def p_off(self) -> float:
        """Inclusion probability of any fixed value other than the truth."""
        stay = self.p_true * (self.omega - 1) / (self.k - 1)
        move = (1.0 - self.p_true) * self.omega / (self.k - 1)
        return stay + move


def ss_privacy_level(params: SsParams) -> float:
    """Exact privacy level of the subset mechanism.

    The worst report-probability ratio is attained on a subset containing
    one truth and excluding the other: p_true / C(k-1, omega-1) against
    (1 - p_true) / C(k-1, omega), which simplifies to
    p_true (k - omega) / ((1 - p_true) omega).
    """
    ratio = (
        params.p_true
        * (params.k - params.omega)
        / ((1.0 - params.p_true) * params.omega)
    )
    return math.log(ratio)


def grr_matrix(k: int, epsilon: float) -> MechanismMatrix:
    """k-ary randomized response: keep the truth with probability
    e^eps / (e^eps + k - 1), otherwise report a uniform other value.
    """
    if epsilon <= 0:
        raise InvalidEpsilon(epsilon)
    if k < 2:
        raise ValueError(f"need k >= 2, got k = {k}")
    e = math.exp(epsilon)
    keep = e / (e + k - 1)
    flip = 1.0 / (e + k - 1)
    q = np.full((k, k), flip)
    np.fill_diagonal(q, keep)
    return MechanismMatrix(k=k, entries=q)


def rr_mechanism(epsilon: float) -> BinaryMechanism:
    """Binary randomized response: p = q = e^eps / (e^eps + 1)."""
    if epsilon <= 0:
        raise InvalidEpsilon(epsilon)
    e = math.exp(epsilon)
    keep = e / (e + 1.0)
    return BinaryMechanism(p=keep, q=keep)


def ss_params(k: int, epsilon: float) -> SsParams:
    """Subset-report parameters for alphabet size k at budget epsilon.

    omega = round(k / (e^eps + 1)), rounding half away from zero and clamped
    to [1, k - 1]; p_true = omega * e^eps / (omega * e^eps + k - omega).
    """
    if epsilon <= 0:
        raise InvalidEpsilon(epsilon)
    if k < 2:
        raise ValueError(f"need k >= 2, got k = {k}")
    e = math.exp(epsilon)
    raw = k / (e + 1.0)
    omega = int(math.floor(raw + 0.5))
    omega = max(1, min(k - 1, omega))
    p_true = omega * e / (omega * e + k - omega)
    return SsParams(omega=omega, p_true=p_true, k=k, epsilon=epsilon)


def ss_perturb(a: int, params: SsParams, rng: np.random.Generator) -> SubsetReport:
    """Draw one subset report for true value a.

    Three steps: include a with probability p_true; fill the remaining slots
    uniformly without replacement from the other values; if a was excluded,
    draw all omega members from the other values.
    """
    k, omega = params.k, params.omega
    if not 0 <= a < k:
        raise ValueError(f"true value {a} outside [0, {k})")
    others = np.array([v for v in range(k) if v != a])
    if rng.random() < params.p_true:
        members = {a}
        if omega > 1:
            members.update(int(v) for v in rng.choice(others, size=omega - 1, replace=False))
    else:
        members = {int(v) for v in rng.choice(others, size=omega, replace=False)}
    return SubsetReport(omega=omega, members=frozenset(members))


def matrix_of_binary(m: BinaryMechanism) -> MechanismMatrix:
    """Embed a binary mechanism as its 2x2 matrix [[p, 1-p], [1-q, q]]."""
    return MechanismMatrix(
        k=2, entries=np.array([[m.p, 1.0 - m.p], [1.0 - m.q, m.q]])
    )


@dataclass(frozen=True)
class LdpAudit:
    """Result of checking a matrix against a privacy budget.

    ok is the verdict; worst_ratio is the largest column ratio
    max_j max_{i,i'} q_ij / q_i'j (inf when a column mixes zero and
    nonzero mass). witness identifies (row_hi, row_lo, column) achieving it.
    """

    ok: bool
    worst_ratio: float
    epsilon: float
    tol: float
    witness: tuple[int, int, int] | None

    def __bool__(self) -> bool:
        return self.ok


def verify_ldp(Q: MechanismMatrix, epsilon: float, tol: float = 1e-9) -> LdpAudit:
    """Check the privacy inequality q_ij <= e^eps * q_i'j + tol for all i, i', j."""
    if epsilon <= 0:
        raise InvalidEpsilon(epsilon)
    e = math.exp(epsilon)
    q = Q.entries
    ok = True
    worst = 1.0
    witness = None
    for j in range(Q.k):
        col = q[:, j]
        hi_i = int(np.argmax(col))
        lo_i = int(np.argmin(col))
        hi, lo = float(col[hi_i]), float(col[lo_i])
        if hi == 0.0:
            continue
        if hi > e * lo + tol:
            ok = False
        ratio = math.inf if lo == 0.0 else hi / lo
        if ratio > worst:
            worst = ratio
            witness = (hi_i, lo_i, j)
    return LdpAudit(ok=ok, worst_ratio=worst, epsilon=epsilon, tol=tol, witness=witness)


def privacy_level(Q: MechanismMatrix) -> float:
    """Exact privacy level: ln of the worst column ratio.

    Returns inf when some column mixes zero and nonzero entries. Columns with
    no mass at all impose no constraint and are skipped.
    """
    q = Q.entries
    worst = 1.0
    for j in range(Q.k):
        col = q[:, j]
        hi = float(col.max())
        if hi == 0.0:
            continue
        lo = float(col.min())
        if lo == 0.0:
            return math.inf
        worst = max(worst, hi / lo)
    return math.log(worst)


def induced_distribution(dist: JointDistribution, Q: MechanismMatrix) -> JointDistribution:
    """Distribution of (reported value, label) after pushing A through Q.

    The report is independent of Y given A, so the positive marginal is
    unchanged; only the group axis is re-mixed.
    """
    if Q.k != dist.k:
        raise AlphabetMismatch(Q.k, dist.k)
    gp = dist.group_probs
    mass = gp @ Q.entries
    for a in range(dist.k):
        if mass[a] <= 0.0:
            raise DegenerateOutput(a)
    pos_mass = (gp * dist.pos_rates) @ Q.entries
    rates = np.clip(pos_mass / mass, 0.0, 1.0)
    return JointDistribution(
        k=dist.k,
        group_probs=mass,
        pos_rates=rates,
        pos_marginal=dist.pos_marginal,
    )


def ss_induced_distribution(dist: JointDistribution, params: SsParams) -> JointDistribution:
    """Distribution of (fired indicator, label) pairs under subset selection.

    Every record reports a size-omega subset, so it fires exactly omega
    indicators and the pair population keeps the original positive marginal.
    Indicator i fires with probability p_true when i is the truth and p_off
    otherwise, independent of the label given the sensitive value.
    """
    if params.k != dist.k:
        raise AlphabetMismatch(params.k, dist.k)
    gp = dist.group_probs
    pos = gp * dist.pos_rates
    pos_total = float(pos.sum())
    mass = params.p_true * gp + params.p_off * (1.0 - gp)
    pos_mass = params.p_true * pos + params.p_off * (pos_total - pos)
    rates = np.clip(pos_mass / mass, 0.0, 1.0)
    return JointDistribution(
        k=dist.k,
        group_probs=mass / params.omega,
        pos_rates=rates,
        pos_marginal=dist.pos_marginal,
    )


def record_rng(seed: int, index: int) -> np.random.Generator:
    """Per-record generator: record index i draws from seed XOR i.

    One root seed fixes every record's stream independently of processing
    order, so perturbation is order-stable and parallelizable.
    """
    return np.random.default_rng(seed ^ index)


def perturb_dataset(dataset, mech, seed: int):
    """Replace each record's sensitive value with one mechanism draw.

    mech is either a MechanismMatrix (the output is again a value in [k]) or
    SsParams (the output subsets are encoded as k indicator columns).
    Features and labels are untouched. Fully reproducible from (seed,
    record order).
    """
    from .dataset import SubsetPerturbedDataset, TabularDataset

    if isinstance(mech, MechanismMatrix):
        if mech.k != dataset.k:
            raise AlphabetMismatch(mech.k, dataset.k)
        cum = np.cumsum(mech.entries, axis=1)
        cum[:, -1] = 1.0
        sensitive = np.asarray(dataset.sensitive)
        out = np.empty_like(sensitive)
        for i in range(sensitive.shape[0]):
            u = record_rng(seed, i).random()
            out[i] = int(np.searchsorted(cum[sensitive[i]], u, side="right"))
        return TabularDataset(
            feature_columns=dict(dataset.feature_columns),
            sensitive=out,
            labels=dataset.labels,
            k=dataset.k,
            sensitive_name=dataset.sensitive_name,
            sensitive_values=dataset.sensitive_values,
            label_values=dataset.label_values,
            provenance=dataset.provenance,
        )
    if isinstance(mech, SsParams):
        if mech.k != dataset.k:
            raise AlphabetMismatch(mech.k, dataset.k)
        sensitive = np.asarray(dataset.sensitive)
        n = sensitive.shape[0]
        indicators = np.zeros((n, dataset.k), dtype=float)
        for i in range(n):
            report = ss_perturb(int(sensitive[i]), mech, record_rng(seed, i))
            for v in report.members:
                indicators[i, v] = 1.0
        columns = {
            f"{dataset.sensitive_name}={dataset.sensitive_values[v]}": indicators[:, v]
            for v in range(dataset.k)
        }
        return SubsetPerturbedDataset(
            feature_columns=dict(dataset.feature_columns),
            indicator_columns=columns,
            labels=dataset.labels,
            k=dataset.k,
            sensitive_name=dataset.sensitive_name,
            sensitive_values=dataset.sensitive_values,
            label_values=dataset.label_values,
            provenance=dataset.provenance,
        )
    raise TypeError(f"unsupported mechanism type {type(mech).__name__}")
