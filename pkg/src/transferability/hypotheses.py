"""Classifier families, risks under 0-1 and cross-entropy loss, and minimal sets."""
import logging
from dataclasses import dataclass, field
from typing import Annotated, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .constants import ABSTAIN, DEFAULT_CLAMP, DEFAULT_GRID_POINTS, RHO_MAX, RHO_MIN, RISK_TOL
from .domains import PIECEWISE, Domain, LabeledJoint, SampleSet, Variant
from .errors import UnsupportedOperationError, ValidationError

logger = logging.getLogger(__name__)


class LossKind(BaseModel):
    """0-1 loss or base-2 cross entropy on clamped probabilities."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["zero_one", "cross_entropy"] = "zero_one"
    clamp: float = Field(DEFAULT_CLAMP, gt=0.0, lt=0.5)

    @classmethod
    def zero_one(cls) -> "LossKind":
        return cls(kind="zero_one")

    @classmethod
    def cross_entropy(cls, clamp: float = DEFAULT_CLAMP) -> "LossKind":
        return cls(kind="cross_entropy", clamp=clamp)

    @property
    def is_surrogate(self) -> bool:
        return self.kind == "cross_entropy"

    def costs(self, K: int) -> Tuple[float, float, float]:
        """Loss of a hard prediction that is (correct, wrong, abstaining).

        Under cross entropy a hard label is read as the most confident clamped
        output, and an abstention as the uniform vector.
        """
        if not self.is_surrogate:
            return 0.0, 1.0, 1.0
        if (K - 1) * self.clamp >= 1.0:
            raise ValidationError(f"clamp {self.clamp} too large for K={K}")
        return -float(np.log2(1.0 - (K - 1) * self.clamp)), -float(np.log2(self.clamp)), float(np.log2(K))

    def pointwise(self, probs: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-point loss of probability outputs ``probs`` (m, K) on labels ``y``."""
        if self.is_surrogate:
            return -np.log2(probs[np.arange(y.size), y])
        return (np.argmax(probs, axis=1) != y).astype(float)


class ThresholdClassifier(BaseModel):
    """Predicts label 1 on ``x < rho`` and label 0 on ``x >= rho``."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["threshold"] = "threshold"
    rho: float = Field(ge=RHO_MIN, le=RHO_MAX)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(len(x), -1)
        return np.where(x[:, 0] < self.rho, 1, 0)

    def as_cells(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.array([-np.inf, self.rho, np.inf]), np.array([1, 0])


class CellwiseClassifier(BaseModel):
    """Assigns a label, or abstains, on each atom of a partition.

    For piecewise joints ``partition`` holds interval edges and inputs outside
    them are abstained on; for discrete joints it lists atom ids.
    """
    model_config = ConfigDict(frozen=True)

    kind: Literal["cellwise"] = "cellwise"
    variant: Variant
    partition: Tuple[float, ...]
    assignment: Tuple[int, ...]

    @model_validator(mode="after")
    def _check_lengths(self) -> "CellwiseClassifier":
        n_atoms = len(self.partition) - 1 if self.variant == PIECEWISE else len(self.partition)
        if n_atoms != len(self.assignment):
            raise ValueError(f"{n_atoms} atoms but {len(self.assignment)} assignments")
        if any(a < ABSTAIN for a in self.assignment):
            raise ValueError("assignments must be labels or the abstain symbol")
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(len(x), -1)[:, 0]
        part = np.asarray(self.partition, dtype=float)
        assignment = np.append(np.asarray(self.assignment, dtype=np.int64), ABSTAIN)
        if self.variant == PIECEWISE:
            index = np.searchsorted(part, x, side="right") - 1
            index[(index < 0) | (index >= part.size - 1)] = -1
        else:
            hit = x[:, None] == part[None, :]
            index = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
        return assignment[index]

    def as_cells(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.partition, dtype=float), np.asarray(self.assignment, dtype=np.int64)


Classifier = Annotated[Union[ThresholdClassifier, CellwiseClassifier], Field(discriminator="kind")]


class ThresholdGrid(BaseModel):
    """Thresholds on ``[rho_min, rho_max]``.

    With ``refine`` the grid also gets every cell boundary of the analytic
    domains it is enumerated against, where risks have their kinks.
    """
    model_config = ConfigDict(frozen=True)

    kind: Literal["threshold_grid"] = "threshold_grid"
    rho_min: float = Field(RHO_MIN, ge=RHO_MIN, le=RHO_MAX)
    rho_max: float = Field(RHO_MAX, ge=RHO_MIN, le=RHO_MAX)
    n_grid: int = Field(DEFAULT_GRID_POINTS, ge=2)
    refine: bool = True

    @model_validator(mode="after")
    def _check_range(self) -> "ThresholdGrid":
        if self.rho_min > self.rho_max:
            raise ValueError("rho_min must not exceed rho_max")
        return self

    @classmethod
    def symmetric(cls, radius: float, n_grid: int = DEFAULT_GRID_POINTS) -> "ThresholdGrid":
        """The thresholds with ``|rho| <= radius``."""
        radius = min(abs(radius), RHO_MAX)
        return cls(rho_min=-radius, rho_max=radius, n_grid=n_grid)

    def grid(self, *domains: Domain, extra: Sequence[float] = ()) -> np.ndarray:
        points = [np.linspace(self.rho_min, self.rho_max, self.n_grid), np.asarray(extra, dtype=float)]
        if self.refine:
            for d in domains:
                if isinstance(d, LabeledJoint):
                    points.append(d.partition().astype(float))
        rhos = np.unique(np.concatenate(points))
        return rhos[(rhos >= self.rho_min) & (rhos <= self.rho_max)]

    def contains(self, h: Classifier) -> bool:
        return (isinstance(h, ThresholdClassifier)
                and self.rho_min - RISK_TOL <= h.rho <= self.rho_max + RISK_TOL)


class ParamBall(BaseModel):
    """Classifier heads within ``radius`` of ``center`` in parameter space."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["param_ball"] = "param_ball"
    center: Tuple[float, ...]
    radius: float = Field(ge=0.0)

    def contains(self, h: Classifier) -> bool:
        raise UnsupportedOperationError("membership in a parameter ball needs a parametrized head")


class ExplicitList(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["explicit"] = "explicit"
    classifiers: Tuple[Classifier, ...] = Field(min_length=1)

    def contains(self, h: Classifier) -> bool:
        return h in self.classifiers


HypothesisSpec = Annotated[Union[ThresholdGrid, ParamBall, ExplicitList], Field(discriminator="kind")]


@dataclass(frozen=True)
class EnumeratedFamily:
    """A finite family in a fixed order; thresholds are kept as a ``rho`` array."""
    rhos: Optional[np.ndarray] = None
    members: Tuple[Classifier, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return int(self.rhos.size) if self.rhos is not None else len(self.members)

    def member(self, index: int) -> Classifier:
        if self.rhos is not None:
            return ThresholdClassifier(rho=float(self.rhos[index]))
        return self.members[index]

    def classifiers(self) -> list:
        return [self.member(i) for i in range(len(self))]

    def risks(self, domain: Domain, loss: LossKind) -> np.ndarray:
        if self.rhos is not None:
            return threshold_risks(self.rhos, domain, loss)
        return np.array([risk(h, domain, loss) for h in self.members])

    def subset(self, indices: Sequence[int]) -> "EnumeratedFamily":
        indices = np.asarray(indices, dtype=np.int64)
        if self.rhos is not None:
            return EnumeratedFamily(rhos=self.rhos[indices])
        return EnumeratedFamily(members=tuple(self.members[i] for i in indices))


def enumerate_family(spec, *domains: Domain, extra_rhos: Sequence[float] = ()) -> EnumeratedFamily:
    """Enumerate a hypothesis spec, refining threshold grids at the kinks of ``domains``."""
    if isinstance(spec, EnumeratedFamily):
        return spec
    if isinstance(spec, MinimalSet):
        spec = spec.as_spec()
    if isinstance(spec, ParamBall):
        raise UnsupportedOperationError("a parameter ball cannot be enumerated; search it by gradient ascent")
    if isinstance(spec, ThresholdGrid):
        return EnumeratedFamily(rhos=spec.grid(*domains, extra=extra_rhos))
    if isinstance(spec, ExplicitList):
        members = tuple(spec.classifiers)
        if all(isinstance(h, ThresholdClassifier) for h in members):
            return EnumeratedFamily(rhos=np.array([h.rho for h in members], dtype=float))
        return EnumeratedFamily(members=members)
    raise ValidationError(f"unknown hypothesis spec {type(spec).__name__}")


def _label_count(domain: Domain) -> int:
    return domain.K if isinstance(domain, LabeledJoint) else domain.n_labels


def _check_input_dim(domain: Domain) -> None:
    if isinstance(domain, SampleSet) and domain.dim != 1:
        raise ValidationError(f"threshold and cellwise classifiers take 1-d inputs, got d={domain.dim}")


def _cell_outcomes(h: Classifier, joint: LabeledJoint) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell fractions of mass predicted correctly, wrongly, or abstained on."""
    labels = joint.labels
    if joint.variant != PIECEWISE:
        pred = h.predict(np.array([c.region for c in joint.cells], dtype=float)[:, None])
        correct = (pred == labels).astype(float)
        abstain = (pred == ABSTAIN).astype(float)
        return correct, 1.0 - correct - abstain, abstain
    edges, assignment = h.as_cells()
    ab = joint.bounds
    a, b = ab[:, :1], ab[:, 1:]
    overlap = np.clip(np.minimum(b, edges[1:]) - np.maximum(a, edges[:-1]), 0.0, None)
    frac = overlap / (b - a)
    correct = (frac * (assignment[None, :] == labels[:, None])).sum(axis=1)
    covered = frac.sum(axis=1)
    abstain = (frac * (assignment[None, :] == ABSTAIN)).sum(axis=1) + np.clip(1.0 - covered, 0.0, None)
    wrong = np.clip(1.0 - correct - abstain, 0.0, None)
    return correct, wrong, abstain


def risk(h, domain: Domain, loss: LossKind) -> float:
    """Expected loss of ``h`` on a domain.

    Exact per-cell integral for analytic joints; empirical mean for samples.
    Objects exposing ``predict_proba`` (network models) are scored on their
    probability outputs and need a sample set.

    Args:
        h: Hard classifier or probabilistic model.
        domain (Domain): Analytic joint or sample set.
        loss (LossKind): Loss to evaluate.

    Returns:
        float: The risk.
    """
    if hasattr(h, "predict_proba"):
        if not isinstance(domain, SampleSet):
            raise UnsupportedOperationError("network risks are evaluated on sample sets only")
        return float(np.mean(loss.pointwise(h.predict_proba(domain.x), domain.y)))
    ok, bad, abstain = loss.costs(_label_count(domain))
    if isinstance(domain, SampleSet):
        _check_input_dim(domain)
        pred = h.predict(domain.x)
        per_point = np.where(pred == ABSTAIN, abstain, np.where(pred == domain.y, ok, bad))
        return float(np.mean(per_point))
    correct, wrong, abst = _cell_outcomes(h, domain)
    return float(domain.masses @ (ok * correct + bad * wrong + abstain * abst))


def threshold_risks(rhos: np.ndarray, domain: Domain, loss: LossKind) -> np.ndarray:
    """Risks of every threshold classifier in ``rhos`` at once."""
    rhos = np.asarray(rhos, dtype=float)
    ok, bad, _ = loss.costs(_label_count(domain))
    if isinstance(domain, SampleSet):
        _check_input_dim(domain)
        x, y = domain.x[:, 0], domain.y
        x1, x0 = np.sort(x[y == 1]), np.sort(x[y == 0])
        n_other = int(np.count_nonzero(y >= 2))
        wrong = (x1.size - np.searchsorted(x1, rhos, side="left")) + np.searchsorted(x0, rhos, side="left") + n_other
        m = len(domain)
        return (ok * (m - wrong) + bad * wrong) / m
    labels, masses = domain.labels, domain.masses
    if domain.variant == PIECEWISE:
        ab = domain.bounds
        left = np.clip((rhos[:, None] - ab[:, 0]) / (ab[:, 1] - ab[:, 0]), 0.0, 1.0)
    else:
        atoms = np.array([c.region for c in domain.cells], dtype=float)
        left = (atoms[None, :] < rhos[:, None]).astype(float)
    correct = np.where(labels == 1, left, np.where(labels == 0, 1.0 - left, 0.0))
    return (ok * correct + bad * (1.0 - correct)) @ masses


class MinimalSet(BaseModel):
    """Members of an enumerated family within ``slack`` of its minimum risk."""
    model_config = ConfigDict(frozen=True)

    spec: HypothesisSpec
    loss: LossKind
    slack: float = Field(ge=0.0)
    family_size: int
    members: Tuple[int, ...]
    classifiers: Tuple[Classifier, ...]
    member_risks: Tuple[float, ...]
    eps_star: float

    def as_spec(self) -> ExplicitList:
        return ExplicitList(classifiers=self.classifiers)


def delta_minimal_set(spec, domain: Domain, loss: LossKind, delta: float,
                      refine_with: Sequence[Domain] = ()) -> MinimalSet:
    """Members of ``spec`` whose risk is within ``delta`` of the family minimum.

    Args:
        spec: Enumerable hypothesis spec.
        domain (Domain): Domain the risks are taken on.
        loss (LossKind): Loss.
        delta (float): Slack, at least 0.
        refine_with (Sequence[Domain]): Extra domains whose kinks refine a grid.

    Returns:
        MinimalSet: Members and the achieved minimum.
    """
    if delta < 0:
        raise ValidationError(f"slack must be nonnegative, got {delta}")
    family = enumerate_family(spec, domain, *refine_with)
    risks = family.risks(domain, loss)
    eps_star = float(risks.min())
    members = np.flatnonzero(risks <= eps_star + delta + RISK_TOL)
    logger.debug("Minimal set: %d of %d members within %s of %s", members.size, len(family), delta, eps_star)
    return MinimalSet(
        spec=spec,
        loss=loss,
        slack=delta,
        family_size=len(family),
        members=tuple(int(i) for i in members),
        classifiers=tuple(family.member(int(i)) for i in members),
        member_risks=tuple(float(r) for r in risks[members]),
        eps_star=eps_star,
    )


def surrogate_dominates_zero_one(h, domain: Domain, loss: Optional[LossKind] = None) -> bool:
    """Whether the cross-entropy risk of ``h`` is at least its 0-1 risk."""
    loss = loss or LossKind.cross_entropy()
    if not loss.is_surrogate:
        raise ValidationError("surrogate dominance needs the cross-entropy loss")
    return risk(h, domain, loss) >= risk(h, domain, LossKind.zero_one())


def signed_labels(labels: np.ndarray) -> np.ndarray:
    """Map stored binary labels {0, 1} to {-1, +1}."""
    return 2 * np.asarray(labels, dtype=np.int64) - 1
