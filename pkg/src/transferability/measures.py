"""Transfer measures between two domains and the inequalities built on them.

Every sup and inf over a threshold family is a maximum over a finite grid that
contains all cell boundaries of the domains involved. Risks are piecewise
linear in the threshold between those points, so the maxima are exact on
piecewise-uniform joints. Ties go to the smallest threshold.
"""
import logging
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from .constants import RHO_MAX, RHO_MIN, RISK_TOL, SLACK_TOL
from .domains import PIECEWISE, Domain, LabeledJoint, common_refinement
from .errors import InvariantViolation, UnsupportedOperationError, ValidationError
from .hypotheses import (
    CellwiseClassifier,
    Classifier,
    EnumeratedFamily,
    HypothesisSpec,
    LossKind,
    MinimalSet,
    ThresholdClassifier,
    ThresholdGrid,
    delta_minimal_set,
    enumerate_family,
    risk,
)
from .utils import first_argmax

logger = logging.getLogger(__name__)

SUP_PROVENANCE = "max over enumerated family; threshold grids refined at every cell boundary"


class TransferReport(BaseModel):
    """Transfer measures of S to T over a family, with the classifiers achieving each sup."""
    model_config = ConfigDict(frozen=True)

    one_sided: float
    reverse: float
    symmetric: float
    realizable: float
    eps_star_source: float
    eps_star_target: float
    witness_one_sided: Classifier
    witness_reverse: Classifier
    witness_realizable: Classifier
    gamma: HypothesisSpec
    family_size: int
    loss: LossKind
    provenance: str = SUP_PROVENANCE


class BoundCertificate(BaseModel):
    """Both steps of the target-error bound for one classifier."""
    model_config = ConfigDict(frozen=True)

    classifier: Classifier
    target_risk: float
    source_risk: float
    optimum_gap: float
    one_sided: float
    symmetric: float
    bound_one_sided: float
    bound_symmetric: float
    slacks: Dict[str, float]

    @property
    def holds(self) -> bool:
        return all(s >= -SLACK_TOL for s in self.slacks.values())


class TransferabilityCertificate(BaseModel):
    model_config = ConfigDict(frozen=True)

    delta_source: float
    delta_target_min: float
    containment_ok: bool
    eps_star_source: float
    eps_star_target: float
    n_members: int
    family_size: int
    worst_member: Classifier


class TvSandwich(BaseModel):
    model_config = ConfigDict(frozen=True)

    realizable_all: float
    tv: float
    lhs_slack: float
    rhs_slack: float

    @property
    def lhs_ok(self) -> bool:
        return self.lhs_slack >= -SLACK_TOL

    @property
    def rhs_ok(self) -> bool:
        return self.rhs_slack >= -SLACK_TOL


class HdhComparison(BaseModel):
    model_config = ConfigDict(frozen=True)

    lhs: float
    lambda_star: float
    hdh: float
    rhs: float
    slack: float

    @property
    def holds(self) -> bool:
        return self.slack >= -SLACK_TOL


class PseudoMetricReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    realizable: Tuple[Tuple[float, ...], ...]
    one_sided: Tuple[Tuple[float, ...], ...]
    max_self_distance: float
    symmetric: bool
    min_triangle_slack: float
    min_one_sided_triangle_slack: float

    @property
    def ok(self) -> bool:
        return (self.symmetric and self.max_self_distance <= SLACK_TOL
                and self.min_triangle_slack >= -SLACK_TOL and self.min_one_sided_triangle_slack >= -SLACK_TOL)


class IpmCheck(BaseModel):
    model_config = ConfigDict(frozen=True)

    ipm: float
    realizable: float
    witness: Classifier

    @property
    def difference(self) -> float:
        return abs(self.ipm - self.realizable)


class EquivalenceReport(BaseModel):
    """Both directions of the link between transfer measures and transferability."""
    model_config = ConfigDict(frozen=True)

    delta_source: float
    one_sided: float
    symmetric: float
    delta_target_min: float
    gamma_min_matches: bool
    forward_holds: Optional[bool]
    backward_holds: bool


class SurrogateTransferReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    delta_source: float
    one_sided_surrogate: float
    target_slack: float
    max_zero_one_excess: float

    @property
    def holds(self) -> bool:
        return self.max_zero_one_excess <= self.target_slack + SLACK_TOL


def _label_count(domain: Domain) -> int:
    return domain.K if isinstance(domain, LabeledJoint) else domain.n_labels


def _family_risks(source: Domain, target: Domain, gamma, loss: LossKind,
                  extra_rhos: Sequence[float] = ()) -> Tuple[EnumeratedFamily, np.ndarray, np.ndarray]:
    if _label_count(source) != _label_count(target):
        raise ValidationError("source and target must share the label count")
    family = enumerate_family(gamma, source, target, extra_rhos=extra_rhos)
    if len(family) == 0:
        raise ValidationError("the hypothesis family is empty")
    return family, family.risks(source, loss), family.risks(target, loss)


def transfer_measures(source: Domain, target: Domain, gamma, loss: Optional[LossKind] = None,
                      extra_rhos: Sequence[float] = ()) -> TransferReport:
    """One-sided, symmetric and realizable transfer measures over ``gamma``.

    Args:
        source (Domain): S.
        target (Domain): T.
        gamma: Enumerable hypothesis spec or minimal set.
        loss (LossKind): Defaults to the 0-1 loss.
        extra_rhos (Sequence[float]): Thresholds added to a grid.

    Returns:
        TransferReport: Measures, optimal risks over ``gamma`` and witnesses.
    """
    loss = loss or LossKind.zero_one()
    family, rs, rt = _family_risks(source, target, gamma, loss, extra_rhos)
    eps_s, eps_t = float(rs.min()), float(rt.min())
    excess = (rt - eps_t) - (rs - eps_s)
    i_one, i_rev = first_argmax(excess), first_argmax(-excess)
    i_real = first_argmax(np.abs(rt - rs))
    one_sided, reverse = float(excess[i_one]), float(-excess[i_rev])
    realizable = float(abs(rt[i_real] - rs[i_real]))
    symmetric = max(one_sided, reverse)
    if symmetric > 2.0 * realizable + SLACK_TOL:
        raise InvariantViolation(f"symmetric measure {symmetric} exceeds twice the realizable {realizable}")
    if isinstance(gamma, MinimalSet):
        gamma = gamma.as_spec()
    logger.debug("Measures over %d classifiers: one-sided=%s symmetric=%s realizable=%s",
                 len(family), one_sided, symmetric, realizable)
    return TransferReport(
        one_sided=one_sided,
        reverse=reverse,
        symmetric=symmetric,
        realizable=realizable,
        eps_star_source=eps_s,
        eps_star_target=eps_t,
        witness_one_sided=family.member(i_one),
        witness_reverse=family.member(i_rev),
        witness_realizable=family.member(i_real),
        gamma=gamma,
        family_size=len(family),
        loss=loss,
    )


def tv_unnormalized(source: LabeledJoint, target: LabeledJoint) -> float:
    """Sum over labels of the integrated absolute density difference, in [0, 2]."""
    ref = common_refinement(source, target)
    return float(np.abs(ref.tables[0] - ref.tables[1]).sum())


def tv_half(source: LabeledJoint, target: LabeledJoint) -> float:
    return 0.5 * tv_unnormalized(source, target)


def extremal_classifiers(source: LabeledJoint, target: LabeledJoint
                         ) -> Tuple[CellwiseClassifier, CellwiseClassifier, float, float]:
    """Cellwise classifiers maximizing ``eps_S - eps_T`` and ``eps_T - eps_S``.

    On each atom of the common refinement the classifier picks whichever of
    predicting 1, predicting 0 or abstaining adds most to the gap; abstaining
    errs on both labels. Ties prefer label 1, then label 0, then abstaining.

    Returns:
        tuple: ``(h_plus, h_minus, gap_plus, gap_minus)``.
    """
    if source.K != 2 or target.K != 2:
        raise UnsupportedOperationError("extremal classifiers are built for binary labels only")
    ref = common_refinement(source, target)
    d = ref.tables[0] - ref.tables[1]
    labels = np.array([1, 0, -1])

    def best(diff: np.ndarray) -> Tuple[np.ndarray, float]:
        options = np.column_stack([diff[:, 0], diff[:, 1], diff[:, 0] + diff[:, 1]])
        choice = np.argmax(options, axis=1)
        return labels[choice], float(options[np.arange(choice.size), choice].sum())

    partition = tuple(float(p) for p in ref.partition)
    plus, gap_plus = best(d)
    minus, gap_minus = best(-d)
    h_plus = CellwiseClassifier(variant=ref.variant, partition=partition, assignment=tuple(int(a) for a in plus))
    h_minus = CellwiseClassifier(variant=ref.variant, partition=partition, assignment=tuple(int(a) for a in minus))
    return h_plus, h_minus, gap_plus, gap_minus


def check_tv_sandwich(source: LabeledJoint, target: LabeledJoint) -> TvSandwich:
    """The realizable measure over all cellwise classifiers against total variation."""
    _, _, gap_plus, gap_minus = extremal_classifiers(source, target)
    realizable_all = max(gap_plus, gap_minus)
    tv = tv_unnormalized(source, target)
    return TvSandwich(realizable_all=realizable_all, tv=tv,
                      lhs_slack=tv - realizable_all, rhs_slack=4.0 * realizable_all - tv)


def target_bound(source: Domain, target: Domain, gamma, h: Classifier,
                 loss: Optional[LossKind] = None) -> BoundCertificate:
    """Bound the target risk of ``h`` by its source risk plus transfer measures.

    Args:
        source (Domain): S.
        target (Domain): T.
        gamma: Enumerable hypothesis spec containing ``h``.
        h (Classifier): Classifier to bound.
        loss (LossKind): Defaults to the 0-1 loss.

    Returns:
        BoundCertificate: Terms of both bounds and their slacks.
    """
    loss = loss or LossKind.zero_one()
    spec = gamma.as_spec() if isinstance(gamma, MinimalSet) else gamma
    if not spec.contains(h):
        raise ValidationError(f"classifier {h!r} is not a member of the family")
    extra = [h.rho] if isinstance(h, ThresholdClassifier) and isinstance(spec, ThresholdGrid) else []
    report = transfer_measures(source, target, spec, loss, extra_rhos=extra)
    eps_t, eps_s = risk(h, target, loss), risk(h, source, loss)
    optimum_gap = report.eps_star_target - report.eps_star_source
    bound_one = eps_s + optimum_gap + report.one_sided
    bound_sym = eps_s + optimum_gap + report.symmetric
    return BoundCertificate(
        classifier=h,
        target_risk=eps_t,
        source_risk=eps_s,
        optimum_gap=optimum_gap,
        one_sided=report.one_sided,
        symmetric=report.symmetric,
        bound_one_sided=bound_one,
        bound_symmetric=bound_sym,
        slacks={"target_le_one_sided": bound_one - eps_t, "one_sided_le_symmetric": bound_sym - bound_one},
    )


def transferability_certificate(source: Domain, target: Domain, h_spec, delta_source: float,
                                loss: Optional[LossKind] = None,
                                refine_with: Sequence[Domain] = ()) -> TransferabilityCertificate:
    """Smallest target slack for which the source minimal set is target near-optimal.

    Args:
        source (Domain): S.
        target (Domain): T.
        h_spec: Enumerable hypothesis spec.
        delta_source (float): Slack of the source minimal set.
        loss (LossKind): Defaults to the 0-1 loss.
        refine_with (Sequence[Domain]): Extra domains whose kinks refine a grid,
            so that certificates along a chain of domains share one family.

    Returns:
        TransferabilityCertificate: The slack, its witness and a containment check
        against the recomputed target minimal set.
    """
    loss = loss or LossKind.zero_one()
    domains = [target, *refine_with]
    minimal = delta_minimal_set(h_spec, source, loss, delta_source, refine_with=domains)
    family = enumerate_family(h_spec, source, *domains)
    rt = family.risks(target, loss)
    eps_t = float(rt.min())
    members = np.asarray(minimal.members, dtype=np.int64)
    excess = rt[members] - eps_t
    worst = first_argmax(excess)
    delta_target = float(excess[worst])
    target_minimal = delta_minimal_set(h_spec, target, loss, delta_target, refine_with=[source, *refine_with])
    containment_ok = (target_minimal.family_size == len(family)
                      and set(minimal.members) <= set(target_minimal.members))
    if not containment_ok:
        logger.warning("Source minimal set is not contained in the target minimal set at slack %s", delta_target)
    return TransferabilityCertificate(
        delta_source=delta_source,
        delta_target_min=delta_target,
        containment_ok=containment_ok,
        eps_star_source=minimal.eps_star,
        eps_star_target=eps_t,
        n_members=int(members.size),
        family_size=len(family),
        worst_member=family.member(int(members[worst])),
    )


def _x_cdf(joint: LabeledJoint, points: np.ndarray) -> np.ndarray:
    ab = joint.bounds
    frac = np.clip((points[:, None] - ab[:, 0]) / (ab[:, 1] - ab[:, 0]), 0.0, 1.0)
    return frac @ joint.masses


def hdh_divergence_1d(source: LabeledJoint, target: LabeledJoint) -> float:
    """Symmetric-difference divergence of the input marginals for thresholds on [-1, 1].

    Two thresholds disagree exactly between them, so the divergence is twice
    the range of ``F_S - F_T`` over the threshold interval.
    """
    if source.variant != PIECEWISE or target.variant != PIECEWISE:
        raise UnsupportedOperationError("the divergence is defined for 1-d piecewise joints only")
    points = np.unique(np.concatenate([source.partition(), target.partition(), [RHO_MIN, RHO_MAX]]))
    points = points[(points >= RHO_MIN) & (points <= RHO_MAX)]
    gap = _x_cdf(source, points) - _x_cdf(target, points)
    return float(2.0 * (gap.max() - gap.min()))


def hdh_bound_comparison(source: LabeledJoint, target: LabeledJoint, h_spec, delta_source: float,
                         loss: Optional[LossKind] = None) -> HdhComparison:
    """Compare the excess-risk form of the target bound with the divergence form.

    The family is the source minimal set of ``h_spec``. The left side is
    ``eps*_T - eps*_S + T(S||T)`` over that set; the right side is the joint
    optimum ``lambda*`` over ``h_spec`` plus half the divergence.
    """
    loss = loss or LossKind.zero_one()
    minimal = delta_minimal_set(h_spec, source, loss, delta_source, refine_with=[target])
    report = transfer_measures(source, target, minimal, loss)
    lhs = report.eps_star_target - report.eps_star_source + report.one_sided
    family = enumerate_family(h_spec, source, target)
    lambda_star = float((family.risks(source, loss) + family.risks(target, loss)).min())
    hdh = hdh_divergence_1d(source, target)
    rhs = lambda_star + 0.5 * hdh
    return HdhComparison(lhs=lhs, lambda_star=lambda_star, hdh=hdh, rhs=rhs, slack=rhs - lhs)


def _as_rows(matrix: np.ndarray) -> Tuple[Tuple[float, ...], ...]:
    return tuple(tuple(float(v) for v in row) for row in matrix)


def pseudo_metric_suite(domains: Sequence[Domain], gamma, loss: Optional[LossKind] = None) -> PseudoMetricReport:
    """Self-distance, symmetry and triangle checks over every triple of domains."""
    if len(domains) < 3:
        raise ValidationError("the pseudo-metric suite needs at least 3 domains")
    loss = loss or LossKind.zero_one()
    family = enumerate_family(gamma, *domains)
    risks = np.vstack([family.risks(d, loss) for d in domains])
    excess = risks - risks.min(axis=1, keepdims=True)
    realizable = np.abs(risks[:, None, :] - risks[None, :, :]).max(axis=2)
    one_sided = (excess[None, :, :] - excess[:, None, :]).max(axis=2)
    # slack[i, p, j] = M[i, p] + M[p, j] - M[i, j]
    tri = realizable[:, :, None] + realizable[None, :, :] - realizable[:, None, :]
    tri_one = one_sided[:, :, None] + one_sided[None, :, :] - one_sided[:, None, :]
    return PseudoMetricReport(
        realizable=_as_rows(realizable),
        one_sided=_as_rows(one_sided),
        max_self_distance=float(max(np.abs(np.diag(realizable)).max(), np.abs(np.diag(one_sided)).max())),
        symmetric=bool(np.array_equal(realizable, realizable.T)),
        min_triangle_slack=float(tri.min()),
        min_one_sided_triangle_slack=float(tri_one.min()),
    )


def _classifier_edges(h: Classifier) -> np.ndarray:
    edges, _ = h.as_cells()
    return edges[np.isfinite(edges)]


def realizable_ipm(source: LabeledJoint, target: LabeledJoint, gamma) -> IpmCheck:
    """Realizable measure recomputed as a sup of signed indicator-loss integrals."""
    family = enumerate_family(gamma, source, target)
    classifiers = family.classifiers()
    ref = common_refinement(source, target)
    if ref.variant == PIECEWISE:
        edges = np.unique(np.concatenate([ref.partition] + [_classifier_edges(h) for h in classifiers]))
        diff = source.mass_table(edges) - target.mass_table(edges)
        points = ((edges[:-1] + edges[1:]) / 2.0)[:, None]
    else:
        diff = ref.tables[0] - ref.tables[1]
        points = ref.representatives()
    columns = np.arange(diff.shape[1])
    integrals = np.empty(len(classifiers))
    for i, h in enumerate(classifiers):
        errs = h.predict(points)[:, None] != columns[None, :]
        integrals[i] = float((diff * errs).sum())
    best = first_argmax(np.abs(integrals))
    report = transfer_measures(source, target, gamma)
    return IpmCheck(ipm=float(abs(integrals[best])), realizable=report.realizable, witness=classifiers[best])


def equivalence_check(source: Domain, target: Domain, h_spec, delta_source: float,
                      loss: Optional[LossKind] = None) -> EquivalenceReport:
    """Check that a small measure gives transferability and the converse.

    Forward: with the family taken as the source minimal set and the target
    optimum over it equal to the optimum over ``h_spec``, the certified target
    slack is at most ``T(S||T) + delta_source``. It is reported as ``None``
    when the optima differ. Backward: with the certified slack ``delta_T``,
    ``T(S||T) <= delta_T`` and ``T(S,T) <= max(delta_source, delta_T)``.
    """
    loss = loss or LossKind.zero_one()
    minimal = delta_minimal_set(h_spec, source, loss, delta_source, refine_with=[target])
    report = transfer_measures(source, target, minimal, loss)
    cert = transferability_certificate(source, target, h_spec, delta_source, loss)
    gamma_min_matches = abs(report.eps_star_target - cert.eps_star_target) <= RISK_TOL
    forward = None
    if gamma_min_matches:
        forward = cert.delta_target_min <= report.one_sided + delta_source + SLACK_TOL
    backward = (report.one_sided <= cert.delta_target_min + SLACK_TOL
                and report.symmetric <= max(delta_source, cert.delta_target_min) + SLACK_TOL)
    return EquivalenceReport(
        delta_source=delta_source,
        one_sided=report.one_sided,
        symmetric=report.symmetric,
        delta_target_min=cert.delta_target_min,
        gamma_min_matches=gamma_min_matches,
        forward_holds=forward,
        backward_holds=backward,
    )


def surrogate_transfer_check(source: Domain, target: Domain, h_spec, delta_source: float,
                             clamp: Optional[float] = None) -> SurrogateTransferReport:
    """Transferability of the surrogate minimal set measured in 0-1 target risk.

    The family is the cross-entropy ``delta_source``-minimal set on S. Every
    member must be within ``T(S||T) + delta_source + eps*_T - eps01*_T`` of the
    best 0-1 target risk over ``h_spec``, where the measure and ``eps*_T`` use
    cross entropy over the minimal set.
    """
    ce = LossKind.cross_entropy() if clamp is None else LossKind.cross_entropy(clamp)
    zero_one = LossKind.zero_one()
    minimal = delta_minimal_set(h_spec, source, ce, delta_source, refine_with=[target])
    report = transfer_measures(source, target, minimal, ce)
    family = enumerate_family(h_spec, source, target)
    best_01 = float(family.risks(target, zero_one).min())
    target_slack = report.one_sided + delta_source + report.eps_star_target - best_01
    member_risks = enumerate_family(minimal).risks(target, zero_one)
    return SurrogateTransferReport(
        delta_source=delta_source,
        one_sided_surrogate=report.one_sided,
        target_slack=target_slack,
        max_zero_one_excess=float(member_risks.max() - best_01),
    )


def symmetric_threshold_family(delta: float, scale: float, n_grid: int = 4001) -> ThresholdGrid:
    """Thresholds with ``|rho| <= delta / scale``, clipped to [-1, 1]."""
    if scale <= 0:
        raise ValidationError("scale must be positive")
    return ThresholdGrid.symmetric(delta / scale, n_grid=n_grid)
