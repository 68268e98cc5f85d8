"""Estimation-error side of transferability: Rademacher, VC and Natarajan bounds.

All logarithms are natural.
"""
import logging
from typing import Dict, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import gammaln, logsumexp

from .constants import DEFAULT_SIGN_DRAWS, SLACK_TOL
from .domains import LabeledJoint, SampleSet, sample
from .errors import InvariantViolation, ValidationError
from .hypotheses import EnumeratedFamily, LossKind, enumerate_family, signed_labels
from .utils import spawn_seeds

logger = logging.getLogger(__name__)

LOG_BASE = "natural"
NATARAJAN_CAVEAT = "C is an unspecified absolute constant; the value shown scales linearly with it"


class BoundInputs(BaseModel):
    """Sample sizes, confidence and complexity inputs for the assembled bounds."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    m: int = Field(ge=1)
    k: int = Field(ge=1)
    delta: float = Field(gt=0.0, lt=1.0)
    d_vc: Optional[int] = Field(None, ge=1)
    d_nat: Optional[int] = Field(None, ge=1)
    K: int = Field(2, ge=2)
    C: float = Field(1.0, gt=0.0)
    r_m: Optional[float] = Field(None, ge=0.0)
    r_k: Optional[float] = Field(None, ge=0.0)
    r_m_std_err: float = Field(0.0, ge=0.0)
    r_k_std_err: float = Field(0.0, ge=0.0)


class RademacherEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    estimate: float
    std_err: float
    n_sign_draws: int
    m: int
    n_behaviors: int
    of: Literal["loss", "hypothesis"]


class SlackTerms(BaseModel):
    """Additive slack for the one-sided, symmetric and realizable measures."""
    model_config = ConfigDict(frozen=True)

    one_sided: float
    symmetric: float
    realizable: float


class BoundReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    inputs: BoundInputs
    rademacher: Optional[SlackTerms] = None
    vc: Optional[SlackTerms] = None
    natarajan: Optional[SlackTerms] = None
    vc_rate: Optional[Dict[str, float]] = None
    natarajan_rate: Optional[Dict[str, float]] = None
    log_base: str = LOG_BASE
    caveats: Tuple[str, ...] = ()


class CoverageReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_trials: int
    covered: int
    true_measure: float
    mean_slack: float
    delta: float

    @property
    def rate(self) -> float:
        return self.covered / self.n_trials


def _behaviors(family: EnumeratedFamily, sample_set: SampleSet, of: str) -> np.ndarray:
    """Distinct rows of loss values (or signed predictions) of the family on a sample."""
    y = sample_set.y
    if family.rhos is not None:
        if sample_set.dim != 1:
            raise ValidationError("threshold families need 1-d samples")
        x = sample_set.x[:, 0]
        # points strictly below rho are labeled 1
        cuts = np.unique(np.searchsorted(np.sort(x), family.rhos, side="left"))
        rank = np.argsort(np.argsort(x, kind="stable"), kind="stable")
        pred = np.where(rank[None, :] < cuts[:, None], 1, 0)
    else:
        pred = np.vstack([h.predict(sample_set.x) for h in family.classifiers()])
    if of == "loss":
        values = (pred != y[None, :]).astype(float)
    else:
        if sample_set.n_labels != 2 or np.any(pred < 0):
            raise ValidationError("hypothesis-class complexity needs binary, non-abstaining classifiers")
        values = signed_labels(pred).astype(float)
    return np.unique(values, axis=0)


def empirical_rademacher(gamma, sample_set: SampleSet, n_sign_draws: int = DEFAULT_SIGN_DRAWS,
                         seed: int = 0, of: str = "loss",
                         refine_with: Sequence[LabeledJoint] = ()) -> RademacherEstimate:
    """Monte Carlo empirical Rademacher complexity of a family on a sample.

    Each draw uses its own child seed, so results do not depend on the order
    draws are evaluated in.

    Args:
        gamma: Enumerable hypothesis spec or an enumerated family.
        sample_set (SampleSet): The sample.
        n_sign_draws (int): Number of sign vectors.
        seed (int): Master seed.
        of (str): ``loss`` for the 0-1 loss class, ``hypothesis`` for the
            classifiers themselves with values in {-1, +1}.
        refine_with (Sequence[LabeledJoint]): Analytic domains whose kinks
            refine a threshold grid. The sample itself never adds members.

    Returns:
        RademacherEstimate: Mean over draws and its standard error.
    """
    if n_sign_draws < 1:
        raise ValidationError("n_sign_draws must be positive")
    if len(sample_set) == 0:
        raise ValidationError("empty sample")
    if of not in ("loss", "hypothesis"):
        raise ValidationError(f"unknown function class {of!r}")
    values = _behaviors(enumerate_family(gamma, *refine_with), sample_set, of)
    m = len(sample_set)
    draws = np.empty(n_sign_draws)
    for i, child in enumerate(spawn_seeds(seed, n_sign_draws)):
        sigma = np.random.default_rng(child).choice([-1.0, 1.0], size=m)
        draws[i] = (values @ sigma).max() / m
    std_err = float(draws.std(ddof=1) / np.sqrt(n_sign_draws)) if n_sign_draws > 1 else 0.0
    logger.debug("Rademacher estimate %s +/- %s over %d behaviors", draws.mean(), std_err, values.shape[0])
    return RademacherEstimate(estimate=float(draws.mean()), std_err=std_err, n_sign_draws=n_sign_draws,
                              m=m, n_behaviors=int(values.shape[0]), of=of)


def _confidence_terms(m: int, k: int, delta: float, numerator: float) -> float:
    return 2.0 * np.sqrt(np.log(numerator / delta) / (2 * m)) + 2.0 * np.sqrt(np.log(numerator / delta) / (2 * k))


def rademacher_bound_value(inputs: BoundInputs) -> SlackTerms:
    """Slack added to the empirical measure by the Rademacher bound.

    ``4 R_m + 4 R_k + 2 sqrt(ln(4/delta)/2m) + 2 sqrt(ln(4/delta)/2k)`` for the
    one-sided and symmetric measures, half of it for the realizable measure.
    """
    if inputs.r_m is None or inputs.r_k is None:
        raise ValidationError("Rademacher estimates r_m and r_k are required")
    full = 4.0 * inputs.r_m + 4.0 * inputs.r_k + _confidence_terms(inputs.m, inputs.k, inputs.delta, 4.0)
    return SlackTerms(one_sided=float(full), symmetric=float(full), realizable=float(full / 2.0))


def vc_bound_value(d: int, m: int, form: str = "auto") -> float:
    """Rademacher complexity bound of a class with VC dimension ``d`` on ``m`` points.

    The closed form ``sqrt((2d/m) ln(e m / d))`` needs ``m >= d``; otherwise,
    or when ``form="binomial"``, ``sqrt((2/m) ln sum_{i<=d} C(m, i))`` is used.
    """
    if d < 1 or m < 1:
        raise ValidationError("d and m must be positive")
    if form not in ("auto", "closed", "binomial"):
        raise ValidationError(f"unknown form {form!r}")
    if form == "closed" and d > m:
        logger.warning("Closed VC form needs m >= d (d=%d, m=%d); using the binomial sum", d, m)
    if form != "binomial" and m >= d:
        return float(np.sqrt(2.0 * d / m * np.log(np.e * m / d)))
    i = np.arange(min(d, m) + 1)
    log_growth = logsumexp(gammaln(m + 1) - gammaln(i + 1) - gammaln(m - i + 1))
    return float(np.sqrt(2.0 / m * log_growth))


def natarajan_bound_value(d: int, K: int, m: int, delta: float, C: float = 1.0) -> float:
    """``C sqrt((d ln K + ln(1/delta)) / m)``."""
    if d < 1 or K < 2 or m < 1 or not 0.0 < delta < 1.0 or C <= 0:
        raise ValidationError("need d >= 1, K >= 2, m >= 1, 0 < delta < 1 and C > 0")
    return float(C * np.sqrt((d * np.log(K) + np.log(1.0 / delta)) / m))


def vc_slack(d: int, m: int, k: int, delta: float) -> SlackTerms:
    """Two-domain slack with the Rademacher terms replaced by the VC bound."""
    full = 2.0 * vc_bound_value(d, m) + 2.0 * vc_bound_value(d, k) + _confidence_terms(m, k, delta, 4.0)
    return SlackTerms(one_sided=float(full), symmetric=float(full), realizable=float(full / 2.0))


def natarajan_slack(d: int, K: int, m: int, k: int, delta: float, C: float = 1.0) -> SlackTerms:
    """Two-domain multiclass slack; each domain uses confidence ``delta/2``."""
    full = 2.0 * natarajan_bound_value(d, K, m, delta / 2.0, C) + 2.0 * natarajan_bound_value(d, K, k, delta / 2.0, C)
    return SlackTerms(one_sided=float(full), symmetric=float(full), realizable=float(full / 2.0))


def bound_report(inputs: BoundInputs) -> BoundReport:
    """Every slack that can be assembled from ``inputs``."""
    caveats = []
    fields = {}
    if inputs.r_m is not None and inputs.r_k is not None:
        fields["rademacher"] = rademacher_bound_value(inputs)
    if inputs.d_vc is not None:
        fields["vc"] = vc_slack(inputs.d_vc, inputs.m, inputs.k, inputs.delta)
        fields["vc_rate"] = {"m": vc_bound_value(inputs.d_vc, inputs.m), "k": vc_bound_value(inputs.d_vc, inputs.k)}
    if inputs.d_nat is not None:
        fields["natarajan"] = natarajan_slack(inputs.d_nat, inputs.K, inputs.m, inputs.k, inputs.delta, inputs.C)
        fields["natarajan_rate"] = {
            "m": natarajan_bound_value(inputs.d_nat, inputs.K, inputs.m, inputs.delta, inputs.C),
            "k": natarajan_bound_value(inputs.d_nat, inputs.K, inputs.k, inputs.delta, inputs.C),
        }
        caveats.append(NATARAJAN_CAVEAT)
    if not fields:
        raise ValidationError("nothing to assemble: supply r_m/r_k, d_vc or d_nat")
    return BoundReport(inputs=inputs, caveats=tuple(caveats), **fields)


def estimation_reduction_terms(source: LabeledJoint, target: LabeledJoint, source_hat, target_hat,
                               gamma, loss: Optional[LossKind] = None) -> Dict[str, Dict[str, float]]:
    """Both sides of the reduction from true to empirical transfer measures.

    ``est(D)`` is the largest deviation between the risk on ``D`` and on its
    sample over the family. The one-sided and symmetric measures pay twice the
    two deviations, the realizable measure once.

    Returns:
        dict: One entry per variant with ``true``, ``empirical``, ``est_source``,
        ``est_target``, ``bound`` and ``slack``.
    """
    loss = loss or LossKind.zero_one()
    family = enumerate_family(gamma, source, target)
    rs, rt = family.risks(source, loss), family.risks(target, loss)
    rs_hat, rt_hat = family.risks(source_hat, loss), family.risks(target_hat, loss)
    est_s = float(np.abs(rs - rs_hat).max())
    est_t = float(np.abs(rt - rt_hat).max())

    def measures(a: np.ndarray, b: np.ndarray) -> Dict[str, float]:
        excess = (b - b.min()) - (a - a.min())
        return {
            "one_sided": float(excess.max()),
            "symmetric": float(max(excess.max(), (-excess).max())),
            "realizable": float(np.abs(b - a).max()),
        }

    true, empirical = measures(rs, rt), measures(rs_hat, rt_hat)
    coefficient = {"one_sided": 2.0, "symmetric": 2.0, "realizable": 1.0}
    terms = {}
    for variant, c in coefficient.items():
        bound = empirical[variant] + c * est_s + c * est_t
        terms[variant] = {
            "true": true[variant],
            "empirical": empirical[variant],
            "est_source": est_s,
            "est_target": est_t,
            "bound": bound,
            "slack": bound - true[variant],
        }
    return terms


def estimation_reduction_check(source: LabeledJoint, target: LabeledJoint, gamma, m_values: Sequence[int],
                               seed: int, n_draws: int = 1, loss: Optional[LossKind] = None) -> pd.DataFrame:
    """Draw samples at each size and check the true-versus-empirical reduction.

    Raises:
        InvariantViolation: If any variant fails at any size or draw.

    Returns:
        pd.DataFrame: One row per (m, draw, variant).
    """
    rows = []
    seeds = spawn_seeds(seed, len(m_values) * n_draws * 2)
    for i, m in enumerate(m_values):
        for draw in range(n_draws):
            s_seed, t_seed = seeds[2 * (i * n_draws + draw)], seeds[2 * (i * n_draws + draw) + 1]
            terms = estimation_reduction_terms(
                source, target, sample(source, m, s_seed), sample(target, m, t_seed, domain_id=1), gamma, loss
            )
            for variant, values in terms.items():
                rows.append({"m": m, "draw": draw, "variant": variant, **values})
    frame = pd.DataFrame(rows)
    frame["holds"] = frame["slack"] >= -SLACK_TOL
    failed = frame[~frame["holds"]]
    if not failed.empty:
        raise InvariantViolation(f"estimation reduction failed in {len(failed)} rows:\n{failed.to_string()}")
    logger.info("Estimation reduction held for %d rows over m=%s", len(frame), list(m_values))
    return frame


def rademacher_coverage(source: LabeledJoint, target: LabeledJoint, gamma, m: int, k: int, delta: float = 0.1,
                        n_trials: int = 200, n_sign_draws: int = 64, seed: int = 0) -> CoverageReport:
    """How often the Rademacher bound covers the true one-sided measure."""
    loss = LossKind.zero_one()
    family = enumerate_family(gamma, source, target)
    rs, rt = family.risks(source, loss), family.risks(target, loss)
    true = float(((rt - rt.min()) - (rs - rs.min())).max())
    covered, slacks = 0, []
    seeds = spawn_seeds(seed, 4 * n_trials)
    for trial in range(n_trials):
        s_seed, t_seed, rs_seed, rt_seed = seeds[4 * trial:4 * trial + 4]
        s_hat = sample(source, m, s_seed)
        t_hat = sample(target, k, t_seed, domain_id=1)
        inputs = BoundInputs(
            m=m, k=k, delta=delta,
            r_m=max(0.0, empirical_rademacher(family, s_hat, n_sign_draws, rs_seed).estimate),
            r_k=max(0.0, empirical_rademacher(family, t_hat, n_sign_draws, rt_seed).estimate),
        )
        slack = rademacher_bound_value(inputs).one_sided
        rsh, rth = family.risks(s_hat, loss), family.risks(t_hat, loss)
        empirical = float(((rth - rth.min()) - (rsh - rsh.min())).max())
        covered += int(true <= empirical + slack + SLACK_TOL)
        slacks.append(slack)
    logger.info("Rademacher bound covered %d of %d draws", covered, n_trials)
    return CoverageReport(n_trials=n_trials, covered=covered, true_measure=true,
                          mean_slack=float(np.mean(slacks)), delta=delta)
