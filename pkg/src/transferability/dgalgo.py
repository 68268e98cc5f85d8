"""Training and evaluation of transferable featurizers.

Three procedures share the network engine:

* ``erm_train`` minimizes the mean source cross entropy.
* ``attack_transferability`` searches a ball of classifier heads around a
  trained head for the largest spread between the best and worst domain.
* ``transfer_train`` alternates that search with descent on the mean loss
  plus the spread found.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from .domains import SampleSet
from .errors import InvariantViolation, ValidationError
from .hypotheses import ParamBall
from .nnet import (
    LN2,
    Architecture,
    BallConstraint,
    LipschitzProbe,
    MlpModel,
    Optimizer,
    OptimizerSpec,
    head_loss_and_grad,
    head_metrics,
    loss_and_grad,
    project_to_ball,
    split_head,
    squeezed_softmax,
)
from .utils import first_argmax, first_argmin

logger = logging.getLogger(__name__)

MIXTURE_TOL = 1e-12


class DomainMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    domain_id: int
    loss: float
    acc: float


class TrajectoryRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    iter: int
    domain_id: int
    loss: float
    acc: float


class AttackResult(BaseModel):
    """Best spread between domain risks found inside the head ball."""
    model_config = ConfigDict(frozen=True)

    delta: float
    best_gap: float
    best_j: int
    best_k: int
    best_iteration: int
    theta: Tuple[float, ...]
    gamma: ParamBall
    reference: Tuple[DomainMetrics, ...]
    attacked: Tuple[DomainMetrics, ...]
    trajectory: Tuple[TrajectoryRow, ...]
    iterations: int
    steps_per_selection: int
    seed: int
    target_accuracy_drop: float

    def trajectory_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump() for row in self.trajectory], columns=["iter", "domain_id", "loss", "acc"])


class EpochRecord(BaseModel):
    """Losses at the start of an epoch; ``objective`` is the weighted one the descent minimizes."""
    model_config = ConfigDict(frozen=True)

    epoch: int
    mean_loss: float
    max_loss: float
    min_loss: float
    adversarial_gap: float
    objective: float
    accuracies: Tuple[float, ...]


@dataclass
class TrainResult:
    """Trained model, per-epoch records and the final inner-search witness.

    ``eta`` is the unweighted mean loss plus adversarial spread, the quantity
    the optimization guarantee is stated for, whatever ``lam`` was.
    """
    model: MlpModel
    epochs: List[EpochRecord]
    eta: float
    theta_adv: np.ndarray
    delta: float
    lam: float
    seed: int
    algo: str = "transfer"


class OptimizationCertificate(BaseModel):
    """Checks of the mixture guarantee for a trained model.

    ``eta_empirical`` comes from finitely many classifiers in the ball, so it
    only lower-bounds the objective's max over the whole ball.
    """
    model_config = ConfigDict(frozen=True)

    delta: float
    eta_recorded: float
    eta_empirical: float
    eta_is_lower_bound: bool = True
    l_loss: float
    l_theta: float
    n_mixtures: int
    n_ball_samples: int
    slacks: Dict[str, float]

    @property
    def holds(self) -> bool:
        return (self.slacks["mixture_primitive"] >= -MIXTURE_TOL
                and all(v >= -1e-9 for k, v in self.slacks.items() if k != "mixture_primitive"))


def _check_domains(domains: Sequence[SampleSet], arch: Optional[Architecture] = None) -> None:
    if not domains:
        raise ValidationError("at least one domain is required")
    labels = {d.n_labels for d in domains}
    dims = {d.dim for d in domains}
    if len(labels) != 1 or len(dims) != 1:
        raise ValidationError("domains must share label count and input dimension")
    if arch is not None and (arch.K != labels.pop() or arch.input_dim != dims.pop()):
        raise ValidationError("architecture does not match the domains")


def _mean_source_loss_and_grad(model: MlpModel, domains: Sequence[SampleSet]) -> Tuple[float, np.ndarray]:
    total, grad = 0.0, np.zeros(model.arch.featurizer_size + model.arch.head_size)
    for d in domains:
        value, g = loss_and_grad(model, d, wrt="all")
        total += value
        grad += g
    return total / len(domains), grad / len(domains)


def erm_train(domains: Sequence[SampleSet], arch: Architecture, opt: OptimizerSpec, seed: int,
              history: Optional[List[float]] = None) -> MlpModel:
    """Full-batch minimization of the mean source cross entropy.

    Args:
        domains (Sequence[SampleSet]): Source domains.
        arch (Architecture): Network layout.
        opt (OptimizerSpec): Descent settings; ``steps`` is the step count.
        seed (int): Initialization seed.
        history (Optional[List[float]]): Receives the mean loss before each step.

    Returns:
        MlpModel: The trained model.
    """
    _check_domains(domains, arch)
    model = MlpModel.initialize(arch, seed)
    optimizer = Optimizer(opt, arch.featurizer_size + arch.head_size, maximize=False)
    params = model.get_params()
    for step in range(opt.steps):
        value, grad = _mean_source_loss_and_grad(model, domains)
        params = optimizer.step(params, grad)
        model.set_params(params)
        if history is not None:
            history.append(value)
        logger.debug("ERM step %d: mean loss %s", step, value)
    logger.info("ERM finished %d steps on %d domains", opt.steps, len(domains))
    return model


def _domain_metrics(feats: Sequence[np.ndarray], domains: Sequence[SampleSet], theta: np.ndarray,
                    arch: Architecture) -> Tuple[np.ndarray, np.ndarray]:
    metrics = [head_metrics(f, d.y, theta, arch) for f, d in zip(feats, domains)]
    return np.array([m[0] for m in metrics]), np.array([m[1] for m in metrics])


def _spread_grad(feats: Sequence[np.ndarray], domains: Sequence[SampleSet], theta: np.ndarray,
                 arch: Architecture, j: int, k: int) -> np.ndarray:
    _, g_j, _ = head_loss_and_grad(feats[j], domains[j].y, theta, arch)
    _, g_k, _ = head_loss_and_grad(feats[k], domains[k].y, theta, arch)
    return g_j - g_k


def evaluate_gap(model: MlpModel, domains: Sequence[SampleSet], theta: Optional[np.ndarray] = None
                 ) -> Tuple[float, int, int]:
    """Spread ``max_i eps_i - min_i eps_i`` of cross-entropy risks and the indices achieving it."""
    theta = model.get_theta() if theta is None else np.asarray(theta, dtype=float)
    feats = [model.features(d.x) for d in domains]
    losses, _ = _domain_metrics(feats, domains, theta, model.arch)
    j, k = first_argmax(losses), first_argmin(losses)
    return float(losses[j] - losses[k]), j, k


def attack_transferability(model: MlpModel, domains: Sequence[SampleSet], delta: float, opt: OptimizerSpec,
                           iterations: int, seed: int = 0, steps_per_selection: int = 1) -> AttackResult:
    """Lower-bound the largest risk spread over heads within ``delta`` of the trained head.

    Each iteration picks the worst domain ``j`` and best domain ``k`` at the
    current head, ascends ``eps_j - eps_k`` for ``steps_per_selection`` steps
    with projection onto the ball, and keeps the head with the largest spread.
    The featurizer is fixed. The trained head itself is iteration 0.

    Args:
        model (MlpModel): Trained network.
        domains (Sequence[SampleSet]): Target first, then sources.
        delta (float): Ball radius.
        opt (OptimizerSpec): Ascent settings.
        iterations (int): Number of selections.
        seed (int): Recorded for provenance; the search is deterministic.
        steps_per_selection (int): Ascent steps per selection.

    Returns:
        AttackResult: Best spread, its head and per-iteration metrics.
    """
    if delta < 0:
        raise ValidationError(f"attack radius must be nonnegative, got {delta}")
    if iterations < 0 or steps_per_selection < 1:
        raise ValidationError("need iterations >= 0 and steps_per_selection >= 1")
    _check_domains(domains, model.arch)
    arch = model.arch
    feats = [model.features(d.x) for d in domains]
    ids = [d.domain_id for d in domains]
    center = model.get_theta()
    ball = BallConstraint(center, delta)
    optimizer = Optimizer(opt, arch.head_size, maximize=True)

    theta = center.copy()
    ref_loss, ref_acc = _domain_metrics(feats, domains, theta, arch)
    trajectory = [TrajectoryRow(iter=0, domain_id=i, loss=l, acc=a) for i, l, a in zip(ids, ref_loss, ref_acc)]
    best = (float(ref_loss.max() - ref_loss.min()), first_argmax(ref_loss), first_argmin(ref_loss), 0, theta.copy())
    losses, accs = ref_loss, ref_acc
    best_metrics = (ref_loss, ref_acc)
    for it in range(1, iterations + 1):
        j, k = first_argmax(losses), first_argmin(losses)
        for _ in range(steps_per_selection):
            theta = project_to_ball(optimizer.step(theta, _spread_grad(feats, domains, theta, arch, j, k)), ball)
            if not ball.contains(theta):
                raise InvariantViolation(f"iterate {it} left the ball of radius {delta}")
        losses, accs = _domain_metrics(feats, domains, theta, arch)
        trajectory.extend(TrajectoryRow(iter=it, domain_id=i, loss=l, acc=a) for i, l, a in zip(ids, losses, accs))
        gap = float(losses.max() - losses.min())
        logger.debug("Attack iteration %d: spread %s between domains %d and %d", it, gap, j, k)
        if gap > best[0]:
            best = (gap, first_argmax(losses), first_argmin(losses), it, theta.copy())
            best_metrics = (losses, accs)
    gap, j, k, best_it, best_theta = best
    logger.info("Attack at radius %s: best spread %s at iteration %d", delta, gap, best_it)
    return AttackResult(
        delta=delta,
        best_gap=gap,
        best_j=ids[j],
        best_k=ids[k],
        best_iteration=best_it,
        theta=tuple(float(t) for t in best_theta),
        gamma=ParamBall(center=tuple(float(c) for c in center), radius=delta),
        reference=tuple(DomainMetrics(domain_id=i, loss=l, acc=a) for i, l, a in zip(ids, ref_loss, ref_acc)),
        attacked=tuple(DomainMetrics(domain_id=i, loss=l, acc=a) for i, l, a in zip(ids, *best_metrics)),
        trajectory=tuple(trajectory),
        iterations=iterations,
        steps_per_selection=steps_per_selection,
        seed=seed,
        target_accuracy_drop=float(ref_acc[0] - best_metrics[1][0]),
    )


def _inner_ascent(feats: Sequence[np.ndarray], domains: Sequence[SampleSet], theta: np.ndarray, ball: BallConstraint,
                  optimizer: Optimizer, n_steps: int, arch: Architecture) -> np.ndarray:
    """Projected ascent on the spread, re-selecting the extreme domains every step."""
    optimizer.reset()
    adv = theta.copy()
    for _ in range(n_steps):
        losses, _ = _domain_metrics(feats, domains, adv, arch)
        j, k = first_argmax(losses), first_argmin(losses)
        adv = project_to_ball(optimizer.step(adv, _spread_grad(feats, domains, adv, arch, j, k)), ball)
    if not ball.contains(adv):
        raise InvariantViolation("inner search left the ball")
    return adv


def transfer_train(domains: Sequence[SampleSet], arch: Architecture, delta: float, n_inner: int, lam: float,
                   ascent: OptimizerSpec, descent: OptimizerSpec, epochs: int, seed: int) -> TrainResult:
    """Minimax training of featurizer and head against the worst head in a ball.

    Each epoch searches heads ``theta'`` with ``||theta' - theta|| <= delta`` for
    the largest spread between source risks, then takes ``descent.steps``
    steps on ``mean_i eps_i(h o g) + lam * spread(h' o g)``. The offset
    ``theta' - theta`` is held fixed during descent, so the spread term moves
    both the featurizer and the head.

    Args:
        domains (Sequence[SampleSet]): At least two source domains.
        arch (Architecture): Network layout.
        delta (float): Ball radius.
        n_inner (int): Ascent steps per epoch.
        lam (float): Weight of the spread term.
        ascent (OptimizerSpec): Inner ascent settings.
        descent (OptimizerSpec): Outer descent settings; ``steps`` per epoch.
        epochs (int): Number of epochs.
        seed (int): Initialization seed.

    Returns:
        TrainResult: Model, epoch records and the final objective.
    """
    if len(domains) < 2:
        raise ValidationError("transfer training needs at least two source domains")
    if n_inner < 1 or epochs < 0 or delta < 0 or lam < 0:
        raise ValidationError("need n_inner >= 1, epochs >= 0, delta >= 0 and lam >= 0")
    _check_domains(domains, arch)
    model = MlpModel.initialize(arch, seed)
    outer = Optimizer(descent, arch.featurizer_size + arch.head_size, maximize=False)
    inner = Optimizer(ascent, arch.head_size, maximize=True)
    params = model.get_params()
    records = []
    for epoch in range(epochs):
        theta = model.get_theta()
        feats = [model.features(d.x) for d in domains]
        adv = _inner_ascent(feats, domains, theta, BallConstraint(theta, delta), inner, n_inner, arch)
        adv_losses, _ = _domain_metrics(feats, domains, adv, arch)
        losses, accs = _domain_metrics(feats, domains, theta, arch)
        spread = float(adv_losses.max() - adv_losses.min())
        offset = adv - theta
        for _ in range(descent.steps):
            _, grad = _mean_source_loss_and_grad(model, domains)
            if lam != 0.0:
                head = model.get_theta() + offset
                current = np.array([head_metrics(model.features(d.x), d.y, head, arch)[0] for d in domains])
                j, k = first_argmax(current), first_argmin(current)
                _, g_j = loss_and_grad(model, domains[j], wrt="all", theta=head)
                _, g_k = loss_and_grad(model, domains[k], wrt="all", theta=head)
                grad = grad + lam * (g_j - g_k)
            params = outer.step(params, grad)
            model.set_params(params)
        record = EpochRecord(
            epoch=epoch,
            mean_loss=float(losses.mean()),
            max_loss=float(losses.max()),
            min_loss=float(losses.min()),
            adversarial_gap=spread,
            objective=float(losses.mean()) + lam * spread,
            accuracies=tuple(float(a) for a in accs),
        )
        records.append(record)
        logger.info("Epoch %d: mean loss %.6f, spread %.6f, objective %.6f",
                    epoch, record.mean_loss, spread, record.objective)

    theta = model.get_theta()
    feats = [model.features(d.x) for d in domains]
    adv = _inner_ascent(feats, domains, theta, BallConstraint(theta, delta), inner, n_inner, arch)
    losses, _ = _domain_metrics(feats, domains, theta, arch)
    adv_losses, _ = _domain_metrics(feats, domains, adv, arch)
    eta = float(losses.mean() + adv_losses.max() - adv_losses.min())
    return TrainResult(model=model, epochs=records, eta=eta, theta_adv=adv, delta=delta, lam=lam, seed=seed)


def mixture_gap_primitive(risks: np.ndarray, pi: np.ndarray, pi_prime: np.ndarray) -> Tuple[float, float]:
    """``(|pi . r - pi' . r|, max r - min r)`` for a per-domain risk vector ``r``."""
    risks = np.asarray(risks, dtype=float)
    return float(abs(pi @ risks - pi_prime @ risks)), float(risks.max() - risks.min())


def verify_optimization_guarantee(result: TrainResult, domains: Sequence[SampleSet], delta: float,
                                  n_mixtures: int = 50, seed: int = 0, n_ball_samples: int = 20,
                                  l_theta: Union[LipschitzProbe, float, None] = None) -> OptimizationCertificate:
    """Certify the mixture guarantee of a trained model on sampled heads and mixtures.

    Heads ``h'`` are the trained head, the final inner-search witness and
    uniform draws from the ball. Mixtures of sources are evaluated as weighted
    averages of per-domain empirical risks. Checked, for every head and
    mixture pair ``(T1, T2)``:

    * ``|eps_T1(h') - eps_T2(h')| <= max_i eps_i(h') - min_i eps_i(h')``
    * ``|eps_T1(h') - eps_T2(h')| <= eta``
    * ``eps_Si(h') <= eta + L_loss * L_theta * delta``
    * ``eps_T1(h') <= 2 eta + L_loss * L_theta * delta``

    ``eta`` is the larger of the recorded objective and the objective seen on
    the sampled heads; ``L_theta`` is the larger of the probe estimate and the
    ratios observed on the sampled heads.
    """
    if l_theta is None:
        raise ValidationError("a parameter Lipschitz estimate is required; run param_lipschitz_probe first")
    if n_mixtures < 1 or n_ball_samples < 0:
        raise ValidationError("need n_mixtures >= 1 and n_ball_samples >= 0")
    _check_domains(domains, result.model.arch)
    model, arch = result.model, result.model.arch
    rng = np.random.default_rng(seed)
    theta = model.get_theta()
    ball = BallConstraint(theta, delta)
    candidates = [theta, np.asarray(result.theta_adv, dtype=float)]
    candidates += [ball.sample(rng) for _ in range(n_ball_samples)]
    feats = [model.features(d.x) for d in domains]
    base_probs = [squeezed_softmax(f @ model.head_w + model.head_b, arch.clamp)[0] for f in feats]

    risks, ratios = [], [float(l_theta.estimate if isinstance(l_theta, LipschitzProbe) else l_theta)]
    for cand in candidates:
        if not ball.contains(cand):
            raise InvariantViolation("a certified head lies outside the ball")
        risks.append(_domain_metrics(feats, domains, cand, arch)[0])
        dist = float(np.linalg.norm(cand - theta))
        if dist > 0:
            w, b = split_head(cand, arch)
            for f, p in zip(feats, base_probs):
                q = squeezed_softmax(f @ w + b, arch.clamp)[0]
                ratios.append(float(np.mean(np.linalg.norm(q - p, axis=1))) / dist)
    risks = np.vstack(risks)
    spreads = risks.max(axis=1) - risks.min(axis=1)
    eta = max(result.eta, float(risks[0].mean() + spreads.max()))
    l_loss = float(1.0 / (LN2 * arch.clamp))
    lip_theta = max(ratios)
    budget = l_loss * lip_theta * delta

    n = len(domains)
    pis = rng.dirichlet(np.ones(n), size=n_mixtures)
    pis_prime = rng.dirichlet(np.ones(n), size=n_mixtures)
    t1, t2 = risks @ pis.T, risks @ pis_prime.T
    diff = np.abs(t1 - t2)
    slacks = {
        "mixture_primitive": float((spreads[:, None] - diff).min()),
        "realizable": float(eta - diff.max()),
        "source": float(eta + budget - risks.max()),
        "target": float(2.0 * eta + budget - t1.max()),
    }
    logger.info("Optimization certificate: eta=%s (recorded %s), slacks %s", eta, result.eta, slacks)
    return OptimizationCertificate(
        delta=delta,
        eta_recorded=result.eta,
        eta_empirical=eta,
        l_loss=l_loss,
        l_theta=lip_theta,
        n_mixtures=n_mixtures,
        n_ball_samples=n_ball_samples,
        slacks=slacks,
    )


def attack_sweep(model: MlpModel, domains: Sequence[SampleSet], deltas: Sequence[float], opt: OptimizerSpec,
                 iterations: int, seed: int = 0, steps_per_selection: int = 1) -> List[AttackResult]:
    """One attack per radius."""
    return [attack_transferability(model, domains, d, opt, iterations, seed, steps_per_selection) for d in deltas]


def accuracy_frame(results: Sequence[AttackResult], label: str) -> pd.DataFrame:
    """Reference and attacked accuracy per (radius, domain), tagged with ``label``."""
    rows = []
    for res in results:
        for ref, att in zip(res.reference, res.attacked):
            rows.append({"label": label, "delta": res.delta, "domain_id": ref.domain_id,
                         "reference_acc": ref.acc, "attacked_acc": att.acc, "best_gap": res.best_gap})
    return pd.DataFrame(rows, columns=["label", "delta", "domain_id", "reference_acc", "attacked_acc", "best_gap"])


@dataclass
class ComparisonBudget:
    """Shared training and attack budget for comparing ERM with transfer training."""
    arch: Architecture
    descent: OptimizerSpec
    ascent: OptimizerSpec
    attack: OptimizerSpec
    epochs: int
    n_inner: int
    train_delta: float
    lam: float = 1.0
    attack_iterations: int = 20
    deltas: Tuple[float, ...] = field(default=(0.5, 1.0, 2.0))


def compare_transferability(sources: Sequence[SampleSet], target: SampleSet, budget: ComparisonBudget,
                            seeds: Sequence[int]) -> pd.DataFrame:
    """Attacked target-accuracy drop of ERM and transfer models under one budget.

    ERM gets ``epochs * descent.steps`` descent steps, the same number the
    transfer model takes.

    Returns:
        pd.DataFrame: Rows ``seed, algo, delta, target_accuracy_drop``.
    """
    erm_spec = budget.descent.model_copy(update={"steps": budget.epochs * budget.descent.steps})
    eval_domains = [target, *sources]
    rows = []
    for seed in seeds:
        models = {
            "erm": erm_train(sources, budget.arch, erm_spec, seed),
            "transfer": transfer_train(sources, budget.arch, budget.train_delta, budget.n_inner, budget.lam,
                                       budget.ascent, budget.descent, budget.epochs, seed).model,
        }
        for algo, model in models.items():
            for res in attack_sweep(model, eval_domains, budget.deltas, budget.attack, budget.attack_iterations, seed):
                rows.append({"seed": seed, "algo": algo, "delta": res.delta,
                             "target_accuracy_drop": res.target_accuracy_drop})
    return pd.DataFrame(rows, columns=["seed", "algo", "delta", "target_accuracy_drop"])
