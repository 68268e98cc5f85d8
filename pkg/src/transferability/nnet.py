"""Small feed-forward network engine with a flat view of the classifier head.

The featurizer is a stack of dense rectifier layers; the head is an affine
map followed by a squeezed softmax ``p = c + (1 - K c) softmax(z)`` so that
every output lies in ``[c, 1 - (K - 1) c]``. The cross entropy is base 2.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .constants import DEFAULT_CLAMP, SLACK_TOL
from .domains import SampleSet
from .errors import UnsupportedOperationError, ValidationError
from .hypotheses import LossKind
from .utils import build_model

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)


class Architecture(BaseModel):
    """Layer widths from the input to the feature layer, label count and output clamp.

    ``dims`` of length 1 is the identity featurizer.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    dims: Tuple[int, ...] = Field(min_length=1)
    nonlinearity: Literal["relu"] = "relu"
    K: int = Field(2, ge=2)
    clamp: float = Field(DEFAULT_CLAMP, gt=0.0, lt=0.5)

    @model_validator(mode="after")
    def _check(self) -> "Architecture":
        if any(d < 1 for d in self.dims):
            raise ValueError("layer widths must be positive")
        if self.K * self.clamp >= 1.0:
            raise ValueError(f"clamp {self.clamp} leaves no mass for K={self.K}")
        return self

    @classmethod
    def build(cls, input_dim: int, hidden_dims: Sequence[int] = (64, 64), feature_dim: Optional[int] = 16,
              n_labels: int = 2, clamp: float = DEFAULT_CLAMP) -> "Architecture":
        dims = (input_dim, *hidden_dims) + ((feature_dim,) if feature_dim else ())
        return build_model(cls, dims=dims, K=n_labels, clamp=clamp)

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def feature_dim(self) -> int:
        return self.dims[-1]

    @property
    def head_size(self) -> int:
        return self.feature_dim * self.K + self.K

    @property
    def featurizer_size(self) -> int:
        return sum(a * b + b for a, b in zip(self.dims[:-1], self.dims[1:]))


def squeezed_softmax(logits: np.ndarray, clamp: float) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(p, q)`` with ``q = softmax(logits)`` and ``p`` its clamped version."""
    z = logits - logits.max(axis=1, keepdims=True)
    q = np.exp(z)
    q /= q.sum(axis=1, keepdims=True)
    K = logits.shape[1]
    return clamp + (1.0 - K * clamp) * q, q


def split_head(theta: np.ndarray, arch: Architecture) -> Tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (arch.head_size,):
        raise ValidationError(f"head vector has shape {theta.shape}, expected ({arch.head_size},)")
    f, K = arch.feature_dim, arch.K
    return theta[:f * K].reshape(f, K), theta[f * K:]


def head_loss_and_grad(features: np.ndarray, y: np.ndarray, theta: np.ndarray,
                       arch: Architecture) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean base-2 cross entropy of a head on fixed features.

    Returns:
        tuple: ``(loss, grad_theta, grad_features)``.
    """
    if y.size == 0:
        raise ValidationError("empty batch")
    w, b = split_head(theta, arch)
    p, q = squeezed_softmax(features @ w + b, arch.clamp)
    rows = np.arange(y.size)
    p_y, q_y = p[rows, y], q[rows, y]
    loss = float(np.mean(-np.log2(p_y)))
    onehot = np.zeros_like(q)
    onehot[rows, y] = 1.0
    scale = 1.0 - arch.K * arch.clamp
    g_z = -(scale * q_y / (LN2 * p_y))[:, None] * (onehot - q) / y.size
    grad = np.concatenate([(features.T @ g_z).ravel(), g_z.sum(axis=0)])
    return loss, grad, g_z @ w.T


def head_metrics(features: np.ndarray, y: np.ndarray, theta: np.ndarray, arch: Architecture) -> Tuple[float, float]:
    """Mean cross entropy and 0-1 accuracy of a head on fixed features."""
    w, b = split_head(theta, arch)
    p, _ = squeezed_softmax(features @ w + b, arch.clamp)
    rows = np.arange(y.size)
    return float(np.mean(-np.log2(p[rows, y]))), float(np.mean(np.argmax(p, axis=1) == y))


class MlpModel:
    """Featurizer ``g`` plus an affine classifier head.

    Attributes:
        arch (Architecture): Layer layout.
        layers (List[Tuple[np.ndarray, np.ndarray]]): Featurizer weights and biases.
        head_w (np.ndarray): (f, K) head weights.
        head_b (np.ndarray): (K,) head bias.
    """

    def __init__(self, arch: Architecture, layers: List[Tuple[np.ndarray, np.ndarray]],
                 head_w: np.ndarray, head_b: np.ndarray):
        self.arch = arch
        self.layers = layers
        self.head_w = head_w
        self.head_b = head_b

    @classmethod
    def initialize(cls, arch: Architecture, seed: int) -> "MlpModel":
        """He-initialized rectifier layers and a scaled normal head, biases at zero."""
        rng = np.random.default_rng(seed)
        layers = []
        for d_in, d_out in zip(arch.dims[:-1], arch.dims[1:]):
            layers.append((rng.standard_normal((d_in, d_out)) * np.sqrt(2.0 / d_in), np.zeros(d_out)))
        head_w = rng.standard_normal((arch.feature_dim, arch.K)) * np.sqrt(1.0 / arch.feature_dim)
        return cls(arch, layers, head_w, np.zeros(arch.K))

    # -- forward ------------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.arch.input_dim:
            raise ValidationError(f"inputs must be (m, {self.arch.input_dim}), got {x.shape}")
        return x

    def _activations(self, x: np.ndarray) -> List[np.ndarray]:
        acts = [self._check_input(x)]
        for w, b in self.layers:
            acts.append(np.maximum(acts[-1] @ w + b, 0.0))
        return acts

    def features(self, x: np.ndarray) -> np.ndarray:
        return self._activations(x)[-1]

    def predict_proba(self, x: np.ndarray, theta: Optional[np.ndarray] = None) -> np.ndarray:
        w, b = (self.head_w, self.head_b) if theta is None else split_head(theta, self.arch)
        p, _ = squeezed_softmax(self.features(x) @ w + b, self.arch.clamp)
        return p

    forward = predict_proba

    def predict(self, x: np.ndarray, theta: Optional[np.ndarray] = None) -> np.ndarray:
        return np.argmax(self.predict_proba(x, theta), axis=1)

    # -- flat views ---------------------------------------------------------

    def get_theta(self) -> np.ndarray:
        return np.concatenate([self.head_w.ravel(), self.head_b])

    def set_theta(self, theta: np.ndarray) -> None:
        w, b = split_head(theta, self.arch)
        self.head_w, self.head_b = w.copy(), b.copy()

    def get_theta_g(self) -> np.ndarray:
        if not self.layers:
            return np.zeros(0)
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    def set_theta_g(self, theta_g: np.ndarray) -> None:
        theta_g = np.asarray(theta_g, dtype=float)
        if theta_g.shape != (self.arch.featurizer_size,):
            raise ValidationError(f"featurizer vector has shape {theta_g.shape}, "
                                  f"expected ({self.arch.featurizer_size},)")
        layers, offset = [], 0
        for d_in, d_out in zip(self.arch.dims[:-1], self.arch.dims[1:]):
            w = theta_g[offset:offset + d_in * d_out].reshape(d_in, d_out).copy()
            offset += d_in * d_out
            layers.append((w, theta_g[offset:offset + d_out].copy()))
            offset += d_out
        self.layers = layers

    def get_params(self) -> np.ndarray:
        """Featurizer parameters followed by the head."""
        return np.concatenate([self.get_theta_g(), self.get_theta()])

    def set_params(self, params: np.ndarray) -> None:
        n_g = self.arch.featurizer_size
        self.set_theta_g(params[:n_g])
        self.set_theta(params[n_g:])

    def copy(self) -> "MlpModel":
        return MlpModel(self.arch, [(w.copy(), b.copy()) for w, b in self.layers],
                        self.head_w.copy(), self.head_b.copy())

    def to_checkpoint(self) -> Dict[str, Any]:
        return {
            "arch": self.arch.model_dump(mode="json"),
            "theta_g": self.get_theta_g().tolist(),
            "theta": self.get_theta().tolist(),
        }

    @classmethod
    def from_checkpoint(cls, data: Dict[str, Any]) -> "MlpModel":
        arch = build_model(Architecture, **data["arch"])
        model = cls.initialize(arch, seed=0)
        model.set_theta_g(np.asarray(data["theta_g"], dtype=float))
        model.set_theta(np.asarray(data["theta"], dtype=float))
        return model


def loss_and_grad(model: MlpModel, batch: SampleSet, loss: Optional[LossKind] = None, wrt: str = "head",
                  theta: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """Mean cross entropy of ``model`` on ``batch`` and its flat gradient.

    Args:
        model (MlpModel): The network.
        batch (SampleSet): Points to average over.
        loss (LossKind): Must be cross entropy; its clamp is the model's.
        wrt (str): ``head``, ``featurizer`` or ``all`` (featurizer then head).
        theta (np.ndarray): Head parameters to use instead of the model's.

    Returns:
        tuple: ``(loss, gradient)``.
    """
    if loss is not None and not loss.is_surrogate:
        raise UnsupportedOperationError("the 0-1 loss has no gradient")
    if wrt not in ("head", "featurizer", "all"):
        raise ValidationError(f"unknown gradient target {wrt!r}")
    if len(batch) == 0:
        raise ValidationError("empty batch")
    theta = model.get_theta() if theta is None else np.asarray(theta, dtype=float)
    acts = model._activations(batch.x)
    value, grad_theta, delta = head_loss_and_grad(acts[-1], batch.y, theta, model.arch)
    if wrt == "head":
        return value, grad_theta
    grads = []
    for (w, _), a_in, a_out in zip(reversed(model.layers), reversed(acts[:-1]), reversed(acts[1:])):
        delta = delta * (a_out > 0)
        grads.append(np.concatenate([(a_in.T @ delta).ravel(), delta.sum(axis=0)]))
        delta = delta @ w.T
    grad_g = np.concatenate(grads[::-1]) if grads else np.zeros(0)
    if wrt == "featurizer":
        return value, grad_g
    return value, np.concatenate([grad_g, grad_theta])


def evaluate(model: MlpModel, sample_set: SampleSet, theta: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """Cross entropy and accuracy of ``model`` (optionally with head ``theta``)."""
    theta = model.get_theta() if theta is None else theta
    return head_metrics(model.features(sample_set.x), sample_set.y, theta, model.arch)


class OptimizerSpec(BaseModel):
    """First-order optimizer settings.

    ``maximize`` only matters for ``adam``; the plain kinds fix the direction.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["gradient_ascent", "gradient_descent", "adam"] = "adam"
    learning_rate: float = Field(0.01, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    steps: int = Field(100, ge=0)
    maximize: bool = False

    @property
    def ascends(self) -> bool:
        if self.kind == "gradient_ascent":
            return True
        if self.kind == "gradient_descent":
            return False
        return self.maximize


class Optimizer:
    """Stateful optimizer over one flat parameter vector."""

    def __init__(self, spec: OptimizerSpec, size: int, maximize: Optional[bool] = None):
        self.spec = spec
        self.size = size
        self.maximize = spec.ascends if maximize is None else maximize
        self.reset()

    def reset(self) -> None:
        self.t = 0
        self.m = np.zeros(self.size)
        self.v = np.zeros(self.size)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        sign = 1.0 if self.maximize else -1.0
        if self.spec.kind != "adam":
            return params + sign * self.spec.learning_rate * grad
        self.t += 1
        b1, b2 = self.spec.beta1, self.spec.beta2
        self.m = b1 * self.m + (1.0 - b1) * grad
        self.v = b2 * self.v + (1.0 - b2) * grad ** 2
        m_hat = self.m / (1.0 - b1 ** self.t)
        v_hat = self.v / (1.0 - b2 ** self.t)
        return params + sign * self.spec.learning_rate * m_hat / (np.sqrt(v_hat) + self.spec.eps)


@dataclass(frozen=True)
class BallConstraint:
    """Closed Euclidean ball around a flat parameter vector."""
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValidationError(f"radius must be nonnegative, got {self.radius}")
        center = np.array(self.center, dtype=float)
        center.setflags(write=False)
        object.__setattr__(self, "center", center)

    def contains(self, theta: np.ndarray, rtol: float = 1e-12) -> bool:
        return float(np.linalg.norm(theta - self.center)) <= self.radius * (1.0 + rtol) + 1e-15

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform draw from the ball."""
        direction = rng.standard_normal(self.center.size)
        norm = np.linalg.norm(direction)
        if norm == 0.0 or self.radius == 0.0:
            return self.center.copy()
        r = self.radius * rng.random() ** (1.0 / self.center.size)
        return self.center + r * direction / norm


def project_to_ball(theta: np.ndarray, ball: BallConstraint) -> np.ndarray:
    """Nearest point of ``ball`` to ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != ball.center.shape:
        raise ValidationError(f"vector shape {theta.shape} does not match center {ball.center.shape}")
    offset = theta - ball.center
    norm = float(np.linalg.norm(offset))
    if norm <= ball.radius:
        return theta.copy()
    if ball.radius == 0.0:
        return ball.center.copy()
    return ball.center + ball.radius * offset / norm


class LipschitzProbe(BaseModel):
    model_config = ConfigDict(frozen=True)

    estimate: float
    mean_ratio: float
    n_pairs: int
    scale: float


def param_lipschitz_probe(model: MlpModel, mu: SampleSet, n_pairs: int = 100, seed: int = 0,
                          scale: float = 1.0) -> LipschitzProbe:
    """Largest observed ``||h - h'||_{1,mu} / ||theta - theta'||`` around the model's head.

    Both heads of a pair are random perturbations of the current head with
    per-coordinate standard deviation ``scale / sqrt(dim)``. The function
    distance is the mean over ``mu`` of the Euclidean distance between
    output vectors. Identical pairs are skipped.
    """
    if n_pairs < 1:
        raise ValidationError("n_pairs must be positive")
    rng = np.random.default_rng(seed)
    feats = model.features(mu.x)
    theta0 = model.get_theta()
    spread = scale / np.sqrt(theta0.size)
    ratios = []
    for _ in range(n_pairs):
        a = theta0 + spread * rng.standard_normal(theta0.size)
        b = theta0 + spread * rng.standard_normal(theta0.size)
        dist = float(np.linalg.norm(a - b))
        if dist == 0.0:
            continue
        wa, ba = split_head(a, model.arch)
        wb, bb = split_head(b, model.arch)
        pa, _ = squeezed_softmax(feats @ wa + ba, model.arch.clamp)
        pb, _ = squeezed_softmax(feats @ wb + bb, model.arch.clamp)
        ratios.append(float(np.mean(np.linalg.norm(pa - pb, axis=1))) / dist)
    if not ratios:
        raise ValidationError("every sampled pair was identical; nothing to estimate")
    logger.debug("Lipschitz probe: max ratio %s over %d pairs", max(ratios), len(ratios))
    return LipschitzProbe(estimate=max(ratios), mean_ratio=float(np.mean(ratios)), n_pairs=len(ratios), scale=scale)


def ce_risk(table: np.ndarray, y: np.ndarray) -> float:
    """Mean base-2 cross entropy of an output table (m, K) on labels ``y``."""
    return float(np.mean(-np.log2(table[np.arange(y.size), y])))


def ce_lipschitz_slack(p: np.ndarray, q: np.ndarray, y: np.ndarray, clamp: float) -> float:
    """``L ||p - q||_{1,mu} - |eps(p) - eps(q)|`` with ``L = 1/(ln 2 * clamp)``."""
    dist = float(np.mean(np.linalg.norm(p - q, axis=1)))
    return dist / (LN2 * clamp) - abs(ce_risk(p, y) - ce_risk(q, y))


def strong_convexity_constant(K: int) -> float:
    return 1.0 / (4.0 * LN2) if K == 2 else 1.0 / LN2


def ce_convexity_slack(p: np.ndarray, q: np.ndarray, y: np.ndarray, alpha: float) -> float:
    """Strong-convexity slack of the cross entropy along the segment from ``q`` to ``p``.

    Binary outputs are measured by the scalar ``p_1 - p_0``; multiclass
    outputs by the probability of the true label.
    """
    mix = alpha * p + (1.0 - alpha) * q
    rows = np.arange(y.size)
    if p.shape[1] == 2:
        gap = (p[:, 1] - p[:, 0]) - (q[:, 1] - q[:, 0])
    else:
        gap = p[rows, y] - q[rows, y]
    lam = strong_convexity_constant(p.shape[1])
    upper = alpha * ce_risk(p, y) + (1.0 - alpha) * ce_risk(q, y)
    return upper - 0.5 * lam * alpha * (1.0 - alpha) * float(np.mean(gap ** 2)) - ce_risk(mix, y)


class CeProbeReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    clamp: float
    lipschitz_constant: float
    strong_convexity: float
    n_pairs: int
    min_lipschitz_slack: float
    min_convexity_slack: float

    @property
    def ok(self) -> bool:
        return self.min_lipschitz_slack >= -SLACK_TOL and self.min_convexity_slack >= -SLACK_TOL


def ce_functional_probes(mu: SampleSet, clamp: float, n_pairs: int = 500, seed: int = 0,
                         alphas: Sequence[float] = (0.25, 0.5, 0.75)) -> CeProbeReport:
    """Check the cross-entropy Lipschitz and strong-convexity inequalities on random output tables."""
    K = mu.n_labels
    if not 0.0 < clamp < 1.0 / K:
        raise ValidationError(f"clamp must lie in (0, 1/K), got {clamp}")
    rng = np.random.default_rng(seed)
    m = len(mu)
    lip, conv = [], []
    for _ in range(n_pairs):
        p = clamp + (1.0 - K * clamp) * rng.dirichlet(np.ones(K), size=m)
        q = clamp + (1.0 - K * clamp) * rng.dirichlet(np.ones(K), size=m)
        lip.append(ce_lipschitz_slack(p, q, mu.y, clamp))
        conv.extend(ce_convexity_slack(p, q, mu.y, a) for a in alphas)
    return CeProbeReport(
        clamp=clamp,
        lipschitz_constant=float(1.0 / (LN2 * clamp)),
        strong_convexity=strong_convexity_constant(K),
        n_pairs=n_pairs,
        min_lipschitz_slack=float(min(lip)),
        min_convexity_slack=float(min(conv)),
    )


def minimal_set_ball_radius(strong_convexity: float, excess: float) -> float:
    """Radius ``sqrt(2 excess / lambda)`` of the L2 ball holding every ``excess``-minimal classifier."""
    if strong_convexity <= 0 or excess < 0:
        raise ValidationError("need a positive strong-convexity constant and nonnegative excess")
    return float(np.sqrt(2.0 * excess / strong_convexity))
