"""Labeled joint distributions, finite samples, mixtures and synthetic suites."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .constants import FLOAT_FORMAT, MASS_TOL, SUITE_RADIUS, SUITE_SIGMA
from .errors import ValidationError
from .utils import build_model, probability_vector, spawn_seeds

logger = logging.getLogger(__name__)

Variant = Literal["discrete", "piecewise_uniform_1d"]
DISCRETE = "discrete"
PIECEWISE = "piecewise_uniform_1d"


class Cell(BaseModel):
    """One block of probability mass: a region carrying a single label."""
    model_config = ConfigDict(frozen=True)

    region: Union[int, Tuple[float, float]]
    label: int = Field(ge=0)
    mass: float = Field(ge=0.0)


class LabeledJoint(BaseModel):
    """Analytic joint distribution over inputs and labels.

    ``piecewise_uniform_1d`` cells hold their mass uniformly on ``[a, b)``;
    ``discrete`` cells put their mass on one atom index.
    """
    model_config = ConfigDict(frozen=True)

    variant: Variant
    K: int = Field(ge=2)
    cells: Tuple[Cell, ...]

    @model_validator(mode="after")
    def _check_cells(self) -> "LabeledJoint":
        if not self.cells:
            raise ValueError("a joint needs at least one cell")
        total = 0.0
        for cell in self.cells:
            if cell.label >= self.K:
                raise ValueError(f"label {cell.label} out of range for K={self.K}")
            if self.variant == PIECEWISE:
                if not isinstance(cell.region, tuple):
                    raise ValueError("piecewise cells need an interval region")
                a, b = cell.region
                if not (np.isfinite(a) and np.isfinite(b) and a < b):
                    raise ValueError(f"invalid interval [{a}, {b})")
            elif isinstance(cell.region, tuple) or cell.region < 0:
                raise ValueError("discrete cells need a nonnegative atom index")
            total += cell.mass
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"cell masses sum to {total!r}, expected 1")

        if self.variant == PIECEWISE:
            for label in range(self.K):
                spans = sorted(c.region for c in self.cells if c.label == label)
                for (_, b0), (a1, _) in zip(spans, spans[1:]):
                    if a1 < b0:
                        raise ValueError(f"overlapping intervals for label {label}")
        else:
            keys = [(c.region, c.label) for c in self.cells]
            if len(set(keys)) != len(keys):
                raise ValueError("duplicate (atom, label) cells")
        return self

    # -- array views --------------------------------------------------------

    @property
    def masses(self) -> np.ndarray:
        return np.array([c.mass for c in self.cells], dtype=float)

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.cells], dtype=np.int64)

    @property
    def bounds(self) -> np.ndarray:
        """(n_cells, 2) interval endpoints of a piecewise joint."""
        if self.variant != PIECEWISE:
            raise ValidationError("bounds are defined for piecewise joints only")
        return np.array([c.region for c in self.cells], dtype=float)

    def partition(self) -> np.ndarray:
        """Sorted breakpoints (piecewise) or sorted atom ids (discrete)."""
        if self.variant == PIECEWISE:
            return np.unique(self.bounds.ravel())
        return np.unique(np.array([c.region for c in self.cells], dtype=np.int64))

    def label_marginal(self) -> np.ndarray:
        return np.bincount(self.labels, weights=self.masses, minlength=self.K)

    def mass_table(self, partition: np.ndarray) -> np.ndarray:
        """Mass of every (atom, label) pair on a partition.

        For piecewise joints ``partition`` is an increasing edge array and atom
        ``i`` is ``[partition[i], partition[i+1])``; mass outside the edges is
        dropped. For discrete joints ``partition`` lists atom ids.
        """
        partition = np.asarray(partition)
        if self.variant == PIECEWISE:
            lo_edge, hi_edge = partition[:-1], partition[1:]
            table = np.zeros((lo_edge.size, self.K))
            ab = self.bounds
            a, b = ab[:, :1], ab[:, 1:]
            overlap = np.clip(np.minimum(b, hi_edge) - np.maximum(a, lo_edge), 0.0, None)
            frac = overlap / (b - a)
        else:
            table = np.zeros((partition.size, self.K))
            atoms = np.array([c.region for c in self.cells], dtype=np.int64)
            frac = (atoms[:, None] == partition[None, :]).astype(float)
        masses, labels = self.masses, self.labels
        for label in range(self.K):
            rows = labels == label
            if rows.any():
                table[:, label] = frac[rows].T @ masses[rows]
        return table

    def allclose(self, other: "LabeledJoint", atol: float = MASS_TOL) -> bool:
        """Compare two joints on their common refinement."""
        ref = refine([self, other])
        return bool(np.allclose(ref.tables[0], ref.tables[1], rtol=0.0, atol=atol))

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_table(cls, variant: str, partition: np.ndarray, table: np.ndarray) -> "LabeledJoint":
        """Build a joint from a per-atom mass table, dropping empty cells."""
        table = np.asarray(table, dtype=float)
        partition = np.asarray(partition)
        cells = []
        for i, j in zip(*np.nonzero(table > 0)):
            if variant == PIECEWISE:
                region = (float(partition[i]), float(partition[i + 1]))
            else:
                region = int(partition[i])
            cells.append(Cell(region=region, label=int(j), mass=float(table[i, j])))
        return build_model(cls, variant=variant, K=table.shape[1], cells=tuple(cells))

    @classmethod
    def piecewise(cls, cells: Iterable[Tuple[float, float, int, float]], K: int) -> "LabeledJoint":
        """Piecewise-uniform joint from ``(a, b, label, mass)`` tuples.

        Overlapping intervals of one label are allowed here; their densities
        add up and the result is rewritten on disjoint elementary intervals.
        """
        cells = list(cells)
        if not cells:
            raise ValidationError("a joint needs at least one cell")
        if K < 2:
            raise ValidationError("K must be at least 2")
        edges = np.unique(np.array([[a, b] for a, b, _, _ in cells], dtype=float).ravel())
        table = np.zeros((edges.size - 1, K))
        for a, b, y, m in cells:
            if not a < b:
                raise ValidationError(f"invalid interval [{a}, {b})")
            if not 0 <= y < K:
                raise ValidationError(f"label {y} out of range for K={K}")
            if m < 0:
                raise ValidationError(f"negative mass {m}")
            overlap = np.clip(np.minimum(b, edges[1:]) - np.maximum(a, edges[:-1]), 0.0, None)
            table[:, y] += m * overlap / (b - a)
        return cls.from_table(PIECEWISE, edges, table)

    @classmethod
    def discrete(cls, table: np.ndarray) -> "LabeledJoint":
        """Discrete joint from an (n_atoms, K) mass table."""
        table = np.asarray(table, dtype=float)
        if table.ndim != 2 or table.shape[1] < 2:
            raise ValidationError("discrete table must be (n_atoms, K) with K >= 2")
        return cls.from_table(DISCRETE, np.arange(table.shape[0]), table)


class MixtureSpec(BaseModel):
    """Mixture weights, one per component domain."""
    model_config = ConfigDict(frozen=True)

    weights: Tuple[float, ...]

    @field_validator("weights")
    @classmethod
    def _check_weights(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        probability_vector(value)
        return value


@dataclass(frozen=True)
class Refinement:
    """Several joints written on one shared partition."""
    variant: str
    partition: np.ndarray
    tables: Tuple[np.ndarray, ...]

    @property
    def n_atoms(self) -> int:
        return self.tables[0].shape[0]

    def representatives(self) -> np.ndarray:
        """One input point per atom: interval midpoints or the atom ids."""
        if self.variant == PIECEWISE:
            return ((self.partition[:-1] + self.partition[1:]) / 2.0)[:, None]
        return self.partition.astype(float)[:, None]


def refine(domains: Sequence[LabeledJoint]) -> Refinement:
    """Write every joint on the union of their partitions."""
    if not domains:
        raise ValidationError("nothing to refine")
    variant, K = domains[0].variant, domains[0].K
    for d in domains[1:]:
        if d.variant != variant:
            raise ValidationError("cannot refine joints of different variants")
        if d.K != K:
            raise ValidationError(f"label counts differ ({d.K} vs {K})")
    partition = np.unique(np.concatenate([d.partition() for d in domains]))
    tables = tuple(d.mass_table(partition) for d in domains)
    return Refinement(variant=variant, partition=partition, tables=tables)


def common_refinement(a: LabeledJoint, b: LabeledJoint) -> Refinement:
    return refine([a, b])


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Finite i.i.d. draws from one domain.

    Attributes:
        x (np.ndarray): (m, d) inputs.
        y (np.ndarray): (m,) labels in ``[0, n_labels)``.
        n_labels (int): Label count K.
        domain_id (int): 0 is the target domain.
        seed (Optional[int]): Seed the points were drawn with.
    """
    x: np.ndarray
    y: np.ndarray
    n_labels: int
    domain_id: int = 0
    seed: Optional[int] = None

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.array(self.y, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1:
            raise ValidationError("x must be (m, d) and y must be (m,)")
        if y.size == 0:
            raise ValidationError("a sample set must be nonempty")
        if x.shape[0] != y.size:
            raise ValidationError(f"{x.shape[0]} inputs but {y.size} labels")
        if self.n_labels < 2:
            raise ValidationError("n_labels must be at least 2")
        if y.min() < 0 or y.max() >= self.n_labels:
            raise ValidationError(f"labels must lie in [0, {self.n_labels})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return int(self.y.size)

    @property
    def dim(self) -> int:
        return int(self.x.shape[1])

    def label_marginal(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_labels) / len(self)

    def take(self, index: np.ndarray) -> "SampleSet":
        return SampleSet(self.x[index], self.y[index], self.n_labels, self.domain_id, self.seed)

    def same_points(self, other: "SampleSet") -> bool:
        return (self.x.tobytes() == other.x.tobytes() and self.y.tobytes() == other.y.tobytes()
                and self.x.shape == other.x.shape)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.x, columns=[f"x{i + 1}" for i in range(self.dim)])
        frame.insert(0, "y", self.y)
        frame.insert(0, "domain_id", np.full(len(self), self.domain_id, dtype=np.int64))
        return frame

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
        logger.debug("Wrote %d points of domain %s to %s", len(self), self.domain_id, path)
        return path

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, n_labels: int, seed: Optional[int] = None) -> "SampleSet":
        expected = ["domain_id", "y"]
        if list(frame.columns[:2]) != expected or frame.shape[1] < 3:
            raise ValidationError(f"sample CSV needs columns {expected} + x1..xd, got {list(frame.columns)}")
        ids = frame["domain_id"].unique()
        if ids.size != 1:
            raise ValidationError(f"sample CSV mixes domains {sorted(ids.tolist())}")
        x_cols = [c for c in frame.columns[2:]]
        return cls(
            x=frame[x_cols].to_numpy(dtype=float),
            y=frame["y"].to_numpy(dtype=np.int64),
            n_labels=n_labels,
            domain_id=int(ids[0]),
            seed=seed,
        )

    @classmethod
    def from_csv(cls, path: Union[str, Path], n_labels: int, seed: Optional[int] = None) -> "SampleSet":
        frame = pd.read_csv(path)
        return cls.from_frame(frame, n_labels=n_labels, seed=seed)


Domain = Union[LabeledJoint, SampleSet]


def example1_pair(intensity: float = 0.1) -> Tuple[LabeledJoint, LabeledJoint]:
    """Two dissimilar but transferable joints on ``[-1, 1)``.

    S puts ``intensity`` on (label 1, [-1, 0)) and the rest on (label 0, [0, 1));
    T swaps the two masses. Label 1 stands for +1 and label 0 for -1.
    """
    if not 0.0 < intensity <= 0.5:
        raise ValidationError(f"intensity must lie in (0, 0.5], got {intensity}")
    source = LabeledJoint.piecewise([(-1.0, 0.0, 1, intensity), (0.0, 1.0, 0, 1.0 - intensity)], K=2)
    target = LabeledJoint.piecewise([(-1.0, 0.0, 1, 1.0 - intensity), (0.0, 1.0, 0, intensity)], K=2)
    return source, target


def counterexample_pair() -> Tuple[LabeledJoint, LabeledJoint]:
    """A pair with a large realizable measure that is still transferable.

    The target carries 0.3 of label-noise mass per label spread over all of
    ``[-1, 1)``, so every threshold pays at least 0.3 on it.
    """
    source = LabeledJoint.piecewise([(-1.0, 0.0, 1, 0.5), (0.0, 1.0, 0, 0.5)], K=2)
    target = LabeledJoint.piecewise(
        [(-1.0, 0.0, 1, 0.2), (0.0, 1.0, 0, 0.2), (-1.0, 1.0, 1, 0.3), (-1.0, 1.0, 0, 0.3)],
        K=2,
    )
    return source, target


def random_joint(variant: str, n_cells: int, K: int, seed: int, sparsity: float = 0.0) -> LabeledJoint:
    """Random joint for fuzzing.

    Args:
        variant (str): ``discrete`` or ``piecewise_uniform_1d``.
        n_cells (int): Atoms (discrete) or intervals of ``[-1, 1)`` (piecewise).
        K (int): Label count.
        seed (int): RNG seed.
        sparsity (float): Probability of zeroing each (atom, label) mass.
    """
    if n_cells < 1:
        raise ValidationError("n_cells must be positive")
    rng = np.random.default_rng(seed)
    table = rng.dirichlet(np.ones(n_cells * K)).reshape(n_cells, K)
    if sparsity > 0:
        keep = rng.random(table.shape) >= sparsity
        keep.flat[rng.integers(table.size)] = True
        table = np.where(keep, table, 0.0)
        table = table / table.sum()
    if variant == DISCRETE:
        return LabeledJoint.discrete(table)
    if variant == PIECEWISE:
        interior = np.sort(rng.uniform(-1.0, 1.0, size=n_cells - 1))
        edges = np.concatenate([[-1.0], interior, [1.0]])
        return LabeledJoint.from_table(PIECEWISE, edges, table)
    raise ValidationError(f"unknown variant {variant!r}")


def mixture(domains: Sequence[LabeledJoint], spec: MixtureSpec) -> LabeledJoint:
    """The ``spec``-weighted mixture of analytic joints."""
    if len(domains) != len(spec.weights):
        raise ValidationError(f"{len(domains)} domains but {len(spec.weights)} weights")
    ref = refine(domains)
    table = sum(w * t for w, t in zip(spec.weights, ref.tables))
    return LabeledJoint.from_table(ref.variant, ref.partition, table)


def sample(domain: LabeledJoint, m: int, seed: int, domain_id: int = 0) -> SampleSet:
    """Draw ``m`` i.i.d. labeled points from an analytic joint."""
    if m < 1:
        raise ValidationError(f"sample size must be positive, got {m}")
    rng = np.random.default_rng(seed)
    masses = domain.masses
    index = rng.choice(masses.size, size=m, p=masses / masses.sum())
    if domain.variant == PIECEWISE:
        ab = domain.bounds[index]
        x = ab[:, 0] + (ab[:, 1] - ab[:, 0]) * rng.random(m)
    else:
        x = np.array([c.region for c in domain.cells], dtype=float)[index]
    return SampleSet(x=x[:, None], y=domain.labels[index], n_labels=domain.K, domain_id=domain_id, seed=seed)


def rotated_gaussian_suite(
    n_domains: int,
    angles: Sequence[float],
    n_per: int,
    seed: int,
    n_classes: int = 2,
    sigma: float = SUITE_SIGMA,
    radius: float = SUITE_RADIUS,
) -> list[SampleSet]:
    """Synthetic multi-domain suite of rotated Gaussian class clusters.

    Class ``k`` of domain ``i`` is an isotropic Gaussian centred at angle
    ``2*pi*k/K + angles[i]`` on a circle of ``radius``; priors are equal.
    Domain 0 is the target.

    Args:
        n_domains (int): Number of domains.
        angles (Sequence[float]): Rotation of each domain, in radians.
        n_per (int): Points per domain.
        seed (int): Master seed; each domain gets its own spawned stream.
        n_classes (int): Label count K.
        sigma (float): Cluster standard deviation.
        radius (float): Distance of class means from the origin.

    Returns:
        list[SampleSet]: One sample set per domain, ``domain_id`` 0..n-1.
    """
    if len(angles) != n_domains:
        raise ValidationError(f"{n_domains} domains but {len(angles)} angles")
    if n_per < 1:
        raise ValidationError("n_per must be positive")
    if n_classes < 2 or sigma <= 0:
        raise ValidationError("need n_classes >= 2 and sigma > 0")
    base = 2.0 * np.pi * np.arange(n_classes) / n_classes
    suite = []
    for domain_id, (angle, child_seed) in enumerate(zip(angles, spawn_seeds(seed, n_domains))):
        rng = np.random.default_rng(child_seed)
        y = rng.integers(0, n_classes, size=n_per)
        means = radius * np.column_stack([np.cos(base + angle), np.sin(base + angle)])
        x = means[y] + sigma * rng.standard_normal((n_per, 2))
        suite.append(SampleSet(x=x, y=y, n_labels=n_classes, domain_id=domain_id, seed=child_seed))
    logger.info("Generated rotated-Gaussian suite: %d domains x %d points", n_domains, n_per)
    return suite


def label_marginal_tv(a: Domain, b: Domain) -> float:
    """Half the L1 distance between the label marginals of two domains."""
    ka = a.K if isinstance(a, LabeledJoint) else a.n_labels
    kb = b.K if isinstance(b, LabeledJoint) else b.n_labels
    if ka != kb:
        raise ValidationError(f"label counts differ ({ka} vs {kb})")
    return 0.5 * float(np.abs(a.label_marginal() - b.label_marginal()).sum())
