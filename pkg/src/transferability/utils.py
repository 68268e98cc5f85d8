import logging
from typing import Any, Sequence, Type, TypeVar

import numpy as np
import pydantic

from .constants import MASS_TOL
from .errors import ValidationError

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=pydantic.BaseModel)


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent child seeds from a master seed.

    Child streams come from ``numpy.random.SeedSequence.spawn`` so that no two
    domains (or sign draws) share RNG state, whatever order they run in.

    Args:
        seed (int): Master seed.
        n (int): Number of child seeds.

    Returns:
        list[int]: One 32-bit seed per child.
    """
    if type(seed) is bool or not isinstance(seed, (int, np.integer)):
        raise ValidationError(f"Unsupported seed type: {type(seed)}")
    if n < 0:
        raise ValidationError(f"Cannot spawn {n} seeds")
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [int(child.generate_state(1)[0]) for child in children]


def probability_vector(weights: Sequence[float], name: str = "weights") -> np.ndarray:
    """Validate a nonnegative vector summing to one within the mass tolerance."""
    arr = np.asarray(weights, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"{name} must be a nonempty vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValidationError(f"{name} must be finite and nonnegative")
    if abs(arr.sum() - 1.0) > MASS_TOL:
        raise ValidationError(f"{name} must sum to 1 (got {arr.sum()!r})")
    return arr


def build_model(model_cls: Type[M], **fields: Any) -> M:
    """Construct a pydantic model, re-raising its errors as ``ValidationError``."""
    try:
        return model_cls(**fields)
    except pydantic.ValidationError as exc:
        raise ValidationError(str(exc)) from exc


def first_argmax(values: np.ndarray) -> int:
    """Index of the maximum; ties go to the smallest index."""
    return int(np.argmax(values))


def first_argmin(values: np.ndarray) -> int:
    """Index of the minimum; ties go to the smallest index."""
    return int(np.argmin(values))
