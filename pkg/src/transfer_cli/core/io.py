"""Reading and writing of result files."""
import json
import logging
import math
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Tuple, Union

import pandas as pd
from pydantic import BaseModel

from transferability.constants import FLOAT_FORMAT, SCHEMA_VERSION
from transferability.domains import Domain, LabeledJoint, SampleSet
from transferability.errors import ValidationError

from transfer_cli.models.schemas import RESULT_MODELS, Envelope

logger = logging.getLogger(__name__)

LOCK_NAME = ".transferability.lock"


class FixedDigitsEncoder(json.JSONEncoder):
    """JSON encoder writing every float with ``FLOAT_FORMAT``, like the CSV writers."""

    def _float_str(self, value: float) -> str:
        if math.isnan(value) or math.isinf(value):
            if not self.allow_nan:
                raise ValueError(f"Out of range float values are not JSON compliant: {value!r}")
            return "NaN" if math.isnan(value) else ("Infinity" if value > 0 else "-Infinity")
        text = FLOAT_FORMAT % value
        # keep floats distinguishable from ints on the way back in
        return text if any(c in text for c in ".en") else text + ".0"

    def iterencode(self, o, _one_shot=False):
        encode_str = json.encoder.encode_basestring_ascii if self.ensure_ascii else json.encoder.encode_basestring
        markers = {} if self.check_circular else None
        return json.encoder._make_iterencode(
            markers, self.default, encode_str, self.indent, self._float_str, self.key_separator,
            self.item_separator, self.sort_keys, self.skipkeys, _one_shot,
        )(o, 0)


def write_json(path: Union[str, Path], kind: str, payload: BaseModel) -> Path:
    """Write ``payload`` wrapped in an envelope, keys sorted, floats at 17 significant digits."""
    if kind not in RESULT_MODELS:
        raise ValidationError(f"unknown result kind {kind!r}")
    path = Path(path)
    envelope = Envelope(kind=kind, payload=payload.model_dump(mode="json"))
    with open(path, "w", encoding="utf-8") as stream:
        json.dump(envelope.model_dump(mode="json"), stream, cls=FixedDigitsEncoder, sort_keys=True, indent=2)
        stream.write("\n")
    logger.info("Wrote %s to %s", kind, path)
    return path


def read_result(path: Union[str, Path]) -> Tuple[str, BaseModel]:
    """Read an enveloped result file and validate its payload.

    Raises:
        FileNotFoundError: No such file.
        ValidationError: Malformed JSON, unknown kind or unsupported schema version.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as stream:
        try:
            raw = json.load(stream)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or raw.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"{path}: expected schema_version {SCHEMA_VERSION}")
    envelope = Envelope.model_validate(raw)
    model_cls = RESULT_MODELS.get(envelope.kind)
    if model_cls is None:
        raise ValidationError(f"{path}: unknown result kind {envelope.kind!r}")
    return envelope.kind, model_cls.model_validate(envelope.payload)


def read_kind(path: Union[str, Path], kind: str) -> BaseModel:
    found, payload = read_result(path)
    if found != kind:
        raise ValidationError(f"{path} holds a {found!r}, expected {kind!r}")
    return payload


def write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("Wrote %d rows to %s", len(frame), path)
    return path


def load_domain(path: Union[str, Path], n_labels: int) -> Domain:
    """An analytic joint from an enveloped JSON file or a sample set from a CSV file."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return SampleSet.from_csv(path, n_labels=n_labels)
    joint = read_kind(path, "joint")
    assert isinstance(joint, LabeledJoint)
    return joint


@contextmanager
def output_lock(directory: Union[str, Path]) -> Iterator[Path]:
    """Hold an exclusive lock file in ``directory`` for the duration of a run.

    Raises:
        FileExistsError: Another run holds the lock.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield lock
    finally:
        try:
            lock.unlink()
        except FileNotFoundError:
            logger.warning("Lock file %s vanished before release", lock)
