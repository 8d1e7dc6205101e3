"""One-hot / min-max encoding of weather, holiday and meteorology factors."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import DataError
from ..scaling import Scaler
from .series import ExternalRecord
from .timeparse import parse_time

log = logging.getLogger(__name__)

EXTERNAL_HEADER = ("interval_start", "weather", "holiday", "temperature", "wind_speed")


@dataclass
class ExternalVocab:
    """Label vocabularies and meteorology ranges fitted on training data.

    The encoded vector is ``weather one-hot ⊕ holiday one-hot ⊕
    [temperature] ⊕ [wind]``; a scalar block exists only when the training
    data recorded that factor.
    """

    weather: tuple[str, ...] = ()
    holidays: tuple[str, ...] = ()
    temperature: Scaler | None = None
    wind: Scaler | None = None
    clamped: int = field(default=0, compare=False)

    @classmethod
    def fit(cls, records: Iterable[ExternalRecord | None]) -> "ExternalVocab":
        recs = [r for r in records if r is not None]
        weather = sorted({r.weather for r in recs if r.weather})
        holidays = sorted({r.holiday for r in recs if r.holiday})
        temps = [r.temperature for r in recs if r.temperature is not None]
        winds = [r.wind for r in recs if r.wind is not None]
        return cls(tuple(weather), tuple(holidays), _unit_scaler(temps, "temperature"), _unit_scaler(winds, "wind speed"))

    @property
    def dimension(self) -> int:
        return len(self.weather) + len(self.holidays) + (self.temperature is not None) + (self.wind is not None)

    def to_dict(self) -> dict:
        return {
            "weather": list(self.weather),
            "holidays": list(self.holidays),
            "temperature": None if self.temperature is None else self.temperature.to_dict(),
            "wind": None if self.wind is None else self.wind.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExternalVocab":
        return cls(
            tuple(d["weather"]),
            tuple(d["holidays"]),
            None if d["temperature"] is None else Scaler.from_dict(d["temperature"]),
            None if d["wind"] is None else Scaler.from_dict(d["wind"]),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _unit_scaler(values: list[float], what: str) -> Scaler | None:
    # a factor that never varies in training carries no information
    if len(set(values)) < 2:
        if values:
            log.warning("%s is constant in the training data; omitted from the encoding", what)
        return None
    return Scaler.fit(values, 0.0, 1.0)


def _one_hot(label: str | None, labels: Sequence[str]) -> np.ndarray:
    block = np.zeros(len(labels))
    if label and label in labels:
        block[labels.index(label)] = 1.0
    return block


def _scaled(value: float | None, scaler: Scaler, vocab: ExternalVocab, what: str) -> float:
    if value is None:
        return 0.0
    x = float(scaler.apply(value))
    if x < 0.0 or x > 1.0:
        vocab.clamped += 1
        log.warning("%s %.3f outside fitted range [%g, %g]; clamped", what, value, scaler.min, scaler.max)
        x = min(max(x, 0.0), 1.0)
    return x


def encode_external(record: ExternalRecord, vocab: ExternalVocab) -> np.ndarray:
    """Encode one interval's factors; unknown labels give all-zero blocks."""
    parts = [_one_hot(record.weather, vocab.weather), _one_hot(record.holiday, vocab.holidays)]
    if vocab.temperature is not None:
        parts.append(np.array([_scaled(record.temperature, vocab.temperature, vocab, "temperature")]))
    if vocab.wind is not None:
        parts.append(np.array([_scaled(record.wind, vocab.wind, vocab, "wind speed")]))
    return np.concatenate(parts)


def encode_all(records: Sequence[ExternalRecord | None] | None, vocab: ExternalVocab, count: int) -> np.ndarray:
    out = np.zeros((count, vocab.dimension))
    if records is None:
        return out
    for g, rec in enumerate(records):
        if rec is not None:
            out[g] = encode_external(rec, vocab)
    return out


def _optional_float(text: str) -> float | None:
    text = text.strip()
    if not text:
        return None
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def read_external_csv(path, epoch: int, interval_seconds: int, count: int) -> tuple[list[ExternalRecord | None], list[tuple[int, str]]]:
    """Read ``interval_start,weather,holiday,temperature,wind_speed`` rows.

    Returns one slot per series interval (``None`` where no row landed)
    and the ``(line, reason)`` pairs of rejected rows.
    """
    slots: list[ExternalRecord | None] = [None] * count
    errors: list[tuple[int, str]] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != EXTERNAL_HEADER:
            raise DataError(f"{path}: expected header {','.join(EXTERNAL_HEADER)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != len(EXTERNAL_HEADER):
                    raise ValueError(f"expected {len(EXTERNAL_HEADER)} fields, got {len(row)}")
                start = parse_time(row[0])
                offset = start - epoch
                if offset % interval_seconds:
                    raise ValueError("interval_start is not aligned to the interval grid")
                g = offset // interval_seconds
                rec = ExternalRecord(row[1].strip() or None, row[2].strip() or None,
                                     _optional_float(row[3]), _optional_float(row[4]))
            except ValueError as exc:
                errors.append((line, str(exc)))
                continue
            if 0 <= g < count:
                slots[g] = rec
    return slots, errors
