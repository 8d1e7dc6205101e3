"""Sample enumeration and assembly of scaled model inputs.

A sample predicting global interval ``g`` reads the ``n`` intervals that
end just before ``g`` (they must all lie on one day) and, for every
horizon step ``g + s``, the same interval on each of the ``m`` preceding
days (``g + s - k * T`` for ``k = m..1``).  When the sequential window
ends on the last interval of a day, the target is the first interval of
the next day.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import DataError, SampleError
from ..models import ModelInputs
from ..scaling import Scaler
from .external import ExternalVocab, encode_all
from .series import FlowSeries

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sample:
    seq: tuple[int, ...]
    periodic: tuple[tuple[int, ...], ...]
    targets: tuple[int, ...]

    @property
    def target(self) -> int:
        return self.targets[0]

    @property
    def horizon(self) -> int:
        return len(self.targets)

    def indices(self) -> set[int]:
        out = set(self.seq) | set(self.targets)
        for group in self.periodic:
            out.update(group)
        return out


class SampleList(list):
    """``list`` of samples plus enumeration diagnostics."""

    def __init__(self, items=(), dropped: int = 0, diagnostic: str = ""):
        super().__init__(items)
        self.dropped = dropped
        self.diagnostic = diagnostic


def make_sample(day: int, t: int, n: int, m: int, horizon: int, per_day: int) -> Sample:
    """Sample whose sequential window is intervals ``t-n+1..t`` of ``day``."""
    last = day * per_day + t
    seq = tuple(range(last - n + 1, last + 1))
    targets = tuple(last + s for s in range(1, horizon + 1))
    periodic = tuple(tuple(g - k * per_day for k in range(m, 0, -1)) for g in targets)
    return Sample(seq, periodic, targets)


def enumerate_samples(series: FlowSeries, n: int, m: int, horizon: int = 1, require_external: bool = True) -> SampleList:
    if n < 1 or m < 1:
        raise ValueError("n and m must be at least 1")
    if horizon not in (1, 4):
        raise ValueError("horizon must be 1 or 4")
    per_day = series.intervals_per_day
    total = len(series)
    if n > per_day or m >= series.num_days:
        msg = f"n={n}, m={m} exceed the series span ({series.num_days} days of {per_day} intervals)"
        log.warning(msg)
        return SampleList(diagnostic=msg)
    usable = series.usable(require_external)
    kept, dropped = [], 0
    for day in range(series.num_days):
        for t in range(n - 1, per_day):
            s = make_sample(day, t, n, m, horizon, per_day)
            idx = s.indices()
            if min(idx) < 0 or max(idx) >= total:
                continue
            if all(usable[g] for g in idx):
                kept.append(s)
            else:
                dropped += 1
    diag = f"{len(kept)} samples, {dropped} dropped for gaps"
    return SampleList(kept, dropped, diag)


def split_samples(samples, boundary: int) -> tuple[list[Sample], list[Sample]]:
    """Samples whose targets all precede ``boundary`` versus those at or after it."""
    train = [s for s in samples if max(s.targets) < boundary]
    test = [s for s in samples if min(s.targets) >= boundary]
    return train, test


@dataclass
class PreparedSeries:
    """A series with a training-fit flow scaler and encoded external factors."""

    series: FlowSeries
    scaler: Scaler
    vocab: ExternalVocab
    scaled: np.ndarray
    ext: np.ndarray

    @cached_property
    def clipped(self) -> np.ndarray:
        return np.clip(self.scaled, -1.0, 1.0)

    @property
    def d_ext(self) -> int:
        return self.ext.shape[1]

    def _check(self, samples) -> None:
        usable = self.series.usable(require_external=self.series.externals is not None)
        for s in samples:
            for g in s.indices():
                if not (0 <= g < len(self.series)) or not usable[g]:
                    raise SampleError(f"sample references missing interval {g}")

    def gather(self, samples, check: bool = True) -> tuple[ModelInputs, np.ndarray]:
        """Model inputs and scaled targets ``[horizon, B, 2, h, w]`` for a batch.

        Network inputs are clipped to [-1, 1]; targets are not.
        """
        if check:
            self._check(samples)
        seq = np.array([s.seq for s in samples]).T
        per = np.array([s.periodic for s in samples]).transpose(1, 2, 0)
        tgt = np.array([s.targets for s in samples]).T
        clipped = self.clipped
        inputs = ModelInputs(clipped[seq], self.ext[seq], clipped[per], self.ext[per])
        return inputs, self.scaled[tgt]

    def gather_one(self, sample: Sample) -> tuple[ModelInputs, np.ndarray]:
        """Unbatched inputs (``[n, 2, h, w]`` ...) for a single sample."""
        inputs, target = self.gather([sample])
        squeeze = ModelInputs(inputs.seq_maps[:, 0], inputs.seq_ext[:, 0], inputs.per_maps[:, :, 0], inputs.per_ext[:, :, 0])
        return squeeze, target[:, 0]


def prepare(series: FlowSeries, train_end: int, scaler: Scaler | None = None, vocab: ExternalVocab | None = None) -> PreparedSeries:
    """Fit the flow scaler and external vocabulary on intervals ``< train_end``.

    Pass ``scaler``/``vocab`` to reuse ones restored from a checkpoint.
    """
    if scaler is None:
        train = series.flows[:train_end][series.present[:train_end]]
        if train.size == 0:
            raise DataError("no observed training intervals to fit the flow scaler")
        scaler = Scaler.fit(train, -1.0, 1.0)
    if vocab is None:
        if series.externals is None:
            vocab = ExternalVocab()
        else:
            vocab = ExternalVocab.fit(series.externals[:train_end])
    scaled = scaler.apply(series.flows)
    ext = encode_all(series.externals, vocab, len(series))
    return PreparedSeries(series, scaler, vocab, scaled, ext)


def require_externals(series: FlowSeries) -> None:
    if not series.has_externals():
        raise DataError("series carries no external-factor records; ingest with an externals CSV first")
