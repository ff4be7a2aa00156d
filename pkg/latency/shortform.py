"""Short-form latency metrics computed on one presegmented utterance.

All delays and durations are in milliseconds. The ideal policy emits token ``i``
(0-based) at ``i / gamma``.
"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .data import REFERENCE_KINDS, MetricKind, MetricValue, SegmentHypothesis
from .errors import UndefinedInputError

logger = logging.getLogger(__name__)

# Fixed duration of one source token in the token delay model.
SOURCE_TOKEN_MS = 300.0


def _require_tokens(seg: SegmentHypothesis, kind: MetricKind):
    if len(seg) == 0:
        raise UndefinedInputError(f"{kind.value} is undefined for an empty hypothesis")


def lagging(delays: Sequence[float], n_terms: int, gamma: float) -> float:
    """Mean of ``d_i - i / gamma`` over the first ``n_terms`` delays (0-based ``i``)."""
    total = 0.0
    for i in range(n_terms):
        total += delays[i] - i / gamma
    return total / n_terms


def cutoff_tau(delays: Sequence[float], source_duration: float) -> int:
    """1-based index of the first token emitted once the whole source was read, ``len(delays)`` if none."""
    if len(delays) == 0:
        raise UndefinedInputError("The cutoff point is undefined for an empty hypothesis")
    for i, delay in enumerate(delays, 1):
        if delay >= source_duration:
            return i
    return len(delays)


def yaal_cutoff(delays: Sequence[float], source_duration: float) -> int:
    """Number of tokens emitted strictly before the end of the source (0 for an offline segment)."""
    return sum(1 for delay in delays if delay < source_duration)


def ap(seg: SegmentHypothesis, ref_len: int | None = None) -> MetricValue:
    _require_tokens(seg, MetricKind.AP)
    source = seg.source_duration_ms
    clamped = [min(delay, source) for delay in seg.delays]
    return MetricValue(MetricKind.AP, sum(clamped) / (source * len(seg)))


def al(seg: SegmentHypothesis, ref_len: int) -> MetricValue:
    _require_tokens(seg, MetricKind.AL)
    delays = seg.delays
    gamma = ref_len / seg.source_duration_ms
    return MetricValue(MetricKind.AL, lagging(delays, cutoff_tau(delays, seg.source_duration_ms), gamma))


def laal(seg: SegmentHypothesis, ref_len: int) -> MetricValue:
    _require_tokens(seg, MetricKind.LAAL)
    delays = seg.delays
    gamma = max(len(delays), ref_len) / seg.source_duration_ms
    return MetricValue(MetricKind.LAAL, lagging(delays, cutoff_tau(delays, seg.source_duration_ms), gamma))


def dal(seg: SegmentHypothesis, ref_len: int | None = None) -> MetricValue:
    """Differentiable Average Lagging. The ideal rate uses the hypothesis length, so ``ref_len`` is not used."""
    _require_tokens(seg, MetricKind.DAL)
    delays = seg.delays
    step = seg.source_duration_ms / len(delays)

    total = 0.0
    previous = 0.0
    for i, delay in enumerate(delays):
        current = delay if i == 0 else max(delay, previous + step)
        total += current - i * step
        previous = current
    return MetricValue(MetricKind.DAL, total / len(delays))


def atd(seg: SegmentHypothesis, ref_len: int | None = None) -> MetricValue:
    """Average Token Delay with 300 ms source tokens.

    The source is cut into tokens ending at 300, 600, ... ms; the last one ends at the
    source duration. Translation chunks are runs of equal delays, and the source chunk
    read before translation chunk ``c`` holds the source tokens ending at or before its delay.
    """
    _require_tokens(seg, MetricKind.ATD)
    delays = seg.delays
    source = seg.source_duration_ms

    n_source = max(1, math.ceil(source / SOURCE_TOKEN_MS))
    source_ends = np.minimum(SOURCE_TOKEN_MS * np.arange(1, n_source + 1), source)

    # Accumulated target and source lengths at the end of every chunk.
    chunk_of_token = []
    chunk_delays: list[float] = []
    target_acc: list[int] = []
    for t, delay in enumerate(delays, 1):
        if not chunk_delays or delay > chunk_delays[-1]:
            chunk_delays.append(delay)
            target_acc.append(t)
        else:
            target_acc[-1] = t
        chunk_of_token.append(len(chunk_delays) - 1)
    source_acc = np.searchsorted(source_ends, chunk_delays, side="right").tolist()

    total = 0.0
    for t, (delay, c) in enumerate(zip(delays, chunk_of_token, strict=True), 1):
        previous_target = target_acc[c - 1] if c > 0 else 0
        previous_source = source_acc[c - 1] if c > 0 else 0
        s = t - max(0, previous_target - previous_source)
        a = min(s, source_acc[c])
        # A token written before the first complete source token is aligned to the stream start.
        source_end = float(source_ends[a - 1]) if a >= 1 else 0.0
        total += delay - source_end
    return MetricValue(MetricKind.ATD, total / len(delays))


def yaal(seg: SegmentHypothesis, ref_len: int) -> MetricValue:
    """Yet Another Average Lagging: LAAL restricted to tokens emitted strictly before the end of the source.

    The overgeneration guard counts only those tokens, so tail tokens cannot change the value.
    """
    delays = seg.delays
    tau = yaal_cutoff(delays, seg.source_duration_ms)
    if tau == 0:
        return MetricValue.undefined(MetricKind.YAAL)
    gamma = max(tau, ref_len) / seg.source_duration_ms
    return MetricValue(MetricKind.YAAL, lagging(delays, tau, gamma))


METRICS: dict[MetricKind, Callable[[SegmentHypothesis, int], MetricValue]] = {
    MetricKind.AP: ap,
    MetricKind.AL: al,
    MetricKind.LAAL: laal,
    MetricKind.DAL: dal,
    MetricKind.ATD: atd,
    MetricKind.YAAL: yaal,
}


def compute(kind: MetricKind, seg: SegmentHypothesis, ref_len: int | None) -> MetricValue:
    """Compute one metric. Kinds that need the reference length fail without it."""
    if ref_len is None:
        if kind in REFERENCE_KINDS:
            raise UndefinedInputError(f"{kind.value} needs the reference length")
    elif ref_len < 1:
        raise UndefinedInputError(f"{kind.value} needs a non-empty reference")
    return METRICS[kind](seg, ref_len)


@dataclass(frozen=True)
class Aggregate:
    value: float
    n_defined: int
    skipped: int

    def as_json(self) -> dict:
        return {"value": self.value, "n_defined": self.n_defined, "skipped": self.skipped}


def corpus_aggregate(values: Sequence[MetricValue]) -> Aggregate:
    """Unweighted mean of the defined values; undefined ones are counted as skipped."""
    defined = [value.value for value in values if value.defined]
    if not defined:
        raise UndefinedInputError("No defined value to aggregate")
    skipped = len(values) - len(defined)
    if skipped:
        logger.info("%d undefined segment(s) skipped in the corpus mean", skipped)
    return Aggregate(sum(defined) / len(defined), len(defined), skipped)


def tail_count(seg: SegmentHypothesis) -> int:
    return sum(1 for delay in seg.delays if delay >= seg.source_duration_ms)


def tail_fraction(segments: Sequence[SegmentHypothesis]) -> float:
    """Fraction of all hypothesis tokens emitted at or after the end of their segment."""
    total = sum(len(seg) for seg in segments)
    if total == 0:
        raise UndefinedInputError("The tail fraction needs at least one hypothesis token")
    return sum(tail_count(seg) for seg in segments) / total
