"""Long-form latency: short-form metrics averaged over the segments of a resegmented stream."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass

from . import shortform
from .data import REFERENCE_KINDS, LongKind, MetricKind, SegmentHypothesis, StreamRecord
from .errors import UndefinedInputError, ValidationError
from .softsegmenter import AssignedSegment, Resegmentation, resegment_stream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentValue:
    index: int
    value: float
    defined: bool
    n_tokens: int
    n_tail_excluded: int

    def as_json(self) -> dict:
        return {
            "index": self.index,
            "value": self.value if self.defined else None,
            "defined": self.defined,
            "n_tokens": self.n_tokens,
            "n_tail_excluded": self.n_tail_excluded,
        }


@dataclass(frozen=True)
class StreamMetricValue:
    kind: LongKind
    value: float
    per_segment: tuple[SegmentValue, ...]
    defined: bool = True

    @property
    def skipped(self) -> int:
        return sum(1 for segment in self.per_segment if not segment.defined)

    def as_json(self, stream_id: str | None = None) -> dict:
        return {
            "stream_id": stream_id,
            "kind": self.kind.value,
            "value": self.value if self.defined else None,
            "skipped": self.skipped,
            "per_segment": [segment.as_json() for segment in self.per_segment],
        }


def _average(kind: LongKind, per_segment: list[SegmentValue], allow_undefined: bool) -> StreamMetricValue:
    defined = [segment.value for segment in per_segment if segment.defined]
    if not defined:
        if allow_undefined:
            return StreamMetricValue(kind, float("nan"), tuple(per_segment), defined=False)
        raise UndefinedInputError(f"{kind.value} is undefined on every segment of the stream")
    if len(defined) < len(per_segment):
        logger.info("%s: %d undefined segment(s) skipped", kind.value, len(per_segment) - len(defined))
    return StreamMetricValue(kind, sum(defined) / len(defined), tuple(per_segment))


def excluded_count(kind: MetricKind, seg: SegmentHypothesis) -> int:
    """Tokens of a non-empty segment that do not enter the sum of ``kind``."""
    if kind in (MetricKind.AL, MetricKind.LAAL):
        return len(seg) - shortform.cutoff_tau(seg.delays, seg.source_duration_ms)
    if kind == MetricKind.YAAL:
        return len(seg) - shortform.yaal_cutoff(seg.delays, seg.source_duration_ms)
    # AP clamps late delays, DAL and ATD sum every token.
    return 0


def _segment_value(assigned: AssignedSegment, kind: MetricKind) -> SegmentValue:
    n_tokens = len(assigned.tokens)
    if n_tokens == 0:
        return SegmentValue(assigned.index, float("nan"), False, 0, 0)

    seg = assigned.hypothesis()
    ref_len = len(assigned.reference.tokens) or None
    if ref_len is None and kind in REFERENCE_KINDS:
        logger.warning("Segment %d has an empty reference, %s is undefined there", assigned.index, kind.value)
        return SegmentValue(assigned.index, float("nan"), False, n_tokens, n_tokens)

    value = shortform.compute(kind, seg, ref_len)
    return SegmentValue(assigned.index, value.value, value.defined, n_tokens, excluded_count(kind, seg))


def _require_hypothesis(stream: StreamRecord):
    if stream.hypothesis is None:
        raise ValidationError("The stream has no hypothesis")


def stream_metric(
    stream: StreamRecord,
    kind: MetricKind,
    segmentation: Resegmentation | None = None,
    allow_undefined: bool = False,
) -> StreamMetricValue:
    """Average a short-form metric over the resegmented stream.

    Each segment is scored with delays relative to its start, its own duration and its
    own reference length. YAAL is the one exception: the long-form variant keeps tokens
    spilling over the segment end, see :func:`long_yaal`.

    A stream without any defined segment raises, unless ``allow_undefined`` asks for an
    undefined value instead.
    """
    _require_hypothesis(stream)
    if kind == MetricKind.YAAL:
        return long_yaal(stream, segmentation, allow_undefined)
    if kind == MetricKind.TL:
        raise ValidationError("True latency needs alignment tables, see true_latency_stream")

    if segmentation is None:
        segmentation = resegment_stream(stream)
    per_segment = [_segment_value(assigned, kind) for assigned in segmentation.segments]
    return _average(LongKind.of(kind), per_segment, allow_undefined)


def long_yaal(
    stream: StreamRecord, segmentation: Resegmentation | None = None, allow_undefined: bool = False
) -> StreamMetricValue:
    """YAAL over a stream.

    A segment keeps every token assigned to it that was emitted before the end of the
    whole stream, even past the end of the segment itself. The overgeneration guard
    counts the kept tokens only.
    """
    _require_hypothesis(stream)
    if segmentation is None:
        segmentation = resegment_stream(stream)
    stream_end = stream.duration_ms

    per_segment = []
    for assigned in segmentation.segments:
        kept = [
            delay_rel
            for token, delay_rel in zip(assigned.tokens, assigned.delays_rel, strict=True)
            if token.delay_ms < stream_end
        ]
        n_tokens = len(assigned.tokens)
        excluded = n_tokens - len(kept)
        if not kept:
            per_segment.append(SegmentValue(assigned.index, float("nan"), False, n_tokens, excluded))
            continue

        duration = assigned.reference.duration_ms
        gamma = max(len(kept), len(assigned.reference.tokens)) / duration
        value = shortform.lagging(kept, len(kept), gamma)
        per_segment.append(SegmentValue(assigned.index, value, True, n_tokens, excluded))

    return _average(LongKind.LongYAAL, per_segment, allow_undefined)


def stream_laal_compat(
    stream: StreamRecord, segmentation: Resegmentation, allow_undefined: bool = False
) -> StreamMetricValue:
    """LAAL averaged over an externally supplied segmentation of the stream hypothesis."""
    _require_hypothesis(stream)
    if len(segmentation.segments) != len(stream.references):
        raise ValidationError(
            f"Segmentation has {len(segmentation.segments)} segments, the stream has {len(stream.references)}"
        )
    segmentation.check_partition(stream.hypothesis)

    per_segment = [_segment_value(assigned, MetricKind.LAAL) for assigned in segmentation.segments]
    return _average(LongKind.StreamLAAL, per_segment, allow_undefined)


def resegmented_hypotheses(segmentation: Resegmentation) -> list[SegmentHypothesis]:
    """Short-form hypotheses of the non-empty resegmented segments, for tail bookkeeping."""
    return [assigned.hypothesis() for assigned in segmentation.segments if assigned.tokens]


def corpus_mean(values: Sequence[StreamMetricValue]) -> shortform.Aggregate:
    """Mean over streams of the defined per-stream values.

    ``skipped`` counts the undefined segments of every stream, so an undefined stream
    contributes all of its segments.
    """
    if not values:
        raise UndefinedInputError("No stream to average")
    kinds = {value.kind for value in values}
    if len(kinds) > 1:
        raise ValidationError(f"Cannot average different kinds: {sorted(kind.value for kind in kinds)}")
    defined = [value.value for value in values if value.defined]
    if not defined:
        raise UndefinedInputError(f"{values[0].kind.value} is undefined on every stream")
    if len(defined) < len(values):
        logger.warning("%s: %d undefined stream(s) left out", values[0].kind.value, len(values) - len(defined))
    return shortform.Aggregate(sum(defined) / len(defined), len(defined), sum(value.skipped for value in values))

