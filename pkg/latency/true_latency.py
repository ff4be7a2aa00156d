"""Reference latency from word alignments.

Every hypothesis token linked to at least one source word and emitted strictly before
the end of the source contributes the gap between its delay and the end of the latest
source word it is linked to. Gaps may be negative.
"""

import logging
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass

from .data import AlignmentTable, MetricKind, MetricValue, SegmentHypothesis, StreamRecord
from .errors import ValidationError
from .shortform import Aggregate, corpus_aggregate
from .softsegmenter import Resegmentation, resegment_stream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentTrueLatency:
    value: MetricValue
    gaps: tuple[float, ...]


def true_latency_gaps(delays: Sequence[float], table: AlignmentTable, end_of_source: float) -> list[float]:
    """Per-token gaps of the eligible tokens, in target order."""
    table.check_targets(len(delays))

    source_end: dict[int, float] = defaultdict(float)
    for target, source in table.links:
        source_end[target] = max(source_end[target], table.source_words[source].end_ms)

    return [delays[target] - source_end[target] for target in sorted(source_end) if delays[target] < end_of_source]


def _from_gaps(gaps: list[float]) -> SegmentTrueLatency:
    if not gaps:
        return SegmentTrueLatency(MetricValue.undefined(MetricKind.TL), ())
    return SegmentTrueLatency(MetricValue(MetricKind.TL, sum(gaps) / len(gaps)), tuple(gaps))


def segment_true_latency(seg: SegmentHypothesis, table: AlignmentTable) -> SegmentTrueLatency:
    return _from_gaps(true_latency_gaps(seg.delays, table, seg.source_duration_ms))


def true_latency(seg: SegmentHypothesis, table: AlignmentTable) -> MetricValue:
    return segment_true_latency(seg, table).value


def true_latency_corpus(pairs: Sequence[tuple[SegmentHypothesis, AlignmentTable]]) -> Aggregate:
    """Mean of the defined per-segment values; undefined segments are skipped and counted."""
    return corpus_aggregate([true_latency(seg, table) for seg, table in pairs])


def true_latency_stream(
    stream: StreamRecord,
    tables: Sequence[AlignmentTable],
    segmentation: Resegmentation | None = None,
) -> list[SegmentTrueLatency]:
    """True latency of every reference segment of a stream.

    The hypothesis is resegmented first. Target indices of the ``i``-th table refer to the
    tokens assigned to segment ``i``; source word times and token delays are stream times,
    and only tokens emitted before the end of the stream are eligible.
    """
    if stream.hypothesis is None:
        raise ValidationError("The stream has no hypothesis")
    if len(tables) != len(stream.references):
        raise ValidationError(f"Got {len(tables)} alignment tables for {len(stream.references)} segments")
    if segmentation is None:
        segmentation = resegment_stream(stream)

    results = []
    for assigned, table in zip(segmentation.segments, tables, strict=True):
        try:
            gaps = true_latency_gaps(assigned.delays_abs, table, stream.duration_ms)
        except ValidationError as e:
            raise ValidationError(f"Segment {assigned.index}: {e}") from e
        results.append(_from_gaps(gaps))
    logger.debug("True latency defined on %d of %d segments", sum(r.value.defined for r in results), len(results))
    return results
