"""Resegmentation of a long-form hypothesis onto reference segments.

Reference and hypothesis tokens are aligned monotonically, maximizing the sum of the
pair scores of matched tokens; gaps on either side score zero. A pair is forbidden when
the hypothesis token was emitted no later than the start of the reference segment, or
when exactly one of the two tokens is punctuation.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .data import SegmentHypothesis, SegmentReference, StreamRecord, TokenEvent
from .errors import ValidationError
from .textproc import char_similarity, detokenize, is_punctuation

logger = logging.getLogger(__name__)


def pair_score(t_r: str, s_r: float, t_h: str, d_h: float) -> float | None:
    """Score of matching reference token ``t_r`` of a segment starting at ``s_r`` with
    hypothesis token ``t_h`` emitted at ``d_h``. ``None`` marks a forbidden pair."""
    if s_r >= d_h:
        return None
    if is_punctuation(t_r) != is_punctuation(t_h):
        return None
    return char_similarity(t_r, t_h)


@dataclass(frozen=True)
class AssignedSegment:
    index: int
    reference: SegmentReference
    tokens: tuple[TokenEvent, ...]

    @property
    def delays_abs(self) -> list[float]:
        return [token.delay_ms for token in self.tokens]

    @property
    def delays_rel(self) -> list[float]:
        # Tokens emitted before the first segment starts can only land in that segment; they count from its start.
        return [max(0.0, token.delay_ms - self.reference.start_ms) for token in self.tokens]

    @property
    def text(self) -> str:
        return detokenize(
            [token.surface if token.surface is not None else token.token for token in self.tokens],
            [token.joined for token in self.tokens],
        )

    def hypothesis(self) -> SegmentHypothesis:
        """The segment as a short-form hypothesis with delays relative to the segment start."""
        if self.reference.duration_ms is None:
            raise ValidationError(f"Segment {self.index} has no duration")
        return SegmentHypothesis(
            tokens=tuple(
                TokenEvent(token.token, delay, token.elapsed_ms, token.surface, token.joined)
                for token, delay in zip(self.tokens, self.delays_rel, strict=True)
            ),
            source_duration_ms=self.reference.duration_ms,
            raw_text=self.text,
            index=self.index,
        )

    def as_json(self) -> dict:
        return {
            "segment_index": self.index,
            "text": self.text,
            "tokens": [token.token for token in self.tokens],
            "delays_abs_ms": self.delays_abs,
            "delays_rel_ms": self.delays_rel,
        }


@dataclass(frozen=True)
class Resegmentation:
    segments: tuple[AssignedSegment, ...]
    score: float = 0.0

    def tokens(self) -> list[TokenEvent]:
        return [token for segment in self.segments for token in segment.tokens]

    def check_partition(self, hypothesis: SegmentHypothesis):
        """Raise unless the segments split ``hypothesis`` into consecutive pieces."""
        flat = self.tokens()
        if len(flat) != len(hypothesis):
            raise ValidationError(
                f"Segmentation holds {len(flat)} tokens but the stream hypothesis has {len(hypothesis)}"
            )
        for position, (assigned, original) in enumerate(zip(flat, hypothesis.tokens, strict=True)):
            if assigned.token != original.token or assigned.delay_ms != original.delay_ms:
                raise ValidationError(f"Segmentation differs from the stream hypothesis at token {position}")


def _similarity_table(ref_tokens: list[str], hyp_tokens: list[str]):
    """Pair scores and the punctuation mask between the distinct token types on both sides."""
    ref_lookup = {t: r for r, t in enumerate(sorted(set(ref_tokens)))}
    hyp_lookup = {t: h for h, t in enumerate(sorted(set(hyp_tokens)))}
    scores = np.zeros((len(ref_lookup), len(hyp_lookup)))
    allowed = np.zeros((len(ref_lookup), len(hyp_lookup)), dtype=bool)
    for t_r, r in ref_lookup.items():
        for t_h, h in hyp_lookup.items():
            if is_punctuation(t_r) == is_punctuation(t_h):
                scores[r, h] = char_similarity(t_r, t_h)
                allowed[r, h] = True

    ref_ids = np.array([ref_lookup[t] for t in ref_tokens], dtype=int)
    hyp_ids = np.array([hyp_lookup[t] for t in hyp_tokens], dtype=int)
    return scores, allowed, ref_ids, hyp_ids


def align(references: list[SegmentReference], hypothesis: list[TokenEvent]) -> Resegmentation:
    """Assign every hypothesis token to a reference segment.

    Matched tokens go to the segment of their reference token, unmatched tokens follow
    the closest preceding matched token (the first segment if there is none).
    """
    if not references:
        raise ValidationError("Resegmentation needs at least one reference segment")

    ref_tokens = [token for reference in references for token in reference.tokens]
    ref_segment = np.array(
        [index for index, reference in enumerate(references) for _ in reference.tokens], dtype=int
    )
    ref_start = np.array([references[s].start_ms for s in ref_segment], dtype=float)
    hyp_tokens = [event.token for event in hypothesis]
    hyp_delays = np.array([event.delay_ms for event in hypothesis], dtype=float)
    n, m = len(ref_tokens), len(hyp_tokens)

    if m == 0:
        return Resegmentation(tuple(AssignedSegment(i, ref, ()) for i, ref in enumerate(references)))

    type_scores, type_allowed, ref_ids, hyp_ids = _similarity_table(ref_tokens, hyp_tokens)

    def row(i: int) -> tuple[np.ndarray, np.ndarray]:
        allowed = type_allowed[ref_ids[i], hyp_ids] & (ref_start[i] < hyp_delays)
        return type_scores[ref_ids[i], hyp_ids], allowed

    # best[i, j]: best score aligning the first i reference and the first j hypothesis tokens.
    best = np.zeros((n + 1, m + 1))
    for i in range(1, n + 1):
        scores, allowed = row(i - 1)
        candidates = np.where(allowed, np.maximum(best[i - 1, :-1] + scores, best[i - 1, 1:]), best[i - 1, 1:])
        best[i, 1:] = np.maximum.accumulate(candidates)

    # Backtrace, preferring match over skipping a hypothesis token over skipping a reference token.
    matched_segment = np.full(m, -1, dtype=int)
    i, j = n, m
    current_row = row(i - 1) if i > 0 else None
    while i > 0 and j > 0:
        scores, allowed = current_row
        if allowed[j - 1] and best[i, j] == best[i - 1, j - 1] + scores[j - 1]:
            matched_segment[j - 1] = ref_segment[i - 1]
            i, j = i - 1, j - 1
            current_row = row(i - 1) if i > 0 else None
        elif best[i, j] == best[i, j - 1]:
            j -= 1
        else:
            i -= 1
            current_row = row(i - 1) if i > 0 else None

    assignment = []
    segment = 0
    for s in matched_segment:
        if s >= 0:
            segment = int(s)
        assignment.append(segment)

    segments = []
    for index, reference in enumerate(references):
        tokens = tuple(event for event, s in zip(hypothesis, assignment, strict=True) if s == index)
        segments.append(AssignedSegment(index, reference, tokens))

    n_matched = int((matched_segment >= 0).sum())
    logger.debug("Aligned %d of %d hypothesis tokens to %d reference tokens", n_matched, m, n)
    return Resegmentation(tuple(segments), float(best[n, m]))


def resegment_stream(stream: StreamRecord) -> Resegmentation:
    if stream.hypothesis is None:
        raise ValidationError("The stream has no hypothesis to resegment")
    return align(list(stream.references), list(stream.hypothesis.tokens))
