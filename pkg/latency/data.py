import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import ValidationError

# Tolerance for a manifest whose last segment ends slightly after the stream.
STREAM_END_TOLERANCE_MS = 1.0


class MetricKind(str, Enum):
    AP = "AP"
    AL = "AL"
    LAAL = "LAAL"
    DAL = "DAL"
    ATD = "ATD"
    YAAL = "YAAL"
    TL = "TL"


SHORTFORM_KINDS = (MetricKind.AP, MetricKind.AL, MetricKind.LAAL, MetricKind.DAL, MetricKind.ATD, MetricKind.YAAL)

# Kinds whose ideal policy is defined by the reference length.
REFERENCE_KINDS = (MetricKind.AL, MetricKind.LAAL, MetricKind.YAAL)


class LongKind(str, Enum):
    StreamLAAL = "StreamLAAL"
    LongAL = "LongAL"
    LongLAAL = "LongLAAL"
    LongDAL = "LongDAL"
    LongATD = "LongATD"
    LongAP = "LongAP"
    LongYAAL = "LongYAAL"

    @classmethod
    def of(cls, kind: MetricKind) -> "LongKind":
        return cls(f"Long{kind.value}")


@dataclass(frozen=True)
class TokenEvent:
    token: str
    delay_ms: float
    elapsed_ms: float | None = None
    surface: str | None = None
    joined: bool = False

    def __post_init__(self):
        if self.token == "":
            raise ValidationError("Token must not be empty")
        if not self.delay_ms >= 0:
            raise ValidationError(f"Delay of token '{self.token}' must be non-negative, got {self.delay_ms}")


@dataclass(frozen=True)
class SegmentHypothesis:
    tokens: tuple[TokenEvent, ...]
    source_duration_ms: float
    raw_text: str = ""
    index: int | None = None

    def __post_init__(self):
        if not self.source_duration_ms > 0:
            raise ValidationError(f"Source duration must be positive, got {self.source_duration_ms}")
        for previous, current in zip(self.tokens, self.tokens[1:]):
            if current.delay_ms < previous.delay_ms:
                raise ValidationError(
                    f"Non-monotone delays: {current.delay_ms} after {previous.delay_ms}"
                    + (f" in segment {self.index}" if self.index is not None else "")
                )

    @property
    def delays(self) -> list[float]:
        return [token.delay_ms for token in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class SegmentReference:
    tokens: tuple[str, ...]
    raw_text: str
    start_ms: float = 0.0
    duration_ms: float | None = None

    @property
    def end_ms(self) -> float:
        return self.start_ms + (self.duration_ms or 0.0)


@dataclass(frozen=True)
class StreamRecord:
    references: tuple[SegmentReference, ...]
    hypothesis: SegmentHypothesis | None = None

    def __post_init__(self):
        if not self.references:
            raise ValidationError("A stream needs at least one reference segment")
        for reference in self.references:
            if reference.duration_ms is None or not reference.duration_ms > 0:
                raise ValidationError(f"Segment at {reference.start_ms} ms needs a positive duration")
            if reference.start_ms < 0:
                raise ValidationError(f"Segment start must be non-negative, got {reference.start_ms}")
        for previous, current in zip(self.references, self.references[1:]):
            if current.start_ms < previous.start_ms:
                raise ValidationError("Reference segments must be ordered by start_ms")
            if current.start_ms < previous.end_ms:
                raise ValidationError(
                    f"Overlapping segments: [{previous.start_ms}, {previous.end_ms}) and starting at {current.start_ms}"
                )
        if self.hypothesis is not None:
            last_end = self.references[-1].end_ms
            if last_end > self.hypothesis.source_duration_ms + STREAM_END_TOLERANCE_MS:
                raise ValidationError(
                    f"Last segment ends at {last_end} ms, after the stream end {self.hypothesis.source_duration_ms} ms"
                )

    @property
    def duration_ms(self) -> float:
        if self.hypothesis is None:
            return self.references[-1].end_ms
        return self.hypothesis.source_duration_ms

    def with_hypothesis(self, hypothesis: SegmentHypothesis) -> "StreamRecord":
        return StreamRecord(self.references, hypothesis)


@dataclass(frozen=True)
class MetricValue:
    kind: MetricKind
    value: float
    defined: bool = True

    @classmethod
    def undefined(cls, kind: MetricKind) -> "MetricValue":
        return cls(kind, math.nan, False)

    def as_json(self) -> float | None:
        return self.value if self.defined else None


@dataclass(frozen=True)
class SourceWord:
    word: str
    start_ms: float
    end_ms: float


@dataclass(frozen=True)
class AlignmentTable:
    source_words: tuple[SourceWord, ...]
    links: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        for word in self.source_words:
            if not 0 <= word.start_ms <= word.end_ms:
                raise ValidationError(
                    f"Source word '{word.word}' needs 0 <= start_ms <= end_ms, got [{word.start_ms}, {word.end_ms}]"
                )
        for target, source in self.links:
            if target < 0:
                raise ValidationError(f"Negative target index {target} in link ({target}, {source})")
            if not 0 <= source < len(self.source_words):
                raise ValidationError(
                    f"Source index {source} out of range for {len(self.source_words)} source words"
                )

    def check_targets(self, n_targets: int):
        for target, source in self.links:
            if target >= n_targets:
                raise ValidationError(
                    f"Link ({target}, {source}) points past the last of {n_targets} target tokens"
                )
