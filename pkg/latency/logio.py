"""Readers and writers for instance logs, references, stream manifests, segmentations and alignment tables."""

import json
import logging
from typing import Any

from .data import AlignmentTable, SegmentHypothesis, SegmentReference, SourceWord, StreamRecord, TokenEvent
from .errors import ParseError, SchemaError, ValidationError
from .softsegmenter import AssignedSegment, Resegmentation
from .textproc import LangMode, split_tokens, tokenize

logger = logging.getLogger(__name__)


def _decode(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"Invalid UTF-8 at byte {e.start}") from e


def _load_json(data: bytes) -> Any:
    try:
        return json.loads(_decode(data))
    except json.JSONDecodeError as e:
        raise ParseError(f"Malformed JSON: {e.msg}", e.lineno) from e


def _number(record: dict, key: str, line: int | None) -> float:
    if key not in record:
        raise SchemaError(f"Missing required field '{key}'", line)
    value = record[key]
    if isinstance(value, bool) or not isinstance(value, int | float):
        raise SchemaError(f"Field '{key}' must be a number", line)
    return float(value)


def _numbers(record: dict, key: str, line: int | None) -> list[float]:
    if key not in record:
        raise SchemaError(f"Missing required field '{key}'", line)
    values = record[key]
    if not isinstance(values, list) or any(isinstance(v, bool) or not isinstance(v, int | float) for v in values):
        raise SchemaError(f"Field '{key}' must be an array of numbers", line)
    return [float(v) for v in values]


def _align_delays(prediction: str, delays: list[float], lang_mode: LangMode, line: int) -> list[float]:
    """Return one delay per token of ``prediction``.

    Delays that match the tokens or, in space mode, the whitespace-delimited words are
    used as they are (split-off punctuation inherits the delay of its word). If there
    are more tokens than delays, the last delay is replicated; fewer tokens is an error.
    """
    tokens = split_tokens(prediction, lang_mode)
    if len(tokens) == len(delays):
        return delays

    if lang_mode == LangMode.space and len(prediction.split()) == len(delays):
        aligned = []
        word = -1
        for token in tokens:
            if not token.joined:
                word += 1
            aligned.append(delays[word])
        return aligned

    if len(tokens) > len(delays) >= 1:
        logger.warning(
            "line %d: %d tokens but %d delays, replicating the last delay", line, len(tokens), len(delays)
        )
        return delays + [delays[-1]] * (len(tokens) - len(delays))

    raise ValidationError(f"line {line}: {len(tokens)} tokens cannot be matched with {len(delays)} delays")


def _running_max(delays: list[float], line: int) -> list[float]:
    repaired = []
    for delay in delays:
        repaired.append(max(delay, repaired[-1]) if repaired else delay)
    if repaired != delays:
        logger.warning("line %d: non-monotone delays repaired with a running maximum", line)
    return repaired


def parse_instance_log(
    data: bytes,
    lang_mode: LangMode = LangMode.space,
    *,
    seconds: bool = False,
    fix_monotonic: bool = False,
) -> list[SegmentHypothesis]:
    """Parse a newline-delimited JSON instance log into one SegmentHypothesis per record, in file order.

    ``seconds`` declares that ``source_length`` is given in seconds. Non-monotone delays are
    an error unless ``fix_monotonic`` is set.
    """
    segments = []

    for line_number, line in enumerate(_decode(data).splitlines(), 1):
        if line.strip() == "":
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"Malformed JSON: {e.msg}", line_number) from e
        if not isinstance(record, dict):
            raise SchemaError("Record must be a JSON object", line_number)

        if "prediction" not in record or not isinstance(record["prediction"], str):
            raise SchemaError("Missing required field 'prediction'", line_number)
        prediction = record["prediction"]
        delays = [max(0.0, delay) for delay in _numbers(record, "delays", line_number)]
        source_length = _number(record, "source_length", line_number) * (1000.0 if seconds else 1.0)
        elapsed = _numbers(record, "elapsed", line_number) if record.get("elapsed") is not None else None

        if fix_monotonic:
            delays = _running_max(delays, line_number)
        elif any(current < previous for previous, current in zip(delays, delays[1:])):
            raise ValidationError(f"line {line_number}: non-monotone delays")

        tokens = split_tokens(prediction, lang_mode)
        aligned = _align_delays(prediction, delays, lang_mode, line_number)
        if elapsed is not None and len(elapsed) != len(tokens):
            try:
                elapsed = _align_delays(prediction, elapsed, lang_mode, line_number)
            except ValidationError:
                logger.warning("line %d: 'elapsed' does not match the tokens and is ignored", line_number)
                elapsed = None

        index = record.get("index")
        try:
            segments.append(
                SegmentHypothesis(
                    tokens=tuple(
                        TokenEvent(
                            token=token.norm,
                            delay_ms=delay,
                            elapsed_ms=elapsed[i] if elapsed is not None else None,
                            surface=token.surface,
                            joined=token.joined,
                        )
                        for i, (token, delay) in enumerate(zip(tokens, aligned, strict=True))
                    ),
                    source_duration_ms=source_length,
                    raw_text=prediction,
                    index=index if isinstance(index, int) else None,
                )
            )
        except ValidationError as e:
            raise ValidationError(f"line {line_number}: {e}") from e

    return segments


def dump_instance_log(segments: list[SegmentHypothesis]) -> bytes:
    """Serialize segments back to the instance log format (milliseconds)."""
    lines = []
    for segment in segments:
        record: dict[str, Any] = {}
        if segment.index is not None:
            record["index"] = segment.index
        record["prediction"] = segment.raw_text
        record["delays"] = segment.delays
        if segment.tokens and all(token.elapsed_ms is not None for token in segment.tokens):
            record["elapsed"] = [token.elapsed_ms for token in segment.tokens]
        record["source_length"] = segment.source_duration_ms
        lines.append(json.dumps(record, ensure_ascii=False))
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_references(data: bytes, lang_mode: LangMode = LangMode.space) -> list[SegmentReference]:
    text = _decode(data)
    lines = text.splitlines()
    if not lines:
        raise ParseError("Reference file is empty")
    return [SegmentReference(tokens=tuple(tokenize(line, lang_mode)), raw_text=line) for line in lines]


def load_stream_manifest(data: bytes, lang_mode: LangMode = LangMode.space) -> StreamRecord:
    """Parse a JSON array of ``{start_ms, duration_ms, reference}`` into a stream without hypothesis."""
    entries = _load_json(data)
    if not isinstance(entries, list):
        raise SchemaError("Stream manifest must be a JSON array")
    if not entries:
        raise ValidationError("Stream manifest is empty")

    references = []
    for position, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise SchemaError(f"Manifest entry {position} must be an object")
        if "reference" not in entry or not isinstance(entry["reference"], str):
            raise SchemaError(f"Manifest entry {position} is missing 'reference'")
        duration = _number(entry, "duration_ms", None)
        if duration < 0:
            raise ValidationError(f"Manifest entry {position} has a negative duration")
        references.append(
            SegmentReference(
                tokens=tuple(tokenize(entry["reference"], lang_mode)),
                raw_text=entry["reference"],
                start_ms=_number(entry, "start_ms", None),
                duration_ms=duration,
            )
        )

    return StreamRecord(tuple(references))


def _alignment_table(payload: Any, n_targets: int | None, line: int | None) -> AlignmentTable:
    if not isinstance(payload, dict):
        raise SchemaError("Alignment table must be a JSON object", line)
    if "source_words" not in payload or "links" not in payload:
        raise SchemaError("Alignment table needs 'source_words' and 'links'", line)

    words = []
    for word in payload["source_words"]:
        if not isinstance(word, dict) or "word" not in word:
            raise SchemaError("Source words must be objects with 'word', 'start_ms' and 'end_ms'", line)
        words.append(SourceWord(str(word["word"]), _number(word, "start_ms", line), _number(word, "end_ms", line)))

    links = []
    for link in payload["links"]:
        if not isinstance(link, list) or len(link) != 2 or not all(isinstance(i, int) for i in link):
            raise SchemaError(f"Link {link!r} must be a pair of integer indices", line)
        links.append((link[0], link[1]))

    table = AlignmentTable(tuple(words), tuple(links))
    if n_targets is not None:
        table.check_targets(n_targets)
    return table


def load_alignment_table(data: bytes, n_targets: int | None = None) -> AlignmentTable:
    """Parse one alignment table. Target indices are checked when ``n_targets`` is given."""
    return _alignment_table(_load_json(data), n_targets, None)


def load_alignment_tables(data: bytes) -> list[AlignmentTable]:
    """Parse newline-delimited alignment tables, one per segment."""
    tables = []
    for line_number, line in enumerate(_decode(data).splitlines(), 1):
        if line.strip() == "":
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"Malformed JSON: {e.msg}", line_number) from e
        tables.append(_alignment_table(payload, None, line_number))
    return tables


def _segmentation(stream: StreamRecord, token_lists: list[list[str]]) -> Resegmentation:
    # Consume the stream hypothesis in order, one segment after the other.
    if stream.hypothesis is None:
        raise ValidationError("The stream has no hypothesis to segment")
    if len(token_lists) != len(stream.references):
        raise ValidationError(
            f"Segmentation has {len(token_lists)} segments, the stream has {len(stream.references)}"
        )
    events = stream.hypothesis.tokens
    total = sum(len(tokens) for tokens in token_lists)
    if total != len(events):
        raise ValidationError(f"Segmentation holds {total} tokens but the stream hypothesis has {len(events)}")

    segments = []
    position = 0
    for index, (reference, tokens) in enumerate(zip(stream.references, token_lists, strict=True)):
        assigned = events[position : position + len(tokens)]
        for offset, (token, event) in enumerate(zip(tokens, assigned, strict=True)):
            if token != event.token:
                raise ValidationError(
                    f"Segment {index}: token '{token}' does not match '{event.token}' at position {position + offset}"
                )
        segments.append(AssignedSegment(index, reference, tuple(assigned)))
        position += len(tokens)
    return Resegmentation(tuple(segments))


def load_segmentation_json(data: bytes, stream: StreamRecord, stream_index: int = 0) -> Resegmentation:
    """Read a segmentation in the shape written by ``reseg``, or a bare array of its segments."""
    payload = _load_json(data)
    if isinstance(payload, dict):
        streams = payload.get("streams")
        if not isinstance(streams, list) or not 0 <= stream_index < len(streams):
            raise SchemaError(f"Segmentation has no stream {stream_index}")
        payload = streams[stream_index].get("segments") if isinstance(streams[stream_index], dict) else None
    if not isinstance(payload, list):
        raise SchemaError("Segmentation must list its segments")

    token_lists = []
    for position, segment in enumerate(payload):
        if not isinstance(segment, dict) or not isinstance(segment.get("tokens"), list):
            raise SchemaError(f"Segment {position} must be an object with a 'tokens' array")
        token_lists.append([str(token) for token in segment["tokens"]])
    return _segmentation(stream, token_lists)


def load_segmentation_text(data: bytes, stream: StreamRecord, lang_mode: LangMode = LangMode.space) -> Resegmentation:
    """Read one hypothesis segment per line, as written by external WER-based segmenters."""
    lines = _decode(data).splitlines()
    return _segmentation(stream, [tokenize(line, lang_mode) for line in lines])
