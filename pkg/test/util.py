import math
import random
from itertools import combinations

from latency.data import SegmentHypothesis, SegmentReference, StreamRecord, TokenEvent
from latency.softsegmenter import pair_score


def segment(delays, source, tokens=None, index=None):
    tokens = tokens or [f"t{i}" for i in range(len(delays))]
    return SegmentHypothesis(
        tuple(TokenEvent(token, float(delay)) for token, delay in zip(tokens, delays, strict=True)),
        float(source),
        " ".join(tokens),
        index,
    )


def reference(text, start=0.0, duration=None):
    return SegmentReference(tuple(text.split()), text, float(start), None if duration is None else float(duration))


def stream(references, tokens, delays, duration):
    """A stream whose references are ``(text, start, duration)`` triples."""
    return StreamRecord(
        tuple(reference(text, start, length) for text, start, length in references),
        segment(delays, duration, tokens),
    )


def random_delays(rng: random.Random, n: int, source: float, tail: bool = True) -> list[float]:
    high = source * 1.5 if tail else source - 1
    return sorted(float(rng.randint(0, int(high))) for _ in range(n))


# Naive transcriptions of the metric definitions, one loop per formula.


def naive_tau(delays, source):
    for i in range(1, len(delays) + 1):
        if delays[i - 1] >= source:
            return i
    return len(delays)


def naive_ap(delays, source):
    return sum(min(d, source) for d in delays) / (source * len(delays))


def naive_lagging(delays, source, n_terms, rate_tokens):
    ideal = [(i - 1) * source / rate_tokens for i in range(1, n_terms + 1)]
    return sum(delays[i - 1] - ideal[i - 1] for i in range(1, n_terms + 1)) / n_terms


def naive_al(delays, source, ref_len):
    return naive_lagging(delays, source, naive_tau(delays, source), ref_len)


def naive_laal(delays, source, ref_len):
    return naive_lagging(delays, source, naive_tau(delays, source), max(len(delays), ref_len))


def naive_dal(delays, source):
    step = source / len(delays)
    adjusted = []
    for i, d in enumerate(delays):
        adjusted.append(d if i == 0 else max(d, adjusted[-1] + step))
    return sum(adjusted[i] - i * step for i in range(len(delays))) / len(delays)


def naive_yaal(delays, source, ref_len):
    online = [d for d in delays if d < source]
    if not online:
        return None
    return naive_lagging(delays, source, len(online), max(len(online), ref_len))


def naive_atd(delays, source):
    """Chunk-by-chunk simulation of the token delay definition with 300 ms source tokens."""
    ends = []
    k = 1
    while True:
        ends.append(min(300.0 * k, source))
        if ends[-1] >= source:
            break
        k += 1

    # Target chunks are runs of equal delays; the source chunk before target chunk c holds
    # the source tokens ending after the previous chunk's delay and no later than its own.
    target_chunks = []
    for t, d in enumerate(delays):
        if target_chunks and delays[target_chunks[-1][-1]] == d:
            target_chunks[-1].append(t)
        else:
            target_chunks.append([t])
    source_chunks = []
    previous = -math.inf
    for chunk in target_chunks:
        now = delays[chunk[0]]
        source_chunks.append([x for x, end in enumerate(ends) if previous < end <= now])
        previous = now

    def target_acc(c):
        return sum(len(chunk) for chunk in target_chunks[: c + 1])

    def source_acc(c):
        return sum(len(chunk) for chunk in source_chunks[: c + 1])

    total = 0.0
    for c, chunk in enumerate(target_chunks):
        for t in chunk:
            s = (t + 1) - max(0, target_acc(c - 1) - source_acc(c - 1)) if c > 0 else t + 1
            a = min(s, source_acc(c))
            total += delays[t] - (ends[a - 1] if a >= 1 else 0.0)
    return total / len(delays)


def exhaustive_alignment_score(references, hypothesis):
    """Best total pair score over every monotone set of matches."""
    ref = [(token, r.start_ms) for r in references for token in r.tokens]
    scores = {
        (i, j): pair_score(t_r, s_r, event.token, event.delay_ms)
        for i, (t_r, s_r) in enumerate(ref)
        for j, event in enumerate(hypothesis)
    }

    best = 0.0
    for k in range(1, min(len(ref), len(hypothesis)) + 1):
        for rs in combinations(range(len(ref)), k):
            for hs in combinations(range(len(hypothesis)), k):
                total = 0.0
                for i, j in zip(rs, hs, strict=True):
                    if scores[i, j] is None:
                        break
                    total += scores[i, j]
                else:
                    best = max(best, total)
    return best
