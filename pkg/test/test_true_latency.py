import pytest

from latency.data import AlignmentTable, SourceWord
from latency.errors import UndefinedInputError, ValidationError
from latency.true_latency import (
    segment_true_latency,
    true_latency,
    true_latency_corpus,
    true_latency_gaps,
    true_latency_stream,
)
from test.util import segment, stream

WORDS = (SourceWord("guten", 0, 800), SourceWord("morgen", 800, 1200), SourceWord("alle", 1200, 2000))


def table(*links):
    return AlignmentTable(WORDS, tuple(links))


@pytest.mark.stats
def test_true_latency_gaps():
    assertions = {
        # The latest linked source word counts.
        ((2000,), ((0, 0), (0, 1))): [800.0],
        # Unaligned tokens are left out.
        ((1000, 1500), ((1, 1),)): [300.0],
        # A token emitted at the end of the source is a tail token.
        ((1000, 3000), ((0, 0), (1, 2))): [200.0],
        # Emitted before its source word ends.
        ((600,), ((0, 1),)): [-600.0],
        ((1000,), ()): [],
    }

    for assertion in assertions:
        delays, links = assertion
        assert true_latency_gaps(list(delays), table(*links), 3000) == assertions[assertion]


@pytest.mark.stats
def test_true_latency():
    assert true_latency(segment((2000, 2500), 3000), table((0, 1), (1, 2))).value == pytest.approx(650.0)
    assert not true_latency(segment((2000,), 3000), table()).defined
    assert segment_true_latency(segment((2000, 2500), 3000), table((0, 1), (1, 2))).gaps == (800.0, 500.0)

    # Tokens linked to source words that end exactly at their delay have no latency.
    exact = segment((800, 1200, 2000), 3000)
    assert true_latency(exact, table((0, 0), (1, 1), (2, 2))).value == 0.0


@pytest.mark.stats
def test_true_latency_ignores_tail_and_unaligned_tokens():
    base = true_latency(segment((900, 1300), 3000), table((0, 0), (1, 1)))
    extended = true_latency(segment((900, 1000, 1300, 3000, 3200), 3000), table((0, 0), (2, 1), (3, 2), (4, 2)))

    assert base == extended


@pytest.mark.stats
def test_true_latency_link_out_of_range():
    with pytest.raises(ValidationError):
        true_latency(segment((1000,), 3000), table((3, 0)))


@pytest.mark.stats
def test_true_latency_corpus():
    first = (segment((1600,), 3000), table((0, 1)))
    second = (segment((3200,), 3000), table((0, 2)))
    unaligned = (segment((2000,), 3000), table())
    later = (segment((2800,), 3000), table((0, 1)))

    assert true_latency_corpus([first, later]).value == pytest.approx(1000.0)
    corpus = true_latency_corpus([first, unaligned])
    assert corpus.value == pytest.approx(400.0)
    assert corpus.skipped == 1

    with pytest.raises(UndefinedInputError):
        true_latency_corpus([])
    with pytest.raises(UndefinedInputError):
        true_latency_corpus([second])


@pytest.mark.stats
def test_true_latency_stream():
    record = stream(
        [("hello world", 0, 1000), ("good night", 1000, 1500)],
        ["hello", "world", "good", "night"],
        [500, 900, 1600, 2500],
        2500,
    )
    first = AlignmentTable((SourceWord("hallo", 0, 400), SourceWord("welt", 400, 900)), ((0, 0), (1, 1)))
    second = AlignmentTable((SourceWord("gute", 1000, 1300), SourceWord("nacht", 1300, 2000)), ((0, 0), (1, 1)))

    results = true_latency_stream(record, [first, second])
    assert [r.gaps for r in results] == [(100.0, 0.0), (300.0,)]
    assert [r.value.value for r in results] == pytest.approx([50.0, 300.0])

    with pytest.raises(ValidationError):
        true_latency_stream(record, [first])
    with pytest.raises(ValidationError, match="Segment 1"):
        true_latency_stream(record, [first, AlignmentTable(second.source_words, ((4, 0),))])
