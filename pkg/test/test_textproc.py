import random

import pytest

from latency.textproc import LangMode, char_similarity, detokenize, is_punctuation, split_tokens, tokenize


@pytest.mark.io
def test_tokenize_space():
    assertions = {
        "Hello, world!": ["hello", ",", "world", "!"],
        "  Good   Night ": ["good", "night"],
        '"Quoted"': ['"', "quoted", '"'],
        "don't stop": ["don't", "stop"],
        "": [],
    }

    for assertion in assertions:
        assert tokenize(assertion, LangMode.space) == assertions[assertion]


@pytest.mark.io
def test_tokenize_char():
    assertions = {
        "你好，世界": ["你", "好", "，", "世", "界"],
        "こん にちは": ["こ", "ん", "に", "ち", "は"],
        "AB": ["a", "b"],
    }

    for assertion in assertions:
        assert tokenize(assertion, LangMode.char) == assertions[assertion]


@pytest.mark.io
def test_is_punctuation():
    assertions = {
        ",": True,
        "...": True,
        "«": True,
        "，": True,
        "a": False,
        "a.": False,
        "": False,
        "3": False,
        "。": True,
    }

    for assertion in assertions:
        assert is_punctuation(assertion) == assertions[assertion]


@pytest.mark.io
def test_char_similarity():
    assertions = {
        ("hello", "hello"): 1.0,
        ("abc", "xyz"): 0.0,
        ("ab", "bc"): 1 / 3,
        ("a", "a"): 1.0,
        ("a", "b"): 0.0,
        ("", ""): 1.0,
        ("abc", "abd"): 0.5,
    }

    for assertion in assertions:
        assert char_similarity(*assertion) == pytest.approx(assertions[assertion])


@pytest.mark.io
def test_detokenize_restores_spacing():
    assertions = {
        "Hello, world!": LangMode.space,
        '"Quoted" text.': LangMode.space,
        "你好，世界": LangMode.char,
        "Good Night": LangMode.char,
    }

    for assertion in assertions:
        tokens = split_tokens(assertion, assertions[assertion])
        assert detokenize([t.surface for t in tokens], [t.joined for t in tokens]) == assertion


@pytest.mark.io
def test_tokenize_folds_case_character_by_character():
    assertions = {
        "STRASSE Straße": ["strasse", "straße"],
        "ΣΟΦΟΣ ς": ["σοφοσ", "σ"],
        # The dotted capital I has no single-character lowercase and is kept.
        "İstanbul": ["İstanbul"],
    }

    for assertion in assertions:
        assert tokenize(assertion) == assertions[assertion]


ALPHABET = ["a", "B", "ß", "İ", "Σ", "ς", "7", ",", ".", "!", "'", "«", "你", "，", " ", " "]


@pytest.mark.io
def test_tokenize_is_stable_under_rejoining():
    rng = random.Random(13)

    for _ in range(1000):
        text = "".join(rng.choices(ALPHABET, k=rng.randint(0, 20)))
        for mode in LangMode:
            tokens = tokenize(text, mode)
            assert tokenize(" ".join(tokens), mode) == tokens, (text, mode)


@pytest.mark.io
def test_char_similarity_properties():
    rng = random.Random(14)
    letters = "abcde"

    for _ in range(2000):
        t_r = "".join(rng.choices(letters, k=rng.randint(0, 4)))
        t_h = "".join(rng.choices(letters, k=rng.randint(0, 4)))
        similarity = char_similarity(t_r, t_h)

        assert similarity == char_similarity(t_h, t_r)
        assert 0.0 <= similarity <= 1.0
        assert (similarity == 1.0) == (set(t_r) == set(t_h)), (t_r, t_h)
