import unicodedata
from enum import Enum
from typing import NamedTuple


class LangMode(str, Enum):
    space = "space"
    char = "char"


class Token(NamedTuple):
    """A normalized token together with its original spelling.

    ``joined`` is true when the token followed the previous one without whitespace
    in the original text, e.g. the comma in "Hello, world".
    """

    norm: str
    surface: str
    joined: bool


def is_punctuation(token: str) -> bool:
    """True iff every character belongs to one of the Unicode punctuation categories (Pc, Pd, Ps, Pe, Pi, Pf, Po)."""
    return token != "" and all(unicodedata.category(char).startswith("P") for char in token)


def _fold(text: str) -> str:
    """Unicode simple case folding: every character maps to at most one character."""
    return "".join(_fold_char(char) for char in text)


def _fold_char(char: str) -> str:
    # str.casefold and str.lower apply the full mappings; keep only single-character results.
    for folded in (char.casefold(), char.lower()):
        if len(folded) == 1:
            return folded
    return char


def _split_word(word: str) -> list[tuple[str, bool]]:
    # Peel leading and trailing punctuation off a whitespace-delimited word, one character per token.
    start, end = 0, len(word)
    while start < end and is_punctuation(word[start]):
        start += 1
    while end > start and is_punctuation(word[end - 1]):
        end -= 1

    parts = [char for char in word[:start]]
    if start < end:
        parts.append(word[start:end])
    parts.extend(char for char in word[end:])

    return [(part, index > 0) for index, part in enumerate(parts)]


def split_tokens(text: str, mode: LangMode = LangMode.space) -> list[Token]:
    tokens: list[Token] = []

    if mode == LangMode.char:
        previous_space = True
        for char in text:
            if char.isspace():
                previous_space = True
                continue
            tokens.append(Token(_fold_char(char), char, not previous_space and len(tokens) > 0))
            previous_space = False
        return tokens

    for word in text.split():
        for surface, joined in _split_word(word):
            tokens.append(Token(_fold(surface), surface, joined))

    return tokens


def tokenize(text: str, mode: LangMode = LangMode.space) -> list[str]:
    """Case-fold and tokenize ``text``.

    Space mode splits on whitespace and detaches leading/trailing punctuation into
    single-character tokens. Char mode yields one token per non-whitespace character.
    """
    return [token.norm for token in split_tokens(text, mode)]


def detokenize(surfaces: list[str], joined: list[bool]) -> str:
    """Join surface tokens, restoring the original spacing recorded in ``joined``."""
    result = ""
    for index, (surface, glue) in enumerate(zip(surfaces, joined, strict=True)):
        if index > 0 and not glue:
            result += " "
        result += surface
    return result


def char_similarity(t_r: str, t_h: str) -> float:
    """Jaccard similarity of the character sets of two tokens.

    For single-character tokens this is an exact match.
    """
    chars_r, chars_h = set(t_r), set(t_h)
    union = chars_r | chars_h
    if not union:
        return 1.0
    return len(chars_r & chars_h) / len(union)
