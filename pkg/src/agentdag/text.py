"""Token normalization and set similarity used by routing, coverage and fusion."""

from __future__ import annotations

import math
import re
from collections.abc import Iterable
from fractions import Fraction

_TOKEN_RE = re.compile(r"[a-z0-9]+")

STOPWORDS = frozenset(
    """a an and are as at be by for from in into is it its of on or that the
    then this to with using use each all any via per""".split()
)


def tokenize(text: str, *, drop_stopwords: bool = True) -> frozenset[str]:
    """Lowercase, strip punctuation and return the token *set* of ``text``."""
    tokens = _TOKEN_RE.findall(text.lower())
    if drop_stopwords:
        return frozenset(t for t in tokens if t not in STOPWORDS)
    return frozenset(tokens)


def normalize_tags(tags: Iterable[str]) -> frozenset[str]:
    out: set[str] = set()
    for tag in tags:
        out |= tokenize(tag, drop_stopwords=False)
    return frozenset(out)


def cosine_key(a: frozenset[str], b: frozenset[str]) -> Fraction:
    """Exact squared cosine of two sets, usable as a tie-exact sort key."""
    if not a or not b:
        return Fraction(0)
    inter = len(a & b)
    return Fraction(inter * inter, len(a) * len(b))


def set_cosine(a: frozenset[str], b: frozenset[str]) -> float:
    if not a or not b:
        return 0.0
    return len(a & b) / math.sqrt(len(a) * len(b))


def token_gaps(parent: str, children: Iterable[str]) -> list[str]:
    """Parent tokens (stopwords removed) that no child mentions, sorted."""
    covered: set[str] = set()
    for child in children:
        covered |= tokenize(child)
    return sorted(tokenize(parent) - covered)
