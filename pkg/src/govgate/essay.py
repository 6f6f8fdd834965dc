"""Deterministic text heuristics backing the essay predicate fields.

Semantic rules (plagiarism, structure, argument diversity, evidence) are
approximated by explainable surface features.  Each feature is exposed as
a predicate field so rule packs can state thresholds declaratively.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable, Sequence

OPENING_MARKERS = (
    "this essay",
    "in this essay",
    "this paper",
    "this piece",
    "i will argue",
    "we will examine",
    "we examine",
    "the question of",
    "introduction",
)
CLOSING_MARKERS = ("in conclusion", "to conclude", "in summary", "to sum up", "overall", "ultimately")
CONTRAST_MARKERS = (
    "however",
    "on the other hand",
    "conversely",
    "in contrast",
    "nevertheless",
    "critics argue",
    "opponents argue",
    "that said",
)
CLAIM_MARKERS = (
    "clearly",
    "undeniably",
    "obviously",
    "certainly",
    "it is certain",
    "everyone knows",
    "without doubt",
    "without a doubt",
    "proves that",
    "it is a fact that",
    "no one can deny",
)
EVIDENCE_MARKERS = (
    "according to",
    "data",
    "study",
    "studies",
    "survey",
    "research",
    "evidence",
    "for example",
    "for instance",
    "report",
    "percent",
)

NGRAM = 8
_WORD = re.compile(r"[a-z0-9']+")
_PARA_SPLIT = re.compile(r"\n\s*\n")
_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_DIGIT = re.compile(r"\d")


def _marker_regex(markers: Iterable[str]) -> re.Pattern:
    alts = sorted((re.escape(m) for m in markers), key=len, reverse=True)
    return re.compile(r"\b(?:" + "|".join(alts) + r")\b", re.IGNORECASE)


def words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def ngrams(tokens: Sequence[str], n: int = NGRAM) -> set[tuple[str, ...]]:
    return {tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}


def paragraphs(text: str) -> list[str]:
    return [p for p in _PARA_SPLIT.split(text.strip()) if p.strip()]


def load_reference_corpus() -> list[str]:
    data = resources.files("govgate.data").joinpath("corpus/reference.json").read_text(encoding="utf-8")
    return [doc["text"] for doc in json.loads(data)]


@dataclass
class EssayAnalyzer:
    """Holds marker lists and the plagiarism reference corpus."""

    reference_corpus: Sequence[str] = ()
    opening_markers: Sequence[str] = OPENING_MARKERS
    closing_markers: Sequence[str] = CLOSING_MARKERS
    contrast_markers: Sequence[str] = CONTRAST_MARKERS
    claim_markers: Sequence[str] = CLAIM_MARKERS
    evidence_markers: Sequence[str] = EVIDENCE_MARKERS
    _ref_grams: list[set] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._ref_grams = [ngrams(words(doc)) for doc in self.reference_corpus]
        self._opening = _marker_regex(self.opening_markers)
        self._closing = _marker_regex(self.closing_markers)
        self._contrast = _marker_regex(self.contrast_markers)
        self._claim = _marker_regex(self.claim_markers)
        self._evidence = _marker_regex(self.evidence_markers)

    @classmethod
    def default(cls) -> "EssayAnalyzer":
        global _DEFAULT
        if _DEFAULT is None:
            _DEFAULT = cls(reference_corpus=tuple(load_reference_corpus()))
        return _DEFAULT

    def features(self, text: str) -> "TextFeatures":
        return TextFeatures(self, text)


_DEFAULT: EssayAnalyzer | None = None


class TextFeatures:
    """Lazily computed features of one text."""

    def __init__(self, analyzer: EssayAnalyzer, text: str) -> None:
        self.analyzer = analyzer
        self.text = text

    @cached_property
    def tokens(self) -> list[str]:
        return words(self.text)

    @cached_property
    def paragraphs(self) -> list[str]:
        return paragraphs(self.text)

    @property
    def word_count(self) -> int:
        return len(self.tokens)

    @property
    def paragraph_count(self) -> int:
        return len(self.paragraphs)

    @property
    def has_opening_marker(self) -> bool:
        return bool(self.paragraphs) and bool(self.analyzer._opening.search(self.paragraphs[0]))

    @property
    def has_closing_marker(self) -> bool:
        return bool(self.paragraphs) and bool(self.analyzer._closing.search(self.paragraphs[-1]))

    @property
    def contrast_marker_count(self) -> int:
        return len(self.analyzer._contrast.findall(self.text))

    @cached_property
    def ngram_overlap(self) -> float:
        grams = ngrams(self.tokens)
        if not grams:
            return 0.0
        return max((len(grams & ref) / len(grams) for ref in self.analyzer._ref_grams), default=0.0)

    @cached_property
    def unsupported_claim_count(self) -> int:
        count = 0
        for sentence in _SENTENCE_SPLIT.split(self.text):
            if self.analyzer._claim.search(sentence):
                if not (self.analyzer._evidence.search(sentence) or _DIGIT.search(sentence)):
                    count += 1
        return count

    def get(self, name: str):
        return getattr(self, name)
