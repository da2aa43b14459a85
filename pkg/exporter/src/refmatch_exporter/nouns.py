"""Key-noun extraction from referring expressions.

Prefers a spaCy dependency parse when a model is importable; otherwise
falls back to a small head-noun heuristic: truncate at the first
preposition / clause marker, drop determiners and qualifiers, keep the
last remaining token, lightly singularized. Good enough for short
referring phrases like "the red square on the left".
"""

from __future__ import annotations

import re

_BOUNDARY = {
    "on", "in", "at", "near", "beside", "above", "below", "under", "over",
    "behind", "between", "next", "with", "without", "of", "by", "to", "from",
    "that", "which", "who", "closest", "nearest",
}
_SKIP = {
    "the", "a", "an", "this", "that", "these", "those", "its", "his", "her",
    "their", "my", "your", "our", "very", "really", "quite",
}


def _singular(word: str) -> str:
    if len(word) > 3 and word.endswith("s") and not word.endswith("ss"):
        return word[:-1]
    return word


def _heuristic_noun(text: str) -> str:
    words = re.findall(r"[a-z]+", text.lower())
    prefix = []
    for word in words:
        if word in _BOUNDARY and prefix:
            break
        prefix.append(word)
    content = [w for w in prefix if w not in _SKIP and w not in _BOUNDARY]
    if not content:
        content = [w for w in words if w not in _SKIP] or words
    return _singular(content[-1])


_NLP = None
_NLP_TRIED = False


def _spacy_noun(text: str) -> str | None:
    global _NLP, _NLP_TRIED
    if not _NLP_TRIED:
        _NLP_TRIED = True
        try:
            import spacy

            _NLP = spacy.load("en_core_web_sm")
        except Exception:
            _NLP = None
    if _NLP is None:
        return None
    doc = _NLP(text)
    for chunk in doc.noun_chunks:
        return _singular(chunk.root.text.lower())
    return None


def extract_noun(text: str) -> str:
    """Key noun phrase head of a referring expression."""
    if not text.strip():
        raise ValueError("cannot extract a noun from empty text")
    parsed = _spacy_noun(text)
    return parsed if parsed is not None else _heuristic_noun(text)
