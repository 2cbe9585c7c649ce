"""Shared text normalization used for answer matching, labels, and metrics."""

import string

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize(text: str, lowercase: bool = True, strip_punct: bool = False) -> str:
    """Canonical answer form: optional lowercasing / punctuation removal,
    whitespace collapsed to single spaces, leading/trailing whitespace removed."""
    if lowercase:
        text = text.lower()
    if strip_punct:
        text = text.translate(_PUNCT_TABLE)
    return " ".join(text.split())
