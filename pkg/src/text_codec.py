"""
Text Codec - Word vocabulary and magnitude-token id space

This module turns feature names and value texts into token ids:
- A whitespace/punctuation word tokenizer (lowercased alphanumeric runs)
- A frequency vocabulary built once at pre-training time and then frozen
- A contiguous block of n_bin + 1 magnitude-token ids appended after the
  words; the last one is the reserved MISSING token

Id layout:
    0 PAD | 1 UNK | 2 CLS | 3 .. 3+W-1 words | magnitude_base .. +n_bin magnitude
"""

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Sequence

import numpy as np

from .errors import ConfigError, EmptyCorpus, OutOfRange
from .table_store import MISSING_TEXT, Dataset, FeatureKind

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
N_SPECIAL = 3

_WORD_RE = re.compile(r"[^\W_]+")


class TokenKind(str, Enum):
    WORD = "word"
    MAGNITUDE = "magnitude"
    CLS = "cls"


def tokenize(text: str) -> List[str]:
    """
    Split text into normalized words.

    Lowercases and splits on every non-alphanumeric character, so
    tokenize(" ".join(tokenize(t))) == tokenize(t).

    Examples:
        >>> tokenize("Blood Pressure")
        ['blood', 'pressure']
        >>> tokenize("123.8")
        ['123', '8']
    """
    if not text:
        return []
    return _WORD_RE.findall(text.lower())


def normalize(word: str) -> str:
    """Normalized form of a single word (idempotent)."""
    return "".join(tokenize(word))


def format_number(x: float) -> str:
    """
    Shortest round-trip decimal of x with at most 6 significant digits.

    Positional notation only, trailing zeros and dot trimmed, so the text is
    identical on every platform.

    Examples:
        >>> format_number(123.8)
        '123.8'
        >>> format_number(5.0)
        '5'
    """
    return np.format_float_positional(float(x), precision=6, unique=True,
                                      fractional=False, trim='-')


@dataclass(frozen=True)
class TokenSequence:
    ids: List[int]
    kinds: List[TokenKind] = field(default_factory=list)

    def __post_init__(self):
        if not self.ids:
            raise ConfigError("TokenSequence must hold at least one token")
        if len(self.ids) != len(self.kinds):
            raise ConfigError("ids and kinds must have equal length")

    def __len__(self) -> int:
        return len(self.ids)


class Vocabulary:
    """
    Frozen word vocabulary plus the magnitude-token block.

    Examples:
        >>> v = Vocabulary(["blood", "pressure"], n_bin=4)
        >>> v.magnitude_base, v.vocab_size
        (5, 10)
    """

    def __init__(self, words: Sequence[str], n_bin: int):
        self.words = list(words)
        self.n_bin = int(n_bin)
        self.word_to_id: Dict[str, int] = {w: N_SPECIAL + i for i, w in enumerate(self.words)}
        if len(self.word_to_id) != len(self.words):
            raise ConfigError("Vocabulary words must be unique")

    @property
    def n_word_ids(self) -> int:
        """Number of ids backed by the word table (specials included)."""
        return N_SPECIAL + len(self.words)

    @property
    def magnitude_base(self) -> int:
        return self.n_word_ids

    @property
    def missing_id(self) -> int:
        return self.magnitude_base + self.n_bin

    @property
    def vocab_size(self) -> int:
        return self.magnitude_base + self.n_bin + 1

    def word_id(self, word: str) -> int:
        return self.word_to_id.get(normalize(word), UNK_ID)

    def is_magnitude(self, token_id: int) -> bool:
        return self.magnitude_base <= token_id < self.vocab_size

    def to_json(self) -> Dict:
        return {"words": list(self.words), "n_bin": self.n_bin}

    def dumps(self) -> str:
        """Canonical serialized form (byte-identical for equal vocabularies)."""
        return json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, data: Dict) -> "Vocabulary":
        return cls(words=data["words"], n_bin=data["n_bin"])

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.words == other.words and self.n_bin == other.n_bin

    def __repr__(self):
        return f"Vocabulary(words={len(self.words)}, n_bin={self.n_bin}, size={self.vocab_size})"


def build_vocab(corpus: Iterable[str], max_words: int, n_bin: int) -> Vocabulary:
    """
    Build a frequency vocabulary.

    Args:
        corpus: Texts (feature names, category texts, string values)
        max_words: Keep this many most frequent words; ties by lexicographic order
        n_bin: Number of magnitude tokens appended after the words

    Returns:
        Vocabulary with n_bin + 1 magnitude ids (the last is MISSING)

    Raises:
        EmptyCorpus: If the corpus holds no text
    """
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpus("Cannot build a vocabulary from an empty corpus")
    counts = Counter(word for text in corpus for word in tokenize(text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([w for w, _ in ranked[:max_words]], n_bin=n_bin)


def encode_text(v: Vocabulary, text: str) -> TokenSequence:
    """
    Encode text as word ids; OOV words map to UNK, empty text to [UNK].

    Examples:
        >>> v = build_vocab(["Blood Pressure"], 10, n_bin=4)
        >>> encode_text(v, "blood pressure").ids
        [3, 4]
    """
    words = tokenize(text)
    if not words:
        return TokenSequence([UNK_ID], [TokenKind.WORD])
    ids = [v.word_to_id.get(w, UNK_ID) for w in words]
    return TokenSequence(ids, [TokenKind.WORD] * len(ids))


def magnitude_token_id(v: Vocabulary, k: int) -> int:
    """
    Shared magnitude-token id of bin k (k == n_bin is MISSING).

    Raises:
        OutOfRange: If k is outside [0, n_bin]
    """
    if not (0 <= k <= v.n_bin):
        raise OutOfRange(f"Bin index {k} outside [0, {v.n_bin}]")
    return v.magnitude_base + k


def table_corpus(ds: Dataset, include_numbers: bool = False) -> List[str]:
    """
    Texts of one table that feed the vocabulary.

    Feature names and every distinct categorical / string value are always
    included, plus the missing-value text. With include_numbers, observed
    numerical cells are added in their formatted form (for value2str).
    """
    texts = [MISSING_TEXT, *ds.schema.feature_names]
    for col in ds.schema.columns:
        cells = ds.frame[col.name]
        if col.kind != FeatureKind.NUMERICAL:
            texts.extend(sorted(set(cells.astype(str))))
        elif include_numbers:
            values = cells.to_numpy(dtype=np.float64)
            texts.extend(format_number(x) for x in values[~np.isnan(values)])
    return texts
