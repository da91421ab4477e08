"""Genre tag normalization.

Turns raw tag text into token lists and a canonical key. Besides the basic
lowercase/connective/separator handling, words written together
("poprock") are split with a trie seeded from the tag systems, with a
Zipf-frequency segmenter as fallback.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "DegenerateTagError",
    "NormalizedForm",
    "Trie",
    "WordFrequencyTable",
    "SplitThresholds",
    "SplitAssessment",
    "Normalizer",
    "basic_normalize",
    "basic_tokenize",
    "canonical_key",
    "trie_tokenize",
    "zipf_tokenize",
    "assess_split",
    "build_trie",
    "normalize_tag",
]

DIRECT_INSERT_MAX_LEN = 7

_APOSTROPHES = str.maketrans({"’": "'", "‘": "'", "`": "'"})
# "'n'" must be tried before "n'"; the bare "n'" only counts at a word start
_CONNECTIVE = re.compile(r"\s*(?:&|\+|'n'|(?<![^\W_])n')\s*")
_WORD = re.compile(r"[^\W_]+")


class DegenerateTagError(ValueError):
    """Raised when a tag has no usable content left after normalization."""


def basic_normalize(tag: str) -> str:
    """Lowercase ``tag`` and rewrite connectives ("&", "+", "'n'", "n'") to "and".

    >>> basic_normalize("Drum'n'Bass")
    'drum and bass'
    """
    text = tag.strip().lower().translate(_APOSTROPHES)
    text = _CONNECTIVE.sub(" and ", text)
    text = " ".join(text.split())
    if not text:
        raise DegenerateTagError(f"empty tag after normalization: {tag!r}")
    return text


def basic_tokenize(text: str) -> list[str]:
    """Split on every non-alphanumeric character."""
    tokens = _WORD.findall(text)
    if not tokens:
        raise DegenerateTagError(f"no alphanumeric token in {text!r}")
    return tokens


def canonical_key(tokens: Iterable[str]) -> str:
    return " ".join(sorted(tokens))


@dataclass(frozen=True)
class NormalizedForm:
    """Tokens of a tag in original order plus the permutation-invariant key.

    ``stages`` records, per basic token, which splitter produced the words
    ("trie", "zipf" or "unsplit").
    """

    tokens: tuple[str, ...]
    canonical_key: str
    stages: tuple[str, ...] = ()

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], stages: Sequence[str] = ()) -> "NormalizedForm":
        if not tokens or any(not t for t in tokens):
            raise DegenerateTagError("normalized form needs non-empty tokens")
        return cls(tuple(tokens), canonical_key(tokens), tuple(stages))

    @property
    def words(self) -> frozenset[str]:
        return frozenset(self.tokens)


# ---------------------------------------------------------------------------
# Trie
# ---------------------------------------------------------------------------


class _Node:
    __slots__ = ("char", "children", "is_word")

    def __init__(self, char: str):
        self.char = char
        self.children: dict[str, _Node] = {}
        self.is_word = False


class Trie:
    """Character trie with an insertion log.

    ``log`` keeps build events as ``(action, token, words)`` tuples, where
    action is one of "insert", "direct" (short pivot token) or "split"
    (token covered by known words, nothing inserted).
    """

    def __init__(self, words: Iterable[str] = ()):
        self._root = _Node("")
        self._size = 0
        self.log: list[tuple[str, str, tuple[str, ...]]] = []
        for w in words:
            self.insert(w)

    def insert(self, word: str, action: str = "insert") -> bool:
        """Add ``word``; returns False if it was already present."""
        if not word:
            raise ValueError("cannot insert an empty word")
        node = self._root
        for ch in word:
            node = node.children.setdefault(ch, _Node(ch))
        if node.is_word:
            return False
        node.is_word = True
        self._size += 1
        self.log.append((action, word, (word,)))
        return True

    def __contains__(self, word: object) -> bool:
        if not isinstance(word, str):
            return False
        node = self._root
        for ch in word:
            node = node.children.get(ch)
            if node is None:
                return False
        return node.is_word

    def __len__(self) -> int:
        return self._size

    def __iter__(self):
        stack = [(self._root, "")]
        while stack:
            node, prefix = stack.pop()
            if node.is_word:
                yield prefix
            for ch in sorted(node.children, reverse=True):
                stack.append((node.children[ch], prefix + ch))

    def prefix_words(self, text: str, start: int = 0) -> list[int]:
        """End offsets of every trie word that starts at ``text[start]``, longest first."""
        ends = []
        node = self._root
        for i in range(start, len(text)):
            node = node.children.get(text[i])
            if node is None:
                break
            if node.is_word:
                ends.append(i + 1)
        ends.reverse()
        return ends

    def tokenize(self, token: str) -> list[str] | None:
        return trie_tokenize(self, token)


def trie_tokenize(trie: Trie, token: str) -> list[str] | None:
    """Cover ``token`` with trie words, longest match first.

    When the remainder after a match cannot be covered, the next shorter
    word matched at the same position is tried. Returns None if no cover
    exists.
    """
    if not token:
        return None
    dead: set[int] = set()

    def cover(start: int) -> list[str] | None:
        if start == len(token):
            return []
        if start in dead:
            return None
        for end in trie.prefix_words(token, start):
            rest = cover(end)
            if rest is not None:
                return [token[start:end], *rest]
        dead.add(start)
        return None

    return cover(0)


# ---------------------------------------------------------------------------
# Zipf segmenter
# ---------------------------------------------------------------------------


class WordFrequencyTable:
    """Word ranks with the Zipf frequency estimate ``1 / (rank * ln N)``."""

    def __init__(self, ranks: dict[str, int], total: int | None = None):
        if any(r < 1 for r in ranks.values()):
            raise ValueError("ranks must be positive")
        self.ranks = dict(ranks)
        self.rank_max = max(self.ranks.values(), default=1)
        self.total = total if total is not None else max(len(self.ranks), 2)
        if self.total <= 1:
            raise ValueError("total unigram count must exceed 1")
        self._log_log_n = math.log(math.log(self.total))

    @classmethod
    def from_file(cls, path: str | Path) -> "WordFrequencyTable":
        """Read a unigram list, one word per line by descending frequency."""
        ranks: dict[str, int] = {}
        n = 0
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                word = line.strip()
                if not word:
                    continue
                n += 1
                ranks.setdefault(word.lower(), n)
        return cls(ranks, total=max(n, 2))

    @classmethod
    def from_words(cls, words: Sequence[str], total: int | None = None) -> "WordFrequencyTable":
        ranks: dict[str, int] = {}
        for i, w in enumerate(words, 1):
            ranks.setdefault(w, i)
        return cls(ranks, total if total is not None else max(len(words), 2))

    def __contains__(self, word: object) -> bool:
        return word in self.ranks

    def frequency(self, word: str) -> float:
        return math.exp(self.log_frequency(word))

    def log_frequency(self, word: str) -> float:
        rank = self.ranks.get(word)
        if rank is not None:
            return -math.log(rank) - self._log_log_n
        # out-of-vocabulary: below every known word, shrinking with length
        return -math.log(self.total + self.rank_max) - self._log_log_n - len(word) * math.log(10)


def zipf_tokenize(table: WordFrequencyTable, token: str) -> list[str]:
    """Segmentation of ``token`` maximizing the product of word frequencies.

    Ties go to fewer words, then to the longer leading word.
    """
    n = len(token)
    if n == 0:
        return []
    # best[i] = (log prob, word count, words) for token[i:]
    best: list[tuple[float, int, list[str]] | None] = [None] * (n + 1)
    best[n] = (0.0, 0, [])
    for i in range(n - 1, -1, -1):
        choice = None
        for j in range(n, i, -1):
            lp_rest, k_rest, w_rest = best[j]
            lp = table.log_frequency(token[i:j]) + lp_rest
            cand = (lp, k_rest + 1, [token[i:j], *w_rest])
            if choice is None or _zipf_better(cand, choice):
                choice = cand
        best[i] = choice
    return best[0][2]


def _zipf_better(a, b) -> bool:
    tol = 1e-12 * max(1.0, abs(a[0]), abs(b[0]))
    if a[0] > b[0] + tol:
        return True
    if a[0] < b[0] - tol:
        return False
    # longer-first is already guaranteed by the j loop order on equal counts
    return a[1] < b[1]


# ---------------------------------------------------------------------------
# Split assessment
# ---------------------------------------------------------------------------

REASONS = (
    "too-many-short-words",
    "short-suffix",
    "unsplit-large-tag",
    "single-letter-middle-word",
    "no-word-in-trie",
)


@dataclass(frozen=True)
class SplitThresholds:
    short_word_max_len: int = 2
    short_word_fraction: float = 0.5
    short_suffix_max_len: int = 2
    short_suffix_min_input: int = 4
    large_tag_min_len: int = 10

    @classmethod
    def from_file(cls, path: str | Path) -> "SplitThresholds":
        """Parse ``key=value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                key = key.strip()
                if not sep or key not in types:
                    raise ValueError(f"{path}:{lineno}: bad threshold line {line!r}")
                values[key] = float(value) if types[key] in (float, "float") else int(value)
        return cls(**values)


@dataclass(frozen=True)
class SplitAssessment:
    accepted: bool
    reasons: tuple[str, ...] = field(default=())

    @property
    def verdict(self) -> str:
        return "accepted" if self.accepted else "rejected"


def assess_split(
    words: Sequence[str],
    original: str,
    stage: str = "trie",
    trie: Trie | None = None,
    thresholds: SplitThresholds | None = None,
) -> SplitAssessment:
    """Decide whether a split of ``original`` into ``words`` looks right."""
    th = thresholds or SplitThresholds()
    reasons = []
    if len(words) > 1:
        short = sum(len(w) <= th.short_word_max_len for w in words)
        if short > th.short_word_fraction * len(words):
            reasons.append("too-many-short-words")
        if len(words[-1]) <= th.short_suffix_max_len and len(original) > th.short_suffix_min_input:
            reasons.append("short-suffix")
    elif len(words) == 1:
        w = words[0]
        if len(w) >= th.large_tag_min_len and (trie is None or w not in trie):
            reasons.append("unsplit-large-tag")
    if stage == "zipf":
        if any(len(w) == 1 for w in words[1:-1]):
            reasons.append("single-letter-middle-word")
        if trie is None or not any(w in trie for w in words):
            reasons.append("no-word-in-trie")
    elif stage != "trie":
        raise ValueError(f"unknown stage {stage!r}")
    return SplitAssessment(not reasons, tuple(reasons))


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def split_token(
    token: str,
    trie: Trie | None,
    table: WordFrequencyTable | None,
    thresholds: SplitThresholds | None = None,
) -> tuple[list[str], str]:
    """Advanced split of one basic token: trie, then Zipf, then as-is."""
    if trie is not None:
        words = trie_tokenize(trie, token)
        if words is not None and assess_split(words, token, "trie", trie, thresholds).accepted:
            return words, "trie"
    if table is not None:
        words = zipf_tokenize(table, token)
        if assess_split(words, token, "zipf", trie, thresholds).accepted:
            return words, "zipf"
    return [token], "unsplit"


def basic_tokens(tag: str) -> list[str]:
    return basic_tokenize(basic_normalize(tag))


def build_trie(
    tokens: Iterable[str],
    pivot_tokens: Iterable[str] = (),
    min_split_len: int = DIRECT_INSERT_MAX_LEN,
    table: WordFrequencyTable | None = None,
    thresholds: SplitThresholds | None = None,
) -> Trie:
    """Populate a trie from basic tokens of the tag systems.

    Pivot tokens shorter than ``min_split_len`` go in directly. All other
    tokens, shortest first, are split against the trie built so far and only
    words it does not already know are inserted.
    """
    pivot = set(pivot_tokens)
    trie = Trie()
    direct = sorted((t for t in pivot if len(t) < min_split_len), key=lambda t: (len(t), t))
    for tok in direct:
        trie.insert(tok, action="direct")
    rest = (set(tokens) | pivot).difference(direct)
    for tok in sorted(rest, key=lambda t: (len(t), t)):
        words, _ = split_token(tok, trie, table, thresholds)
        new = [w for w in words if w not in trie]
        if not new:
            trie.log.append(("split", tok, tuple(words)))
        for w in new:
            trie.insert(w)
    return trie


def normalize_tag(
    tag: str,
    trie: Trie | None = None,
    table: WordFrequencyTable | None = None,
    thresholds: SplitThresholds | None = None,
) -> NormalizedForm:
    """Full pipeline: basic normalization and tokenization, then advanced splits.

    >>> normalize_tag("Rock/Pop").canonical_key
    'pop rock'
    """
    out: list[str] = []
    stages: list[str] = []
    for tok in basic_tokens(tag):
        words, stage = split_token(tok, trie, table, thresholds)
        out.extend(words)
        stages.append(stage)
    return NormalizedForm.from_tokens(out, stages)


class Normalizer:
    """Bundles a trie, a frequency table and thresholds, with a memo cache."""

    def __init__(
        self,
        trie: Trie | None = None,
        table: WordFrequencyTable | None = None,
        thresholds: SplitThresholds | None = None,
    ):
        self.trie = trie if trie is not None else Trie()
        self.table = table
        self.thresholds = thresholds or SplitThresholds()
        self._cache: dict[str, NormalizedForm] = {}

    @classmethod
    def from_tags(
        cls,
        tags: Iterable[str],
        pivot_tags: Iterable[str] = (),
        table: WordFrequencyTable | None = None,
        thresholds: SplitThresholds | None = None,
        min_split_len: int = DIRECT_INSERT_MAX_LEN,
    ) -> "Normalizer":
        """Build the trie from raw tags; unusable tags are skipped."""
        toks = _safe_tokens(tags)
        pivot = _safe_tokens(pivot_tags)
        trie = build_trie(toks, pivot, min_split_len, table, thresholds)
        return cls(trie, table, thresholds)

    def __call__(self, tag: str) -> NormalizedForm:
        form = self._cache.get(tag)
        if form is None:
            form = normalize_tag(tag, self.trie, self.table, self.thresholds)
            self._cache[tag] = form
        return form

    normalize = __call__

    def key(self, tag: str) -> str:
        return self(tag).canonical_key


def _safe_tokens(tags: Iterable[str]) -> list[str]:
    out = []
    for tag in tags:
        try:
            out.extend(basic_tokens(tag))
        except DegenerateTagError:
            continue
    return out
