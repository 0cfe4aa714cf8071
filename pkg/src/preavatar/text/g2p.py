"""Lexicon lookup with letter-to-sound fallback, producing IPA symbol sequences."""

from __future__ import annotations

import string
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

DEFAULT_ALPHABET = frozenset(string.ascii_lowercase + "'")
_APOSTROPHES = {"’": "'", "‘": "'", "ʼ": "'"}


class G2PError(ValueError):
    pass


@dataclass(frozen=True)
class PhonemeSequence:
    symbols: tuple[str, ...]
    word_index: tuple[int, ...] | None = None
    confidence: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        n = len(self.symbols)
        if self.word_index is not None:
            wi = tuple(int(i) for i in self.word_index)
            if len(wi) != n:
                raise ValueError("word_index length differs from symbols")
            if any(b < a for a, b in zip(wi, wi[1:])):
                raise ValueError("word indices must be non-decreasing")
            object.__setattr__(self, "word_index", wi)
        if self.confidence is not None:
            conf = tuple(float(c) for c in self.confidence)
            if len(conf) != n:
                raise ValueError("confidence length differs from symbols")
            if any(not 0.0 <= c <= 1.0 for c in conf):
                raise ValueError("confidences must lie in [0, 1]")
            object.__setattr__(self, "confidence", conf)

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self) -> Iterator[str]:
        return iter(self.symbols)

    def __getitem__(self, i):
        return self.symbols[i]

    def check_inventory(self, inventory: Iterable[str]) -> None:
        inv = set(inventory)
        for pos, sym in enumerate(self.symbols):
            if sym not in inv:
                raise G2PError(f"symbol {sym!r} at position {pos} is not in the inventory")

    def to_text(self) -> str:
        return " ".join(self.symbols)


def _read_table(path: Path | str, *, allow_empty: bool) -> dict[str, tuple[str, ...]]:
    table: dict[str, tuple[str, ...]] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition("\t")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected '<key><TAB><ipa>'")
        symbols = tuple(value.split())
        if not symbols and not allow_empty:
            raise ValueError(f"{path}:{lineno}: empty pronunciation for {key!r}")
        table[key.strip().lower()] = symbols
    return table


@dataclass(frozen=True)
class Lexicon:
    entries: dict[str, tuple[str, ...]]
    rules: dict[str, tuple[str, ...]]
    language: str = "en"
    alphabet: frozenset[str] = DEFAULT_ALPHABET
    inventory: frozenset[str] = field(init=False)

    def __post_init__(self):
        missing = sorted(ch for ch in self.alphabet if ch not in self.rules)
        if missing:
            raise G2PError(f"letter-to-sound rules do not cover letters {missing}")
        inv = {s for pron in self.entries.values() for s in pron}
        inv.update(s for pron in self.rules.values() for s in pron)
        object.__setattr__(self, "inventory", frozenset(inv))
        object.__setattr__(self, "_max_grapheme", max(len(g) for g in self.rules))

    @classmethod
    def load(
        cls,
        lexicon_path: Path | str,
        rules_path: Path | str,
        language: str = "en",
        alphabet: Iterable[str] = DEFAULT_ALPHABET,
    ) -> "Lexicon":
        return cls(
            _read_table(lexicon_path, allow_empty=False),
            _read_table(rules_path, allow_empty=True),
            language,
            frozenset(alphabet),
        )

    @classmethod
    def default(cls) -> "Lexicon":
        data = resources.files("preavatar.text") / "data"
        with resources.as_file(data / "en_lexicon.tsv") as lex, resources.as_file(
            data / "en_rules.tsv"
        ) as rules:
            return cls.load(lex, rules, "en")

    def letter_to_sound(self, word: str) -> tuple[str, ...]:
        """Greedy longest-grapheme match over the rule table."""
        out: list[str] = []
        i = 0
        while i < len(word):
            for size in range(min(self._max_grapheme, len(word) - i), 0, -1):
                chunk = word[i : i + size]
                if chunk in self.rules:
                    out.extend(self.rules[chunk])
                    i += size
                    break
            else:  # pragma: no cover - guarded by alphabet coverage
                raise G2PError(f"no rule for {word[i]!r} in {word!r}")
        return tuple(out)

    def pronounce(self, word: str) -> tuple[str, ...]:
        return self.entries.get(word) or self.letter_to_sound(word)


def tokenize(text: str, alphabet: frozenset[str] = DEFAULT_ALPHABET) -> list[str]:
    """Lowercase and split on whitespace/punctuation.

    Any character that is neither in ``alphabet``, whitespace, nor punctuation
    raises :class:`G2PError` naming the character and its position.
    """
    words: list[str] = []
    current: list[str] = []
    for pos, ch in enumerate(text):
        low = _APOSTROPHES.get(ch, ch).lower()
        if low in alphabet:
            current.append(low)
            continue
        if ch.isspace() or unicodedata.category(ch).startswith("P") or ch in string.punctuation:
            if current:
                words.append("".join(current))
                current = []
            continue
        raise G2PError(f"unsupported character {ch!r} at position {pos}")
    if current:
        words.append("".join(current))
    # quoting apostrophes are boundaries, internal ones (let's) are letters
    words = [w.strip("'") for w in words]
    return [w for w in words if w]


def grapheme_to_phoneme(text: str, lexicon: Lexicon) -> PhonemeSequence:
    words = tokenize(text, lexicon.alphabet)
    if not words:
        raise G2PError("text is empty after normalization")
    symbols: list[str] = []
    word_index: list[int] = []
    for wi, word in enumerate(words):
        pron = lexicon.pronounce(word)
        symbols.extend(pron)
        word_index.extend([wi] * len(pron))
    return PhonemeSequence(tuple(symbols), tuple(word_index))


def parse_phoneme_line(line: str) -> PhonemeSequence:
    """Parse ``sym/conf sym/conf ...``; a token without ``/`` has confidence 1."""
    symbols: list[str] = []
    conf: list[float] = []
    for token in line.split():
        sym, sep, c = token.rpartition("/")
        if not sep:
            sym, c = token, "1.0"
        if not sym:
            raise ValueError(f"malformed token {token!r}")
        symbols.append(sym)
        conf.append(float(c))
    return PhonemeSequence(tuple(symbols), confidence=tuple(conf))


def format_phoneme_line(seq: PhonemeSequence | Sequence[str]) -> str:
    if isinstance(seq, PhonemeSequence) and seq.confidence is not None:
        return " ".join(f"{s}/{c:g}" for s, c in zip(seq.symbols, seq.confidence))
    return " ".join(seq)
