"""State alphabet, lexicon and transcript construction.

State ids are dense: the three reserved states come first (``start=0``,
``end=1``, ``blank=2``) and phonemes follow in the order they were given.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

START, END, BLANK = 0, 1, 2
RESERVED = ("start", "end", "blank")


class InventoryError(ValueError):
    pass


class OOVError(KeyError):
    """Raised for words missing from the lexicon."""

    def __init__(self, word: str):
        super().__init__(word)
        self.word = word

    def __str__(self) -> str:
        return f"out-of-vocabulary word: {self.word!r}"


@dataclass(frozen=True)
class StateInventory:
    names: tuple[str, ...]

    def __post_init__(self):
        if tuple(self.names[:3]) != RESERVED:
            raise InventoryError("reserved states must come first")
        if len(self.names) < 4:
            raise InventoryError("inventory needs at least one phoneme")
        if len(set(self.names)) != len(self.names):
            raise InventoryError("state names must be unique")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})

    @property
    def L(self) -> int:
        return len(self.names)

    @property
    def start(self) -> int:
        return START

    @property
    def end(self) -> int:
        return END

    @property
    def blank(self) -> int:
        return BLANK

    @property
    def phonemes(self) -> range:
        return range(3, self.L)

    def id(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise InventoryError(f"unknown state {name!r}") from None

    def name(self, state: int) -> str:
        return self.names[state]

    def is_reserved(self, state: int) -> bool:
        return state < 3


def build_inventory(phoneme_names: Sequence[str]) -> StateInventory:
    names = list(phoneme_names)
    if not names:
        raise InventoryError("no phoneme names given")
    seen = set()
    for n in names:
        if n in RESERVED:
            raise InventoryError(f"phoneme name {n!r} is reserved")
        if n in seen:
            raise InventoryError(f"duplicate phoneme name {n!r}")
        seen.add(n)
    return StateInventory(RESERVED + tuple(names))


@dataclass(frozen=True)
class Lexicon:
    """Single-pronunciation lexicon mapping words to phoneme-id tuples."""

    entries: dict[str, tuple[int, ...]] = field(default_factory=dict)

    @classmethod
    def from_names(cls, entries: dict[str, Sequence[str]], inv: StateInventory) -> "Lexicon":
        lex = {}
        for word, phones in entries.items():
            lex[word] = tuple(inv.id(p) for p in phones)
        out = cls(lex)
        out.validate(inv)
        return out

    def validate(self, inv: StateInventory) -> None:
        for word, phones in self.entries.items():
            if not phones:
                raise InventoryError(f"word {word!r} has an empty pronunciation")
            for p in phones:
                if not 0 <= p < inv.L or inv.is_reserved(p):
                    raise InventoryError(f"word {word!r} uses invalid phoneme id {p}")

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __getitem__(self, word: str) -> tuple[int, ...]:
        try:
            return self.entries[word]
        except KeyError:
            raise OOVError(word) from None

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def words(self) -> list[str]:
        return list(self.entries)


@dataclass(frozen=True)
class Transcript:
    gamma: tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.gamma) - 1

    def __len__(self) -> int:
        return len(self.gamma)

    def __iter__(self):
        return iter(self.gamma)

    def __getitem__(self, k):
        return self.gamma[k]

    def array(self) -> np.ndarray:
        return np.asarray(self.gamma, dtype=np.int64)

    def phonemes(self) -> list[int]:
        return [s for s in self.gamma if s >= 3]


def word_states(phones: Sequence[int]) -> list[int]:
    """Phones of one word with a blank between identical neighbours."""
    out: list[int] = []
    for p in phones:
        if out and out[-1] == p:
            out.append(BLANK)
        out.append(p)
    return out


def build_transcript(words: Sequence[str], lexicon: Lexicon, inv: StateInventory) -> Transcript:
    if isinstance(words, str):
        words = words.split()
    if len(words) == 0:
        raise InventoryError("cannot build a transcript for an empty sentence")
    gamma = [START, BLANK]
    for w in words:
        gamma.extend(word_states(lexicon[w]))
        gamma.append(BLANK)
    gamma.append(END)
    return Transcript(tuple(gamma))


def collapse_states(s: Iterable[int]) -> list[int]:
    out: list[int] = []
    for x in s:
        x = int(x)
        if not out or out[-1] != x:
            out.append(x)
    return out


def expand_transcript(gamma: Sequence[int], durations: Sequence[int]) -> list[int]:
    """Repeat each transcript state by its (positive) duration."""
    if len(durations) != len(gamma):
        raise ValueError("need one duration per transcript state")
    out = []
    for s, d in zip(gamma, durations):
        if d < 1:
            raise ValueError("durations must be positive")
        out.extend([s] * int(d))
    return out


# --- text formats -----------------------------------------------------------

def read_lexicon(path: str | Path, inv: StateInventory) -> Lexicon:
    entries: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].rstrip("\n").strip()
            if not line:
                continue
            if "\t" in line:
                word, phones = line.split("\t", 1)
            else:
                word, _, phones = line.partition(" ")
            word = word.strip()
            if word in entries:
                raise InventoryError(f"{path}:{lineno}: duplicate entry for {word!r}")
            entries[word] = phones.split()
    return Lexicon.from_names(entries, inv)


def write_lexicon(path: str | Path, lexicon: Lexicon, inv: StateInventory) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for word, phones in lexicon.entries.items():
            f.write(word + "\t" + " ".join(inv.name(p) for p in phones) + "\n")


def read_phones(path: str | Path) -> StateInventory:
    with open(path, encoding="utf-8") as f:
        names = [ln.split("#", 1)[0].strip() for ln in f]
    names = [n for n in names if n and n not in RESERVED]
    return build_inventory(names)


def write_phones(path: str | Path, inv: StateInventory) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in inv.phonemes:
            f.write(inv.name(p) + "\n")


def read_text(path: str | Path) -> dict[str, list[str]]:
    """Read ``utt_id<TAB>word word ...`` lines."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            utt, _, words = line.partition("\t")
            out[utt.strip()] = words.split()
    return out


def write_text(path: str | Path, texts: dict[str, Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt, words in texts.items():
            f.write(f"{utt}\t{' '.join(words)}\n")
