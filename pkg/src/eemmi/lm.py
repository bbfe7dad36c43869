"""State-level training LM and word-level ARPA n-gram models."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

LN10 = math.log(10.0)
# ARPA convention: log10 values at or below this mean "probability zero"
LOG10_ZERO = -99.0

STATE_LM_KINDS = ("uniform", "unigram", "bigram")


class EstimationError(ValueError):
    pass


class ArpaError(ValueError):
    def __init__(self, msg: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}" if lineno is not None else msg)


# --- state LM ---------------------------------------------------------------

@dataclass(frozen=True)
class StateLM:
    kind: str
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("q must be a square matrix")
        if np.any(q < 0) or np.any(np.diag(q) != 0):
            raise ValueError("q must be non-negative with a zero diagonal")
        if not np.allclose(q.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("q rows must sum to one")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def L(self) -> int:
        return self.q.shape[0]

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            f.write(f"# state-lm kind={self.kind} L={self.L}\n")
            for row in self.q:
                f.write(" ".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "StateLM":
        kind = "bigram"
        rows = []
        with open(path) as f:
            for line in f:
                if line.startswith("#"):
                    for tok in line[1:].split():
                        if tok.startswith("kind="):
                            kind = tok[5:]
                    continue
                if line.strip():
                    rows.append([float(v) for v in line.split()])
        return cls(kind, np.array(rows))


def uniform_state_lm(L: int) -> StateLM:
    q = np.full((L, L), 1.0 / (L - 1))
    np.fill_diagonal(q, 0.0)
    return StateLM("uniform", q)


def estimate_state_lm(transcripts: Sequence[Sequence[int]], kind: str = "bigram",
                      smoothing_alpha: float = 0.1, num_states: int | None = None,
                      on_empty_row: str = "error") -> StateLM:
    """Estimate q(c, c') from adjacent state pairs of the training transcripts.

    Additive smoothing ``alpha`` is applied to every off-diagonal entry. With
    ``alpha == 0`` a state that is never followed by anything has no defined
    row; that raises unless ``on_empty_row="uniform"``.
    """
    if kind not in STATE_LM_KINDS:
        raise ValueError(f"unknown state LM kind {kind!r}")
    if not transcripts:
        raise EstimationError("no transcripts to estimate from")
    if smoothing_alpha < 0:
        raise ValueError("smoothing_alpha must be non-negative")
    seqs = [np.asarray(tuple(t), dtype=np.int64) for t in transcripts]
    L = num_states if num_states is not None else int(max(s.max() for s in seqs)) + 1
    if kind == "uniform":
        return uniform_state_lm(L)

    counts = np.zeros((L, L))
    if kind == "bigram":
        for s in seqs:
            np.add.at(counts, (s[:-1], s[1:]), 1.0)
        np.fill_diagonal(counts, 0.0)
    else:
        uni = np.zeros(L)
        for s in seqs:
            np.add.at(uni, s, 1.0)
        counts[:] = uni[None, :]
        np.fill_diagonal(counts, 0.0)
    counts += smoothing_alpha
    np.fill_diagonal(counts, 0.0)
    totals = counts.sum(axis=1)
    for c in np.flatnonzero(totals == 0):
        if on_empty_row != "uniform":
            raise EstimationError(f"state {c} has no observed successors")
        counts[c] = 1.0
        counts[c, c] = 0.0
    q = counts / counts.sum(axis=1, keepdims=True)
    return StateLM(kind, q)


# --- word n-gram LM ---------------------------------------------------------

@dataclass
class WordNgramLM:
    """Back-off n-gram LM with log10 probabilities as stored in ARPA files.

    ``ngrams[n][words] = (log10_prob, log10_backoff_or_None)``.
    """

    ngrams: dict[int, dict[tuple[str, ...], tuple[float, float | None]]] = field(default_factory=dict)

    @property
    def order(self) -> int:
        return max(self.ngrams) if self.ngrams else 0

    @property
    def vocab(self) -> list[str]:
        return [w[0] for w in self.ngrams.get(1, {})]

    def words(self) -> list[str]:
        """Vocabulary without sentence markers."""
        return [w for w in self.vocab if w not in ("<s>", "</s>")]

    def log10_prob(self, ngram: tuple[str, ...]) -> float | None:
        entry = self.ngrams.get(len(ngram), {}).get(ngram)
        return None if entry is None else entry[0]

    def log10_backoff(self, context: tuple[str, ...]) -> float:
        entry = self.ngrams.get(len(context), {}).get(context)
        if entry is None or entry[1] is None:
            return 0.0
        return entry[1]

    def validate(self) -> None:
        for n, table in self.ngrams.items():
            for words, (p, b) in table.items():
                if not math.isfinite(p) or (b is not None and not math.isfinite(b)):
                    raise ArpaError(f"non-finite value for n-gram {' '.join(words)!r}")
                if n > 1:
                    if words[:-1] not in self.ngrams.get(n - 1, {}):
                        raise ArpaError(f"context of {' '.join(words)!r} missing at order {n - 1}")
                    if words[1:] not in self.ngrams.get(n - 1, {}):
                        raise ArpaError(f"suffix of {' '.join(words)!r} missing at order {n - 1}")

    def to_arpa(self) -> str:
        lines = ["", "\\data\\"]
        for n in sorted(self.ngrams):
            lines.append(f"ngram {n}={len(self.ngrams[n])}")
        for n in sorted(self.ngrams):
            lines.append("")
            lines.append(f"\\{n}-grams:")
            for words, (p, b) in self.ngrams[n].items():
                row = f"{p!r}\t{' '.join(words)}"
                if b is not None:
                    row += f"\t{b!r}"
                lines.append(row)
        lines += ["", "\\end\\", ""]
        return "\n".join(lines)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_arpa(), encoding="utf-8")


def parse_arpa(text: str) -> WordNgramLM:
    declared: dict[int, int] = {}
    ngrams: dict[int, dict] = {}
    section = None  # "data" or int order
    seen_data = seen_end = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if seen_end:
            raise ArpaError("content after \\end\\", lineno)
        if line == "\\data\\":
            if seen_data:
                raise ArpaError("duplicate \\data\\ header", lineno)
            seen_data = True
            section = "data"
            continue
        if line == "\\end\\":
            seen_end = True
            continue
        if line.startswith("\\"):
            if not seen_data:
                raise ArpaError("section before \\data\\ header", lineno)
            head = line[1:]
            if not head.endswith("-grams:"):
                raise ArpaError(f"unknown section {line!r}", lineno)
            try:
                n = int(head[: -len("-grams:")])
            except ValueError:
                raise ArpaError(f"bad section header {line!r}", lineno) from None
            if n not in declared:
                raise ArpaError(f"section for undeclared order {n}", lineno)
            section = n
            ngrams[n] = {}
            continue
        if section is None:
            # text before \data\ is ignored, as in most toolkits
            continue
        if section == "data":
            if not line.startswith("ngram "):
                raise ArpaError(f"bad header line {line!r}", lineno)
            try:
                n_str, cnt = line[6:].split("=")
                declared[int(n_str)] = int(cnt)
            except ValueError:
                raise ArpaError(f"bad header line {line!r}", lineno) from None
            continue
        parts = line.split()
        n = section
        if len(parts) not in (n + 1, n + 2):
            raise ArpaError(f"expected {n}-gram entry, got {line!r}", lineno)
        try:
            prob = float(parts[0])
            bow = float(parts[n + 1]) if len(parts) == n + 2 else None
        except ValueError:
            raise ArpaError(f"bad number in {line!r}", lineno) from None
        ngrams[n][tuple(parts[1: n + 1])] = (prob, bow)
    if not seen_data:
        raise ArpaError("missing \\data\\ header")
    if not seen_end:
        raise ArpaError("missing \\end\\ marker")
    for n, cnt in declared.items():
        got = len(ngrams.get(n, {}))
        if got != cnt:
            raise ArpaError(f"order {n}: header declares {cnt} entries, found {got}")
    lm = WordNgramLM(ngrams)
    lm.validate()
    return lm


def read_arpa(path: str | Path) -> WordNgramLM:
    return parse_arpa(Path(path).read_text(encoding="utf-8"))


def _cond_log10(lm: WordNgramLM, history: tuple[str, ...], word: str) -> float:
    bo = 0.0
    h = history[-(lm.order - 1):] if lm.order > 1 else ()
    while True:
        p = lm.log10_prob(h + (word,))
        if p is not None:
            return bo + p
        if not h:
            raise KeyError(word)
        bo += lm.log10_backoff(h)
        h = h[1:]


def score_word_sequence(lm: WordNgramLM, words: Sequence[str], sentence_markers: bool = False) -> float:
    """Natural-log probability of ``words`` under standard back-off.

    With ``sentence_markers`` the history starts at ``<s>`` and ``</s>`` is
    scored at the end; otherwise scoring starts from an empty history.
    """
    if isinstance(words, str):
        words = words.split()
    vocab = set(lm.vocab)
    for w in words:
        if w not in vocab or w in ("<s>", "</s>"):
            raise KeyError(f"out-of-vocabulary word {w!r}")
    history: tuple[str, ...] = ("<s>",) if sentence_markers else ()
    seq = list(words) + (["</s>"] if sentence_markers else [])
    total = 0.0
    for w in seq:
        total += _cond_log10(lm, history, w)
        history = (history + (w,))[-max(lm.order - 1, 0):] if lm.order > 1 else ()
    return total * LN10


def estimate_arpa(sentences: Iterable[Sequence[str]], order: int = 2, discount: float = 0.5,
                  vocab: Iterable[str] | None = None) -> WordNgramLM:
    """Back-off LM with absolute discounting (orders 1 and 2).

    Unigrams are add-one smoothed over the vocabulary plus ``</s>``; words in
    ``vocab`` that never occur still get a unigram entry.
    """
    if order not in (1, 2):
        raise ValueError("only unigram and bigram estimation is supported")
    if not 0 < discount < 1:
        raise ValueError("discount must be in (0, 1)")
    uni: Counter = Counter()
    bi: dict[str, Counter] = defaultdict(Counter)
    for sent in sentences:
        toks = ["<s>"] + list(sent) + ["</s>"]
        uni.update(toks[1:])
        for a, b in zip(toks[:-1], toks[1:]):
            bi[a][b] += 1
    if not uni:
        raise EstimationError("no sentences")
    vocab = sorted(set(uni) | set(vocab or ()))
    total = sum(uni.values())
    p1 = {w: (uni[w] + 1) / (total + len(vocab)) for w in vocab}
    ngrams: dict[int, dict] = {1: {}}
    if order == 1:
        for w in vocab:
            ngrams[1][(w,)] = (math.log10(p1[w]), None)
        return WordNgramLM(ngrams)

    ngrams[2] = {}
    bows: dict[str, float] = {}
    for h in ["<s>"] + [w for w in vocab if w != "</s>"]:
        succ = bi.get(h)
        if not succ:
            continue
        ch = sum(succ.values())
        left = discount * len(succ) / ch
        covered = sum(p1[w] for w in succ)
        for w, c in sorted(succ.items()):
            ngrams[2][(h, w)] = (math.log10((c - discount) / ch), None)
        if covered < 1.0:
            bows[h] = math.log10(left / (1.0 - covered))
        else:
            bows[h] = LOG10_ZERO
    ngrams[1][("<s>",)] = (LOG10_ZERO, bows.get("<s>", 0.0))
    for w in vocab:
        b = bows.get(w) if w != "</s>" else None
        ngrams[1][(w,)] = (math.log10(p1[w]), b)
    return WordNgramLM(ngrams)
