"""Synthetic corpora with known lexicon, grammar, alignments and emissions.

Every HMM state (reserved ones included) owns a Gaussian emission mean.
Sentences come from a random sparse word bigram, state durations are
geometric with a shared self-loop probability, and each speaker applies a
per-dimension affine distortion to the frames.

The data follow the same HMM as the model: the initial state ``s_0 = start``
is not a frame, so the gold alignment ``s_1..s_T`` may begin with zero start
frames and ``[start] + alignment`` collapses to the transcript.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .corpus import Corpus, Utterance
from .inventory import Lexicon, build_inventory, build_transcript, collapse_states, expand_transcript


class SpecError(ValueError):
    pass


@dataclass
class SyntheticCorpusSpec:
    num_phonemes: int = 10
    num_words: int = 20
    word_len: tuple[int, int] = (2, 4)
    sentence_len: tuple[int, int] = (2, 5)
    feature_dim: int = 8
    sep: float = 1.0
    noise: float = 0.78
    self_loop: float = 0.5
    num_speakers: int = 5
    speaker_scale: float = 0.2
    speaker_shift: float = 1.0
    num_utterances: int = 550
    successors: int = 4
    seed: int = 0

    def __post_init__(self):
        self.word_len = tuple(int(v) for v in self.word_len)
        self.sentence_len = tuple(int(v) for v in self.sentence_len)
        for name in ("num_phonemes", "num_words", "feature_dim", "num_speakers", "num_utterances",
                     "successors"):
            if getattr(self, name) < 1:
                raise SpecError(f"{name} must be at least 1")
        for name in ("word_len", "sentence_len"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise SpecError(f"{name} must be a range 1 <= lo <= hi")
        if self.sep <= 0:
            raise SpecError("sep must be positive")
        if self.noise < 0 or self.speaker_scale < 0 or self.speaker_shift < 0:
            raise SpecError("noise and speaker distortion must be non-negative")
        if not 0 <= self.self_loop < 1:
            raise SpecError("self_loop must be in [0, 1)")
        lo, hi = self.word_len
        distinct = sum(self.num_phonemes ** n for n in range(lo, hi + 1))
        if distinct < self.num_words:
            raise SpecError(f"only {distinct} distinct pronunciations for {self.num_words} words")

    @classmethod
    def from_text(cls, text: str) -> "SyntheticCorpusSpec":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (p.strip() for p in line.partition("="))
            if not sep or key not in known:
                raise SpecError(f"line {lineno}: unknown or malformed entry {line!r}")
            default = getattr(cls(), key)
            if isinstance(default, tuple):
                kw[key] = tuple(int(v) for v in value.replace(",", " ").split())
            else:
                kw[key] = type(default)(value)
        return cls(**kw)

    @classmethod
    def read(cls, path: str | Path) -> "SyntheticCorpusSpec":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, (tuple, list)):
                v = ",".join(map(str, v))
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


@dataclass
class Generator:
    """Ground truth used to draw a corpus."""

    means: np.ndarray              # L x D emission means
    word_bigram: np.ndarray        # (W + 1) x W; row 0 is the sentence start
    speaker_scale: np.ndarray      # S x D
    speaker_shift: np.ndarray      # S x D
    spec: SyntheticCorpusSpec


def _random_lexicon(spec: SyntheticCorpusSpec, rng, phone_names):
    lo, hi = spec.word_len
    prons = set()
    entries = {}
    while len(entries) < spec.num_words:
        n = int(rng.integers(lo, hi + 1))
        pron = tuple(phone_names[i] for i in rng.integers(0, spec.num_phonemes, size=n))
        if pron in prons:
            continue
        prons.add(pron)
        entries[f"w{len(entries):02d}"] = pron
    return entries


def _random_bigram(spec: SyntheticCorpusSpec, rng) -> np.ndarray:
    W = spec.num_words
    k = min(spec.successors, W)
    out = np.zeros((W + 1, W))
    for h in range(W + 1):
        succ = rng.choice(W, size=k, replace=False)
        out[h, succ] = rng.dirichlet(np.ones(k))
    return out


def generate_corpus(spec: SyntheticCorpusSpec) -> tuple[Corpus, Generator]:
    rng = np.random.default_rng(spec.seed)
    phone_names = [f"p{i}" for i in range(spec.num_phonemes)]
    inv = build_inventory(phone_names)
    lex = Lexicon.from_names(_random_lexicon(spec, rng, phone_names), inv)
    words = lex.words
    bigram = _random_bigram(spec, rng)
    D = spec.feature_dim
    means = rng.normal(0.0, spec.sep, size=(inv.L, D))
    spk_scale = np.exp(rng.normal(0.0, spec.speaker_scale, size=(spec.num_speakers, D)))
    spk_shift = rng.normal(0.0, spec.speaker_shift, size=(spec.num_speakers, D))
    gen = Generator(means, bigram, spk_scale, spk_shift, spec)

    utts = []
    lo, hi = spec.sentence_len
    for n in range(spec.num_utterances):
        length = int(rng.integers(lo, hi + 1))
        sent, h = [], 0
        for _ in range(length):
            w = int(rng.choice(spec.num_words, p=bigram[h]))
            sent.append(words[w])
            h = w + 1
        tr = build_transcript(sent, lex, inv)
        # s_0 = start is not a frame; start keeps emitting with the self-loop probability
        durations = rng.geometric(1.0 - spec.self_loop, size=len(tr))
        path = expand_transcript(tr.gamma, durations)
        align = np.asarray(path[1:], dtype=np.int64)
        spk = n % spec.num_speakers
        x = means[align] + spec.noise * rng.standard_normal((align.size, D))
        x = (x * spk_scale[spk] + spk_shift[spk]).astype(np.float32)
        assert collapse_states(path) == list(tr.gamma)
        utts.append(Utterance(f"utt{n:05d}", f"spk{spk:02d}", x, sent, tr, align))
    info = {"generator": "synthetic", **{k: str(v) for k, v in asdict(spec).items()}}
    return Corpus(inv, lex, utts, info), gen


def split_train_test(corpus: Corpus, num_test: int) -> tuple[Corpus, Corpus]:
    """The last ``num_test`` utterances form the test set."""
    if not 0 < num_test < len(corpus):
        raise ValueError("num_test must leave at least one training utterance")
    ids = [u.utt_id for u in corpus]
    return corpus.subset(ids[:-num_test]), corpus.subset(ids[-num_test:])


def nearest_mean_accuracy(train: Corpus, test: Corpus) -> float:
    """Frame accuracy of a nearest-class-mean classifier on speaker-normalized features,
    with class means estimated from the gold alignments of ``train``."""
    from .acoustic import speaker_normalize

    tr, te = speaker_normalize(train), speaker_normalize(test)
    L = train.inventory.L
    x = np.concatenate([u.features for u in tr])
    lab = np.concatenate([u.alignment for u in tr])
    means = np.zeros((L, x.shape[1]))
    for c in range(L):
        if np.any(lab == c):
            means[c] = x[lab == c].mean(axis=0)
        else:
            means[c] = np.inf
    xt = np.concatenate([u.features for u in te])
    lt = np.concatenate([u.alignment for u in te])
    d = ((xt[:, None, :] - means[None]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(d, axis=1) == lt))


def calibrate_noise(spec: SyntheticCorpusSpec, target: float = 0.9, num_utterances: int = 200,
                    iters: int = 12) -> float:
    """Noise level at which the nearest-mean classifier scores about ``target`` (bisection)."""
    from dataclasses import replace

    lo, hi = 0.0, 4.0 * spec.sep
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        c, _ = generate_corpus(replace(spec, noise=mid, num_utterances=num_utterances))
        a, b = split_train_test(c, num_utterances // 4)
        if nearest_mean_accuracy(a, b) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
