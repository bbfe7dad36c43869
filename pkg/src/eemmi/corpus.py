"""Corpus container and its on-disk layout.

A corpus directory holds::

    phones.txt      one phoneme name per line
    lexicon.txt     word<TAB>phone phone ...
    text            utt_id<TAB>word word ...
    utt2spk         utt_id<TAB>speaker_id
    align           utt_id<TAB>state state ...      (optional)
    feats/<utt>.feat

Feature files start with one ASCII header line
``EEMF rows=<T> cols=<D> utt=<id> spk=<id>`` followed by ``T*D`` little-endian
float32 values in row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .inventory import (Lexicon, StateInventory, Transcript, build_transcript, read_lexicon,
                        read_phones, read_text, write_lexicon, write_phones, write_text)

FEAT_MAGIC = "EEMF"


@dataclass
class Utterance:
    utt_id: str
    speaker_id: str
    features: np.ndarray
    words: list[str]
    transcript: Transcript
    alignment: np.ndarray | None = None

    @property
    def num_frames(self) -> int:
        return int(self.features.shape[0])


@dataclass
class Corpus:
    inventory: StateInventory
    lexicon: Lexicon
    utterances: list[Utterance]
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def subset(self, ids) -> "Corpus":
        keep = set(ids)
        return replace(self, utterances=[u for u in self.utterances if u.utt_id in keep])

    def by_id(self) -> dict[str, Utterance]:
        return {u.utt_id: u for u in self.utterances}

    @property
    def feature_dim(self) -> int:
        return int(self.utterances[0].features.shape[1])


def write_features(path: str | Path, feats: np.ndarray, utt_id: str, speaker_id: str) -> None:
    feats = np.asarray(feats, dtype="<f4")
    header = f"{FEAT_MAGIC} rows={feats.shape[0]} cols={feats.shape[1]} utt={utt_id} spk={speaker_id}\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(feats).tobytes())


def read_features(path: str | Path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").split()
        if not header or header[0] != FEAT_MAGIC:
            raise ValueError(f"{path}: not a feature file")
        meta = dict(tok.split("=", 1) for tok in header[1:])
        rows, cols = int(meta["rows"]), int(meta["cols"])
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols).astype(np.float32), meta


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    out = Path(out_dir)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    write_phones(out / "phones.txt", corpus.inventory)
    write_lexicon(out / "lexicon.txt", corpus.lexicon, corpus.inventory)
    write_text(out / "text", {u.utt_id: u.words for u in corpus})
    with open(out / "utt2spk", "w") as f:
        for u in corpus:
            f.write(f"{u.utt_id}\t{u.speaker_id}\n")
    if all(u.alignment is not None for u in corpus):
        with open(out / "align", "w") as f:
            for u in corpus:
                f.write(u.utt_id + "\t" + " ".join(map(str, u.alignment)) + "\n")
    for u in corpus:
        write_features(out / "feats" / f"{u.utt_id}.feat", u.features, u.utt_id, u.speaker_id)


def load_corpus(in_dir: str | Path) -> Corpus:
    d = Path(in_dir)
    inv = read_phones(d / "phones.txt")
    lex = read_lexicon(d / "lexicon.txt", inv)
    texts = read_text(d / "text")
    spk = dict(line.rstrip("\n").split("\t", 1) for line in open(d / "utt2spk") if line.strip())
    aligns = {}
    if (d / "align").exists():
        for line in open(d / "align"):
            if line.strip():
                utt, _, states = line.rstrip("\n").partition("\t")
                aligns[utt] = np.array([int(s) for s in states.split()], dtype=np.int64)
    utts = []
    for utt_id, words in texts.items():
        feats, _ = read_features(d / "feats" / f"{utt_id}.feat")
        utts.append(Utterance(utt_id, spk[utt_id], feats, words,
                              build_transcript(words, lex, inv), aligns.get(utt_id)))
    return Corpus(inv, lex, utts)
