"""Glue between training, graph construction, decoding and scoring."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .acoustic import Model, extract_windows, speaker_normalize
from .corpus import Corpus
from .ctc import ctc_best_path_align
from .decode import (DecodeConfig, DecodeResult, DecodingGraph, decode_phones, ensemble_average,
                     forced_align, viterbi_beam_decode)
from .graphs import build_G, build_H, build_L, build_T_ctc
from .lm import WordNgramLM, estimate_arpa
from .metrics import EvalReport, alignment_accuracy, compute_wer, measure_rtf
from .mmi import ModelParameters
from .wfst import Wfst, compose, graph_stats

SCALE_GRID = (0.5, 0.6, 0.7, 0.8, 0.9)


def word_lm_from_corpus(corpus: Corpus, order: int = 2) -> WordNgramLM:
    return estimate_arpa([u.words for u in corpus], order=order, vocab=corpus.lexicon.words)


def build_hlg(params: ModelParameters, corpus_or_lex, lm: WordNgramLM) -> Wfst:
    inv, lex = _inv_lex(corpus_or_lex)
    G = build_G(lm, lex.words)
    LG = compose(build_L(lex, inv, "eemmi"), G)
    return compose(build_H(params, inv), LG)


def build_tlg(corpus_or_lex, lm: WordNgramLM) -> Wfst:
    inv, lex = _inv_lex(corpus_or_lex)
    G = build_G(lm, lex.words)
    LG = compose(build_L(lex, inv, "ctc"), G)
    return compose(build_T_ctc(inv), LG)


def _inv_lex(obj):
    if isinstance(obj, Corpus):
        return obj.inventory, obj.lexicon
    return obj


def posteriors(models: Sequence[Model], corpus: Corpus, normalize: bool = True) -> dict[str, np.ndarray]:
    """Per-utterance log posteriors; several models are averaged in the probability domain."""
    if not models:
        raise ValueError("need at least one model")
    if normalize:
        corpus = speaker_normalize(corpus)
    out = {}
    for u in corpus:
        grids = [m.posteriors(extract_windows(u.features, m.net.context)) for m in models]
        out[u.utt_id] = ensemble_average(grids)
    return out


@dataclass
class DecodeRun:
    hyps: dict[str, list[str]]
    results: dict[str, DecodeResult]

    @property
    def searches(self) -> int:
        return sum(r.searches for r in self.results.values())


def decode_corpus(graph: Wfst | DecodingGraph, post: dict[str, np.ndarray], params: ModelParameters,
                  cfg: DecodeConfig) -> DecodeRun:
    dg = graph if isinstance(graph, DecodingGraph) else DecodingGraph(graph)
    results = {k: viterbi_beam_decode(dg, y, params, cfg) for k, y in post.items()}
    return DecodeRun({k: r.words for k, r in results.items()}, results)


def select_acoustic_scale(graph, post, params, refs, cfg: DecodeConfig | None = None,
                          grid: Sequence[float] = SCALE_GRID) -> tuple[float, dict[float, float]]:
    """Scale with the lowest WER on ``post`` (ties go to the smaller scale)."""
    cfg = cfg or DecodeConfig()
    dg = graph if isinstance(graph, DecodingGraph) else DecodingGraph(graph)
    wers = {}
    for s in grid:
        run = decode_corpus(dg, post, params, DecodeConfig(cfg.beam, cfg.max_active, s))
        wers[s] = compute_wer(refs, run.hyps).rate
    best = min(grid, key=lambda s: (wers[s], s))
    return best, wers


def model_alignments(model: Model, corpus: Corpus, post=None) -> dict[str, np.ndarray]:
    """Frame alignments (one state per frame): forced alignment for MMI models,
    best path for CTC models."""
    post = post if post is not None else posteriors([model], corpus)
    out = {}
    for u in corpus:
        y = post[u.utt_id]
        if model.loss_kind == "mmi":
            out[u.utt_id] = forced_align(y, u.transcript, model.params).frames
        else:
            out[u.utt_id] = ctc_best_path_align(y)[0]
    return out


def phone_hyps(model: Model, post: dict[str, np.ndarray]) -> dict[str, list[int]]:
    if model.loss_kind == "mmi":
        return {k: decode_phones(y, model.params) for k, y in post.items()}
    return {k: ctc_best_path_align(y)[1] for k, y in post.items()}


def evaluate(system: str, models: Sequence[Model], corpus: Corpus, graph: Wfst,
             cfg: DecodeConfig, with_alignment: bool = True) -> tuple[EvalReport, DecodeRun]:
    post = posteriors(models, corpus)
    params = models[0].params
    run = decode_corpus(graph, post, params, cfg)
    refs = {u.utt_id: u.words for u in corpus}
    wer = compute_wer(refs, run.hyps)
    per = compute_wer({u.utt_id: u.transcript.phonemes() for u in corpus}, phone_hyps(models[0], post))
    acc = None
    if with_alignment and all(u.alignment is not None for u in corpus):
        acc = alignment_accuracy({u.utt_id: u.alignment for u in corpus},
                                 model_alignments(models[0], corpus, post))
    rtf = measure_rtf([(r.elapsed, r.frames) for r in run.results.values()])
    report = EvalReport(system, wer, per, acc, rtf, graph_stats(graph),
                        {"acoustic_scale": cfg.acoustic_scale, "models": len(models),
                         "searches": run.searches})
    return report, run
