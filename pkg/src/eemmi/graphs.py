"""Decoding graph builders: grammar G, lexicon L, HMM H and CTC token T."""

from __future__ import annotations

from typing import Sequence

from .inventory import BLANK, END, START, Lexicon, StateInventory, word_states
from .lm import LN10, LOG10_ZERO, WordNgramLM
from .mmi import ModelParameters
from .wfst import EPS, Wfst, WfstError


def state_symbols(inv: StateInventory) -> list[str]:
    """Symbol table for state/unit labels: label ``c + 1`` is state ``c``."""
    return list(inv.names)


def _cost(log10_p: float) -> float:
    return -log10_p * LN10


def build_G(lm: WordNgramLM, words: Sequence[str] | None = None) -> Wfst:
    """Word acceptor for a back-off n-gram LM.

    One state per history; back-off is an epsilon arc to the shorter history.
    Entries with log10 value at or below -99 are treated as impossible.
    """
    words = list(words) if words is not None else lm.words()
    if not words:
        raise WfstError("empty vocabulary")
    g = Wfst(words, words)
    wid = {w: i + 1 for i, w in enumerate(words)}
    order = lm.order
    histories = [()]
    for n in range(1, order):
        for ng in lm.ngrams.get(n, {}):
            if ng[-1] != "</s>":
                histories.append(ng)
    hid = {(): g.start}
    for h in histories[1:]:
        hid[h] = g.add_state()

    def next_state(h):
        h = h[-(order - 1):] if order > 1 else ()
        while h not in hid:
            h = h[1:]
        return hid[h]

    for n in range(1, order + 1):
        for ng, (p, bow) in lm.ngrams[n].items():
            h, w = ng[:-1], ng[-1]
            if h not in hid or w == "<s>" or p <= LOG10_ZERO:
                continue
            if w == "</s>":
                g.set_final(hid[h], _cost(p))
                continue
            if w not in wid:
                continue
            g.add_arc(hid[h], wid[w], wid[w], _cost(p), next_state(ng))
    for h in histories[1:]:
        bow = lm.log10_backoff(h)
        if bow > LOG10_ZERO:
            g.add_arc(hid[h], EPS, EPS, _cost(bow), next_state(h[1:]))
    if order > 1 and ("<s>",) in hid:
        g.start = hid[("<s>",)]
    return g


def build_L(lexicon: Lexicon, inv: StateInventory, topology: str = "eemmi") -> Wfst:
    """Lexicon transducer from unit labels to words.

    ``eemmi``: ``start blank (word blank)* end`` with a blank between identical
    phones inside a word. ``ctc``: closure over words, phones only (the token
    graph handles blanks).
    """
    if len(lexicon) == 0:
        raise WfstError("empty lexicon")
    L = Wfst(state_symbols(inv), lexicon.words)
    unit = lambda s: s + 1  # noqa: E731
    if topology == "eemmi":
        after_start = L.add_state()
        boundary = L.add_state()
        final = L.add_state()
        L.add_arc(L.start, unit(START), EPS, 0.0, after_start)
        L.add_arc(after_start, unit(BLANK), EPS, 0.0, boundary)
        L.add_arc(boundary, unit(END), EPS, 0.0, final)
        L.set_final(final)
        entry, exit_ = boundary, after_start
        units_of = word_states
    elif topology == "ctc":
        L.set_final(L.start)
        entry = exit_ = L.start
        units_of = list
    else:
        raise ValueError(f"unknown lexicon topology {topology!r}")
    for wi, word in enumerate(lexicon.words, 1):
        units = units_of(lexicon[word])
        s = entry
        for i, u in enumerate(units):
            nxt = exit_ if i == len(units) - 1 else L.add_state()
            L.add_arc(s, unit(u), wi if i == 0 else EPS, 0.0, nxt)
            s = nxt
    return L


def build_H(params: ModelParameters, inv: StateInventory) -> Wfst:
    """Per state ``c``: entry arc ``c:c``, self-loop ``c:eps / -log p_c(0)``,
    exit ``eps:eps / -log p_c(1)`` back to the hub.

    The start state is the non-emitting initial state, so its entry arc reads
    no frame (``eps:start``); further start frames use its self-loop.
    """
    syms = state_symbols(inv)
    H = Wfst(syms, syms)
    H.set_final(H.start)
    stay = -params.log_p_stay
    leave = -params.log_p_leave
    for c in range(inv.L):
        s = H.add_state()
        H.add_arc(H.start, EPS if c == START else c + 1, c + 1, 0.0, s)
        H.add_arc(s, c + 1, EPS, float(stay[c]), s)
        H.add_arc(s, EPS, EPS, float(leave[c]), H.start)
    return H


def build_T_ctc(inv: StateInventory) -> Wfst:
    """CTC token topology over phoneme units with zero weights.

    The hub (blank) state loops on blank; every token state loops on its own
    label, returns to the hub on blank and jumps directly to any other token.
    A repeated token therefore needs a blank in between.
    """
    syms = state_symbols(inv)
    T = Wfst(syms, syms)
    hub = T.start
    T.set_final(hub)
    T.add_arc(hub, BLANK + 1, EPS, 0.0, hub)
    tok = {c: T.add_state() for c in inv.phonemes}
    for c, s in tok.items():
        T.set_final(s)
        T.add_arc(hub, c + 1, c + 1, 0.0, s)
        T.add_arc(s, c + 1, EPS, 0.0, s)
        T.add_arc(s, BLANK + 1, EPS, 0.0, hub)
        for d, sd in tok.items():
            if d != c:
                T.add_arc(s, d + 1, d + 1, 0.0, sd)
    return T

