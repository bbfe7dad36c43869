"""Frame-synchronous Viterbi beam search over WFSTs, forced alignment and
posterior averaging."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .inventory import START, collapse_states
from .mmi import InfeasibleTranscriptError, ModelParameters, _log
from .wfst import ArcArrays, Wfst, gather_arcs

FRAME_PERIOD = 0.01


class DecodeError(RuntimeError):
    pass


@dataclass
class DecodeConfig:
    beam: float = 16.0
    max_active: int | None = 10_000
    acoustic_scale: float = 0.7

    def __post_init__(self):
        if not self.beam > 0:
            raise ValueError("beam must be positive")
        if not 0 < self.acoustic_scale <= 1:
            raise ValueError("acoustic_scale must be in (0, 1]")
        if self.max_active is not None and self.max_active < 1:
            raise ValueError("max_active must be positive")


@dataclass
class DecodeResult:
    words: list[str]
    frame_alignment: np.ndarray
    score: float
    rtf: float
    elapsed: float = 0.0
    frames: int = 0
    searches: int = 1
    output_labels: list[int] = field(default_factory=list)


class DecodingGraph:
    """A WFST prepared for search: CSR arc arrays plus symbol tables."""

    def __init__(self, g: Wfst):
        self.wfst = g
        self.arcs: ArcArrays = g.arrays()
        self.osyms = g.osyms
        self.isyms = g.isyms


def _best_per_dst(dst, cand, arcs):
    """Best candidate per destination; ties go to the lower arc id, and arc ids
    are ordered by source state."""
    order = np.lexsort((arcs, cand, dst))
    d = dst[order]
    first = np.ones(d.size, dtype=bool)
    first[1:] = d[1:] != d[:-1]
    sel = order[first]
    return dst[sel], cand[sel], arcs[sel]


def _eps_closure(A: ArcArrays, score, bp, frontier):
    while frontier.size:
        arcs = gather_arcs(frontier, A.eps_offsets, A.eps_index)
        if arcs.size == 0:
            break
        cand = score[A.src[arcs]] + A.weight[arcs]
        d, c, a = _best_per_dst(A.dst[arcs], cand, arcs)
        better = c < score[d]
        d, c, a = d[better], c[better], a[better]
        score[d] = c
        bp[d] = a
        frontier = d


def viterbi_beam_decode(graph: Wfst | DecodingGraph, y, params: ModelParameters,
                        cfg: DecodeConfig | None = None, frame_period: float = FRAME_PERIOD) -> DecodeResult:
    """Token passing with acoustic cost ``-scale * (y - omega)`` per emitting arc.

    ``beam=math.inf`` with ``max_active=None`` is exact Viterbi.
    """
    cfg = cfg or DecodeConfig()
    dg = graph if isinstance(graph, DecodingGraph) else DecodingGraph(graph)
    A = dg.arcs
    t0 = time.perf_counter()
    y = np.asarray(y, dtype=np.float64)
    T, L = y.shape
    if len(dg.isyms) != L + 1:
        raise ValueError(f"graph input alphabet has {len(dg.isyms) - 1} units, posteriors have {L}")
    cost = np.zeros((T, L + 1))
    cost[:, 1:] = -cfg.acoustic_scale * (y - params.log_priors)
    S = A.num_states

    score = np.full(S, np.inf)
    bp = np.full(S, -1, dtype=np.int64)
    score[A.start] = 0.0
    _eps_closure(A, score, bp, np.array([A.start]))
    history = []   # per frame 0..T: (states, bp arcs) for every state reached
    reached = np.flatnonzero(score < np.inf)
    history.append((reached, bp[reached]))
    active = _prune(score, reached, cfg)

    for t in range(T):
        arcs = gather_arcs(active, A.emit_offsets, A.emit_index)
        new = np.full(S, np.inf)
        nbp = np.full(S, -1, dtype=np.int64)
        if arcs.size:
            cand = score[A.src[arcs]] + A.weight[arcs] + cost[t, A.ilabel[arcs]]
            d, c, a = _best_per_dst(A.dst[arcs], cand, arcs)
            new[d] = c
            nbp[d] = a
            _eps_closure(A, new, nbp, d)
        reached = np.flatnonzero(new < np.inf)
        if reached.size == 0:
            raise DecodeError(f"no surviving token at frame {t + 1}; beam too tight?")
        history.append((reached, nbp[reached]))
        score = new
        active = _prune(score, reached, cfg)

    total = score[active] + A.final[active]
    if not np.any(np.isfinite(total)):
        raise DecodeError("no token reached a final state")
    best = active[int(np.argmin(total))]
    best_score = float(np.min(total))

    olabels, align = [], []
    state, t = best, T
    while True:
        states, arcs = history[t]
        a = int(arcs[np.searchsorted(states, state)])
        if a < 0:
            break
        if A.olabel[a]:
            olabels.append(int(A.olabel[a]))
        if A.ilabel[a]:
            align.append(int(A.ilabel[a]) - 1)
            t -= 1
        state = int(A.src[a])
    if t != 0 or state != A.start:
        raise DecodeError("inconsistent back-trace")
    olabels.reverse()
    align.reverse()
    elapsed = time.perf_counter() - t0
    return DecodeResult(
        words=[dg.osyms[o] for o in olabels],
        frame_alignment=np.asarray(align, dtype=np.int64),
        score=best_score,
        rtf=elapsed / (T * frame_period),
        elapsed=elapsed,
        frames=T,
        output_labels=olabels,
    )


def _prune(score, reached, cfg: DecodeConfig):
    s = score[reached]
    if math.isfinite(cfg.beam):
        keep = s <= s.min() + cfg.beam
        reached, s = reached[keep], s[keep]
    if cfg.max_active is not None and reached.size > cfg.max_active:
        order = np.argsort(s, kind="stable")[: cfg.max_active]
        reached = np.sort(reached[order])
    return reached


# --- lattice Viterbi ----------------------------------------------------------

class Alignment(NamedTuple):
    path: np.ndarray      # s_0..s_T
    log_score: float

    @property
    def frames(self) -> np.ndarray:
        return self.path[1:]


def forced_align(y, gamma, params: ModelParameters) -> Alignment:
    """Best state sequence whose collapse is ``gamma``; on ties the self-loop wins."""
    y = np.asarray(y, dtype=np.float64)
    g = np.asarray(tuple(gamma), dtype=np.int64)
    T, K = y.shape[0], g.size - 1
    if T < K:
        raise InfeasibleTranscriptError(f"{T} frames cannot cover a transcript needing {K}")
    emit = (y - params.log_priors)[:, g]
    log_stay = params.log_p_stay[g]
    log_next = params.log_p_leave[g[:-1]] + _log(params.state_lm.q[g[:-1], g[1:]])
    delta = np.full(K + 1, -np.inf)
    delta[0] = 0.0
    moved = np.zeros((T, K + 1), dtype=bool)
    for t in range(T):
        stay = delta + log_stay
        move = np.full(K + 1, -np.inf)
        move[1:] = delta[:-1] + log_next
        moved[t] = move > stay
        delta = np.where(moved[t], move, stay) + emit[t]
    if not np.isfinite(delta[K]):
        raise InfeasibleTranscriptError("transcript has zero probability")
    k = K
    pos = np.empty(T + 1, dtype=np.int64)
    for t in range(T, 0, -1):
        pos[t] = k
        if moved[t - 1, k]:
            k -= 1
    pos[0] = k
    return Alignment(g[pos], float(delta[K]))


def state_viterbi(y, params: ModelParameters, initial_state: int = START) -> Alignment:
    """Best unconstrained state sequence under the training HMM (denominator graph)."""
    y = np.asarray(y, dtype=np.float64)
    T, L = y.shape
    ybar = y - params.log_priors
    logm = params.log_transition_matrix()
    delta = np.full(L, -np.inf)
    delta[initial_state] = 0.0
    back = np.zeros((T, L), dtype=np.int64)
    for t in range(T):
        cand = delta[:, None] + logm
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(L)] + ybar[t]
    path = np.empty(T + 1, dtype=np.int64)
    path[T] = int(np.argmax(delta))
    for t in range(T, 0, -1):
        path[t - 1] = back[t - 1, path[t]]
    return Alignment(path, float(np.max(delta)))


def decode_phones(y, params: ModelParameters) -> list[int]:
    """Phoneme sequence of the best training-HMM path (for PER)."""
    path = state_viterbi(y, params).path
    return [s for s in collapse_states(path) if s >= 3]


def ensemble_average(grids: Sequence[np.ndarray]) -> np.ndarray:
    """Log of the frame-wise arithmetic mean of the posterior distributions."""
    if len(grids) == 0:
        raise ValueError("need at least one posterior grid")
    if len({np.shape(g) for g in grids}) != 1:
        raise ValueError("posterior grids have different shapes")
    arr = np.stack([np.asarray(g, dtype=np.float64) for g in grids])
    if len(grids) == 1:
        return arr[0].copy()
    m = arr.max(axis=0)
    return m + np.log(np.mean(np.exp(arr - m), axis=0))
