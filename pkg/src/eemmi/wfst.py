"""Tropical-semiring WFSTs: container, composition, trimming, binary I/O.

Label 0 is epsilon in both symbol tables. Weights are costs (``-log p``).

Binary layout (all little-endian)::

    magic      8 bytes   b"EWFST\\x00\\x01\\x00"
    num_states u32
    start      u32
    num_finals u32
    num_arcs   u64
    n_isyms    u32       symbols after epsilon
    n_osyms    u32
    isyms      n_isyms x (u32 byte length, utf-8 bytes)
    osyms      n_osyms x (u32 byte length, utf-8 bytes)
    finals     num_finals x (u32 state, f64 weight)
    arcs       num_arcs x (u32 src, u32 dst, u32 ilabel, u32 olabel, f64 weight)
"""

from __future__ import annotations

import io
import math
import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

EPS = 0
EPS_SYMBOL = "<eps>"
MAGIC = b"EWFST\x00\x01\x00"
_HEADER = struct.Struct("<8sIIIQII")
HEADER_SIZE = _HEADER.size
ARC_DTYPE = np.dtype([("src", "<u4"), ("dst", "<u4"), ("ilabel", "<u4"),
                      ("olabel", "<u4"), ("weight", "<f8")])
FINAL_DTYPE = np.dtype([("state", "<u4"), ("weight", "<f8")])


class WfstError(ValueError):
    pass


class Arc(NamedTuple):
    ilabel: int
    olabel: int
    weight: float
    dst: int


class Wfst:
    def __init__(self, isyms: Sequence[str], osyms: Sequence[str]):
        self.isyms = [EPS_SYMBOL] + [s for s in isyms if s != EPS_SYMBOL]
        self.osyms = [EPS_SYMBOL] + [s for s in osyms if s != EPS_SYMBOL]
        self.arcs: list[list[Arc]] = []
        self.finals: dict[int, float] = {}
        self.start = self.add_state()

    def add_state(self) -> int:
        self.arcs.append([])
        return len(self.arcs) - 1

    def add_arc(self, src: int, ilabel: int, olabel: int, weight: float, dst: int) -> None:
        if not (0 <= ilabel < len(self.isyms) and 0 <= olabel < len(self.osyms)):
            raise WfstError(f"label out of range on arc {src}->{dst}")
        self.arcs[src].append(Arc(ilabel, olabel, float(weight), dst))

    def set_final(self, state: int, weight: float = 0.0) -> None:
        self.finals[state] = float(weight)

    @property
    def num_states(self) -> int:
        return len(self.arcs)

    @property
    def num_arcs(self) -> int:
        return sum(len(a) for a in self.arcs)

    def final_weight(self, state: int) -> float:
        return self.finals.get(state, math.inf)

    def isym(self, name: str) -> int:
        return self.isyms.index(name)

    def osym(self, name: str) -> int:
        return self.osyms.index(name)

    def iter_arcs(self) -> Iterator[tuple[int, Arc]]:
        for s, arcs in enumerate(self.arcs):
            for a in arcs:
                yield s, a

    def __repr__(self) -> str:
        return f"Wfst(states={self.num_states}, arcs={self.num_arcs}, finals={len(self.finals)})"

    # --- serialization ---------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_HEADER.pack(MAGIC, self.num_states, self.start, len(self.finals),
                               self.num_arcs, len(self.isyms) - 1, len(self.osyms) - 1))
        for table in (self.isyms, self.osyms):
            for sym in table[1:]:
                raw = sym.encode("utf-8")
                buf.write(struct.pack("<I", len(raw)))
                buf.write(raw)
        finals = np.array(sorted(self.finals.items()), dtype=FINAL_DTYPE)
        buf.write(finals.tobytes())
        arcs = np.array([(s, a.dst, a.ilabel, a.olabel, a.weight) for s, a in self.iter_arcs()],
                        dtype=ARC_DTYPE)
        buf.write(arcs.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Wfst":
        if len(data) < HEADER_SIZE:
            raise WfstError("truncated WFST header")
        magic, n_states, start, n_finals, n_arcs, n_i, n_o = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise WfstError("bad WFST magic")
        pos = HEADER_SIZE
        tables = []
        for n in (n_i, n_o):
            syms = []
            for _ in range(n):
                (ln,) = struct.unpack_from("<I", data, pos)
                pos += 4
                syms.append(data[pos:pos + ln].decode("utf-8"))
                pos += ln
            tables.append(syms)
        g = cls(tables[0], tables[1])
        g.arcs = [[] for _ in range(n_states)]
        g.start = start
        finals = np.frombuffer(data, dtype=FINAL_DTYPE, count=n_finals, offset=pos)
        pos += finals.nbytes
        for s, w in finals:
            g.finals[int(s)] = float(w)
        arcs = np.frombuffer(data, dtype=ARC_DTYPE, count=n_arcs, offset=pos)
        for src, dst, il, ol, w in arcs:
            g.arcs[int(src)].append(Arc(int(il), int(ol), float(w), int(dst)))
        return g

    def write(self, path: str | Path) -> int:
        data = self.to_bytes()
        Path(path).write_bytes(data)
        return len(data)

    @classmethod
    def read(cls, path: str | Path) -> "Wfst":
        return cls.from_bytes(Path(path).read_bytes())

    # --- array view for search kernels -----------------------------------

    def arrays(self) -> "ArcArrays":
        return ArcArrays.from_wfst(self)


def graph_stats(g: Wfst) -> dict:
    return {"states": g.num_states, "arcs": g.num_arcs, "serialized_bytes": len(g.to_bytes())}


@dataclass
class ArcArrays:
    """CSR arc arrays sorted by source state, split into emitting and
    epsilon-input arcs."""

    num_states: int
    start: int
    final: np.ndarray          # (S,) cost, inf if not final
    src: np.ndarray
    dst: np.ndarray
    ilabel: np.ndarray
    olabel: np.ndarray
    weight: np.ndarray
    emit_offsets: np.ndarray   # arcs of state s with ilabel != 0: emit_index[emit_offsets[s]:emit_offsets[s+1]]
    emit_index: np.ndarray
    eps_offsets: np.ndarray
    eps_index: np.ndarray

    @classmethod
    def from_wfst(cls, g: Wfst) -> "ArcArrays":
        rows = [(s, a.dst, a.ilabel, a.olabel, a.weight) for s, a in g.iter_arcs()]
        arr = np.array(rows, dtype=ARC_DTYPE) if rows else np.zeros(0, dtype=ARC_DTYPE)
        src = arr["src"].astype(np.int64)
        il = arr["ilabel"].astype(np.int64)
        final = np.full(g.num_states, np.inf)
        for s, w in g.finals.items():
            final[s] = w
        S = g.num_states

        def csr(mask):
            idx = np.flatnonzero(mask)
            counts = np.bincount(src[idx], minlength=S)
            return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64), idx

        eo, ei = csr(il != EPS)
        zo, zi = csr(il == EPS)
        return cls(S, g.start, final, src, arr["dst"].astype(np.int64), il,
                   arr["olabel"].astype(np.int64), arr["weight"].astype(np.float64), eo, ei, zo, zi)


def gather_arcs(states: np.ndarray, offsets: np.ndarray, index: np.ndarray) -> np.ndarray:
    """Arc ids leaving ``states`` (in state order, then arc order)."""
    lo = offsets[states]
    cnt = offsets[states + 1] - lo
    total = int(cnt.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    starts = np.repeat(lo - np.concatenate([[0], np.cumsum(cnt)[:-1]]), cnt)
    return index[starts + np.arange(total)]


# --- composition ------------------------------------------------------------

def compose(a: Wfst, b: Wfst, connect_result: bool = True) -> Wfst:
    """Composition with an epsilon-sequencing filter.

    Output-epsilon moves of ``a`` must precede input-epsilon moves of ``b``
    between two matched arcs, so each pair of paths appears once.
    """
    if set(a.osyms) != set(b.isyms):
        raise WfstError("output alphabet of the first WFST differs from the input alphabet of the second")
    remap = {i: b.isyms.index(sym) for i, sym in enumerate(a.osyms)}
    b_by_label: list[dict[int, list[Arc]]] = []
    for arcs in b.arcs:
        d: dict[int, list[Arc]] = {}
        for arc in arcs:
            d.setdefault(arc.ilabel, []).append(arc)
        b_by_label.append(d)

    c = Wfst(a.isyms, b.osyms)
    ids: dict[tuple[int, int, int], int] = {(a.start, b.start, 0): c.start}
    queue = deque([(a.start, b.start, 0)])

    def target(key):
        s = ids.get(key)
        if s is None:
            s = ids[key] = c.add_state()
            queue.append(key)
        return s

    while queue:
        key = queue.popleft()
        qa, qb, f = key
        src = ids[key]
        if qa in a.finals and qb in b.finals:
            c.set_final(src, a.finals[qa] + b.finals[qb])
        for arc in a.arcs[qa]:
            if arc.olabel == EPS:
                if f == 0:
                    c.arcs[src].append(Arc(arc.ilabel, EPS, arc.weight, target((arc.dst, qb, 0))))
                continue
            for barc in b_by_label[qb].get(remap[arc.olabel], ()):
                c.arcs[src].append(Arc(arc.ilabel, barc.olabel, arc.weight + barc.weight,
                                       target((arc.dst, barc.dst, 0))))
        for barc in b_by_label[qb].get(EPS, ()):
            c.arcs[src].append(Arc(EPS, barc.olabel, barc.weight, target((qa, barc.dst, 1))))
    return connect(c) if connect_result else c


def connect(g: Wfst) -> Wfst:
    """Remove states that are not both accessible and co-accessible."""
    acc = np.zeros(g.num_states, dtype=bool)
    acc[g.start] = True
    stack = [g.start]
    rev: list[list[int]] = [[] for _ in range(g.num_states)]
    while stack:
        s = stack.pop()
        for arc in g.arcs[s]:
            rev[arc.dst].append(s)
            if not acc[arc.dst]:
                acc[arc.dst] = True
                stack.append(arc.dst)
    coacc = np.zeros(g.num_states, dtype=bool)
    stack = [s for s in g.finals if acc[s] and g.finals[s] < math.inf]
    coacc[stack] = True
    while stack:
        s = stack.pop()
        for p in rev[s]:
            if not coacc[p]:
                coacc[p] = True
                stack.append(p)
    keep = acc & coacc
    out = Wfst(g.isyms, g.osyms)
    if not keep[g.start]:
        return out  # empty language: a lone start state
    new_id = {}
    order = [g.start] + [s for s in range(g.num_states) if keep[s] and s != g.start]
    for s in order:
        new_id[s] = len(new_id)
    out.arcs = [[] for _ in order]
    for s in order:
        out.arcs[new_id[s]] = [Arc(a.ilabel, a.olabel, a.weight, new_id[a.dst])
                               for a in g.arcs[s] if keep[a.dst]]
        if s in g.finals:
            out.finals[new_id[s]] = g.finals[s]
    out.start = 0
    return out


# --- small-graph utilities (used by tests and diagnostics) ------------------

def linear_acceptor(labels: Sequence[int], syms: Sequence[str]) -> Wfst:
    g = Wfst(syms[1:], syms[1:])
    s = g.start
    for lab in labels:
        n = g.add_state()
        g.add_arc(s, lab, lab, 0.0, n)
        s = n
    g.set_final(s)
    return g


def enumerate_paths(g: Wfst, max_paths: int = 100_000, max_len: int = 64):
    """All successful paths as ``(ilabels, olabels, weight)`` with epsilons
    removed from the label tuples. Raises if the graph has more paths."""
    out = []
    stack = [(g.start, (), (), 0.0, 0)]
    while stack:
        s, il, ol, w, depth = stack.pop()
        if s in g.finals:
            out.append((il, ol, w + g.finals[s]))
            if len(out) > max_paths:
                raise WfstError("too many paths")
        if depth >= max_len:
            continue
        for arc in g.arcs[s]:
            stack.append((arc.dst, il + ((arc.ilabel,) if arc.ilabel else ()),
                          ol + ((arc.olabel,) if arc.olabel else ()), w + arc.weight, depth + 1))
    return out


def shortest_path_weight(g: Wfst) -> float:
    """Cost of the best successful path (Bellman-Ford; no negative cycles assumed)."""
    dist = np.full(g.num_states, np.inf)
    dist[g.start] = 0.0
    for _ in range(g.num_states):
        changed = False
        for s, arc in g.iter_arcs():
            if dist[s] + arc.weight < dist[arc.dst]:
                dist[arc.dst] = dist[s] + arc.weight
                changed = True
        if not changed:
            break
    return min((dist[s] + w for s, w in g.finals.items()), default=math.inf)
