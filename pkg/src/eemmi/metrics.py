"""Error rates, alignment accuracy and real-time factors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .decode import FRAME_PERIOD


def edit_counts(ref: Sequence, hyp: Sequence) -> tuple[int, int, int]:
    """(substitutions, insertions, deletions) of a minimum-cost Levenshtein alignment.

    Among alignments of equal total cost the one with most substitutions is
    preferred, which is the usual scoring convention.
    """
    n, m = len(ref), len(hyp)
    # cost, subs, ins, dels per cell; one row at a time
    prev = [(j, 0, j, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, 0, i)]
        for j in range(1, m + 1):
            c, s, ins, d = prev[j - 1]
            same = ref[i - 1] == hyp[j - 1]
            best = (c + (not same), s + (not same), ins, d)
            c, s, ins, d = cur[j - 1]
            cand = (c + 1, s, ins + 1, d)
            if cand[0] < best[0]:
                best = cand
            c, s, ins, d = prev[j]
            cand = (c + 1, s, ins, d + 1)
            if cand[0] < best[0]:
                best = cand
            cur.append(best)
        prev = cur
    _, s, ins, d = prev[m]
    return s, ins, d


@dataclass
class ErrorRate:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_length: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self) -> float:
        if self.ref_length == 0:
            return 0.0 if self.errors == 0 else float("inf")
        return self.errors / self.ref_length


def compute_wer(refs: Mapping[str, Sequence], hyps: Mapping[str, Sequence]) -> ErrorRate:
    """Micro-averaged error rate over utterances keyed by id (works for words or phones)."""
    if set(refs) != set(hyps):
        missing = sorted(set(refs) ^ set(hyps))
        raise ValueError(f"utterance ids differ between refs and hyps: {missing[:5]}")
    out = ErrorRate()
    for k in refs:
        s, i, d = edit_counts(list(refs[k]), list(hyps[k]))
        out.substitutions += s
        out.insertions += i
        out.deletions += d
        out.ref_length += len(refs[k])
    return out


compute_per = compute_wer


def alignment_accuracy(gold: Mapping[str, Sequence[int]], hyp: Mapping[str, Sequence[int]]) -> float:
    """Fraction of frames whose state ids agree, pooled over utterances."""
    if set(gold) != set(hyp):
        raise ValueError("utterance ids differ between gold and hypothesis alignments")
    hit = total = 0
    for k in gold:
        g, h = np.asarray(gold[k]), np.asarray(hyp[k])
        if g.shape != h.shape:
            raise ValueError(f"{k}: alignment lengths differ ({g.size} vs {h.size})")
        hit += int(np.sum(g == h))
        total += g.size
    return hit / total if total else 1.0


def measure_rtf(runs: Sequence[tuple[float, int]], frame_period: float = FRAME_PERIOD) -> float:
    """Total decode time over total audio time for ``(elapsed_seconds, frames)`` pairs."""
    audio = sum(f for _, f in runs) * frame_period
    if audio <= 0:
        return 0.0
    return sum(e for e, _ in runs) / audio


@dataclass
class EvalReport:
    system: str
    wer: ErrorRate
    per: ErrorRate | None = None
    alignment_accuracy: float | None = None
    rtf: float | None = None
    graph: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        r = {
            "system": self.system,
            "wer": self.wer.rate,
            "sub": self.wer.substitutions,
            "ins": self.wer.insertions,
            "del": self.wer.deletions,
            "n_ref": self.wer.ref_length,
            "per": self.per.rate if self.per else "",
            "align_acc": "" if self.alignment_accuracy is None else self.alignment_accuracy,
            "rtf": "" if self.rtf is None else self.rtf,
            "graph_states": self.graph.get("states", ""),
            "graph_arcs": self.graph.get("arcs", ""),
            "graph_bytes": self.graph.get("serialized_bytes", ""),
        }
        r.update(self.extra)
        return r


def reports_csv(reports: Sequence[EvalReport]) -> str:
    rows = [r.row() for r in reports]
    cols = list(rows[0]) if rows else []
    for r in rows[1:]:
        cols += [c for c in r if c not in cols]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(_fmt(r.get(c, "")) for c in cols))
    return "\n".join(lines) + "\n"


def reports_table(reports: Sequence[EvalReport]) -> str:
    rows = [r.row() for r in reports]
    if not rows:
        return ""
    cols = list(rows[0])
    cells = [[c for c in cols]] + [[_fmt(r.get(c, ""), 4) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells) + "\n"


def _fmt(v, digits=None) -> str:
    if isinstance(v, float):
        return f"{v:.{digits}f}" if digits else repr(v)
    return str(v)
