"""CTC loss and best-path alignment, sharing the MMI state inventory.

CTC only uses the blank and phoneme outputs; ``start``/``end`` columns of the
grid are never on a CTC path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .inventory import BLANK, Transcript, collapse_states


class CtcInfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class CtcLabeling:
    labels: tuple[int, ...]
    blank: int = BLANK

    @classmethod
    def from_transcript(cls, gamma: Transcript, blank: int = BLANK) -> "CtcLabeling":
        return cls(tuple(gamma.phonemes()), blank)

    @property
    def expanded(self) -> tuple[int, ...]:
        out = [self.blank]
        for lab in self.labels:
            out += [lab, self.blank]
        return tuple(out)

    def min_frames(self) -> int:
        repeats = sum(1 for a, b in zip(self.labels, self.labels[1:]) if a == b)
        return len(self.labels) + repeats


@dataclass
class CtcOutput:
    loss: float
    grad: np.ndarray
    occupancy: np.ndarray


def ctc_loss_and_grad(y, labeling: CtcLabeling) -> CtcOutput:
    """``log P_ctc(labels | y)`` and its gradient.

    The gradient is ``occupancy - exp(y)``: the derivative with respect to the
    logits of the log-softmax that produced ``y``. Rows sum to zero.
    """
    y = np.asarray(y, dtype=np.float64)
    T, L = y.shape
    ext = np.asarray(labeling.expanded, dtype=np.int64)
    S = ext.size
    if T < labeling.min_frames():
        raise CtcInfeasibleError(f"{T} frames cannot emit {len(labeling.labels)} labels")
    # skip transitions s-2 -> s: allowed onto a label that differs from the previous label
    skip = np.zeros(S, dtype=bool)
    skip[3::2] = ext[3::2] != ext[1:-2:2]
    emit = y[:, ext]

    la = np.full((T, S), -np.inf)
    la[0, 0] = emit[0, 0]
    if S > 1:
        la[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = la[t - 1]
        cur = prev.copy()
        cur[1:] = np.logaddexp(cur[1:], prev[:-1])
        cur[2:] = np.where(skip[2:], np.logaddexp(cur[2:], prev[:-2]), cur[2:])
        la[t] = cur + emit[t]

    lb = np.full((T, S), -np.inf)
    lb[T - 1, S - 1] = 0.0
    if S > 1:
        lb[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = lb[t + 1] + emit[t + 1]
        cur = nxt.copy()
        cur[:-1] = np.logaddexp(cur[:-1], nxt[1:])
        cur[:-2] = np.where(skip[2:], np.logaddexp(cur[:-2], nxt[2:]), cur[:-2])
        lb[t] = cur

    last = la[T - 1, S - 1] if S == 1 else np.logaddexp(la[T - 1, S - 1], la[T - 1, S - 2])
    log_total = float(last)
    if not np.isfinite(log_total):
        raise CtcInfeasibleError("labeling has zero probability")
    occ_ext = np.exp(la + lb - log_total)
    onehot = np.zeros((S, L))
    onehot[np.arange(S), ext] = 1.0
    occ = occ_ext @ onehot
    return CtcOutput(log_total, occ - np.exp(y), occ)


def ctc_best_path_align(y, blank: int = BLANK) -> tuple[np.ndarray, list[int]]:
    """Per-frame argmax (ties go to the lowest state id) and collapsed labels."""
    frames = np.argmax(np.asarray(y), axis=1)
    labels = [s for s in collapse_states(frames) if s != blank]
    return frames, labels
