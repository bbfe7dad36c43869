"""MMI training criterion for the one-state phonetic HMM.

The loss for one utterance is ``log P(o, G) - log P(o)``: a forward-backward
pass over the left-to-right lattice of the transcript ``G`` (numerator) and
one over the fully connected state graph driven by the state LM
(denominator). Frames are ``1..T``; row ``t`` of a ``(T, L)`` grid holds frame
``t + 1`` and the ``t = 0`` column of the tables is the non-emitting initial
state.

Recursions run in log scale. Every ``shift_interval`` frames the frame maximum
is subtracted from the table column and added to a running shift, so table
entries stay near zero regardless of ``T``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .inventory import START
from .lm import StateLM

DEFAULT_SHIFT_INTERVAL = 25


class InfeasibleTranscriptError(ValueError):
    pass


class InstanceTooLargeError(ValueError):
    pass


def log_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)


def log_softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


@dataclass
class ModelParameters:
    """Transition logits ``a`` (``p_c(0) = sigmoid(a_c)``), prior logits ``b``
    (``omega = log_softmax(b)``) and the fixed state LM."""

    transition_logits: np.ndarray
    prior_logits: np.ndarray
    state_lm: StateLM

    def __post_init__(self):
        self.transition_logits = np.asarray(self.transition_logits, dtype=np.float64)
        self.prior_logits = np.asarray(self.prior_logits, dtype=np.float64)
        L = self.state_lm.L
        if self.transition_logits.shape != (L,) or self.prior_logits.shape != (L,):
            raise ValueError(f"parameter vectors must have length {L}")

    @classmethod
    def initial(cls, state_lm: StateLM) -> "ModelParameters":
        L = state_lm.L
        return cls(np.zeros(L), np.zeros(L), state_lm)

    @property
    def L(self) -> int:
        return self.state_lm.L

    @property
    def p_stay(self) -> np.ndarray:
        return np.exp(self.log_p_stay)

    @property
    def p_leave(self) -> np.ndarray:
        return 1.0 - self.p_stay

    @property
    def log_p_stay(self) -> np.ndarray:
        return log_sigmoid(self.transition_logits)

    @property
    def log_p_leave(self) -> np.ndarray:
        return log_sigmoid(-self.transition_logits)

    @property
    def log_priors(self) -> np.ndarray:
        return log_softmax(self.prior_logits)

    def log_transition_matrix(self) -> np.ndarray:
        """``log p_{c, c'}``: self-loop on the diagonal, ``p_c(1) q(c, c')`` off it."""
        m = self.log_p_leave[:, None] + _log(self.state_lm.q)
        np.fill_diagonal(m, self.log_p_stay)
        return m

    def copy(self) -> "ModelParameters":
        return replace(self, transition_logits=self.transition_logits.copy(),
                       prior_logits=self.prior_logits.copy())


@dataclass
class FbTables:
    """Forward/backward tables with per-frame shifts removed.

    The true ``log alpha[t]`` is ``log_alpha[t] + shift_alpha[t]`` (same for
    beta). Columns index transcript positions (numerator) or states
    (denominator).
    """

    log_alpha: np.ndarray
    log_beta: np.ndarray
    shift_alpha: np.ndarray
    shift_beta: np.ndarray
    log_total: float

    def slice_totals(self) -> np.ndarray:
        """``log sum_k alpha_t(k) beta_t(k)`` for every ``t``; constant in ``t``."""
        s = self.log_alpha + self.log_beta
        m = np.max(s, axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            tot = np.log(np.sum(np.exp(s - m), axis=1)) + m[:, 0]
        return tot + self.shift_alpha + self.shift_beta

    def log_occupancy(self) -> np.ndarray:
        """Log posterior of each column at frames ``0..T``."""
        return (self.log_alpha + self.log_beta + self.shift_alpha[:, None]
                + self.shift_beta[:, None] - self.log_total)


@dataclass
class LossOutput:
    loss: float
    grad_y: np.ndarray
    grad_transition_logits: np.ndarray
    grad_prior_logits: np.ndarray
    numerator_occupancy: np.ndarray
    denominator_occupancy: np.ndarray
    numerator: FbTables | None = None
    denominator: FbTables | None = None

    def dump(self, prefix) -> None:
        """Write the matrices as text files ``<prefix>.<name>.txt``."""
        for name in ("grad_y", "grad_transition_logits", "grad_prior_logits",
                     "numerator_occupancy", "denominator_occupancy"):
            np.savetxt(f"{prefix}.{name}.txt", np.atleast_2d(getattr(self, name)))
        with open(f"{prefix}.loss.txt", "w") as f:
            f.write(repr(self.loss) + "\n")


def _check_inputs(y, params: ModelParameters, shift_interval: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] < 1:
        raise ValueError("y must be a (T, L) matrix with T >= 1")
    if y.shape[1] != params.L:
        raise ValueError(f"y has {y.shape[1]} columns, model has {params.L} states")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    if int(shift_interval) < 1:
        raise ValueError("shift_interval must be a positive integer")
    return y


def _shift(col: np.ndarray) -> float:
    m = float(np.max(col))
    if m == -np.inf:
        return 0.0
    col -= m
    return m


def numerator_forward_backward(y, gamma, params: ModelParameters,
                               shift_interval: int = DEFAULT_SHIFT_INTERVAL) -> FbTables:
    y = _check_inputs(y, params, shift_interval)
    g = np.asarray(tuple(gamma), dtype=np.int64)
    if g.size == 0 or np.any(g[1:] == g[:-1]):
        raise ValueError("transcript must be non-empty without adjacent repeats")
    T, K = y.shape[0], g.size - 1
    if T < K:
        raise InfeasibleTranscriptError(f"{T} frames cannot cover a transcript needing {K}")
    ybar = y - params.log_priors
    log_stay = params.log_p_stay[g]
    log_next = params.log_p_leave[g[:-1]] + _log(params.state_lm.q[g[:-1], g[1:]])

    la = np.full((T + 1, K + 1), -np.inf)
    sa = np.zeros(T + 1)
    la[0, 0] = 0.0
    acc = 0.0
    for t in range(1, T + 1):
        prev = la[t - 1]
        cur = prev + log_stay
        cur[1:] = np.logaddexp(cur[1:], prev[:-1] + log_next)
        cur += ybar[t - 1, g]
        if t % shift_interval == 0:
            acc += _shift(cur)
        la[t] = cur
        sa[t] = acc

    lb = np.full((T + 1, K + 1), -np.inf)
    sb = np.zeros(T + 1)
    lb[T, K] = 0.0
    acc = 0.0
    for t in range(T - 1, -1, -1):
        nxt = lb[t + 1] + ybar[t, g]
        cur = nxt + log_stay
        cur[:-1] = np.logaddexp(cur[:-1], nxt[1:] + log_next)
        if (T - t) % shift_interval == 0:
            acc += _shift(cur)
        lb[t] = cur
        sb[t] = acc

    log_total = float(la[T, K] + sa[T])
    if not np.isfinite(log_total):
        raise InfeasibleTranscriptError("transcript has zero probability under the state LM")
    return FbTables(la, lb, sa, sb, log_total)


def denominator_forward_backward(y, params: ModelParameters,
                                 shift_interval: int = DEFAULT_SHIFT_INTERVAL,
                                 initial_state: int = START) -> FbTables:
    y = _check_inputs(y, params, shift_interval)
    T, L = y.shape
    ybar = y - params.log_priors
    trans = np.exp(params.log_transition_matrix())

    la = np.full((T + 1, L), -np.inf)
    sa = np.zeros(T + 1)
    la[0, initial_state] = 0.0
    acc = 0.0
    with np.errstate(divide="ignore"):
        for t in range(1, T + 1):
            prev = la[t - 1]
            m = np.max(prev)
            cur = np.log(np.exp(prev - m) @ trans) + m + ybar[t - 1]
            if t % shift_interval == 0:
                acc += _shift(cur)
            la[t] = cur
            sa[t] = acc

        lb = np.full((T + 1, L), -np.inf)
        sb = np.zeros(T + 1)
        lb[T] = 0.0
        acc = 0.0
        for t in range(T - 1, -1, -1):
            nxt = lb[t + 1] + ybar[t]
            m = np.max(nxt)
            cur = np.log(trans @ np.exp(nxt - m)) + m
            if (T - t) % shift_interval == 0:
                acc += _shift(cur)
            lb[t] = cur
            sb[t] = acc

    top = np.max(la[T])
    log_total = float(np.log(np.sum(np.exp(la[T] - top))) + top + sa[T])
    return FbTables(la, lb, sa, sb, log_total)


def _num_stats(y, g, params, tab: FbTables, L: int, chunk: int = 2048):
    """State occupancies (T x L) plus expected self-loop and exit counts per
    transcript position, computed a block of frames at a time."""
    T = y.shape[0]
    ybar = y - params.log_priors
    log_stay = params.log_p_stay[g]
    log_next = params.log_p_leave[g[:-1]] + _log(params.state_lm.q[g[:-1], g[1:]])
    onehot = np.zeros((g.size, L))
    onehot[np.arange(g.size), g] = 1.0
    occ = np.zeros((T, L))
    self_cnt = np.zeros(g.size)
    exit_cnt = np.zeros(g.size)
    for lo in range(0, T, chunk):
        hi = min(T, lo + chunk)
        # frames lo+1..hi; "base" is the forward score one frame earlier
        base = tab.log_alpha[lo:hi] + tab.shift_alpha[lo:hi, None]
        after = tab.log_beta[lo + 1:hi + 1] + tab.shift_beta[lo + 1:hi + 1, None] + ybar[lo:hi][:, g]
        post = tab.log_alpha[lo + 1:hi + 1] + tab.shift_alpha[lo + 1:hi + 1, None] + after - ybar[lo:hi][:, g]
        occ[lo:hi] = np.exp(post - tab.log_total) @ onehot
        self_cnt += np.exp(base + log_stay + after - tab.log_total).sum(axis=0)
        if g.size > 1:
            exit_cnt[:-1] += np.exp(base[:, :-1] + log_next + after[:, 1:] - tab.log_total).sum(axis=0)
    return occ, self_cnt, exit_cnt


def mmi_loss_and_grad(y, gamma, params: ModelParameters,
                      shift_interval: int = DEFAULT_SHIFT_INTERVAL,
                      keep_tables: bool = False) -> LossOutput:
    """Loss ``log P(G | o)`` and its gradients.

    ``grad_y`` is taken with ``y`` treated as free inputs; it equals the
    difference of the numerator and denominator state occupancies, so each
    row sums to zero and it passes unchanged through a log-softmax layer.
    """
    y = _check_inputs(y, params, shift_interval)
    g = np.asarray(tuple(gamma), dtype=np.int64)
    T, L = y.shape
    num = numerator_forward_backward(y, g, params, shift_interval)
    den = denominator_forward_backward(y, params, shift_interval, initial_state=int(g[0]))

    onehot = np.zeros((g.size, L))
    onehot[np.arange(g.size), g] = 1.0
    occ_num, self_k, exit_k = _num_stats(y, g, params, num, L)
    occ_den_full = np.exp(den.log_occupancy())
    occ_den = occ_den_full[1:]
    grad_y = occ_num - occ_den

    p_stay = params.p_stay
    num_self = self_k @ onehot
    num_out = (self_k + exit_k) @ onehot
    ybar = y - params.log_priors
    den_self = np.exp(den.log_alpha[:-1] + den.shift_alpha[:-1, None] + params.log_p_stay
                      + ybar + den.log_beta[1:] + den.shift_beta[1:, None] - den.log_total).sum(axis=0)
    den_out = occ_den_full[:-1].sum(axis=0)
    grad_a = (num_self - p_stay * num_out) - (den_self - p_stay * den_out)

    grad_omega = -grad_y.sum(axis=0)
    pri = np.exp(params.log_priors)
    grad_b = grad_omega - pri * grad_omega.sum()

    return LossOutput(
        loss=num.log_total - den.log_total,
        grad_y=grad_y,
        grad_transition_logits=grad_a,
        grad_prior_logits=grad_b,
        numerator_occupancy=occ_num,
        denominator_occupancy=occ_den,
        numerator=num if keep_tables else None,
        denominator=den if keep_tables else None,
    )


def brute_force_logprob(y, params: ModelParameters, gamma=None, max_sequences: int = 10**7) -> float:
    """Exact log-sum over explicitly enumerated state sequences.

    With ``gamma`` given, only sequences ``s_0 = gamma[0], s_1..s_T`` whose
    run-length collapse equals ``gamma`` are counted (``-inf`` if none);
    otherwise every sequence starting at ``start`` is. Sequences are built one
    frame at a time as a dense tensor of shape ``(L,) * t``.
    """
    y = np.asarray(y, dtype=np.float64)
    T, L = y.shape
    if float(L) ** T > max_sequences:
        raise InstanceTooLargeError(f"{L}**{T} sequences exceed the limit of {max_sequences}")
    ybar = y - params.log_priors
    logp = params.log_transition_matrix()
    g = None if gamma is None else np.asarray(tuple(gamma), dtype=np.int64)
    s0 = START if g is None else int(g[0])
    if g is not None:
        # state that would extend the collapsed prefix matched so far
        g_next = np.append(g[1:], -1)

    score = np.array(0.0)
    last = np.array(s0)
    pos = np.array(0)                   # matched prefix length - 1; -1 = dead
    for t in range(T):
        score = score[..., None] + logp[last] + ybar[t]
        new = np.broadcast_to(np.arange(L), score.shape)
        if g is not None:
            p = np.broadcast_to(pos[..., None], score.shape)
            stay = new == last[..., None]
            advance = new == g_next[np.maximum(p, 0)]
            pos = np.where(p < 0, -1, np.where(stay, p, np.where(advance, p + 1, -1)))
        last = new
    if g is not None:
        score = np.where(pos == g.size - 1, score, -np.inf)
    flat = score.ravel()
    m = np.max(flat)
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.sum(np.exp(flat - m))))
