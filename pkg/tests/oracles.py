"""Independent reference implementations used by the tests.

These enumerate paths explicitly in the probability or cost domain and share
no code with the package kernels.
"""

import itertools
import math

import numpy as np

from eemmi.inventory import START, collapse_states
from eemmi.lm import StateLM
from eemmi.mmi import ModelParameters


def random_state_lm(rng, L, zero_frac=0.0):
    q = rng.dirichlet(np.ones(L - 1), size=L)
    full = np.zeros((L, L))
    for c in range(L):
        full[c, [d for d in range(L) if d != c]] = q[c]
    return StateLM("bigram", full)


def random_params(rng, L, scale=1.0):
    return ModelParameters(rng.normal(0, scale, L), rng.normal(0, scale, L), random_state_lm(rng, L))


def random_grid(rng, T, L, scale=1.0):
    z = rng.normal(0, scale, (T, L))
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def random_gamma(rng, L, K, first=START):
    g = [first]
    for _ in range(K):
        g.append(int(rng.choice([c for c in range(L) if c != g[-1]])))
    return g


def path_prob(y, params, path):
    """Probability of s_0..s_T (s_0 given) in the probability domain."""
    p0 = 1.0 / (1.0 + np.exp(-params.transition_logits))
    q = params.state_lm.q
    pri = np.exp(params.prior_logits) / np.exp(params.prior_logits).sum()
    prob = 1.0
    for t in range(1, len(path)):
        a, b = path[t - 1], path[t]
        prob *= p0[a] if a == b else (1 - p0[a]) * q[a, b]
        prob *= np.exp(y[t - 1, b]) / pri[b]
    return prob


def enumerate_logprob(y, params, gamma=None, s0=START):
    """log of the sum over all state sequences (optionally consistent with gamma)."""
    T, L = y.shape
    if gamma is not None:
        s0 = gamma[0]
    total = 0.0
    for rest in itertools.product(range(L), repeat=T):
        path = (s0,) + rest
        if gamma is not None and collapse_states(path) != list(gamma):
            continue
        total += path_prob(y, params, path)
    return math.log(total) if total > 0 else -math.inf


def ctc_enumerate(y, labels, blank):
    T, L = y.shape
    total = 0.0
    for path in itertools.product(range(L), repeat=T):
        if [s for s in collapse_states(path) if s != blank] == list(labels):
            total += math.exp(sum(y[t, s] for t, s in enumerate(path)))
    return math.log(total) if total > 0 else -math.inf


def central_diff(f, x, eps=1e-4):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f(x)
        x[i] = old - eps
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b):
    """Norm-wise relative error of ``a`` against reference ``b``."""
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def levenshtein(ref, hyp):
    """Quadratic DP edit distance (full table)."""
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]))
    return d[n][m]


def best_path_exhaustive(g, cost, max_paths=100_000):
    """Min-cost successful path consuming exactly ``T = len(cost)`` input labels.

    ``cost[t][label]`` is the acoustic cost of label at frame t (label 0 unused).
    Costs are accumulated left to right in the same order as token passing.
    Returns (cost, number of complete paths).
    """
    T = len(cost)
    best = math.inf
    count = 0
    stack = [(g.start, 0, 0.0)]
    while stack:
        s, t, w = stack.pop()
        if t == T and s in g.finals:
            count += 1
            if count > max_paths:
                raise OverflowError("too many paths")
            best = min(best, w + g.finals[s])
        for arc in g.arcs[s]:
            if arc.ilabel == 0:
                stack.append((arc.dst, t, w + arc.weight))
            elif t < T:
                stack.append((arc.dst, t + 1, w + arc.weight + cost[t][arc.ilabel]))
    return best, count


def random_decode_graph(rng, L, num_states=None, eps_prob=0.2):
    """Random WFST over unit labels 1..L with word outputs; epsilon arcs only go
    to higher-numbered states so there are no epsilon cycles."""
    from eemmi.wfst import Wfst

    S = num_states or int(rng.integers(2, 6))
    g = Wfst([f"u{c}" for c in range(L)], ["w1", "w2", "w3"])
    for _ in range(S - 1):
        g.add_state()
    for s in range(S):
        for _ in range(int(rng.integers(1, 4))):
            if s < S - 1 and rng.random() < eps_prob:
                g.add_arc(s, 0, int(rng.integers(0, 4)), float(rng.exponential()), int(rng.integers(s + 1, S)))
            else:
                g.add_arc(s, int(rng.integers(1, L + 1)), int(rng.integers(0, 4)), float(rng.exponential()),
                          int(rng.integers(0, S)))
    for s in range(S):
        if rng.random() < 0.5 or s == S - 1:
            g.set_final(s, float(rng.exponential()))
    return g


def mp_mmi_reference(y, gamma, params, dps=30):
    """Loss and grad_y in extended precision (probability domain, no rescaling)."""
    import mpmath

    with mpmath.workdps(dps):
        return _mp_mmi(mpmath.mp, y, gamma, params)


def _mp_mmi(mp, y, gamma, params):
    T, L = y.shape
    ybar = [[mp.exp(mp.mpf(float(v))) for v in row] for row in np.asarray(y) - params.log_priors]
    p0 = [1 / (1 + mp.exp(-mp.mpf(float(a)))) for a in params.transition_logits]
    q = params.state_lm.q
    trans = [[p0[a] if a == b else (1 - p0[a]) * mp.mpf(float(q[a, b])) for b in range(L)] for a in range(L)]

    def fb(states, succ, init, final):
        n = len(states)
        alpha = [init]
        for t in range(T):
            prev = alpha[-1]
            cur = [mp.mpf(0)] * n
            for i in range(n):
                if prev[i]:
                    for j, w in succ[i]:
                        cur[j] += prev[i] * w
            alpha.append([cur[j] * ybar[t][states[j]] for j in range(n)])
        beta = [final]
        for t in range(T - 1, -1, -1):
            nxt = beta[0]
            cur = [mp.fsum(w * ybar[t][states[j]] * nxt[j] for j, w in succ[i]) for i in range(n)]
            beta.insert(0, cur)
        Z = mp.fsum(a * f for a, f in zip(alpha[T], final))
        occ = np.zeros((T, L))
        for t in range(1, T + 1):
            for i in range(n):
                occ[t - 1, states[i]] += float(alpha[t][i] * beta[t][i] / Z)
        return Z, occ

    g = list(gamma)
    K = len(g) - 1
    num_succ = [[(k, trans[g[k]][g[k]])] + ([(k + 1, trans[g[k]][g[k + 1]])] if k < K else []) for k in range(K + 1)]
    zn, occ_n = fb(g, num_succ, [mp.mpf(1)] + [mp.mpf(0)] * K, [mp.mpf(0)] * K + [mp.mpf(1)])
    den_succ = [[(b, trans[a][b]) for b in range(L) if trans[a][b]] for a in range(L)]
    init = [mp.mpf(0)] * L
    init[START] = mp.mpf(1)
    zd, occ_d = fb(list(range(L)), den_succ, init, [mp.mpf(1)] * L)
    return float(mp.log(zn) - mp.log(zd)), occ_n - occ_d
