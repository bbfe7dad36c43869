"""Feature preparation, the feed-forward acoustic network and training.

The network maps a window of ``2F + 1`` frames to log posteriors over the
``L`` HMM states through tanh hidden layers and a log-softmax output.
Training maximizes the summed per-utterance MMI (or CTC) log-likelihood with
ADAM and global-norm gradient clipping.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, Utterance
from .ctc import CtcLabeling, ctc_best_path_align, ctc_loss_and_grad
from .decode import decode_phones
from .lm import STATE_LM_KINDS, StateLM, estimate_state_lm
from .metrics import edit_counts
from .mmi import DEFAULT_SHIFT_INTERVAL, ModelParameters, log_softmax, mmi_loss_and_grad

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8
LOSS_KINDS = ("mmi", "ctc")


# --- features ---------------------------------------------------------------

def speaker_normalize(corpus: Corpus) -> Corpus:
    """Per-speaker, per-dimension mean/variance normalization (population variance)."""
    by_spk: dict[str, list[Utterance]] = {}
    for u in corpus:
        by_spk.setdefault(u.speaker_id, []).append(u)
    out = {}
    for spk, utts in by_spk.items():
        frames = np.concatenate([np.asarray(u.features, dtype=np.float64) for u in utts])
        mean = frames.mean(axis=0)
        var = frames.var(axis=0)
        low = var < VARIANCE_FLOOR
        if np.any(low):
            logger.warning("speaker %s: %d zero-variance dimension(s); variance floored at %g",
                           spk, int(low.sum()), VARIANCE_FLOOR)
            var = np.where(low, VARIANCE_FLOOR, var)
        std = np.sqrt(var)
        for u in utts:
            out[u.utt_id] = replace(u, features=(np.asarray(u.features, dtype=np.float64) - mean) / std)
    return replace(corpus, utterances=[out[u.utt_id] for u in corpus])


def extract_windows(frames, F: int) -> np.ndarray:
    """Concatenate frames ``t-F..t+F`` for every ``t``, replicating edge frames."""
    if F < 0:
        raise ValueError("context radius must be non-negative")
    frames = np.asarray(frames, dtype=np.float64)
    T = frames.shape[0]
    idx = np.clip(np.arange(T)[:, None] + np.arange(-F, F + 1)[None, :], 0, T - 1)
    return frames[idx].reshape(T, -1)


# --- network ----------------------------------------------------------------

class AcousticNet:
    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray], context: int = 0):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.context = context

    @classmethod
    def create(cls, input_dim: int, hidden: Sequence[int], output_dim: int,
               rng: np.random.Generator, context: int = 0) -> "AcousticNet":
        """Glorot-uniform weights, zero biases. First-layer rows for window
        offset ``k`` are scaled by ``1 / (1 + |k|)`` so that training starts
        out favouring the centre frame; without this, the output timing can
        settle one frame early depending on the draw."""
        sizes = [input_dim, *hidden, output_dim]
        ws, bs = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            lim = math.sqrt(6.0 / (n_in + n_out))
            ws.append(rng.uniform(-lim, lim, size=(n_in, n_out)))
            bs.append(np.zeros(n_out))
        width = 2 * context + 1
        if context and input_dim % width == 0:
            taper = 1.0 / (1.0 + np.abs(np.arange(-context, context + 1)))
            ws[0] *= np.repeat(taper, input_dim // width)[:, None]
        return cls(ws, bs, context)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "AcousticNet":
        return AcousticNet([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.context)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected input of width {self.input_dim}, got shape {x.shape}")
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w + b)
            acts.append(h)
        z = h @ self.weights[-1] + self.biases[-1]
        y = log_softmax(z, axis=1)
        return y, acts

    def backward(self, acts, y, grad_y) -> list[np.ndarray]:
        """Gradients (same order as ``parameters()``) given ``d loss / d y``."""
        g = grad_y - np.exp(y) * grad_y.sum(axis=1, keepdims=True)
        grads = []
        for i in range(len(self.weights) - 1, -1, -1):
            h = acts[i]
            grads.append(g.sum(axis=0))
            grads.append(h.T @ g)
            if i:
                g = (g @ self.weights[i].T) * (1.0 - h * h)
        grads.reverse()
        return grads


def net_forward(net: AcousticNet, windows) -> np.ndarray:
    return net.forward(windows)[0]


# --- optimizer --------------------------------------------------------------

class Adam:
    """ADAM for gradient *ascent* on a list of arrays updated in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p += self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_global_norm(grads: list[np.ndarray], clip_norm: float) -> tuple[list[np.ndarray], float]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > clip_norm:
        scale = clip_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


# --- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    clip_norm: float = 50.0
    batch_size: int = 8
    epochs: int = 20
    valid_fraction: float = 0.05
    seed: int = 0
    shift_interval: int = DEFAULT_SHIFT_INTERVAL
    context: int = 5
    hidden: tuple[int, ...] = (128, 128)
    train_lm: str = "bigram"
    lm_smoothing: float = 0.1
    lr_decay: float = 0.5
    decay_patience: int = 2
    stop_patience: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    split_seed: int | None = None  # train/validation split; defaults to ``seed``

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("learning_rate", "clip_norm", "batch_size", "epochs", "shift_interval"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.valid_fraction < 1:
            raise ValueError("valid_fraction must be in (0, 1)")
        if self.train_lm not in STATE_LM_KINDS:
            raise ValueError(f"train_lm must be one of {STATE_LM_KINDS}")


@dataclass
class Model:
    net: AcousticNet
    params: ModelParameters
    loss_kind: str = "mmi"

    def copy(self) -> "Model":
        return Model(self.net.copy(), self.params.copy(), self.loss_kind)

    def posteriors(self, windows) -> np.ndarray:
        return net_forward(self.net, windows)


@dataclass
class Example:
    """A training utterance with windows prepared."""

    utt_id: str
    windows: np.ndarray
    transcript: tuple[int, ...]
    ctc: CtcLabeling

    @property
    def num_frames(self) -> int:
        return self.windows.shape[0]


def prepare_examples(corpus: Corpus, context: int) -> list[Example]:
    out = []
    for u in corpus:
        out.append(Example(u.utt_id, extract_windows(u.features, context), tuple(u.transcript),
                           CtcLabeling.from_transcript(u.transcript)))
    return out


@dataclass
class StepResult:
    loss: float
    grad_norm: float
    ok: bool = True
    message: str = ""


def utterance_loss_and_grad(y, ex: Example, params: ModelParameters, loss_kind: str, shift_interval: int):
    """``(loss, grad_y, grad_transition_logits, grad_prior_logits)`` for one utterance."""
    if loss_kind == "mmi":
        out = mmi_loss_and_grad(y, ex.transcript, params, shift_interval)
        return out.loss, out.grad_y, out.grad_transition_logits, out.grad_prior_logits
    if loss_kind == "ctc":
        out = ctc_loss_and_grad(y, ex.ctc)
        return out.loss, out.grad, None, None
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def batch_loss_and_grads(model: Model, batch: Sequence[Example], shift_interval: int):
    """Summed loss and gradients over a batch: net gradients followed by
    transition and prior logit gradients (MMI only)."""
    x = np.concatenate([ex.windows for ex in batch])
    y, acts = model.net.forward(x)
    if not np.all(np.isfinite(y)):
        return math.nan, []
    grad_y = np.zeros_like(y)
    L = model.params.L
    ga, gb = np.zeros(L), np.zeros(L)
    total = 0.0
    pos = 0
    for ex in batch:
        n = ex.num_frames
        loss, gy, a, b = utterance_loss_and_grad(y[pos:pos + n], ex, model.params, model.loss_kind,
                                                 shift_interval)
        total += loss
        grad_y[pos:pos + n] = gy
        if a is not None:
            ga += a
            gb += b
        pos += n
    grads = model.net.backward(acts, y, grad_y)
    if model.loss_kind == "mmi":
        grads += [ga, gb]
    return total, grads


def train_step(model: Model, batch: Sequence[Example], config: TrainConfig, optimizer: Adam) -> StepResult:
    if not batch:
        raise ValueError("empty batch")
    loss, grads = batch_loss_and_grads(model, batch, config.shift_interval)
    if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        return StepResult(loss, math.nan, False, f"non-finite loss or gradient ({loss}); step skipped")
    grads, norm = clip_global_norm(grads, config.clip_norm)
    params = model.net.parameters()
    if model.loss_kind == "mmi":
        params += [model.params.transition_logits, model.params.prior_logits]
    optimizer.step(params, grads)
    return StepResult(loss, norm)


def split_corpus(corpus: Corpus, valid_fraction: float, seed: int) -> tuple[list[str], list[str]]:
    if len(corpus) < 2:
        raise ValueError("need at least two utterances to split")
    rng = np.random.default_rng(seed)
    ids = [u.utt_id for u in corpus]
    order = rng.permutation(len(ids))
    n_valid = min(max(1, int(round(valid_fraction * len(ids)))), len(ids) - 1)
    valid = sorted(ids[i] for i in order[:n_valid])
    train = sorted(ids[i] for i in order[n_valid:])
    return train, valid


def phone_error_rate(model: Model, examples: Sequence[Example]) -> tuple[float, float]:
    """Mean validation loss per utterance and phone error rate."""
    errors = ref_len = 0
    loss = 0.0
    for ex in examples:
        y = model.posteriors(ex.windows)
        loss += utterance_loss_and_grad(y, ex, model.params, model.loss_kind, DEFAULT_SHIFT_INTERVAL)[0]
        if model.loss_kind == "mmi":
            hyp = decode_phones(y, model.params)
        else:
            hyp = ctc_best_path_align(y)[1]
        ref = list(ex.ctc.labels)
        s, i, d = edit_counts(ref, hyp)
        errors += s + i + d
        ref_len += len(ref)
    return loss / max(len(examples), 1), errors / max(ref_len, 1)


@dataclass
class TrainResult:
    model: Model
    metrics: list[dict]
    train_ids: list[str]
    valid_ids: list[str]
    best_epoch: int
    diagnostics: list[str] = field(default_factory=list)

    def metrics_csv(self) -> str:
        cols = ["epoch", "train_loss", "valid_loss", "valid_per", "lr"]
        lines = [",".join(cols)]
        for row in self.metrics:
            lines.append(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols))
        return "\n".join(lines) + "\n"


def init_model(corpus: Corpus, config: TrainConfig, loss_kind: str, state_lm: StateLM) -> Model:
    rng = np.random.default_rng(config.seed)
    D = corpus.feature_dim
    net = AcousticNet.create((2 * config.context + 1) * D, config.hidden, corpus.inventory.L, rng,
                             context=config.context)
    return Model(net, ModelParameters.initial(state_lm), loss_kind)


def train(corpus: Corpus, config: TrainConfig | None = None, loss_kind: str = "mmi",
          normalize: bool = True, progress=None) -> TrainResult:
    """Train on a 95/5 (by default) split; returns the best model by validation PER."""
    config = config or TrainConfig()
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
    if normalize:
        corpus = speaker_normalize(corpus)
    split_seed = config.seed if config.split_seed is None else config.split_seed
    train_ids, valid_ids = split_corpus(corpus, config.valid_fraction, split_seed)
    examples = {ex.utt_id: ex for ex in prepare_examples(corpus, config.context)}
    train_ex = sorted((examples[i] for i in train_ids), key=lambda e: (e.num_frames, e.utt_id))
    valid_ex = [examples[i] for i in valid_ids]
    by_id = corpus.by_id()
    state_lm = estimate_state_lm([by_id[i].transcript for i in train_ids], config.train_lm,
                                 config.lm_smoothing, num_states=corpus.inventory.L)
    model = init_model(corpus, config, loss_kind, state_lm)
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng(config.seed + 1)
    batches = [train_ex[i:i + config.batch_size] for i in range(0, len(train_ex), config.batch_size)]

    v_loss, v_per = phone_error_rate(model, valid_ex)
    metrics = [dict(epoch=0, train_loss=math.nan, valid_loss=v_loss, valid_per=v_per, lr=opt.lr)]
    best, best_per, best_epoch = model.copy(), v_per, 0
    since_best = 0
    diagnostics = []
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for bi in rng.permutation(len(batches)):
            res = train_step(model, batches[bi], config, opt)
            if not res.ok:
                diagnostics.append(f"epoch {epoch}: {res.message}")
                logger.warning(res.message)
                continue
            total += res.loss
        v_loss, v_per = phone_error_rate(model, valid_ex)
        metrics.append(dict(epoch=epoch, train_loss=total / len(train_ex), valid_loss=v_loss,
                            valid_per=v_per, lr=opt.lr))
        if progress:
            progress(metrics[-1])
        if v_per < best_per:
            best, best_per, best_epoch, since_best = model.copy(), v_per, epoch, 0
        else:
            since_best += 1
            if since_best >= config.stop_patience:
                break
            if since_best % config.decay_patience == 0:
                opt.lr *= config.lr_decay
    return TrainResult(best, metrics, train_ids, valid_ids, best_epoch, diagnostics)


# --- checkpoints ------------------------------------------------------------
#
# Layout (little-endian): magic "EEMMICK1"; u32 loss kind (0 mmi, 1 ctc);
# u32 state LM kind (index into STATE_LM_KINDS); u32 context F; u32 number of layers n; (n + 1) x u32 layer sizes
# (input .. output = L); per layer f64 weights (in x out, row-major) then f64
# biases; f64 transition logits (L); f64 prior logits (L); f64 state LM (L x L).

CKPT_MAGIC = b"EEMMICK1"


def save_checkpoint(model: Model, path: str | Path) -> None:
    net = model.net
    sizes = net.sizes
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<IIII", LOSS_KINDS.index(model.loss_kind),
                            STATE_LM_KINDS.index(model.params.state_lm.kind), net.context, len(net.weights)))
        f.write(struct.pack(f"<{len(sizes)}I", *sizes))
        for w, b in zip(net.weights, net.biases):
            f.write(w.astype("<f8").tobytes())
            f.write(b.astype("<f8").tobytes())
        f.write(model.params.transition_logits.astype("<f8").tobytes())
        f.write(model.params.prior_logits.astype("<f8").tobytes())
        f.write(model.params.state_lm.q.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> Model:
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    kind, lm_kind, context, n = struct.unpack_from("<IIII", data, 8)
    pos = 24
    sizes = struct.unpack_from(f"<{n + 1}I", data, pos)
    pos += 4 * (n + 1)

    def take(count):
        nonlocal pos
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return arr

    ws, bs = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        ws.append(take(n_in * n_out).reshape(n_in, n_out))
        bs.append(take(n_out))
    L = sizes[-1]
    a, b = take(L), take(L)
    q = take(L * L).reshape(L, L)
    lm = StateLM(STATE_LM_KINDS[lm_kind], q)
    return Model(AcousticNet(ws, bs, context), ModelParameters(a, b, lm), LOSS_KINDS[kind])


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
