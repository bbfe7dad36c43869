import math
from dataclasses import replace

import numpy as np
import pytest

from eemmi.acoustic import (Adam, AcousticNet, Model, TrainConfig, batch_loss_and_grads, clip_global_norm,
                            extract_windows, load_checkpoint, net_forward, prepare_examples, save_checkpoint,
                            speaker_normalize, train, train_step, utterance_loss_and_grad)
from eemmi.corpus import Corpus, Utterance
from eemmi.inventory import Lexicon, build_inventory, build_transcript
from eemmi.lm import estimate_state_lm
from eemmi.mmi import ModelParameters
from eemmi.synth import SyntheticCorpusSpec, generate_corpus
from oracles import central_diff, random_params, rel_err


def corpus_of(feats_by_speaker):
    inv = build_inventory(["A"])
    lex = Lexicon.from_names({"a": ["A"]}, inv)
    tr = build_transcript(["a"], lex, inv)
    utts = []
    for spk, feats in feats_by_speaker:
        utts.append(Utterance(f"u{len(utts)}", spk, np.asarray(feats, dtype=np.float64), ["a"], tr))
    return Corpus(inv, lex, utts)


def small_corpus(n=80, seed=0, noise=0.3):
    spec = SyntheticCorpusSpec(num_phonemes=4, num_words=6, word_len=(1, 3), sentence_len=(1, 3),
                               feature_dim=4, noise=noise, num_speakers=2, num_utterances=n, seed=seed)
    return generate_corpus(spec)[0]


SMALL = dict(hidden=(16,), context=1, batch_size=4, learning_rate=3e-3, valid_fraction=0.1)


# --- features ---------------------------------------------------------------

def test_normalize_single_speaker():
    out = speaker_normalize(corpus_of([("s", [[1.0], [3.0]])]))
    assert np.allclose(out.utterances[0].features, [[-1.0], [1.0]], atol=1e-15)


def test_normalize_speakers_independently():
    rng = np.random.default_rng(0)
    c = corpus_of([("s1", rng.normal(5, 2, (20, 3))), ("s2", rng.normal(-3, 1, (7, 3))),
                   ("s1", rng.normal(5, 2, (9, 3)))])
    out = speaker_normalize(c)
    for spk in ("s1", "s2"):
        x = np.concatenate([u.features for u in out if u.speaker_id == spk])
        assert np.max(np.abs(x.mean(axis=0))) < 1e-9
        assert np.allclose(x.var(axis=0), 1, atol=1e-9)
    again = speaker_normalize(out)
    for a, b in zip(out, again):
        assert np.max(np.abs(a.features - b.features)) < 1e-9


def test_normalize_constant_dimension(caplog):
    c = corpus_of([("s", [[2.0, 1.0], [2.0, 3.0]])])
    out = speaker_normalize(c)
    assert np.array_equal(out.utterances[0].features[:, 0], [0.0, 0.0])
    assert "variance floored" in caplog.text


def test_windows():
    x = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(extract_windows(x, 0), x)
    w = extract_windows(x, 1)
    assert w.shape == (3, 6)
    assert np.array_equal(w[0], [0, 1, 0, 1, 2, 3])
    assert np.array_equal(w[2], [2, 3, 4, 5, 4, 5])
    one = extract_windows(np.array([[7.0, 8.0]]), 2)
    assert np.array_equal(one, [[7, 8] * 5])
    with pytest.raises(ValueError):
        extract_windows(x, -1)


# --- network ----------------------------------------------------------------

def test_zero_net_is_uniform():
    net = AcousticNet([np.zeros((3, 4)), np.zeros((4, 5))], [np.zeros(4), np.zeros(5)])
    y = net_forward(net, np.random.default_rng(0).normal(size=(6, 3)))
    assert np.allclose(y, -math.log(5), atol=1e-15)


def test_rows_normalized_and_deterministic():
    net = AcousticNet.create(6, (8, 8), 7, np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=(10, 6)) * 3
    y = net_forward(net, x)
    assert np.max(np.abs(np.exp(y).sum(axis=1) - 1)) < 1e-9
    assert np.array_equal(y, net_forward(net, x))
    net2 = AcousticNet.create(6, (8, 8), 7, np.random.default_rng(1))
    assert np.array_equal(y, net_forward(net2, x))
    with pytest.raises(ValueError):
        net_forward(net, np.zeros((2, 5)))


def test_clip_global_norm():
    g = [np.array([60.0, 0.0]), np.array([[80.0]])]
    out, norm = clip_global_norm(g, 50.0)
    assert norm == pytest.approx(100.0)
    assert math.sqrt(sum(float(np.sum(x * x)) for x in out)) == pytest.approx(50.0, abs=1e-9)
    same, _ = clip_global_norm([np.array([3.0, 4.0])], 50.0)
    assert np.array_equal(same[0], [3.0, 4.0])


def tiny_setup(hidden, context=0, seed=0, L=5, T=6, D=1):
    rng = np.random.default_rng(seed)
    net = AcousticNet.create((2 * context + 1) * D, hidden, L, rng, context=context)
    for b in net.biases:
        b[:] = rng.normal(0, 0.3, b.shape)
    params = random_params(rng, L)
    inv_states = [0, 2, 3, 2, 1][: min(L, 5)]
    x = rng.normal(size=(T, (2 * context + 1) * D))
    return net, params, x, inv_states


@pytest.mark.parametrize("loss_kind", ["mmi", "ctc"])
def test_net_through_loss_gradient(loss_kind):
    from eemmi.ctc import CtcLabeling

    from eemmi.acoustic import Example

    # 1 -> 5 softmax layer: 5 weights and 5 biases
    net, params, x, gamma = tiny_setup(hidden=(), D=1)
    assert net.num_parameters() == 10
    ex = Example("u", x, tuple(gamma), CtcLabeling((3,)))
    model = Model(net, params, loss_kind)
    _, grads = batch_loss_and_grads(model, [ex], 25)
    for k, p in enumerate(net.parameters()):
        def f(v, k=k):
            saved = p.copy()
            p[...] = v
            val = utterance_loss_and_grad(net.forward(x)[0], ex, params, loss_kind, 25)[0]
            p[...] = saved
            return val
        assert rel_err(grads[k], central_diff(f, p.copy())) < 1e-4


def test_net_gradient_larger_net():
    from eemmi.acoustic import Example
    from eemmi.ctc import CtcLabeling

    net, params, x, gamma = tiny_setup(hidden=(12, 10), context=1, D=3, seed=3, T=8)
    assert net.num_parameters() <= 1000
    ex = Example("u", x, tuple(gamma), CtcLabeling((3,)))
    _, grads = batch_loss_and_grads(Model(net, params, "mmi"), [ex], 25)
    flat_g = np.concatenate([g.ravel() for g in grads[:-2]])
    fd = []
    for p in net.parameters():
        def f(v, p=p):
            saved = p.copy()
            p[...] = v
            val = utterance_loss_and_grad(net.forward(x)[0], ex, params, "mmi", 25)[0]
            p[...] = saved
            return val
        fd.append(central_diff(f, p.copy()).ravel())
    assert rel_err(flat_g, np.concatenate(fd)) < 1e-4


@pytest.mark.parametrize("loss_kind", ["mmi", "ctc"])
def test_single_step_ascent(loss_kind):
    c = speaker_normalize(small_corpus(4))
    ex = prepare_examples(c, 1)[:1]
    rng = np.random.default_rng(0)
    net = AcousticNet.create(ex[0].windows.shape[1], (8,), c.inventory.L, rng, context=1)
    lm = estimate_state_lm([u.transcript for u in c], num_states=c.inventory.L)
    model = Model(net, ModelParameters.initial(lm), loss_kind)
    before = batch_loss_and_grads(model, ex, 25)[0]
    a0 = model.params.transition_logits.copy()
    res = train_step(model, ex, TrainConfig(learning_rate=1e-5), Adam(1e-5))
    assert res.ok and res.loss == before
    after = batch_loss_and_grads(model, ex, 25)[0]
    assert after >= before
    moved = not np.array_equal(a0, model.params.transition_logits)
    assert moved == (loss_kind == "mmi")


def test_non_finite_loss_aborts_step():
    c = small_corpus(4)
    ex = prepare_examples(c, 0)[:1]
    net = AcousticNet.create(ex[0].windows.shape[1], (4,), c.inventory.L, np.random.default_rng(0))
    net.weights[0][0, 0] = np.nan
    model = Model(net, ModelParameters.initial(estimate_state_lm([u.transcript for u in c],
                                                                 num_states=c.inventory.L)), "mmi")
    res = train_step(model, ex, TrainConfig(), Adam())
    assert not res.ok and "skipped" in res.message
    with pytest.raises(ValueError):
        train_step(model, [], TrainConfig(), Adam())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(valid_fraction=1.0)
    with pytest.raises(ValueError):
        TrainConfig(train_lm="trigram")


# --- training ---------------------------------------------------------------

def test_two_epochs_reproducible():
    c = small_corpus(40)
    cfg = TrainConfig(epochs=2, **SMALL)
    a, b = train(c, cfg), train(c, cfg)
    assert a.metrics_csv() == b.metrics_csv()
    assert [r["epoch"] for r in a.metrics] == [0, 1, 2]
    assert a.metrics_csv().splitlines()[0] == "epoch,train_loss,valid_loss,valid_per,lr"
    assert set(a.train_ids).isdisjoint(a.valid_ids) and len(a.train_ids) + len(a.valid_ids) == 40


@pytest.mark.parametrize("loss_kind", ["mmi", "ctc"])
def test_validation_per_halves(loss_kind):
    c = small_corpus(120)
    res = train(c, TrainConfig(epochs=12, **SMALL), loss_kind)
    per = [r["valid_per"] for r in res.metrics]
    assert min(per[1:]) <= 0.5 * per[0]
    assert res.model.loss_kind == loss_kind


def test_checkpoint_round_trip(tmp_path):
    c = small_corpus(20)
    res = train(c, TrainConfig(epochs=1, **SMALL))
    save_checkpoint(res.model, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.loss_kind == "mmi" and back.net.context == 1
    assert back.params.state_lm.kind == "bigram"
    for p, q in zip(res.model.net.parameters(), back.net.parameters()):
        assert np.array_equal(p, q)
    assert np.array_equal(back.params.transition_logits, res.model.params.transition_logits)
    assert np.array_equal(back.params.state_lm.q, res.model.params.state_lm.q)
    with pytest.raises(ValueError):
        (tmp_path / "bad").write_bytes(b"nope" * 8)
        load_checkpoint(tmp_path / "bad")
