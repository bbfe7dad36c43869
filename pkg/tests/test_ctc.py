import math

import numpy as np
import pytest

from eemmi.ctc import CtcInfeasibleError, CtcLabeling, ctc_best_path_align, ctc_loss_and_grad
from eemmi.inventory import BLANK, END, START, Transcript
from oracles import central_diff, ctc_enumerate, random_grid, rel_err

A, B = 3, 4


def test_labeling_from_transcript():
    lab = CtcLabeling.from_transcript(Transcript((START, BLANK, A, BLANK, A, BLANK, END)))
    assert lab.labels == (A, A)
    assert lab.expanded == (BLANK, A, BLANK, A, BLANK)
    assert lab.min_frames() == 3


def test_single_frame():
    y = random_grid(np.random.default_rng(0), 1, 5)
    assert ctc_loss_and_grad(y, CtcLabeling((A,))).loss == pytest.approx(y[0, A], abs=1e-14)


def test_two_frames_three_paths():
    y = random_grid(np.random.default_rng(1), 2, 5)
    e = np.exp(y)
    want = math.log(e[0, BLANK] * e[1, A] + e[0, A] * e[1, BLANK] + e[0, A] * e[1, A])
    assert ctc_loss_and_grad(y, CtcLabeling((A,))).loss == pytest.approx(want, abs=1e-14)


@pytest.mark.parametrize("labels", [(), (A,), (A, B), (A, A), (B, A, B), (A, A, A)])
@pytest.mark.parametrize("T", [3, 5, 6])
def test_matches_enumeration(labels, T):
    lab = CtcLabeling(labels)
    y = random_grid(np.random.default_rng(T * 10 + len(labels)), T, 5)
    if T < lab.min_frames():
        with pytest.raises(CtcInfeasibleError):
            ctc_loss_and_grad(y, lab)
        return
    out = ctc_loss_and_grad(y, lab)
    assert out.loss == pytest.approx(ctc_enumerate(y, labels, BLANK), abs=1e-9)
    assert out.loss <= 0
    assert np.max(np.abs(out.grad.sum(axis=1))) < 1e-9


def test_infeasible_repeats():
    y = random_grid(np.random.default_rng(2), 2, 5)
    with pytest.raises(CtcInfeasibleError):
        ctc_loss_and_grad(y, CtcLabeling((A, A)))


@pytest.mark.parametrize("seed", range(3))
def test_gradient_wrt_logits(seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(7, 6))
    lab = CtcLabeling((A, B, A))

    def loss(v):
        return ctc_loss_and_grad(v - np.log(np.exp(v).sum(axis=1, keepdims=True)), lab).loss

    y = u - np.log(np.exp(u).sum(axis=1, keepdims=True))
    assert rel_err(ctc_loss_and_grad(y, lab).grad, central_diff(loss, u)) < 1e-5


def test_best_path():
    y = np.full((4, 5), -10.0)
    y[[0, 1, 2, 3], [A, A, BLANK, B]] = 0.0
    frames, labels = ctc_best_path_align(y)
    assert list(frames) == [A, A, BLANK, B]
    assert labels == [A, B]
    assert ctc_best_path_align(np.log(np.full((3, 5), 0.01)) + np.eye(5)[[BLANK] * 3] * 5)[1] == []
    tie = np.log(np.full((1, 5), 0.2))
    assert ctc_best_path_align(tie)[0][0] == 0
