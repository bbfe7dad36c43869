"""End-to-end MMI acoustic modelling: losses, training, WFST decoding and evaluation."""

__version__ = "0.1.0"

from .inventory import (BLANK, END, START, Lexicon, StateInventory, Transcript, build_inventory,
                        build_transcript, collapse_states)
from .lm import StateLM, WordNgramLM, estimate_state_lm, parse_arpa, read_arpa, score_word_sequence
from .mmi import ModelParameters, brute_force_logprob, mmi_loss_and_grad
from .ctc import CtcLabeling, ctc_loss_and_grad
from .wfst import Wfst, compose, graph_stats
from .graphs import build_G, build_H, build_L, build_T_ctc
from .decode import DecodeConfig, ensemble_average, forced_align, viterbi_beam_decode
from .acoustic import AcousticNet, TrainConfig, extract_windows, net_forward, speaker_normalize, train
from .metrics import EvalReport, alignment_accuracy, compute_wer, measure_rtf
from .synth import SyntheticCorpusSpec, generate_corpus
