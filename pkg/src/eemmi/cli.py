"""Command line interface: ``eemmi gen|train|decode|align|graph|lm|eval``."""

from __future__ import annotations

import argparse
import datetime
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .acoustic import TrainConfig, load_checkpoint, save_checkpoint, train
from .corpus import load_corpus, save_corpus
from .decode import DecodeConfig
from .graphs import build_G, build_H, build_L, build_T_ctc
from .lm import STATE_LM_KINDS, read_arpa
from .metrics import (EvalReport, alignment_accuracy, compute_wer, measure_rtf, reports_csv,
                      reports_table)
from .pipeline import (SCALE_GRID, build_hlg, build_tlg, decode_corpus, model_alignments, posteriors,
                       select_acoustic_scale, word_lm_from_corpus)
from .synth import SyntheticCorpusSpec, generate_corpus
from .wfst import Wfst, compose, graph_stats

log = logging.getLogger("eemmi")


def write_manifest(out_dir: Path, command: str, argv, config: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"manifest.{command}.txt"
    lines = [
        f"command = {command}",
        "argv = " + " ".join(argv),
        f"time = {datetime.datetime.now().isoformat(timespec='seconds')}",
        f"eemmi = {__version__}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
    ]
    lines += [f"{k} = {v}" for k, v in config.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


# --- subcommands --------------------------------------------------------------

def cmd_gen(args, argv):
    spec = SyntheticCorpusSpec.read(args.spec) if args.spec else SyntheticCorpusSpec()
    if args.seed is not None:
        spec.seed = args.seed
    corpus, _ = generate_corpus(spec)
    out = Path(args.out)
    save_corpus(corpus, out)
    (out / "spec.cfg").write_text(spec.to_text())
    write_manifest(out, "gen", argv, {"seed": spec.seed, "utterances": len(corpus)})
    print(f"wrote {len(corpus)} utterances to {out}")


def cmd_train(args, argv):
    corpus = load_corpus(args.corpus)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                      seed=args.seed, context=args.context, hidden=tuple(args.hidden),
                      train_lm=args.train_lm, shift_interval=args.shift_interval,
                      valid_fraction=args.valid_fraction)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(row):
        print("epoch {epoch}: train_loss={train_loss:.4f} valid_loss={valid_loss:.4f} "
              "valid_per={valid_per:.4f} lr={lr:g}".format(**row), flush=True)

    res = train(corpus, cfg, args.loss, progress=progress)
    save_checkpoint(res.model, out / "model.ckpt")
    (out / "metrics.csv").write_text(res.metrics_csv())
    (out / "valid_ids").write_text("\n".join(res.valid_ids) + "\n")
    for d in res.diagnostics:
        print(d, file=sys.stderr)
    write_manifest(out, "train", argv, {"loss": args.loss, "best_epoch": res.best_epoch,
                                        **{k: v for k, v in vars(cfg).items()}})
    print(f"best epoch {res.best_epoch}; model written to {out / 'model.ckpt'}")


def _load_graph(args, corpus, models):
    if args.graph:
        return Wfst.read(args.graph)
    lm = read_arpa(args.lm) if args.lm else word_lm_from_corpus(corpus)
    if models[0].loss_kind == "mmi":
        return build_hlg(models[0].params, corpus, lm)
    return build_tlg(corpus, lm)


def cmd_decode(args, argv):
    corpus = load_corpus(args.corpus)
    models = [load_checkpoint(p) for p in args.model]
    graph = _load_graph(args, corpus, models)
    post = posteriors(models, corpus)
    params = models[0].params
    scale = args.acoustic_scale
    if scale is None:
        scale = 0.7
        if args.tune_on:
            tune = load_corpus(args.tune_on)
            scale, _ = select_acoustic_scale(graph, posteriors(models, tune), params,
                                             {u.utt_id: u.words for u in tune},
                                             DecodeConfig(args.beam, args.max_active))
    cfg = DecodeConfig(args.beam, args.max_active, scale)
    run = decode_corpus(graph, post, params, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "hyp", "w") as f:
        for k, r in run.results.items():
            f.write(k + "\t" + " ".join(r.words) + "\n")
    with open(out / "hyp_align", "w") as f:
        for k, r in run.results.items():
            f.write(k + "\t" + " ".join(map(str, r.frame_alignment)) + "\n")
    with open(out / "timing", "w") as f:
        for k, r in run.results.items():
            f.write(f"{k}\t{r.elapsed!r}\t{r.frames}\n")
    write_manifest(out, "decode", argv, {"models": len(models), "acoustic_scale": scale,
                                         "beam": args.beam, "max_active": args.max_active,
                                         "searches": run.searches, **graph_stats(graph)})
    print(f"decoded {len(run.results)} utterances with {len(models)} model(s), "
          f"{run.searches} searches, acoustic scale {scale}")


def cmd_align(args, argv):
    corpus = load_corpus(args.corpus)
    model = load_checkpoint(args.model)
    al = model_alignments(model, corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "align", "w") as f:
        for k, a in al.items():
            f.write(k + "\t" + " ".join(map(str, a)) + "\n")
    write_manifest(out, "align", argv, {"loss": model.loss_kind})
    print(f"aligned {len(al)} utterances")


def cmd_graph(args, argv):
    if args.action == "stats":
        for p in args.inputs:
            s = graph_stats(Wfst.read(p))
            print(f"{p}\tstates={s['states']}\tarcs={s['arcs']}\tbytes={s['serialized_bytes']}")
        return
    if args.action == "compose":
        if len(args.inputs) != 2:
            raise ValueError("graph compose needs exactly two input graphs")
        g = compose(Wfst.read(args.inputs[0]), Wfst.read(args.inputs[1]))
    else:
        corpus = load_corpus(args.corpus)
        lm = read_arpa(args.lm) if args.lm else word_lm_from_corpus(corpus)
        inv, lex = corpus.inventory, corpus.lexicon
        kind = args.kind
        if kind in ("H", "HLG"):
            if not args.model:
                raise ValueError(f"building {kind} needs --model for the transition probabilities")
            params = load_checkpoint(args.model).params
        if kind == "G":
            g = build_G(lm, lex.words)
        elif kind == "L":
            g = build_L(lex, inv, "eemmi")
        elif kind == "Lctc":
            g = build_L(lex, inv, "ctc")
        elif kind == "H":
            g = build_H(params, inv)
        elif kind == "T":
            g = build_T_ctc(inv)
        elif kind == "HLG":
            g = build_hlg(params, corpus, lm)
        else:
            g = build_tlg(corpus, lm)
    if not args.out:
        raise ValueError("--out is required")
    n = g.write(args.out)
    s = graph_stats(g)
    write_manifest(Path(args.out).parent, "graph", argv, s)
    print(f"wrote {args.out}: states={s['states']} arcs={s['arcs']} bytes={n}")


def cmd_lm(args, argv):
    corpus = load_corpus(args.corpus)
    lm = word_lm_from_corpus(corpus, args.order)
    lm.save(args.out)
    write_manifest(Path(args.out).parent, "lm", argv, {"order": args.order})
    print(f"wrote {args.out}")


def _read_table(path):
    out = {}
    for line in open(path):
        if line.strip():
            k, _, v = line.rstrip("\n").partition("\t")
            out[k] = v.split()
    return out


def cmd_eval(args, argv):
    corpus = load_corpus(args.corpus)
    refs = {u.utt_id: u.words for u in corpus}
    reports = []
    for i, hyp_dir in enumerate(args.hyp):
        d = Path(hyp_dir)
        hyps = _read_table(d / "hyp")
        missing = set(refs) - set(hyps)
        if missing:
            raise ValueError(f"{d}: no hypothesis for {len(missing)} utterance(s)")
        wer = compute_wer(refs, {k: hyps[k] for k in refs})
        acc = rtf = None
        if args.align and i < len(args.align):
            al = {k: [int(x) for x in v] for k, v in _read_table(args.align[i]).items()}
            acc = alignment_accuracy({u.utt_id: u.alignment for u in corpus},
                                     {u.utt_id: al[u.utt_id] for u in corpus})
        if (d / "timing").exists():
            runs = [(float(v[0]), int(v[1])) for v in _read_table(d / "timing").values()]
            rtf = measure_rtf(runs)
        name = args.name[i] if args.name and i < len(args.name) else d.name
        reports.append(EvalReport(name, wer, None, acc, rtf))
    text = reports_table(reports)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(reports_csv(reports))
        (out / "report.txt").write_text(text)
        write_manifest(out, "eval", argv, {"systems": len(reports)})


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eemmi", description="End-to-end MMI acoustic modelling toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic corpus")
    g.add_argument("--spec", help="key=value corpus spec file")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train an acoustic model")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--loss", choices=("mmi", "ctc"), default="mmi")
    t.add_argument("--train-lm", choices=STATE_LM_KINDS, default="bigram")
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--context", type=int, default=5)
    t.add_argument("--hidden", type=int, nargs="+", default=[128, 128])
    t.add_argument("--shift-interval", type=int, default=25)
    t.add_argument("--valid-fraction", type=float, default=0.05)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("decode", help="decode a corpus; several --model flags average posteriors")
    d.add_argument("--corpus", required=True)
    d.add_argument("--model", action="append", required=True)
    d.add_argument("--graph", help="serialized decoding graph (built from --lm or the corpus if absent)")
    d.add_argument("--lm", help="ARPA word LM")
    d.add_argument("--out", required=True)
    d.add_argument("--beam", type=float, default=16.0)
    d.add_argument("--max-active", type=int, default=10000)
    d.add_argument("--acoustic-scale", type=float)
    d.add_argument("--tune-on", help=f"corpus for picking the acoustic scale from {SCALE_GRID}")
    d.set_defaults(func=cmd_decode)

    a = sub.add_parser("align", help="frame alignments (forced for mmi models, best path for ctc)")
    a.add_argument("--corpus", required=True)
    a.add_argument("--model", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_align)

    gr = sub.add_parser("graph", help="build, compose or inspect graphs")
    gr.add_argument("action", choices=("build", "compose", "stats"))
    gr.add_argument("inputs", nargs="*")
    gr.add_argument("--kind", choices=("G", "L", "Lctc", "H", "T", "HLG", "TLG"), default="HLG")
    gr.add_argument("--corpus")
    gr.add_argument("--lm")
    gr.add_argument("--model")
    gr.add_argument("--out")
    gr.set_defaults(func=cmd_graph)

    lm = sub.add_parser("lm", help="estimate an ARPA word LM from corpus text")
    lm.add_argument("--corpus", required=True)
    lm.add_argument("--order", type=int, default=2)
    lm.add_argument("--out", required=True)
    lm.set_defaults(func=cmd_lm)

    e = sub.add_parser("eval", help="score decode outputs (WER, alignment accuracy, RTF)")
    e.add_argument("--corpus", required=True)
    e.add_argument("--hyp", action="append", required=True, help="decode output directory")
    e.add_argument("--align", action="append", help="alignment file, one per --hyp")
    e.add_argument("--name", action="append")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        t0 = time.perf_counter()
        args.func(args, argv)
        log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    except (OSError, ValueError, KeyError, RuntimeError) as e:
        print(f"eemmi {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
