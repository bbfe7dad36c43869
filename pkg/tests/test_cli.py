import pytest

from eemmi.cli import main

SPEC = """num_phonemes = 4
num_words = 5
word_len = 1, 2
sentence_len = 1, 2
feature_dim = 3
noise = 0.2
num_speakers = 2
num_utterances = 24
seed = 3
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "s.cfg").write_text(SPEC)
    assert main(["gen", "--spec", str(d / "s.cfg"), "--out", str(d / "corpus")]) == 0
    for loss in ("mmi", "ctc"):
        rc = main(["train", "--corpus", str(d / "corpus"), "--out", str(d / loss), "--loss", loss,
                   "--epochs", "2", "--hidden", "8", "--context", "1", "--valid-fraction", "0.2"])
        assert rc == 0
    return d


def test_gen_writes_corpus_and_manifest(work):
    c = work / "corpus"
    for name in ("phones.txt", "lexicon.txt", "text", "utt2spk", "align", "spec.cfg", "manifest.gen.txt"):
        assert (c / name).exists(), name
    assert len(list((c / "feats").iterdir())) == 24
    manifest = (c / "manifest.gen.txt").read_text()
    assert "seed = 3" in manifest and "numpy = " in manifest


def test_train_outputs(work):
    for loss in ("mmi", "ctc"):
        d = work / loss
        assert (d / "model.ckpt").exists()
        rows = (d / "metrics.csv").read_text().splitlines()
        assert rows[0] == "epoch,train_loss,valid_loss,valid_per,lr" and len(rows) >= 2
        assert f"loss = {loss}" in (d / "manifest.train.txt").read_text()


def test_train_lm_flag(work):
    rc = main(["train", "--corpus", str(work / "corpus"), "--out", str(work / "uni"), "--train-lm", "uniform",
               "--epochs", "1", "--hidden", "8", "--context", "0", "--valid-fraction", "0.2"])
    assert rc == 0
    assert "train_lm = uniform" in (work / "uni" / "manifest.train.txt").read_text()


def test_decode_align_eval(work, capsys):
    c = str(work / "corpus")
    models = ["--model", str(work / "mmi" / "model.ckpt")]
    assert main(["decode", "--corpus", c, *models, *models, "--out", str(work / "dec"),
                 "--acoustic-scale", "0.7"]) == 0
    assert "2 model(s), 24 searches" in capsys.readouterr().out
    assert main(["align", "--corpus", c, "--model", str(work / "mmi" / "model.ckpt"),
                 "--out", str(work / "al")]) == 0
    assert main(["decode", "--corpus", c, "--model", str(work / "ctc" / "model.ckpt"), "--out",
                 str(work / "dec_ctc"), "--tune-on", c]) == 0
    assert main(["eval", "--corpus", c, "--hyp", str(work / "dec"), "--align", str(work / "al" / "align"),
                 "--name", "eemmi", "--hyp", str(work / "dec_ctc"), "--name", "ctc",
                 "--out", str(work / "rep")]) == 0
    csv = (work / "rep" / "report.csv").read_text().splitlines()
    assert csv[0].startswith("system,wer") and [r.split(",")[0] for r in csv[1:]] == ["eemmi", "ctc"]
    assert (work / "rep" / "report.txt").exists() and (work / "rep" / "manifest.eval.txt").exists()
    assert len((work / "dec" / "hyp").read_text().splitlines()) == 24


def test_graph_and_lm(work, capsys):
    c = str(work / "corpus")
    g = work / "graphs"
    g.mkdir(exist_ok=True)
    assert main(["lm", "--corpus", c, "--out", str(g / "lm.arpa")]) == 0
    assert main(["graph", "build", "--kind", "L", "--corpus", c, "--out", str(g / "L.fst")]) == 0
    assert main(["graph", "build", "--kind", "G", "--corpus", c, "--lm", str(g / "lm.arpa"),
                 "--out", str(g / "G.fst")]) == 0
    assert main(["graph", "compose", str(g / "L.fst"), str(g / "G.fst"), "--out", str(g / "LG.fst")]) == 0
    assert main(["graph", "build", "--kind", "HLG", "--corpus", c, "--model", str(work / "mmi" / "model.ckpt"),
                 "--out", str(g / "HLG.fst")]) == 0
    capsys.readouterr()
    assert main(["graph", "stats", str(g / "LG.fst"), str(g / "HLG.fst")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 2 and "arcs=" in out[0]
    assert main(["decode", "--corpus", c, "--model", str(work / "mmi" / "model.ckpt"),
                 "--graph", str(g / "HLG.fst"), "--out", str(work / "dec_g")]) == 0


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as e:
        main(["train", "--no-such-flag"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


def test_runtime_error_exit_code(tmp_path, capsys):
    assert main(["train", "--corpus", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 1
    assert "error" in capsys.readouterr().err
    assert main(["graph", "build", "--kind", "H", "--corpus", str(tmp_path)]) == 1
