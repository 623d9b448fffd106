import shutil

import numpy as np
import pytest

from gban import experiments as ex
from gban.checkpoint import load_checkpoint
from gban.cli import main
from gban.config import load_config
from gban.fusion import GateReport


@pytest.fixture
def corpus(tiny_corpus, tmp_path):
    """A private copy so tests can break it."""
    dst = tmp_path / "corpus"
    shutil.copytree(tiny_corpus, dst)
    return dst


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestTrain:
    def test_holdout_run(self, corpus, tmp_path, capsys):
        out_dir = tmp_path / "run"
        code, out, _ = run(capsys, "train", "--config", corpus / "gban.cfg", "--out", out_dir)
        assert code == 0
        assert sorted(p.name for p in out_dir.iterdir()) == ["metrics.csv", "model.ckpt", "model_epochs.csv", "run.cfg"]
        assert out == (out_dir / "metrics.csv").read_text()
        table = ex.parse_table(out)
        assert list(table) == ["1", "avg"] and list(table["avg"]) == ["train_wa", "wa", "ua"]
        arrays = load_checkpoint(out_dir / "model.ckpt")
        assert ex.NORM_MEAN in arrays and arrays[ex.NORM_STD].shape == (52,)

    def test_kfold_writes_one_checkpoint_per_fold(self, corpus, tmp_path, capsys):
        out_dir = tmp_path / "kf"
        code, out, _ = run(capsys, "train", "--config", corpus / "gban.cfg", "--kfold", 5, "--out", out_dir)
        assert code == 0
        assert sorted(p.name for p in out_dir.glob("fold*.ckpt")) == [f"fold{k}.ckpt" for k in range(1, 6)]
        table = ex.parse_table(out)
        assert list(table) == ["1", "2", "3", "4", "5", "avg"]
        assert abs(np.mean([table[str(k)]["wa"] for k in range(1, 6)]) - table["avg"]["wa"]) < 1e-6

    def test_same_seed_same_report(self, corpus, tmp_path, capsys):
        reports = []
        for name in ("a", "b"):
            run(capsys, "train", "--config", corpus / "gban.cfg", "--seed", 11, "--out", tmp_path / name)
            reports.append((tmp_path / name / "metrics.csv").read_bytes())
        assert reports[0] == reports[1]
        ckpt = [(tmp_path / n / "model.ckpt").read_bytes() for n in ("a", "b")]
        assert ckpt[0] == ckpt[1]

    def test_missing_wav_fails_before_writing(self, corpus, tmp_path, capsys):
        (corpus / "wav" / "sad_0002.wav").unlink()
        (corpus / "wav" / "happy_0000.wav").unlink()
        out_dir = tmp_path / "never"
        code, _, err = run(capsys, "train", "--config", corpus / "gban.cfg", "--out", out_dir)
        assert code == 2
        assert "happy_0000" in err and "sad_0002" in err
        assert not out_dir.exists()

    def test_config_error_has_line(self, corpus, tmp_path, capsys):
        cfg = corpus / "bad.cfg"
        cfg.write_text("manifest = manifest.jsonl\nbatchsize = 4\n")
        code, _, err = run(capsys, "train", "--config", cfg)
        assert code == 2 and "bad.cfg:2" in err and "batchsize" in err

    def test_too_few_groups_for_kfold(self, corpus, tmp_path, capsys):
        code, _, err = run(capsys, "train", "--config", corpus / "gban.cfg", "--kfold", 7, "--out", tmp_path / "x")
        assert code == 2 and "k=7" in err
        assert not (tmp_path / "x").exists()


class TestEvalInspect:
    @pytest.fixture
    def trained(self, corpus, tmp_path, capsys):
        run(capsys, "train", "--config", corpus / "gban.cfg", "--out", tmp_path / "run")
        return corpus, tmp_path / "run" / "model.ckpt"

    def test_eval(self, trained, tmp_path, capsys):
        corpus, ckpt = trained
        code, out, _ = run(capsys, "eval", "--config", corpus / "gban.cfg", "--checkpoint", ckpt,
                           "--out", tmp_path / "ev")
        assert code == 0
        header, row = out.strip().splitlines()
        assert header == "n,wa,ua" and row.startswith("20,")

    def test_gates(self, trained, tmp_path, capsys):
        corpus, ckpt = trained
        code, out, _ = run(capsys, "inspect", "--config", corpus / "gban.cfg", "--checkpoint", ckpt,
                           "--what", "gates", "--out", tmp_path / "ins")
        assert code == 0
        report = GateReport.from_text((tmp_path / "ins" / "gates.txt").read_text())
        w = report.weights
        assert report.n_samples == 20
        assert w["a_s"] + w["a_t"] == 1.0 and w["h_s"] + w["h_t"] == 1.0

    def test_alignment_matrix_shapes(self, trained, tmp_path, capsys):
        corpus, ckpt = trained
        code, _, _ = run(capsys, "inspect", "--config", corpus / "gban.cfg", "--checkpoint", ckpt,
                         "--what", "alignment", "--out", tmp_path / "ins")
        assert code == 0
        ws = ex.open_workspace(load_config(corpus / "gban.cfg"))
        model, _ = ex.load_model(ckpt, ws)
        samples = ex.load_all(ws)
        for s in samples[:5]:
            alpha = np.loadtxt(tmp_path / "ins" / "alignment" / f"{s.id}_alpha.csv", delimiter=",", ndmin=2)
            beta = np.loadtxt(tmp_path / "ins" / "alignment" / f"{s.id}_beta.csv", delimiter=",", ndmin=2)
            k = model.speech_encoder.output_length(s.frames.n_valid)
            l = model.text_encoder.output_length(max(s.tokens.n_valid, 4))
            assert alpha.shape == (l, k) and beta.shape == (k, l)
            assert np.allclose(alpha.sum(axis=1), 1.0, atol=1e-6)

    def test_incompatible_checkpoint(self, trained, tmp_path, capsys):
        corpus, ckpt = trained
        cfg = corpus / "wide.cfg"
        cfg.write_text((corpus / "gban.cfg").read_text().replace("hidden = 8", "hidden = 12"))
        code, _, err = run(capsys, "eval", "--config", cfg, "--checkpoint", ckpt, "--fusion", "ggf")
        assert code == 2 and "format v1" in err and "shape" in err

    def test_gates_need_ggf(self, corpus, tmp_path, capsys):
        run(capsys, "train", "--config", corpus / "gban.cfg", "--fusion", "concat1", "--out", tmp_path / "c1")
        code, _, err = run(capsys, "inspect", "--config", corpus / "gban.cfg", "--checkpoint",
                           tmp_path / "c1" / "model.ckpt", "--what", "gates")
        assert code == 2 and "ggf" in err


class TestComparisons:
    def test_compare_reps_layout(self, corpus, tmp_path, capsys):
        code, out, _ = run(capsys, "compare-reps", "--config", corpus / "gban.cfg", "--out", tmp_path / "r")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "fold,h_s,h_t,a_s,a_t"
        assert lines[-1].startswith("Avg,")
        assert (tmp_path / "r" / "compare_reps.csv").read_text() == out

    def test_compare_fusion_layout(self, corpus, tmp_path, capsys):
        code, out, _ = run(capsys, "compare-fusion", "--config", corpus / "gban.cfg", "--kfold", 2,
                           "--out", tmp_path / "f")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "fold,Concat-1,Concat-2,GGF"
        assert [line.split(",")[0] for line in lines[1:]] == ["1", "2", "Avg"]


class TestGradcheckAndSynth:
    def test_single_component(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--only", "ggf")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "component,max_rel_error,tolerance,status"
        assert len(lines) == 2 and lines[1].startswith("ggf,") and lines[1].endswith("PASS")

    def test_seeded_runs_agree(self, capsys):
        a = run(capsys, "gradcheck", "--only", "softmax", "conv1d", "--seed", 3)[1]
        b = run(capsys, "gradcheck", "--only", "softmax", "conv1d", "--seed", 3)[1]
        assert a == b

    def test_synth(self, tmp_path, capsys):
        code, out, _ = run(capsys, "synth", "--out", tmp_path / "s", "--n", 2, "--text-only", "--groups", 2)
        assert code == 0 and "8 utterances" in out
        assert len(list((tmp_path / "s" / "wav").iterdir())) == 8
        assert (tmp_path / "s" / "gban.cfg").is_file()

    def test_synth_rejects_both_only_flags(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["synth", "--out", str(tmp_path), "--text-only", "--speech-only"])

    def test_synth_unwritable(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code, _, err = run(capsys, "synth", "--out", blocker / "sub", "--n", 1)
        assert code == 2 and "i/o error" in err
