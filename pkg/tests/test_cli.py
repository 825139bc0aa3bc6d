import hashlib
import os
from pathlib import Path

import pytest

from ctcseq.cli import main

FAST_CONFIG = """
[model]
feat_channels = 6
feat_grid = 6,6
pooled_grid = 3,3
embed_dim = 8
encoder_layers = 1
heads = 2
ffn_hidden = 16

[train]
epochs = 2
batch_size = 4
seed = 7

[data]
frame_size = 32
n_signers = 5
max_letters = 2
"""


def dir_digest(root: Path) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.fixture()
def cfg_file(tmp_path):
    path = tmp_path / "fast.ini"
    path.write_text(FAST_CONFIG)
    return str(path)


class TestSynth:
    def test_same_seed_byte_identical_directories(self, tmp_path, cfg_file, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["synth", "--seed", "5", "--n-clips", "10", "--out", str(out),
                         "--config", cfg_file]) == 0
        assert dir_digest(a) == dir_digest(b)

    def test_config_echo_written(self, tmp_path, cfg_file):
        out = tmp_path / "ds"
        main(["synth", "--seed", "1", "--n-clips", "6", "--out", str(out), "--config", cfg_file])
        echo = (out / "config.resolved.ini").read_text()
        assert "[model]" in echo and "[train]" in echo and "[data]" in echo
        assert "frame_size = 32" in echo

    def test_env_seed_override(self, tmp_path, cfg_file, monkeypatch):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["synth", "--seed", "5", "--n-clips", "6", "--out", str(a), "--config", cfg_file])
        monkeypatch.setenv("CTCSEQ_SEED", "5")
        main(["synth", "--seed", "99", "--n-clips", "6", "--out", str(b), "--config", cfg_file])
        da, db = dir_digest(a), dir_digest(b)
        del da["config.resolved.ini"], db["config.resolved.ini"]
        assert da == db


class TestPipeline:
    @pytest.fixture(scope="class")
    def workspace(self, tmp_path_factory):
        root = tmp_path_factory.mktemp("ws")
        cfg = root / "fast.ini"
        cfg.write_text(FAST_CONFIG)
        data = root / "data"
        assert main(["synth", "--seed", "3", "--n-clips", "12", "--out", str(data),
                     "--config", str(cfg)]) == 0
        run = root / "run"
        assert main(["train", "--data", str(data), "--config", str(cfg),
                     "--out", str(run)]) == 0
        return root

    def test_train_outputs(self, workspace):
        run = workspace / "run"
        assert (run / "best.ckpt").exists()
        assert (run / "epoch.log").exists()
        assert (run / "config.resolved.ini").exists()

    def test_eval_greedy_equals_beam_width_one_report(self, workspace, tmp_path):
        # the decoders coincide on one-hot-dominated outputs, so sharpen
        # the classifier before comparing
        from ctcseq.model import load_checkpoint, save_checkpoint

        data = workspace / "data"
        model = load_checkpoint(workspace / "run" / "best.ckpt")
        model.classifier.weight.data *= 400.0
        model.classifier.bias.data *= 400.0
        ckpt = tmp_path / "sharp.ckpt"
        save_checkpoint(model, ckpt)

        out_g, out_b = tmp_path / "g", tmp_path / "b"
        assert main(["eval", "--ckpt", str(ckpt), "--data", str(data),
                     "--decoder", "greedy", "--out", str(out_g)]) == 0
        assert main(["eval", "--ckpt", str(ckpt), "--data", str(data),
                     "--decoder", "beam", "--beam-width", "1", "--out", str(out_b)]) == 0
        greedy_lines = (out_g / "report.tsv").read_text()
        beam_lines = (out_b / "report.tsv").read_text()
        assert greedy_lines == beam_lines

    def test_decode_prints_a_letter_string(self, workspace, capsys):
        data, ckpt = workspace / "data", workspace / "run" / "best.ckpt"
        clip = (data / "dev.index").read_text().splitlines()[0].split("\t")[0]
        assert main(["decode", "--ckpt", str(ckpt), "--clip", str(data / clip)]) == 0
        printed = capsys.readouterr().out.strip()
        assert set(printed) <= set("abcde")

    def test_eval_beam_lm(self, workspace, tmp_path, capsys):
        data, ckpt = workspace / "data", workspace / "run" / "best.ckpt"
        corpus = tmp_path / "corpus.txt"
        words = [line.split("\t")[1] for line in (data / "train.index").read_text().splitlines()]
        corpus.write_text("\n".join(words) + "\n")
        lm_path = tmp_path / "model.charlm"
        assert main(["lm-train", "--corpus", str(corpus), "--order", "2",
                     "--out", str(lm_path)]) == 0
        assert main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--decoder", "beam-lm",
                     "--lm", str(lm_path), "--alpha", "0.2"]) == 0
        assert "mean letter accuracy" in capsys.readouterr().out


class TestLmTrainCommand:
    def test_round_trip(self, tmp_path, capsys):
        corpus = tmp_path / "c.txt"
        corpus.write_text("ab\nba\nab\n")
        out = tmp_path / "m.charlm"
        assert main(["lm-train", "--corpus", str(corpus), "--order", "1", "--out", str(out)]) == 0
        text = out.read_text()
        assert text.startswith("CHARLM v1 order=1")


class TestErrors:
    def test_missing_file_is_reported(self, tmp_path, capsys):
        code = main(["eval", "--ckpt", str(tmp_path / "nope.ckpt"),
                     "--data", str(tmp_path / "nodata")])
        assert code == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_unknown_flag_nonzero_exit(self):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--bogus-flag", "1"])
        assert exc.value.code != 0

    def test_beam_lm_without_model(self, tmp_path, capsys):
        code = main(["eval", "--ckpt", "x", "--data", "y", "--decoder", "beam-lm"])
        assert code == 1

    def test_bad_config_value_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[train]\nflip_prob = 2.0\n")
        code = main(["synth", "--seed", "1", "--n-clips", "2",
                     "--out", str(tmp_path / "o"), "--config", str(cfg)])
        assert code == 1
        assert not (tmp_path / "o").exists()
