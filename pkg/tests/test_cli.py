"""CLI subcommands: exit codes, file contracts, determinism."""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from moodcap.cli import main
from moodcap.config import RunConfig


@pytest.fixture(scope="module")
def toy_dir(tmp_path_factory):
    """Synth corpus + short training run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli_toy")
    assert main(["synth", "--out", str(root), "--n-images", "30", "--seed", "3"]) == 0
    config = root / "config.json"
    assert main(["train", "--config", str(config), "--epochs", "4",
                 "--lr", "0.01"]) == 0
    return root


class TestSynth:
    def test_writes_all_files_and_config(self, tmp_path):
        out = tmp_path / "corpus"
        assert main(["synth", "--out", str(out), "--n-images", "12"]) == 0
        for name in ("features.saft", "train.tsv", "val.tsv", "test.tsv",
                     "lexicon.tsv", "config.json"):
            assert (out / name).exists(), name

    def test_deterministic_files(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["synth", "--out", str(out), "--n-images", "10",
                         "--seed", "9"]) == 0
        for name in ("features.saft", "train.tsv", "lexicon.tsv"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


class TestTrain:
    def test_missing_feature_file_exits_2_with_path(self, tmp_path, capsys):
        cfg = RunConfig()
        cfg.paths.features = str(tmp_path / "nope.saft")
        cfg.paths.train_captions = str(tmp_path / "train.tsv")
        (tmp_path / "train.tsv").write_text("img1\tpos\ta nice cat\n")
        path = tmp_path / "cfg.json"
        path.write_text(cfg.to_json())
        assert main(["train", "--config", str(path)]) == 2
        assert "nope.saft" in capsys.readouterr().err

    def test_missing_config_paths_exit_2(self, capsys):
        assert main(["train"]) == 2

    def test_caption_without_features_exits_3(self, toy_dir, tmp_path, capsys):
        extra = (toy_dir / "train.tsv").read_text() + "ghost_img\tpos\ta nice cat\n"
        bad_captions = tmp_path / "train.tsv"
        bad_captions.write_text(extra)
        cfg = RunConfig.from_file(toy_dir / "config.json")
        cfg.paths.train_captions = str(bad_captions)
        path = tmp_path / "cfg.json"
        path.write_text(cfg.to_json())
        assert main(["train", "--config", str(path), "--epochs", "1"]) == 3
        assert "ghost_img" in capsys.readouterr().err

    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"model": {"regionz": 4}}))
        assert main(["train", "--config", str(path)]) == 2
        assert "regionz" in capsys.readouterr().err

    def test_checkpoints_and_log_written(self, toy_dir):
        assert (toy_dir / "checkpoints" / "best.ckpt").exists()
        assert (toy_dir / "checkpoints" / "last.ckpt").exists()
        log = (toy_dir / "train.log").read_text().splitlines()
        assert log[0].startswith("# started ")
        assert len(log) == 5  # header + 4 epochs
        assert all(line.startswith("epoch=") for line in log[1:])

    def test_config_echo_is_loadable_config(self, toy_dir, tmp_path, capsys):
        assert main(["train", "--config", str(toy_dir / "config.json"),
                     "--epochs", "1"]) == 0
        out = capsys.readouterr().out
        echoed, _ = json.JSONDecoder().raw_decode(out[out.index("{"):])
        rt = RunConfig.from_dict(echoed)
        assert rt.train.epochs == 1

    def test_attend_variant_trains_without_sentiment_parameters(self, toy_dir):
        from moodcap.checkpoint import load_checkpoint
        assert main(["train", "--config", str(toy_dir / "config.json"),
                     "--epochs", "1", "--variant", "attend"]) == 0
        params, config, _ = load_checkpoint(str(toy_dir / "checkpoints" / "best.ckpt"))
        assert config.variant.value == "attend"
        assert "E1_table" not in params.values and "W_s" not in params.values
        # restore the sentiment-aware checkpoint for the tests that follow
        assert main(["train", "--config", str(toy_dir / "config.json"),
                     "--epochs", "4", "--lr", "0.01"]) == 0


class TestGenerateEvaluate:
    def test_generate_writes_parseable_output(self, toy_dir):
        out = toy_dir / "gen.tsv"
        assert main(["generate", "--config", str(toy_dir / "config.json"),
                     "--out", str(out)]) == 0
        rows = [line.split("\t") for line in out.read_text().splitlines()]
        assert all(len(r) == 4 for r in rows)
        labels = {r[1] for r in rows}
        assert labels == {"pos", "neg"}
        float(rows[0][3])  # log_prob parses

    def test_generate_beam1_matches_default_greedy(self, toy_dir):
        a, b = toy_dir / "g1.tsv", toy_dir / "g2.tsv"
        assert main(["generate", "--config", str(toy_dir / "config.json"),
                     "--out", str(a)]) == 0
        assert main(["generate", "--config", str(toy_dir / "config.json"),
                     "--beam", "1", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_generate_reruns_byte_identical(self, toy_dir):
        a, b = toy_dir / "r1.tsv", toy_dir / "r2.tsv"
        for out in (a, b):
            assert main(["generate", "--config", str(toy_dir / "config.json"),
                         "--beam", "2", "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_contrastive_emits_three_lines_per_image(self, toy_dir):
        out = toy_dir / "con.tsv"
        assert main(["generate", "--config", str(toy_dir / "config.json"),
                     "--contrastive", "--out", str(out)]) == 0
        rows = [line.split("\t") for line in out.read_text().splitlines()]
        per_image = {}
        for r in rows:
            per_image.setdefault(r[0], []).append(r[1])
        assert all(sorted(v) == ["neg", "neutral", "pos"] for v in per_image.values())

    def test_attention_dump(self, toy_dir):
        out = toy_dir / "gen_att.tsv"
        dump = toy_dir / "att.tsv"
        assert main(["generate", "--config", str(toy_dir / "config.json"),
                     "--out", str(out), "--attention-dump", str(dump)]) == 0
        row = dump.read_text().splitlines()[0].split("\t")
        weights = np.array([float(x) for x in row[3].split()])
        assert abs(weights.sum() - 1.0) < 1e-6

    def test_evaluate_generated_output_without_modification(self, toy_dir, capsys):
        gen = toy_dir / "gen.tsv"
        assert main(["evaluate", "--generated", str(gen),
                     "--references", str(toy_dir / "test.tsv"),
                     "--lexicon", str(toy_dir / "lexicon.tsv")]) == 0
        out = capsys.readouterr().out
        assert "Senti" in out and "Avg" in out and "METEOR" in out

    def test_identical_candidates_score_100(self, toy_dir, tmp_path, capsys):
        refs = [line.split("\t") for line in (toy_dir / "test.tsv").read_text().splitlines()]
        gen = tmp_path / "perfect.tsv"
        with open(gen, "w") as fh:
            seen = set()
            for image_id, label, text in refs:
                if label in ("pos", "neg") and (image_id, label) not in seen:
                    seen.add((image_id, label))
                    fh.write(f"{image_id}\t{label}\t{text}\t0.0\n")
        assert main(["evaluate", "--generated", str(gen),
                     "--references", str(toy_dir / "test.tsv"),
                     "--lexicon", str(toy_dir / "lexicon.tsv")]) == 0
        out = capsys.readouterr().out
        pos_row = next(line for line in out.splitlines() if line.startswith("Pos"))
        assert "100.00" in pos_row

    def test_mismatched_ids_exit_3(self, toy_dir, tmp_path, capsys):
        gen = tmp_path / "bad.tsv"
        gen.write_text("ghost_image\tpos\ta nice cat\t0.0\n")
        assert main(["evaluate", "--generated", str(gen),
                     "--references", str(toy_dir / "test.tsv"),
                     "--lexicon", str(toy_dir / "lexicon.tsv")]) == 3
        assert "ghost_image" in capsys.readouterr().err

    def test_checkpoint_variant_mismatch_exit_2(self, toy_dir):
        assert main(["generate", "--config", str(toy_dir / "config.json"),
                     "--variant", "attend"]) == 2


class TestGradcheckCli:
    def test_dropout_refused(self, capsys):
        assert main(["gradcheck", "--dropout", "0.5"]) == 2
        assert "dropout" in capsys.readouterr().err

    def test_json_output_shape(self, capsys, monkeypatch):
        import moodcap.cli as cli

        monkeypatch.setattr(
            cli, "run_gradcheck",
            lambda **kw: {"W_h": 1e-8, "b": 2e-9})
        assert main(["gradcheck", "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["pass"] is True
        assert payload["worst_param"] == "W_h"

    def test_failure_exit_code_names_parameter(self, capsys, monkeypatch):
        import moodcap.cli as cli

        monkeypatch.setattr(cli, "run_gradcheck", lambda **kw: {"U_a": 0.5})
        assert main(["gradcheck"]) == 1
        assert "U_a" in capsys.readouterr().out
