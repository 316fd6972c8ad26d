import json
from pathlib import Path

import pytest

from vtss import cli
from vtss.errors import ConfigError
from vtss.experiments import read_results_csv


def write_config(path, **doc):
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def toy_config(toy_dataset_path, tmp_path):
    doc = dict(name="toy", dataset=str(toy_dataset_path / "toy_{split}.vtss"), task="rotation",
               profile="desk", num_blocks=2, convs_per_block=1, channels=4, epochs=2,
               milestones=[1], batch_size=16, train_per_class=8, pretext_test_per_class=4,
               sample_grid=[2, 4], class_counts=[1, 3], grid=["trans:1", "trans:2"], rows=["R", "T", "R+T"])
    return write_config(tmp_path / "toy.json", **doc)


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestParseConfig:
    def test_minimal_defaults(self, tmp_path):
        cfg = cli.parse_config(write_config(tmp_path / "c.json", dataset="fmnist", task="rotation"))
        assert cfg.make_task().frame.margin == 0 and cfg.tap_block == 2
        opt = cfg.optimizer()
        assert (opt.base_lr, opt.lr_factor, opt.epochs) == (0.1, 0.02, 200)
        assert opt.milestones == (60, 120, 180) and opt.momentum == 0.9 and opt.weight_decay == 5e-4

    def test_combined_task(self, tmp_path):
        cfg = cli.parse_config(write_config(tmp_path / "c.json", dataset="fmnist", task="rot+trans"))
        assert cfg.make_task().num_classes == 8

    def test_translation_exceeding_margin(self, tmp_path):
        path = write_config(tmp_path / "c.json", dataset="fmnist", task="translation",
                            translation_pixels=8, margin=5)
        with pytest.raises(ConfigError) as err:
            cli.parse_config(path)
        assert err.value.pointer == "/translation_pixels"

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            cli.parse_config(write_config(tmp_path / "c.json", dataset="fmnist", task="rotation", lr=1))
        assert err.value.pointer == "/lr"

    def test_type_violation(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            cli.parse_config(write_config(tmp_path / "c.json", dataset="fmnist", task="rotation",
                                          epochs="ten"))
        assert err.value.pointer == "/epochs"

    def test_missing_required(self, tmp_path):
        with pytest.raises(ConfigError):
            cli.parse_config(write_config(tmp_path / "c.json", dataset="fmnist"))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{")
        with pytest.raises(ConfigError):
            cli.parse_config(path)

    def test_shipped_configs_validate(self):
        for path in sorted(Path(__file__).parent.parent.joinpath("configs").glob("*.json")):
            cli.parse_config(path)


class TestExitCodes:
    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["train"])
        assert exc.value.code == 2

    def test_config_error(self, tmp_path, capsys):
        path = write_config(tmp_path / "c.json", dataset="fmnist", task="rotation", bogus=1)
        code, _, err = run(capsys, "exp1", "--config", path)
        assert code == 2 and json.loads(err)["pointer"] == "/bogus"

    def test_runtime_error(self, tmp_path, capsys):
        path = write_config(tmp_path / "c.json", dataset=str(tmp_path / "missing_{split}.vtss"),
                            task="rotation")
        code, _, err = run(capsys, "exp1", "--config", path)
        assert code == 1 and json.loads(err)["command"] == "exp1"


class TestCommands:
    def test_exp1_writes_csv_and_manifest(self, toy_config, tmp_path, capsys):
        out = tmp_path / "exp1"
        code, stdout, _ = run(capsys, "exp1", "--config", toy_config, "--out", out)
        assert code == 0
        rows = read_results_csv(out / "exp1.csv")
        assert [r["row-id"] for r in rows] == ["run1", "run2", "run3", "run4"]
        manifests = list(out.glob("manifest-*.json"))
        assert len(manifests) == 1
        manifest = json.loads(manifests[0].read_text())
        assert manifests[0].name == f"manifest-{manifest['hash']}.json"
        assert str(out / "exp1.csv") in manifest["outputs"]
        assert json.loads((out / "exp1.json").read_text())["manifest"] == manifest["hash"]
        assert "trend" in json.loads((out / "exp1.json").read_text())

    def test_rerun_is_byte_identical(self, toy_config, tmp_path, capsys):
        def rows(out):
            run(capsys, "exp2", "--config", toy_config, "--out", out)
            lines = (out / "exp2.csv").read_text().splitlines()
            runtime = lines[0].split(",").index("runtime_s")
            return [l.split(",")[:runtime] + l.split(",")[runtime + 1:] for l in lines]
        assert rows(tmp_path / "a") == rows(tmp_path / "b")

    def test_pretrain_then_evaluate(self, toy_config, tmp_path, capsys):
        out = tmp_path / "pre"
        assert run(capsys, "pretrain", "--config", toy_config, "--out", out)[0] == 0
        assert (out / "checkpoint.pt").exists()
        code, _, _ = run(capsys, "evaluate", "--config", toy_config, "--out", tmp_path / "ev",
                         "--checkpoint", out / "checkpoint.pt")
        assert code == 0
        row = read_results_csv(tmp_path / "ev" / "evaluate.csv")[0]
        assert row["task"] == "id+rot:90+rot:180+rot:270" and row["semisup_acc"]

    def test_ablations(self, toy_config, tmp_path, capsys):
        for command, stem, count in (("ablate-range", "ablate_range", 2),
                                     ("ablate-samples", "ablate_samples", 4),
                                     ("ablate-classes", "ablate_classes", 2)):
            assert run(capsys, command, "--config", toy_config, "--out", tmp_path)[0] == 0
            assert len(read_results_csv(tmp_path / f"{stem}.csv")) == count

    def test_seeds_add_summary(self, toy_config, tmp_path, capsys):
        out = tmp_path / "s"
        run(capsys, "exp2", "--config", toy_config, "--out", out, "--seeds", 2)
        doc = json.loads((out / "exp2.json").read_text())
        assert len(doc["records"]) == 6 and set(doc["summary"]) == {"R", "T", "R+T"}

    def test_conflict_scan(self, toy_dataset_path, tmp_path, capsys):
        code, out, _ = run(capsys, "conflict-scan", "--dataset", toy_dataset_path / "toy_{split}.vtss",
                           "--task", "rotation", "--task", "scale:1,2", "--margin", 2,
                           "--out", tmp_path)
        assert code == 0
        lines = out.splitlines()
        reports = [json.loads(l) for l in lines[:2]]
        assert reports[0]["mode"] == "exact" and reports[0]["epsilon"] == 0.05
        assert lines[2].startswith("ranking")
        assert {lines[3].split()[1], lines[4].split()[1]} == {"rotation", "scale:1,2"}
        doc = json.loads((tmp_path / "conflict.json").read_text())
        assert set(doc["reports"]) == {"rotation", "scale:1,2"}

    def test_report_svg(self, toy_config, tmp_path, capsys):
        run(capsys, "exp1", "--config", toy_config, "--out", tmp_path)
        code, _, _ = run(capsys, "report", "--in", tmp_path, "--fig", "exp1")
        first = (tmp_path / "exp1.svg").read_bytes()
        run(capsys, "report", "--in", tmp_path, "--fig", "exp1", "--out", tmp_path / "again.svg")
        assert code == 0 and first.startswith(b"<?xml") and b"<svg" in first
        assert first == (tmp_path / "again.svg").read_bytes()

    def test_report_without_results(self, tmp_path, capsys):
        code, _, err = run(capsys, "report", "--in", tmp_path, "--fig", "exp2")
        assert code == 1 and "exp2" in json.loads(err)["message"]
