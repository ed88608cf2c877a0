import json

import pytest

import messkit as mk
from messkit.cli import run


@pytest.fixture()
def uniform_costs(tmp_path):
    profile = mk.CostProfile((10.0,) * 6, None, {6: {0: mk.HeadCost(1.0)}})
    path = tmp_path / "costs.json"
    mk.save_cost_profile(profile, path)
    return path


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("clifx")
    mk.gen_synthetic_fixtures(out, seed=31, num_images=16, dims=(16, 16),
                              class_count=3, num_exits=2,
                              accuracy_ladder=(0.7, 0.92))
    return out


class TestProfileCommand:
    def test_prints_placement(self, uniform_costs, capsys):
        assert run(["profile", "--costs", str(uniform_costs), "--num-exits", "3"]) == 0
        out = capsys.readouterr().out
        assert "[2, 4, 6]" in out

    def test_json_output(self, uniform_costs, capsys):
        assert run(["profile", "--costs", str(uniform_costs),
                    "--num-exits", "2", "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["exit_points"] == [3, 6]
        assert doc["segment_workloads"] == [30.0, 30.0]

    def test_too_many_exits_is_an_error(self, uniform_costs, capsys):
        assert run(["profile", "--costs", str(uniform_costs), "--num-exits", "9"]) == 1

    def test_missing_required_flag(self, uniform_costs, capsys):
        assert run(["profile", "--costs", str(uniform_costs)]) == 1
        assert "num-exits" in capsys.readouterr().err


def test_unknown_flag_gives_status_one(capsys):
    assert run(["profile", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_no_command_prints_help(capsys):
    assert run([]) == 1
    assert "usage" in capsys.readouterr().out


def test_help_exits_zero(capsys):
    assert run(["--help"]) == 0
    assert run(["search", "--help"]) == 0


class TestPipelineCommands:
    def test_gen_search_simulate(self, tmp_path, capsys):
        fx = tmp_path / "fx"
        assert run(["gen-fixtures", "--out", str(fx), "--seed", "8",
                    "--images", "12", "--dim", "16x16", "--classes", "3",
                    "--exits", "2", "--ladder", "0.7,0.92"]) == 0
        instance = tmp_path / "instance.json"
        cache = tmp_path / "cache.bin"
        code = run(["search", "--setting", "input-dep", "--objective", "min-cost",
                    "--bound", "0.3", "--cache", str(cache),
                    "--manifest", str(fx / "manifest.json"),
                    "--costs", str(fx / "costs.json"), "--out", str(instance),
                    "--th-pix-grid", "0.6,0.8", "--th-img-grid", "0.0,0.5,1.0",
                    "--threads", "2"])
        assert code == 0
        doc = json.loads(instance.read_text())
        assert doc["feasible"] is True
        assert cache.is_file()
        report = tmp_path / "report.json"
        assert run(["simulate", "--instance", str(instance),
                    "--manifest", str(fx / "manifest.json"),
                    "--costs", str(fx / "costs.json"),
                    "--report", str(report), "--threads", "2"]) == 0
        rep = json.loads(report.read_text())
        assert rep["miou"] == pytest.approx(doc["predicted"]["accuracy"])
        assert rep["expected_workload"] == pytest.approx(doc["predicted"]["cost"])

    def test_search_reuses_cache_and_is_idempotent(self, fixture_dir, tmp_path, capsys):
        cache = tmp_path / "cache.bin"
        instance = tmp_path / "instance.json"
        args = ["search", "--setting", "budgeted", "--objective", "max-acc",
                "--bound", "100.0", "--cache", str(cache),
                "--manifest", str(fixture_dir / "manifest.json"),
                "--costs", str(fixture_dir / "costs.json"), "--out", str(instance)]
        assert run(args) == 0
        first = instance.read_bytes()
        assert run(args) == 0  # second run loads the cache
        assert instance.read_bytes() == first

    def test_infeasible_returns_two_and_writes_report(self, fixture_dir, tmp_path, capsys):
        instance = tmp_path / "instance.json"
        code = run(["search", "--setting", "budgeted", "--objective", "min-cost",
                    "--bound", "1.0", "--cache", str(tmp_path / "cache.bin"),
                    "--manifest", str(fixture_dir / "manifest.json"),
                    "--costs", str(fixture_dir / "costs.json"), "--out", str(instance)])
        assert code == 2
        out = capsys.readouterr().out
        assert "accuracy >= 1.0" in out
        doc = json.loads(instance.read_text())
        assert doc["feasible"] is False

    def test_missing_cache_without_manifest(self, fixture_dir, tmp_path, capsys):
        code = run(["search", "--setting", "budgeted", "--objective", "min-cost",
                    "--bound", "0.5", "--cache", str(tmp_path / "nope.bin"),
                    "--costs", str(fixture_dir / "costs.json"),
                    "--out", str(tmp_path / "i.json")])
        assert code == 1


class TestLossAndConfidenceCommands:
    def test_eval_loss_pretrain(self, fixture_dir, capsys):
        code = run(["eval-loss", "--loss", "pretrain",
                    "--manifest", str(fixture_dir / "manifest.json"),
                    "--batch-index", "1"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["active_exit_set"] == [1, 2]
        assert doc["total"] > 0

    def test_eval_loss_pfd(self, fixture_dir, capsys):
        code = run(["eval-loss", "--loss", "pfd",
                    "--manifest", str(fixture_dir / "manifest.json"),
                    "--alpha", "0.5"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["per_exit_terms"]) == 2
        assert doc["per_exit_terms"][-1]["kl"] == 0.0

    def test_confidence_command(self, fixture_dir, tmp_path, capsys):
        manifest = mk.load_manifest(fixture_dir / "manifest.json")
        pred_path = manifest.images[0].prediction_path(manifest.exit_points[0], 0)
        out_map = tmp_path / "cmap.mt"
        code = run(["confidence", "--pred", str(pred_path), "--estimator", "top1",
                    "--th-pix", "0.8", "--edge-enhance", "--out", str(out_map)])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert 0.0 <= doc["c_img"] <= 1.0
        assert out_map.is_file()
        # the written map is a valid rank-2 float file
        pred = mk.read_tensor(pred_path)
        from messkit.tensorio import _read_mt
        code_, arr = _read_mt(out_map)
        assert arr.shape == (pred.rows, pred.cols)


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, uniform_costs, tmp_path, capsys):
        config = tmp_path / "run.toml"
        config.write_text(
            f'[profile]\ncosts = "{uniform_costs}"\nnum-exits = 3\njson = true\n')
        assert run(["profile", "--config", str(config)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["exit_points"] == [2, 4, 6]
        # a flag on the command line wins over the file
        assert run(["profile", "--config", str(config), "--num-exits", "2"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["exit_points"] == [3, 6]

    def test_unknown_config_key(self, uniform_costs, tmp_path, capsys):
        config = tmp_path / "run.toml"
        config.write_text('[profile]\nbogus = 1\n')
        assert run(["profile", "--config", str(config),
                    "--costs", str(uniform_costs), "--num-exits", "2"]) == 1
        assert "bogus" in capsys.readouterr().err
