import json
import shutil

import numpy as np
import pytest

from gossip_langevin.errors import ConfigError, InvalidParameterError, MissingDataError
from gossip_langevin.harness import artifacts as art
from gossip_langevin.harness import experiment as ex
from gossip_langevin.harness.cli import main
from gossip_langevin.harness.config import ExperimentConfig, load_config
from gossip_langevin.harness.report import report
from gossip_langevin.topology import build_ring, write_edge_list

SMALL_GM = dict(seed=0, ticks=2000, chains=2)


@pytest.fixture(scope="module")
def gm_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("gm") / "run"
    return ex.run_gm_preset(out, **SMALL_GM)


def output_hashes(d):
    return {p.name: art.sha256_file(p) for p in sorted(d.iterdir()) if p.is_file() and p.name != "manifest.json"}


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig.from_dict({})
        assert cfg.model["kind"] == "gm" and cfg.graph["n"] == 5

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="stepsize"):
            ExperimentConfig.from_dict({"sampler": {"stepsize": 1e-3}})

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="solver"):
            ExperimentConfig.from_dict({"solver": {}})

    def test_unknown_model_kind(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"model": {"kind": "svm"}})

    def test_beta_out_of_range(self):
        with pytest.raises(InvalidParameterError, match="fusion-weight condition"):
            ExperimentConfig.from_dict({"sampler": {"beta": 1.5}})

    def test_toml(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('[run]\nseed = 4\n[graph]\nkind = "complete"\nn = 3\n[sampler]\nalpha = 2e-4\nticks = 10\n')
        cfg = load_config(p)
        assert cfg.run["seed"] == 4 and cfg.graph["kind"] == "complete" and cfg.sampler["alpha"] == 2e-4

    def test_round_trip(self):
        cfg = ex.logistic_preset_config(seed=3)
        assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()

    def test_engine_ticks(self):
        cfg = ex.logistic_preset_config(seed=0, ticks=1000)
        assert cfg.sampler_config("gossip_et").ticks == 1000
        # same per-agent update budget: 2 updates per tick spread over n agents
        per_agent = round(2 * 1000 / cfg.graph["n"])
        assert cfg.sampler_config("synchronous").ticks == per_agent
        assert cfg.sampler_config("centralized").ticks == per_agent


class TestGMPreset:
    def test_artifacts(self, gm_run):
        files = {p.name for p in gm_run.out_dir.iterdir()}
        assert {"manifest.json", "metrics.csv", "samples.csv", "comm_stats.csv", "wasserstein.csv", "data.csv",
                "grid.bin", "grid.json", "theory_constants.json"} <= files
        m = art.read_manifest(gm_run.out_dir)
        assert m["status"] == "completed"
        assert set(m["outputs"]) == files - {"manifest.json"}
        assert all(m["outputs"][k] == art.sha256_file(gm_run.out_dir / k) for k in m["outputs"])

    def test_results(self, gm_run):
        assert len(gm_run.traces["gossip_et"]) == 2
        assert len(gm_run.wasserstein) == 10
        assert all(r["sliced_w1"] > 0 for r in gm_run.wasserstein)
        assert gm_run.theory.Y3 > 0

    def test_byte_identical_rerun(self, gm_run, tmp_path):
        again = ex.run_gm_preset(tmp_path / "again", **SMALL_GM)
        assert output_hashes(again.out_dir) == output_hashes(gm_run.out_dir)
        m1, m2 = art.read_manifest(gm_run.out_dir), art.read_manifest(again.out_dir)
        assert m1["seeds"] == m2["seeds"] and m1["config"] == m2["config"]

    def test_manifest_rerun(self, gm_run, tmp_path):
        res = ex.run_custom(gm_run.out_dir / "manifest.json", tmp_path / "re")
        assert output_hashes(res.out_dir) == output_hashes(gm_run.out_dir)

    def test_zero_ticks(self, tmp_path):
        res = ex.run_gm_preset(tmp_path / "z", seed=0, ticks=0)
        assert res.status == "completed"
        assert all(r["gos"] == 0 for r in res.comm)
        assert (tmp_path / "z" / "manifest.json").exists()


class TestReport:
    def test_tables(self, gm_run, tmp_path):
        d = tmp_path / "copy"
        shutil.copytree(gm_run.out_dir, d)
        out = report(d)
        assert out["status"] == "completed"
        assert "%ET" in out["text"] and "pooled over 2 chain(s)" in out["text"]
        rows = art.read_csv(d / "consensus_error.csv")
        assert {int(r["chains"]) for r in rows} == {2}
        assert all(float(r["envelope"]) >= float(r["max"]) for r in rows)

    def test_not_a_run_dir(self, tmp_path):
        with pytest.raises(MissingDataError, match="run directory"):
            report(tmp_path)


def run_cli(capsys, *argv):
    code = main(list(argv))
    cap = capsys.readouterr()
    return code, cap.out, cap.err


class TestCLI:
    def test_run_gm(self, tmp_path, capsys):
        code, out, _ = run_cli(capsys, "run-gm", "--ticks", "500", "--out", str(tmp_path / "r"))
        assert code == 0 and "gossip_et" in out
        assert (tmp_path / "r" / "manifest.json").exists()
        code, out, _ = run_cli(capsys, "report", str(tmp_path / "r"))
        assert code == 0 and "gos" in out

    def test_config_error(self, tmp_path, capsys):
        p = tmp_path / "bad.toml"
        p.write_text("[sampler]\nstepsize = 3\n")
        code, _, err = run_cli(capsys, "run-custom", str(p), "--out", str(tmp_path / "o"))
        assert code == 2 and "stepsize" in err

    def test_divergence(self, tmp_path, capsys):
        p = tmp_path / "div.toml"
        p.write_text('[model]\nkind = "quadratic"\n[sampler]\nalpha = 50.0\nticks = 100000\n')
        code, _, err = run_cli(capsys, "run-custom", str(p), "--out", str(tmp_path / "o"))
        assert code == 3 and "non-finite" in err
        m = art.read_manifest(tmp_path / "o")
        assert m["status"] == "diverged" and m["divergence"]["tick"] > 0

    def test_missing_data(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "run-logistic", "--data", str(tmp_path / "nope.data"), "--out", str(tmp_path / "o"))
        assert code == 4 and "nope.data" in err

    def test_report_missing(self, tmp_path, capsys):
        code, _, _ = run_cli(capsys, "report", str(tmp_path))
        assert code == 4

    def test_check_conditions(self, capsys):
        code, out, _ = run_cli(capsys, "check-conditions", "--alpha", "1e-4", "--rho-u", "1", "--l-bar", "1",
                               "--beta", "0.5", "--lambda-n-minus-1", "2.5")
        d = json.loads(out)
        assert code == 0 and d["cond1"] and not d["cond2"]

    def test_theory_constants(self, capsys):
        code, out, _ = run_cli(capsys, "theory-constants", "--alpha", "1e-4", "--beta", "0.1", "--mu-g", "50",
                               "--initial-error", "3", "--ticks", "1", "1000")
        d = json.loads(out)
        assert code == 0 and d["lam"] == pytest.approx(0.95025, abs=1e-5)
        assert float(d["envelope"]["1"]) > float(d["envelope"]["1000"])

    def test_theory_constants_condition_violated(self, tmp_path, capsys):
        (tmp_path / "k2.txt").write_text("2\n0 1\n")
        code, _, err = run_cli(capsys, "theory-constants", "--alpha", "1e-4", "--beta", "0.5", "--mu-g", "1",
                               "--initial-error", "0", "--graph-file", str(tmp_path / "k2.txt"))
        assert code == 2 and "fusion-weight" in err

    def test_graph_file(self, tmp_path, capsys):
        write_edge_list(build_ring(5), tmp_path / "g.txt")
        code, out, _ = run_cli(capsys, "run-gm", "--ticks", "300", "--graph-file", str(tmp_path / "g.txt"),
                               "--out", str(tmp_path / "o"))
        assert code == 0
        m = art.read_manifest(tmp_path / "o")
        assert m["config"]["graph"]["kind"] == "file" and "graph" in m["inputs"]


class TestCustom:
    def test_logistic_complete_six(self, tmp_path):
        x = np.random.default_rng(0).standard_normal((120, 3))
        y = np.where(x[:, 0] - x[:, 1] > 0, "g", "h")
        lines = [",".join([*(f"{v:.6f}" for v in row), *["0.0"] * 7, c]) for row, c in zip(x, y)]
        (tmp_path / "toy.data").write_text("\n".join(lines) + "\n")
        (tmp_path / "c.toml").write_text(
            f'[run]\nchains = 2\n[graph]\nkind = "complete"\nn = 6\n'
            f'[model]\nkind = "logistic"\ndata_path = "{tmp_path / "toy.data"}"\npartition = "equal"\n'
            f'[sampler]\nalpha = 1e-3\nbeta = 0.1\nticks = 600\n'
        )
        res = ex.run_custom(tmp_path / "c.toml", tmp_path / "out")
        assert res.status == "completed"
        assert ex.final_accuracy(res, "gossip_et") > 0.7
        assert (tmp_path / "out" / "accuracy.csv").exists()

    def test_synchronous_on_gm(self, tmp_path):
        (tmp_path / "c.toml").write_text('[run]\nengines = ["synchronous", "gossip_et"]\n[sampler]\nticks = 400\n')
        res = ex.run_custom(tmp_path / "c.toml", tmp_path / "o")
        assert set(res.traces) == {"synchronous", "gossip_et"}
        assert {r["engine"] for r in res.wasserstein} == {"synchronous", "gossip_et"}


@pytest.mark.usefixtures("magic_path")
class TestLogisticPreset:
    def test_deterministic_with_events(self, tmp_path):
        kw = dict(seed=1, ticks=200, chains=2, log_events=True)
        a = ex.run_logistic_preset(tmp_path / "a", **kw)
        b = ex.run_logistic_preset(tmp_path / "b", **kw)
        assert output_hashes(a.out_dir) == output_hashes(b.out_dir)
        lines = (tmp_path / "a" / "events.jsonl").read_text().splitlines()
        ev = [json.loads(s) for s in lines]
        assert sum(e["engine"] == "gossip_et" for e in ev) == 2 * 200
        assert set(ev[0]) == {"engine", "chain", "k", "i", "j"}
        m = art.read_manifest(a.out_dir)
        assert m["inputs"]["magic04.data"] == art.sha256_file(ex.magic_path(a.config.model))

    def test_repartition_per_chain(self):
        fixed = ex.build_problem(ex.logistic_preset_config(seed=0, chains=2))
        fresh = ex.build_problem(ex.logistic_preset_config(seed=0, chains=2, repartition_per_chain=True))
        assert fixed.models[0] is fixed.models[1]
        sizes = [m.shard_sizes() for m in fresh.models]
        assert not np.array_equal(sizes[0], sizes[1])
