import csv
import json

import numpy as np
import pytest

from conftest import TINY, tiny_config
from cct import cli, netpair, pipeline
from cct.synthdomain import read_matrix_csv


def sets(*extra):
    out = []
    for item in (*TINY, *extra):
        out += ["--set", item]
    return out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["run", *sets(), "--out", str(out)]) == 0
    return out


class TestRun:
    def test_outputs(self, run_dir):
        for name in ("metrics.csv", "summary.json", "checkpoint.json", "resolved_config.json", "data/source.csv"):
            assert (run_dir / name).exists(), name
        rows = read_rows(run_dir / "metrics.csv")
        assert list(rows[0]) == list(cli.RECORD_COLUMNS)
        assert [r["iter"] for r in rows] == ["10", "20", "30"]
        summary = json.loads((run_dir / "summary.json").read_text())
        assert set(summary) >= {"theta_s", "theta_t", "config", "wall_time_s"}
        assert summary["final_model"] == "theta_s"

    def test_unlabeled_dump_hides_labels(self, run_dir):
        _, y = read_matrix_csv(run_dir / "data/target_unlabeled.csv")
        assert np.all(y == -1)

    def test_zero_iterations_reports_pre_adaptation(self, tmp_path):
        assert cli.main(["run", *sets("train.iterations=0"), "--out", str(tmp_path)]) == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["theta_s"] == summary["pre_adaptation"]["theta_s"]
        assert read_rows(tmp_path / "metrics.csv") == []

    def test_config_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(tiny_config().to_dict()))
        assert cli.main(["run", str(path), "--out", str(tmp_path / "o")]) == 0

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        assert cli.main(["run", "--set", "dataset.shots=0", "--out", str(tmp_path)]) == 2
        assert "shots" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["run", str(tmp_path / "nope.json")]) == 1

    def test_defaults(self, capsys):
        assert cli.main(["defaults"]) == 0
        d = json.loads(capsys.readouterr().out)
        assert d["dataset"]["total_classes"] == 12


class TestSweep:
    def test_shots(self, tmp_path):
        rows = cli.sweep(tiny_config(), "shots", [1, 3], [0, 1], jobs=2)
        assert len(rows) == 4
        assert [r["n_labeled"] for r in rows] == [4, 4, 12, 12]
        cells, agg = cli.write_sweep(tmp_path, "shots", rows)
        assert len(read_rows(agg)) == 2

    def test_lambda2_zero_cell_matches_standalone(self):
        cfg = tiny_config()
        rows = cli.sweep(cfg, "lambda2", [0.0], [0])
        alone = pipeline.run_experiment(cfg.with_overrides(["losses.lambda2=0"]))
        assert rows[0]["h_score"] == alone.final_s.h_score

    def test_private_size_keeps_union_and_commonness(self):
        base = tiny_config("dataset.total_classes=8", "dataset.source_count=6", "dataset.target_count=4")
        seen = set()
        for priv in (0, 1, 2):
            lc = cli.apply_axis(base, "private_size", priv).dataset.label_config()
            assert len(lc.target_private) == priv
            assert len(set(lc.source_classes) | set(lc.target_classes)) == 8
            seen.add(len(lc.common_classes))
        assert seen == {2}

    def test_common_size(self):
        lc = cli.apply_axis(tiny_config(), "common_size", 2).dataset.label_config()
        assert len(lc.common_classes) == 2 and len(lc.source_private) == len(lc.target_private) == 2
        with pytest.raises(ValueError):
            cli.apply_axis(tiny_config(), "common_size", 3)

    def test_failing_cell_is_named(self, tmp_path, capsys):
        args = ["sweep", *sets(), "--axis", "shots", "--values", "1,30", "--out", str(tmp_path)]
        code = cli.main(args)
        assert code != 0
        assert "shots=30" in capsys.readouterr().err


class TestExport:
    def test_embeddings(self, run_dir, tmp_path):
        out = tmp_path / "emb.csv"
        src = run_dir / "data/target_eval.csv"
        assert cli.main(["export-embeddings", str(run_dir / "checkpoint.json"), str(src), str(out)]) == 0
        rows = read_rows(out)
        _, y = read_matrix_csv(src)
        assert len(rows) == len(y)
        assert list(rows[0])[:3] == ["id", "y", "is_common"]
        lc = tiny_config().dataset.label_config()
        assert all(int(r["is_common"]) == int(lc.is_common(int(r["y"]))) for r in rows)
        again = tmp_path / "emb2.csv"
        cli.export_embeddings(run_dir / "checkpoint.json", src, again)
        assert out.read_bytes() == again.read_bytes()

    def test_unlabeled_rows_flagged(self, run_dir, tmp_path):
        out = cli.export_embeddings(run_dir / "checkpoint.json", run_dir / "data/target_unlabeled.csv", tmp_path / "u.csv", "t")
        assert {r["is_common"] for r in read_rows(out)} == {"-1"}

    def test_dimension_mismatch_names_dims(self, run_dir, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("id,y,x0,x1\n0,4,0.1,0.2\n")
        code = cli.main(["export-embeddings", str(run_dir / "checkpoint.json"), str(bad), str(tmp_path / "o.csv")])
        assert code == 2
        err = capsys.readouterr().err
        assert "2" in err and "8" in err

    def test_checkpoint_loads(self, run_dir):
        dual = netpair.load_checkpoint(run_dir / "checkpoint.json")
        assert dual.theta_s.arch.input_dim == 8
