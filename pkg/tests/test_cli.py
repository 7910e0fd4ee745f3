import filecmp
import subprocess
import sys

import numpy as np
import pytest

from conftest import rule_fixture
from tslr import io as tio
from tslr.cli import main

SPEC = "N=12\nT=40\nell=12\nr=2\nnoise_std=0.05\nmissing_fraction=0.2\nplanted_groups=2\n"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def cohort(tmp_path, capsys):
    spec = tmp_path / "spec.cfg"
    spec.write_text(SPEC)
    data = tmp_path / "data"
    assert run(["synth", "--spec", spec, "--seed", 4, "--out", data], capsys)[0] == 0
    model = tmp_path / "model"
    assert run(["fit", "--data", data, "--rank", 2, "--lambda", 100, "--max-outer", 20, "--out", model], capsys)[0] == 0
    return data, model


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files or cmp.funny_files:
        return False
    same, diff, err = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not diff and not err and all(same_tree(a / d, b / d) for d in cmp.common_dirs)


class TestSynthAndFit:
    def test_synth_layout(self, cohort):
        data, _ = cohort
        assert len(list(data.glob("*.csv"))) == 12
        assert (data / "truth" / "basis.csv").exists()
        assert (data / "truth" / "labels.csv").read_text().splitlines()[1:3] == ["s01,1", "s02,2"]
        assert (data / "manifest.txt").exists()

    def test_fit_meta_echo(self, tmp_path, cohort, capsys):
        data, _ = cohort
        code, out, err = run(["fit", "--data", data, "--rank", 5, "--lambda", "1e5", "--max-outer", 2, "--out", tmp_path / "m"], capsys)
        assert code == 0
        meta = tio.read_meta(tmp_path / "m" / "meta.txt")
        assert meta["rank"] == "5" and meta["lambda"] == "100000"
        assert out.count("\n") == 1 and out.startswith("fit:")
        assert "rank=5" in err and "lambda=100000" in err

    def test_fit_byte_identical(self, tmp_path, cohort, capsys):
        data, _ = cohort
        for name in ("a", "b"):
            assert run(["fit", "--data", data, "--rank", 2, "--seed", 3, "--out", tmp_path / name], capsys)[0] == 0
        assert same_tree(tmp_path / "a", tmp_path / "b")

    def test_inputs_untouched(self, tmp_path, cohort, capsys):
        data, _ = cohort
        before = {p: p.read_bytes() for p in data.rglob("*") if p.is_file()}
        run(["fit", "--data", data, "--rank", 2, "--max-outer", 2, "--out", tmp_path / "m"], capsys)
        assert before == {p: p.read_bytes() for p in data.rglob("*") if p.is_file()}


class TestAnalytics:
    def test_svd(self, tmp_path, cohort, capsys):
        data, _ = cohort
        code, out, _ = run(["svd", "--data", data, "-k", 3, "--out", tmp_path / "sv.csv"], capsys)
        assert code == 0
        vals = [float(l.split(",")[1]) for l in (tmp_path / "sv.csv").read_text().splitlines()[1:]]
        assert len(vals) == 3 and vals == sorted(vals, reverse=True)
        assert (tmp_path / "sv.manifest.txt").exists()

    def test_trends(self, tmp_path, cohort, capsys):
        _, model = cohort
        assert run(["trends", "--model", model, "--out", tmp_path / "t.csv"], capsys)[0] == 0
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "component,day,p10,p25,p50,p75,p90"
        row = [float(v) for v in lines[1].split(",")[2:]]
        assert row == sorted(row)

    def test_outliers(self, tmp_path, cohort, capsys):
        _, model = cohort
        code, out, _ = run(["outliers", "--model", model, "--component", 2, "--percentile", 90, "--out", tmp_path / "o.csv"], capsys)
        assert code == 0
        lines = (tmp_path / "o.csv").read_text().splitlines()
        assert lines[0] == "subject_id,distance,flagged" and len(lines) == 13
        assert sum(int(l.split(",")[2]) for l in lines[1:]) >= 1

    def test_cluster_recovers_groups(self, tmp_path, cohort, capsys):
        data, _ = cohort
        code, _, _ = run(["cluster", "--model", data / "truth", "-k", 2, "--components", 2, "--seed", 7, "--out", tmp_path / "c.csv"], capsys)
        assert code == 0
        got = [l.split(",")[1] for l in (tmp_path / "c.csv").read_text().splitlines()[1:]]
        truth = [l.split(",")[1] for l in (data / "truth" / "labels.csv").read_text().splitlines()[1:]]
        pairs = set(zip(got, truth))
        assert len(pairs) == 2

    def test_cluster_raw(self, tmp_path, cohort, capsys):
        data, _ = cohort
        assert run(["cluster", "--data", data, "-k", 2, "--out", tmp_path / "c.csv"], capsys)[0] == 0

    def test_forecast(self, tmp_path, cohort, capsys):
        data, model = cohort
        code, out, _ = run(
            ["forecast", "--model", model, "--train", data, "--test", data, "--past", "1:20", "--future", "20:41",
             "--min-observed", 0.5, "--out", tmp_path / "f"],
            capsys,
        )
        assert code == 0, out
        head = (tmp_path / "f" / "summary.csv").read_text().splitlines()
        assert head[0] == "method,mean,std,subjects,sigma,fallbacks"
        assert [l.split(",")[0] for l in head[1:]] == ["mean", "kr_raw", "kr_nmfts", "rank_r_truth"]
        assert (tmp_path / "f" / "manifest.txt").exists()

    def test_render(self, tmp_path, cohort, capsys):
        data, _ = cohort
        assert run(["render", "--matrix", data / "s01.csv", "--out", tmp_path / "s.pgm"], capsys)[0] == 0
        px = tio.read_pgm(tmp_path / "s.pgm")
        m = tio.read_matrix(data / "s01.csv")
        assert px.shape == m.values.shape
        assert (tmp_path / "s.pgm").read_bytes().startswith(b"P5\n12 ")


class TestIngest:
    def test_fixture(self, tmp_path, capsys):
        logs, expected = rule_fixture()
        ev = tio.write_events(tmp_path / "ev.csv", logs)
        code, out, _ = run(["ingest", "--events", ev, "--out", tmp_path / "d"], capsys)
        assert code == 0 and "2 of 3" in out
        assert sorted(p.name for p in (tmp_path / "d").glob("*.csv")) == ["a.csv", "c.csv"]
        assert list(tio.read_matrix(tmp_path / "d" / "a.csv").days) == expected["a"]

    def test_rules_file(self, tmp_path, capsys):
        logs, _ = rule_fixture()
        ev = tio.write_events(tmp_path / "ev.csv", logs)
        rules = tmp_path / "rules.cfg"
        rules.write_text("max_sleep_hours=18\n")
        assert run(["ingest", "--events", ev, "--rules", rules, "--out", tmp_path / "d"], capsys)[0] == 0
        assert 10 in tio.read_matrix(tmp_path / "d" / "a.csv").days


class TestConfigResolution:
    def test_flag_beats_file(self, tmp_path, cohort, capsys):
        data, _ = cohort
        cfg = tmp_path / "c.cfg"
        cfg.write_text("rank=3\nmax_outer=1\n")
        _, _, err = run(["fit", "--config", cfg, "--rank", 2, "--data", data, "--out", tmp_path / "m"], capsys)
        assert " rank=2 " in err and " max_outer=1 " in err

    def test_env_threads(self, tmp_path, cohort, capsys, monkeypatch):
        data, _ = cohort
        monkeypatch.setenv("TSLR_THREADS", "3")
        _, _, err = run(["svd", "--data", data, "-k", 2], capsys)
        assert " threads=3 " in err
        _, _, err = run(["svd", "--threads", 2, "--data", data, "-k", 2], capsys)
        assert " threads=2 " in err


class TestErrors:
    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["fit"])
        assert exc.value.code == 2

    def test_unknown_subcommand(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["paint"])
        assert exc.value.code == 2

    def test_module_error(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        code, _, err = run(["fit", "--data", tmp_path / "empty", "--out", tmp_path / "m"], capsys)
        assert code == 1 and "empty-dataset" in err

    def test_rank_too_large(self, tmp_path, cohort, capsys):
        data, _ = cohort
        code, _, err = run(["fit", "--data", data, "--rank", 13, "--out", tmp_path / "m"], capsys)
        assert code == 1 and "rank-exceeds-data" in err

    def test_bad_config_key(self, tmp_path, cohort, capsys):
        data, _ = cohort
        cfg = tmp_path / "c.cfg"
        cfg.write_text("rnak=3\n")
        code, _, err = run(["fit", "--config", cfg, "--data", data, "--out", tmp_path / "m"], capsys)
        assert code == 1 and "config" in err

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["render", "--matrix", tmp_path / "nope.csv", "--out", tmp_path / "x.pgm"], capsys)
        assert code == 1 and "io-error" in err

    def test_entry_point(self, tmp_path):
        res = subprocess.run([sys.executable, "-m", "tslr.cli", "--version"], capture_output=True, text=True)
        assert res.returncode == 0 and res.stdout.startswith("tslr ")
