import logging
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prevalest.cli import main, parse_grid
from prevalest.core import LabeledDataset, UnlabeledDataset, empirical_priors
from prevalest.errors import InvalidInputError
from prevalest.io import RunConfig, fmt, ingest_csv, parse_config_file, write_dataset_csv


def write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def body(text):
    """Data lines of a report, without the config header."""
    return [line for line in text.splitlines() if not line.startswith("#")]


def toy_files(tmp_path, q1=0.25, per_class=1000):
    """Training and test CSVs whose empirical laws equal the binary discrete toy exactly."""
    tr = ["x,label"]
    tr += ["0,1"] * (per_class * 9 // 10) + ["1,1"] * (per_class // 10)
    tr += ["0,2"] * (per_class * 2 // 10) + ["1,2"] * (per_class * 8 // 10)
    n1, n2 = int(round(q1 * per_class)), int(round((1 - q1) * per_class))
    te = ["x"] + ["0"] * (n1 * 9 // 10 + n2 * 2 // 10) + ["1"] * (n1 // 10 + n2 * 8 // 10)
    return (write(tmp_path / "train.csv", "\n".join(tr) + "\n"),
            write(tmp_path / "test.csv", "\n".join(te) + "\n"))


class TestIngest:
    def test_small_train(self, tmp_path):
        d = ingest_csv(write(tmp_path / "t.csv", "x,label\n0.1,1\n0.2,2\n0.3,2\n"), "train")
        assert isinstance(d, LabeledDataset)
        assert len(d.labels) == 3 and d.class_count == 2
        np.testing.assert_allclose(empirical_priors(d).probs, [1 / 3, 2 / 3])

    def test_test_label_column_ignored(self, tmp_path, caplog):
        with caplog.at_level(logging.WARNING):
            d = ingest_csv(write(tmp_path / "u.csv", "x,label\n0.5,1\n0.7,2\n"), "test")
        assert isinstance(d, UnlabeledDataset)
        assert d.features.shape == (2, 1)
        assert "ignoring" in caplog.text

    def test_bad_cell(self, tmp_path):
        with pytest.raises(InvalidInputError, match=r"row 2 \(line 3\), column 'x'.*'abc'"):
            ingest_csv(write(tmp_path / "t.csv", "x,label\n0.1,1\nabc,2\n"), "train")

    @pytest.mark.parametrize("text", ["", "x,label\n", "x\n0.1\n", "x,label\n0.1,0\n", "x,label\n0.1,1.5\n",
                                      "x,label\nnan,1\n", "x,label\n0.1\n", "label\n1\n"])
    def test_rejections(self, tmp_path, text):
        with pytest.raises(InvalidInputError):
            ingest_csv(write(tmp_path / "t.csv", text), "train")

    def test_missing_file_and_role(self, tmp_path):
        with pytest.raises(InvalidInputError):
            ingest_csv(tmp_path / "nope.csv")
        with pytest.raises(InvalidInputError):
            ingest_csv(write(tmp_path / "t.csv", "x\n1\n"), "validation")

    def test_comment_lines_skipped(self, tmp_path):
        d = ingest_csv(write(tmp_path / "t.csv", "# note\nx1,x2\n1,2\n3,4\n"), "test")
        np.testing.assert_array_equal(d.features, [[1, 2], [3, 4]])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.floats(allow_nan=False, allow_infinity=False, width=64), st.integers(1, 3)),
                    min_size=3, max_size=20))
    def test_round_trip(self, tmp_path_factory, rows):
        labels = [1, 2, 3] + [r[1] for r in rows]
        x = np.array([[0.0, 1.0]] * 3 + [[r[0], -r[0]] for r in rows])
        d = LabeledDataset(x, labels, 3)
        path = tmp_path_factory.mktemp("rt") / "d.csv"
        write_dataset_csv(d, path)
        back = ingest_csv(path, "train")
        np.testing.assert_array_equal(back.features, d.features)
        np.testing.assert_array_equal(back.labels, d.labels)
        write_dataset_csv(back, path.with_name("e.csv"))
        assert path.read_bytes() == path.with_name("e.csv").read_bytes()


class TestFormatting:
    def test_fmt(self):
        assert fmt(0.1) == "0.10000000000000001"
        assert float(fmt(1 / 3)) == 1 / 3
        assert fmt(True) == "true" and fmt(None) == "" and fmt(3) == "3"

    def test_config_file(self, tmp_path):
        cfg = parse_config_file(write(tmp_path / "c.txt", "# c\n\nem-tol = 1e-6\nseed=3\n"))
        assert cfg == {"em_tol": "1e-6", "seed": "3"}
        with pytest.raises(InvalidInputError):
            parse_config_file(write(tmp_path / "d.txt", "oops\n"))

    def test_header(self):
        assert RunConfig("sweep", {"b": 1, "a": None}).header() == "# prevalest sweep\n# a=\n# b=1\n"

    def test_grid(self):
        g = parse_grid("0.01:0.99:0.01")
        assert len(g) == 99 and g[0] == 0.01 and g[-1] == 0.99 and g[49] == 0.5
        np.testing.assert_array_equal(parse_grid("0.2, 0.4"), [0.2, 0.4])
        with pytest.raises(InvalidInputError):
            parse_grid("0.1:0.2")


class TestEstimate:
    def test_debias_toy(self, tmp_path, capsys):
        train, test = toy_files(tmp_path)
        code, out, _ = run(capsys, "estimate", "--method", "debias", "--train", str(train), "--test", str(test))
        assert code == 0
        header, row = body(out)
        assert header == "method,q_1,q_2,clipped,condition_number,iterations"
        fields = row.split(",")
        assert fields[0] == "debias"
        assert float(fields[1]) == pytest.approx(0.25, abs=1e-3)
        assert float(fields[1]) + float(fields[2]) == pytest.approx(1.0, abs=1e-12)

    def test_friedman_degenerate(self, tmp_path, capsys):
        train = write(tmp_path / "t.csv", "x,label\n0,1\n1,1\n0,2\n1,2\n")
        test = write(tmp_path / "u.csv", "x\n0\n1\n1\n")
        code, _, err = run(capsys, "estimate", "--method", "friedman", "--train", str(train), "--test", str(test))
        assert code == 3
        assert "zero denominator" in err

    def test_all_methods(self, tmp_path, capsys):
        train, test = toy_files(tmp_path, q1=0.4)
        code, out, _ = run(capsys, "estimate", "--method", "all", "--train", str(train), "--test", str(test))
        assert code == 0
        rows = [line.split(",") for line in body(out)[1:]]
        assert [r[0] for r in rows] == ["ac", "friedman", "friedman-cs", "debias", "pac", "gpac", "cov-debias", "em"]
        for r in rows:
            assert float(r[1]) == pytest.approx(0.4, abs=0.01)

    def test_output_file_and_header(self, tmp_path, capsys):
        train, test = toy_files(tmp_path)
        out_path = tmp_path / "r.csv"
        code, out, _ = run(capsys, "estimate", "--method", "em", "--train", str(train), "--test", str(test),
                           "--output", str(out_path))
        assert code == 0 and out == ""
        text = out_path.read_text()
        assert text.startswith("# prevalest estimate\n")
        assert "# method=em\n" in text and "# seed=0\n" in text

    def test_em_non_convergence_exit(self, tmp_path, capsys):
        train, test = toy_files(tmp_path, q1=0.1)
        code, _, err = run(capsys, "estimate", "--method", "em", "--train", str(train), "--test", str(test),
                           "--em-max-iter", "1", "--em-tol", "1e-15")
        assert code == 4
        assert "did not converge" in err

    def test_bad_inputs(self, tmp_path, capsys):
        train, test = toy_files(tmp_path)
        assert run(capsys, "estimate", "--method", "nope", "--train", str(train), "--test", str(test))[0] == 2
        assert run(capsys, "estimate", "--method", "ac", "--train", str(train))[0] == 2
        assert run(capsys, "estimate", "--method", "ac", "--train", str(test), "--test", str(test))[0] == 2


class TestSweep:
    def test_defaults(self, tmp_path, capsys):
        code, out, _ = run(capsys, "sweep")
        assert code == 0
        lines = body(out)
        assert lines[0] == "q1,var_ml,var_fried,var_debias"
        rows = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
        assert rows.shape == (99, 4)
        assert np.all(rows[:, 1] <= np.minimum(rows[:, 2], rows[:, 3]) + 1e-9)

    def test_single_point(self, capsys):
        _, out, _ = run(capsys, "sweep", "--p1", "0.15", "--q1", "0.15")
        (row,) = body(out)[1:]
        q, ml, fr, db = map(float, row.split(","))
        assert ml == pytest.approx(db, rel=1e-6)

    def test_explicit_defaults_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(capsys, "sweep", "--output", str(a))
        run(capsys, "sweep", "--mu1", "1.5", "--mu2", "0", "--sigma", "1", "--output", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_header_reproduces_output(self, tmp_path, capsys):
        first = tmp_path / "first.csv"
        run(capsys, "sweep", "--mu1", "2", "--p1", "0.3", "--grid", "0.1,0.5,0.9", "--output", str(first))
        cfg = [line[2:] for line in first.read_text().splitlines() if line.startswith("# ") and "=" in line]
        config = write(tmp_path / "cfg.txt", "\n".join(cfg) + "\n")
        second = tmp_path / "second.csv"
        assert run(capsys, "sweep", "--config", str(config), "--output", str(second))[0] == 0
        assert first.read_bytes() == second.read_bytes()

    def test_bad_grid(self, capsys):
        code, _, err = run(capsys, "sweep", "--grid", "0:1:0.1")
        assert code == 2 and "grid" in err


class TestSimulate:
    @staticmethod
    def parse(out):
        header, row = body(out)
        return dict(zip(header.split(","), row.split(",")))

    def test_friedman_ratio(self, capsys):
        code, out, _ = run(capsys, "simulate", "--method", "friedman", "--q1", "0.3", "--n", "10000", "--reps", "1000")
        assert code == 0
        assert 0.9 <= float(self.parse(out)["ratio"]) <= 1.1

    def test_debias_at_high_prior(self, capsys):
        args = ["--q1", "0.9", "--n", "10000", "--reps", "1000"]
        _, out_d, _ = run(capsys, "simulate", "--method", "debias", *args)
        _, out_f, _ = run(capsys, "simulate", "--method", "friedman", *args)
        deb, fr = self.parse(out_d), self.parse(out_f)
        assert 0.9 <= float(deb["ratio"]) <= 1.1
        assert float(deb["n_times_var"]) > float(fr["n_times_var"])

    def test_single_replicate(self, capsys, caplog):
        with caplog.at_level(logging.WARNING):
            code, out, _ = run(capsys, "simulate", "--reps", "1", "--n", "100")
        assert code == 0
        row = self.parse(out)
        assert row["n_times_var"] == "" and row["ratio"] == ""
        assert "single replicate" in caplog.text

    def test_seed_precedence(self, tmp_path, capsys, monkeypatch):
        small = ["--n", "200", "--reps", "5"]
        _, base, _ = run(capsys, "simulate", *small, "--seed", "5")
        monkeypatch.setenv("PREVALEST_SEED", "5")
        _, env, _ = run(capsys, "simulate", *small)
        assert env == base
        _, flag, _ = run(capsys, "simulate", *small, "--seed", "6")
        assert "# seed=6" in flag and flag != base
        cfg = write(tmp_path / "c.txt", "seed=7\nn=300\n")
        _, from_file, _ = run(capsys, "simulate", "--config", str(cfg), "--reps", "5")
        assert "# seed=7" in from_file and "# n=300" in from_file
        _, override, _ = run(capsys, "simulate", "--config", str(cfg), "--reps", "5", "--n", "250")
        assert "# n=250" in override
        monkeypatch.setenv("PREVALEST_SEED", "x")
        assert run(capsys, "simulate", *small)[0] == 2

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = write(tmp_path / "c.txt", "bogus=1\n")
        assert run(capsys, "simulate", "--config", str(cfg))[0] == 2


class TestRankCheck:
    @pytest.fixture
    def files(self, tmp_path):
        rng = np.random.default_rng(0)
        means = np.array([[2.0, 0.0], [-1.0, 1.5], [-1.0, -1.5]])
        y = np.repeat([1, 2, 3], 300)
        x = means[y - 1] + rng.normal(size=(900, 2))
        write_dataset_csv(LabeledDataset(x, y, 3), tmp_path / "train.csv")
        yt = rng.choice([1, 2, 3], p=[0.6, 0.1, 0.3], size=900)
        write_dataset_csv(UnlabeledDataset(means[yt - 1] + rng.normal(size=(900, 2))), tmp_path / "test.csv")
        return str(tmp_path / "train.csv"), str(tmp_path / "test.csv")

    @pytest.mark.parametrize("form,rank", [("conditional-mean", 3), ("indicator-covariance", 2),
                                           ("posterior-covariance", 2)])
    def test_forms(self, files, capsys, form, rank):
        code, out, _ = run(capsys, "rank-check", "--train", files[0], "--test", files[1], "--form", form)
        assert code == 0
        header, row = body(out)
        rec = dict(zip(header.split(","), row.split(",")))
        assert int(rec["numerical_rank"]) == rank
        assert (rec["rows"], rec["classes"]) == ("3", "3")
        assert len(rec["singular_values"].split(";")) == 3

    def test_indicator_statistics(self, files, capsys):
        code, out, _ = run(capsys, "rank-check", "--train", files[0], "--test", files[1],
                           "--form", "indicator-covariance", "--statistics", "indicators")
        assert code == 0
        assert body(out)[1].split(",")[4] == "2"

    def test_bad_form(self, files, capsys):
        assert run(capsys, "rank-check", "--train", files[0], "--test", files[1], "--form", "x")[0] == 2


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "prevalest", "sweep", "--q1", "0.5"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.splitlines()[-1].startswith("0.5,0.6566282034")
