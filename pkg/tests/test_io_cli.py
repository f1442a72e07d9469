import csv
import json

import numpy as np
import pytest

from covhet import io
from covhet.cli import main
from covhet.config import RunConfig
from covhet.errors import ConfigError, DataError

from .conftest import random_dataset

SMALL = {"phantom": {"C": 2, "N": 11, "n_res": 5}, "generator": {"n": 300, "snr_het": 0.5, "seed": 3}}


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


class TestFormat:
    def test_round_trip(self, rng):
        d = random_dataset(12, 5, rng)
        buf = io.dataset_to_bytes(d)
        assert buf.startswith(b"CVHET1")
        e = io.dataset_from_bytes(buf)
        assert io.dataset_to_bytes(e) == buf
        assert np.array_equal(e.images, d.images)
        assert np.array_equal(e.rotations, d.rotations)
        assert np.array_equal(e.labels, d.labels)
        assert e.ctf_bank == d.ctf_bank and e.sigma2 == d.sigma2 and (e.n_res, e.N) == (d.n_res, d.N)

    def test_without_labels(self, rng, tmp_path):
        d = random_dataset(5, 3, rng, labels=False)
        io.write_dataset(d, tmp_path / "x.cvhet")
        assert io.read_dataset(tmp_path / "x.cvhet").labels is None

    @pytest.mark.parametrize("mangle", [
        lambda b: b"XXXXXX" + b[6:],
        lambda b: b[:-7],
        lambda b: b + b"\0",
        lambda b: b[:10],
    ])
    def test_corrupt(self, rng, mangle):
        buf = io.dataset_to_bytes(random_dataset(4, 3, rng))
        with pytest.raises(DataError):
            io.dataset_from_bytes(mangle(buf))

    def test_report_round_trip(self):
        r = io.ResultsReport(10, 5, 0.1, [3.0, 1.0, 0.2], 2, 5.0, 0, {"mean": [1.0, 0.1], "covariance": [2.0]},
                             alpha=[[0.1], [-0.2]], labels=[0, 1], accuracy=0.5, timings={"mean": 0.3})
        assert io.ResultsReport.from_json(r.to_json()) == r
        assert "timings" not in json.loads(r.to_json(include_timings=False))

    def test_histogram_rows(self, rng):
        x = rng.standard_normal(50)
        rows = io.histogram_rows(x)
        assert len(rows) == 8 and sum(c for _, c in rows) == 50

    def test_labels_csv(self, tmp_path):
        io.write_csv(tmp_path / "l.csv", ["index", "label"], [(0, 1), (1, 0)])
        assert io.read_labels_csv(tmp_path / "l.csv").tolist() == [1, 0]
        (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
        with pytest.raises(DataError):
            io.read_labels_csv(tmp_path / "bad.csv")


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig.from_dict({})
        assert cfg.phantom_spec().C == 2 and cfg.generator_config().n == 2000
        assert len(cfg.ctf_bank()) == 7

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="generator.nn"):
            RunConfig.from_dict({"generator": {"nn": 3}})
        with pytest.raises(ConfigError, match="bogus"):
            RunConfig.from_dict({"bogus": {}})

    def test_mismatch_names_keys(self):
        with pytest.raises(ConfigError, match="phantom.N.*phantom.n_res|phantom.n_res.*phantom.N"):
            RunConfig.from_dict({"phantom": {"N": 7, "n_res": 9}})

    def test_ctf_disabled(self):
        bank = RunConfig.from_dict({"ctf": {"enabled": False}}).ctf_bank()
        assert len(bank) == 1 and bank[0].is_identity


class TestCLI:
    def test_simulate_deterministic(self, tmp_path):
        cfg = write_config(tmp_path, SMALL)
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a.cvhet")]) == 0
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "b.cvhet")]) == 0
        assert (tmp_path / "a.cvhet").read_bytes() == (tmp_path / "b.cvhet").read_bytes()
        assert main(["simulate", "--config", cfg, "--seed", "4", "--out", str(tmp_path / "c.cvhet")]) == 0
        assert (tmp_path / "a.cvhet").read_bytes() != (tmp_path / "c.cvhet").read_bytes()

    def test_mismatch_exit(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"phantom": {"N": 7, "n_res": 9}})
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
        err = capsys.readouterr().err
        assert "phantom.N" in err and "phantom.n_res" in err

    def test_unknown_key_exit(self, tmp_path):
        cfg = write_config(tmp_path, {"generator": {"oops": 1}})
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "x")]) == 2

    def test_missing_files(self, tmp_path):
        assert main(["estimate", str(tmp_path / "nope.cvhet"), "--out", str(tmp_path / "e")]) == 2
        assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")]) == 2
        assert main(["bogus"]) == 2

    def test_evaluate_without_truth(self, tmp_path, rng):
        io.write_dataset(random_dataset(4, 3, rng, labels=False), tmp_path / "d.cvhet")
        io.write_csv(tmp_path / "l.csv", ["index", "label"], enumerate([0, 1, 0, 1]))
        assert main(["evaluate", str(tmp_path / "l.csv"), str(tmp_path / "d.cvhet")]) == 3

    def test_evaluate(self, tmp_path, rng):
        d = random_dataset(200, 3, rng)
        io.write_dataset(d, tmp_path / "d.cvhet")

        def evaluate(labels):
            io.write_csv(tmp_path / "l.csv", ["index", "label"], enumerate(labels.tolist()))
            assert main(["evaluate", str(tmp_path / "l.csv"), str(tmp_path / "d.cvhet"),
                         "--out", str(tmp_path / "acc.json")]) == 0
            return json.loads((tmp_path / "acc.json").read_text())["accuracy"]

        assert evaluate(d.labels) == 1.0
        assert evaluate(1 - d.labels) == 1.0
        assert 0.4 < evaluate(rng.integers(2, size=200)) < 0.6
        io.write_csv(tmp_path / "l.csv", ["index", "label"], [(0, 0)])
        assert main(["evaluate", str(tmp_path / "l.csv"), str(tmp_path / "d.cvhet")]) == 3

    def test_single_class_estimate(self, tmp_path):
        cfg = write_config(tmp_path, {"phantom": {"C": 1, "N": 11, "n_res": 5},
                                      "generator": {"n": 300, "sigma": 0.05, "snr_het": None}})
        data = str(tmp_path / "d.cvhet")
        assert main(["simulate", "--config", cfg, "--out", data]) == 0
        assert main(["estimate", data, "--out", str(tmp_path / "est")]) == 0
        report = json.loads((tmp_path / "est" / "estimate.json").read_text())
        assert report["num_classes"] == 1

    @pytest.fixture
    def estimated(self, tmp_path):
        cfg = write_config(tmp_path, SMALL)
        data = str(tmp_path / "d.cvhet")
        assert main(["simulate", "--config", cfg, "--out", data]) == 0
        assert main(["estimate", data, "--config", cfg, "--out", str(tmp_path / "est")]) == 0
        return tmp_path, cfg, data

    def test_estimate_outputs(self, estimated):
        tmp_path, cfg, data = estimated
        est = tmp_path / "est"
        first = (est / "estimate.json").read_bytes()
        report = json.loads(first)
        assert report["num_classes"] == 2 and "timings" not in report
        assert np.load(est / "mean.npy").shape == (81,)
        assert "covariance" in json.loads((est / "timings.json").read_text())
        assert main(["estimate", data, "--config", cfg, "--threads", "3", "--out", str(est)]) == 0
        assert (est / "estimate.json").read_bytes() == first

    def test_classify(self, estimated):
        tmp_path, cfg, data = estimated
        out = tmp_path / "cls"
        assert main(["classify", data, str(tmp_path / "est"), "--config", cfg, "--out", str(out)]) == 0
        for name in ["labels.csv", "alpha.csv", "eigenvalue_hist.csv", "alpha1_hist.csv", "report.json",
                     "eigenvalue_hist.png", "alpha1_hist.png"]:
            assert (out / name).is_file(), name
        report = io.ResultsReport.from_json((out / "report.json").read_text())
        assert report.accuracy > 0.9 and len(report.labels) == 300
        with open(out / "alpha.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["index", "alpha_1"] and len(rows) == 301

    def test_classify_k1_no_figures(self, estimated):
        tmp_path, cfg, data = estimated
        out = tmp_path / "k1"
        assert main(["classify", data, str(tmp_path / "est"), "--k", "1", "--no-figures", "--out", str(out)]) == 0
        assert set(io.read_labels_csv(out / "labels.csv").tolist()) == {0}
        assert not (out / "alpha1_hist.png").exists()

    def test_classify_without_truth(self, estimated):
        tmp_path, cfg, data = estimated
        d = io.read_dataset(data)
        d.labels = None
        io.write_dataset(d, tmp_path / "nolabels.cvhet")
        out = tmp_path / "nl"
        assert main(["classify", str(tmp_path / "nolabels.cvhet"), str(tmp_path / "est"),
                     "--no-figures", "--out", str(out)]) == 0
        assert "accuracy" not in json.loads((out / "report.json").read_text())

    def test_resolution_mismatch(self, estimated, rng):
        tmp_path, cfg, data = estimated
        io.write_dataset(random_dataset(10, 7, rng), tmp_path / "other.cvhet")
        assert main(["classify", str(tmp_path / "other.cvhet"), str(tmp_path / "est"),
                     "--out", str(tmp_path / "x")]) == 3
