import json
import os

import numpy as np
import pytest

from modalsyn.cli import main

CONFIG = {
    "model": "two_mass",
    "f_bw": [10.0],
    "expected_error": [1e-4],
    "retain": [1],
    "controlled": [1],
    "n_flex_decouple": 1,
    "Q": 10.0,
    "budget": 20,
    "n_starts": 1,
    "weights": {"eps": 0.02},
    "simulate": {"dt": 1e-3, "duration": 0.2},
}


def write_config(path):
    with open(path, "w") as fh:
        json.dump(CONFIG, fh)
    return str(path)


@pytest.fixture(scope="module")
def synth_run(tmp_path_factory):
    """One small synth6 run shared by the downstream-command tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "config.json")
    out = root / "run"
    rc = main(["synth6", "--config", cfg, "--out", str(out)])
    assert rc == 0
    return cfg, str(out)


class TestSynth:
    def test_writes_results_and_channels(self, synth_run):
        _, out = synth_run
        with open(os.path.join(out, "results.json")) as fh:
            doc = json.load(fh)
        assert doc["kind"] == "6block"
        assert doc["model"] == "two_mass"
        for key in ("proposed", "conventional", "certificate_proposed",
                    "certificate_conventional", "config"):
            assert key in doc
        assert doc["proposed"]["gamma"] > 0
        assert os.path.exists(os.path.join(out, "proposed_channels.csv"))
        assert os.path.exists(os.path.join(out, "conventional_channels.csv"))

    def test_conventional_xi_frozen(self, synth_run):
        _, out = synth_run
        with open(os.path.join(out, "results.json")) as fh:
            doc = json.load(fh)
        assert doc["conventional"]["params"]["xi"] == [0.0]

    def test_deterministic_results(self, synth_run, tmp_path):
        cfg, out = synth_run
        rc = main(["synth6", "--config", cfg, "--out", str(tmp_path)])
        assert rc == 0
        with open(os.path.join(out, "results.json"), "rb") as fh:
            first = fh.read()
        with open(tmp_path / "results.json", "rb") as fh:
            second = fh.read()
        assert first == second

    def test_budget_flag_overrides_config(self, tmp_path):
        cfg = write_config(tmp_path / "config.json")
        rc = main(["synth6", "--config", cfg, "--out", str(tmp_path),
                   "--budget", "0"])
        assert rc == 0
        with open(tmp_path / "results.json") as fh:
            doc = json.load(fh)
        assert doc["budget"] == 0


class TestDownstream:
    def test_analyze(self, synth_run, tmp_path):
        _, out = synth_run
        rc = main(["analyze", os.path.join(out, "results.json"),
                   "--out", str(tmp_path)])
        assert rc == 0
        for label in ("proposed", "conventional"):
            assert (tmp_path / f"{label}_channels.csv").exists()
            assert (tmp_path / f"{label}_closedloop.csv").exists()

    def test_simulate(self, synth_run, tmp_path):
        _, out = synth_run
        rc = main(["simulate", os.path.join(out, "results.json"),
                   "--out", str(tmp_path)])
        assert rc == 0
        with open(tmp_path / "simulation.json") as fh:
            summary = json.load(fh)
        assert "rms_ratio" in summary
        assert summary["rms"]["proposed"] > 0
        data = np.genfromtxt(tmp_path / "timeseries.csv", delimiter=",",
                             names=True)
        assert data.shape[0] == int(round(0.2 / 1e-3))
        assert "proposed_y0" in data.dtype.names

    def test_gridcheck(self, synth_run, tmp_path):
        _, out = synth_run
        rc = main(["gridcheck", os.path.join(out, "results.json"),
                   "--out", str(tmp_path)])
        assert rc == 0
        with open(tmp_path / "certificate.json") as fh:
            cert = json.load(fh)
        assert len(cert["stable"]) == 11
        assert all(cert["stable"])


class TestDecouple:
    def test_writes_summary(self, tmp_path):
        cfg = write_config(tmp_path / "config.json")
        rc = main(["decouple", "--config", cfg, "--out", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "decoupling.json").exists()
        with open(tmp_path / "modal_summary.json") as fh:
            doc = json.load(fh)
        assert doc["n_rb"] == 1 and doc["n_flex"] == 1
        assert doc["omega_hz"][1] == pytest.approx(50.0, rel=1e-6)


class TestErrors:
    def test_missing_config_is_usage_error(self):
        assert main(["synth6"]) == 2

    def test_unknown_model_is_usage_error(self, tmp_path):
        cfg = tmp_path / "config.json"
        bad = dict(CONFIG, model="no_such_benchmark")
        with open(cfg, "w") as fh:
            json.dump(bad, fh)
        assert main(["synth6", "--config", str(cfg),
                     "--out", str(tmp_path)]) == 2

    def test_missing_required_key_is_usage_error(self, tmp_path):
        cfg = tmp_path / "config.json"
        bad = {k: v for k, v in CONFIG.items() if k != "f_bw"}
        with open(cfg, "w") as fh:
            json.dump(bad, fh)
        assert main(["synth6", "--config", str(cfg),
                     "--out", str(tmp_path)]) == 2

    def test_missing_results_file(self, tmp_path):
        assert main(["analyze", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path)]) == 2

    def test_corrupt_results_file(self, tmp_path):
        path = tmp_path / "results.json"
        path.write_text("{not json")
        assert main(["analyze", str(path), "--out", str(tmp_path)]) == 2
