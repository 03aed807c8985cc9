"""Configuration parsing and the batch command surface."""

import os

import numpy as np
import pytest

from torusdiff.cli import main
from torusdiff.config import ConfigError, ExperimentConfig

TINY = """
# smoke-scale overrides of the shipped scenario
m_w = 4
m_beta = 4
t = 0.05
n_u = 64
n_x = 128
k_max = 16
seed = 7
"""


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return str(path)


class TestConfig:
    def test_defaults_validate(self):
        cfg = ExperimentConfig().validate()
        assert cfg.seed == 20240601
        assert cfg.m_w == 2000 and cfg.m_beta == 64

    def test_round_trip_text(self):
        cfg = ExperimentConfig.from_text(TINY)
        assert cfg.m_w == 4 and cfg.n_u == 64 and cfg.seed == 7
        man = cfg.to_manifest()
        for key in ("alpha", "seed", "qv_rate", "tail_bound_k2", "dt"):
            assert key in man

    def test_rejects_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_text("bogus = 3")

    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_text("eps = 7.0")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_text("t = 0.0005\ndt = 0.0002")

    def test_scenario_objects(self):
        cfg = ExperimentConfig.from_text(TINY)
        g = cfg.make_quantile()
        h = cfg.make_direction()
        assert g.n_u == 64 and h.n_u == 64
        assert np.all(g.deriv1 > 0)
        phi = cfg.make_functional()
        assert phi.kind == "linear"


class TestCommands:
    def test_bad_config_exit_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("eps = 99")
        assert main(["simulate", "--config", str(bad)]) == 2

    def test_simulate(self, tiny_config, tmp_path):
        out = str(tmp_path / "o1")
        rc = main(["simulate", "--config", tiny_config, "--out", out])
        assert rc == 0
        assert os.path.exists(os.path.join(out, "simulate.csv"))
        assert os.path.exists(os.path.join(out, "manifest.txt"))

    def test_gradient_and_reproducibility(self, tiny_config, tmp_path):
        out1, out2 = str(tmp_path / "g1"), str(tmp_path / "g2")
        assert main(["gradient", "--config", tiny_config, "--out", out1]) == 0
        assert main(["gradient", "--config", tiny_config, "--out", out2]) == 0
        b1 = open(os.path.join(out1, "gradient.csv"), "rb").read()
        b2 = open(os.path.join(out2, "gradient.csv"), "rb").read()
        assert b1 == b2
        header = b1.decode().splitlines()[0]
        assert header == "estimator,t,eps,rho,value,std_error,M_W,M_beta,seed"

    def test_gradient_zero_direction_all_zero(self, tmp_path):
        cfg = tmp_path / "zero.cfg"
        cfg.write_text(TINY + "h_cos = 0\nh_sin = 0\n")
        out = str(tmp_path / "z1")
        assert main(["gradient", "--config", str(cfg), "--out", out]) == 0
        rows = open(os.path.join(out, "gradient.csv")).read().splitlines()[1:]
        for row in rows:
            assert float(row.split(",")[4]) == 0.0

    def test_seed_override_changes_output(self, tiny_config, tmp_path):
        out1, out2 = str(tmp_path / "s1"), str(tmp_path / "s2")
        main(["gradient", "--config", tiny_config, "--out", out1])
        main(["gradient", "--config", tiny_config, "--out", out2, "--seed", "8"])
        b1 = open(os.path.join(out1, "gradient.csv")).read()
        b2 = open(os.path.join(out2, "gradient.csv")).read()
        assert b1 != b2

    def test_eps_sweep_csv_header(self, tiny_config, tmp_path):
        out = str(tmp_path / "e1")
        assert main(["eps-sweep", "--config", tiny_config, "--out", out]) == 0
        text = open(os.path.join(out, "eps_sweep.csv")).read()
        assert text.startswith("t,eps,I1,I1_se,I2,I2_se,total,direct,"
                               "direct_se,weight_l2,dropped_energy,seed")
        assert "fitted_slope_I2" in text

    def test_density_compare(self, tiny_config, tmp_path):
        out = str(tmp_path / "d1")
        rc = main(["density-compare", "--config", tiny_config, "--out", out,
                   "--m-beta", "64"])
        assert rc in (0, 1)      # tolerance check may fail at smoke scale
        text = open(os.path.join(out, "density_compare.csv")).read()
        assert text.splitlines()[0] == "t,L1_distance,bandwidth,critical_energy_ratio"

    def test_moments(self, tiny_config, tmp_path):
        out = str(tmp_path / "m1")
        assert main(["moments", "--config", tiny_config, "--out", out]) == 0
        text = open(os.path.join(out, "moments.csv")).read()
        assert text.splitlines()[0].startswith("quantity,p,j,estimate")

    def test_ibp_check(self, tiny_config, tmp_path):
        out = str(tmp_path / "i1")
        rc = main(["ibp-check", "--config", tiny_config, "--out", out,
                   "--t", "0.05", "--s", "0.02", "--m-w", "64"])
        assert rc in (0, 1)
        assert os.path.exists(os.path.join(out, "ibp_check.csv"))

    def test_manifest_echoes_config(self, tiny_config, tmp_path):
        out = str(tmp_path / "mf")
        main(["simulate", "--config", tiny_config, "--out", out])
        man = open(os.path.join(out, "manifest.txt")).read()
        for key in ("seed = 7", "n_u = 64", "tail_bound_k2", "qv_rate",
                    "torusdiff_version"):
            assert key in man
