"""Acceptance suite at the shipped scale.

One test per criterion; each prints its one-line verdict (run pytest -s to
see them live) and asserts the criterion's own pass flag at the tolerances
pinned in torusdiff.acceptance.  Total budget is the 30-minute desk-scale
target; the heavy criteria dominate.
"""

import pytest

from torusdiff import acceptance
from torusdiff.config import ExperimentConfig


@pytest.fixture(scope="module")
def cfg():
    return ExperimentConfig().validate()


def _run(criterion, cfg):
    res = criterion(cfg, 1.0)
    print()
    print(res.line())
    return res


def test_c01_degenerate_oracle(cfg):
    res = _run(acceptance.criterion_01_degenerate_oracle, cfg)
    assert res.runtime < 120.0, "criterion 1 must finish inside two minutes"
    assert res.passed, res.detail


def test_c02_kunita_identities(cfg):
    res = _run(acceptance.criterion_02_kunita, cfg)
    assert res.passed, res.detail


def test_c03_structural_invariants(cfg):
    res = _run(acceptance.criterion_03_structural, cfg)
    assert res.passed, res.detail


def test_c04_derivative_consistency(cfg):
    res = _run(acceptance.criterion_04_derivative_consistency, cfg)
    assert res.passed, res.detail


def test_c05_mollifier_exactness(cfg):
    res = _run(acceptance.criterion_05_mollifier_exactness, cfg)
    assert res.passed, res.detail


def test_c06_split_identity(cfg):
    res = _run(acceptance.criterion_06_split_identity, cfg)
    assert res.passed, res.detail


def test_c07_remainder_scaling(cfg):
    res = _run(acceptance.criterion_07_remainder_scaling, cfg)
    assert res.passed, res.detail


def test_c08_weight_envelope(cfg):
    res = _run(acceptance.criterion_08_weight_envelope, cfg)
    assert res.passed, res.detail


def test_c09_idiosyncratic_ibp(cfg):
    res = _run(acceptance.criterion_09_idiosyncratic_ibp, cfg)
    assert res.passed, res.detail


def test_c10_zero_average_periodicity(cfg):
    res = _run(acceptance.criterion_10_zero_average, cfg)
    assert res.passed, res.detail


def test_c11_rate_bound(cfg):
    res = _run(acceptance.criterion_11_rate_bound, cfg)
    assert res.passed, res.detail


def test_c12_spde_crosscheck(cfg):
    res = _run(acceptance.criterion_12_spde_crosscheck, cfg)
    assert res.passed, res.detail


def test_c13_moment_suite(cfg):
    res = _run(acceptance.criterion_13_moment_suite, cfg)
    assert res.passed, res.detail
