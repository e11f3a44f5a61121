import numpy as np
import pytest

from viper import autodiff as ad
from viper import checks


@pytest.fixture(scope="module")
def report():
    return checks.run_suite(seeds=20, tol=1e-4)


def test_suite_covers_every_operation(report):
    required = {
        "matmul", "add", "sub", "mul", "div", "pow", "exp", "log", "max0", "sum", "mean",
        "frobenius_norm", "softmax_rows", "l2_normalize", "gem", "netvlad_lite",
        "triplet_loss", "rmas_loss", "pkd_loss", "gram_frobenius",
    }  # fmt: skip
    assert required <= set(report.max_error)
    assert set(report.max_error) == set(checks.CASES)


def test_suite_passes_within_budget(report):
    assert report.passed, report.failures
    assert max(report.max_error.values()) < 1e-4
    assert report.seconds < 60


def test_report_lines(report):
    lines = report.lines()
    assert len(lines) == len(checks.CASES)
    assert all(line.endswith("ok") for line in lines)


def test_suite_subset_and_detection(monkeypatch):
    sub = checks.run_suite(seeds=3, ops=["exp", "log"])
    assert set(sub.max_error) == {"exp", "log"} and sub.passed

    def wrong(self, g):
        return (2 * g * self.out,)

    monkeypatch.setattr(ad.Exp, "backward", wrong)
    bad = checks.run_suite(seeds=3, ops=["exp"])
    assert not bad.passed and list(bad.failures) == ["exp"]
    assert np.isfinite(bad.max_error["exp"])
