import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anderson_msa.stats import bootstrap_mean_ci, loglog_slope, standard_error, wilson_interval


def test_wilson_all_good_30():
    z = 1.959963984540054
    lo, hi = wilson_interval(30, 30)
    assert lo == pytest.approx(30 / (30 + z * z), abs=1e-9)
    assert lo == pytest.approx(0.886, abs=5e-4)
    assert hi == pytest.approx(1.0)


@given(st.integers(1, 500), st.data())
def test_wilson_contains_estimate(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    assert 0 <= lo <= k / n <= hi <= 1


def test_degenerate_inputs():
    assert wilson_interval(0, 0) == (0.0, 1.0)
    assert standard_error(0.5, 100) == pytest.approx(0.05)
    assert bootstrap_mean_ci([2.0, 2.0, 2.0], 0) == (2.0, 2.0)


def test_bootstrap_is_seeded():
    vals = np.random.default_rng(1).normal(size=50)
    assert bootstrap_mean_ci(vals, 3) == bootstrap_mean_ci(vals, 3)
    lo, hi = bootstrap_mean_ci(vals, 3)
    assert lo < vals.mean() < hi


def test_loglog_slope():
    xs = [2, 4, 8, 16]
    assert loglog_slope(xs, [x**1.5 for x in xs]) == pytest.approx(1.5)
    assert math.isfinite(loglog_slope(xs, [0, 1, 2, 3]))
