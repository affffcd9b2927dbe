import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anderson_msa.disorder import DisorderField, Distribution
from anderson_msa.lattice import Annulus, Box, Weight, bracket
from anderson_msa.modes import (
    ModeProxy,
    ModeTable,
    dump_profile,
    host_system,
    product_decay_scan,
    product_sup,
    proxies,
    trap_check,
    trap_event,
    w_annulus,
    w_point,
)

FREE = DisorderField(0, Distribution("point", lam=0.0))
STRONG = DisorderField(12, Distribution("bernoulli", lam=8.0))


def test_delta_mode_values():
    box = Box((3,), 1)
    p = ModeProxy(box, 0.0, np.array([1.0]), 1.0)
    assert w_point([p], (3,)) == 1.0
    big = Box((0,), 41)
    vec = np.zeros(41)
    vec[big.index[(0,)]] = 1.0
    delta = ModeProxy(big, 0.0, vec, 1.0)
    assert w_annulus([delta], (0,), 10) == 0.0
    assert w_point([ModeProxy(big, 0.0, np.roll(vec, 3), 1.0)], (0,)) == 0.0
    assert w_point([], (0,)) == 0.0


def test_uniform_on_annulus():
    big = Box((0,), 81)
    L = 10
    ann = Annulus((0,), 2 * L, L)
    vec = ann.contains(big.sites).astype(float)
    vec /= np.linalg.norm(vec)
    p = ModeProxy(big, 0.0, vec, 1.0)
    val = w_annulus([p], (0,), L)
    expected = 1.0 / np.linalg.norm(vec / Weight(1.0, (0,)).values(big.sites))
    assert val == pytest.approx(expected)
    assert val <= bracket(L) ** 1.0


def test_annulus_outside_host_is_rejected():
    p = ModeProxy(Box((0,), 21), 0.0, np.ones(21) / math.sqrt(21), 1.0)
    with pytest.raises(ValueError):
        w_annulus([p], (0,), 12)
    with pytest.raises(ValueError):
        p.at((40,))


@given(st.integers(0, 10**6), st.floats(0.55, 3.0))
@settings(max_examples=20, deadline=None)
def test_w_bounds_on_every_mode(seed, nu):
    field = DisorderField(seed, Distribution("bernoulli", lam=8.0))
    _, sys = host_system(field, (0,), 61)
    table = ModeTable(sys, (0,), nu)
    assert np.all(table.amplitude / table.inv_norm <= 1.0 + 1e-12)
    assert np.all(table.annulus_mass(15) / table.inv_norm <= bracket(15) ** nu * (1 + 1e-12))


@given(st.integers(0, 10**6), st.integers(-20, 20), st.integers(-20, 20), st.floats(0.5, 3.0))
@settings(max_examples=60, deadline=None)
def test_anchor_shift_random_vectors(seed, a, b, nu):
    sites = Box((0,), 61).sites
    v = np.random.default_rng(seed).normal(size=len(sites))
    na = np.linalg.norm(v / Weight(nu, (a,)).values(sites))
    nb = np.linalg.norm(v / Weight(nu, (b,)).values(sites))
    assert na <= 2 ** (nu / 2) * bracket(a - b) ** nu * nb * (1 + 1e-12)


def test_mode_table_matches_proxies():
    _, sys = host_system(STRONG, (0,), 61)
    table = ModeTable(sys, (0,), 1.0)
    for E in sys.values[::7]:
        ps = proxies(sys, float(E), 1.0)
        assert table.w_point([E])[0] == pytest.approx(w_point(ps, (0,)), rel=1e-12)
        assert table.w_annulus([E], 10)[0] == pytest.approx(w_annulus(ps, (0,), 10), rel=1e-12)


def test_localized_modes_have_small_annulus_weight():
    _, sys = host_system(STRONG, (0,), 200)
    interval = (-5, 9)
    hits = total = 0
    for k in np.flatnonzero(sys.mask(interval)):
        vec = sys.vectors[:, k]
        anchor = tuple(sys.box.sites[np.argmax(np.abs(vec))])
        if abs(anchor[0]) >= 100 - 40 - 1:
            continue
        p = ModeProxy(sys.box, float(sys.values[k]), vec, 1.0)
        total += 1
        hits += w_annulus([p], anchor, 40) <= math.exp(-0.05 * 40)
    assert total > 50
    assert hits >= 0.8 * total


def test_trap_event_and_check():
    ok, bad = trap_event(FREE, (0,), 20, -10.0, 0.5, 0.5)
    assert ok and bad == []
    rep = trap_check(FREE, (0,), 20, -10.0, 0.05, 0.08, 0.5, 0.5, 1.0)
    assert rep.in_event and rep.holds
    weak = DisorderField(1, Distribution("bernoulli", lam=0.1))
    rep = trap_check(weak, (0,), 20, -2.0, 0.05, 0.08, 3.0, 0.5, 1.0)
    assert not rep.in_event and rep.holds is None
    with pytest.raises(ValueError):
        trap_check(FREE, (0,), 20, -10.0, 0.1, 0.08, 0.5, 0.5, 1.0)


def test_product_sup_trivial():
    _, sys = host_system(FREE, (0,), 61)
    table = ModeTable(sys, (0,), 1.0)
    assert product_sup(table, (5, 6), 8, 1.0) == 0.0
    assert product_sup(table, (-4, 0), 8, 0.0) == 1.0


def test_product_decay_scan_strong_disorder():
    table = product_decay_scan(STRONG, (0,), (-5, 9), range(3, 7), 1.0, 1.0, 40)
    assert table.scales == [8, 16, 32, 64]
    assert all(v > 0 for v in table.means) and math.isfinite(table.fitted_exponent)


def test_dump_profile():
    _, sys = host_system(STRONG, (0,), 11)
    buf = io.StringIO()
    dump_profile(proxies(sys, float(sys.values[0]), 1.0)[0], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "x0,abs_psi" and len(lines) == 12


def measured_p(field, L, grid, samples, m=0.5, eta=0.5):
    from anderson_msa.operator import assemble
    from anderson_msa.resolvent import NearSingular, classify_box

    bad = 0
    for i in range(samples):
        H = assemble(Box((0,), L), field.for_sample(i))
        for E in grid:
            try:
                bad += not classify_box(H, float(E), m, eta).good
            except NearSingular:
                bad += 1
    q = bad / (samples * len(grid))
    return -math.log(q) / math.log(L)


def test_product_decay_against_measured_goodness_exponent():
    ks = range(3, 7)
    table = product_decay_scan(STRONG, (0,), (-5, 9), ks, 1.0, 1.0, 200)
    p = measured_p(STRONG, 2 ** max(ks), np.arange(-4.75, 9, 0.5), 100)
    s, nu, d = 1.0, 1.0, 1
    assert table.fitted_exponent <= -(p * d - s * nu) + 0.5
