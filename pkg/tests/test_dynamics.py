import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anderson_msa.disorder import DisorderField, Distribution
from anderson_msa.dynamics import (
    EvolutionPlan,
    evolve,
    evolve_many,
    field_family,
    host_eigensystem,
    moment,
    sdl_statistic,
    time_grid,
    trajectory,
    write_trajectories,
)
from anderson_msa.lattice import Box
from anderson_msa.operator import SineEigenSystem, assemble

FREE = DisorderField(0, Distribution("point", lam=0.0))
STRONG = DisorderField(3, Distribution("bernoulli", lam=8.0))


def test_time_grid():
    t = time_grid(1e3, 50)
    assert t[0] == 0.0 and t[-1] == pytest.approx(1e3) and len(t) == 50
    assert np.all(np.diff(t) > 0)


def test_t_zero_is_projection():
    sys = host_eigensystem(STRONG, 41)
    plan = EvolutionPlan(sys, (-5, 9), [0.0])
    psi0 = evolve(plan, 0.0)
    assert np.allclose(psi0, plan.projector() @ plan.initial, atol=1e-12)
    assert np.allclose(psi0, plan.projected(), atol=1e-12)


def test_single_site_is_a_phase():
    sys = assemble(Box((0,), 1), STRONG).eigensystem
    plan = EvolutionPlan(sys, (-100, 100), time_grid(10.0, 20), orders=(1.0, 2.0))
    tr = trajectory(plan)
    for p in (1.0, 2.0):
        assert np.allclose(tr.moments[p], 1.0)


@given(st.integers(0, 10**6))
@settings(max_examples=10, deadline=None)
def test_norm_is_preserved(seed):
    sys = host_eigensystem(STRONG.for_sample(seed), 31)
    plan = EvolutionPlan(sys, (-100, 100), time_grid(1e3, 30))
    states = evolve_many(plan, plan.times)
    assert np.allclose(np.linalg.norm(states, axis=0), 1.0, atol=1e-10)


def test_moment_values():
    sites = Box((0, 0), 9).sites
    psi = np.zeros(len(sites))
    psi[np.flatnonzero((sites == [0, 0]).all(axis=1))] = 1.0
    assert moment(psi, 3.0, sites) == 1.0
    psi = np.zeros(len(sites))
    psi[np.flatnonzero((sites == [3, 4]).all(axis=1))] = 1.0
    assert moment(psi, 1.0, sites) == pytest.approx(math.sqrt(26))
    v = np.random.default_rng(0).normal(size=len(sites))
    assert moment(v / np.linalg.norm(v), 0.0, sites) == pytest.approx(1.0)


def test_sine_and_dense_evolution_agree():
    box = Box((0,), 61)
    times = time_grid(20.0, 10)
    a = evolve_many(EvolutionPlan(SineEigenSystem(box), (-3, -1), times), times)
    b = evolve_many(EvolutionPlan(assemble(box, FREE).eigensystem, (-3, -1), times), times)
    assert np.allclose(a, b, atol=1e-10)


def test_free_transport_grows():
    # ballistic front ~ 2t, so a 8191-site host holds t = 1e3
    fam = field_family(FREE, 8191)
    small = sdl_statistic(fam, 2, (-100, 100), t_max=1e2, points=60)
    big = sdl_statistic(fam, 2, (-100, 100), t_max=1e3, points=60)
    assert not small.flagged and not big.flagged
    assert big.mean > 1.5 * small.mean


def test_leak_is_flagged():
    fam = field_family(FREE, 41)
    res = sdl_statistic(fam, 3, (-100, 100), t_max=1e3, points=60)
    assert res.flagged == [0, 1, 2] and math.isnan(res.mean)


def test_disjoint_interval_gives_zero():
    res = sdl_statistic(field_family(STRONG, 41), 3, (100, 200), t_max=10.0, points=20)
    assert res.mean == 0.0


def test_bad_arguments():
    fam = field_family(STRONG, 21)
    with pytest.raises(ValueError):
        sdl_statistic(fam, 1, (-5, 9))
    with pytest.raises(ValueError):
        sdl_statistic(fam, 3, (-5, 9), s=0.0)
    with pytest.raises(ValueError):
        EvolutionPlan(host_eigensystem(STRONG, 21), (-5, 9), [1.0, 0.5])


def test_trajectory_csv():
    rows = []
    sdl_statistic(field_family(STRONG, 41), 2, (-5, 9), t_max=10.0, points=5, trajectories=rows)
    buf = io.StringIO()
    write_trajectories(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "seed,t,p,moment" and len(lines) == 1 + 2 * 5
