import math
import random
from fractions import Fraction as F

import numpy as np
import pytest
from scipy import stats

from quenchedcp.engine import FloatSystem, LatticeSystem, chunk_rng, hit_matrix, make_system, run_chunks
from quenchedcp.hitting import hit_series
from quenchedcp.maps import BranchMap, MapFamily, apply_map, times_map


def test_lattice_step_follows_the_exact_map(both_fix_half):
    system = LatticeSystem(both_fix_half)
    rng = np.random.default_rng(0)
    k = rng.integers(0, system.size, 400, dtype=np.int64)
    for v in range(both_fix_half.u):
        draws = rng.integers(0, system.modulus, 400, dtype=np.int64)
        out = system._step_one(k, v, draws)
        for ki, di, oi in zip(k.tolist(), draws.tolist(), out.tolist()):
            c = abs(int(both_fix_half[v].branches[both_fix_half[v].branch_index(F(2 * ki + 1, 2 * system.size))].slope))
            r = di % c
            x = (ki + (F(r) + F(1, 2)) / c) / system.size
            assert math.floor(apply_map(both_fix_half, v, x) * system.size) == oi


def test_lattice_hits_match_exact_rational_orbits(both_fix_half, target_half, fair):
    """Hit counts from the lattice and from exact rational orbits share one law."""
    N, rho = 40, F(1, 50)
    rng = np.random.default_rng(1)
    word = fair.sample(rng, N)
    q = (1 << 127) - 1
    pyrng = random.Random(1)
    exact = [sum(hit_series(both_fix_half, target_half, word.tolist(), F(pyrng.randrange(1, q), q), N,
                            rho).indicators) for _ in range(3000)]
    system = LatticeSystem(both_fix_half)
    states = system.start_uniform(rng, 200_000)
    lattice = hit_matrix(system, target_half.points(2), rho, word, states, rng).sum(axis=1)
    exact = np.asarray(exact, dtype=float)
    se = math.sqrt(exact.var() / exact.size + lattice.var() / lattice.size)
    assert abs(exact.mean() - lattice.mean()) <= 4 * se
    assert stats.ks_2samp(exact, lattice).pvalue > 1e-3


def test_window_is_the_closed_ball(both_fix_half):
    system = LatticeSystem(both_fix_half)
    lo, hi = system.window(F(1, 2), F(1, 1000))
    inside = np.array([system.size // 2 + system.size // 1000 - 1], dtype=np.int64)
    outside = np.array([system.size // 2 + system.size // 1000 + 1], dtype=np.int64)
    assert system.in_window(inside, (lo, hi)).all()
    assert not system.in_window(outside, (lo, hi)).any()


def test_ball_start_lies_in_the_ball(both_fix_half):
    system = LatticeSystem(both_fix_half)
    x = system.to_float(system.start_ball(np.random.default_rng(2), 10_000, F(1, 2), 1e-4))
    assert np.all(np.abs(x - 0.5) <= 1e-4)
    assert x.min() < 0.5 - 0.9e-4 and x.max() > 0.5 + 0.9e-4


def test_shared_and_per_sample_words_agree(both_fix_half, target_half, fair):
    system = LatticeSystem(both_fix_half)
    word = fair.sample(np.random.default_rng(3), 64)
    rows = np.broadcast_to(word, (500, 64)).copy()
    starts = system.start_uniform(np.random.default_rng(4), 500)
    a = hit_matrix(system, target_half.points(2), 0.01, word, starts, np.random.default_rng(5))
    b = hit_matrix(system, target_half.points(2), 0.01, rows, starts, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_chunk_streams_are_pure_functions():
    a = chunk_rng(11, "tag", 3).random(5)
    b = chunk_rng(11, "tag", 3).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, chunk_rng(11, "tag", 4).random(5))
    assert not np.array_equal(a, chunk_rng(11, "other", 3).random(5))


@pytest.mark.parametrize("threads", [2, 3, 8])
def test_run_chunks_independent_of_threads(threads):
    def fn(rng, start, size):
        return rng.standard_normal(size) + start

    one = np.concatenate(run_chunks(fn, 50_000, 9, "t", threads=1, chunk=4096))
    many = np.concatenate(run_chunks(fn, 50_000, 9, "t", threads=threads, chunk=4096))
    assert one.tobytes() == many.tobytes()
    assert one.size == 50_000


def test_non_lattice_family_runs_in_floats():
    fam = MapFamily((BranchMap.from_table([("0", "2/3", "3/2", "0"), ("2/3", "1", "3", "-2")]),))
    system = make_system(fam)
    assert isinstance(system, FloatSystem)
    rng = np.random.default_rng(6)
    x = system.start_uniform(rng, 200_000)
    for _ in range(30):
        x = system.step(x, 0, rng)
    assert stats.kstest(x, "uniform").statistic <= 0.005


def test_make_system_prefers_lattice(two_three):
    assert isinstance(make_system(two_three), LatticeSystem)
    assert isinstance(make_system(MapFamily((times_map(5),))), LatticeSystem)
