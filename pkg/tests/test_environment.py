import functools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from opcwalk.environment import (
    EnvironmentHandle,
    LatticeConfig,
    Memo,
    Site,
    backbone_mask,
    backbone_probability_ci,
    condition_on_origin,
    in_backbone,
    is_open,
    neighbors,
    open_mask,
    path_length,
    path_lengths,
    window_environment,
    xi_value,
)
from opcwalk.errors import ContractViolation, RejectionCapError
from opcwalk.weights import WeightFieldSpec, weight


def brute_path_length(env, s, h):
    """Longest open path from ``s`` clipped at ``h`` by plain recursion on ``is_open``."""
    offs = [tuple(o) for o in env.lattice.offsets().tolist()]

    @functools.lru_cache(maxsize=None)
    def L(x, n, depth):
        if not is_open((x, n), env):
            return -1
        if depth == 0:
            return 0
        return min(depth, 1 + max(L(tuple(a + b for a, b in zip(x, o)), n + 1, depth - 1) for o in offs))

    return L(tuple(s[0]), s[1], h)


def test_neighbors_d1_corners():
    assert neighbors(((0,), 0), LatticeConfig(d=1)) == [Site((-1,), 1), Site((1,), 1)]


def test_neighbors_d2_corners():
    nb = neighbors(((0, 0), 0), LatticeConfig(d=2))
    assert nb == [Site((-1, -1), 1), Site((-1, 1), 1), Site((1, -1), 1), Site((1, 1), 1)]


def test_neighbors_d2_shell():
    nb = neighbors(((0, 0), 0), LatticeConfig(d=2, neighborhood="shell"))
    assert len(nb) == 8
    assert all(max(abs(c) for c in z.x) == 1 and z.n == 1 for z in nb)
    assert nb == sorted(nb)


@given(d=st.integers(1, 4))
def test_neighborhood_sizes(d):
    assert len(LatticeConfig(d=d).offsets()) == 2**d
    assert len(LatticeConfig(d=d, neighborhood="shell").offsets()) == 3**d - 1
    assert len(LatticeConfig(d=d, neighborhood="shell_with_self").offsets()) == 3**d


def test_lattice_config_rejects_bad_values():
    with pytest.raises(ContractViolation):
        LatticeConfig(p=1.5)
    with pytest.raises(ContractViolation):
        LatticeConfig(horizon=0)
    with pytest.raises(ContractViolation):
        LatticeConfig(neighborhood="star")


def test_is_open_p1_everywhere():
    env = EnvironmentHandle(1, 2, LatticeConfig(p=1.0))
    assert all(is_open(((x,), n), env) for x in range(-5, 5) for n in range(-5, 5))


def test_is_open_frequency_p09():
    env = EnvironmentHandle(11, 2, LatticeConfig(p=0.9))
    xs, ns = np.meshgrid(np.arange(1000), np.arange(1000), indexing="ij")
    rows = np.column_stack([xs.ravel(), ns.ravel()])
    freq = open_mask(rows, env).mean()
    assert abs(freq - 0.9) <= 0.001
    # the same fraction is within 4 binomial standard deviations
    assert abs(freq - 0.9) <= 4 * math.sqrt(0.9 * 0.1 / len(rows))


def test_is_open_deterministic():
    a = EnvironmentHandle(5, 6, LatticeConfig(p=0.5))
    b = EnvironmentHandle(5, 6, LatticeConfig(p=0.5))
    sites = [((x,), n) for x in range(-10, 10) for n in range(10)]
    assert [is_open(s, a) for s in sites] == [is_open(s, b) for s in sites] == [is_open(s, a) for s in sites]


def test_path_length_closed_is_minus_one():
    env = window_environment(1, closed_sites=[((0,), 0)], horizon=5)
    assert path_length(((0,), 0), env) == -1


def test_path_length_p1_is_horizon():
    env = EnvironmentHandle(1, 1, LatticeConfig(p=1.0, horizon=17))
    assert path_length(((3,), -4), env) == 17


def test_path_length_window_example():
    # (0,0) and (1,1) open, (-1,1), (0,2), (2,2) closed: the only path is (0,0) -> (1,1)
    env = window_environment(1, open_sites=[((0,), 0), ((1,), 1)],
                             closed_sites=[((-1,), 1), ((0,), 2), ((2,), 2)], horizon=10)
    assert path_length(((0,), 0), env) == 1
    assert path_length(((1,), 1), env) == 0


@pytest.mark.parametrize("d,nb,p", [(1, "corners", 0.7), (2, "corners", 0.5), (2, "shell", 0.35),
                                    (1, "shell_with_self", 0.5)])
def test_path_length_matches_brute_force(d, nb, p):
    lat = LatticeConfig(d=d, neighborhood=nb, p=p, horizon=10)
    env = EnvironmentHandle(123, 4, lat)
    rng = np.random.default_rng(7)
    for _ in range(150):
        s = (tuple(int(v) for v in rng.integers(-20, 20, d)), int(rng.integers(-20, 20)))
        assert path_length(s, env) == brute_path_length(env, s, 10)


@given(seed=st.integers(0, 2**32), p=st.floats(0.45, 0.9), h=st.integers(1, 9))
def test_path_length_brute_force_property(seed, p, h):
    env = EnvironmentHandle(seed, 0, LatticeConfig(d=1, p=p, horizon=h))
    for x in range(-4, 5):
        assert path_length(((x,), 0), env) == brute_path_length(env, ((x,), 0), h)


@given(seed=st.integers(0, 2**32))
def test_cache_is_transparent_under_any_query_order(seed):
    lat = LatticeConfig(d=2, p=0.6, horizon=15)
    rng = np.random.default_rng(seed)
    rows = np.column_stack([rng.integers(-30, 30, (200, 2)), rng.integers(-30, 30, 200)])
    big = EnvironmentHandle(seed, 1, lat)
    tiny = EnvironmentHandle(seed, 1, lat, memo_capacity=16)
    ref = path_lengths(rows, big)
    perm = rng.permutation(len(rows))
    shuffled = path_lengths(rows[perm], tiny)
    assert np.array_equal(ref[perm], shuffled)
    assert np.array_equal(ref, path_lengths(rows, big))


@given(seed=st.integers(0, 2**32), h1=st.integers(1, 20), extra=st.integers(0, 20))
def test_horizon_monotonicity(seed, h1, extra):
    h2 = h1 + extra
    lo = EnvironmentHandle(seed, 0, LatticeConfig(d=1, p=0.7, horizon=h1))
    hi = EnvironmentHandle(seed, 0, LatticeConfig(d=1, p=0.7, horizon=h2))
    rows = np.array([[x, n] for x in range(-10, 10) for n in range(0, 10)])
    a = path_lengths(rows, lo)
    b = path_lengths(rows, hi)
    assert np.array_equal(a, np.where(b >= 0, np.minimum(b, h1), b))


@given(seed=st.integers(0, 2**32))
def test_path_length_recursion(seed):
    # L(s) = min(h, 1 + max L(z)) on open sites; a backbone site therefore has a successor with L >= h - 1
    h = 12
    env = EnvironmentHandle(seed, 0, LatticeConfig(d=2, p=0.6, horizon=h))
    for x in range(-3, 4):
        for y in range(-3, 4):
            s = ((x, y), 0)
            ls = path_length(s, env)
            succ = [path_length(z, env) for z in neighbors(s, env.lattice)]
            if ls >= 0:
                assert ls == min(h, 1 + max(succ))
            if in_backbone(s, env):
                assert max(succ) >= h - 1


def test_horizon_backbone_can_dead_end():
    # a site with longest path exactly h is in the horizon backbone while none of its successors are
    env = window_environment(1, open_sites=[((0,), 0), ((1,), 1)],
                             closed_sites=[((-1,), 1), ((0,), 2), ((2,), 2)], horizon=1)
    assert in_backbone(((0,), 0), env)
    assert not any(in_backbone(z, env) for z in neighbors(((0,), 0), env.lattice))


def test_backbone_closed_and_full():
    env = window_environment(1, closed_sites=[((0,), 0)], horizon=5)
    assert not in_backbone(((0,), 0), env)
    full = EnvironmentHandle(3, 3, LatticeConfig(p=1.0))
    assert all(in_backbone(((x,), n), full) for x in range(-3, 3) for n in range(3))


@pytest.mark.parametrize("p", [0.9, 0.8])
def test_horizon_disagreement_decays(p):
    xs, ns = np.meshgrid(np.arange(2000), np.arange(0, 2000, 4), indexing="ij")
    rows = np.column_stack([xs.ravel(), ns.ravel()])
    masks = {h: backbone_mask(rows, EnvironmentHandle(99, 0, LatticeConfig(d=1, p=p, horizon=h)))
             for h in (5, 10, 20, 40)}
    dis = [np.mean(masks[h] != masks[40]) for h in (5, 10, 20)]
    assert dis[0] > dis[1] >= dis[2]
    assert dis[0] > dis[2]
    # a larger horizon only removes sites
    assert not np.any(masks[40] & ~masks[20])


def test_xi_value_support():
    env = EnvironmentHandle(8, 9, LatticeConfig(d=1, p=0.7, horizon=20), WeightFieldSpec.iid(1, 2))
    for x in range(-10, 10):
        for n in range(5):
            s = ((x,), n)
            v = xi_value(s, env)
            assert (v > 0) == in_backbone(s, env)
            if v > 0:
                assert v == weight(s, env)


def test_xi_value_constant_weight():
    env = EnvironmentHandle(1, 1, LatticeConfig(p=1.0))
    assert xi_value(((0,), 0), env) == 1.0


def test_xi_value_berger_beta_zero():
    env = EnvironmentHandle(0, 5, LatticeConfig(d=1, p=1.0), WeightFieldSpec.berger())
    # K(0, n) = beta(n) + 1, so beta(n) = 0 where K(0, n) = 1
    n = next(n for n in range(100) if weight(((0,), n), env) == 1.0)
    assert xi_value(((1,), n), env) == 2.0


def test_condition_on_origin_p1_accepts_first():
    ce = condition_on_origin(3, LatticeConfig(p=1.0))
    assert ce.attempts == 1
    assert in_backbone(((0,), 0), ce.handle)


def test_condition_on_origin_subcritical_gives_up():
    with pytest.raises(RejectionCapError):
        condition_on_origin(3, LatticeConfig(p=0.01, horizon=50), cap=1000)


def test_condition_on_origin_acceptance_interval():
    lat = LatticeConfig(d=1, p=0.9, horizon=50)
    attempts = [condition_on_origin(i, lat).attempts for i in range(300)]
    p_hat, lo, hi = backbone_probability_ci(len(attempts), sum(attempts))
    assert 0 < lo <= p_hat <= hi < 1
    assert 0.6 < p_hat < 1.0


def test_condition_on_origin_reuses_memo():
    lat = LatticeConfig(d=2, p=0.8, horizon=30)
    memo = Memo(2, 30, nn=4)
    a = condition_on_origin(17, lat, memo=memo).handle
    ref = condition_on_origin(17, lat).handle
    assert a.perc_seed == ref.perc_seed
    with pytest.raises(ContractViolation):
        condition_on_origin(17, LatticeConfig(d=1, p=0.8, horizon=30), memo=memo)
