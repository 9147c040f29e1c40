import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tpuzzle.landscape import (
    LossMap,
    classify,
    concentration_experiment,
    enumerate_losses,
    flip_differences,
    gap_delta,
    heatmap_experiment,
    instance_loss_map,
    is_monotonic,
    is_separable,
    is_unimodal,
    sliding_step,
)
from tpuzzle.puzzle import build_instance, index_to_bits


def leading_ones(s_star):
    D = len(s_star)

    def fn(s):
        lo = 0
        for a, b in zip(s, s_star):
            if a != b:
                break
            lo += 1
        return 1 - lo / D

    return fn


def hamming_map(s_star):
    D = len(s_star)
    return enumerate_losses(lambda s: sum(a != b for a, b in zip(s, s_star)) / D, D)


def brute_unimodal(values, D):
    best = min(values)
    if sum(v == best for v in values) != 1:
        return False
    for i, v in enumerate(values):
        if v == best:
            continue
        if not any(values[i ^ (1 << b)] < v - 1e-12 for b in range(D)):
            return False
    return True


def brute_monotonic(values, D, s_star):
    ref = int("".join(map(str, s_star)), 2)
    for a, b in itertools.product(range(1 << D), repeat=2):
        ma, mb = a ^ ref, b ^ ref
        if ma & mb == ma and values[a] > values[b] + 1e-12:
            return False
    return True


maps = st.integers(1, 5).flatmap(
    lambda D: st.tuples(
        st.just(D),
        st.lists(st.floats(0, 1), min_size=1 << D, max_size=1 << D),
        st.integers(0, (1 << D) - 1),
    )
)


def test_enumeration_of_degenerate_instance():
    inst = build_instance(2, 2, 0.0, 0.0, k=3, seed=0)
    lmap = instance_loss_map(inst)
    np.testing.assert_allclose(lmap.values, 0, atol=1e-12)
    assert lmap.values.size == 4


def test_leading_ones_values_and_unimodality():
    s_star = (1, 0, 1)
    lmap = enumerate_losses(leading_ones(s_star), 3)
    expected = {(1, 0, 1): 0, (1, 0, 0): 1 / 3, (1, 1, 1): 2 / 3, (0, 0, 1): 1}
    for s, v in expected.items():
        assert lmap[s] == pytest.approx(v)
    for D in range(1, 7):
        s_star = index_to_bits((5 * D) % (1 << D), D)
        assert is_unimodal(enumerate_losses(leading_ones(s_star), D))


def test_needle_is_not_unimodal():
    for D in (2, 3, 5):
        vals = np.ones(1 << D)
        vals[3] = 0
        assert not is_unimodal(LossMap(D, vals))


def test_hamming_map_is_monotonic_and_unimodal():
    s_star = (0, 1, 1, 0)
    lmap = hamming_map(s_star)
    assert is_monotonic(lmap, s_star)
    assert is_unimodal(lmap)
    assert is_separable(lmap)
    assert sliding_step(lmap, s_star) == pytest.approx(1 / 4)


def test_one_bit_maps_are_monotonic_about_their_minimum():
    for vals in ([0.2, 0.7], [0.9, 0.1], [0.4, 0.4]):
        lmap = LossMap(1, vals)
        assert is_monotonic(lmap, lmap.argmin)


def test_additive_and_product_maps():
    w = (0.1, 0.3, 0.2)
    additive = enumerate_losses(lambda s: float(np.dot(w, s)), 3)
    assert is_separable(additive)
    np.testing.assert_allclose(flip_differences(additive, 1), 0.3)
    product = enumerate_losses(lambda s: float(s[0] * s[1]), 2)
    assert not is_separable(product)


def test_sliding_step_and_gap_examples():
    # shell means 0, 0.3, 0.5 around s* = 00
    lmap = LossMap(2, [0.0, 0.2, 0.4, 0.5])
    assert sliding_step(lmap, (0, 0)) == pytest.approx(0.25)
    lmap = LossMap(3, [0, 0.2, 0.5, 0.8, 0.9, 0.9, 0.9, 1.0])
    # shell h=2 about 000 holds indices 3, 5, 6
    assert gap_delta(lmap, (0, 0, 0)) == pytest.approx(0.05)
    vals = np.zeros(8)
    vals[[3, 5, 6]] = [0.2, 0.5, 0.9]
    assert gap_delta(LossMap(3, vals), (0, 0, 0)) == pytest.approx(0.35)
    with pytest.raises(ValueError):
        gap_delta(LossMap(1, [0.1, 0.2]), (0,))
    assert math.isnan(classify(LossMap(1, [0.1, 0.2]), (0,)).delta_gap)


@given(maps)
def test_telescoping_identities(args):
    D, vals, ref = args
    lmap = LossMap(D, vals)
    s_star = index_to_bits(ref, D)
    means = lmap.shell_means(s_star)
    assert abs(sliding_step(lmap, s_star) - (means[-1] - means[0]) / D) <= 1e-12
    shell = lmap.shell(s_star, math.ceil(D / 2))
    if shell.size >= 2:
        expected = (shell.max() - shell.min()) / (shell.size - 1)
        assert abs(gap_delta(lmap, s_star) - expected) <= 1e-12


@given(maps)
def test_classifiers_match_brute_force(args):
    D, vals, ref = args
    lmap = LossMap(D, vals)
    s_star = index_to_bits(ref, D)
    assert is_unimodal(lmap) == brute_unimodal(vals, D)
    assert is_monotonic(lmap, s_star) == brute_monotonic(vals, D, s_star)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_shell_sizes_are_binomial(D, seed):
    rng = np.random.default_rng(seed)
    lmap = LossMap(D, rng.uniform(size=1 << D))
    s_star = index_to_bits(int(rng.integers(1 << D)), D)
    for h in range(D + 1):
        assert lmap.shell(s_star, h).size == math.comb(D, h)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_strictly_separable_maps_are_unimodal(D, seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.01, 1, size=D) * rng.choice([-1, 1], size=D)
    raw = np.array([np.dot(w, index_to_bits(i, D)) for i in range(1 << D)])
    lmap = LossMap(D, (raw - raw.min()) / (raw.max() - raw.min()))
    assert is_separable(lmap)
    assert is_unimodal(lmap)


def test_map_validation_and_persistence(tmp_path):
    with pytest.raises(ValueError):
        LossMap(2, [0, 0.1, 0.2])
    with pytest.raises(ValueError):
        LossMap(1, [0, 1.5])
    with pytest.raises(ValueError):
        enumerate_losses(lambda s: 0.0, 17)
    lmap = LossMap(3, np.linspace(0, 1, 8))
    with pytest.raises(ValueError):
        lmap.values[0] = 1
    lmap.save(tmp_path / "m.f64", beta=0.2)
    assert (tmp_path / "m.f64").stat().st_size == 64
    back = LossMap.load(tmp_path / "m.f64")
    np.testing.assert_array_equal(back.values, lmap.values)


def test_unimodal_report_argmin_is_hidden_string():
    for seed in range(3):
        inst = build_instance(5, 5, 0.25, 0.25, seed=seed)
        rep = classify(instance_loss_map(inst), inst.s_star)
        if rep.unimodal:
            assert rep.argmin == inst.s_star
        assert not rep.separable


def test_experiments_shape_and_worker_invariance():
    a = heatmap_experiment(4, 4, [0.05, 0.3], instances_per_cell=2, seed=1)
    b = heatmap_experiment(4, 4, [0.05, 0.3], instances_per_cell=2, seed=1, workers=2)
    assert a == b
    assert {"non_unimodal_fraction", "non_separable_fraction", "non_monotonic_fraction"} <= set(a[0])
    rows = concentration_experiment([4, 5], 0.2, instances=2, seed=1)
    assert [r["n"] for r in rows] == [4, 5]
    assert all(r["mean_delta_s"] > 0 for r in rows)
