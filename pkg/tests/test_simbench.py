import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htce_bench.simbench import (
    FIXED_TARGET_SIZES,
    CoefficientSet,
    Dataset,
    FeaturePartition,
    SimConfig,
    assign_treatments,
    benchmark_to_csv,
    draw_coefficients,
    generate_covariates,
    load_covariates_csv,
    minmax_scale,
    potential_outcome_means,
    sample_domain_sizes,
    sample_partition,
    simulate,
    simulate_outcomes,
    split_dataset,
    split_sizes,
)


def _toy_dataset(n):
    z = np.arange(n, dtype=float)
    return Dataset(z.reshape(-1, 1), (z % 2).astype(int), z, z, z + 1, np.ones(n), np.full(n, 0.5))


# ---- partitions


def test_partition_d15_all_blocks_five():
    for seed in range(5):
        p = sample_partition(15, np.random.default_rng(seed))
        assert (p.d_shared, p.d_private_source, p.d_private_target) == (5, 5, 5)


def test_partition_d39_ranges_and_disjoint():
    for seed in range(20):
        p = sample_partition(39, np.random.default_rng(seed))
        for size in (p.d_shared, p.d_private_source, p.d_private_target):
            assert 5 <= size <= 13
        cols = p.shared + p.private_source + p.private_target
        assert len(set(cols)) == len(cols)
        assert all(0 <= c < 39 for c in cols)


def test_partition_deterministic():
    a = sample_partition(30, np.random.default_rng(7))
    b = sample_partition(30, np.random.default_rng(7))
    assert a == b


def test_partition_too_small():
    with pytest.raises(ValueError):
        sample_partition(14, np.random.default_rng(0))


def test_partition_rejects_overlap_and_empty():
    with pytest.raises(ValueError):
        FeaturePartition((0, 1), (1, 2), (3,))
    with pytest.raises(ValueError):
        FeaturePartition((0,), (), (3,))


def test_partition_domain_widths():
    p = FeaturePartition.from_sizes(3, 4, 5)
    assert p.d_domain("source") == 7
    assert p.d_domain("target") == 8
    assert p.source_columns == (0, 1, 2, 3, 4, 5, 6)
    assert p.target_columns == (0, 1, 2, 7, 8, 9, 10, 11)


# ---- covariates


def test_minmax_simple_column():
    np.testing.assert_allclose(minmax_scale(np.array([[0.0], [5.0], [10.0]]))[:, 0], [0.0, 0.5, 1.0])


def test_minmax_constant_column():
    out = minmax_scale(np.array([[3.0, 1.0], [3.0, 2.0]]))
    np.testing.assert_array_equal(out[:, 0], 0.5)


def test_generate_covariates_range():
    x = generate_covariates(1000, 30, np.random.default_rng(0))
    assert x.shape == (1000, 30)
    assert x.min() >= 0.0 and x.max() <= 1.0
    np.testing.assert_allclose(x.min(axis=0), 0.0)
    np.testing.assert_allclose(x.max(axis=0), 1.0)


def test_load_covariates_csv_with_schema(tmp_path):
    path = tmp_path / "cov.csv"
    path.write_text("a,b,c,d\n0,1,2,5\n5,1,4,6\n10,1,6,7\n")
    schema = {"shared": ["c"], "private_source": ["a"], "private_target": ["d", "b"]}
    x, part, header = load_covariates_csv(path, schema)
    assert header == ["a", "b", "c", "d"]
    np.testing.assert_allclose(x[:, 0], [0, 0.5, 1])
    np.testing.assert_array_equal(x[:, 1], 0.5)
    assert part == FeaturePartition((2,), (0,), (3, 1))


@pytest.mark.parametrize(
    "text",
    ["", "a,b\n", "a,b\n1,2\n3\n", "a,b\n1,x\n"],
    ids=["empty", "no-rows", "ragged", "non-numeric"],
)
def test_load_covariates_csv_malformed(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ValueError):
        load_covariates_csv(path)


def test_load_covariates_csv_unknown_schema_column(tmp_path):
    path = tmp_path / "cov.csv"
    path.write_text("a,b,c\n1,2,3\n4,5,6\n")
    with pytest.raises(ValueError):
        load_covariates_csv(path, {"shared": ["a"], "private_source": ["b"], "private_target": ["zz"]})


# ---- outcomes


def _unit_coeffs(part, value=1.0):
    return CoefficientSet(
        shared=np.full((2, part.d_shared), value),
        private_source=np.full((2, part.d_private_source), value),
        private_target=np.full((2, part.d_private_target), value),
        all_source=np.full(part.d_domain("source"), value),
        all_target=np.full(part.d_domain("target"), value),
    )


def test_alpha_one_equal_coefficients_gives_zero_effect():
    part = FeaturePartition.from_sizes(3, 2, 2)
    cfg = SimConfig(alpha=1.0, noise_std=0.0, partition=part)
    x = np.ones((4, 5))
    mu0, mu1, y0, y1 = simulate_outcomes(x, part, _unit_coeffs(part), cfg, "target", np.random.default_rng(0))
    np.testing.assert_array_equal(mu0, 1.0)
    np.testing.assert_array_equal(mu1, 1.0)
    np.testing.assert_array_equal(mu1 - mu0, 0.0)
    np.testing.assert_array_equal(y0, mu0)


def test_outcome_hand_value():
    # one shared and one private feature; the domain vector is both of them
    part = FeaturePartition((0,), (1,), (2,))
    coeffs = CoefficientSet(
        shared=np.array([[0.0], [2.0]]),
        private_source=np.array([[0.0], [4.0]]),
        private_target=np.zeros((2, 1)),
        all_source=np.array([1.0, 1.0]),
        all_target=np.zeros(2),
    )
    cfg = SimConfig(alpha=0.5, beta=0.5, noise_std=0.0, partition=part)
    _, mu1 = potential_outcome_means(np.array([[1.0, 1.0]]), part, coeffs, cfg, "source")
    assert mu1[0] == pytest.approx(2.25)


def test_outcome_width_mismatch():
    part = FeaturePartition.from_sizes(2, 2, 3)
    with pytest.raises(ValueError):
        potential_outcome_means(np.ones((3, 4)), part, _unit_coeffs(part), SimConfig(partition=part), "target")


def test_alpha_one_source_and_target_agree_on_shared_block():
    part = FeaturePartition.from_sizes(3, 4, 5)
    cfg = SimConfig(alpha=1.0, partition=part, d_full=12)
    rng = np.random.default_rng(1)
    coeffs = draw_coefficients(part, cfg, rng)
    xs = rng.random((10, 3))
    x_src = np.hstack([xs, rng.random((10, 4))])
    x_tgt = np.hstack([xs, rng.random((10, 5))])
    for a, b in zip(
        potential_outcome_means(x_src, part, coeffs, cfg, "source"),
        potential_outcome_means(x_tgt, part, coeffs, cfg, "target"),
    ):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_alpha_zero_beta_one_depends_only_on_private_block():
    part = FeaturePartition.from_sizes(3, 4, 5)
    cfg = SimConfig(alpha=0.0, beta=1.0, partition=part, d_full=12)
    rng = np.random.default_rng(2)
    coeffs = draw_coefficients(part, cfg, rng)
    x = rng.random((10, 8))
    x2 = x.copy()
    x2[:, :3] = rng.random((10, 3))
    for a, b in zip(
        potential_outcome_means(x, part, coeffs, cfg, "target"),
        potential_outcome_means(x2, part, coeffs, cfg, "target"),
    ):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


# ---- treatment assignment


def test_kappa_zero_gives_half():
    _, pi = assign_treatments(np.zeros(5), np.arange(5.0), 0.0, np.random.default_rng(0))
    np.testing.assert_array_equal(pi, 0.5)


def test_kappa_two_unit_effect():
    _, pi = assign_treatments(np.zeros(1), np.ones(1), 2.0, np.random.default_rng(0))
    assert pi[0] == pytest.approx(0.8808, abs=1e-4)


def test_kappa_zero_treated_fraction():
    w, _ = assign_treatments(np.zeros(10_000), np.ones(10_000), 0.0, np.random.default_rng(0))
    assert 0.45 <= w.mean() <= 0.55


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 10), st.integers(0, 2**31))
def test_propensity_monotone_in_effect(kappa, seed):
    rng = np.random.default_rng(seed)
    tau = np.sort(rng.normal(size=20))
    _, pi = assign_treatments(np.zeros(20), tau, kappa, rng)
    assert np.all(np.diff(pi) >= 0)


def test_negative_kappa_rejected():
    with pytest.raises(ValueError):
        assign_treatments(np.zeros(2), np.zeros(2), -1.0, np.random.default_rng(0))


# ---- splits and sizes


def test_split_n100():
    assert split_sizes(100) == (56, 24, 20)


def test_split_n101_remainder_to_train():
    n_tr, n_va, n_te = split_sizes(101)
    assert n_tr + n_va + n_te == 101
    assert (n_tr, n_va, n_te) == (57, 24, 20)
    for size, frac in zip((n_tr, n_va, n_te), (0.56, 0.24, 0.20)):
        assert abs(size - frac * 101) <= 1


def test_split_too_small():
    with pytest.raises(ValueError):
        split_sizes(19)


@settings(max_examples=40, deadline=None)
@given(st.integers(20, 3000))
def test_split_sizes_property(n):
    sizes = split_sizes(n)
    assert sum(sizes) == n
    assert all(s >= 1 for s in sizes)
    for size, frac in zip(sizes, (0.56, 0.24, 0.20)):
        assert abs(size - frac * n) <= 2


def test_split_dataset_disjoint_union_and_deterministic():
    ds = _toy_dataset(57)
    a = split_dataset(ds, np.random.default_rng(4))
    b = split_dataset(ds, np.random.default_rng(4))
    ids = np.concatenate([a.train.y, a.validation.y, a.test.y])
    assert sorted(ids) == list(range(57))
    for part in ("train", "validation", "test"):
        np.testing.assert_array_equal(getattr(a, part).y, getattr(b, part).y)
        sub = getattr(a, part)
        np.testing.assert_array_equal(sub.mu1, sub.y + 1)  # ground truth travels with the rows


def test_domain_sizes_boundary():
    for seed in range(20):
        n_t, n_s = sample_domain_sizes(1500, np.random.default_rng(seed))
        assert 100 <= n_t <= 500
        assert 1000 <= n_s <= 1500 - n_t


def test_domain_sizes_fixed_modes():
    for n_t in FIXED_TARGET_SIZES:
        got, n_s = sample_domain_sizes(10_000, np.random.default_rng(0), n_target=n_t)
        assert got == n_t and n_s + n_t <= 10_000
    with pytest.raises(ValueError):
        sample_domain_sizes(10_000, np.random.default_rng(0), n_target=150)
    with pytest.raises(ValueError):
        sample_domain_sizes(1499, np.random.default_rng(0))


def test_domain_sizes_deterministic():
    assert sample_domain_sizes(5000, np.random.default_rng(3)) == sample_domain_sizes(5000, np.random.default_rng(3))


# ---- config


def test_config_validation():
    for bad in (dict(alpha=1.5), dict(beta=-0.1), dict(kappa_source=-1), dict(noise_std=-1),
                dict(n_target=19), dict(coefficient_law="cauchy")):
        with pytest.raises(ValueError):
            SimConfig(**bad)


def test_config_json_roundtrip():
    cfg = SimConfig(alpha=0.3, partition=FeaturePartition.from_sizes(5, 6, 7), seed=9)
    again = SimConfig.from_json(cfg.to_json())
    assert again == cfg
    assert set(json.loads(cfg.to_json())) == {
        "alpha", "beta", "kappa_source", "kappa_target", "n_source", "n_target", "d_full", "partition",
        "noise_std", "coefficient_param_a", "coefficient_param_b", "coefficient_law", "seed",
    }
    with pytest.raises(ValueError):
        SimConfig.from_dict({"alpha": 0.5, "gamma": 1})


# ---- whole benchmark


def test_simulate_shapes_and_invariants():
    data = simulate(SimConfig(n_source=500, n_target=100, seed=3))
    part = data.partition
    assert data.source.x.shape == (500, part.d_domain("source"))
    assert data.target.full().x.shape == (100, part.d_domain("target"))
    assert len(data.target.train) == 56
    for ds in (data.source, data.target.train, data.target.validation, data.target.test):
        assert np.array_equal(ds.tau, ds.mu1 - ds.mu0)
        assert set(np.unique(ds.w)) <= {0, 1}
        assert np.all((ds.pi > 0) & (ds.pi < 1))
        # factual outcome is the selected arm plus the shared noise draw
        noise = ds.y - np.where(ds.w == 1, ds.mu1, ds.mu0)
        assert np.abs(noise).max() < 1.0


def test_simulate_bitwise_deterministic():
    a = simulate(SimConfig(n_source=300, n_target=100, seed=11))
    b = simulate(SimConfig(n_source=300, n_target=100, seed=11))
    for f in ("x", "w", "y", "mu0", "mu1", "tau", "pi"):
        assert np.array_equal(getattr(a.source, f), getattr(b.source, f))
        assert np.array_equal(getattr(a.target.test, f), getattr(b.target.test, f))
    c = simulate(SimConfig(n_source=300, n_target=100, seed=12))
    assert not np.array_equal(a.source.y, c.source.y)


def test_simulate_with_covariates_and_partition():
    rng = np.random.default_rng(0)
    x = rng.random((200, 9))
    part = FeaturePartition((0, 1, 2), (3, 4, 5), (6, 7, 8))
    data = simulate(SimConfig(n_source=150, n_target=50, d_full=9, partition=part), covariates=x)
    assert data.partition == part
    src_rows = {tuple(r) for r in x[:, [0, 1, 2, 3, 4, 5]]}
    assert all(tuple(r) in src_rows for r in data.source.x)
    with pytest.raises(ValueError):
        simulate(SimConfig(n_source=250, n_target=50, d_full=9, partition=part), covariates=x)


def test_benchmark_csv(tmp_path):
    data = simulate(SimConfig(n_source=60, n_target=40, seed=1))
    path = tmp_path / "data.csv"
    n = benchmark_to_csv(data, path)
    assert n == 100
    lines = path.read_text().splitlines()
    assert len(lines) == 101
    header = lines[0].split(",")
    assert header[:2] == ["domain", "split"] and header[-6:] == ["w", "y", "mu0", "mu1", "tau", "pi"]
    first = lines[1].split(",")
    assert first[0] == "source"
    # target-private cells stay empty on source rows
    assert first[header.index("pt0")] == ""
