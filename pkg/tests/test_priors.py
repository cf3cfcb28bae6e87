import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcnn import priors as pr
from tcnn.core_math import make_rng
from tcnn.errors import ConfigurationError


def naive_fourier_1d(k, phase, x):
    return math.sin(2 * math.pi * k * x) if phase == pr.SIN else math.cos(2 * math.pi * k * x)


def naive_kl_value(layout, xi, x):
    """Term-by-term basis sum built from the basis description."""
    b = layout.basis
    total = 0.0
    for n in range(layout.n_params):
        f = naive_fourier_1d(b["k1"][n], b["ph1"][n], x[b["ax1"][n]])
        if b["ph2"][n] != pr.ONE:
            f *= naive_fourier_1d(b["k2"][n], b["ph2"][n], x[b["ax2"][n]])
        total += xi[n] * f
    return total


def test_fourier_first_eigenvalue():
    layout = pr.build_kl_fourier_2d((1, 1), 2.0)
    assert layout.n_params == 4
    assert np.allclose(layout.variances, 0.5, rtol=1e-15)


def test_fourier_count():
    assert pr.build_kl_fourier_2d((70, 70), 2.0).n_params == 19600
    assert pr.build_kl_fourier_2d((3, 5), 2.0).n_params == 60


def test_anova_counts():
    assert pr.anova_count(2, 70, 70) == 19880
    assert pr.anova_count(17, 10, 10) == 54740
    assert pr.anova_count(17, 70, 70) == 2667980
    layout = pr.build_kl_anova(2, 70, 70, 2.0)
    assert layout.n_params == 19880


def test_fourier_alpha_monotone():
    lo = pr.build_kl_fourier_2d((6, 6), 1.001)
    hi = pr.build_kl_fourier_2d((6, 6), 2.0)
    big = lo.basis["k1"] ** 2 + lo.basis["k2"] ** 2 > 1
    assert np.all(lo.variances[big] > hi.variances[big])


@pytest.mark.parametrize("alpha", [1.0, 0.5, -1.0, float("nan")])
def test_kl_rejects_non_trace_class(alpha):
    with pytest.raises(ConfigurationError):
        pr.build_kl_fourier_2d(3, alpha)
    with pytest.raises(ConfigurationError):
        pr.build_kl_anova(3, 3, 3, alpha)


def test_kl_range_checks():
    with pytest.raises(ConfigurationError):
        pr.build_kl_fourier_2d((0, 3), 2.0)
    with pytest.raises(ConfigurationError):
        pr.build_kl_cosine_2d((3, 0))
    with pytest.raises(ConfigurationError):
        pr.build_kl_anova(1, 3, 3, 2.0)


def test_cosine_layout():
    layout = pr.build_kl_cosine_2d((25, 25))
    assert layout.n_params == 625
    first = (math.pi**2 * 4.5) ** -1.1
    assert layout.variances[0] == pytest.approx(first, rel=1e-15)
    Phi = pr.kl_design_matrix(layout, [[0.0, 0.0]])
    assert np.all(Phi == 2.0)


def test_cosine_basis_values():
    layout = pr.build_kl_cosine_2d((3, 4))
    x = np.array([0.3, 0.7])
    Phi = pr.kl_design_matrix(layout, x[None, :])[0]
    for n in range(layout.n_params):
        i1, i2 = layout.basis["i1"][n], layout.basis["i2"][n]
        ref = 2 * math.cos(math.pi * (i1 + 0.5) * x[0]) * math.cos(math.pi * (i2 + 0.5) * x[1])
        assert abs(Phi[n] - ref) < 1e-14


def test_anova_pair_counts():
    assert pr.build_kl_anova(2, 2, 2, 2.0).meta["n_pairs"] == 1
    assert pr.build_kl_anova(17, 1, 1, 2.0).meta["n_pairs"] == 136


def test_anova_matches_naive_sum():
    rng = np.random.default_rng(0)
    layout = pr.build_kl_anova(4, 3, (2, 3), 2.0)
    ev = pr.make_evaluator(layout)
    for _ in range(5):
        xi = rng.normal(size=layout.n_params)
        x = rng.uniform(size=4)
        assert abs(ev(xi, x)[0] - naive_kl_value(layout, xi, x)) < 1e-12


def test_fourier_matches_naive_sum():
    rng = np.random.default_rng(1)
    layout = pr.build_kl_fourier_2d((3, 4), 1.5)
    ev = pr.make_evaluator(layout)
    xi = rng.normal(size=layout.n_params)
    X = rng.uniform(size=(6, 2))
    ref = [naive_kl_value(layout, xi, x) for x in X]
    assert np.allclose(ev(xi, X), ref, rtol=0, atol=1e-12)


def test_anova_pair_eigenvalues_ignore_axes():
    layout = pr.build_kl_anova(3, 2, 2, 2.0)
    b = layout.basis
    pair = b["ph2"] != pr.ONE
    ref = (b["k1"][pair] ** 2 + b["k2"][pair] ** 2) ** -1.0
    assert np.allclose(layout.variances[pair], ref, rtol=1e-15)
    assert np.allclose(layout.variances[~pair], b["k1"][~pair] ** -2.0, rtol=1e-15)


def test_tcnn_variances():
    layout = pr.build_tcnn([10, 10, 10], 2, 1.5, 2.0, 2.0)
    shape = layout.shape
    assert layout.n_params == 261
    assert layout.variances[shape.weight_index(2, 2, 3)] == pytest.approx(2 / 6**1.5, rel=1e-15)
    assert layout.variances[shape.weight_index(1, 4, 2)] == pytest.approx(2 / 4**1.5, rel=1e-15)
    assert layout.variances[shape.bias_index(3, 5)] == pytest.approx(2 / 5**1.5, rel=1e-15)


@pytest.mark.parametrize("widths,count", [([w] * 3, c) for w, c in zip(
    range(10, 101, 10), [261, 921, 1981, 3441, 5301, 7561, 10221, 13281, 16741, 20601])])
def test_tcnn_parameter_counts(widths, count):
    assert pr.build_tcnn(widths, 2).n_params == count


def test_tcnn_alpha_zero_flat_within_layer():
    layout = pr.build_tcnn([4, 5], 3, 0.0, [1.0, 2.0, 3.0], [0.5, 0.25, 0.125])
    shape = layout.shape
    for l in (1, 2, 3):
        assert np.unique(layout.variances[shape.weight_slice(l)]).size == 1
        assert np.unique(layout.variances[shape.bias_slice(l)]).size == 1


def test_tcnn_bad_sigmas():
    with pytest.raises(ConfigurationError):
        pr.build_tcnn([3], 2, 1.5, 0.0, 1.0)
    with pytest.raises(ConfigurationError):
        pr.build_tcnn([3], 2, 1.5, 1.0, [1.0, -1.0])
    with pytest.raises(ConfigurationError):
        pr.build_tcnn([3], 2, 1.5, [1.0, 1.0, 1.0], 1.0)
    with pytest.raises(ConfigurationError):
        pr.build_tcnn([3], 2, -0.5)


def test_degenerate_truncations():
    assert pr.build_kl_fourier_2d(1, 2.0).n_params == 4
    assert pr.build_kl_cosine_2d((1, 1)).n_params == 1
    layout = pr.build_tcnn([1], 2)
    assert layout.n_params == 5
    ev = pr.make_evaluator(layout)
    assert ev(np.ones(5), [[0.5, 0.5]]).shape == (1,)


def test_bnn_scalings():
    fan = pr.bnn_layer_variances([10, 20, 30], 2)
    assert np.allclose(fan, [10 / 6, 10 / 30, 10 / 60, 10 / 90])
    lit = pr.bnn_layer_variances([10, 20, 30], 2, "literal")
    assert np.allclose(lit, [10 / 30, 10 / 60, 10 / 90, 10 / 3])
    layout = pr.build_bnn([10, 20, 30], 2)
    assert layout.family == pr.BNN and layout.alpha == 0.0
    shape = layout.shape
    assert layout.variances[shape.weight_index(3, 7, 11)] == pytest.approx(10 / 60)
    assert layout.variances[shape.bias_index(3, 7)] == pytest.approx(10 / 60)
    with pytest.raises(ConfigurationError):
        pr.bnn_layer_variances([10], 2, "fan_out")


def test_prior_sample_deterministic():
    layout = pr.build_tcnn([5, 5], 2)
    a = pr.prior_sample(layout, make_rng(3, "p"))
    b = pr.prior_sample(layout, make_rng(3, "p"))
    assert np.array_equal(a, b)
    assert pr.prior_sample(layout, make_rng(3, "p"), size=4).shape == (4, layout.n_params)


def test_prior_sample_layer_two_variance():
    layout = pr.build_tcnn([100] * 3, 2, 1.5, 2.0, 2.0)
    idx = layout.shape.weight_index(2, 2, 3)
    rng = make_rng(11, "mc")
    n, chunk = 100_000, 500
    vals = np.concatenate([pr.prior_sample(layout, rng, chunk)[:, idx].copy() for _ in range(n // chunk)])
    target = 2 / 6**1.5
    se = target * math.sqrt(2 / n)
    assert abs(vals.var() - target) <= 5 * se


def test_prior_sample_centered():
    layout = pr.build_tcnn([10] * 3, 2, 1.5, 2.0, 2.0)
    n = 100_000
    draws = pr.prior_sample(layout, make_rng(12, "mean"), n)
    z = draws.mean(axis=0) / (layout.std / math.sqrt(n))
    # 261 coordinates, so a 5 sigma miss is vanishingly unlikely
    assert np.all(np.abs(z) <= 5)


def test_evaluator_single_coefficient():
    layout = pr.build_kl_fourier_2d((2, 2), 2.0)
    ev = pr.make_evaluator(layout)
    X = np.random.default_rng(2).uniform(size=(5, 2))
    for n in (0, 5, 15):
        xi = np.zeros(layout.n_params)
        xi[n] = 1.0
        assert np.array_equal(ev(xi, X), pr.kl_design_matrix(layout, X)[:, n])


def test_zero_params_give_zero_function():
    X = np.random.default_rng(3).uniform(size=(4, 2))
    for layout in (pr.build_kl_fourier_2d(3, 2.0), pr.build_tcnn([3, 3], 2)):
        assert np.all(pr.make_evaluator(layout)(np.zeros(layout.n_params), X) == 0.0)


def test_groundwater_augmentation():
    aug = pr.Augmentation("groundwater")
    assert np.array_equal(aug(np.array([0.5, 0.25])), [0.5, 0.25, math.sin(0.5), math.sin(0.25)])
    layout = pr.build_tcnn([3], 4)
    ev = pr.make_evaluator(layout, aug)
    assert ev.input_dim == 2
    with pytest.raises(ConfigurationError):
        pr.make_evaluator(pr.build_tcnn([3], 2), aug)
    with pytest.raises(ConfigurationError):
        ev(np.zeros(layout.n_params), [[0.1, 0.2, 0.3]])


def test_box_augmentation():
    aug = pr.Augmentation("box", (-1.2, -0.07), (0.6, 0.07))
    assert np.allclose(aug(np.array([[-1.2, -0.07], [0.6, 0.07], [-0.3, 0.0]])), [[0, 0], [1, 1], [0.5, 0.5]])
    assert pr.Augmentation.from_dict(aug.to_dict()) == aug
    with pytest.raises(ConfigurationError):
        pr.Augmentation("box", (0.0,), (0.0,))
    with pytest.raises(ConfigurationError):
        pr.Augmentation("polar")


def test_trace_grows_boundedly():
    traces = [pr.build_kl_fourier_2d(k, 2.5).trace for k in (5, 10, 20, 40)]
    assert all(b > a for a, b in zip(traces, traces[1:]))
    # increments shrink for a summable sequence
    inc = np.diff(traces)
    assert inc[-1] < inc[0]
    nn_traces = [pr.build_tcnn([w] * 2, 2, 1.5).trace for w in (10, 40, 160)]
    assert all(b > a for a, b in zip(nn_traces, nn_traces[1:]))
    assert np.diff(nn_traces)[-1] < np.diff(nn_traces)[0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_kl_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    layout = pr.build_kl_fourier_2d((3, 3), 2.0)
    ev = pr.make_evaluator(layout)
    xi, eta = rng.normal(size=(2, layout.n_params))
    X = rng.uniform(size=(4, 2))
    lhs = ev(a * xi + b * eta, X)
    rhs = a * ev(xi, X) + b * ev(eta, X)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * (1 + np.abs(rhs).max()))


def test_chunked_evaluation_matches():
    layout = pr.build_kl_fourier_2d((4, 4), 2.0)
    ev = pr.make_evaluator(layout)
    rng = np.random.default_rng(4)
    P = rng.normal(size=(3, layout.n_params))
    X = rng.uniform(size=(50, 2))
    full = P @ pr.kl_design_matrix(layout, X).T
    assert np.allclose(ev.evaluate_many(P, X, chunk_entries=200), full, rtol=0, atol=1e-12)


def test_moment_bound_small_net():
    layout = pr.build_tcnn([8, 8], 2, 1.5, 2.0, 2.0)
    x = np.array([0.3, 0.8])
    n = 20_000
    draws = pr.prior_sample(layout, make_rng(5, "mom"), n)
    f = np.stack([pr.layer_outputs(layout, p, x[None, :])[-1][0, 0] for p in draws[:n]])
    bound = pr.tcnn_moment_bounds(layout, x)[-1][0]
    assert np.mean(f**2) <= bound * (1 + 5 / math.sqrt(n))


def test_prior_spec_round_trip():
    spec = pr.PriorSpec(
        "tcnn", alpha=1.5, widths=[10, 10, 10], d=2, sigmas_w=3.0, sigmas_b=3.0,
        augmentation={"kind": "box", "lo": [-1.2, -0.07], "hi": [0.6, 0.07]},
    )
    again = pr.PriorSpec.from_json(spec.to_json())
    assert again == spec
    assert np.array_equal(again.build().variances, spec.build().variances)
    with pytest.raises(ConfigurationError):
        pr.PriorSpec.from_dict({"family": "tcnn", "colour": "red"})
    with pytest.raises(ConfigurationError):
        pr.PriorSpec("gp")


def test_prior_spec_builds_each_family():
    specs = [
        pr.PriorSpec("kl_fourier_2d", alpha=2.0, kmax=[3, 3]),
        pr.PriorSpec("kl_cosine_2d", imax=[4, 4]),
        pr.PriorSpec("kl_anova", alpha=2.0, d=3, k1d=2, kmax=[2, 2]),
        pr.PriorSpec("tcnn", alpha=1.5, widths=[4], d=2),
        pr.PriorSpec("bnn", widths=[4], d=2, scaling="literal"),
    ]
    counts = [36, 16, pr.anova_count(3, 2, 2), 17, 17]
    for spec, count in zip(specs, counts):
        assert spec.build().n_params == count
