import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volleypg import mixed
from volleypg.errors import DegenerateSplit, DroppedFactor, SingularDesign, UnknownFactor


def balanced_reml(y, m, k):
    """Closed-form REML for a balanced one-way layout (ANOVA estimator, truncated at 0)."""
    Y = y.reshape(m, k)
    means = Y.mean(axis=1)
    msb = k * ((means - Y.mean()) ** 2).sum() / (m - 1)
    mse = ((Y - means[:, None]) ** 2).sum() / (m * (k - 1))
    if msb <= mse:
        return Y.var(ddof=1), 0.0
    return mse, (msb - mse) / k


def one_way(seed, m=30, k=20, sd_g=0.5):
    rng = np.random.default_rng(seed)
    g = np.repeat(np.arange(m), k)
    y = 1.0 + rng.normal(0, sd_g, m)[g] + rng.normal(0, 1, m * k)
    return y, g


@pytest.mark.parametrize("seed", range(8))
def test_balanced_oracle(seed):
    y, g = one_way(seed)
    f = mixed.fit(y, {"g": g})
    se, sg = balanced_reml(y, 30, 20)
    assert f.converged
    assert f.residual_variance == pytest.approx(se, rel=1e-6)
    assert f.components["g"] == pytest.approx(sg, rel=1e-6)


def test_shrinkage_toward_zero():
    y, g = one_way(3)
    f = mixed.fit(y, {"g": g})
    resid = y - f.intercept
    for lvl in range(30):
        gm = resid[g == lvl].mean()
        b = f.blup("g", str(lvl))
        assert abs(b) <= abs(gm)
        assert np.sign(b) == np.sign(gm)


def test_more_data_means_less_shrinkage():
    rng = np.random.default_rng(0)
    # level "big" has 1000 rows and "small" one row, both with the same residual offset
    labels = ["big"] * 1000 + ["small"] + [f"o{i}" for i in range(200)]
    eff = {"big": 1.0, "small": 1.0}
    y = np.array([eff.get(l, rng.normal(0, 1)) for l in labels]) + rng.normal(0, 0.01, len(labels))
    y[:1000] = 1.0 + (y[:1000] - y[:1000].mean())
    f = mixed.fit(y, {"g": labels})
    big, small = f.blup("g", "big"), f.blup("g", "small")
    assert abs(big - 1.0 + f.intercept) < abs(small - 1.0 + f.intercept)


def test_identical_responses():
    f = mixed.fit([0.2] * 10, {"a": list("aabbccddee")})
    assert f.components == {"a": 0.0} and f.residual_variance == 0.0
    assert f.intercept == 0.2
    assert set(f.blups["a"].values()) == {0.0}


def test_single_level_factor_dropped():
    y, g = one_way(1)
    with pytest.warns(DroppedFactor):
        f = mixed.fit(y, {"g": g, "one": ["x"] * len(y)})
    assert f.dropped == ["one"] and f.components["one"] == 0.0


def test_too_few_rows():
    with pytest.raises(SingularDesign):
        mixed.fit([1.0], {"g": ["a"]})


def test_crossed_blups_sum_to_zero():
    rng = np.random.default_rng(2)
    a = rng.integers(0, 12, 800)
    b = rng.integers(0, 9, 800)
    y = rng.normal(0, 0.4, 12)[a] + rng.normal(0, 0.3, 9)[b] + rng.normal(0, 1, 800)
    f = mixed.fit(y, {"a": a, "b": b})
    # the intercept equation forces the BLUPs of each factor to sum to zero over its levels
    for name in ("a", "b"):
        assert abs(sum(f.blups[name].values())) < 1e-9


def test_permutation_invariance():
    y, g = one_way(4)
    perm = np.random.default_rng(9).permutation(len(y))
    f1 = mixed.fit(y, {"g": g})
    f2 = mixed.fit(y[perm], {"g": g[perm]})
    assert f2.components["g"] == pytest.approx(f1.components["g"], rel=1e-9)
    assert f2.blup("g", "7") == pytest.approx(f1.blup("g", "7"), rel=1e-8, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 100.0), st.integers(0, 10_000))
def test_scale_equivariance(c, seed):
    y, g = one_way(seed % 50, m=10, k=8, sd_g=1.0)
    f1 = mixed.fit(y, {"g": g})
    f2 = mixed.fit(c * y, {"g": g})
    assert f2.residual_variance == pytest.approx(c * c * f1.residual_variance, rel=1e-5)
    assert f2.components["g"] == pytest.approx(c * c * f1.components["g"], rel=1e-5,
                                               abs=1e-8 * c * c * f1.residual_variance)


def test_zero_score_matches_finite_difference():
    y, g = one_way(6, sd_g=0.05)
    design, _ = mixed._build_design(y, {"g": g}, np.ones_like(y))
    solver = mixed._Solver(design)
    theta = np.array([1.0, 0.0])
    h = 1e-6
    _, n0 = solver.em_step(np.array([1.0, 0.0]))
    _, n1 = solver.em_step(np.array([1.0, h]))
    assert solver.zero_score(theta, 0) == pytest.approx((n1 - n0) / h, rel=1e-3)


def test_predict_linear():
    f = mixed.MixedFit(["a", "b"], 0.5, 1.0, {"a": 1.0, "b": 1.0},
                       {"a": {"x": 0.25}, "b": {"y": -0.1}})
    assert mixed.predict_linear(f, {"a": "x", "b": "y"}, ["a", "b"]) == pytest.approx(0.65)
    assert mixed.predict_linear(f, {"a": "x", "b": "unseen"}, ["a", "b"], include_intercept=False) == 0.25
    with pytest.raises(UnknownFactor):
        mixed.predict_linear(f, {}, ["c"])


def test_variance_ratio():
    f = mixed.MixedFit(["a", "s"], 0.0, 1.0, {"a": 0.9, "s": 0.1}, {"a": {}, "s": {}})
    assert mixed.variance_ratio(f, "a", "s") == pytest.approx(0.9)
    z = mixed.MixedFit(["a", "s"], 0.0, 1.0, {"a": 0.0, "s": 0.0}, {"a": {}, "s": {}})
    with pytest.warns(DegenerateSplit):
        assert mixed.variance_ratio(z, "a", "s") == 0.5


def test_fit_json_round_trip(tmp_path):
    y, g = one_way(0)
    f = mixed.fit(y, {"g": g})
    f.dump(tmp_path / "f.json")
    back = mixed.MixedFit.load(tmp_path / "f.json")
    assert back.components == f.components and back.blups == f.blups
    assert back.intercept == f.intercept


def test_no_signal_gives_small_component():
    rng = np.random.default_rng(1)
    g = np.repeat(np.arange(40), 25)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        f = mixed.fit(rng.normal(0, 1, 1000), {"g": g})
    assert f.components["g"] < 0.02
