import copy
import datetime as dt
import math

import numpy as np
import pytest

from deepcovidnet.features import (
    UndefinedMetricError,
    build_samples,
    daily_average,
    input_window,
    reproduction_number,
    venables_distance,
    weekly_rise,
    weekly_rises,
)
from deepcovidnet.ordinal import ClassBoundaries, assign_class
from deepcovidnet.synthetic import RecipeError, SignalTerm, SyntheticUniverseSpec, generate_synthetic
from deepcovidnet.universe import load_universe, save_universe


def venables_oracle(xy, s):
    num = den = 0.0
    for i in range(len(s)):
        for j in range(i + 1, len(s)):
            d = math.dist(xy[i], xy[j])
            num += s[i] * s[j] * d
            den += s[i] * s[j]
    return num / den


class TestVenables:
    def test_single_pair(self):
        assert venables_distance([[0, 0], [4, 0]], [1, 1]) == 4.0

    def test_three_cells(self):
        # side lengths 1, 2, 3 are degenerate in the plane, so place cells on a line
        xy = [[0.0, 0.0], [1.0, 0.0], [-2.0, 0.0]]
        # d12=1, d13=2, d23=3
        assert venables_distance(xy, [1, 2, 3]) == pytest.approx(26 / 11, abs=1e-12)

    def test_coincident(self):
        assert venables_distance(np.full((3, 2), 5.0), [1.0, 2.0, 3.0]) == 0.0

    def test_daily_average(self):
        xy, s = daily_average([[0, 0], [4, 0], [0, 0]], [1, 1, 3])
        np.testing.assert_array_equal(xy, [[0, 0], [4, 0]])
        np.testing.assert_array_equal(s, [2, 1])

    def test_errors(self):
        with pytest.raises(UndefinedMetricError):
            venables_distance([[0, 0]], [1])
        with pytest.raises(UndefinedMetricError):
            venables_distance([[0, 0], [1, 1]], [0, 0])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            k = rng.integers(2, 30)
            xy, s = rng.uniform(0, 40, size=(k, 2)), rng.exponential(size=k)
            assert abs(venables_distance(xy, s) - venables_oracle(xy, s)) <= 1e-12 * max(1.0, venables_oracle(xy, s))

    def test_invariances(self):
        rng = np.random.default_rng(1)
        xy, s = rng.uniform(0, 10, size=(8, 2)), rng.exponential(size=8)
        ref = venables_distance(xy, s)
        a = 0.7
        rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        assert venables_distance(xy + [3.0, -5.0], s) == pytest.approx(ref, rel=1e-12)
        assert venables_distance(xy @ rot.T, s) == pytest.approx(ref, rel=1e-12)
        assert venables_distance(2.5 * xy, s) == pytest.approx(2.5 * ref, rel=1e-12)
        assert venables_distance(xy, 4.0 * s) == pytest.approx(ref, rel=1e-12)


class TestReproductionNumber:
    def test_flat(self):
        assert reproduction_number(np.full(11, 40), 10) == 1.0

    def test_doubling(self):
        series = np.array([50] + [0] * 9 + [100])
        series[1:10] = 60
        assert reproduction_number(series, 10) == pytest.approx(2**0.51, abs=1e-9)
        assert reproduction_number(series, 10) == pytest.approx(1.4241, abs=1e-4)

    def test_halving(self):
        series = np.array([100] + [80] * 9 + [50])
        assert reproduction_number(series, 10) == pytest.approx(0.7022, abs=1e-4)

    def test_multiplicative(self):
        series = np.array([10] + [10] * 9 + [80])
        assert reproduction_number(series, 10, tau=5.0, lookback=10) == pytest.approx(8**0.5, rel=1e-12)

    def test_undefined(self):
        with pytest.raises(UndefinedMetricError):
            reproduction_number(np.array([0] * 10 + [5]), 10)
        with pytest.raises(UndefinedMetricError):
            reproduction_number(np.arange(5), 4)


class TestWeeklyRise:
    def test_flat(self):
        assert weekly_rise(np.full(8, 12), 7) == 0

    def test_rise_of_93(self):
        assert weekly_rise(np.array([100, 110, 120, 130, 150, 170, 180, 193]), 7) == 93

    def test_negative_floored_with_warning(self):
        with pytest.warns(RuntimeWarning):
            assert weekly_rise(np.array([100] * 7 + [90]), 7) == 0

    def test_missing_dates(self):
        with pytest.raises(IndexError):
            weekly_rise(np.arange(5), 4)

    def test_telescopes(self):
        rng = np.random.default_rng(2)
        cum = np.cumsum(rng.integers(0, 50, size=29))
        weeks = sum(weekly_rise(cum, d) for d in range(28, 0, -7))
        assert weeks == cum[28] - cum[0]

    def test_vectorised(self):
        rng = np.random.default_rng(3)
        cum = np.cumsum(rng.integers(0, 9, size=(3, 20)), axis=1)
        out = weekly_rises(cum)
        assert np.all(out[:, :7] == -1)
        for c in range(3):
            for d in range(7, 20):
                assert out[c, d] == weekly_rise(cum[c], d)


@pytest.fixture(scope="module")
def desk():
    return generate_synthetic(SyntheticUniverseSpec(counties=20, days=60, seed=3))


class TestBuildSamples:
    def test_count(self, desk):
        ds = build_samples(desk)
        assert len(ds) == 20 * (60 - 19)
        assert ds.dropped == 19

    def test_shapes_match_registry(self, desk):
        ds = build_samples(desk)
        for spec in ds.registry:
            assert ds.inputs[spec.name].shape == (len(ds), *spec.sample_shape)

    def test_minimal_span(self):
        u = generate_synthetic(SyntheticUniverseSpec(counties=3, days=20, seed=1))
        ds = build_samples(u, boundaries=ClassBoundaries((1,)))
        assert len(ds) == 3
        assert set(ds.day) == {19}

    def test_window_dates(self):
        start = dt.date(2020, 4, 5)
        label = (dt.date(2020, 6, 20) - start).days
        lo, hi = input_window(label)
        assert start + dt.timedelta(days=lo) == dt.date(2020, 6, 1)
        assert start + dt.timedelta(days=hi) == dt.date(2020, 6, 13)
        # the weekly rise for this label covers June 14..20, right after the window
        assert start + dt.timedelta(days=label - 6) == dt.date(2020, 6, 14)

    def test_inputs_are_the_window(self, desk):
        ds = build_samples(desk)
        g = desk.groups["social_distancing"]
        for i in [0, 77, len(ds) - 1]:
            lo, hi = input_window(int(ds.day[i]))
            np.testing.assert_array_equal(ds.inputs["social_distancing"][i], g.values[lo : hi + 1, ds.county[i]])
            assert hi <= ds.day[i] - 7

    def test_no_leakage(self, desk):
        label = 40
        poisoned = copy.deepcopy(desk)
        for g in poisoned.groups.values():
            if g.kind != "constant":
                g.values[label - 6 :] = np.nan
        ds = build_samples(poisoned, label_days=[label], boundaries=ClassBoundaries((1, 13, 93)))
        for x in ds.inputs.values():
            assert np.all(np.isfinite(x))

    def test_labels(self, desk):
        ds = build_samples(desk)
        rises = weekly_rises(desk.cases)
        np.testing.assert_array_equal(ds.rises, rises[ds.county, ds.day])
        np.testing.assert_array_equal(ds.classes, assign_class(ds.rises, ds.boundaries))

    def test_explicit_dates_dropped_are_reported(self, desk, caplog):
        with caplog.at_level("WARNING"):
            ds = build_samples(desk, label_days=[5, 30, 40], boundaries=build_samples(desk).boundaries)
        assert ds.dropped == 1
        assert "dropped 1" in caplog.text


class TestGenerator:
    def test_deterministic(self):
        spec = SyntheticUniverseSpec(counties=4, days=30, seed=9)
        a, b = generate_synthetic(spec), generate_synthetic(spec)
        np.testing.assert_array_equal(a.cases, b.cases)
        for name in a.groups:
            np.testing.assert_array_equal(a.groups[name].values, b.groups[name].values)

    def test_cumulative_non_decreasing(self, desk):
        assert np.all(np.diff(desk.cases, axis=1) >= 0)

    def test_eight_groups(self, desk):
        kinds = [g.kind for g in desk.groups.values()]
        assert len(kinds) == 8
        assert kinds.count("constant") == 2 and kinds.count("time_dependent") == 5 and kinds.count("cross_county") == 1

    def test_noise_free_labels_recoverable(self):
        u = generate_synthetic(SyntheticUniverseSpec(counties=20, days=60, seed=4, noise=0.0))
        ds = build_samples(u)
        mean = ds.inputs["social_distancing"][:, :, 0].mean(axis=1)
        order = np.argsort(mean, kind="stable")
        # classes are a non-decreasing step function of the window mean
        assert np.all(np.diff(ds.classes[order]) >= 0)
        assert np.all(np.diff(ds.rises[order]) >= 0)

    def test_xor_marginals_uninformative(self):
        spec = SyntheticUniverseSpec(
            counties=200,
            days=70,
            seed=5,
            group_sizes={"social_distancing": 2, "visitation": 2},
            recipe=[SignalTerm("xor", ["social_distancing/pct_home", "visitation/grocery"], span=13)],
        )
        ds = build_samples(generate_synthetic(spec))
        assert len(ds) >= 10_000
        a = ds.inputs["social_distancing"][:, :, 0].mean(axis=1) > 0
        b = ds.inputs["visitation"][:, :, 0].mean(axis=1) > 0
        y = ds.rises > np.median(ds.rises)
        assert mutual_information(a, y) < 0.01
        assert mutual_information(b, y) < 0.01
        assert mutual_information(2 * a + b, y) > 0.3

    def test_unknown_feature(self):
        with pytest.raises(RecipeError, match="nope"):
            SyntheticUniverseSpec(recipe=[SignalTerm("main", ["census/nope"])])

    def test_bad_recipe_kind(self):
        with pytest.raises(RecipeError):
            SignalTerm("cube", ["census/pop_density"])

    def test_json_error_location(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"counties": 5,\n "days": }')
        with pytest.raises(RecipeError, match="line 2"):
            SyntheticUniverseSpec.from_json(p)


def mutual_information(x, y):
    """Plug-in MI (nats) between two discrete arrays."""
    x, y = np.asarray(x).astype(int), np.asarray(y).astype(int)
    joint = np.zeros((x.max() + 1, y.max() + 1))
    np.add.at(joint, (x, y), 1)
    joint /= joint.sum()
    px, py = joint.sum(1, keepdims=True), joint.sum(0, keepdims=True)
    nz = joint > 0
    return float((joint[nz] * np.log(joint[nz] / (px @ py)[nz])).sum())


def test_universe_round_trip(tmp_path):
    u = generate_synthetic(SyntheticUniverseSpec(counties=3, days=22, seed=2))
    path = save_universe(u, tmp_path / "u")
    for name in ("registry.json", "cases.csv", "grid.csv"):
        assert (path / name).exists()
    v = load_universe(path)
    assert v.start == u.start and v.counties == u.counties
    np.testing.assert_array_equal(v.cases, u.cases)
    assert list(v.groups) == list(u.groups)
    for name, g in u.groups.items():
        assert v.groups[name].kind == g.kind
        np.testing.assert_array_equal(v.groups[name].values, g.values)
    np.testing.assert_array_equal(v.grid.intensity, u.grid.intensity)
