import math

import numpy as np
import pytest

from deepcovidnet import numcore as nc
from deepcovidnet.embeddings import (
    CONSTANT,
    CROSS_COUNTY,
    TIME_DEPENDENT,
    DataError,
    GroupSpec,
    embed_all,
    embed_constant,
    embed_cross_county,
    embed_time_dependent,
    init_group_weights,
)
from deepcovidnet.numcore import DimensionError, Parameter, Tape

LAM, ALPHA = 1.0507009873554805, 1.6732632423543772


def sigma_scalar(name, v):
    if name == "identity":
        return v
    if name == "tanh":
        return math.tanh(v)
    if name == "relu":
        return max(v, 0.0)
    return LAM * v if v > 0 else LAM * ALPHA * (math.exp(v) - 1)


def loop_time_dependent(F, WF, WT, act):
    t, n = F.shape
    e = WF.shape[1]
    out = np.zeros(e)
    for k in range(e):
        outer = 0.0
        for i in range(t):
            inner = 0.0
            for j in range(n):
                inner += WF[j, k] * F[i, j]
            outer += WT[i, k] * sigma_scalar(act, inner)
        out[k] = sigma_scalar(act, outer)
    return out


def loop_cross_county(F, WF, WC, WT, act):
    t, c, n = F.shape
    e = WF.shape[1]
    out = np.zeros(e)
    for p in range(e):
        total = 0.0
        for i in range(t):
            county_sum = 0.0
            for j in range(c):
                feat = 0.0
                for k in range(n):
                    feat += WF[k, p] * F[i, j, k]
                county_sum += WC[j, p] * sigma_scalar(act, feat)
            total += WT[i, p] * sigma_scalar(act, county_sum)
        out[p] = sigma_scalar(act, total)
    return out


def td(F, WF, WT, act="selu"):
    t = Tape()
    return embed_time_dependent(t.constant(F[None]), t.constant(WF), t.constant(WT), act).value[0]


def cc(F, WF, WC, WT, act="selu"):
    t = Tape()
    return embed_cross_county(t.constant(F[None]), t.constant(WF), t.constant(WC), t.constant(WT), act).value[0]


class TestConstant:
    def test_selector(self):
        t = Tape()
        W = t.constant([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        out = embed_constant(t.constant([[1.0, 0.0, 0.0]]), W, t.constant(np.zeros(2)), "identity")
        np.testing.assert_array_equal(out.value, [[1.0, 0.0]])

    @pytest.mark.parametrize("act", ["identity", "selu", "tanh", "relu"])
    def test_zero_input(self, act):
        t = Tape()
        rng = np.random.default_rng(0)
        out = embed_constant(t.constant(np.zeros((1, 3))), t.constant(rng.normal(size=(3, 4))), t.constant(np.zeros(4)), act)
        np.testing.assert_array_equal(out.value, np.zeros((1, 4)))

    def test_output_length(self):
        rng = np.random.default_rng(1)
        ws = init_group_weights(GroupSpec("g", CONSTANT, tuple("abcde")), 4, rng)
        t = Tape()
        out = embed_constant(t.constant(rng.normal(size=(7, 5))), t.param(ws["W"]), t.param(ws["b"]))
        assert out.shape == (7, 4)


class TestTimeDependent:
    def test_hand_summed(self):
        F = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(td(F, np.ones((2, 1)), np.ones((2, 1)), "identity"), [10.0])

    @pytest.mark.parametrize("act", ["identity", "selu"])
    def test_zeros(self, act):
        rng = np.random.default_rng(2)
        out = td(np.zeros((13, 4)), rng.normal(size=(4, 8)), rng.normal(size=(13, 8)), act)
        np.testing.assert_array_equal(out, np.zeros(8))

    @pytest.mark.parametrize("act", ["identity", "selu", "tanh", "relu"])
    def test_matches_loop_oracle(self, act):
        rng = np.random.default_rng(3)
        F, WF, WT = rng.normal(size=(13, 4)), rng.normal(size=(4, 8)), rng.normal(size=(13, 8))
        np.testing.assert_allclose(td(F, WF, WT, act), loop_time_dependent(F, WF, WT, act), rtol=0, atol=1e-12)

    def test_time_permutation_symmetry(self):
        rng = np.random.default_rng(4)
        F, WF, WT = rng.normal(size=(13, 3)), rng.normal(size=(3, 5)), rng.normal(size=(13, 5))
        perm = rng.permutation(13)
        np.testing.assert_allclose(td(F[perm], WF, WT[perm]), td(F, WF, WT), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            td(np.ones((13, 4)), np.ones((3, 2)), np.ones((13, 2)))


class TestCrossCounty:
    def test_hand_summed(self):
        F = np.array([[[2.0], [3.0]]])
        out = cc(F, np.ones((1, 1)), np.ones((2, 1)), np.ones((1, 1)), "identity")
        np.testing.assert_array_equal(out, [5.0])

    def test_zeros(self):
        rng = np.random.default_rng(5)
        out = cc(np.zeros((3, 5, 2)), rng.normal(size=(2, 4)), rng.normal(size=(5, 4)), rng.normal(size=(3, 4)))
        np.testing.assert_array_equal(out, np.zeros(4))

    @pytest.mark.parametrize("act", ["identity", "selu", "tanh"])
    def test_matches_loop_oracle(self, act):
        rng = np.random.default_rng(6)
        F = rng.normal(size=(3, 5, 2))
        WF, WC, WT = rng.normal(size=(2, 4)), rng.normal(size=(5, 4)), rng.normal(size=(3, 4))
        np.testing.assert_allclose(cc(F, WF, WC, WT, act), loop_cross_county(F, WF, WC, WT, act), rtol=0, atol=1e-12)

    def test_county_axis_mismatch(self):
        with pytest.raises(DimensionError, match="registry size"):
            cc(np.ones((3, 5, 2)), np.ones((2, 4)), np.ones((6, 4)), np.ones((3, 4)))


def test_random_shapes_match_oracles():
    rng = np.random.default_rng(7)
    for _ in range(25):
        t, c, n, e = rng.integers(1, 14), rng.integers(1, 21), rng.integers(1, 9), rng.integers(1, 17)
        F = rng.normal(size=(t, n))
        WF, WT = rng.normal(size=(n, e)) / np.sqrt(n), rng.normal(size=(t, e)) / np.sqrt(t)
        np.testing.assert_allclose(td(F, WF, WT), loop_time_dependent(F, WF, WT, "selu"), atol=1e-12)
        Fc, WC = rng.normal(size=(t, c, n)), rng.normal(size=(c, e)) / np.sqrt(c)
        np.testing.assert_allclose(cc(Fc, WF, WC, WT), loop_cross_county(Fc, WF, WC, WT, "selu"), atol=1e-12)


def registry3(t=4, c=3):
    return [
        GroupSpec("static", CONSTANT, ("a", "b", "c")),
        GroupSpec("daily", TIME_DEPENDENT, ("x", "y"), t=t),
        GroupSpec("flows", CROSS_COUNTY, ("f", "g"), t=t, c=c),
    ]


def random_sample(registry, rng, batch=2):
    return {s.name: rng.normal(size=(batch, *s.sample_shape)) for s in registry}


class TestEmbedAll:
    def test_shapes_and_order(self):
        rng = np.random.default_rng(8)
        reg = registry3()
        weights = {s.name: init_group_weights(s, 8, rng) for s in reg}
        sample = random_sample(reg, rng)
        embs = embed_all(Tape(), reg, sample, weights)
        assert [e.shape for e in embs] == [(2, 8)] * 3
        shuffled = dict(reversed(list(sample.items())))
        again = embed_all(Tape(), reg, shuffled, weights)
        for a, b in zip(embs, again):
            np.testing.assert_array_equal(a.value, b.value)

    def test_missing_group(self):
        rng = np.random.default_rng(9)
        reg = registry3()
        weights = {s.name: init_group_weights(s, 8, rng) for s in reg}
        sample = random_sample(reg, rng)
        del sample["daily"]
        with pytest.raises(DataError, match="daily"):
            embed_all(Tape(), reg, sample, weights)

    def test_full_table_config(self):
        rng = np.random.default_rng(10)
        reg = [
            GroupSpec("census", CONSTANT, tuple("abcdef")),
            GroupSpec("vulnerability", CONSTANT, tuple("abcd")),
            GroupSpec("past_rise", TIME_DEPENDENT, tuple("abc"), t=13),
            GroupSpec("reproduction_number", TIME_DEPENDENT, tuple("abc"), t=13),
            GroupSpec("venables_distance", TIME_DEPENDENT, tuple("abc"), t=13),
            GroupSpec("social_distancing", TIME_DEPENDENT, tuple("abcd"), t=13),
            GroupSpec("visitation", TIME_DEPENDENT, tuple("abcde"), t=13),
            GroupSpec("cross_county", CROSS_COUNTY, tuple("ab"), t=13, c=20),
        ]
        weights = {s.name: init_group_weights(s, 8, rng) for s in reg}
        embs = embed_all(Tape(), reg, random_sample(reg, rng, 3), weights)
        assert len(embs) == 8
        assert {e.shape for e in embs} == {(3, 8)}

    def test_wrong_sample_shape(self):
        rng = np.random.default_rng(11)
        reg = registry3()
        weights = {s.name: init_group_weights(s, 4, rng) for s in reg}
        sample = random_sample(reg, rng)
        sample["flows"] = sample["flows"][:, :, :2]
        with pytest.raises(DimensionError):
            embed_all(Tape(), reg, sample, weights)


def test_embedding_gradients():
    rng = np.random.default_rng(12)
    reg = registry3(t=3, c=4)
    weights = {s.name: init_group_weights(s, 5, rng) for s in reg}
    sample = random_sample(reg, rng, 3)
    target = rng.normal(size=(3, 5))
    params = {f"{g}.{k}": p for g, ws in weights.items() for k, p in ws.items()}

    def closure():
        tape = Tape()
        embs = embed_all(tape, reg, sample, weights)
        return nc.sum(nc.stack(embs, axis=1) * target[:, None, :])

    report = nc.check_gradients(closure, params, tolerance=1e-5)
    assert report.passed, report.max_rel_err
