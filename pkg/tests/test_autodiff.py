import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pedcross import autodiff as ad
from pedcross.errors import (
    ConfigError,
    ContractError,
    DimensionError,
    GraphError,
    NumericDomainError,
)
from pedcross.gradcheck import max_rel_error, run_suite
from pedcross.rng import named_stream

LN2 = 0.6931471805599453


def t64(data, requires_grad=False):
    return ad.Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


class TestMatmul:
    def test_identity(self):
        out = ad.matmul(t64(np.eye(2)), t64([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_selector_row(self):
        out = ad.matmul(t64([[1.0, 0.0]]), t64([[2.0], [5.0]]))
        np.testing.assert_array_equal(out.data, [[2.0]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))

    def test_gradient_vs_finite_differences(self):
        rng = named_stream(7, "test", "matmul")
        a = ad.Tensor(rng.normal(size=(4, 5)), requires_grad=True, dtype=np.float64)
        b = ad.Tensor(rng.normal(size=(5, 3)), requires_grad=True, dtype=np.float64)
        err = max_rel_error(lambda: ad.tsum(ad.matmul(a, b)), [a, b], n_probes=15, rng=rng)
        assert err < 1e-6


class TestConv3d:
    def test_identity_kernel(self):
        rng = named_stream(0, "test", "conv-id")
        x = t64(rng.random((3, 4, 4, 1)))
        k = t64(np.ones((1, 1, 1, 1, 1)))
        out = ad.conv3d(x, k)
        np.testing.assert_allclose(out.data[..., 0], x.data[..., 0])

    def test_zero_kernel(self):
        rng = named_stream(0, "test", "conv-zero")
        x = t64(rng.random((3, 4, 4, 2)))
        k = t64(np.zeros((3, 3, 3, 2, 4)))
        out = ad.conv3d(x, k, padding=1)
        assert not out.data.any()

    def test_matches_direct_cross_correlation(self):
        # brute-force triple-loop oracle on a small case
        rng = named_stream(1, "test", "conv-oracle")
        x = rng.random((4, 5, 5, 2))
        k = rng.normal(size=(2, 3, 3, 2, 3))
        out = ad.conv3d(t64(x), t64(k), stride=(1, 2, 1)).data
        to, ho, wo = out.shape[:3]
        expected = np.zeros_like(out)
        for t in range(to):
            for i in range(ho):
                for j in range(wo):
                    patch = x[t : t + 2, 2 * i : 2 * i + 3, j : j + 3, :]
                    for co in range(3):
                        expected[t, i, j, co] = np.sum(patch * k[..., co])
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_gradient_vs_finite_differences(self):
        rng = named_stream(3, "test", "conv-grad")
        x = ad.Tensor(rng.normal(size=(4, 8, 8, 2)), requires_grad=True, dtype=np.float64)
        k = ad.Tensor(rng.normal(size=(3, 3, 3, 2, 2)), requires_grad=True, dtype=np.float64)
        w = rng.normal(size=(4, 8, 8, 2))

        def build():
            out = ad.conv3d(x, k, stride=1, padding=1)
            return ad.tsum(ad.mul(out, ad.Tensor(w, dtype=np.float64)))

        assert max_rel_error(build, [x, k], n_probes=12, rng=rng) < 1e-5

    def test_invalid_stride_and_padding(self):
        x = t64(np.zeros((2, 4, 4, 1)))
        k = t64(np.zeros((1, 1, 1, 1, 1)))
        with pytest.raises(ConfigError):
            ad.conv3d(x, k, stride=0)
        with pytest.raises(ConfigError):
            ad.conv3d(x, k, padding=-1)

    def test_kernel_exceeds_input(self):
        x = t64(np.zeros((2, 4, 4, 1)))
        k = t64(np.zeros((3, 3, 3, 1, 1)))
        with pytest.raises(DimensionError):
            ad.conv3d(x, k)  # T=2 < kt=3 without padding


class TestSoftmaxTemp:
    def test_symmetry(self):
        out = ad.softmax_temp(t64([0.0, 0.0]), 2.0)
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_analytic(self):
        out = ad.softmax_temp(t64([np.log(4.0), 0.0]), 1.0)
        np.testing.assert_allclose(out.data, [0.8, 0.2], atol=1e-12)

    def test_temperature_halves_logit(self):
        out = ad.softmax_temp(t64([2.0, 0.0]), 2.0)
        np.testing.assert_allclose(out.data, [0.7311, 0.2689], atol=1e-4)

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ConfigError):
            ad.softmax_temp(t64([1.0, 2.0]), 0.0)
        with pytest.raises(ConfigError):
            ad.softmax_temp(t64([1.0, 2.0]), -1.0)

    @given(
        st.lists(st.floats(min_value=-1e4, max_value=1e4), min_size=2, max_size=8),
        st.sampled_from([0.5, 1.0, 2.0, 10.0]),
    )
    @settings(max_examples=200, deadline=None)
    def test_probability_vector_property(self, values, temperature):
        out = ad.softmax_temp(t64(values), temperature).data
        assert np.all(out > 0.0) and np.all(out < 1.0)
        assert abs(out.sum() - 1.0) < 1e-6

    @given(
        st.lists(
            st.floats(min_value=-1e4, max_value=1e4).filter(lambda v: abs(v) > 1e-9),
            min_size=2,
            max_size=8,
            unique=True,
        ),
        st.sampled_from([0.5, 1.0, 2.0, 10.0]),
    )
    @settings(max_examples=200, deadline=None)
    def test_argmax_invariant_under_temperature(self, values, temperature):
        z = np.asarray(values)
        out = ad.softmax_temp(t64(z), temperature).data
        assert int(np.argmax(out)) == int(np.argmax(z))


class TestElementwise:
    def test_fixed_points(self):
        assert ad.tanh(t64([0.0])).data[0] == 0.0
        assert ad.log1p(t64([0.0])).data[0] == 0.0
        np.testing.assert_allclose(ad.softplus(t64([0.0])).data[0], LN2, rtol=1e-12)

    def test_log1p_domain_violation_names_index(self):
        x = t64([[0.5, 0.2], [-1.5, 0.1]])
        with pytest.raises(NumericDomainError, match=r"\(1, 0\)"):
            ad.log1p(x)

    @pytest.mark.parametrize("name", ["tanh", "softplus", "relu", "log1p"])
    def test_gradients(self, name):
        fn = getattr(ad, name)
        rng = named_stream(5, "test", "elem", name)
        base = rng.normal(size=(5, 4))
        if name == "relu":
            base = np.where(np.abs(base) < 0.05, base + 0.3, base)
        if name == "log1p":
            base = np.abs(base)
        x = ad.Tensor(base, requires_grad=True, dtype=np.float64)
        w = rng.normal(size=(5, 4))
        err = max_rel_error(
            lambda: ad.tsum(ad.mul(fn(x), ad.Tensor(w, dtype=np.float64))), [x], rng=rng
        )
        assert err < 1e-6


class TestGlobalAvgPool:
    def test_full_pool(self):
        out = ad.global_avg_pool(t64([[1.0, 3.0], [5.0, 7.0]]))
        assert out.data == pytest.approx(4.0)

    def test_constant(self):
        out = ad.global_avg_pool(t64(np.full((3, 4), 2.5)))
        assert out.data == pytest.approx(2.5)

    def test_gradient_is_uniform(self):
        x = ad.Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True, dtype=np.float64)
        loss = ad.global_avg_pool(x)
        ad.backward(loss)
        np.testing.assert_allclose(x.grad, np.full((3, 4), 1.0 / 12.0))

    def test_empty_axis_rejected(self):
        with pytest.raises(DimensionError):
            ad.global_avg_pool(ad.Tensor(np.zeros((2, 0, 3))))


class TestBackward:
    def test_sum_gives_ones(self):
        p = ad.Tensor(np.zeros((3, 2)), requires_grad=True, dtype=np.float64)
        ad.backward(ad.tsum(p))
        np.testing.assert_array_equal(p.grad, np.ones((3, 2)))

    def test_detached_parameter_gets_zeros(self):
        p = ad.Tensor(np.ones(4), requires_grad=True, dtype=np.float64)
        q = ad.Tensor(np.ones(4), requires_grad=True, dtype=np.float64)
        grads = ad.backward(ad.tsum(q), params=[p, q])
        np.testing.assert_array_equal(grads[p], np.zeros(4))
        np.testing.assert_array_equal(p.grad, np.zeros(4))

    def test_non_scalar_loss_rejected(self):
        p = ad.Tensor(np.ones(4), requires_grad=True, dtype=np.float64)
        with pytest.raises(ContractError):
            ad.backward(ad.mul(p, p))

    def test_second_backward_raises(self):
        p = ad.Tensor(np.ones(4), requires_grad=True, dtype=np.float64)
        loss = ad.tsum(ad.mul(p, p))
        ad.backward(loss)
        with pytest.raises(GraphError):
            ad.backward(loss)

    def test_accumulation_across_graphs_is_additive(self):
        p = ad.Tensor(np.full(3, 2.0), requires_grad=True, dtype=np.float64)
        ad.backward(ad.tsum(ad.mul(p, p)))
        first = p.grad.copy()
        ad.backward(ad.tsum(ad.mul(p, p)))
        np.testing.assert_allclose(p.grad, 2.0 * first)

    def test_no_grad_blocks_recording(self):
        p = ad.Tensor(np.ones(3), requires_grad=True, dtype=np.float64)
        with ad.no_grad():
            out = ad.tsum(ad.mul(p, p))
        assert not out.requires_grad

    def test_repeated_operand_accumulates(self):
        p = ad.Tensor(np.array([3.0]), requires_grad=True, dtype=np.float64)
        ad.backward(ad.tsum(ad.mul(p, p)))  # d/dp p^2 = 2p
        np.testing.assert_allclose(p.grad, [6.0])


class TestDropout:
    def test_eval_mode_is_identity(self):
        x = t64(np.arange(10.0))
        out = ad.dropout(x, 0.7, "eval")
        np.testing.assert_array_equal(out.data, x.data)

    def test_p_zero_is_identity(self):
        rng = named_stream(0, "test", "dropout0")
        x = t64(np.arange(10.0))
        out = ad.dropout(x, 0.0, "train", rng)
        np.testing.assert_array_equal(out.data, x.data)

    def test_survivor_statistics(self):
        rng = named_stream(11, "test", "dropout-stats")
        x = t64(np.full(100_000, 3.0))
        out = ad.dropout(x, 0.5, "train", rng)
        survivors = np.count_nonzero(out.data) / x.data.size
        assert abs(survivors - 0.5) < 0.01
        assert abs(out.data.mean() - 3.0) / 3.0 < 0.02

    def test_invalid_rate(self):
        x = t64(np.ones(3))
        with pytest.raises(ConfigError):
            ad.dropout(x, 1.0, "train", named_stream(0, "x"))
        with pytest.raises(ConfigError):
            ad.dropout(x, -0.1, "train", named_stream(0, "x"))
        with pytest.raises(ConfigError):
            ad.dropout(x, 0.5, "test", named_stream(0, "x"))


class TestOpSuite:
    def test_all_op_checks_pass(self):
        for result in run_suite(seed=0, include_models=False):
            assert result.passed, result.line()
