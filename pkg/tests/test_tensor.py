import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lossevo import tensor as T
from lossevo.errors import ArityError, ContractError, NumericError, ShapeError
from lossevo.nn import GaussianTanhPolicy, MlpParams, mlp_forward, policy_distribution, \
    policy_sample_and_logprob
from lossevo.tensor import Tape, Tensor, leaf

from fd import PRIMITIVE_CASES, check_primitive_gradient


def test_add_example():
    out = T.apply_primitive("Add2", [Tensor([1.0, 2.0]), Tensor([3.0, 4.0])])
    assert out.numpy().tolist() == [4.0, 6.0]


def test_divide_adds_epsilon():
    out = T.apply_primitive("DivEps", [Tensor([1.0]), Tensor([0.0])])
    assert out.numpy()[0] == pytest.approx(1e8, rel=1e-12)


def test_discounted_cumsum_example():
    out = T.apply_primitive("DiscountedCumSum", [Tensor([1.0, 1.0, 1.0]), Tensor(0.5)])
    assert out.numpy().tolist() == [1.75, 1.5, 1.0]


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=12))
def test_discounted_cumsum_limits(values):
    x = Tensor(np.array(values))
    same = T.apply_primitive("DiscountedCumSum", [x, Tensor(0.0)]).numpy()
    rev = T.apply_primitive("DiscountedCumSum", [x, Tensor(1.0)]).numpy()
    np.testing.assert_array_equal(same, values)
    np.testing.assert_allclose(rev, np.cumsum(values[::-1])[::-1], rtol=1e-12, atol=1e-12)


def test_wrong_arity_and_shape_errors():
    with pytest.raises(ArityError):
        T.apply_primitive("Add2", [Tensor([1.0])])
    with pytest.raises(ShapeError):
        T.apply_primitive("Add2", [Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0])])


def test_non_finite_output_is_numeric_error_with_kind():
    with pytest.raises(NumericError) as info:
        T.apply_primitive("Exp", [Tensor([1000.0])])
    assert info.value.kind == "Exp"


def test_square_gradient():
    x = leaf(3.0)
    tape = Tape()
    y = T.apply_primitive("Square", [x], tape)
    assert T.backward(tape, y)[x] == 6.0


def test_stop_gradient_blocks_one_factor():
    x = leaf(3.0)
    tape = Tape()
    y = T.apply_primitive("Mul2", [T.apply_primitive("StopGradient", [x], tape), x], tape)
    assert T.backward(tape, y)[x] == 3.0


def test_backward_needs_scalar():
    x = leaf([1.0, 2.0])
    tape = Tape()
    y = T.apply_primitive("Square", [x], tape)
    with pytest.raises(ContractError):
        T.backward(tape, y)


@given(st.integers(0, 2 ** 31), st.sampled_from(sorted(PRIMITIVE_CASES)))
def test_primitive_gradients_match_finite_differences(seed, kind):
    check_primitive_gradient(kind, np.random.default_rng(seed))


@given(st.integers(0, 2 ** 31), st.sampled_from(["Add2", "Mul2", "Sub", "DivEps",
                                                   "MinElem", "MaxElem", "SquaredDiff"]))
def test_scalar_broadcast_equals_explicit_tiling(seed, kind):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=5)
    c = float(rng.normal())
    for args in (([v, c], [v, np.full(5, c)]), ([c, v], [np.full(5, c), v])):
        a = T.apply_primitive(kind, [Tensor(x) for x in args[0]]).numpy()
        b = T.apply_primitive(kind, [Tensor(x) for x in args[1]]).numpy()
        np.testing.assert_array_equal(a, b)


@given(st.integers(0, 2 ** 31))
def test_stop_gradient_is_identity_with_zero_gradient(seed):
    rng = np.random.default_rng(seed)
    x = leaf(rng.normal(size=4))
    tape = Tape()
    sg = T.apply_primitive("StopGradient", [x], tape)
    np.testing.assert_array_equal(sg.numpy(), x.numpy())
    y = T.apply_primitive("SumAll", [T.apply_primitive("Mul2", [sg, sg], tape)], tape)
    np.testing.assert_array_equal(T.backward(tape, y, [x])[x], np.zeros(4))


def test_mlp_zero_params_give_zero():
    p = MlpParams((Tensor(np.zeros((3, 4))), Tensor(np.zeros((4, 2)))),
                  (Tensor(np.zeros(4)), Tensor(np.zeros(2))))
    out = mlp_forward(p, Tensor(np.ones((5, 3))))
    np.testing.assert_array_equal(out.numpy(), np.zeros((5, 2)))


def test_mlp_identity_layer():
    p = MlpParams((Tensor(np.eye(2)),), (Tensor(np.zeros(2)),))
    np.testing.assert_array_equal(mlp_forward(p, Tensor([[1.0, 2.0]])).numpy(), [[1.0, 2.0]])


def test_mlp_shape_error():
    p = MlpParams((Tensor(np.eye(2)),), (Tensor(np.zeros(2)),))
    with pytest.raises(ShapeError):
        mlp_forward(p, Tensor([[1.0, 2.0, 3.0]]))


@given(st.integers(0, 2 ** 31))
def test_mlp_matches_matmul_oracle(seed):
    rng = np.random.default_rng(seed)
    p = MlpParams.init([4, 7, 5, 2], rng)
    x = rng.normal(size=(6, 4))
    w = p.arrays()
    h = np.maximum(x @ w[0] + w[1], 0)
    h = np.maximum(h @ w[2] + w[3], 0)
    expected = h @ w[4] + w[5]
    np.testing.assert_allclose(mlp_forward(p, Tensor(x)).numpy(), expected, rtol=0, atol=1e-12)


def test_random_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    p = MlpParams.init([3, 6, 1], rng).differentiable()
    x = Tensor(rng.normal(size=(5, 3)))

    def loss(params, tape=None):
        out = mlp_forward(params, x, tape)
        return T.apply_primitive("MeanAll", [T.apply_primitive("Square", [out], tape)], tape)

    tape = Tape()
    grads = T.backward(tape, loss(p, tape), p.tensors())
    h = 1e-5
    for k, t in enumerate(p.tensors()):
        g = grads[t]
        for idx in np.ndindex(t.shape):
            arrays = [a.copy() for a in p.arrays()]
            arrays[k][idx] += h
            up = loss(p.with_arrays(arrays)).item()
            arrays[k][idx] -= 2 * h
            down = loss(p.with_arrays(arrays)).item()
            fd = (up - down) / (2 * h)
            assert abs(g[idx] - fd) <= 1e-4 * abs(fd) + 1e-7


def _one_dim_policy(mean: float, log_std: float) -> GaussianTanhPolicy:
    trunk = MlpParams((Tensor(np.zeros((1, 2))),), (Tensor([mean, log_std]),))
    return GaussianTanhPolicy(trunk, 1)


def test_policy_logprob_at_mode():
    d = 3
    trunk = MlpParams((Tensor(np.zeros((2, 2 * d))),), (Tensor(np.zeros(2 * d)),))
    policy = GaussianTanhPolicy(trunk, d)
    a, logp = policy_sample_and_logprob(policy, Tensor(np.ones((1, 2))), np.zeros((1, d)))
    np.testing.assert_array_equal(a.numpy(), np.zeros((1, d)))
    assert logp.numpy()[0] == pytest.approx(-0.5 * math.log(2 * math.pi) * d, abs=1e-12)


def test_policy_sampling_is_deterministic_given_noise():
    rng = np.random.default_rng(0)
    policy = GaussianTanhPolicy.init(3, 2, (8,), rng)
    s = Tensor(rng.normal(size=(4, 3)))
    noise = rng.normal(size=(4, 2))
    a1, l1 = policy_sample_and_logprob(policy, s, noise)
    a2, l2 = policy_sample_and_logprob(policy, s, noise)
    np.testing.assert_array_equal(a1.numpy(), a2.numpy())
    np.testing.assert_array_equal(l1.numpy(), l2.numpy())
    assert (np.abs(a1.numpy()) < 1).all()


def test_policy_noise_shape_error():
    policy = GaussianTanhPolicy.init(3, 2, (8,), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        policy_sample_and_logprob(policy, Tensor(np.ones((4, 3))), np.zeros((4, 1)))


@pytest.mark.parametrize("mean,log_std", [(0.0, 0.0), (0.7, -0.5), (-0.3, 0.4)])
def test_policy_density_integrates_to_one(mean, log_std):
    policy = _one_dim_policy(mean, log_std)
    grid = np.linspace(-1 + 1e-9, 1 - 1e-9, 400_001)
    dist = policy_distribution(policy, Tensor(np.ones((len(grid), 1))))
    logp = dist.log_prob(Tensor(grid[:, None])).numpy()
    assert np.trapezoid(np.exp(logp), grid) == pytest.approx(1.0, abs=1e-3)
