import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laser.core import (
    AdamState,
    MlpParams,
    SeededRng,
    Var,
    adam_step,
    clip,
    concat,
    exp,
    gradients,
    init_mlp,
    leaky_relu,
    log,
    mlp_forward,
    sample_standard_normal,
    sigmoid,
    square,
    value_and_gradients,
)
from laser.errors import ConstructionError, DimensionError, NumericError

from _oracles import central_difference, loop_forward, max_rel_error


def random_net(rng, sizes):
    net = init_mlp(sizes, rng)
    # non-zero biases so every parameter matters
    return net.with_arrays([a + 0.1 * sample_standard_normal(rng, a.shape) if a.ndim == 1 else a for a in net.arrays()])


# --- forward -----------------------------------------------------------------


def test_identity_layer_is_identity():
    net = MlpParams((2, 2), [np.eye(2)], [np.zeros(2)])
    np.testing.assert_array_equal(mlp_forward(net, np.array([[1.0, 2.0]])), [[1.0, 2.0]])


def test_zero_weights_return_bias_per_row():
    b = np.array([0.5, -1.5, 2.0])
    net = MlpParams((4, 3), [np.zeros((4, 3))], [b])
    out = mlp_forward(net, np.arange(20.0).reshape(5, 4))
    np.testing.assert_array_equal(out, np.tile(b, (5, 1)))


def test_forward_matches_loop_oracle():
    rng = SeededRng(7)
    net = random_net(rng, (2, 3, 1))
    x = sample_standard_normal(rng, (6, 2))
    expected = loop_forward(net.weights, net.biases, x, net.activation_slope)
    np.testing.assert_allclose(mlp_forward(net, x), expected, rtol=1e-13, atol=1e-13)


def test_forward_on_vars_matches_arrays():
    rng = SeededRng(8)
    net = random_net(rng, (3, 5, 4, 2))
    x = sample_standard_normal(rng, (4, 3))
    via_var = mlp_forward(net.map(Var), Var(x)).value
    np.testing.assert_array_equal(via_var, mlp_forward(net, x))


def test_forward_shape_mismatch():
    net = init_mlp((3, 4, 1), SeededRng(0))
    with pytest.raises(DimensionError):
        mlp_forward(net, np.ones((2, 4)))


def test_params_shape_chain_checked():
    with pytest.raises(DimensionError):
        MlpParams((2, 3, 1), [np.zeros((2, 3)), np.zeros((4, 1))], [np.zeros(3), np.zeros(1)])


@given(st.floats(-1e6, 1e6, allow_nan=False), st.floats(-1e6, 1e6, allow_nan=False))
def test_leaky_relu_piecewise_and_monotone(a, b):
    slope = 0.01
    fa = float(leaky_relu(np.array(a), slope))
    assert fa == (a if a >= 0 else slope * a)
    if a <= b:
        assert fa <= float(leaky_relu(np.array(b), slope))


# --- gradients ---------------------------------------------------------------


def test_sum_of_squares_gradient():
    w = MlpParams((2, 1), [np.array([[1.0], [-2.0]])], [np.zeros(1)])
    (g,) = gradients(lambda p: square(p.weights[0]).sum(), [w])
    np.testing.assert_array_equal(g.weights[0], [[2.0], [-4.0]])


def test_unused_parameter_has_zero_gradient():
    net = init_mlp((2, 1), SeededRng(0))
    other = init_mlp((3, 2), SeededRng(1))
    g_net, g_other = gradients(lambda p, q: square(mlp_forward(p, Var(np.ones((1, 2))))).sum(), [net, other])
    for arr in g_other.arrays():
        assert not arr.any()
    assert any(arr.any() for arr in g_net.arrays())


def _loss_zoo(kind, out, target):
    if kind == "mse":
        return square(out - target).mean()
    if kind == "logistic":
        p = sigmoid(out)
        return -(target * log(p) + (1.0 - target) * log(1.0 - p)).mean()
    if kind == "exp":
        return exp(clip(out, -3.0, 3.0) * 0.5).sum() + square(concat([out, out * 2.0])).mean()
    return (out * out / (1.0 + square(out))).sum()


def _kink_free(net, x, margin=1e-3):
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ w + b
        if np.min(np.abs(z)) < margin:
            return False
        h = leaky_relu(z, net.activation_slope)
    return True


def test_finite_difference_agreement_over_random_nets():
    rng = SeededRng(2024)
    worst, checked = 0.0, 0
    kinds = ["mse", "logistic", "exp", "ratio"]
    while checked < 100:
        sizes = (int(rng.uniform(()) * 3) + 1,) + tuple(int(rng.uniform(()) * 4) + 2 for _ in range(2)) + (1,)
        net = random_net(rng, sizes)
        x = sample_standard_normal(rng, (3, sizes[0]))
        if not _kink_free(net, x):
            continue
        target = (rng.uniform((3, 1)) < 0.5).astype(float)
        kind = kinds[checked % 4]
        loss = lambda p: _loss_zoo(kind, mlp_forward(p, Var(x)), target)  # noqa: E731
        _, (g,) = value_and_gradients(loss, [net])
        arrays = [a.copy() for a in net.arrays()]
        f = lambda: float(loss(net.with_arrays(arrays).map(Var)).value)  # noqa: E731
        numeric = central_difference(f, arrays)
        worst = max(worst, max_rel_error(g.arrays(), numeric, floor=1e-7))
        checked += 1
    assert worst <= 1e-4, worst


def test_unsupported_operand_raises():
    with pytest.raises(ConstructionError):
        Var(np.ones(2)) + "a"
    with pytest.raises(ConstructionError):
        Var(np.ones(2)) ** 2
    with pytest.raises(ConstructionError):
        Var(np.ones((2, 2)))[0]


def test_broadcast_gradient_reduces_to_bias_shape():
    b = Var(np.array([1.0, 2.0]))
    out = (Var(np.ones((3, 2))) * 2.0 + b).sum()
    out.backward()
    np.testing.assert_array_equal(b.grad, [3.0, 3.0])


def test_clip_blocks_gradient_outside_bounds():
    v = Var(np.array([-20.0, 0.0, 20.0]))
    clip(v, -10, 10).sum().backward()
    np.testing.assert_array_equal(v.grad, [0.0, 1.0, 0.0])


# --- Adam --------------------------------------------------------------------


def test_zero_gradient_leaves_params_and_decays_moments():
    p = [np.array([1.0, -2.0])]
    state = AdamState([np.array([0.5, 0.5])], [np.array([0.2, 0.2])], step_count=3)
    new_p, new_state = adam_step(p, [np.zeros(2)], state)
    bc1 = 1 - 0.9**4
    bc2 = 1 - 0.999**4
    expected = p[0] - 1e-3 * (0.45 / bc1) / (np.sqrt(0.1998 / bc2) + 1e-8)
    np.testing.assert_allclose(new_p[0], expected, rtol=1e-14)
    np.testing.assert_allclose(new_state.first_moment[0], [0.45, 0.45])
    np.testing.assert_allclose(new_state.second_moment[0], [0.1998, 0.1998])
    # from a fresh state a zero gradient changes nothing
    fresh = AdamState.zeros_like(p)
    same, _ = adam_step(p, [np.zeros(2)], fresh)
    np.testing.assert_array_equal(same[0], p[0])


def test_first_step_hand_calculation():
    g = np.array([0.3, -4.0, 1e-3])
    lr = 0.01
    state = AdamState.zeros_like([np.zeros(3)], lr=lr)
    new_p, new_state = adam_step([np.zeros(3)], [g], state)
    # m1 = 0.1 g, v1 = 0.001 g^2; bias-corrected ratio is g/|g| up to eps
    expected = -lr * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(new_p[0], expected, rtol=1e-12)
    assert new_state.step_count == 1


def test_adam_deterministic_and_counts_steps():
    p = [np.array([1.0, 2.0])]
    g = [np.array([0.1, -0.2])]
    s = AdamState.zeros_like(p)
    a1, s1 = adam_step(p, g, s)
    a2, s2 = adam_step(a1, g, s1)
    b1, t1 = adam_step(p, g, s)
    b2, t2 = adam_step(b1, g, t1)
    np.testing.assert_array_equal(a2[0], b2[0])
    assert s2.step_count == t2.step_count == 2


def test_adam_scale_invariance_of_first_update():
    rng = SeededRng(3)
    g = sample_standard_normal(rng, 10)
    base = AdamState.zeros_like([np.zeros(10)], epsilon=1e-12)
    u1, _ = adam_step([np.zeros(10)], [g], base)
    for c in (1e-3, 0.5, 7.0, 1e4):
        uc, _ = adam_step([np.zeros(10)], [c * g], base)
        np.testing.assert_allclose(uc[0], u1[0], rtol=1e-6, atol=0)


def test_adam_rejects_non_finite_gradient_with_location():
    p = [np.zeros(2), np.zeros((2, 2))]
    g = [np.zeros(2), np.array([[0.0, 0.0], [np.nan, 0.0]])]
    with pytest.raises(NumericError) as err:
        adam_step(p, g, AdamState.zeros_like(p), names=["b0", "W1"])
    assert "W1[1, 0]" in str(err.value)


# --- sampling ----------------------------------------------------------------


def test_normal_draws_are_reproducible():
    a = sample_standard_normal(SeededRng(42), (50, 3))
    b = sample_standard_normal(SeededRng(42), (50, 3))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, sample_standard_normal(SeededRng(43), (50, 3)))


def test_normal_shape():
    assert sample_standard_normal(SeededRng(0), (3, 4)).shape == (3, 4)
    assert sample_standard_normal(SeededRng(0), (3, 4)).size == 12
    assert sample_standard_normal(SeededRng(0), 5).shape == (5,)


def test_normal_moments_law_of_large_numbers():
    z = sample_standard_normal(SeededRng(11), 100_000)
    assert abs(z.mean()) < 0.02
    assert abs(z.var() - 1.0) < 0.05


def test_box_muller_transform_is_documented_one():
    rng = SeededRng(5)
    u = SeededRng(5).uniform((2, 2))
    r = np.sqrt(-2 * np.log(1 - u[0]))
    expected = np.concatenate([r * np.cos(2 * np.pi * u[1]), r * np.sin(2 * np.pi * u[1])])
    np.testing.assert_array_equal(sample_standard_normal(rng, 4), expected)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 40))
def test_permutation_is_a_permutation(seed, n):
    perm = SeededRng(seed).permutation(n)
    assert sorted(perm.tolist()) == list(range(n))
