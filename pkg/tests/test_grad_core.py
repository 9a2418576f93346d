import struct

import numpy as np
import pytest

import sclab.grad_core as gc
from sclab.grad_core import Tensor
from sclab.grad_core.check import gradcheck, numerical_grad


def t(x, grad=False):
    return Tensor(np.asarray(x, dtype=float), grad)


# -- forward examples --------------------------------------------------

def test_matmul_examples():
    m = [[1, 2], [3, 4]]
    np.testing.assert_array_equal(gc.matmul(t(np.eye(2)), t(m)).data, m)
    np.testing.assert_array_equal(gc.matmul(t([[0]]), t([[5]])).data, [[0]])
    np.testing.assert_array_equal(gc.matmul(t(m), t([[5], [6]])).data, [[17], [39]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(gc.ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        gc.matmul(t(np.zeros((2, 3))), t(np.zeros((2, 2))))


@pytest.mark.parametrize("x, w, stride, expected", [
    ([1, 1, 1, 1], [1], 1, [1, 1, 1, 1]),
    ([1, 2, 3, 4], [1, 1], 1, [3, 5, 7]),
    ([1, 2, 3, 4], [1, 0], 2, [1, 3]),
])
def test_conv1d_examples(x, w, stride, expected):
    out = gc.conv1d(t([x]), t([[w]]), stride)
    np.testing.assert_array_equal(out.data, [expected])


def test_conv1d_matches_direct_loop():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 17))
    w = rng.standard_normal((4, 3, 5))
    out = gc.conv1d(t(x), t(w), 3).data
    l_out = (17 - 5) // 3 + 1
    ref = np.zeros((2, 4, l_out))
    for b in range(2):
        for o in range(4):
            for i in range(l_out):
                ref[b, o, i] = np.sum(x[b, :, 3 * i: 3 * i + 5] * w[o])
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv1d_input_too_short():
    with pytest.raises(gc.ShapeError, match="too short"):
        gc.conv1d(t([[1.0, 2.0]]), t([[[1.0, 1.0, 1.0]]]))


def test_elementwise_examples():
    np.testing.assert_array_equal(gc.elementwise("relu", t([-1, 0, 2])).data, [0, 0, 2])
    np.testing.assert_array_equal(gc.elementwise("add", t([1, 2]), t([3, 4])).data, [4, 6])
    np.testing.assert_array_equal(gc.elementwise("exp", t([0])).data, [1])
    np.testing.assert_array_equal(gc.elementwise("neg", t([1, -2])).data, [-1, 2])


def test_elementwise_shape_mismatch():
    with pytest.raises(gc.ShapeError):
        gc.add(t([1, 2, 3]), t([1, 2]))


def test_non_finite_output_names_op():
    with pytest.raises(gc.NonFiniteError, match="exp"):
        gc.exp(t([1000.0]))


def test_log_and_div_are_guarded():
    assert np.isfinite(gc.log(t([0.0])).data).all()
    assert np.isfinite(gc.div(t([1.0]), t([0.0])).data).all()


def test_reduce_examples():
    assert gc.reduce("mean", t([2, 4])).item() == 3
    np.testing.assert_array_equal(gc.reduce("sum", t([[1, 2], [3, 4]]), axis=0).data, [4, 6])
    assert gc.reduce("sum", t(np.zeros(0))).item() == 0


def test_reduce_axis_out_of_range():
    with pytest.raises(IndexError):
        gc.reduce("sum", t([[1, 2]]), axis=2)


def test_cosine_examples():
    assert gc.cosine_similarity(t([1, 0]), t([1, 0])).item() == 1
    assert gc.cosine_similarity(t([1, 0]), t([0, 1])).item() == 0
    assert gc.cosine_similarity(t([1, 1]), t([1, 0])).item() == pytest.approx(0.70710678, abs=1e-8)


def test_cosine_zero_vector_is_finite():
    assert gc.cosine_similarity(t([0, 0]), t([1, 0])).item() == 0


def test_cosine_bounded():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((2000, 5)) * rng.uniform(1e-3, 1e3, (2000, 1))
    v = np.where(rng.random((2000, 1)) < 0.3, u * rng.uniform(1e-3, 1e3, (2000, 1)), rng.standard_normal((2000, 5)))
    s = gc.cosine_similarity(t(u), t(v)).data
    assert s.min() >= -1 - 1e-12 and s.max() <= 1 + 1e-12


# -- backward examples -------------------------------------------------

def test_backward_examples():
    x = t([3.0, -1.0], True)
    gc.sum_(x).backward()
    np.testing.assert_array_equal(x.grad, [1, 1])

    x = t([1.0, 2.0], True)
    gc.mean(gc.square(x)).backward()
    np.testing.assert_allclose(x.grad, [1, 2])

    w = t(2.0, True)
    (gc.relu(t(-3.0)) * w).backward()
    assert w.grad == 0


def test_backward_rejects_non_scalar():
    x = t([1.0, 2.0], True)
    with pytest.raises(gc.ShapeError):
        (x * 2).backward()


def test_backward_reports_non_finite_gradient():
    # 1/x is finite at 1e-160 but its derivative -1/x^2 overflows
    x = t([1e-160], True)
    with pytest.raises(gc.NonFiniteGradientError), np.errstate(over="ignore"):
        gc.sum_(gc.div(t([1.0]), x, eps=1e-300)).backward()


def test_diamond_graph_accumulates():
    rng = np.random.default_rng(1)
    a0 = rng.uniform(-2, 2, 4)

    def f(a):
        a = gc.as_tensor(a)
        left = gc.exp(a * 0.3)
        right = gc.square(a)
        return gc.sum_(left * right + a)

    a = t(a0, True)
    f(a).backward()
    (num,) = numerical_grad(lambda arr: f(Tensor(arr)).item(), [a0])
    np.testing.assert_allclose(a.grad, num, rtol=1e-6)


def test_leaf_used_three_times():
    x = t(1.5, True)
    (x * x * x).backward()
    assert x.grad == pytest.approx(3 * 1.5 ** 2)


def test_determinism_bit_identical():
    rng = np.random.default_rng(5)
    x0, w0 = rng.standard_normal((3, 2, 20)), rng.standard_normal((4, 2, 5))

    def run():
        x, w = t(x0, True), t(w0, True)
        gc.mean(gc.relu(gc.conv1d(x, w, 2))).backward()
        return x.grad.tobytes() + w.grad.tobytes()

    assert run() == run()


# -- gradient checks ---------------------------------------------------

def _rand(rng, *shape):
    return rng.uniform(-2, 2, shape)


GRAD_CASES = {
    "matmul": (lambda a, b: gc.matmul(a, b), lambda r: [_rand(r, 3, 4), _rand(r, 4, 2)]),
    "matmul_batched": (lambda a, b: gc.matmul(a, b), lambda r: [_rand(r, 2, 3, 4), _rand(r, 4, 2)]),
    "conv1d": (lambda x, w: gc.conv1d(x, w, 1), lambda r: [_rand(r, 2, 9), _rand(r, 3, 2, 3)]),
    "conv1d_stride": (lambda x, w: gc.conv1d(x, w, 2), lambda r: [_rand(r, 2, 2, 11), _rand(r, 3, 2, 4)]),
    "add": (gc.add, lambda r: [_rand(r, 3, 4), _rand(r, 4)]),
    "sub": (gc.sub, lambda r: [_rand(r, 3, 4), _rand(r, 3, 4)]),
    "mul": (gc.mul, lambda r: [_rand(r, 3, 4), _rand(r, 3, 1)]),
    "div": (gc.div, lambda r: [_rand(r, 5), np.sign(_rand(r, 5)) * r.uniform(0.2, 2, 5)]),
    "relu": (gc.relu, lambda r: [_rand(r, 6)]),
    "exp": (gc.exp, lambda r: [_rand(r, 6)]),
    "log": (gc.log, lambda r: [r.uniform(0.1, 2, 6)]),
    "neg": (gc.neg, lambda r: [_rand(r, 6)]),
    "square": (gc.square, lambda r: [_rand(r, 6)]),
    "sum": (lambda x: gc.sum_(x, axis=1), lambda r: [_rand(r, 3, 4)]),
    "mean": (lambda x: gc.mean(x, axis=0), lambda r: [_rand(r, 3, 4)]),
    "reshape": (lambda x: gc.reshape(x, (4, 3)), lambda r: [_rand(r, 3, 4)]),
    "transpose": (lambda x: gc.transpose(x, (1, 0)), lambda r: [_rand(r, 3, 4)]),
    "getitem": (lambda x: x[:, 1:3], lambda r: [_rand(r, 3, 4)]),
    "gather": (lambda x: x[np.array([2, 0, 2])], lambda r: [_rand(r, 3, 4)]),
    "concat": (lambda a, b: gc.concat([a, b], axis=1), lambda r: [_rand(r, 2, 3), _rand(r, 2, 1)]),
    "clamp_min": (lambda x: gc.clamp_min(x, 0.3), lambda r: [_rand(r, 6)]),
    "cosine_similarity": (gc.cosine_similarity, lambda r: [_rand(r, 4, 5), _rand(r, 4, 5)]),
    "log_softmax": (gc.log_softmax, lambda r: [_rand(r, 3, 5)]),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_gradcheck(name):
    op, make = GRAD_CASES[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    worst = max(gradcheck(op, make(rng), seed=i) for i in range(20))  # fresh inputs per draw
    assert worst < 1e-4, f"{name}: relative error {worst:.2e}"


# -- optimizers --------------------------------------------------------

def test_sgd_step():
    p = {"p": t([1.0], True)}
    p["p"].grad = np.array([1.0])
    state = gc.optimizer_step(p, gc.OptimizerState("SGD", 0.1))
    assert p["p"].data[0] == pytest.approx(0.9)
    assert state.step_count == 1


def test_zero_gradient_fixed_point():
    p = {"p": t([1.0], True)}
    state = gc.OptimizerState("ADAM", 0.1)
    p["p"].grad = np.array([1.0])
    gc.optimizer_step(p, state)
    before = p["p"].data.copy()
    m1 = state.first_moment["p"].copy()
    p["p"].grad = np.array([0.0])
    gc.optimizer_step(p, gc.OptimizerState("SGD", 0.1))
    np.testing.assert_array_equal(p["p"].data, before)
    p["p"].grad = np.array([0.0])
    gc.optimizer_step(p, state)
    assert abs(state.first_moment["p"][0]) < abs(m1[0])


def test_adam_first_step_moves_by_lr():
    # bias-corrected m/sqrt(v) is exactly g/|g| on step one
    p = {"p": t([1.0], True)}
    p["p"].grad = np.array([1.0])
    gc.optimizer_step(p, gc.OptimizerState("ADAM", 1e-3))
    assert 1.0 - p["p"].data[0] == pytest.approx(1e-3, rel=1e-6)


def test_optimizer_missing_gradient_names_parameter():
    with pytest.raises(ValueError, match="enc.w"):
        gc.optimizer_step({"enc.w": t([1.0], True)}, gc.OptimizerState())


def test_step_count_and_moment_shapes():
    p = {"a": t(np.ones((2, 3)), True), "b": t([1.0], True)}
    state = gc.OptimizerState()
    for i in range(3):
        for v in p.values():
            v.grad = np.ones_like(v.data)
        gc.optimizer_step(p, state)
        assert state.step_count == i + 1
    assert state.first_moment["a"].shape == (2, 3)
    assert state.second_moment["b"].shape == (1,)


# -- serialization -----------------------------------------------------

def test_tensor_record_round_trip():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 4))
    buf = gc.tensor_to_bytes(t(x))
    assert buf[:4] == b"SCLT"
    assert struct.unpack_from("<II", buf, 4) == (1, 3)
    back, end = gc.tensor_from_bytes(buf)
    assert end == len(buf)
    assert back.tobytes() == x.tobytes()


def test_tensor_record_rejects_newer_version():
    buf = bytearray(gc.tensor_to_bytes(t([1.0])))
    buf[4:8] = struct.pack("<I", 99)
    with pytest.raises(gc.SerializationError, match="version 99"):
        gc.tensor_from_bytes(bytes(buf))


def test_tensor_record_truncated():
    buf = gc.tensor_to_bytes(t([1.0, 2.0]))
    with pytest.raises(gc.SerializationError, match="truncated"):
        gc.tensor_from_bytes(buf[:-3])
