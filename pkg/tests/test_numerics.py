import math
import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mft import numerics as nx
from mft.numerics import NonFiniteError, Tape, TapeError, Tensor


finite_logits = arrays(np.float64, st.integers(2, 24),
                       elements=st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False))


# ---- softmax ---------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(nx.softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)


def test_softmax_log_two():
    out = nx.softmax([0.0, math.log(2.0)])
    np.testing.assert_allclose(out, [1 / 3, 2 / 3], atol=1e-15)


@given(finite_logits)
def test_softmax_sums_to_one_even_for_extreme_logits(z):
    p = nx.softmax(z)
    assert (p >= 0).all()
    assert abs(p.sum() - 1.0) < 1e-6


@given(finite_logits, st.floats(-1e3, 1e3))
def test_softmax_shift_invariance(z, c):
    np.testing.assert_allclose(nx.softmax(z + c), nx.softmax(z), atol=1e-9)


def test_softmax_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        nx.softmax([0.0, np.nan])
    with pytest.raises(NonFiniteError):
        nx.softmax(Tensor(np.array([np.inf, 0.0], dtype=np.float32)))


def test_causal_softmax_zeroes_future():
    z = np.random.default_rng(0).standard_normal((2, 5, 5)).astype(np.float32)
    out = nx.softmax(Tensor(z), causal=True).data
    assert np.all(np.triu(out[0], 1) == 0)
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-6)


# ---- cross entropy -----------------------------------------------------------

def test_cross_entropy_confident_one_hot():
    logits = Tensor(np.array([[10.0, -10.0]]), dtype=np.float64)
    loss = nx.cross_entropy_soft(logits, np.array([[1.0, 0.0]]))
    expected = -math.log(1.0 / (1.0 + math.exp(-20.0)))
    assert float(loss.data) == pytest.approx(expected, rel=1e-9)
    assert float(loss.data) == pytest.approx(2.06e-9, rel=1e-2)


@given(arrays(np.float64, (3, 7), elements=st.floats(-20, 20)))
def test_cross_entropy_at_matching_target_is_entropy_with_zero_grad(z):
    p = nx.softmax(z)
    p = p / p.sum(-1, keepdims=True)
    x = Tensor(z, requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        loss = nx.cross_entropy_soft(x, p)
    tape.backward(loss, [x])
    entropy = -(p * np.log(np.where(p > 0, p, 1.0))).sum(-1).mean()
    assert float(loss.data) == pytest.approx(entropy, abs=1e-9)
    assert np.abs(x.grad).max() < 1e-12


@given(arrays(np.float64, (4, 9), elements=st.floats(-30, 30)))
def test_cross_entropy_uniform_target_oracle(z):
    V = z.shape[-1]
    loss = nx.cross_entropy_soft(Tensor(z, dtype=np.float64), np.full_like(z, 1.0 / V))
    lsm = z - z.max(-1, keepdims=True)
    lsm = lsm - np.log(np.exp(lsm).sum(-1, keepdims=True))
    assert float(loss.data) == pytest.approx(-lsm.mean(), rel=1e-12, abs=1e-12)


@given(arrays(np.float64, (5, 6), elements=st.floats(-10, 10)),
       arrays(np.float64, (5, 6), elements=st.floats(0.01, 1.0)))
def test_cross_entropy_gradient_is_softmax_minus_target(z, t):
    t = t / t.sum(-1, keepdims=True)
    x = Tensor(z, requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        loss = nx.cross_entropy_soft(x, t)
    tape.backward(loss, [x])
    # mean over rows divides every row's gradient by the row count
    np.testing.assert_allclose(x.grad * z.shape[0], nx.softmax(z) - t, atol=1e-6)


def test_cross_entropy_rejects_unnormalized_target():
    with pytest.raises(ValueError):
        nx.cross_entropy_soft(Tensor(np.zeros((1, 3))), np.array([[0.5, 0.5, 0.1]]))


def test_cross_entropy_weights_mask_rows():
    z = np.random.default_rng(2).standard_normal((3, 4))
    t = np.eye(4)[[0, 1, 2]]
    w = np.array([1.0, 0.0, 1.0])
    full = nx.cross_entropy_soft(Tensor(z[[0, 2]], dtype=np.float64), t[[0, 2]])
    masked = nx.cross_entropy_soft(Tensor(z, dtype=np.float64), t, weight=w)
    assert float(masked.data) == pytest.approx(float(full.data), rel=1e-12)


# ---- tape ------------------------------------------------------------------

def test_backward_fan_out_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        y = x * x + x * 3.0
        loss = nx.sum_(y)
    tape.backward(loss, [x])
    assert x.grad[0] == pytest.approx(2 * 2.0 + 3.0)


def test_backward_requires_scalar_recorded_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(TapeError):
        tape.backward(y)
    detached = Tensor(np.array(1.0))
    with pytest.raises(TapeError):
        tape.backward(detached)


def test_unused_parameter_gets_zero_gradient():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = nx.sum_(a * 2.0)
    tape.backward(loss, [a, b])
    assert b.grad.shape == (2, 2) and not b.grad.any()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        with nx.no_grad():
            nx.sum_(x * 2.0)
    assert tape.nodes == []


def test_reductions_accumulate_in_float64():
    x = Tensor(np.full(10_000_000 // 100, 0.1, dtype=np.float32))
    total = float(nx.sum_(x).data)
    assert total == pytest.approx(0.1 * x.data.size, rel=1e-6)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_op_output_raises():
    with pytest.raises(NonFiniteError):
        nx.exp(Tensor(np.array([1000.0], dtype=np.float32)))


def test_softmax_thread_safe_on_disjoint_inputs():
    rng = np.random.default_rng(5)
    inputs = [rng.standard_normal((64, 50)) for _ in range(8)]
    expected = [nx.softmax(z) for z in inputs]
    results = [None] * len(inputs)

    def work(i):
        for _ in range(20):
            results[i] = nx.softmax(inputs[i])

    threads = [threading.Thread(target=work, args=(i,)) for i in range(len(inputs))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for r, e in zip(results, expected):
        assert np.array_equal(r, e)


# ---- grad check --------------------------------------------------------------

def test_grad_check_square():
    x = Tensor(np.array([3.0]), dtype=np.float64)
    err = nx.grad_check(lambda ps: nx.sum_(ps[0] * ps[0]), [x], eps=1e-6)
    assert err < 1e-8


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-4), (np.float64, 1e-7)])
def test_grad_check_softmax_cross_entropy(dtype, tol):
    rng = np.random.default_rng(3)
    z = Tensor(rng.standard_normal((1, 8)).astype(dtype))
    t = nx.softmax(rng.standard_normal(8))[None]

    def f(ps):
        return nx.cross_entropy_soft(ps[0], t)

    assert nx.grad_check(f, [z], eps=1e-3 if dtype == np.float32 else 1e-6) < tol


def test_grad_check_through_layer_norm_gelu_matmul():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((3, 6)), dtype=np.float64)
    w = Tensor(rng.standard_normal((6, 5)), dtype=np.float64)
    g = Tensor(np.ones(6), dtype=np.float64)
    b = Tensor(np.zeros(6), dtype=np.float64)

    def f(ps):
        h = nx.layer_norm(ps[0], ps[2], ps[3])
        return nx.mean(nx.tanh(nx.gelu(h @ ps[1])))

    assert nx.grad_check(f, [x, w, g, b], eps=1e-6, n_samples=60) < 1e-7


def test_grad_check_validates_eps():
    x = Tensor(np.array([1.0]))
    with pytest.raises(ValueError):
        nx.grad_check(lambda ps: nx.sum_(ps[0]), [x], eps=1e-2)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_rejects_non_finite():
    # log is finite at the point but not one step to the left of it
    x = Tensor(np.array([1e-4]), dtype=np.float64)
    with pytest.raises(NonFiniteError):
        nx.grad_check(lambda ps: nx.sum_(nx.log(ps[0])), [x], eps=1e-3)


# ---- Adam --------------------------------------------------------------------

def _reference_adam(theta, g, k, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, k + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


@given(st.floats(-5, 5), st.floats(-3, 3), st.integers(1, 50))
def test_adam_matches_scalar_reference(theta0, g, k):
    p = {"w": Tensor(np.array([theta0]), dtype=np.float64)}
    state = nx.AdamState()
    for _ in range(k):
        nx.adam_step(p, {"w": np.array([g])}, state)
    assert state.step == k
    assert p["w"].data[0] == pytest.approx(_reference_adam(theta0, g, k), abs=1e-6)


def test_adam_zero_gradient_is_identity():
    p = {"w": Tensor(np.arange(4, dtype=np.float32))}
    before = p["w"].data.copy()
    nx.adam_step(p, {"w": np.zeros(4, np.float32)}, nx.AdamState())
    assert np.array_equal(p["w"].data, before)


@given(arrays(np.float32, 5, elements=st.floats(-100, 100, width=32)))
def test_adam_lr_zero_is_identity(g):
    p = {"w": Tensor(np.linspace(-1, 1, 5).astype(np.float32))}
    before = p["w"].data.copy()
    state = nx.AdamState(lr=0.0)
    for _ in range(3):
        nx.adam_step(p, {"w": g}, state)
    assert np.array_equal(p["w"].data, before)
    assert state.m["w"].shape == p["w"].data.shape == state.v["w"].shape


def test_adam_shape_mismatch():
    p = {"w": Tensor(np.zeros(3))}
    with pytest.raises(ValueError):
        nx.adam_step(p, {"w": np.zeros(4)}, nx.AdamState())
    with pytest.raises(ValueError):
        nx.adam_step(p, {"v": np.zeros(3)}, nx.AdamState())


# ---- rng -------------------------------------------------------------------

def test_named_streams_are_reproducible_and_distinct():
    a1 = nx.stream(7, "init", "model").standard_normal(4)
    a2 = nx.stream(7, "init", "model").standard_normal(4)
    b = nx.stream(7, "data", "split").standard_normal(4)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)


def test_stream_seed_range():
    nx.stream(2**64 - 1, "init")
    with pytest.raises(ValueError):
        nx.stream(-1, "init")
