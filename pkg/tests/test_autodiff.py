import numpy as np
import pytest

from stagegrow.autodiff import (NonFiniteError, Tensor, add, cross_entropy,
                                embedding, grad_check, matmul, mul, reshape,
                                rms_norm, rope, scale, silu, softmax, sum_all,
                                transpose)


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def weighter(rng, shape):
    """A deterministic weighted-sum reducer drawn once up front.

    A plain sum gives a uniform upstream gradient, which misses bugs that
    only show under per-element weighting (e.g. softmax's coupling term).
    The weights must be fixed before grad_check runs: it re-evaluates the
    function many times for finite differences.
    """
    w = Tensor(rng.standard_normal(shape))
    return lambda out: sum_all(mul(out, w))


# ---------------------------------------------------------------------------
# Per-op gradient checks against central differences
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_grad_add_broadcast(seed):
    rng = np.random.default_rng(seed)
    b = Tensor(rng.standard_normal(4))
    x = leaf(rng, 3, 4)
    wsum = weighter(np.random.default_rng(seed + 1000), (3, 4))
    report = grad_check(lambda t: wsum(add(t, b)), x)
    assert report.passed, report
    a_const = Tensor(rng.standard_normal((3, 4)))
    report = grad_check(lambda t: wsum(add(a_const, t)),
                        Tensor(rng.standard_normal(4), requires_grad=True))
    assert report.passed, report


@pytest.mark.parametrize("seed", range(10))
def test_grad_mul(seed):
    rng = np.random.default_rng(seed)
    other = Tensor(rng.standard_normal((2, 5)))
    x = leaf(rng, 2, 5)
    wsum = weighter(np.random.default_rng(seed + 1000), (2, 5))
    report = grad_check(lambda t: wsum(mul(t, other)), x)
    assert report.passed, report


@pytest.mark.parametrize("seed", range(10))
def test_grad_scale(seed):
    rng = np.random.default_rng(seed)
    x = leaf(rng, 3, 3)
    report = grad_check(lambda t: sum_all(scale(t, -1.7)), x)
    assert report.passed, report


@pytest.mark.parametrize("seed", range(10))
def test_grad_matmul_left_right(seed):
    rng = np.random.default_rng(seed)
    a_const = Tensor(rng.standard_normal((3, 4)))
    b_const = Tensor(rng.standard_normal((4, 2)))
    wsum = weighter(np.random.default_rng(seed + 1000), (3, 2))
    report = grad_check(lambda t: wsum(matmul(t, b_const)), leaf(rng, 3, 4))
    assert report.passed, report
    report = grad_check(lambda t: wsum(matmul(a_const, t)), leaf(rng, 4, 2))
    assert report.passed, report


@pytest.mark.parametrize("seed", range(10))
def test_grad_matmul_batched(seed):
    rng = np.random.default_rng(seed)
    b_const = Tensor(rng.standard_normal((2, 4, 3)))
    wsum = weighter(np.random.default_rng(seed + 1000), (2, 3, 3))
    report = grad_check(lambda t: wsum(matmul(t, b_const)), leaf(rng, 2, 3, 4))
    assert report.passed, report


@pytest.mark.parametrize("seed", range(10))
def test_grad_silu(seed):
    rng = np.random.default_rng(seed)
    wsum = weighter(np.random.default_rng(seed + 1000), (2, 6))
    report = grad_check(lambda t: wsum(silu(t)), leaf(rng, 2, 6))
    assert report.passed, report


@pytest.mark.parametrize("seed", range(10))
def test_grad_softmax(seed):
    rng = np.random.default_rng(seed)
    wsum = weighter(np.random.default_rng(seed + 1000), (3, 5))
    report = grad_check(lambda t: wsum(softmax(t)), leaf(rng, 3, 5))
    assert report.passed, report


@pytest.mark.parametrize("seed", range(10))
def test_grad_rms_norm(seed):
    rng = np.random.default_rng(seed)
    gain_const = Tensor(rng.standard_normal(6))
    wsum = weighter(np.random.default_rng(seed + 1000), (2, 6))
    report = grad_check(lambda t: wsum(rms_norm(t, gain_const)), leaf(rng, 2, 6))
    assert report.passed, report
    x_const = Tensor(rng.standard_normal((2, 6)))
    report = grad_check(lambda t: wsum(rms_norm(x_const, t)), leaf(rng, 6))
    assert report.passed, report


@pytest.mark.parametrize("seed", range(10))
def test_grad_embedding(seed):
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, 7, size=(2, 3))
    wsum = weighter(np.random.default_rng(seed + 1000), (2, 3, 3))
    report = grad_check(lambda t: wsum(embedding(t, ids)), leaf(rng, 7, 3))
    assert report.passed, report


@pytest.mark.parametrize("seed", range(10))
def test_grad_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    targets = rng.integers(0, 5, size=4)
    report = grad_check(lambda t: cross_entropy(t, targets), leaf(rng, 4, 5))
    assert report.passed, report


@pytest.mark.parametrize("seed", range(10))
def test_grad_reshape_transpose(seed):
    rng = np.random.default_rng(seed)
    wsum = weighter(np.random.default_rng(seed + 1000), (2, 2, 3))
    report = grad_check(
        lambda t: wsum(transpose(reshape(t, (2, 2, 3)), (1, 0, 2))),
        leaf(rng, 4, 3))
    assert report.passed, report


@pytest.mark.parametrize("seed", range(10))
def test_grad_rope(seed):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((3, 4))
    cos, sin = np.cos(theta), np.sin(theta)
    wsum = weighter(np.random.default_rng(seed + 1000), (2, 3, 4))
    report = grad_check(lambda t: wsum(rope(t, cos, sin)), leaf(rng, 2, 3, 4))
    assert report.passed, report


@pytest.mark.parametrize("seed", range(5))
def test_grad_composed_block(seed):
    # Chain several ops the model actually uses back to back.
    rng = np.random.default_rng(seed)
    w1 = Tensor(rng.standard_normal((4, 4)))
    gain = Tensor(np.abs(rng.standard_normal(4)) + 0.5)
    wsum = weighter(np.random.default_rng(seed + 1000), (3, 4))

    def f(t):
        h = matmul(rms_norm(t, gain), w1)
        return wsum(softmax(silu(h)))

    report = grad_check(f, leaf(rng, 3, 4))
    assert report.passed, report


# ---------------------------------------------------------------------------
# Exact values
# ---------------------------------------------------------------------------

def test_softmax_uniform_on_zeros():
    y = softmax(Tensor(np.zeros((2, 4))))
    assert np.array_equal(y.data, np.full((2, 4), 0.25))


def test_rms_norm_of_zeros_is_zero():
    y = rms_norm(Tensor(np.zeros((3, 5))), Tensor(np.ones(5)))
    assert np.array_equal(y.data, np.zeros((3, 5)))


def test_cross_entropy_uniform_logits():
    # All-zero logits over 256 classes: loss is exactly ln 256.
    logits = Tensor(np.zeros((7, 256)))
    loss = cross_entropy(logits, np.arange(7))
    assert loss.data.dtype == np.float64
    assert float(loss.data) == pytest.approx(np.log(256.0), abs=1e-12)


def test_cross_entropy_loss_is_float64_even_for_float32_inputs():
    logits = Tensor(np.zeros((3, 8), dtype=np.float32), requires_grad=True)
    loss = cross_entropy(logits, np.zeros(3, dtype=np.int64))
    assert loss.data.dtype == np.float64
    loss.backward()
    assert logits.grad.dtype == np.float32


def test_sum_backward_is_ones():
    x = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3), requires_grad=True)
    sum_all(x).backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_quadratic_gradient_exact():
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    sum_all(mul(x, x)).backward()
    assert np.array_equal(x.grad, 2.0 * x.data)


def test_reuse_accumulates():
    x = Tensor(np.array([3.0, 4.0]), requires_grad=True)
    sum_all(add(x, x)).backward()
    assert np.array_equal(x.grad, np.array([2.0, 2.0]))

    x.zero_grad()
    a = Tensor(np.array([1.0, 10.0]))
    b = Tensor(np.array([100.0, 1000.0]))
    loss = add(sum_all(mul(x, a)), sum_all(mul(x, b)))
    loss.backward()
    assert np.array_equal(x.grad, a.data + b.data)


def test_embedding_duplicate_ids_accumulate():
    w = Tensor(np.eye(4), requires_grad=True)
    out = embedding(w, np.array([0, 0, 2]))
    sum_all(out).backward()
    expect = np.zeros((4, 4))
    expect[0] = 2.0
    expect[2] = 1.0
    assert np.array_equal(w.grad, expect)


def test_add_broadcast_bias_gradient_is_row_sum():
    x = Tensor(np.zeros((3, 4)))
    b = Tensor(np.zeros(4), requires_grad=True)
    w = Tensor(np.arange(12, dtype=np.float64).reshape(3, 4))
    sum_all(mul(add(x, b), w)).backward()
    assert np.array_equal(b.grad, w.data.sum(axis=0))


def test_rope_preserves_norm():
    # With the same angle repeated across both halves (the cache layout),
    # each (i, i+half) pair is a pure 2-D rotation, so vector norms survive.
    rng = np.random.default_rng(0)
    half = rng.standard_normal((5, 4))
    theta = np.concatenate([half, half], axis=-1)
    cos, sin = np.cos(theta), np.sin(theta)
    x = rng.standard_normal((2, 5, 8))
    y = rope(Tensor(x), cos, sin)
    assert np.linalg.norm(y.data, axis=-1) == pytest.approx(
        np.linalg.norm(x, axis=-1), rel=1e-12)


# ---------------------------------------------------------------------------
# Mechanics and failure modes
# ---------------------------------------------------------------------------

def test_determinism_bit_identical():
    def build():
        rng = np.random.default_rng(42)
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        loss = cross_entropy(matmul(silu(x), w), np.array([0, 1, 0]))
        loss.backward()
        return float(loss.data), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = build()
    l2, gx2, gw2 = build()
    assert l1 == l2
    assert np.array_equal(gx1, gx2)
    assert np.array_equal(gw1, gw2)


def test_overflow_raises_nonfinite():
    big = Tensor(np.full((2, 2), 1e38, dtype=np.float32))
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
        mul(big, big)


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        add(x, x).backward()


def test_matmul_rejects_vectors():
    with pytest.raises(ValueError):
        matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 3))))


def test_embedding_validation():
    w = Tensor(np.eye(4))
    with pytest.raises(ValueError):
        embedding(w, np.array([0.5, 1.5]))
    with pytest.raises(ValueError):
        embedding(w, np.array([0, 4]))
    with pytest.raises(ValueError):
        embedding(w, np.array([-1]))


def test_cross_entropy_validation():
    logits = Tensor(np.zeros((3, 5)))
    with pytest.raises(ValueError):
        cross_entropy(logits, np.zeros((4,), dtype=np.int64))
    with pytest.raises(ValueError):
        cross_entropy(logits, np.array([0, 1, 5]))


def test_rope_validation():
    x = Tensor(np.zeros((2, 3, 5)))
    cos = np.ones((3, 5))
    with pytest.raises(ValueError):
        rope(x, cos, cos)
    x = Tensor(np.zeros((2, 3, 4)))
    with pytest.raises(ValueError):
        rope(x, np.ones((3, 6)), np.ones((3, 6)))


def test_grad_check_reports_failure_metadata():
    rng = np.random.default_rng(7)
    x = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    report = grad_check(lambda t: sum_all(mul(t, t)), x)
    assert report.passed
    assert report.max_rel_error <= report.tolerance
    assert len(report.worst_index) == 2


def test_grad_check_rejects_constant_function():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        grad_check(lambda t: sum_all(Tensor(np.ones(2))), x)


def test_no_grad_tracking_without_requires_grad():
    x = Tensor(np.ones((2, 2)))
    y = mul(x, x)
    assert not y.requires_grad
    assert y._parents == ()
    assert y._backward is None
