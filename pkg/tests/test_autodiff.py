"""Reverse-mode engine: op gradients, the optimizer, checkpoints, grad checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xlcoref import autodiff as ad
from xlcoref.autodiff import (
    AdamConfig,
    AutodiffError,
    ParamStore,
    Tensor,
    adam_step,
    backward,
    constant,
    grad_check,
    seeded_rng,
)


def scalar_store(**values) -> ParamStore:
    store = ParamStore()
    for name, value in values.items():
        store.add(name, value)
    return store


# ---------------------------------------------------------------- forward values


def test_everything_is_float64():
    t = Tensor([1, 2, 3])
    assert t.data.dtype == np.float64


def test_softmax_uniform():
    out = ad.softmax(constant([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3])


def test_softmax_shift_invariance():
    a = ad.softmax(constant([1.0, 2.0, 3.0]))
    b = ad.softmax(constant([101.0, 102.0, 103.0]))
    assert np.allclose(a.data, b.data)


def test_max_with_argmax_values():
    value, idx = ad.max_with_argmax(constant([1.0, 2.0]))
    assert value.item() == 2.0
    assert idx == 1


def test_exp_log_inverse():
    x = constant([0.5, 1.0, 2.0])
    assert np.allclose(ad.exp(ad.log(x)).data, x.data)


def test_relu_and_tanh_shapes():
    x = constant([[-1.0, 2.0]])
    assert ad.relu(x).data.tolist() == [[0.0, 2.0]]
    assert np.allclose(ad.tanh(x).data, np.tanh(x.data))


def test_concat_and_slice_rows():
    a = constant([[1.0, 2.0]])
    b = constant([[3.0, 4.0]])
    both = ad.concat([a, b], axis=0)
    assert both.shape == (2, 2)
    assert ad.slice_rows(both, 1, 2).data.tolist() == [[3.0, 4.0]]


def test_non_finite_input_rejected():
    with pytest.raises(AutodiffError):
        Tensor([1.0, float("nan")])
    with np.errstate(over="ignore"), pytest.raises(AutodiffError):
        ad.exp(constant([1000.0]))  # overflow becomes inf


def test_shape_mismatch_names_the_op():
    with pytest.raises(AutodiffError, match="add"):
        ad.add(constant([1.0, 2.0]), constant([1.0, 2.0, 3.0]))
    with pytest.raises(AutodiffError, match="matmul"):
        ad.matmul(constant([[1.0, 2.0]]), constant([[1.0, 2.0]]))


# ---------------------------------------------------------------- gradients


def test_sum_of_squares_gradient():
    store = scalar_store(w=[1.0, 2.0, 3.0])
    loss = ad.tensor_sum(ad.mul(store["w"], store["w"]))
    grads = backward(loss, store)
    assert np.allclose(grads["w"], [2.0, 4.0, 6.0])


def test_exp_of_negated_max_gradients():
    # loss = exp(-max(a, b)) with a=1, b=2: only b gets gradient, -e^{-2}.
    store = scalar_store(a=1.0, b=2.0)
    m, _ = ad.max_with_argmax(ad.concat([ad.reshape(store["a"], (1,)), ad.reshape(store["b"], (1,))]))
    loss = ad.exp(-m)
    grads = backward(loss, store)
    assert grads["a"] == pytest.approx(0.0)
    assert grads["b"] == pytest.approx(-math.exp(-2.0))


def test_unused_parameter_gets_zero_gradient():
    store = scalar_store(used=[2.0], spare=[5.0])
    grads = backward(ad.tensor_sum(ad.mul(store["used"], store["used"])), store)
    assert grads["spare"].tolist() == [0.0]
    assert grads["used"].tolist() == [4.0]


def test_max_routes_gradient_to_single_element():
    store = scalar_store(v=[1.0, 3.0, 2.0])
    m, idx = ad.max_with_argmax(store["v"])
    grads = backward(m, store)
    expected = np.zeros(3)
    expected[idx] = 1.0
    assert np.array_equal(grads["v"], expected)


def test_gather_and_scatter_gradients():
    store = scalar_store(table=[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    picked = ad.gather_rows(store["table"], [2, 0, 2])
    grads = backward(ad.tensor_sum(picked), store)
    # Row 2 picked twice, row 0 once, row 1 never.
    assert grads["table"].tolist() == [[1.0, 1.0], [0.0, 0.0], [2.0, 2.0]]


def test_broadcast_add_gradient_sums():
    store = scalar_store(bias=[1.0, 2.0])
    wide = ad.add(constant([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]), store["bias"])
    grads = backward(ad.tensor_sum(wide), store)
    assert grads["bias"].tolist() == [3.0, 3.0]


def test_backward_requires_scalar_loss():
    store = scalar_store(w=[1.0, 2.0])
    with pytest.raises(AutodiffError, match="scalar"):
        backward(store["w"], store)


def test_repeated_backward_steps_stay_independent():
    store = scalar_store(w=[3.0])
    first = backward(ad.tensor_sum(ad.mul(store["w"], store["w"])), store)
    second = backward(ad.tensor_sum(ad.mul(store["w"], store["w"])), store)
    assert first["w"].tolist() == second["w"].tolist() == [6.0]


def test_forward_does_not_mutate_inputs():
    raw = np.array([1.0, -2.0, 3.0])
    t = constant(raw.copy())
    ad.relu(t)
    ad.softmax(t)
    assert t.data.tolist() == raw.tolist()


# ---------------------------------------------------------------- grad_check


def test_grad_check_quadratic_is_tiny():
    store = scalar_store(x=[0.7, -1.3])
    worst = grad_check(lambda s: ad.tensor_sum(ad.mul(s["x"], s["x"])), store)
    assert worst < 1e-8


def test_grad_check_epsilon_bounds():
    store = scalar_store(x=[1.0])
    fn = lambda s: ad.tensor_sum(s["x"])
    with pytest.raises(AutodiffError):
        grad_check(fn, store, epsilon=1e-8)
    with pytest.raises(AutodiffError):
        grad_check(fn, store, epsilon=1e-3)


def test_grad_check_sampling_is_deterministic():
    store = scalar_store(x=np.linspace(-1.0, 1.0, 20))
    fn = lambda s: ad.tensor_sum(ad.exp(ad.mul(s["x"], constant(0.1))))
    a = grad_check(fn, store, samples_per_tensor=3, seed=5)
    b = grad_check(fn, store, samples_per_tensor=3, seed=5)
    assert a == b


@pytest.mark.parametrize("seed", range(20))
def test_grad_check_random_composites(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    store.add("w", rng.normal(size=(3, 4)) * 0.5)
    store.add("b", rng.normal(size=(4,)) * 0.5)
    x = constant(rng.normal(size=(2, 3)))

    def loss_fn(s):
        h = ad.tanh(ad.add(ad.matmul(x, s["w"]), s["b"]))
        p = ad.softmax(h, axis=-1)
        return ad.tensor_sum(ad.mul(p, p))

    assert grad_check(loss_fn, store, epsilon=1e-6) < 1e-6


# ---------------------------------------------------------------- optimizer


def test_adam_descends_on_quadratic():
    store = scalar_store(x=[5.0])
    hyper = AdamConfig(lr=0.1)
    for _ in range(200):
        grads = backward(ad.tensor_sum(ad.mul(store["x"], store["x"])), store)
        adam_step(store, grads, hyper)
    assert abs(store["x"].data[0]) < 0.5


def test_adam_zero_gradient_still_counts_step():
    store = scalar_store(x=[1.0])
    adam_step(store, {"x": np.zeros(1)}, AdamConfig())
    assert store.step == 1
    assert store["x"].data.tolist() == [1.0]


def test_adam_missing_gradient_rejected():
    store = scalar_store(x=[1.0], y=[2.0])
    with pytest.raises(AutodiffError, match="y"):
        adam_step(store, {"x": np.zeros(1)}, AdamConfig())


def test_adam_is_deterministic():
    def run():
        store = scalar_store(x=[2.0, -1.0])
        hyper = AdamConfig(lr=0.05)
        for _ in range(10):
            grads = backward(ad.tensor_sum(ad.exp(store["x"])), store)
            adam_step(store, grads, hyper)
        return store["x"].data.copy()

    assert np.array_equal(run(), run())


def test_non_trainable_params_are_skipped():
    store = ParamStore()
    store.add("frozen", [1.0], trainable=False)
    store.add("live", [1.0])
    grads = backward(ad.tensor_sum(ad.add(store["frozen"], store["live"])), store)
    assert set(grads) == {"live"}
    adam_step(store, grads, AdamConfig(lr=0.5))
    assert store["frozen"].data.tolist() == [1.0]
    assert store["live"].data.tolist() != [1.0]


# ---------------------------------------------------------------- store & checkpoints


def test_store_names_sorted_and_duplicate_rejected():
    store = scalar_store(zeta=[1.0], alpha=[2.0])
    assert store.names() == ["alpha", "zeta"]
    with pytest.raises(AutodiffError):
        store.add("alpha", [3.0])


def test_store_copy_is_independent():
    store = scalar_store(x=[1.0])
    clone = store.copy()
    store["x"].data[0] = 99.0
    assert clone["x"].data.tolist() == [1.0]


def test_store_replace_checks_shape():
    store = scalar_store(x=[1.0, 2.0])
    store.replace("x", [3.0, 4.0])
    assert store["x"].data.tolist() == [3.0, 4.0]
    with pytest.raises(AutodiffError):
        store.replace("x", [1.0, 2.0, 3.0])


def test_unknown_parameter_error():
    store = scalar_store(x=[1.0])
    with pytest.raises(AutodiffError, match="nope"):
        store.tensor("nope")
    assert "x" in store and "nope" not in store


def test_checkpoint_round_trip_bytes_stable(tmp_path):
    store = scalar_store(w=[[1.5, -2.5]], b=[0.25])
    store.add("frozen", [7.0], trainable=False)
    grads = backward(ad.tensor_sum(ad.add(ad.tensor_sum(store["w"]), store["b"])), store)
    adam_step(store, grads, AdamConfig())

    blob = store.to_bytes()
    assert blob.startswith(ad.CHECKPOINT_MAGIC)
    again = ParamStore.from_bytes(blob)
    assert again.to_bytes() == blob
    assert again.step == store.step
    assert again.names() == store.names()
    assert not again.is_trainable("frozen")
    np.testing.assert_array_equal(again["w"].data, store["w"].data)

    path = tmp_path / "ck.bin"
    store.save(str(path))
    assert ParamStore.load(str(path)).to_bytes() == blob


def test_checkpoint_restores_optimizer_state():
    source = scalar_store(x=[10.0])
    hyper = AdamConfig(lr=0.2)
    for _ in range(3):
        grads = backward(ad.tensor_sum(ad.mul(source["x"], source["x"])), source)
        adam_step(source, grads, hyper)
    resumed = ParamStore.from_bytes(source.to_bytes())
    for store in (source, resumed):
        grads = backward(ad.tensor_sum(ad.mul(store["x"], store["x"])), store)
        adam_step(store, grads, hyper)
    assert source["x"].data.tolist() == resumed["x"].data.tolist()


def test_bad_magic_rejected():
    with pytest.raises(AutodiffError, match="magic"):
        ParamStore.from_bytes(b"WRONGMAG" + b"\x00" * 16)


def test_seeded_rng_reproducible():
    a = seeded_rng(3, "embed").normal(size=4)
    b = seeded_rng(3, "embed").normal(size=4)
    c = seeded_rng(3, "other").normal(size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


# ---------------------------------------------------------------- properties


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-5, max_value=5), min_size=1, max_size=6))
def test_softmax_rows_sum_to_one(values):
    out = ad.softmax(constant(values))
    assert float(out.data.sum()) == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-3, max_value=3), min_size=1, max_size=5))
def test_sum_gradient_is_ones(values):
    store = scalar_store(v=values)
    grads = backward(ad.tensor_sum(store["v"]), store)
    assert grads["v"].tolist() == [1.0] * len(values)
