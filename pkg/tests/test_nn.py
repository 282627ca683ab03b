import numpy as np
import pytest
from hypothesis import given, strategies as st

import gradsuite
from duriano.nn import layers as L
from duriano.nn import tensor as T
from duriano.nn.checkpoint import CheckpointError, load_tensors, save_tensors
from duriano.nn.gradcheck import gradient_check
from duriano.nn.tensor import ShapeError, Tensor, no_grad


@pytest.mark.parametrize("name,f,tensors", gradsuite.layer_cases(), ids=lambda v: v if isinstance(v, str) else "")
def test_layer_gradients(name, f, tensors):
    errors = gradient_check(f, tensors, eps=1e-5, max_entries=6, rng=np.random.default_rng(1))
    worst = max(errors, key=errors.get)
    assert errors[worst] < gradsuite.TOL, (worst, errors[worst])


def test_fc_identity_weight_passes_input():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((4, 3)))
    y = L.fully_connected(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(y.data, x.data)


@pytest.mark.parametrize("act", ["linear", "relu", "tanh", "sigmoid"])
def test_fc_zero_input_gives_activated_bias(act):
    b = np.array([-1.0, 0.5, 2.0])
    y = L.fully_connected(Tensor(np.zeros((5, 2))), Tensor(np.ones((2, 3))), Tensor(b), act)
    expected = T.ACTIVATIONS[act](Tensor(b)).data
    np.testing.assert_allclose(y.data, np.broadcast_to(expected, (5, 3)))


def test_fc_shape_mismatch():
    with pytest.raises(ShapeError):
        L.fully_connected(Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 3))), None)


def test_embedding_row_and_range():
    emb = L.Embedding(50, 64, np.random.default_rng(0))
    np.testing.assert_array_equal(emb([0]).data[0], emb.table.data[0])
    with pytest.raises(IndexError):
        emb([50])
    with pytest.raises(IndexError):
        emb([-1])


def test_embedding_repeated_ids_accumulate():
    emb = L.Embedding(3, 4, np.random.default_rng(0))
    emb([1, 1, 2]).sum().backward()
    np.testing.assert_array_equal(emb.table.grad, [[0] * 4, [2] * 4, [1] * 4])


def test_conv_bank_rejects_k0():
    with pytest.raises(ValueError):
        L.Conv1dBank(3, 0, 4, np.random.default_rng(0))


def test_conv_constant_input_constant_output():
    rng = np.random.default_rng(0)
    conv = L.Conv1d(3, 4, 5, rng, batch_norm=False)
    y = conv(Tensor(np.tile(rng.standard_normal(3), (9, 1)))).data
    np.testing.assert_allclose(y, np.broadcast_to(y[0], y.shape), atol=1e-12)


def test_conv_bank_delta_kernel_is_projection():
    rng = np.random.default_rng(0)
    bank = L.Conv1dBank(3, 1, 3, rng, batch_norm=False)
    bank.convs[0].weight.data[0] = np.eye(3)
    x = rng.random((6, 3))  # nonnegative, so the ReLU is transparent
    np.testing.assert_allclose(bank(Tensor(x)).data, x)


def test_conv_bank_output_channels():
    bank = L.Conv1dBank(3, 4, 5, np.random.default_rng(0))
    assert bank(Tensor(np.ones((7, 3)))).shape == (7, 20)


@pytest.mark.parametrize("bias,expect", [(-60.0, "x"), (60.0, "h")])
def test_highway_gate_limits(bias, expect):
    rng = np.random.default_rng(0)
    hw = L.Highway(5, 2, rng, gate_bias=bias)
    x = Tensor(rng.standard_normal((4, 5)))
    y = hw(x).data
    if expect == "x":
        np.testing.assert_allclose(y, x.data, atol=1e-12)
    else:
        h = x
        for layer in hw.transform:
            h = layer(h)
        np.testing.assert_allclose(y, h.data, atol=1e-12)


def test_gru_cell_zero():
    h = L.gru_cell(Tensor(np.zeros(9)), Tensor(np.zeros(3)), Tensor(np.zeros((3, 6))), Tensor(np.zeros((3, 3))))
    np.testing.assert_array_equal(h.data, 0.0)


def test_gru_update_gate_carries_state():
    rng = np.random.default_rng(0)
    gru = L.GRU(2, 3, rng)
    gru.b.data[:3] = 60.0  # z -> 1
    h_prev = Tensor(rng.standard_normal(3))
    h = gru.step(Tensor(rng.standard_normal(2)), h_prev)
    np.testing.assert_allclose(h.data, h_prev.data, atol=1e-12)


def test_bigru_single_frame_same_input():
    rng = np.random.default_rng(0)
    bi = L.BiGRU(3, 4, rng)
    x = Tensor(rng.standard_normal((1, 3)))
    y = bi(x).data
    np.testing.assert_allclose(y[0, :4], bi.fwd(x).data[0])
    np.testing.assert_allclose(y[0, 4:], bi.bwd(x).data[0])


@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_bigru_time_reversal(t, seed):
    rng = np.random.default_rng(seed)
    bi = L.BiGRU(3, 4, rng)
    # swapping the directions' weights makes the reversed run the mirror image
    mirror = L.BiGRU(3, 4, rng)
    mirror.fwd, mirror.bwd = bi.bwd, bi.fwd
    x = rng.standard_normal((t, 3))
    y = bi(Tensor(x)).data
    y_rev = mirror(Tensor(x[::-1].copy())).data
    np.testing.assert_allclose(y_rev[::-1, :4], y[:, 4:], atol=1e-12)
    np.testing.assert_allclose(y_rev[::-1, 4:], y[:, :4], atol=1e-12)


def test_cbhg_shape_and_determinism():
    rng = np.random.default_rng(0)
    cbhg = L.CBHG(128, 16, 128, (128, 128), 4, 128, rng).eval()
    x = Tensor(rng.standard_normal((20, 128)))
    with no_grad():
        a, b = cbhg(x).data, cbhg(x).data
    assert a.shape == (20, 256)
    np.testing.assert_array_equal(a, b)


def test_cbhg_projection_mismatch():
    with pytest.raises(ShapeError):
        L.CBHG(8, 2, 3, (4, 6), 1, 3, np.random.default_rng(0))


def test_batch_norm_eval_uses_running_stats():
    bn = L.BatchNorm(2)
    x = Tensor(np.array([[1.0, 2.0], [3.0, 6.0]]))
    bn(x)
    np.testing.assert_allclose(bn.buffers["running_mean"], [0.2, 0.4], rtol=1e-6)
    bn.eval()
    y = bn(x).data
    expected = (x.data - bn.buffers["running_mean"]) / np.sqrt(bn.buffers["running_var"] + bn.eps)
    np.testing.assert_allclose(y, expected)


def test_backward_accumulates_shared_inputs():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    (x * x + x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad


def test_gradient_check_catches_wrong_gradient():
    x = Tensor(np.array([0.3, -0.7]), requires_grad=True)

    def bad_square(x):
        # backward off by one percent
        return T._result(x.data**2, (x,), lambda g: x._accumulate(2.02 * g * x.data))

    assert gradient_check(lambda: T.square(x).sum(), {"x": x})["x"] < 1e-8
    assert gradient_check(lambda: bad_square(x).sum(), {"x": x})["x"] > 1e-3


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a": rng.standard_normal((3, 4)).astype(np.float32).astype(np.float64), "b.c": np.arange(5.0)}
    save_tensors(tmp_path / "x.ckpt", tensors, {"k": 1})
    back, meta = load_tensors(tmp_path / "x.ckpt")
    assert meta == {"k": 1} and list(back) == ["a", "b.c"]
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "x.ckpt"
    save_tensors(path, {"a": np.ones((10, 10))})
    raw = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_tensors(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_tensors(tmp_path / "short")
