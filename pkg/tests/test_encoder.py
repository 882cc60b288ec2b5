import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdcheck import central_diff, max_rel_error
from pscpc.autograd import Tensor
from pscpc.cube import HsiCube, extract_patch
from pscpc.encoder import (CHECKPOINT_MAGIC, AdamState, EncoderConfig, NonFiniteGradientError,
                           adam_step, adam_update, forward, forward_layers, init_encoder,
                           load_checkpoint, save_checkpoint)


def test_config_validation():
    for bad in [dict(patch_size=4), dict(embed_dim=1), dict(hidden_dims=[]), dict(activation="gelu")]:
        with pytest.raises(ValueError):
            EncoderConfig(**bad)
    assert EncoderConfig(3, 2, [8], 4).layer_dims == [18, 8, 4]


def test_init_is_deterministic_with_zero_biases():
    cfg = EncoderConfig(3, 2, [5, 4], 3)
    a, b = init_encoder(cfg, 9), init_encoder(cfg, 9)
    for x, y in zip(a.named().values(), b.named().values()):
        assert np.array_equal(x.value, y.value)
    assert all(not bias.value.any() for bias in a.biases)
    assert [w.shape for w in a.weights] == [(18, 5), (5, 4), (4, 3)]


def test_glorot_bound():
    cfg = EncoderConfig(1, 4, [4], 4)
    params = init_encoder(cfg, 0)
    bound = np.sqrt(0.75)
    assert np.all(np.abs(params.weights[1].value) < bound)
    assert np.all(np.abs(params.weights[0].value) < np.sqrt(6 / 8))


def test_zero_network_outputs_zero_rows():
    params = init_encoder(EncoderConfig(1, 3, [4], 2), 0)
    for t in params.named().values():
        t.value[...] = 0.0
    out = forward(params, np.ones((3, 3)))
    assert not forward_layers(params, np.ones((3, 3)))[-1].value.any()
    assert not out.value.any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from(["relu", "tanh"]))
def test_output_rows_are_unit_or_zero(seed, act):
    rng = np.random.default_rng(seed)
    params = init_encoder(EncoderConfig(3, 2, [6], 4, act), seed)
    norms = np.linalg.norm(forward(params, rng.normal(size=(7, 18))).value, axis=1)
    assert np.all((norms == 0) | (np.abs(norms - 1) <= 1e-6))


def test_relu_first_layer_is_homogeneous():
    rng = np.random.default_rng(1)
    params = init_encoder(EncoderConfig(3, 2, [6, 5], 4), 1)
    X = rng.normal(size=(4, 18))
    before = forward_layers(params, X)[0].value
    params.weights[0].value *= 2.0
    assert np.allclose(forward_layers(params, X)[0].value, 2 * before, rtol=0, atol=1e-12)


def test_forward_accepts_patches_and_checks_shape():
    cube = HsiCube(np.random.default_rng(2).normal(size=(5, 5, 2)))
    params = init_encoder(EncoderConfig(3, 2, [4], 3), 0)
    patches = [extract_patch(cube, (y, 1), 3) for y in range(5)]
    a = forward(params, patches).value
    b = forward(params, np.stack([p.values.ravel() for p in patches])).value
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        forward(params, np.zeros((2, 17)))


def test_forward_is_deterministic():
    params = init_encoder(EncoderConfig(3, 2, [4], 3), 0)
    X = np.random.default_rng(3).normal(size=(6, 18))
    assert forward(params, X).value.tobytes() == forward(params, X).value.tobytes()


def test_linear_layer_gradient_is_the_patch():
    # one linear layer is the (input -> hidden) map; sum of its outputs
    params = init_encoder(EncoderConfig(1, 3, [2], 2), 0)
    x = np.array([[0.5, -1.0, 2.0]])
    forward_layers(params, x)[0].sum().backward()
    assert np.array_equal(params.weights[0].grad, np.tile(x.T, (1, 2)))


def test_dead_relu_path_has_exact_zero_gradient():
    params = init_encoder(EncoderConfig(1, 2, [3], 2), 0)
    params.weights[0].value[:, 1] = 0.0
    params.biases[0].value[1] = -1.0   # hidden unit 1 never fires
    forward(params, np.array([[0.3, 0.7], [1.0, -2.0]])).sum().backward()
    assert np.all(params.weights[1].grad[1] == 0.0)
    assert np.all(params.weights[0].grad[:, 1] == 0.0)


@pytest.mark.parametrize("act", ["relu", "tanh"])
def test_encoder_gradients_match_finite_differences(act):
    rng = np.random.default_rng(4)
    params = init_encoder(EncoderConfig(3, 2, [6], 4, act), 2)
    for b in params.biases:
        b.value[...] = rng.normal(scale=0.1, size=b.shape)
    X = rng.normal(size=(5, 18))
    W = rng.normal(size=(5, 4))

    def loss():
        return (forward(params, X) * W).sum()
    loss().backward()
    tensors = list(params.named().values())
    numeric = central_diff(lambda: float(loss().value), [t.value for t in tensors], step=1e-4)
    assert max_rel_error([t.grad for t in tensors], numeric) < 1e-4


# ---------------------------------------------------------------------------- Adam

def test_adam_zero_gradient_is_noop():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    for _ in range(3):
        adam_step(p, {"w": np.zeros(2)}, state, lr=0.1)
    assert p["w"].tolist() == [1.0, -2.0]
    assert state.step == 3


def test_adam_constant_gradient_moves_by_lr():
    p = {"w": np.zeros(2)}
    state = AdamState()
    prev = p["w"].copy()
    for _ in range(200):
        prev = p["w"].copy()
        adam_step(p, {"w": np.array([3.0, -0.02])}, state, lr=0.01)
    assert np.allclose(p["w"] - prev, [-0.01, 0.01], rtol=1e-5)


def test_adam_minimises_quadratic():
    x = {"x": np.array([0.0])}
    state = AdamState()
    for _ in range(500):
        adam_step(x, {"x": 2 * (x["x"] - 3.0)}, state, lr=0.1)
    assert abs(x["x"][0] - 3.0) < 1e-2


def test_adam_rejects_non_finite_gradient():
    p = {"W0": np.zeros(2)}
    with pytest.raises(NonFiniteGradientError, match="W0.*step 1"):
        adam_step(p, {"W0": np.array([np.nan, 0.0])}, AdamState())


def test_adam_update_uses_leaf_gradients():
    params = init_encoder(EncoderConfig(1, 2, [3], 2), 0)
    before = params.copy()
    forward(params, np.ones((1, 2))).sum().backward()
    adam_update(params, AdamState(), 1e-2)
    moved = [not np.array_equal(a.value, b.value)
             for a, b in zip(params.named().values(), before.named().values())]
    assert any(moved)


# ---------------------------------------------------------------------- checkpoint

def test_checkpoint_layout_and_round_trip(tmp_path):
    params = init_encoder(EncoderConfig(3, 2, [5], 4), 0)
    path = tmp_path / "enc.hsenc"
    save_checkpoint(params, path)
    raw = path.read_bytes()
    assert raw[:8] == CHECKPOINT_MAGIC
    assert struct.unpack_from("<I", raw, 8) == (2,)
    assert struct.unpack_from("<2I", raw, 12) == (18, 5)
    assert len(raw) == 12 + 8 + 4 * (18 * 5 + 5) + 8 + 4 * (5 * 4 + 4)
    layers = load_checkpoint(path)
    for (w, b), wt, bt in zip(layers, params.weights, params.biases):
        assert np.array_equal(w, wt.value.astype(np.float32))
        assert np.array_equal(b, bt.value.astype(np.float32))


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(b"HSENC002" + b"\0" * 4)
    with pytest.raises(ValueError):
        load_checkpoint(path)
    params = init_encoder(EncoderConfig(1, 1, [2], 2), 0)
    save_checkpoint(params, path)
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_tensor_leaf_grad_starts_zero():
    t = Tensor(np.ones(3), requires_grad=True)
    assert t.grad.tolist() == [0.0, 0.0, 0.0]
