import dataclasses

import numpy as np
import pytest

from icc.container import encode, model_to_tensors
from icc.model import (
    LayerId, ModelConfig, NonFiniteActivation, attention, forward, gelu, init_weights, layer_norm, softmax,
    timestep_embedding,
)
from icc.rng import Rng


def test_init_is_deterministic(small_cfg):
    a = encode(model_to_tensors(init_weights(small_cfg, 7)))
    b = encode(model_to_tensors(init_weights(small_cfg, 7)))
    assert a == b
    assert a != encode(model_to_tensors(init_weights(small_cfg, 8)))


def test_layer_shapes(small_weights):
    assert small_weights.linear(LayerId(0, "qkv")).weight.shape == (96, 32)
    assert small_weights.linear(LayerId(1, "ffn_fc1")).weight.shape == (128, 32)
    assert small_weights.linear(LayerId(1, "ffn_fc2")).weight.shape == (32, 128)
    assert small_weights.class_embed.shape == (11, 32)


def test_init_variance():
    w = init_weights(ModelConfig(2, 64, 4, 16), 0)
    for layer in w.config.layer_ids():
        lin = w.linear(layer)
        ci = lin.weight.shape[1]
        assert abs(lin.weight.var() * ci - 1.0) < 0.2, layer.name
        assert not lin.bias.any()


def test_layer_ids_and_names(small_cfg):
    ids = small_cfg.layer_ids()
    assert [l.index for l in ids] == list(range(8))
    assert LayerId.parse("blocks.1.attn_proj") == LayerId(1, "attn_proj")
    with pytest.raises(ValueError):
        LayerId.parse("blocks.0.conv")


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(1, 30, 4, 8)
    with pytest.raises(ValueError):
        ModelConfig(0, 32, 4, 8)


def test_primitives():
    assert gelu(np.zeros(3)).tolist() == [0.0, 0.0, 0.0]
    assert abs(gelu(np.array([1.0]))[0] - 0.8411919906) < 1e-9
    s = softmax(Rng(0).normal((5, 7)) * 30)
    assert np.max(np.abs(s.sum(axis=-1) - 1)) < 1e-12 and np.all(s >= 0)
    x = Rng(1).normal((4, 8)) * 3 + 2
    y = layer_norm(x, np.ones(8), np.zeros(8))
    assert np.allclose(y.mean(axis=1), 0, atol=1e-12) and np.allclose(y.var(axis=1), 1, atol=1e-5)
    e = timestep_embedding(17, 32)
    assert e.shape == (32,) and np.allclose(e[:16] ** 2 + e[16:] ** 2, 1.0)


def test_single_token_attention_is_value_passthrough():
    qkv = Rng(2).normal((1, 24))
    out, probs = attention(qkv, 4)
    assert np.allclose(out, qkv[:, 16:], atol=1e-15)
    assert np.all(probs == 1.0)


def test_forward_shape_and_repeatability(small_weights):
    z = Rng(3).normal((16, 32))
    a, _ = forward(small_weights, z, 10, 2)
    b, _ = forward(small_weights, z, 10, 2)
    assert a.shape == (16, 32) and a.tobytes() == b.tobytes()
    with pytest.raises(ValueError):
        forward(small_weights, np.zeros((15, 32)), 10, 2)


def test_degenerate_weights_return_embedded_input(small_cfg):
    w = init_weights(small_cfg, 0)
    for blk in w.blocks:
        for lin in blk.linears.values():
            lin.weight[:] = 0.0
    w.head.weight[:] = np.eye(32)
    z = Rng(4).normal((16, 32))
    eps, _ = forward(w, z, 5, 1)
    expected = z + timestep_embedding(5, 32) + w.class_embed[1]
    assert np.max(np.abs(eps - expected)) < 1e-14


def test_token_permutation_equivariance(small_weights):
    z = Rng(5).normal((16, 32))
    perm = np.array(Rng(6).uniform(16).argsort())
    a, _ = forward(small_weights, z, 20, 3)
    b, _ = forward(small_weights, z[perm], 20, 3)
    assert np.max(np.abs(a[perm] - b)) < 1e-12


def test_taps_match_recomputation(small_weights):
    z = Rng(7).normal((16, 32))
    _, taps = forward(small_weights, z, 33, 0)
    assert set(taps.inputs) == set(small_weights.config.layer_ids())
    for layer in small_weights.config.layer_ids():
        lin = small_weights.linear(layer)
        assert np.max(np.abs(taps.outputs[layer] - (taps.inputs[layer] @ lin.weight.T + lin.bias))) < 1e-12
    ln = layer_norm(z + timestep_embedding(33, 32) + small_weights.class_embed[0],
                    small_weights.blocks[0].ln1_gain, small_weights.blocks[0].ln1_bias)
    assert np.max(np.abs(taps.inputs[LayerId(0, "qkv")] - ln)) < 1e-12


def test_non_finite_activation_names_layer(small_cfg):
    w = init_weights(small_cfg, 0)
    w.blocks[1].linears["qkv"].weight[:] = 1e308
    with np.errstate(all="ignore"), pytest.raises(NonFiniteActivation) as info:
        forward(w, Rng(8).normal((16, 32)), 3, 0)
    assert info.value.layer == LayerId(1, "qkv")


def test_embed_scale_only_scales_conditioning(small_cfg):
    w = init_weights(dataclasses.replace(small_cfg, embed_scale=0.0), 0)
    z = Rng(9).normal((16, 32))
    a, _ = forward(w, z, 3, 0)
    b, _ = forward(w, z, 40, 5)
    assert np.array_equal(a, b)
