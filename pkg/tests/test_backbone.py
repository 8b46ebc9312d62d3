from __future__ import annotations

import numpy as np
import pytest

from docarg import autodiff as ad
from docarg.autodiff import Tensor
from docarg.backbone import (
    AdamW,
    Backbone,
    ModelConfig,
    PrefixPack,
    attention,
    grad_check,
    load_checkpoint,
    save_checkpoint,
)
from docarg.corpus import build_structure_mask
from docarg.errors import DataError


def tiny_config(**overrides) -> ModelConfig:
    base = dict(hidden=8, layers=2, heads=2, ffn=16, vocab_size=11, max_context=48, prefix_len=3, seed=0)
    base.update(overrides)
    return ModelConfig(**base)


def _rand(rng, *shape):
    return Tensor(rng.normal(size=shape))


# ---------------------------------------------------------------------------
# attention op


def test_attention_uniform_scores_give_mean():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(5, 4))
    out = attention(Tensor(np.zeros((3, 4))), Tensor(np.zeros((5, 4))), Tensor(values), heads=2)
    expected = np.broadcast_to(values.mean(axis=0), (3, 4))
    # per-head mean equals full-row mean since the split is columnwise
    assert np.allclose(out.data, expected, atol=1e-12)


def test_attention_one_hot_mask_selects_row():
    rng = np.random.default_rng(1)
    q = _rand(rng, 2, 4)
    k = _rand(rng, 5, 4)
    v = _rand(rng, 5, 4)
    mask = np.full((2, 5), -np.inf)
    mask[:, 3] = 0.0
    out = attention(q, k, v, additive_mask=mask, heads=1)
    assert np.array_equal(out.data[0], v.data[3])
    assert np.array_equal(out.data[1], v.data[3])


def test_attention_rows_sum_to_one_and_grad():
    rng = np.random.default_rng(2)
    q = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
    k = Tensor(rng.normal(size=(6, 8)), requires_grad=True)
    v = Tensor(rng.normal(size=(6, 8)), requires_grad=True)
    capture: list = []
    out = attention(q, k, v, heads=2, capture=capture)
    weights = capture[0]
    assert np.abs(weights.sum(axis=-1) - 1.0).max() <= 1e-12

    proj = np.random.default_rng(3).normal(size=out.shape)
    err = grad_check(
        lambda: (attention(q, k, v, heads=2) * Tensor(proj)).sum(),
        [q, k, v],
        epsilon=1e-6,
    )
    assert err <= 1e-4


def test_attention_prefix_positions_always_allowed():
    rng = np.random.default_rng(4)
    q = _rand(rng, 3, 4)
    k = _rand(rng, 5, 4)
    v = _rand(rng, 5, 4)
    prefix = (_rand(rng, 2, 4), _rand(rng, 2, 4))
    mask = np.full((3, 5), -np.inf)  # forbid every real position
    capture: list = []
    attention(q, k, v, additive_mask=mask, prefix=prefix, heads=1, capture=capture)
    weights = capture[0]
    assert (weights[:, :, :2] > 0).all()
    assert (weights[:, :, 2:] == 0.0).all()


def test_attention_prefix_neutrality():
    rng = np.random.default_rng(5)
    q = _rand(rng, 3, 8)
    k = _rand(rng, 5, 8)
    v = _rand(rng, 5, 8)
    plain = attention(q, k, v, heads=2)
    neutral_prefix = (_rand(rng, 4, 8), Tensor(np.zeros((4, 8))))
    prefix_mask = np.full((3, 4), -np.inf)
    masked = attention(q, k, v, prefix=neutral_prefix, heads=2, prefix_mask=prefix_mask)
    assert np.array_equal(plain.data, masked.data)


def test_attention_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        attention(Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 4))), Tensor(np.zeros((4, 4))))


# ---------------------------------------------------------------------------
# encoder / decoder


def test_encoder_single_token_shape():
    model = Backbone(tiny_config())
    out = model.encoder_forward([3])
    assert out.shape == (1, model.config.hidden)


def test_encoder_context_overflow():
    model = Backbone(tiny_config(max_context=4))
    with pytest.raises(DataError, match="context overflow"):
        model.encoder_forward([0, 1, 2, 3, 4])


def test_encoder_structure_mask_zeroes_cross_sentence_attention():
    model = Backbone(tiny_config())
    # sentences [0,3), [3,6), [6,9); trigger sentence 1
    mask = build_structure_mask(9, [(0, 3), (3, 6), (6, 9)], 1)
    capture: list = []
    model.encoder_forward(list(range(9)), additive_mask=mask.additive(), capture=capture)
    assert len(capture) == model.config.layers
    for weights in capture:
        # S_0 tokens (rows 0..2) must place exactly 0 on S_2 keys (cols 6..8)
        assert (weights[:, 0:3, 6:9] == 0.0).all()
        assert (weights[:, 6:9, 0:3] == 0.0).all()


def test_decoder_shape_and_finiteness():
    model = Backbone(tiny_config())
    memory = model.encoder_forward([1, 2, 3, 4])
    out = model.decoder_forward(memory, memory)
    assert out.shape == memory.shape
    assert np.isfinite(out.data).all()


def test_decoder_prefix_extends_key_length():
    config = tiny_config(prefix_len=40, max_context=64)
    model = Backbone(config)
    memory = model.encoder_forward([1, 2, 3, 4, 5])
    pack = PrefixPack(
        layers=tuple(
            (Tensor(np.zeros((40, config.hidden))), Tensor(np.zeros((40, config.hidden))))
            for _ in range(config.layers)
        )
    )
    capture: list = []
    model.decoder_forward(memory, memory, self_prefix=pack, capture=capture)
    self_attn = capture[0::2]  # self- and cross-attention alternate per layer
    assert len(self_attn) == config.layers
    for weights in self_attn:
        assert weights.shape[-1] == 5 + 40
    cross = capture[1::2]
    for weights in cross:
        assert weights.shape[-1] == 5  # cross-attention receives no prefix


def test_encoder_gradients_match_finite_differences():
    model = Backbone(tiny_config())
    proj = np.random.default_rng(7).normal(size=(4, model.config.hidden))

    def loss_fn():
        out = model.encoder_forward([1, 5, 2, 9])
        return (out * Tensor(proj)).sum()

    err = grad_check(loss_fn, list(model.params.values()), epsilon=1e-6, sample_size=250)
    assert err <= 1e-4


def test_decoder_gradients_match_finite_differences():
    model = Backbone(tiny_config())
    rng = np.random.default_rng(8)
    pack = PrefixPack(
        layers=tuple(
            (
                Tensor(rng.normal(size=(3, model.config.hidden)), requires_grad=True),
                Tensor(rng.normal(size=(3, model.config.hidden)), requires_grad=True),
            )
            for _ in range(model.config.layers)
        )
    )
    proj = rng.normal(size=(3, model.config.hidden))

    def loss_fn():
        memory = model.encoder_forward([1, 5, 2])
        out = model.decoder_forward(memory, memory, self_prefix=pack)
        return (out * Tensor(proj)).sum()

    params = list(model.params.values()) + [t for pair in pack.layers for t in pair]
    err = grad_check(loss_fn, params, epsilon=1e-6, sample_size=250)
    assert err <= 1e-4


def test_prefix_pack_layer_count_checked():
    model = Backbone(tiny_config())
    pack = PrefixPack(layers=((Tensor(np.zeros((3, 8))), Tensor(np.zeros((3, 8)))),))
    with pytest.raises(ValueError, match="prefix pack"):
        model.encoder_forward([1, 2], prefix_pack=pack)


# ---------------------------------------------------------------------------
# determinism, optimizer, checkpoints


def test_seeded_init_is_bitwise_identical():
    a = Backbone(tiny_config(seed=123))
    b = Backbone(tiny_config(seed=123))
    assert set(a.params) == set(b.params)
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)


def test_forward_is_deterministic():
    model = Backbone(tiny_config())
    out1 = model.encoder_forward([1, 2, 3])
    out2 = model.encoder_forward([1, 2, 3])
    assert np.array_equal(out1.data, out2.data)


def test_adamw_step_and_zero_lr():
    model = Backbone(tiny_config())
    before = {k: p.data.copy() for k, p in model.params.items()}

    def loss_fn():
        out = model.encoder_forward([1, 2, 3])
        return (out * out).sum()

    opt = AdamW(model.params, lr=1e-3)
    opt.zero_grad()
    loss_fn().backward()
    opt.step()
    assert any(not np.array_equal(before[k], p.data) for k, p in model.params.items())

    frozen = Backbone(tiny_config())
    opt0 = AdamW(frozen.params, lr=0.0, weight_decay=0.0)
    opt0.zero_grad()
    out = frozen.encoder_forward([1, 2, 3])
    (out * out).sum().backward()
    opt0.step()
    fresh = Backbone(tiny_config())
    for name in fresh.params:
        assert np.array_equal(frozen.params[name].data, fresh.params[name].data)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = Backbone(tiny_config(seed=9))
    path = tmp_path / "model.npz"
    meta = {"model_config": model.config.to_dict(), "note": "test"}
    save_checkpoint(path, model.params, meta)
    arrays, loaded_meta = load_checkpoint(path)
    assert loaded_meta["note"] == "test"
    assert loaded_meta["format_version"] == 1
    assert set(arrays) == set(model.params)
    for name, arr in arrays.items():
        assert arr.dtype == np.float64
        assert np.array_equal(arr, model.params[name].data)


def test_checkpoint_rewrite_is_byte_identical(tmp_path):
    model = Backbone(tiny_config(seed=9))
    p1, p2 = tmp_path / "a.npz", tmp_path / "b.npz"
    save_checkpoint(p1, model.params, {"x": 1})
    save_checkpoint(p2, model.params, {"x": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(hidden=10, heads=4, vocab_size=5)
    with pytest.raises(ValueError, match="prefix_len"):
        ModelConfig(prefix_len=0, vocab_size=5)
