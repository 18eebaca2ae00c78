import numpy as np
import pytest

from litepath.core.encoder import EncoderConfig, VisionEncoder, patchify
from litepath.core.flops import parameter_count
from litepath.core.heads import ScorerConfig, ScoringNet
from litepath.core.numerics import SeededRng, grad_check
from litepath.utils.utils import ShapeError, ValidationError


def images(config, n, seed=0):
    return SeededRng(seed).normal((n,) + config.image_shape)


def test_split_composes_to_full_encode(tiny_encoder, tiny_config):
    x = images(tiny_config, 5)
    tokens = tiny_encoder.encode_pre(x)
    assert tokens.shape == (5, tiny_config.num_tokens, tiny_config.embed_dim)
    np.testing.assert_array_equal(tiny_encoder.encode_post(tokens), tiny_encoder.full_encode(x))


def test_training_forward_matches_inference(tiny_encoder, tiny_config):
    x = images(tiny_config, 3)
    y, _ = tiny_encoder.forward_train(x)
    np.testing.assert_allclose(y, tiny_encoder.full_encode(x), rtol=1e-12, atol=1e-14)


def test_single_image_and_batch_agree(tiny_encoder, tiny_config):
    x = images(tiny_config, 4)
    batch = tiny_encoder.full_encode(x)
    assert batch.shape == (4, tiny_config.output_dim)
    single = tiny_encoder.full_encode(x[2])
    assert single.shape == (1, tiny_config.output_dim)
    np.testing.assert_allclose(single[0], batch[2], rtol=1e-10, atol=1e-12)


def test_wrong_input_shapes_rejected(tiny_encoder, tiny_config):
    with pytest.raises(ShapeError):
        tiny_encoder.encode_pre(np.zeros((2, 3, 9, 9)))
    with pytest.raises(ShapeError):
        tiny_encoder.encode_post(np.zeros((2, tiny_config.num_tokens + 1, tiny_config.embed_dim)))


def test_patchify_raster_order():
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    patches = patchify(x, 2)
    assert patches.shape == (1, 4, 4)
    np.testing.assert_array_equal(patches[0, 0], [0, 1, 4, 5])
    np.testing.assert_array_equal(patches[0, 1], [2, 3, 6, 7])
    np.testing.assert_array_equal(patches[0, 3], [10, 11, 14, 15])


def test_same_seed_same_weights(tiny_config):
    a = VisionEncoder(tiny_config, SeededRng(4)).state_dict()
    b = VisionEncoder(tiny_config, SeededRng(4)).state_dict()
    assert list(a) == list(b)
    for name in a:
        np.testing.assert_array_equal(a[name], b[name])


def _param_check(encoder, config, param_name):
    params = dict(encoder.named_parameters())
    param = params[param_name]
    x = images(config, 2, seed=9)
    weights = SeededRng(10).normal((2, config.output_dim))

    def fn(value):
        param.value = value
        encoder.zero_grad()
        y, cache = encoder.forward_train(x)
        encoder.backward(weights, cache)
        return float(np.sum(y * weights)), param.grad.copy()

    return grad_check(fn, param.value.copy())


@pytest.mark.parametrize("name", [
    "pos_embed",
    "cls_token",
    "patch_embed.proj.weight",
    "blocks.0.attn.qkv.weight",
    "blocks.1.norm1.gain",
    "blocks.2.mlp.fc1.bias",
    "norm.bias",
    "head.weight",
])
def test_encoder_gradients(name, tiny_config):
    # Larger initial weights so that every path carries a visible gradient.
    encoder = VisionEncoder(tiny_config, SeededRng(1))
    for p in encoder.parameters():
        if p.value.ndim > 1:
            p.value = p.value * 25
    assert _param_check(encoder, tiny_config, name) < 1e-4


def along_direction(module, params, directions, loss_and_backward):
    """Restrict a module loss to a line through parameter space, with its exact slope."""
    base = [p.value.copy() for p in params]

    def fn(t):
        for p, start, d in zip(params, base, directions):
            p.value = start + t[0] * d
        module.zero_grad()
        loss = loss_and_backward()
        slope = sum(float(np.sum(p.grad * d)) for p, d in zip(params, directions))
        return loss, np.array([slope])

    return fn


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100))
def test_encoder_parameter_gradients_at_seeded_points(seed, tiny_config):
    rng = SeededRng(seed)
    encoder = VisionEncoder(tiny_config, rng.spawn(0))
    scale = float(rng.uniform(5.0, 25.0))
    for p in encoder.parameters():
        if p.value.ndim > 1:
            p.value = p.value * scale
    x = images(tiny_config, 2, seed=seed + 1000)
    weights = rng.spawn(2).normal((2, tiny_config.output_dim))

    def loss_and_backward():
        y, cache = encoder.forward_train(x)
        encoder.backward(weights, cache)
        return float(np.sum(y * weights))

    for i, (name, p) in enumerate(encoder.named_parameters()):
        start = p.value.copy()
        direction = 0.1 * rng.spawn(1, i).normal(p.value.shape)
        assert grad_check(along_direction(encoder, [p], [direction], loss_and_backward), np.zeros(1)) < 1e-4, name
        p.value = start


def test_parameter_count_matches_module(tiny_encoder, tiny_config):
    assert tiny_encoder.num_parameters() == parameter_count(tiny_config)


def test_default_encoder_parameter_count():
    assert parameter_count(EncoderConfig()) == 22059904


def test_default_scorer_parameter_count():
    assert ScoringNet(ScorerConfig()).num_parameters() == 459521


def test_presets():
    assert EncoderConfig.preset("litefm-s").embed_dim == 192
    assert EncoderConfig.preset("litefm-l").heads == 12
    assert EncoderConfig.preset("litefm") == EncoderConfig()
    with pytest.raises(ValidationError):
        EncoderConfig.preset("unknown")


@pytest.mark.parametrize("overrides", [
    dict(embed_dim=10, heads=3),
    dict(input_size=30, patch_size=16),
    dict(split_after_block=12),
    dict(split_after_block=0),
])
def test_invalid_configs_rejected(overrides):
    with pytest.raises(ValidationError):
        EncoderConfig(**overrides)


def test_state_dict_round_trip(tiny_config, tiny_encoder):
    clone = VisionEncoder(tiny_config)
    clone.load_state_dict(tiny_encoder.state_dict())
    x = images(tiny_config, 2)
    np.testing.assert_array_equal(clone.full_encode(x), tiny_encoder.full_encode(x))


def test_load_state_dict_rejects_mismatch(tiny_config, tiny_encoder):
    state = tiny_encoder.state_dict()
    state["head.weight"] = np.zeros((3, 3))
    with pytest.raises(ShapeError):
        VisionEncoder(tiny_config).load_state_dict(state)
    state.pop("head.weight")
    with pytest.raises(ShapeError):
        VisionEncoder(tiny_config).load_state_dict(state)


def test_astype_float32(tiny_encoder, tiny_config):
    fast = tiny_encoder.astype(np.float32)
    assert fast.dtype == np.float32
    assert tiny_encoder.dtype == np.float64
    x = images(tiny_config, 2).astype(np.float32)
    np.testing.assert_allclose(fast.full_encode(x), tiny_encoder.full_encode(x.astype(np.float64)), rtol=1e-3, atol=1e-4)
