"""
Splittable vision transformer encoder.

The encoder is cut after `split_after_block` blocks: encode_pre runs the
patch embedding and the first blocks on every patch, encode_post runs the
remaining blocks, the final norm and the output head on the CLS token.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .layers import LayerNorm, Linear, Module, Parameter
from .numerics import SeededRng, gelu, gelu_backward, softmax, softmax_backward
from ..config.constants import Constants
from ..utils.utils import ShapeError, ValidationError, validate_encoder_settings

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncoderConfig:
    input_size: int = 224
    patch_size: int = 16
    in_chans: int = 3
    embed_dim: int = 384
    depth: int = 12
    heads: int = 6
    mlp_ratio: int = 4
    output_dim: int = 1024
    split_after_block: int = 1

    def __post_init__(self):
        errors = validate_encoder_settings(asdict(self))
        if errors:
            raise ValidationError(f"Invalid encoder config: {'; '.join(errors)}")

    @classmethod
    def preset(cls, name: str, **overrides) -> "EncoderConfig":
        """Model-family preset ("litefm-s", "litefm" or "litefm-l")."""
        if name not in Constants.ENCODER_PRESETS:
            raise ValidationError(f"Unknown encoder preset '{name}'")
        settings = dict(Constants.ENCODER_PRESETS[name])
        settings.update(overrides)
        return cls(**settings)

    @property
    def grid_size(self) -> int:
        return self.input_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size ** 2

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 1

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return (self.in_chans, self.input_size, self.input_size)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """(B, C, H, W) -> (B, num_patches, C * p * p) in raster order."""
    b, c, h, w = images.shape
    gh, gw = h // patch_size, w // patch_size
    x = images.reshape(b, c, gh, patch_size, gw, patch_size)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, gh * gw, c * patch_size * patch_size)


class PatchEmbed(Module):
    def __init__(self, config: EncoderConfig, rng: Optional[SeededRng]):
        self.patch_size = config.patch_size
        self.proj = Linear(config.in_chans * config.patch_size ** 2, config.embed_dim, rng)

    def forward(self, images: np.ndarray) -> np.ndarray:
        return self.proj.forward(patchify(images, self.patch_size))

    def forward_train(self, images: np.ndarray):
        return self.proj.forward_train(patchify(images, self.patch_size))

    def backward(self, grad: np.ndarray, cache):
        # Gradients stop at the pixels.
        self.proj.backward(grad, cache)


class Attention(Module):
    """Multi-head self-attention over the token axis."""

    def __init__(self, config: EncoderConfig, rng: Optional[SeededRng]):
        self.heads = config.heads
        self.head_dim = config.head_dim
        self.scale = self.head_dim ** -0.5
        self.qkv = Linear(config.embed_dim, 3 * config.embed_dim, rng.spawn(0) if rng else None)
        self.proj = Linear(config.embed_dim, config.embed_dim, rng.spawn(1) if rng else None)

    def _split_heads(self, qkv: np.ndarray):
        b, t, _ = qkv.shape
        qkv = qkv.reshape(b, t, 3, self.heads, self.head_dim).transpose(2, 0, 3, 1, 4)
        return qkv[0], qkv[1], qkv[2]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_train(x)[0]

    def forward_train(self, x: np.ndarray):
        b, t, d = x.shape
        qkv, qkv_cache = self.qkv.forward_train(x)
        q, k, v = self._split_heads(qkv)
        attn = softmax((q @ k.swapaxes(-1, -2)) * self.scale, axis=-1)
        mixed = (attn @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
        y, proj_cache = self.proj.forward_train(mixed)
        return y, (qkv_cache, q, k, v, attn, proj_cache)

    def backward(self, grad: np.ndarray, cache) -> np.ndarray:
        qkv_cache, q, k, v, attn, proj_cache = cache
        b, t, d = grad.shape
        d_mixed = self.proj.backward(grad, proj_cache)
        d_out = d_mixed.reshape(b, t, self.heads, self.head_dim).transpose(0, 2, 1, 3)
        d_attn = d_out @ v.swapaxes(-1, -2)
        d_v = attn.swapaxes(-1, -2) @ d_out
        d_scores = softmax_backward(d_attn, attn) * self.scale
        d_q = d_scores @ k
        d_k = d_scores.swapaxes(-1, -2) @ q
        d_qkv = np.stack([d_q, d_k, d_v]).transpose(1, 3, 0, 2, 4).reshape(b, t, 3 * d)
        return self.qkv.backward(d_qkv, qkv_cache)


class Mlp(Module):
    def __init__(self, config: EncoderConfig, rng: Optional[SeededRng]):
        hidden = config.embed_dim * config.mlp_ratio
        self.fc1 = Linear(config.embed_dim, hidden, rng.spawn(0) if rng else None)
        self.fc2 = Linear(hidden, config.embed_dim, rng.spawn(1) if rng else None)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.fc2.forward(gelu(self.fc1.forward(x)))

    def forward_train(self, x: np.ndarray):
        h, fc1_cache = self.fc1.forward_train(x)
        y, fc2_cache = self.fc2.forward_train(gelu(h))
        return y, (fc1_cache, h, fc2_cache)

    def backward(self, grad: np.ndarray, cache) -> np.ndarray:
        fc1_cache, h, fc2_cache = cache
        return self.fc1.backward(gelu_backward(self.fc2.backward(grad, fc2_cache), h), fc1_cache)


class Block(Module):
    """Pre-norm transformer block."""

    def __init__(self, config: EncoderConfig, rng: Optional[SeededRng]):
        self.norm1 = LayerNorm(config.embed_dim)
        self.attn = Attention(config, rng.spawn(0) if rng else None)
        self.norm2 = LayerNorm(config.embed_dim)
        self.mlp = Mlp(config, rng.spawn(1) if rng else None)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = x + self.attn.forward(self.norm1.forward(x))
        return x + self.mlp.forward(self.norm2.forward(x))

    def forward_train(self, x: np.ndarray):
        n1, n1_cache = self.norm1.forward_train(x)
        a, attn_cache = self.attn.forward_train(n1)
        x = x + a
        n2, n2_cache = self.norm2.forward_train(x)
        m, mlp_cache = self.mlp.forward_train(n2)
        return x + m, (n1_cache, attn_cache, n2_cache, mlp_cache)

    def backward(self, grad: np.ndarray, cache) -> np.ndarray:
        n1_cache, attn_cache, n2_cache, mlp_cache = cache
        grad = grad + self.norm2.backward(self.mlp.backward(grad, mlp_cache), n2_cache)
        return grad + self.norm1.backward(self.attn.backward(grad, attn_cache), n1_cache)


class VisionEncoder(Module):
    """ViT encoder with a split point between the pre- and post-stage."""

    def __init__(self, config: EncoderConfig, rng: Optional[SeededRng] = None):
        """Build the encoder.

        Args:
            config: Encoder configuration
            rng: Initialisation stream; None gives an all-zero network with
                unit norm gains
        """
        self.config = config
        self.patch_embed = PatchEmbed(config, rng.spawn(0) if rng else None)
        shape = (1, 1, config.embed_dim)
        self.cls_token = Parameter(rng.spawn(1).trunc_normal(shape) if rng else np.zeros(shape))
        shape = (1, config.num_tokens, config.embed_dim)
        self.pos_embed = Parameter(rng.spawn(2).trunc_normal(shape) if rng else np.zeros(shape))
        self.blocks: List[Block] = [
            Block(config, rng.spawn(3, i) if rng else None) for i in range(config.depth)
        ]
        self.norm = LayerNorm(config.embed_dim)
        self.head = Linear(config.embed_dim, config.output_dim, rng.spawn(4) if rng else None)

    @property
    def split(self) -> int:
        return self.config.split_after_block

    def _check_images(self, images: np.ndarray) -> np.ndarray:
        if images.ndim == 3:
            images = images[None]
        if images.ndim != 4 or images.shape[1:] != self.config.image_shape:
            raise ShapeError(f"expected images of shape (B, {self.config.image_shape}), got {images.shape}")
        return images

    def _check_tokens(self, tokens: np.ndarray) -> np.ndarray:
        expected = (self.config.num_tokens, self.config.embed_dim)
        if tokens.ndim == 2:
            tokens = tokens[None]
        if tokens.ndim != 3 or tokens.shape[1:] != expected:
            raise ShapeError(f"expected shallow tokens of shape (B, {expected}), got {tokens.shape}")
        return tokens

    def _embed(self, images: np.ndarray) -> np.ndarray:
        x = self.patch_embed.forward(images)
        cls = np.broadcast_to(self.cls_token.value, (x.shape[0], 1, x.shape[2]))
        return np.concatenate([cls, x], axis=1) + self.pos_embed.value

    def encode_pre(self, images: np.ndarray) -> np.ndarray:
        """Shallow features (B, num_tokens, embed_dim), CLS token first."""
        x = self._embed(self._check_images(images))
        for block in self.blocks[:self.split]:
            x = block.forward(x)
        return x

    def encode_post(self, tokens: np.ndarray) -> np.ndarray:
        """Embeddings (B, output_dim) from shallow features."""
        x = self._check_tokens(tokens)
        for block in self.blocks[self.split:]:
            x = block.forward(x)
        return self.head.forward(self.norm.forward(x[:, 0]))

    def full_encode(self, images: np.ndarray) -> np.ndarray:
        return self.encode_post(self.encode_pre(images))

    def forward(self, images: np.ndarray) -> np.ndarray:
        return self.full_encode(images)

    def forward_train(self, images: np.ndarray):
        images = self._check_images(images)
        x, embed_cache = self.patch_embed.forward_train(images)
        cls = np.broadcast_to(self.cls_token.value, (x.shape[0], 1, x.shape[2]))
        x = np.concatenate([cls, x], axis=1) + self.pos_embed.value
        block_caches = []
        for block in self.blocks:
            x, cache = block.forward_train(x)
            block_caches.append(cache)
        normed, norm_cache = self.norm.forward_train(x[:, 0])
        y, head_cache = self.head.forward_train(normed)
        return y, (embed_cache, block_caches, x.shape, norm_cache, head_cache)

    def backward(self, grad: np.ndarray, cache):
        """Accumulate parameter gradients for dL/d(embeddings) = grad."""
        embed_cache, block_caches, token_shape, norm_cache, head_cache = cache
        d_cls = self.norm.backward(self.head.backward(grad, head_cache), norm_cache)
        dx = np.zeros(token_shape, dtype=grad.dtype)
        dx[:, 0] = d_cls
        for block, block_cache in zip(reversed(self.blocks), reversed(block_caches)):
            dx = block.backward(dx, block_cache)
        self.pos_embed.grad += dx.sum(axis=0, keepdims=True)
        self.cls_token.grad += dx[:, :1].sum(axis=0, keepdims=True)
        self.patch_embed.backward(dx[:, 1:], embed_cache)
