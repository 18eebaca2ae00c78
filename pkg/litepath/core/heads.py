"""
Small heads on top of the encoder: the ABMIL aggregator, the patch scoring
network and the distillation projection heads.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .layers import Linear, Module
from .numerics import (
    SeededRng,
    cross_entropy,
    dropout_mask,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    softmax,
    softmax_backward,
    tanh_backward,
)
from ..utils.utils import ShapeError, ValidationError, validate_probability

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ABMILConfig:
    input_dim: int = 1024
    hidden_dim: int = 512
    attn_dim: int = 128
    num_classes: int = 2
    dropout: float = 0.25
    gated: bool = False

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError("ABMIL needs at least two classes")
        validate_probability(self.dropout, "dropout")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ScorerConfig:
    input_dim: int = 768
    hidden_dim: int = 512
    attn_dim: int = 128
    dropout: float = 0.25

    def __post_init__(self):
        validate_probability(self.dropout, "dropout")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class ABMILHead(Module):
    """Attention-based multiple-instance aggregator.

    forward returns the class logits and the raw (pre-softmax) attention
    score of every instance; softmax is only applied inside aggregation.
    """

    def __init__(self, config: ABMILConfig, rng: Optional[SeededRng] = None):
        self.config = config
        self.input_proj = Linear(config.input_dim, config.hidden_dim, rng.spawn(0) if rng else None)
        self.attention_v = Linear(config.hidden_dim, config.attn_dim, rng.spawn(1) if rng else None)
        if config.gated:
            self.attention_u = Linear(config.hidden_dim, config.attn_dim, rng.spawn(2) if rng else None)
        self.attention_w = Linear(config.attn_dim, 1, rng.spawn(3) if rng else None)
        self.classifier = Linear(config.hidden_dim, config.num_classes, rng.spawn(4) if rng else None)

    def _check_bag(self, bag: np.ndarray) -> np.ndarray:
        if bag.ndim != 2 or bag.shape[0] < 1:
            raise ValidationError(f"ABMIL needs a non-empty (n, {self.config.input_dim}) bag, got {bag.shape}")
        if bag.shape[1] != self.config.input_dim:
            raise ShapeError(f"bag feature dim {bag.shape[1]} != {self.config.input_dim}")
        return bag

    def forward(self, bag: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (logits (num_classes,), raw attention scores (n,))."""
        logits, scores, _ = self.forward_train(bag)
        return logits, scores

    def forward_train(self, bag: np.ndarray, rng: Optional[SeededRng] = None):
        """Forward pass keeping the cache; dropout is active only in training mode with an rng."""
        bag = self._check_bag(bag)
        pre, proj_cache = self.input_proj.forward_train(bag)
        h = relu(pre)
        mask = None
        if self.training and rng is not None and self.config.dropout > 0:
            mask = dropout_mask(rng, h.shape, self.config.dropout)
            h = h * mask
        v_pre, v_cache = self.attention_v.forward_train(h)
        v = np.tanh(v_pre)
        gate = u_cache = None
        if self.config.gated:
            u_pre, u_cache = self.attention_u.forward_train(h)
            gate = sigmoid(u_pre)
            a = v * gate
        else:
            a = v
        raw, w_cache = self.attention_w.forward_train(a)
        scores = raw[:, 0]
        weights = softmax(scores)
        z = weights @ h
        logits, cls_cache = self.classifier.forward_train(z)
        cache = (proj_cache, pre, mask, h, v_cache, v, u_cache, gate, w_cache, weights, cls_cache)
        return logits, scores, cache

    def backward(self, grad_logits: np.ndarray, cache):
        """Accumulate parameter gradients for dL/dlogits = grad_logits."""
        proj_cache, pre, mask, h, v_cache, v, u_cache, gate, w_cache, weights, cls_cache = cache
        d_z = self.classifier.backward(grad_logits, cls_cache)
        d_h = np.outer(weights, d_z)
        d_scores = softmax_backward(h @ d_z, weights)
        d_a = self.attention_w.backward(d_scores[:, None], w_cache)
        if self.config.gated:
            d_h += self.attention_v.backward(tanh_backward(d_a * gate, v), v_cache)
            d_h += self.attention_u.backward(sigmoid_backward(d_a * v, gate), u_cache)
        else:
            d_h += self.attention_v.backward(tanh_backward(d_a, v), v_cache)
        if mask is not None:
            d_h = d_h * mask
        self.input_proj.backward(relu_backward(d_h, pre), proj_cache)

    def loss_and_backward(self, bag: np.ndarray, label: int, rng: Optional[SeededRng] = None) -> float:
        """Cross-entropy of one bag; gradients are accumulated."""
        logits, _, cache = self.forward_train(bag, rng)
        loss, grad = cross_entropy(logits, int(label))
        self.backward(grad, cache)
        return loss

    def loss(self, bag: np.ndarray, label: int) -> float:
        logits, _ = self.forward(bag)
        return cross_entropy(logits, int(label))[0]

    def predict_proba(self, bag: np.ndarray) -> np.ndarray:
        return softmax(self.forward(bag)[0])


class ScoringNet(Module):
    """Per-patch attention score estimator on concatenated shallow features."""

    def __init__(self, config: ScorerConfig, rng: Optional[SeededRng] = None):
        self.config = config
        self.fc1 = Linear(config.input_dim, config.hidden_dim, rng.spawn(0) if rng else None)
        self.fc2 = Linear(config.hidden_dim, config.attn_dim, rng.spawn(1) if rng else None)
        self.out = Linear(config.attn_dim, 1, rng.spawn(2) if rng else None)

    def forward(self, features: np.ndarray) -> np.ndarray:
        """Raw scores (n,) for features (n, input_dim); a scalar for a single vector."""
        return self.forward_train(features)[0]

    def forward_train(self, features: np.ndarray, rng: Optional[SeededRng] = None):
        single = features.ndim == 1
        x = features[None] if single else features
        if x.shape[-1] != self.config.input_dim:
            raise ShapeError(f"scorer expects {self.config.input_dim} features, got {x.shape[-1]}")
        pre, fc1_cache = self.fc1.forward_train(x)
        h = relu(pre)
        mask = None
        if self.training and rng is not None and self.config.dropout > 0:
            mask = dropout_mask(rng, h.shape, self.config.dropout)
            h = h * mask
        g_pre, fc2_cache = self.fc2.forward_train(h)
        g = np.tanh(g_pre)
        raw, out_cache = self.out.forward_train(g)
        scores = raw[:, 0]
        cache = (fc1_cache, pre, mask, fc2_cache, g, out_cache)
        return (scores[0] if single else scores), cache

    def backward(self, grad_scores: np.ndarray, cache):
        fc1_cache, pre, mask, fc2_cache, g, out_cache = cache
        grad_scores = np.atleast_1d(grad_scores)
        d_g = self.out.backward(grad_scores[:, None], out_cache)
        d_h = self.fc2.backward(tanh_backward(d_g, g), fc2_cache)
        if mask is not None:
            d_h = d_h * mask
        self.fc1.backward(relu_backward(d_h, pre), fc1_cache)


class ProjectionHead(Linear):
    """Linear map from the student embedding to one teacher's embedding space."""

    def __init__(self, output_dim: int, teacher_dim: int, rng: Optional[SeededRng] = None):
        super().__init__(output_dim, teacher_dim, rng)


def concat_shallow(tokens: np.ndarray) -> np.ndarray:
    """[CLS ; mean of patch tokens] for (T, D) or (B, T, D) shallow features."""
    if tokens.ndim not in (2, 3) or tokens.shape[-2] < 2:
        raise ShapeError(f"expected shallow tokens with a CLS and at least one patch token, got {tokens.shape}")
    cls = tokens[..., 0, :]
    mean = tokens[..., 1:, :].mean(axis=-2)
    return np.concatenate([cls, mean], axis=-1)
