"""
Dense numerical kernels with hand-derived backward passes.

Every function here is pure: inputs are never modified and the same inputs
give bit-identical outputs. Training and tests run in float64; the benchmark
path may hand in float32 arrays and gets float32 back.
"""

import logging
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import special, stats

from ..config.constants import Constants
from ..utils.utils import NumericalError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class SeededRng:
    """Counter-based random stream (numpy Philox keyed by a SeedSequence).

    Child streams are derived with spawn(key); a child depends only on the
    root seed and the full key path, never on how much of the parent stream
    has been consumed.
    """

    def __init__(self, seed: int, key: Sequence[int] = ()):
        if seed < 0:
            raise ValidationError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF, *self.key]
        self.generator = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def spawn(self, *key: int) -> "SeededRng":
        """Independent child stream addressed by key."""
        return SeededRng(self.seed, self.key + tuple(key))

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size=shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None):
        return self.generator.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=None):
        return self.generator.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)

    def trunc_normal(self, shape, std: float = Constants.INIT_STD) -> np.ndarray:
        """Normal(0, std) truncated to two standard deviations."""
        return stats.truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=shape, random_state=self.generator)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != (b.shape[-2] if b.ndim > 1 else b.shape[0]):
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def matmul_backward(grad: np.ndarray, a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of a @ b with respect to a and b (2-D operands)."""
    return grad @ b.T, a.T @ grad


def softmax(v: np.ndarray, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    """Temperature softmax with max-subtraction."""
    if not temperature > 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    if v.shape[axis] < 1:
        raise ValidationError("softmax over an empty axis")
    z = v / temperature
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v: np.ndarray, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    """Log of softmax, evaluated with logsumexp."""
    if not temperature > 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    z = v / temperature
    return z - special.logsumexp(z, axis=axis, keepdims=True)


def softmax_backward(grad: np.ndarray, p: np.ndarray, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    """Gradient through p = softmax(v / temperature) with respect to v."""
    inner = np.sum(grad * p, axis=axis, keepdims=True)
    return p * (grad - inner) / temperature


def layernorm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = Constants.LAYERNORM_EPS) -> np.ndarray:
    """Normalise the last axis to zero mean and unit variance, then apply gain and bias."""
    return layernorm_forward(x, gain, bias, eps)[0]


def layernorm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
                      eps: float = Constants.LAYERNORM_EPS) -> Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    if x.shape[-1] < 2:
        raise ShapeError("layernorm needs at least two features")
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * gain + bias, (xhat, inv_std)


def layernorm_backward(grad: np.ndarray, cache: Tuple[np.ndarray, np.ndarray],
                       gain: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dgain, dbias); parameter gradients are summed over leading axes."""
    xhat, inv_std = cache
    d = xhat.shape[-1]
    lead = tuple(range(grad.ndim - 1))
    dgain = np.sum(grad * xhat, axis=lead)
    dbias = np.sum(grad, axis=lead)
    dxhat = grad * gain
    dx = (inv_std / d) * (
        d * dxhat
        - np.sum(dxhat, axis=-1, keepdims=True)
        - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, x * Phi(x)."""
    return 0.5 * x * (1.0 + special.erf(x / _SQRT2))


def gelu_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + special.erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return grad * (cdf + x * pdf)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad * (x > 0)


def tanh_backward(grad: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient through y = tanh(x), given y."""
    return grad * (1.0 - y * y)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return special.expit(x)


def sigmoid_backward(grad: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient through y = sigmoid(x), given y."""
    return grad * y * (1.0 - y)


def linear(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """x @ weight + bias with weight stored as (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else y + bias


def linear_backward(grad: np.ndarray, x: np.ndarray,
                    weight: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dweight, dbias) for y = x @ weight + bias over any leading axes."""
    flat_x = x.reshape(-1, x.shape[-1])
    flat_g = grad.reshape(-1, grad.shape[-1])
    dweight = flat_x.T @ flat_g
    dbias = flat_g.sum(axis=0)
    dx = grad @ weight.T
    return dx, dweight, dbias


def cross_entropy(logits: np.ndarray, target: int) -> Tuple[float, np.ndarray]:
    """Softmax cross-entropy for one sample; returns (loss, dloss/dlogits)."""
    if not 0 <= target < logits.shape[-1]:
        raise ValidationError(f"target {target} outside [0, {logits.shape[-1]})")
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[target] -= 1.0
    return float(-logp[target]), grad


def dropout_mask(rng: SeededRng, shape, rate: float) -> np.ndarray:
    """Inverted-dropout mask: kept entries are scaled by 1 / (1 - rate)."""
    keep = rng.uniform(shape=shape) >= rate
    return keep / (1.0 - rate)


def global_norm(arrays: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in arrays)))


def grad_check(fn: Callable[[np.ndarray], Tuple[float, np.ndarray]], point: np.ndarray,
               step: float = 1e-6) -> float:
    """Compare an analytic gradient against central finite differences.

    Args:
        fn: Maps a point to (value, analytic gradient of the same shape)
        point: Where to evaluate; it is not modified
        step: Finite-difference step in [1e-7, 1e-3]

    Returns:
        Elementwise max of |analytic - numeric| / max(|analytic|, |numeric|, 1)
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValidationError(f"step must lie in [1e-7, 1e-3], got {step}")

    x = np.array(point, dtype=np.float64, copy=True)
    value, analytic = fn(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ShapeError(f"gradient shape {analytic.shape} differs from point shape {x.shape}")
    if not np.isfinite(value) or not np.all(np.isfinite(analytic)):
        raise NumericalError("non-finite value or gradient at the check point")

    numeric = np.empty_like(x)
    flat = x.reshape(-1)
    out = numeric.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = fn(x.copy())[0]
        flat[i] = original - step
        minus = fn(x.copy())[0]
        flat[i] = original
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericalError(f"non-finite value while perturbing element {i}")
        out[i] = (plus - minus) / (2.0 * step)

    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / scale))
