"""
Parameter containers and the two primitive layers every network is built from.
"""

import copy
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .numerics import SeededRng, layernorm_backward, layernorm_forward, linear_backward
from ..config.constants import Constants
from ..utils.utils import ShapeError

logger = logging.getLogger(__name__)


@dataclass
class Parameter:
    """A trainable tensor and its accumulated gradient."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)
    trainable: bool = True

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ShapeError(f"gradient shape {self.grad.shape} != value shape {self.value.shape}")

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


class Module:
    """Base class for networks with named parameters.

    Parameters are discovered from instance attributes in definition order:
    Parameter attributes, child Modules, and lists of Modules (named
    "<attr>.<index>").
    """

    training: bool = False

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, list) and value and all(isinstance(v, Module) for v in value):
                for i, child in enumerate(value):
                    yield f"{name}.{i}", child

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Parameter]]:
        params = []
        for name, value in self._children():
            if isinstance(value, Parameter):
                params.append((prefix + name, value))
            else:
                params.extend(value.named_parameters(prefix + name + "."))
        return params

    def parameters(self, trainable_only: bool = False) -> List[Parameter]:
        return [p for _, p in self.named_parameters() if p.trainable or not trainable_only]

    def modules(self) -> List["Module"]:
        found = [self]
        for _, value in self._children():
            if isinstance(value, Module):
                found.extend(value.modules())
        return found

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self, trainable_only: bool = False) -> int:
        return int(sum(p.value.size for p in self.parameters(trainable_only)))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        """Copy values in; names and shapes must match exactly."""
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, param in own.items():
            value = np.asarray(state[name])
            if value.shape != param.value.shape:
                raise ShapeError(f"{name}: expected shape {param.value.shape}, got {value.shape}")
            param.value = value.astype(param.value.dtype, copy=True)
            param.grad = np.zeros_like(param.value)

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.trainable = False
        return self

    def astype(self, dtype) -> "Module":
        """Deep copy with every parameter cast to dtype."""
        clone = copy.deepcopy(self)
        for p in clone.parameters():
            p.value = p.value.astype(dtype)
            p.grad = np.zeros_like(p.value)
        return clone

    @property
    def dtype(self):
        params = self.parameters()
        return params[0].value.dtype if params else np.dtype(np.float64)


class Linear(Module):
    """y = x @ W + b with W stored as (in_dim, out_dim)."""

    def __init__(self, in_dim: int, out_dim: int, rng: Optional[SeededRng] = None, bias: bool = True):
        weight = rng.trunc_normal((in_dim, out_dim)) if rng is not None else np.zeros((in_dim, out_dim))
        self.weight = Parameter(weight)
        self.bias = Parameter(np.zeros(out_dim)) if bias else None
        self.in_dim = in_dim
        self.out_dim = out_dim

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"expected last dimension {self.in_dim}, got {x.shape}")
        y = x @ self.weight.value
        return y if self.bias is None else y + self.bias.value

    def forward_train(self, x: np.ndarray):
        return self.forward(x), x

    def backward(self, grad: np.ndarray, cache: np.ndarray) -> np.ndarray:
        dx, dweight, dbias = linear_backward(grad, cache, self.weight.value)
        self.weight.grad += dweight
        if self.bias is not None:
            self.bias.grad += dbias
        return dx


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = Constants.LAYERNORM_EPS):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: np.ndarray) -> np.ndarray:
        return layernorm_forward(x, self.gain.value, self.bias.value, self.eps)[0]

    def forward_train(self, x: np.ndarray):
        return layernorm_forward(x, self.gain.value, self.bias.value, self.eps)

    def backward(self, grad: np.ndarray, cache) -> np.ndarray:
        dx, dgain, dbias = layernorm_backward(grad, cache, self.gain.value)
        self.gain.grad += dgain
        self.bias.grad += dbias
        return dx
