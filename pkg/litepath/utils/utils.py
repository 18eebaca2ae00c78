"""
Utility functions for the LitePath toolkit.
"""

import hashlib
import json
import logging
import os
import re
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

logger = logging.getLogger(__name__)


class LitePathError(Exception):
    """Base exception for LitePath errors."""
    pass


class ValidationError(LitePathError):
    """Raised when inputs or configuration violate a precondition."""
    pass


class ShapeError(ValidationError):
    """Raised on tensor shape or model configuration mismatch."""
    pass


class NumericalError(LitePathError):
    """Raised when a computation produces NaN or Inf."""
    pass


class StaleCacheError(LitePathError):
    """Raised when a cached feature file was written under other weights."""
    pass


class WeightsFormatError(LitePathError):
    """Raised when a file is not a valid LPW1 container."""
    pass


class CohortError(LitePathError):
    """Raised when a slide fails inside a cohort run."""

    def __init__(self, slide_id: str, message: str):
        super().__init__(f"slide {slide_id}: {message}")
        self.slide_id = slide_id


class Utils:
    """Utility functions used throughout the toolkit."""

    @staticmethod
    def hash_identifier(text: str) -> str:
        """Create a SHA-256 hash of an identifier."""
        return hashlib.sha256(text.encode()).hexdigest()

    @staticmethod
    def hash_record(record: Dict[str, Any]) -> str:
        """Hash a JSON-serialisable record through its canonical rendering.

        Args:
            record: Dictionary of plain values

        Returns:
            Hex SHA-256 digest
        """
        return Utils.hash_identifier(json.dumps(record, sort_keys=True, separators=(",", ":")))

    @staticmethod
    def hash_arrays(named_arrays: Iterable) -> str:
        """Hash (name, array) pairs in the given order.

        Args:
            named_arrays: Iterable of (name, numpy array)

        Returns:
            Hex SHA-256 digest covering names, dtypes, shapes and bytes
        """
        digest = hashlib.sha256()
        for name, array in named_arrays:
            array = np.ascontiguousarray(array)
            digest.update(name.encode())
            digest.update(array.dtype.str.encode())
            digest.update(str(array.shape).encode())
            digest.update(array.tobytes())
        return digest.hexdigest()

    @staticmethod
    def sanitize_filename(filename: str) -> str:
        """Sanitize a string to be used as a filename"""
        return re.sub(r'[^\w\s.-]', '', filename).strip().replace(' ', '_')

    @staticmethod
    def ensure_dir(path: str) -> str:
        """Create a directory if needed and return it."""
        os.makedirs(path, exist_ok=True)
        return path

    @staticmethod
    def provenance_line(config_hash: str, seed: int, weights_hash: Optional[str]) -> str:
        """Comment line embedded at the top of every delimited output."""
        return f"# config_hash={config_hash} seed={seed} weights_hash={weights_hash or 'none'}"


def check_finite(array: np.ndarray, what: str = "tensor") -> np.ndarray:
    """Raise NumericalError if the array holds NaN or Inf."""
    if not np.all(np.isfinite(array)):
        raise NumericalError(f"Non-finite values in {what}")
    return array


def validate_positive(value: float, name: str) -> float:
    """Validate a strictly positive number."""
    if not value > 0:
        raise ValidationError(f"{name} must be positive, got {value}")
    return value


def validate_probability(value: float, name: str, allow_zero: bool = True) -> float:
    """Validate a value in [0, 1] (or (0, 1] when allow_zero is False)."""
    low_ok = value >= 0 if allow_zero else value > 0
    if not (low_ok and value <= 1):
        raise ValidationError(f"{name} must lie in {'[' if allow_zero else '('}0, 1], got {value}")
    return value


def validate_encoder_settings(settings: Dict[str, Any]) -> List[str]:
    """Validate encoder settings."""
    errors = []

    input_size = settings.get('input_size', 0)
    patch_size = settings.get('patch_size', 0)
    if patch_size <= 0 or input_size <= 0 or input_size % patch_size:
        errors.append("input_size must be a positive multiple of patch_size")

    embed_dim = settings.get('embed_dim', 0)
    heads = settings.get('heads', 0)
    if heads <= 0 or embed_dim <= 0 or embed_dim % heads:
        errors.append("embed_dim must be a positive multiple of heads")

    depth = settings.get('depth', 0)
    split = settings.get('split_after_block', 0)
    if not 1 <= split < depth:
        errors.append("split_after_block must satisfy 1 <= split < depth")

    return errors


def validate_config(config: Dict[str, Any]) -> List[str]:
    """Validate a run configuration rendered as nested dictionaries."""
    errors = []

    if 'encoder' in config:
        errors.extend(validate_encoder_settings(config['encoder']))

    if 'teachers' in config:
        weights = config['teachers'].get('weights', [])
        if len(weights) != 3 or any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            errors.append("teacher weights must be three non-negative reals summing to 1")

    if 'cohort' in config:
        cohort = config['cohort']
        fraction = cohort.get('lesion_fraction', 0)
        if not 0 < fraction <= 1:
            errors.append("lesion_fraction must lie in (0, 1]")
        if cohort.get('min_patches', 0) < 1 or cohort.get('max_patches', 0) < cohort.get('min_patches', 0):
            errors.append("patches per slide must satisfy 1 <= min_patches <= max_patches")

    temperature = config.get('aps_training', {}).get('temperature')
    if temperature is not None and temperature <= 0:
        errors.append("temperature must be positive")

    if 'bench' in config and config['bench'].get('repetitions', 3) < 3:
        errors.append("bench repetitions must be at least 3")

    return errors


def write_jsonl(path: str, record: Dict[str, Any]):
    """Append one JSON record to a line-delimited file."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, 'a', encoding='utf-8') as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")
