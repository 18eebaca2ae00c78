"""
Per-slide feature cache stored as LPW1 files.

Layout: <root>/<weights_hash>/<tier>/<slide_id>.lpw
"""

import logging
import os
from typing import Optional

import numpy as np

from .weights_io import load_weights, save_weights
from ..config.constants import Constants
from ..utils.utils import StaleCacheError, Utils, ValidationError

logger = logging.getLogger(__name__)

TIERS = ("shallow", "full")


class FeatureCache:
    """Content-addressed store of shallow (concat) or full (embedding) features."""

    def __init__(self, root: str, logger: Optional[logging.Logger] = None):
        self.root = root
        self.logger = logger or logging.getLogger(__name__)
        self.hits = 0
        self.misses = 0

    def path(self, slide_id: str, weights_hash: str, tier: str) -> str:
        if tier not in TIERS:
            raise ValidationError(f"Unknown cache tier '{tier}'")
        name = Utils.sanitize_filename(slide_id) + Constants.WEIGHTS_SUFFIX
        return os.path.join(self.root, weights_hash, tier, name)

    def store(self, slide_id: str, weights_hash: str, tier: str, features: np.ndarray) -> str:
        path = self.path(slide_id, weights_hash, tier)
        record = {"slide_id": slide_id, "weights_hash": weights_hash, "tier": tier}
        return save_weights(path, {"features": features}, record)

    def load(self, slide_id: str, weights_hash: str, tier: str) -> Optional[np.ndarray]:
        """Cached features, or None on a miss.

        Raises:
            StaleCacheError: the file exists but was written under other weights
        """
        path = self.path(slide_id, weights_hash, tier)
        if not os.path.exists(path):
            self.misses += 1
            return None
        tensors, record = load_weights(path)
        if record.get("weights_hash") != weights_hash or record.get("slide_id") != slide_id:
            raise StaleCacheError(f"{path} was written for {record.get('slide_id')} under "
                                  f"weights {str(record.get('weights_hash'))[:12]}")
        self.hits += 1
        return tensors["features"]
