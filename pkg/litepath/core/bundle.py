"""
ModelBundle: the split encoder together with its heads, saved as one LPW1 file.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .encoder import EncoderConfig, VisionEncoder
from .heads import ABMILConfig, ABMILHead, ProjectionHead, ScorerConfig, ScoringNet
from ..data.weights_io import load_weights, save_weights
from ..utils.utils import Utils, ValidationError, WeightsFormatError

logger = logging.getLogger(__name__)


@dataclass
class ModelBundle:
    encoder: VisionEncoder
    abmil: Optional[ABMILHead] = None
    scorer: Optional[ScoringNet] = None
    projection_heads: List[ProjectionHead] = field(default_factory=list)

    @property
    def encoder_config(self) -> EncoderConfig:
        return self.encoder.config

    def _components(self):
        yield "encoder", self.encoder
        if self.abmil is not None:
            yield "abmil", self.abmil
        if self.scorer is not None:
            yield "scorer", self.scorer
        for i, head in enumerate(self.projection_heads):
            yield f"proj.{i}", head

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {}
        for prefix, module in self._components():
            for name, value in module.state_dict().items():
                state[f"{prefix}.{name}"] = value
        return state

    def config_record(self) -> Dict[str, Any]:
        return {
            "encoder": self.encoder.config.to_dict(),
            "abmil": self.abmil.config.to_dict() if self.abmil is not None else None,
            "scorer": self.scorer.config.to_dict() if self.scorer is not None else None,
            "projection_dims": [head.out_dim for head in self.projection_heads],
        }

    @property
    def weights_hash(self) -> str:
        """Hash of every tensor in the bundle."""
        return Utils.hash_arrays(sorted(self.state_dict().items()))

    @property
    def encoder_hash(self) -> str:
        """Hash of the encoder tensors only; keys the feature cache."""
        return Utils.hash_arrays(sorted(self.encoder.state_dict().items()))

    def require(self, *components: str):
        """Raise ValidationError unless every named component is present."""
        missing = [name for name in components if getattr(self, name) is None]
        if missing:
            raise ValidationError(f"model bundle is missing: {', '.join(missing)}")

    def eval(self) -> "ModelBundle":
        for _, module in self._components():
            module.eval()
        return self

    def astype(self, dtype) -> "ModelBundle":
        """Copy of the bundle with every tensor cast to dtype."""
        return ModelBundle(
            encoder=self.encoder.astype(dtype),
            abmil=self.abmil.astype(dtype) if self.abmil is not None else None,
            scorer=self.scorer.astype(dtype) if self.scorer is not None else None,
            projection_heads=[head.astype(dtype) for head in self.projection_heads],
        )

    def save(self, path: str) -> str:
        save_weights(path, self.state_dict(), self.config_record())
        logger.info(f"Saved model bundle to {path} (weights {self.weights_hash[:12]})")
        return path

    @classmethod
    def load(cls, path: str) -> "ModelBundle":
        tensors, record = load_weights(path)
        if "encoder" not in record:
            raise WeightsFormatError(f"{path} does not hold a model bundle")

        encoder = VisionEncoder(EncoderConfig(**record["encoder"]))
        abmil = ABMILHead(ABMILConfig(**record["abmil"])) if record.get("abmil") else None
        scorer = ScoringNet(ScorerConfig(**record["scorer"])) if record.get("scorer") else None
        heads = [ProjectionHead(encoder.config.output_dim, dim) for dim in record.get("projection_dims", [])]
        bundle = cls(encoder=encoder, abmil=abmil, scorer=scorer, projection_heads=heads)

        for prefix, module in bundle._components():
            lead = prefix + "."
            module.load_state_dict({
                name[len(lead):]: value for name, value in tensors.items() if name.startswith(lead)
            })
        return bundle.eval()
