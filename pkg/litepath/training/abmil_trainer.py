"""
ABMIL supervised training on bags of patch embeddings.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from .base_trainer import SupervisedConfig, SupervisedTrainer
from ..core.heads import ABMILConfig, ABMILHead
from ..core.numerics import SeededRng
from ..utils.utils import ValidationError

Bag = Tuple[np.ndarray, int]


class ABMILTrainer(SupervisedTrainer):
    """Cross-entropy on one slide per step; returns the best-validation head."""

    stage = "abmil"

    def __init__(self, model_config: ABMILConfig, config: SupervisedConfig, seed: int = 0,
                 curve_path: Optional[str] = None, logger: Optional[logging.Logger] = None):
        super().__init__(config, seed, curve_path, logger)
        self.model_config = model_config

    def build_model(self) -> ABMILHead:
        return ABMILHead(self.model_config, self.rng.spawn(2))

    def train_step(self, model: ABMILHead, item: Bag, rng: SeededRng) -> float:
        bag, label = item
        return model.loss_and_backward(bag, label, rng)

    def validation_loss(self, model: ABMILHead, item: Bag) -> float:
        bag, label = item
        return model.loss(bag, label)

    def train(self, train_bags: Sequence[Bag], val_bags: Sequence[Bag]) -> ABMILHead:
        classes = {int(label) for _, label in train_bags}
        if len(classes) < 2:
            raise ValidationError(f"training set needs at least two classes, found {sorted(classes)}")
        self.logger.info(f"Training ABMIL on {len(train_bags)} bags ({len(val_bags)} validation)")
        return self.fit(list(train_bags), list(val_bags))


def train_abmil(train_bags: Sequence[Bag], val_bags: Sequence[Bag], model_config: ABMILConfig,
                config: SupervisedConfig, seed: int = 0, curve_path: Optional[str] = None) -> ABMILHead:
    return ABMILTrainer(model_config, config, seed, curve_path).train(train_bags, val_bags)
