"""
Score matching: train the scoring network to reproduce ABMIL attention
rankings from shallow features.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from .base_trainer import SupervisedConfig, SupervisedTrainer
from ..core.heads import ScorerConfig, ScoringNet
from ..core.numerics import SeededRng, log_softmax, softmax
from ..utils.utils import ValidationError, check_finite

logger = logging.getLogger(__name__)

# (concat shallow features (n, 2D), raw ABMIL attention (n,))
ScoreItem = Tuple[np.ndarray, np.ndarray]


def score_matching_loss(true_scores: np.ndarray, predicted: np.ndarray,
                        temperature: float) -> Tuple[float, np.ndarray]:
    """Soft cross-entropy -sum p log p_hat with p = softmax(A / t), p_hat = softmax(A_hat / t).

    Returns:
        (loss, gradient with respect to predicted)
    """
    true_scores = check_finite(np.asarray(true_scores, dtype=np.float64), "attention targets")
    predicted = check_finite(np.asarray(predicted, dtype=np.float64), "predicted scores")
    if true_scores.shape != predicted.shape or true_scores.ndim != 1 or true_scores.size < 1:
        raise ValidationError(f"score vectors must be 1-D of equal length, got {true_scores.shape} and {predicted.shape}")
    p = softmax(true_scores, temperature)
    log_p_hat = log_softmax(predicted, temperature)
    loss = float(-np.sum(p * log_p_hat))
    grad = (np.exp(log_p_hat) - p) / temperature
    return loss, grad


class ScorerTrainer(SupervisedTrainer):
    """One slide (one attention distribution) per step."""

    stage = "scorer"

    def __init__(self, model_config: ScorerConfig, config: SupervisedConfig, seed: int = 0,
                 curve_path: Optional[str] = None, logger: Optional[logging.Logger] = None):
        if config.temperature is None:
            raise ValidationError("score matching needs a temperature")
        super().__init__(config, seed, curve_path, logger)
        self.model_config = model_config

    def build_model(self) -> ScoringNet:
        return ScoringNet(self.model_config, self.rng.spawn(2))

    def train_step(self, model: ScoringNet, item: ScoreItem, rng: SeededRng) -> Optional[float]:
        features, targets = item
        if len(targets) == 1:
            self.logger.debug("single-patch slide contributes no gradient")
            return None
        predicted, cache = model.forward_train(features, rng)
        loss, grad = score_matching_loss(targets, predicted, self.config.temperature)
        model.backward(grad, cache)
        return loss

    def validation_loss(self, model: ScoringNet, item: ScoreItem) -> float:
        features, targets = item
        return score_matching_loss(targets, model.forward(features), self.config.temperature)[0]

    def train(self, train_items: Sequence[ScoreItem], val_items: Sequence[ScoreItem]) -> ScoringNet:
        self.logger.info(f"Training scorer on {len(train_items)} slides ({len(val_items)} validation)")
        return self.fit(list(train_items), list(val_items))


def train_scorer(train_items: Sequence[ScoreItem], val_items: Sequence[ScoreItem], model_config: ScorerConfig,
                 config: SupervisedConfig, seed: int = 0, curve_path: Optional[str] = None) -> ScoringNet:
    return ScorerTrainer(model_config, config, seed, curve_path).train(train_items, val_items)
