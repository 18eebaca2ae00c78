"""
Base trainer class definition for the training stages.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .optim import Adam, CosineSchedule
from ..core.layers import Module
from ..core.numerics import SeededRng
from ..utils.utils import NumericalError, ValidationError, write_jsonl


@dataclass(frozen=True)
class SupervisedConfig:
    lr: float = 2e-4
    epochs: int = 50
    weight_decay: float = 1e-5
    patience: int = 10
    temperature: Optional[float] = None

    def __post_init__(self):
        if self.temperature is not None and not self.temperature > 0:
            raise ValidationError(f"temperature must be positive, got {self.temperature}")
        if self.epochs < 0 or self.patience < 1:
            raise ValidationError("epochs must be non-negative and patience positive")

    def to_dict(self):
        return asdict(self)


class EarlyStopping:
    """Track the best validation loss and keep a copy of the best weights."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = -1
        self.best_state: Optional[Dict[str, np.ndarray]] = None
        self.bad_epochs = 0

    def update(self, epoch: int, loss: float, module: Module) -> bool:
        """Record an epoch; returns True when training should stop."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.best_state = module.state_dict()
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    def restore(self, module: Module):
        if self.best_state is not None:
            module.load_state_dict(self.best_state)


class BaseTrainer(ABC):
    """
    Base abstract class for all training stages.

    Provides the curve log, seeded streams and the divergence check.
    """

    stage = "base"

    def __init__(self, seed: int = 0, curve_path: Optional[str] = None, logger: Optional[logging.Logger] = None):
        """
        Initialize the base trainer.

        Args:
            seed: Seed for shuffling and dropout streams
            curve_path: Optional JSONL file receiving (stage, step, split, loss) records
            logger: Optional logger instance
        """
        self.seed = seed
        self.rng = SeededRng(seed)
        self.curve_path = curve_path
        self.logger = logger or logging.getLogger(__name__)
        self.history: List[Dict[str, Any]] = []

    def log_curve(self, step: int, split: str, loss: float):
        record = {"stage": self.stage, "step": int(step), "split": split, "loss": float(loss)}
        self.history.append(record)
        if self.curve_path:
            write_jsonl(self.curve_path, record)

    def check_loss(self, loss: float, step: int):
        if not np.isfinite(loss):
            raise NumericalError(f"{self.stage} training diverged at step {step} (loss {loss})")

    @abstractmethod
    def train(self, *args, **kwargs):
        pass


class SupervisedTrainer(BaseTrainer):
    """
    One item per optimiser step, epochs over a shuffled training set,
    cosine decay, and early stopping on the mean validation loss.
    """

    def __init__(self, config: SupervisedConfig, seed: int = 0, curve_path: Optional[str] = None,
                 logger: Optional[logging.Logger] = None):
        super().__init__(seed, curve_path, logger)
        self.config = config

    @abstractmethod
    def build_model(self) -> Module:
        pass

    @abstractmethod
    def train_step(self, model: Module, item, rng: SeededRng) -> Optional[float]:
        """Forward and backward on one item; gradients are accumulated on model.

        Returns None when the item carries no training signal; no optimiser
        step is taken for it.
        """
        pass

    @abstractmethod
    def validation_loss(self, model: Module, item) -> float:
        pass

    def fit(self, train_items: Sequence, val_items: Sequence) -> Module:
        if not train_items:
            raise ValidationError(f"{self.stage}: empty training set")
        model = self.build_model()
        optimizer = Adam(model.parameters(), self.config.lr, weight_decay=self.config.weight_decay)
        schedule = CosineSchedule(self.config.lr, self.config.epochs * len(train_items))
        stopper = EarlyStopping(self.config.patience)

        step = 0
        for epoch in range(self.config.epochs):
            model.train()
            order = self.rng.spawn(0, epoch).permutation(len(train_items))
            losses = []
            for i in order:
                optimizer.zero_grad()
                loss = self.train_step(model, train_items[i], self.rng.spawn(1, step))
                if loss is not None:
                    self.check_loss(loss, step)
                    optimizer.step(schedule(step))
                    losses.append(loss)
                step += 1
            if not losses:
                self.logger.warning(f"{self.stage}: no training item carries a gradient; weights left as initialised")
                break
            train_loss = float(np.mean(losses))
            self.log_curve(epoch, "train", train_loss)

            model.eval()
            if val_items:
                val_loss = float(np.mean([self.validation_loss(model, item) for item in val_items]))
            else:
                val_loss = train_loss
            self.check_loss(val_loss, step)
            self.log_curve(epoch, "val", val_loss)
            self.logger.info(f"{self.stage} epoch {epoch}: train {train_loss:.4f} val {val_loss:.4f}")

            if stopper.update(epoch, val_loss, model):
                self.logger.info(f"{self.stage}: early stop at epoch {epoch} (best epoch {stopper.best_epoch})")
                break

        stopper.restore(model)
        model.zero_grad()
        return model.eval()
