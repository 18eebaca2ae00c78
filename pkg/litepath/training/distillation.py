"""
Multi-teacher l1 feature distillation into the student encoder.
"""

import logging
from dataclasses import asdict, dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .base_trainer import BaseTrainer
from .optim import AdamW, CosineSchedule, clip_grad_norm
from ..config.constants import Constants
from ..core.encoder import EncoderConfig, VisionEncoder, patchify
from ..core.heads import ProjectionHead
from ..core.numerics import SeededRng
from ..utils.utils import NumericalError, ShapeError, ValidationError

TEACHER_KINDS = ("encoder", "linear")


@dataclass(frozen=True)
class DistillConfig:
    teacher_weights: Tuple[float, ...] = tuple(Constants.TEACHER_WEIGHTS)
    teacher_dims: Tuple[int, ...] = tuple(Constants.TEACHER_DIMS)
    teacher_kind: str = "encoder"
    teacher_embed_dim: int = 384
    teacher_depth: int = 2
    teacher_heads: int = 6
    steps: int = 100000
    batch_size: int = 2048
    dataset_size: int = 190212668
    lr: float = 3e-3
    min_lr: float = 1e-5
    warmup_steps: int = 5000
    warmup_lr_init: float = 1e-6
    weight_decay: float = 0.05
    grad_clip: float = 1.0

    def __post_init__(self):
        weights = self.teacher_weights
        if len(weights) != 3 or any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise ValidationError(f"teacher weights must be three non-negative reals summing to 1, got {weights}")
        if len(self.teacher_dims) != len(weights):
            raise ValidationError("one teacher dim per teacher weight is required")
        if self.teacher_kind not in TEACHER_KINDS:
            raise ValidationError(f"teacher kind must be one of {TEACHER_KINDS}")
        if self.steps < 0 or self.batch_size < 1:
            raise ValidationError("steps must be non-negative and batch_size positive")

    def to_dict(self):
        return asdict(self)


class SyntheticTeacher:
    """Frozen stand-in for a pretrained foundation model.

    kind "encoder" is a randomly initialised encoder with its own output dim;
    kind "linear" is a fixed linear map of the mean patch vector.
    """

    def __init__(self, kind: str, student_config: EncoderConfig, output_dim: int, rng: SeededRng,
                 embed_dim: int = 384, depth: int = 2, heads: int = 6):
        if kind not in TEACHER_KINDS:
            raise ValidationError(f"Unknown teacher kind '{kind}'")
        self.kind = kind
        self.output_dim = output_dim
        self.patch_size = student_config.patch_size
        if kind == "encoder":
            config = replace(
                student_config,
                embed_dim=embed_dim,
                depth=depth,
                heads=heads,
                output_dim=output_dim,
                split_after_block=1,
            )
            self.encoder = VisionEncoder(config, rng).freeze().eval()
        else:
            in_dim = student_config.in_chans * student_config.patch_size ** 2
            self.matrix = rng.normal((in_dim, output_dim), scale=1.0 / np.sqrt(in_dim))

    def embed(self, images: np.ndarray) -> np.ndarray:
        if self.kind == "encoder":
            return self.encoder.full_encode(images)
        return patchify(images, self.patch_size).mean(axis=1) @ self.matrix


def distill_loss_and_grad(student_emb: np.ndarray, teacher_embs: Sequence[np.ndarray],
                          heads: Sequence[ProjectionHead], weights: Sequence[float]):
    """Weighted l1 distillation loss with its gradients.

    l1 is the mean absolute error over embedding coordinates (and the batch).

    Returns:
        (loss, dloss/dstudent_emb, per-head caches for ProjectionHead.backward, per-head grads)
    """
    if not (len(teacher_embs) == len(heads) == len(weights)):
        raise ValidationError("need one head and one weight per teacher")
    student_emb = np.atleast_2d(student_emb)
    total = 0.0
    d_student = np.zeros_like(student_emb)
    head_grads = []
    for target, head, weight in zip(teacher_embs, heads, weights):
        target = np.atleast_2d(target)
        projected, cache = head.forward_train(student_emb)
        if projected.shape != target.shape:
            raise ShapeError(f"projection {projected.shape} does not match teacher embedding {target.shape}")
        diff = projected - target
        total += weight * float(np.mean(np.abs(diff)))
        grad = weight * np.sign(diff) / diff.size
        head_grads.append((cache, grad))
        d_student += grad @ head.weight.value.T
    return total, d_student, head_grads


def distill_loss(student_emb: np.ndarray, teacher_embs: Sequence[np.ndarray],
                 heads: Sequence[ProjectionHead], config: DistillConfig) -> float:
    """sum_t w_t * mean |head_t(student) - teacher_t|."""
    return distill_loss_and_grad(student_emb, teacher_embs, heads, config.teacher_weights)[0]


class DistillationTrainer(BaseTrainer):
    """Stage-1 trainer: student encoder and projection heads under AdamW."""

    stage = "distill"

    def __init__(self, config: DistillConfig, seed: int = 0, curve_path: Optional[str] = None,
                 logger: Optional[logging.Logger] = None):
        super().__init__(seed, curve_path, logger)
        self.config = config

    def build_teachers(self, student_config: EncoderConfig) -> List[SyntheticTeacher]:
        return [
            SyntheticTeacher(
                self.config.teacher_kind, student_config, dim, self.rng.spawn(10, t),
                self.config.teacher_embed_dim, self.config.teacher_depth, self.config.teacher_heads,
            )
            for t, dim in enumerate(self.config.teacher_dims)
        ]

    def build_heads(self, student_config: EncoderConfig) -> List[ProjectionHead]:
        return [
            ProjectionHead(student_config.output_dim, dim, self.rng.spawn(11, t))
            for t, dim in enumerate(self.config.teacher_dims)
        ]

    def train(self, student: VisionEncoder, dataset: np.ndarray,
              teachers: Optional[List[SyntheticTeacher]] = None,
              heads: Optional[List[ProjectionHead]] = None) -> Tuple[VisionEncoder, List[ProjectionHead]]:
        """Distil teachers into student on the given patch images (trained in place).

        Returns:
            (student, projection heads)
        """
        cfg = self.config
        if len(dataset) < 1:
            raise ValidationError("distillation dataset is empty")
        teachers = teachers or self.build_teachers(student.config)
        heads = heads or self.build_heads(student.config)

        if cfg.steps == 0:
            return student, heads

        targets = [teacher.embed(dataset) for teacher in teachers]
        params = student.parameters(trainable_only=True)
        for head in heads:
            params.extend(head.parameters(trainable_only=True))
        optimizer = AdamW(params, cfg.lr, weight_decay=cfg.weight_decay)
        schedule = CosineSchedule(cfg.lr, cfg.steps, cfg.warmup_steps, cfg.warmup_lr_init, cfg.min_lr)
        batch_size = min(cfg.batch_size, len(dataset))

        student.train()
        self.logger.info(f"Distilling {len(teachers)} teachers for {cfg.steps} steps (batch {batch_size})")
        for step in range(cfg.steps):
            batch = self.rng.spawn(0, step).choice(len(dataset), batch_size, replace=False)
            optimizer.zero_grad()
            emb, cache = student.forward_train(dataset[batch])
            loss, d_emb, head_grads = distill_loss_and_grad(
                emb, [t[batch] for t in targets], heads, cfg.teacher_weights
            )
            if not np.isfinite(loss):
                raise NumericalError(f"distillation diverged at step {step}: loss {loss}, lr {schedule(step):.3g}")
            for head, (head_cache, grad) in zip(heads, head_grads):
                head.backward(grad, head_cache)
            student.backward(d_emb, cache)
            norm = clip_grad_norm(params, cfg.grad_clip)
            optimizer.step(schedule(step))

            self.log_curve(step, "train", loss)
            if step % max(1, cfg.steps // 10) == 0 or step == cfg.steps - 1:
                self.logger.info(f"distill step {step}: loss {loss:.5f} grad-norm {norm:.3f}")

        student.zero_grad()
        return student.eval(), heads


def run_distillation(student: VisionEncoder, dataset: np.ndarray, config: DistillConfig, seed: int = 0,
                     curve_path: Optional[str] = None) -> Tuple[VisionEncoder, List[ProjectionHead]]:
    return DistillationTrainer(config, seed, curve_path).train(student, dataset)
