import json

import numpy as np
import pytest

from litepath.core.encoder import VisionEncoder
from litepath.core.heads import ABMILConfig, ABMILHead, ProjectionHead, ScorerConfig, ScoringNet
from litepath.core.layers import Parameter
from litepath.core.metrics import macro_auc
from litepath.core.numerics import SeededRng, grad_check, softmax
from litepath.training.abmil_trainer import ABMILTrainer
from litepath.training.base_trainer import EarlyStopping, SupervisedConfig
from litepath.training.distillation import DistillConfig, DistillationTrainer, distill_loss_and_grad
from litepath.training.optim import Adam, AdamW, CosineSchedule, clip_grad_norm
from litepath.training.scorer_trainer import ScorerTrainer, score_matching_loss
from litepath.utils.utils import NumericalError, ValidationError


def test_adam_minimises_a_quadratic():
    p = Parameter(np.array([3.0, -2.0]))
    optimizer = Adam([p], lr=0.05)
    for _ in range(500):
        optimizer.zero_grad()
        p.grad += 2 * p.value
        optimizer.step()
    np.testing.assert_allclose(p.value, 0.0, atol=5e-2)


@pytest.mark.parametrize("seed", range(10))
def test_small_adam_step_matches_directional_derivative(seed):
    rng = SeededRng(seed)
    head = ABMILHead(ABMILConfig(input_dim=6, hidden_dim=5, attn_dim=4, num_classes=3), rng.spawn(0)).eval()
    bag = rng.spawn(1).normal((7, 6))
    label = seed % 3
    head.zero_grad()
    before = head.loss_and_backward(bag, label)
    params = head.parameters()
    grads = [p.grad.copy() for p in params]
    start = [p.value.copy() for p in params]
    Adam(params, lr=1e-6).step()
    predicted = sum(float(np.sum(g * (p.value - s))) for g, p, s in zip(grads, params, start))
    assert predicted < 0
    assert head.loss(bag, label) - before == pytest.approx(predicted, rel=1e-2)


def test_adamw_decay_is_decoupled():
    p = Parameter(np.array([1.0]))
    optimizer = AdamW([p], lr=0.1, weight_decay=0.5)
    optimizer.step()
    # Zero gradient: only the decay term moves the value.
    assert p.value[0] == pytest.approx(0.95)
    frozen = Parameter(np.array([1.0]), trainable=False)
    assert Adam([frozen], lr=0.1).params == []


def test_cosine_schedule():
    schedule = CosineSchedule(1e-3, total_steps=110, warmup_steps=10, warmup_lr_init=1e-6, min_lr=1e-5)
    assert schedule(0) == pytest.approx(1e-6)
    assert schedule(5) == pytest.approx(1e-6 + (1e-3 - 1e-6) * 0.5)
    assert schedule(10) == pytest.approx(1e-3)
    assert schedule(60) == pytest.approx(1e-5 + 0.5 * (1e-3 - 1e-5))
    assert schedule(110) == pytest.approx(1e-5)
    assert schedule(500) == pytest.approx(1e-5)
    lrs = [schedule(s) for s in range(10, 111)]
    assert lrs == sorted(lrs, reverse=True)


def test_clip_grad_norm():
    a = Parameter(np.zeros(2), grad=np.array([3.0, 0.0]))
    b = Parameter(np.zeros(1), grad=np.array([4.0]))
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(np.concatenate([a.grad, b.grad]), [0.6, 0.0, 0.8], rtol=1e-9)
    assert clip_grad_norm([a, b], 10.0) == pytest.approx(1.0)


def test_early_stopping_restores_best_weights():
    module = ProjectionHead(2, 2, SeededRng(0))
    stopper = EarlyStopping(patience=2)
    best = module.state_dict()
    assert not stopper.update(0, 1.0, module)
    module.weight.value = module.weight.value + 1.0
    assert not stopper.update(1, 1.5, module)
    assert stopper.update(2, 1.2, module)
    stopper.restore(module)
    np.testing.assert_array_equal(module.weight.value, best["weight"])
    assert stopper.best_epoch == 0


@pytest.mark.parametrize("overrides", [dict(temperature=0.0), dict(epochs=-1), dict(patience=0)])
def test_supervised_config_validation(overrides):
    with pytest.raises(ValidationError):
        SupervisedConfig(**overrides)


def tiny_distill_config(**overrides):
    values = dict(teacher_dims=(6, 4, 4), teacher_kind="linear", steps=80, batch_size=16, dataset_size=32,
                  lr=5e-3, min_lr=1e-4, warmup_steps=0, weight_decay=0.0, grad_clip=1.0)
    values.update(overrides)
    return DistillConfig(**values)


def test_distillation_with_zero_steps_leaves_student_untouched(tiny_config):
    student = VisionEncoder(tiny_config, SeededRng(1))
    before = student.state_dict()
    dataset = SeededRng(2).normal((8,) + tiny_config.image_shape)
    trained, heads = DistillationTrainer(tiny_distill_config(steps=0)).train(student, dataset)
    assert len(heads) == 3
    for name, value in trained.state_dict().items():
        np.testing.assert_array_equal(value, before[name])


def test_distillation_reduces_loss(tiny_config, tmp_path):
    student = VisionEncoder(tiny_config, SeededRng(1))
    dataset = SeededRng(2).normal((32,) + tiny_config.image_shape)
    curve = str(tmp_path / "curve.jsonl")
    trainer = DistillationTrainer(tiny_distill_config(), seed=3, curve_path=curve)
    trainer.train(student, dataset)
    losses = [record["loss"] for record in trainer.history]
    assert len(losses) == 80
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
    with open(curve) as f:
        first = json.loads(f.readline())
    assert first["stage"] == "distill" and first["split"] == "train"
    assert not student.training


def test_distillation_gradient_matches_finite_differences():
    rng = SeededRng(4)
    heads = [ProjectionHead(5, d, rng.spawn(d)) for d in (3, 4)]
    for head in heads:
        head.weight.value = head.weight.value * 30
    targets = [rng.spawn(10 + i).normal((2, d)) for i, d in enumerate((3, 4))]

    def fn(emb):
        loss, grad, _ = distill_loss_and_grad(emb, targets, heads, (0.6, 0.4))
        return loss, grad

    assert grad_check(fn, rng.spawn(20).normal((2, 5))) < 1e-4


def test_distill_config_validation():
    with pytest.raises(ValidationError):
        tiny_distill_config(teacher_weights=(0.5, 0.5, 0.5))
    with pytest.raises(ValidationError):
        tiny_distill_config(teacher_dims=(6, 4))
    with pytest.raises(ValidationError):
        tiny_distill_config(teacher_kind="oracle")


def test_distillation_divergence_is_reported(tiny_config):
    student = VisionEncoder(tiny_config, SeededRng(1))
    dataset = SeededRng(2).normal((8,) + tiny_config.image_shape)
    dataset[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericalError):
        DistillationTrainer(tiny_distill_config(steps=2, batch_size=8)).train(student, dataset)


def separable_bags(n, seed):
    rng = SeededRng(seed)
    bags = []
    for i in range(n):
        label = i % 2
        bag = rng.spawn(i).normal((5, 6))
        bag[:, 0] += 2.0 if label else -2.0
        bags.append((bag, label))
    return bags


def abmil_config():
    return ABMILConfig(input_dim=6, hidden_dim=8, attn_dim=4, num_classes=2, dropout=0.0)


def test_abmil_trainer_fits_separable_bags():
    config = SupervisedConfig(lr=1e-2, epochs=15, weight_decay=0.0, patience=5)
    trainer = ABMILTrainer(abmil_config(), config, seed=1)
    head = trainer.train(separable_bags(20, 1), separable_bags(6, 2))
    test = separable_bags(20, 3)
    probs = np.vstack([softmax(head.forward(bag)[0]) for bag, _ in test])
    assert macro_auc(np.array([label for _, label in test]), probs) >= 0.9
    train_losses = [r["loss"] for r in trainer.history if r["split"] == "train"]
    assert train_losses[-1] < train_losses[0]
    assert not head.training


def test_abmil_trainer_is_deterministic():
    config = SupervisedConfig(lr=1e-2, epochs=3, weight_decay=0.0, patience=5)
    a = ABMILTrainer(abmil_config(), config, seed=1).train(separable_bags(8, 1), [])
    b = ABMILTrainer(abmil_config(), config, seed=1).train(separable_bags(8, 1), [])
    for name, value in a.state_dict().items():
        np.testing.assert_array_equal(value, b.state_dict()[name])


def test_abmil_trainer_needs_two_classes():
    bags = [(bag, 1) for bag, _ in separable_bags(4, 1)]
    with pytest.raises(ValidationError):
        ABMILTrainer(abmil_config(), SupervisedConfig(epochs=1)).train(bags, [])


def score_items(n, seed):
    rng = SeededRng(seed)
    direction = SeededRng(99).normal(4)
    items = []
    for i in range(n):
        features = rng.spawn(i).normal((12, 4))
        items.append((features, features @ direction))
    return items


def test_scorer_trainer_learns_attention_ranking():
    model_config = ScorerConfig(input_dim=4, hidden_dim=8, attn_dim=4, dropout=0.0)
    config = SupervisedConfig(lr=1e-2, epochs=20, weight_decay=0.0, patience=5, temperature=0.7)
    val = score_items(5, 2)
    initial = ScoringNet(model_config, SeededRng(1).spawn(2)).eval()

    def mean_loss(model):
        return np.mean([score_matching_loss(t, model.forward(f), 0.7)[0] for f, t in val])

    trained = ScorerTrainer(model_config, config, seed=1).train(score_items(15, 1), val)
    assert mean_loss(trained) < mean_loss(initial)


def test_scorer_trainer_needs_temperature():
    with pytest.raises(ValidationError):
        ScorerTrainer(ScorerConfig(input_dim=4), SupervisedConfig())


def test_single_patch_slide_contributes_nothing():
    config = SupervisedConfig(temperature=1.0)
    trainer = ScorerTrainer(ScorerConfig(input_dim=4, hidden_dim=8, attn_dim=4), config)
    model = trainer.build_model()
    assert trainer.train_step(model, (np.ones((1, 4)), np.zeros(1)), SeededRng(0)) is None
    assert all(not p.grad.any() for p in model.parameters())


def test_single_patch_slides_never_move_the_weights():
    config = SupervisedConfig(lr=1e-2, epochs=3, weight_decay=0.1, temperature=1.0)
    model_config = ScorerConfig(input_dim=4, hidden_dim=8, attn_dim=4)
    items = [(SeededRng(i).normal((1, 4)), np.array([float(i)])) for i in range(5)]
    trained = ScorerTrainer(model_config, config, seed=3).train(items, items[:2])
    initial = ScorerTrainer(model_config, config, seed=3).build_model()
    for name, value in initial.state_dict().items():
        np.testing.assert_array_equal(trained.state_dict()[name], value)
