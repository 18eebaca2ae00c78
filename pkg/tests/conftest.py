"""Shared fixtures: tiny seeded models and in-memory slides."""

import numpy as np
import pytest

from litepath.core.bundle import ModelBundle
from litepath.core.encoder import EncoderConfig, VisionEncoder
from litepath.core.heads import ABMILConfig, ABMILHead, ScorerConfig, ScoringNet
from litepath.core.numerics import SeededRng
from litepath.data.slides import ArrayPatchSource, SlideRecord


TINY_ENCODER = dict(
    input_size=8,
    patch_size=4,
    in_chans=3,
    embed_dim=16,
    depth=3,
    heads=2,
    mlp_ratio=2,
    output_dim=8,
    split_after_block=1,
)


@pytest.fixture
def tiny_config():
    return EncoderConfig(**TINY_ENCODER)


@pytest.fixture
def tiny_encoder(tiny_config):
    return VisionEncoder(tiny_config, SeededRng(0))


def build_bundle(config: EncoderConfig, seed: int = 0, gated: bool = False) -> ModelBundle:
    rng = SeededRng(seed)
    encoder = VisionEncoder(config, rng.spawn(0))
    abmil = ABMILHead(
        ABMILConfig(input_dim=config.output_dim, hidden_dim=8, attn_dim=4, num_classes=2, gated=gated),
        rng.spawn(1),
    )
    scorer = ScoringNet(ScorerConfig(input_dim=2 * config.embed_dim, hidden_dim=8, attn_dim=4), rng.spawn(2))
    return ModelBundle(encoder=encoder, abmil=abmil, scorer=scorer).eval()


@pytest.fixture
def tiny_bundle(tiny_config):
    return build_bundle(tiny_config)


def make_slide(config: EncoderConfig, n: int, seed: int = 0, label: int = 0, slide_id: str = None) -> SlideRecord:
    patches = SeededRng(seed).normal((n,) + config.image_shape)
    return SlideRecord(slide_id or f"slide_{seed:03d}", ArrayPatchSource(patches), label=label)


@pytest.fixture
def slide_factory(tiny_config):
    def factory(n, seed=0, label=0, slide_id=None):
        return make_slide(tiny_config, n, seed, label, slide_id)
    return factory


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def bundle_factory(tiny_config):
    def factory(seed=0, gated=False, config=None):
        return build_bundle(config or tiny_config, seed, gated)
    return factory
