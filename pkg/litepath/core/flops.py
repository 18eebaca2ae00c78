"""
Analytic FLOPs accounting.

One FLOP is one multiply-accumulate. Normalisation, softmax and activation
functions are not counted. The two attention products (QK^T and AV) are
tallied separately and only enter the totals with count_attention_products.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .encoder import EncoderConfig
from .heads import ABMILConfig, ScorerConfig
from .selector import SelectionConfig
from ..config.constants import Constants
from ..utils.utils import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlopsBreakdown:
    patch_embed: int
    per_block: int
    attention_products: int
    pre_stage: int
    post_stage: int
    output_head: int
    scorer_per_patch: int
    abmil_per_instance: int
    abmil_per_bag_fixed: int

    @property
    def full_per_patch(self) -> int:
        return self.pre_stage + self.post_stage + self.output_head

    def abmil_per_bag(self, n: int) -> int:
        """ABMIL cost for a bag of n instances."""
        return n * self.abmil_per_instance + self.abmil_per_bag_fixed

    @property
    def asymptotic_ratio(self) -> float:
        """Limit of the relative FLOPs as the patch count grows with k fixed."""
        return (self.pre_stage + self.scorer_per_patch) / self.full_per_patch

    def to_dict(self) -> Dict[str, int]:
        record = asdict(self)
        record["full_per_patch"] = self.full_per_patch
        return record


def encoder_flops(config: EncoderConfig, scorer: Optional[ScorerConfig] = None,
                  abmil: Optional[ABMILConfig] = None,
                  count_attention_products: bool = False) -> FlopsBreakdown:
    """Per-patch cost breakdown of the split encoder and its heads.

    Missing head configs default to the standard heads sized for this encoder.
    """
    scorer = scorer or ScorerConfig(input_dim=2 * config.embed_dim)
    abmil = abmil or ABMILConfig(input_dim=config.output_dim)

    tokens = config.num_tokens
    d = config.embed_dim
    patch_embed = config.num_patches * config.in_chans * config.patch_size ** 2 * d
    # qkv (3) + output projection (1) + two MLP layers (2 * mlp_ratio)
    per_block = tokens * d * d * (4 + 2 * config.mlp_ratio)
    attention_products = 2 * tokens * tokens * d
    if count_attention_products:
        per_block += attention_products

    scorer_per_patch = (scorer.input_dim * scorer.hidden_dim
                        + scorer.hidden_dim * scorer.attn_dim
                        + scorer.attn_dim)

    branches = 2 if abmil.gated else 1
    abmil_per_instance = (abmil.input_dim * abmil.hidden_dim
                          + branches * abmil.hidden_dim * abmil.attn_dim
                          + abmil.attn_dim
                          + abmil.hidden_dim)  # attention-weighted sum
    abmil_fixed = abmil.hidden_dim * abmil.num_classes

    return FlopsBreakdown(
        patch_embed=patch_embed,
        per_block=per_block,
        attention_products=attention_products,
        pre_stage=patch_embed + config.split_after_block * per_block,
        post_stage=(config.depth - config.split_after_block) * per_block,
        output_head=d * config.output_dim,
        scorer_per_patch=scorer_per_patch,
        abmil_per_instance=abmil_per_instance,
        abmil_per_bag_fixed=abmil_fixed,
    )


def full_slide_flops(n: int, breakdown: FlopsBreakdown) -> int:
    """Conventional pipeline: every patch fully encoded, then ABMIL over all."""
    if n < 1:
        raise ValidationError("slide must hold at least one patch")
    return n * breakdown.full_per_patch + breakdown.abmil_per_bag(n)


def selective_pays_off(n: int, breakdown: FlopsBreakdown, selection: SelectionConfig) -> bool:
    """True when scoring all n patches costs less than the post-stage work it skips.

    Near saturation the scorer overhead outgrows the savings on the n - |S|
    dropped patches; the pipeline then runs the full path instead.
    """
    if not selection.scorer_needed(n):
        return True
    skipped = n - selection.selected_count(n)
    saved_per_patch = breakdown.post_stage + breakdown.output_head + breakdown.abmil_per_instance
    return n * breakdown.scorer_per_patch < skipped * saved_per_patch


def litepath_slide_flops(n: int, breakdown: FlopsBreakdown, selection: SelectionConfig) -> int:
    """Selective pipeline: pre-stage and scoring on all n, post-stage and ABMIL on |S|.

    Charged as the full pipeline when selection would not pay off.
    """
    if n < 1:
        raise ValidationError("slide must hold at least one patch")
    if not selective_pays_off(n, breakdown, selection):
        return full_slide_flops(n, breakdown)
    selected = selection.selected_count(n)
    total = n * breakdown.pre_stage
    if selection.scorer_needed(n):
        total += n * breakdown.scorer_per_patch
    total += selected * (breakdown.post_stage + breakdown.output_head)
    return total + breakdown.abmil_per_bag(selected)


def topk_slide_flops(n: int, breakdown: FlopsBreakdown, k: int) -> int:
    """Full inference for the attention, then ABMIL again over the top k."""
    return full_slide_flops(n, breakdown) + breakdown.abmil_per_bag(min(k, n))


def uniform_slide_flops(n: int, breakdown: FlopsBreakdown, k: int) -> int:
    """Full encoding and ABMIL over k uniformly sampled patches only."""
    return full_slide_flops(min(k, n), breakdown)


def relative_flops_curve(breakdown: FlopsBreakdown, selection: SelectionConfig,
                         n_values: Sequence[int]) -> List[Tuple[int, float]]:
    """(n, litepath / full) for each patch count."""
    if not n_values:
        raise ValidationError("n_values must not be empty")
    return [
        (int(n), litepath_slide_flops(n, breakdown, selection) / full_slide_flops(n, breakdown))
        for n in n_values
    ]


def competitor_reduction(breakdown: FlopsBreakdown, name: str = "virchow2") -> Dict[str, float]:
    """Fold reductions against a competitor's published per-patch FLOPs.

    Returns:
        {"encoder": competitor / full_per_patch,
         "selective": full_per_patch / (pre_stage + scorer_per_patch),
         "composite": competitor / (pre_stage + scorer_per_patch)}
    """
    if name not in Constants.COMPETITOR_FLOPS:
        raise ValidationError(f"Unknown competitor '{name}'")
    competitor = Constants.COMPETITOR_FLOPS[name]
    selective_cost = breakdown.pre_stage + breakdown.scorer_per_patch
    return {
        "encoder": competitor / breakdown.full_per_patch,
        "selective": breakdown.full_per_patch / selective_cost,
        "composite": competitor / selective_cost,
    }


def parameter_count(config: EncoderConfig) -> int:
    """Trainable tensors of the encoder, head included."""
    d = config.embed_dim
    hidden = d * config.mlp_ratio
    patch_embed = config.in_chans * config.patch_size ** 2 * d + d
    per_block = (
        2 * 2 * d                   # two layer norms
        + d * 3 * d + 3 * d         # qkv
        + d * d + d                 # attention projection
        + d * hidden + hidden       # fc1
        + hidden * d + d            # fc2
    )
    return (patch_embed + d + config.num_tokens * d + config.depth * per_block
            + 2 * d + d * config.output_dim + config.output_dim)
