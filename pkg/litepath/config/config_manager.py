"""
Configuration management for the LitePath toolkit.
"""

import configparser
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from .constants import Constants
from ..core.encoder import EncoderConfig
from ..core.heads import ABMILConfig, ScorerConfig
from ..core.selector import SelectionConfig
from ..data.synthetic import SyntheticCohortSpec
from ..services.benchmark import BenchSpec
from ..training.distillation import DistillConfig
from ..training.base_trainer import SupervisedConfig
from ..utils.utils import Utils, ValidationError, validate_config

logger = logging.getLogger(__name__)


class ConfigManager:
    """Manage run configuration settings stored as INI sections."""

    BUILTIN = ("default", "desk")

    def __init__(self, config_file: Optional[str] = None, logger: Optional[logging.Logger] = None):
        """Initialize the configuration manager.

        Args:
            config_file: Path to an INI file, or the name of a built-in
                configuration ("default" or "desk"). None means "default".
            logger: Optional logger instance
        """
        self.logger = logger or logging.getLogger(__name__)
        self.config_file = config_file or "default"
        self.config = configparser.ConfigParser()

        if self.config_file in self.BUILTIN:
            self._load_builtin(self.config_file)
        elif os.path.exists(self.config_file):
            self._load_file(self.config_file)
        else:
            raise ValidationError(f"Configuration file not found: {self.config_file}")

    def _load_builtin(self, name: str):
        """Load one of the built-in configurations."""
        self.config.read_dict(Constants.DEFAULT_CONFIG)
        if name == "desk":
            self.config.read_dict(Constants.DESK_OVERRIDES)
        self.logger.debug(f"Loaded built-in configuration '{name}'")

    def _load_file(self, path: str):
        """Load a file on top of the built-in preset it names."""
        peek = configparser.ConfigParser()
        peek.read(path, encoding='utf-8')
        preset = peek.get('run', 'preset', fallback='default')
        if preset not in self.BUILTIN:
            raise ValidationError(f"Unknown preset '{preset}' in {path}")
        self._load_builtin(preset)
        self.config.read(path, encoding='utf-8')
        self.logger.info(f"Loaded configuration from {path} (preset {preset})")

    def get(self, section, option, fallback=None):
        """Get a configuration value as string."""
        try:
            return self.config.get(section, option, fallback=fallback)
        except (configparser.NoSectionError, configparser.NoOptionError) as e:
            self.logger.warning(f"Configuration error: {e}")
            return fallback

    def get_int(self, section, option, fallback=None):
        """Get a configuration value as integer."""
        try:
            return self.config.getint(section, option, fallback=fallback)
        except ValueError as e:
            raise ValidationError(f"[{section}] {option}: {e}")

    def get_float(self, section, option, fallback=None):
        """Get a configuration value as float."""
        try:
            return self.config.getfloat(section, option, fallback=fallback)
        except ValueError as e:
            raise ValidationError(f"[{section}] {option}: {e}")

    def get_boolean(self, section, option, fallback=None):
        """Get a configuration value as boolean."""
        try:
            return self.config.getboolean(section, option, fallback=fallback)
        except ValueError as e:
            raise ValidationError(f"[{section}] {option}: {e}")

    def get_list(self, section, option, fallback=None, delimiter=','):
        """Get a configuration value as list."""
        value = self.config.get(section, option, fallback=None)
        if value is None:
            return [] if fallback is None else fallback
        return [item.strip() for item in value.split(delimiter) if item.strip()]

    def get_int_list(self, section, option, fallback=None):
        """Get a configuration value as a list of integers."""
        try:
            return [int(item) for item in self.get_list(section, option, fallback)]
        except ValueError as e:
            raise ValidationError(f"[{section}] {option}: {e}")

    def get_float_list(self, section, option, fallback=None):
        """Get a configuration value as a list of floats."""
        try:
            return [float(item) for item in self.get_list(section, option, fallback)]
        except ValueError as e:
            raise ValidationError(f"[{section}] {option}: {e}")

    def set(self, section, option, value):
        """Set a configuration value."""
        if not self.config.has_section(section):
            self.config.add_section(section)
        self.config.set(section, option, str(value))

    def save(self, path: str):
        """Save the configuration to file."""
        with open(path, 'w', encoding='utf-8') as file:
            self.config.write(file)

    def build_run_config(self, seed: Optional[int] = None) -> "RunConfig":
        """Assemble a typed RunConfig from the loaded sections.

        Args:
            seed: Optional seed overriding [run] seed

        Returns:
            RunConfig
        """
        run_seed = self.get_int('run', 'seed', 0) if seed is None else int(seed)

        encoder = EncoderConfig(
            input_size=self.get_int('encoder', 'input_size'),
            patch_size=self.get_int('encoder', 'patch_size'),
            in_chans=self.get_int('encoder', 'in_chans'),
            embed_dim=self.get_int('encoder', 'embed_dim'),
            depth=self.get_int('encoder', 'depth'),
            heads=self.get_int('encoder', 'heads'),
            mlp_ratio=self.get_int('encoder', 'mlp_ratio'),
            output_dim=self.get_int('encoder', 'output_dim'),
            split_after_block=self.get_int('encoder', 'split_after_block'),
        )

        distill = DistillConfig(
            teacher_weights=tuple(self.get_float_list('teachers', 'weights')),
            teacher_dims=tuple(self.get_int_list('teachers', 'dims')),
            teacher_kind=self.get('teachers', 'kind', 'encoder'),
            teacher_embed_dim=self.get_int('teachers', 'embed_dim'),
            teacher_depth=self.get_int('teachers', 'depth'),
            teacher_heads=self.get_int('teachers', 'heads'),
            steps=self.get_int('distill', 'steps'),
            batch_size=self.get_int('distill', 'batch_size'),
            dataset_size=self.get_int('distill', 'dataset_size'),
            lr=self.get_float('distill', 'lr'),
            min_lr=self.get_float('distill', 'min_lr'),
            warmup_steps=self.get_int('distill', 'warmup_steps'),
            warmup_lr_init=self.get_float('distill', 'warmup_lr_init'),
            weight_decay=self.get_float('distill', 'weight_decay'),
            grad_clip=self.get_float('distill', 'grad_clip'),
        )

        abmil = ABMILConfig(
            input_dim=encoder.output_dim,
            hidden_dim=self.get_int('mil', 'hidden_dim'),
            attn_dim=self.get_int('mil', 'attn_dim'),
            num_classes=self.get_int('mil', 'num_classes'),
            dropout=self.get_float('mil', 'dropout'),
            gated=self.get_boolean('mil', 'gated'),
        )
        mil_training = SupervisedConfig(
            lr=self.get_float('mil', 'lr'),
            epochs=self.get_int('mil', 'epochs'),
            weight_decay=self.get_float('mil', 'weight_decay'),
            patience=self.get_int('mil', 'patience'),
        )

        scorer = ScorerConfig(
            input_dim=2 * encoder.embed_dim,
            hidden_dim=self.get_int('aps', 'hidden_dim'),
            attn_dim=self.get_int('aps', 'attn_dim'),
            dropout=self.get_float('aps', 'dropout'),
        )
        aps_training = SupervisedConfig(
            lr=self.get_float('aps', 'lr'),
            epochs=self.get_int('aps', 'epochs'),
            weight_decay=self.get_float('aps', 'weight_decay'),
            patience=self.get_int('aps', 'patience'),
            temperature=self.get_float('aps', 'temperature'),
        )

        selection = SelectionConfig(
            k_u=self.get_int('selection', 'k_u'),
            k_a=self.get_int('selection', 'k_a'),
        )
        grid = [
            SelectionConfig(k_u, k_a)
            for k_u in self.get_int_list('selection', 'grid_ku')
            for k_a in self.get_int_list('selection', 'grid_ka')
            if k_u + k_a >= 1
        ]

        cohort = SyntheticCohortSpec(
            n_slides=self.get_int('cohort', 'n_slides'),
            min_patches=self.get_int('cohort', 'min_patches'),
            max_patches=self.get_int('cohort', 'max_patches'),
            n_classes=self.get_int('cohort', 'n_classes'),
            lesion_fraction=self.get_float('cohort', 'lesion_fraction'),
            signal_strength=self.get_float('cohort', 'signal_strength'),
            slides_per_case=self.get_int('cohort', 'slides_per_case'),
            subspace_fraction=self.get_float('cohort', 'subspace_fraction'),
            image_size=encoder.input_size,
            in_chans=encoder.in_chans,
            seed=run_seed,
        )

        bench = BenchSpec(
            n_patches=self.get_int('bench', 'n_patches'),
            repetitions=self.get_int('bench', 'repetitions'),
            warmup=self.get_int('bench', 'warmup'),
            selection=SelectionConfig(self.get_int('bench', 'k_u'), self.get_int('bench', 'k_a')),
            precision=self.get('bench', 'precision', 'float32'),
            chunk_size=self.get_int('bench', 'chunk_size'),
            min_duration=self.get_float('bench', 'min_duration'),
        )

        output_dir = self.get('run', 'output_dir', Constants.DEFAULT_OUTPUT_DIR)
        cache_dir = self.get('pipeline', 'cache_dir', '') or os.path.join(output_dir, Constants.CACHE_SUBDIR)

        run_config = RunConfig(
            preset=self.get('run', 'preset', 'default'),
            seed=run_seed,
            output_dir=output_dir,
            workers=self.get_int('run', 'workers', 1),
            encoder=encoder,
            distill=distill,
            abmil=abmil,
            mil_training=mil_training,
            scorer=scorer,
            aps_training=aps_training,
            selection=selection,
            grid=grid,
            cohort=cohort,
            chunk_size=self.get_int('pipeline', 'chunk_size'),
            cache_dir=cache_dir,
            bench=bench,
            reference_model=self.get('report', 'reference_model', 'full'),
            curve_points=self.get_int_list('report', 'curve_points'),
        )

        errors = validate_config(run_config.to_dict())
        if errors:
            raise ValidationError(f"Invalid configuration: {'; '.join(errors)}")
        return run_config


@dataclass
class RunConfig:
    """Self-contained description of one experiment."""

    preset: str
    seed: int
    output_dir: str
    workers: int
    encoder: EncoderConfig
    distill: DistillConfig
    abmil: ABMILConfig
    mil_training: SupervisedConfig
    scorer: ScorerConfig
    aps_training: SupervisedConfig
    selection: SelectionConfig
    grid: List[SelectionConfig]
    cohort: SyntheticCohortSpec
    chunk_size: int
    cache_dir: str
    bench: BenchSpec
    reference_model: str = "full"
    curve_points: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        """Render as plain nested dictionaries.

        The output directory and cache location are left out so that the
        hash depends only on what is computed.
        """
        record = dataclasses.asdict(self)
        record.pop('output_dir')
        record.pop('cache_dir')
        record['teachers'] = {'weights': list(self.distill.teacher_weights)}
        return record

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical configuration record."""
        record = self.to_dict()
        record.pop('teachers')
        return Utils.hash_record(record)

    def path(self, *parts: str) -> str:
        """Path under the output directory."""
        return os.path.join(self.output_dir, *parts)
