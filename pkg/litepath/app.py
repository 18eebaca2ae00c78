#!/usr/bin/env python3
"""
Main application module for the LitePath toolkit.
"""

import json
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .config.config_manager import ConfigManager, RunConfig
from .config.constants import Constants
from .core.bundle import ModelBundle
from .core.encoder import VisionEncoder
from .core.flops import competitor_reduction, encoder_flops, parameter_count, relative_flops_curve
from .core.heads import ABMILHead, ScoringNet
from .core.metrics import (
    AucResult,
    DScoreInput,
    auc_retention,
    auc_with_ci,
    average_dscore,
    dscore,
    noninferiority,
    paired_bootstrap_diffs,
    ranking_scores,
)
from .core.numerics import SeededRng
from .core.selector import SelectionConfig, ValidationSlide, grid_search
from .data.feature_cache import FeatureCache
from .data.slides import SlideRecord
from .data.synthetic import CohortSplits, generate_cohort, sample_patches
from .data.tables import (
    read_dscore_table,
    read_score_table,
    score_arrays,
    score_frame,
    write_curve,
    write_manifest,
    write_score_table,
)
from .services.benchmark import BenchResult, bench_throughput
from .services.pipeline import CohortResult, InferencePipeline
from .services.report import ReportBundle, emit_report
from .training.abmil_trainer import ABMILTrainer
from .training.distillation import DistillationTrainer
from .training.scorer_trainer import ScorerTrainer
from .utils.utils import Utils, ValidationError

# Bundle files written by the training stages, in the order they are produced.
ENCODER_WEIGHTS = "encoder" + Constants.WEIGHTS_SUFFIX
MIL_WEIGHTS = "mil" + Constants.WEIGHTS_SUFFIX
LITEPATH_WEIGHTS = "litepath" + Constants.WEIGHTS_SUFFIX
SELECTION_FILE = "selection.json"
BENCH_FILE = "bench.json"


class LitePathApp:
    """Main application class for LitePath: owns logging, configuration and stage outputs."""

    _handlers: List[logging.Handler] = []

    def __init__(self, config_file: Optional[str] = None, seed: Optional[int] = None,
                 output_dir: Optional[str] = None):
        """Initialize the application.

        Args:
            config_file: INI path or built-in configuration name
            seed: Optional seed overriding the configuration
            output_dir: Optional output directory overriding the configuration
        """
        self.config_manager = ConfigManager(config_file)
        if output_dir:
            self.config_manager.set('run', 'output_dir', output_dir)
        self.config: RunConfig = self.config_manager.build_run_config(seed)
        self._setup_logging()
        self._init_components()

    def _setup_logging(self):
        """Set up logging with rotation under <output_dir>/logs."""
        try:
            log_dir = Utils.ensure_dir(self.config.path(Constants.LOGS_SUBDIR))

            self.logger = logging.getLogger()
            self.logger.setLevel(Constants.LOGGING_SETTINGS["LOG_LEVEL"])
            for handler in LitePathApp._handlers:
                self.logger.removeHandler(handler)
                handler.close()

            file_formatter = logging.Formatter(Constants.LOGGING_SETTINGS["LOG_FORMAT"])
            console_formatter = logging.Formatter('%(levelname)s: %(message)s')

            file_handler = RotatingFileHandler(
                os.path.join(log_dir, Constants.LOGGING_SETTINGS["LOG_FILE"]),
                maxBytes=Constants.LOGGING_SETTINGS["MAX_LOG_SIZE"],
                backupCount=Constants.LOGGING_SETTINGS["BACKUP_COUNT"],
                encoding='utf-8'
            )
            file_handler.setFormatter(file_formatter)
            file_handler.setLevel(logging.INFO)

            console_handler = logging.StreamHandler(sys.stdout)
            console_handler.setFormatter(console_formatter)
            console_handler.setLevel(logging.INFO)

            self.logger.addHandler(file_handler)
            self.logger.addHandler(console_handler)
            LitePathApp._handlers = [file_handler, console_handler]

            self.logger.info(f"Logging to {log_dir} (config {self.config.config_hash[:12]}, seed {self.config.seed})")

        except OSError as e:
            print(f"Error setting up logging: {str(e)}")
            sys.exit(2)

    def _init_components(self):
        """Create the output layout and shared components."""
        for subdir in (Constants.COHORT_SUBDIR, Constants.WEIGHTS_SUBDIR,
                       Constants.PREDICTIONS_SUBDIR, Constants.REPORTS_SUBDIR):
            Utils.ensure_dir(self.config.path(subdir))
        self.cache = FeatureCache(self.config.cache_dir, self.logger)
        self.curve_path = self.config.path(Constants.LOGS_SUBDIR, Constants.TRAIN_CURVE_FILE)
        self._splits: Optional[CohortSplits] = None

    # Helpers

    def provenance(self, bundle: Optional[ModelBundle] = None) -> str:
        return Utils.provenance_line(self.config.config_hash, self.config.seed,
                                     bundle.weights_hash if bundle is not None else None)

    def _weights_path(self, name: str) -> str:
        return self.config.path(Constants.WEIGHTS_SUBDIR, name)

    def _report_path(self, name: str) -> str:
        return self.config.path(Constants.REPORTS_SUBDIR, name)

    def _write_json(self, name: str, record: Dict[str, Any], bundle: Optional[ModelBundle] = None,
                    path: Optional[str] = None) -> str:
        """Write a JSON record, stamped with the provenance line, under reports/ unless a path is given."""
        path = path or self._report_path(name)
        record = {"provenance": self.provenance(bundle), **record}
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(json.dumps(record, sort_keys=True, indent=2) + "\n")
        return path

    def _load_bundle(self, *names: str) -> ModelBundle:
        """Load the first existing bundle among the given weight files."""
        for name in names:
            path = self._weights_path(name)
            if os.path.exists(path):
                return ModelBundle.load(path)
        raise ValidationError(f"No trained weights found ({', '.join(names)}); run the earlier stages first")

    def _pipeline(self, bundle: ModelBundle) -> InferencePipeline:
        return InferencePipeline(bundle, self.config.chunk_size, cache=self.cache, logger=self.logger)

    def cohort(self) -> CohortSplits:
        """The synthetic cohort; regenerated lazily from the configured spec."""
        if self._splits is None:
            self._splits = generate_cohort(self.config.cohort)
        return self._splits

    def slides(self, split: str) -> List[SlideRecord]:
        cohort = self.cohort()
        return cohort.all() if split == "all" else cohort.split(split)

    # Stages

    def generate(self) -> CohortSplits:
        """Generate the cohort and write its manifest and spec."""
        splits = self.cohort()
        manifest = write_manifest(self.config.path(Constants.COHORT_SUBDIR, "manifest.csv"), splits,
                                  self.provenance())
        self._write_json("cohort.json", self.config.cohort.to_dict(),
                         path=self.config.path(Constants.COHORT_SUBDIR, "cohort.json"))
        self.logger.info(f"Cohort manifest written to {manifest}")
        return splits

    def distill(self) -> ModelBundle:
        """Stage 1: distil the synthetic teachers into a fresh student encoder."""
        rng = SeededRng(self.config.seed)
        student = VisionEncoder(self.config.encoder, rng.spawn(1))
        dataset = sample_patches(self.slides("train"), self.config.distill.dataset_size, rng.spawn(2))
        self.logger.info(f"Distillation set: {len(dataset)} patches")

        trainer = DistillationTrainer(self.config.distill, self.config.seed, self.curve_path, self.logger)
        student, heads = trainer.train(student, dataset)
        bundle = ModelBundle(encoder=student, projection_heads=heads)
        bundle.save(self._weights_path(ENCODER_WEIGHTS))
        return bundle

    def _bags(self, pipeline: InferencePipeline, split: str) -> List[Tuple[np.ndarray, int]]:
        return [(pipeline.features(slide, "full"), int(slide.label)) for slide in self.slides(split)]

    def train_mil(self) -> ModelBundle:
        """Stage 2: ABMIL on cached full embeddings of the frozen encoder."""
        bundle = self._load_bundle(ENCODER_WEIGHTS)
        pipeline = self._pipeline(bundle)
        train_bags, val_bags = self._bags(pipeline, "train"), self._bags(pipeline, "val")

        trainer = ABMILTrainer(self.config.abmil, self.config.mil_training, self.config.seed,
                               self.curve_path, self.logger)
        bundle.abmil = trainer.train(train_bags, val_bags)
        bundle.save(self._weights_path(MIL_WEIGHTS))
        return bundle

    def _score_items(self, bundle: ModelBundle, pipeline: InferencePipeline, split: str):
        items = []
        for slide in self.slides(split):
            _, attention = bundle.abmil.forward(pipeline.features(slide, "full"))
            items.append((pipeline.features(slide, "shallow"), attention))
        return items

    def train_aps(self) -> ModelBundle:
        """Stage 3: score matching of the scorer against the trained ABMIL attention."""
        bundle = self._load_bundle(MIL_WEIGHTS)
        pipeline = self._pipeline(bundle)
        train_items = self._score_items(bundle, pipeline, "train")
        val_items = self._score_items(bundle, pipeline, "val")

        trainer = ScorerTrainer(self.config.scorer, self.config.aps_training, self.config.seed,
                                self.curve_path, self.logger)
        bundle.scorer = trainer.train(train_items, val_items)
        bundle.save(self._weights_path(LITEPATH_WEIGHTS))
        return bundle

    def grid(self) -> SelectionConfig:
        """Search (k_u, k_a) on the validation split and record the choice."""
        bundle = self._load_bundle(LITEPATH_WEIGHTS)
        pipeline = self._pipeline(bundle)
        validation = [
            ValidationSlide(
                slide_id=slide.slide_id,
                label=int(slide.label),
                scores=bundle.scorer.forward(pipeline.features(slide, "shallow")),
                embeddings=pipeline.features(slide, "full"),
            )
            for slide in self.slides("val")
        ]
        best = grid_search(validation, self.config.grid, bundle.abmil, self.config.workers, self.logger)
        self._write_json(SELECTION_FILE, best.to_dict(), bundle)
        return best

    def selection(self) -> SelectionConfig:
        """The grid-searched selection if one was recorded, else the configured one."""
        path = self._report_path(SELECTION_FILE)
        if os.path.exists(path):
            with open(path, 'r', encoding='utf-8') as f:
                record = json.load(f)
            return SelectionConfig(record["k_u"], record["k_a"])
        return self.config.selection

    def infer(self, mode: str = "litepath", selection: Optional[SelectionConfig] = None, k: Optional[int] = None,
              split: str = "test", output: Optional[str] = None) -> Tuple[CohortResult, str]:
        """Run a cohort split through one pipeline mode and write its prediction file.

        Returns:
            (cohort result, prediction file path)
        """
        bundle = self._load_bundle(LITEPATH_WEIGHTS, MIL_WEIGHTS)
        selection = selection or self.selection()
        if mode in ("topk", "uniform") and k is None:
            k = selection.total
        pipeline = InferencePipeline(bundle, self.config.chunk_size, logger=self.logger)
        result = pipeline.run_cohort(self.slides(split), mode, selection, k, self.config.workers)

        frame = score_frame(
            [r.slide_id for r in result.records],
            result.case_ids,
            [r.label for r in result.records],
            result.probabilities,
            flops=[r.flops_charged for r in result.records],
        )
        path = output or self.config.path(Constants.PREDICTIONS_SUBDIR, f"{mode}.csv")
        write_score_table(path, frame, self.provenance(bundle))
        self.logger.info(f"{mode}: {len(result.records)} slides, mean {result.mean_flops:.4g} FLOPs per slide -> {path}")
        return result, path

    def _load_predictions(self, path: str):
        frame, _ = read_score_table(path)
        return frame.sort_values("slide_id", kind="stable").reset_index(drop=True)

    def evaluate(self, predictions: str, baseline: Optional[str] = None) -> Dict[str, Any]:
        """AUC with CI for a prediction file, and the paired comparison against a baseline file."""
        frame = self._load_predictions(predictions)
        labels, scores, case_ids = score_arrays(frame)
        auc = auc_with_ci(labels, scores, case_ids, seed=self.config.seed)
        record: Dict[str, Any] = {"predictions": os.path.basename(predictions), "auc": auc.to_dict()}

        if baseline:
            base = self._load_predictions(baseline)
            if list(base["slide_id"]) != list(frame["slide_id"]):
                raise ValidationError("prediction files cover different slides")
            _, base_scores, _ = score_arrays(base)
            base_auc = auc_with_ci(labels, base_scores, case_ids, seed=self.config.seed)
            diffs = paired_bootstrap_diffs(labels, scores, base_scores, case_ids, seed=self.config.seed)
            record["baseline"] = os.path.basename(baseline)
            record["baseline_auc"] = base_auc.to_dict()
            record["retention"] = auc_retention(auc.macro_auc, base_auc.macro_auc)
            record["noninferiority"] = noninferiority(diffs).to_dict()

        self._write_json("eval.json", record)
        self.logger.info(f"Macro-AUC {auc.macro_auc:.4f} [{auc.ci_low:.4f}, {auc.ci_high:.4f}]")
        return record

    def dscore(self, table: str) -> Dict[str, Any]:
        """Per-cohort D-Scores, their average and the mean AUC rank from a (model, cohort, auc, flops) table."""
        frame = read_dscore_table(table)
        per_cohort: Dict[str, Dict[str, float]] = {}
        aucs: Dict[str, Dict[str, float]] = {}
        for cohort, rows in frame.groupby("cohort", sort=True):
            rows = rows.sort_values("model")
            models = rows["model"].astype(str).tolist()
            values = dscore(DScoreInput(rows["auc"].tolist(), rows["flops"].tolist()))
            per_cohort[str(cohort)] = {m: float(v) for m, v in zip(models, values)}
            aucs[str(cohort)] = {m: float(a) for m, a in zip(models, rows["auc"])}

        record = {
            "per_cohort": per_cohort,
            "average": average_dscore(per_cohort),
            "mean_rank": ranking_scores(aucs),
        }
        self._write_json("dscore.json", record)
        return record

    def flops(self) -> Dict[str, Any]:
        """Per-patch cost breakdown, relative-FLOPs curve and competitor reductions."""
        breakdown = encoder_flops(self.config.encoder, self.config.scorer, self.config.abmil)
        selection = self.selection()
        curve = relative_flops_curve(breakdown, selection, self.config.curve_points)
        record = {
            "breakdown": breakdown.to_dict(),
            "full_per_patch": breakdown.full_per_patch,
            "asymptotic_ratio": breakdown.asymptotic_ratio,
            "encoder_parameters": parameter_count(self.config.encoder),
            "selection": selection.to_dict(),
            "curve": [[n, ratio] for n, ratio in curve],
            "competitors": {name: competitor_reduction(breakdown, name) for name in sorted(Constants.COMPETITOR_FLOPS)},
        }
        self._write_json("flops.json", record)
        write_curve(self._report_path("flops_curve.csv"), curve, self.provenance())
        return record

    def _bench_bundle(self) -> ModelBundle:
        """Trained weights when present, otherwise a seeded random bundle of the configured shape."""
        try:
            return self._load_bundle(LITEPATH_WEIGHTS)
        except ValidationError:
            rng = SeededRng(self.config.seed).spawn(7)
            self.logger.info("No trained weights; benchmarking a randomly initialised bundle")
            return ModelBundle(
                encoder=VisionEncoder(self.config.encoder, rng.spawn(0)),
                abmil=ABMILHead(self.config.abmil, rng.spawn(1)),
                scorer=ScoringNet(self.config.scorer, rng.spawn(2)),
            )

    def bench(self, modes: Tuple[str, ...] = ("litepath", "full")) -> Dict[str, BenchResult]:
        """Throughput of each mode on a dummy slide."""
        bundle = self._bench_bundle()
        results = {mode: bench_throughput(bundle, self.config.bench, mode, self.config.seed, self.logger)
                   for mode in modes}
        record = {
            "spec": self.config.bench.to_dict(),
            "results": {mode: result.to_dict() for mode, result in results.items()},
        }
        if "litepath" in results and "full" in results:
            record["speedup"] = results["full"].latency_p50 / results["litepath"].latency_p50
            self.logger.info(f"Measured speedup {record['speedup']:.2f}x")
        self._write_json(BENCH_FILE, record, bundle)
        return results

    def _stored_bench(self, models: List[str]) -> Optional[Dict[str, BenchResult]]:
        path = self._report_path(BENCH_FILE)
        if not os.path.exists(path):
            return None
        with open(path, 'r', encoding='utf-8') as f:
            stored = json.load(f)["results"]
        if sorted(stored) != sorted(models):
            self.logger.info("Stored benchmark covers other models; leaving throughput out of the report")
            return None
        return {name: BenchResult(**values) for name, values in stored.items()}

    def report(self, predictions: Dict[str, str]) -> ReportBundle:
        """Summarise prediction files (model name -> path) into one report."""
        if not predictions:
            raise ValidationError("report needs at least one prediction file")
        frames = {name: self._load_predictions(path) for name, path in predictions.items()}
        names = sorted(frames)
        slide_ids = list(frames[names[0]]["slide_id"])
        for name in names:
            if list(frames[name]["slide_id"]) != slide_ids:
                raise ValidationError(f"prediction file for '{name}' covers different slides")

        aucs: Dict[str, AucResult] = {}
        flops: Dict[str, float] = {}
        arrays = {}
        for name in names:
            labels, scores, case_ids = score_arrays(frames[name])
            arrays[name] = scores
            aucs[name] = auc_with_ci(labels, scores, case_ids, seed=self.config.seed)
            if "flops" not in frames[name]:
                raise ValidationError(f"prediction file for '{name}' has no flops column")
            flops[name] = float(frames[name]["flops"].mean())

        reference = self.config.reference_model
        tests = None
        if reference in arrays and len(names) > 1:
            tests = {
                name: noninferiority(paired_bootstrap_diffs(labels, arrays[name], arrays[reference],
                                                            case_ids, seed=self.config.seed))
                for name in names if name != reference
            }

        breakdown = encoder_flops(self.config.encoder, self.config.scorer, self.config.abmil)
        curves = {"relative_flops": relative_flops_curve(breakdown, self.selection(), self.config.curve_points)}
        return emit_report(
            self.config.path(Constants.REPORTS_SUBDIR),
            aucs,
            flops,
            self.provenance(),
            bench=self._stored_bench(names),
            reference=reference,
            noninferiority=tests,
            curves=curves,
            extra={"selection": self.selection().to_dict(), "flops_breakdown": breakdown.to_dict()},
        )
