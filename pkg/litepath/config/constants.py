#!/usr/bin/env python3
"""
Constants for the LitePath toolkit.
"""

import os


class Constants:
    """Constants used throughout the toolkit."""

    # Application information
    VERSION = "1.0.0"

    # Paths
    DEFAULT_OUTPUT_DIR = os.path.join(os.getcwd(), "litepath_runs")
    LOGS_SUBDIR = "logs"
    CACHE_SUBDIR = "cache"
    WEIGHTS_SUBDIR = "weights"
    COHORT_SUBDIR = "cohort"
    PREDICTIONS_SUBDIR = "predictions"
    REPORTS_SUBDIR = "reports"
    TRAIN_CURVE_FILE = "train_curve.jsonl"

    # Logging settings
    LOGGING_SETTINGS = {
        "LOG_LEVEL": "INFO",
        "LOG_FORMAT": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        "LOG_FILE": "litepath.log",
        "MAX_LOG_SIZE": 10 * 1024 * 1024,  # 10 MB
        "BACKUP_COUNT": 5
    }

    # Weights container
    WEIGHTS_MAGIC = b"LPW1"
    WEIGHTS_SUFFIX = ".lpw"

    # Numerics
    LAYERNORM_EPS = 1e-6
    INIT_STD = 0.02

    # Published per-patch FLOPs (1 FLOP per multiply-accumulate)
    LITEFM_PUBLISHED_FLOPS = 4.25e9
    COMPETITOR_FLOPS = {
        "virchow2": 165e9,
        "h-optimus-1": 296e9,
    }
    RELATIVE_FLOPS_LIMIT = 0.096

    # Published parameter counts
    LITEFM_PARAMS = 22.06e6
    SCORER_PARAMS = 0.46e6

    # Evaluation
    DSCORE_ALPHA = 0.9
    NONINFERIORITY_MARGIN = -0.025
    BOOTSTRAP_REPLICATES = 1000
    CI_PERCENTILES = (2.5, 97.5)
    MIN_NONINFERIORITY_SAMPLES = 100

    # Cohort split (train:val:test)
    SPLIT_RATIO = (7, 1, 2)
    MIN_SLIDES_PER_CLASS = 10

    # Selection grid observed on the clinical cohorts
    DEFAULT_KU_GRID = [0, 950, 1000, 1900, 1950, 2000, 2900, 3000, 3900, 3950, 4000]
    DEFAULT_KA_GRID = [0, 50, 100, 1000]

    # Teachers
    TEACHER_NAMES = ["virchow2", "h-optimus-1", "uni2"]
    TEACHER_DIMS = [2560, 1536, 1536]
    TEACHER_WEIGHTS = [0.4, 0.3, 0.3]

    # Encoder presets (model family)
    ENCODER_PRESETS = {
        "litefm-s": {"embed_dim": 192, "heads": 3},
        "litefm": {"embed_dim": 384, "heads": 6},
        "litefm-l": {"embed_dim": 768, "heads": 12},
    }

    # Full-scale configuration, used by `flops` and as the base for files
    DEFAULT_CONFIG = {
        "run": {
            "preset": "default",
            "seed": "0",
            "output_dir": DEFAULT_OUTPUT_DIR,
            "workers": "1",
        },
        "encoder": {
            "input_size": "224",
            "patch_size": "16",
            "in_chans": "3",
            "embed_dim": "384",
            "depth": "12",
            "heads": "6",
            "mlp_ratio": "4",
            "output_dim": "1024",
            "split_after_block": "1",
        },
        "teachers": {
            "kind": "encoder",
            "dims": "2560, 1536, 1536",
            "weights": "0.4, 0.3, 0.3",
            "embed_dim": "384",
            "depth": "2",
            "heads": "6",
        },
        "distill": {
            "steps": "100000",
            "batch_size": "2048",
            "dataset_size": "190212668",
            "lr": "3e-3",
            "min_lr": "1e-5",
            "warmup_steps": "5000",
            "warmup_lr_init": "1e-6",
            "weight_decay": "0.05",
            "grad_clip": "1.0",
        },
        "mil": {
            "num_classes": "2",
            "hidden_dim": "512",
            "attn_dim": "128",
            "dropout": "0.25",
            "gated": "false",
            "lr": "2e-4",
            "epochs": "50",
            "weight_decay": "1e-5",
            "patience": "10",
        },
        "aps": {
            "hidden_dim": "512",
            "attn_dim": "128",
            "dropout": "0.25",
            "lr": "2e-4",
            "epochs": "100",
            "weight_decay": "1e-5",
            "patience": "10",
            "temperature": "0.7",
        },
        "selection": {
            "k_u": "0",
            "k_a": "1000",
            "grid_ku": ", ".join(str(k) for k in DEFAULT_KU_GRID),
            "grid_ka": ", ".join(str(k) for k in DEFAULT_KA_GRID),
        },
        "cohort": {
            "n_slides": "200",
            "min_patches": "500",
            "max_patches": "2000",
            "n_classes": "2",
            "lesion_fraction": "0.1",
            "signal_strength": "1.5",
            "slides_per_case": "1",
            "subspace_fraction": "0.25",
        },
        "pipeline": {
            "chunk_size": "256",
            "cache_dir": "",
        },
        "bench": {
            "n_patches": "30000",
            "repetitions": "3",
            "warmup": "1",
            "k_u": "0",
            "k_a": "1000",
            "precision": "float32",
            "chunk_size": "512",
            "min_duration": "0.05",
        },
        "report": {
            "reference_model": "full",
            "curve_points": "100, 300, 1000, 3000, 10000, 30000, 100000, 300000, 1000000",
        },
    }

    # Desk-scale overrides: 32 px patches and a proportionally scaled encoder
    DESK_OVERRIDES = {
        "run": {"preset": "desk"},
        "encoder": {
            "input_size": "32",
            "patch_size": "8",
            "embed_dim": "64",
            "depth": "6",
            "heads": "4",
            "output_dim": "128",
        },
        "teachers": {
            "dims": "160, 96, 96",
            "embed_dim": "64",
            "depth": "2",
            "heads": "4",
        },
        "distill": {
            "steps": "300",
            "batch_size": "32",
            "dataset_size": "1024",
            "lr": "1e-3",
            "warmup_steps": "30",
            "weight_decay": "0.05",
        },
        "mil": {"hidden_dim": "64", "attn_dim": "32", "lr": "1e-3", "epochs": "30"},
        "aps": {"hidden_dim": "64", "attn_dim": "32", "lr": "1e-3", "epochs": "40"},
        "selection": {
            "k_u": "0",
            "k_a": "50",
            "grid_ku": "0, 25, 50, 100",
            "grid_ka": "0, 25, 50, 100",
        },
        "bench": {"chunk_size": "1024"},
    }
