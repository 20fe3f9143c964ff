"""Leakage-free knowledge tracing: MASK-label inputs, recency encoding and a
small DKT / DKT+ / SAKT / AKT model zoo."""

from .core import DatasetStats, InteractionLog, KcMap, StudentSequence, dataset_stats
from .expansion import MASK, MaskPolicy, expand, fuse_groups, recency_distances
from .ingestion import CsvSchema, SplitPlan, load_prepared, parse_csv, save_prepared, split_students, window_questions
from .models import ModelConfig, build_model, build_question_mask, load_checkpoint, save_checkpoint
from .synthetic import PlantedModel, duplicate_kcs, generate_planted
from .train_eval import TrainConfig, auc, evaluate_all_in_one, evaluate_one_by_one, train, train_fold

__version__ = "0.1.0"

__all__ = [
    "CsvSchema", "DatasetStats", "InteractionLog", "KcMap", "MASK", "MaskPolicy", "ModelConfig", "PlantedModel",
    "SplitPlan", "StudentSequence", "TrainConfig", "auc", "build_model", "build_question_mask", "dataset_stats",
    "duplicate_kcs", "evaluate_all_in_one", "evaluate_one_by_one", "expand", "fuse_groups", "generate_planted",
    "load_checkpoint", "load_prepared", "parse_csv", "recency_distances", "save_checkpoint", "save_prepared",
    "split_students", "train", "train_fold", "window_questions",
]
