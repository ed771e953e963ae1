"""Pipeline configuration: defaults, YAML loading, strict validation."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any

import yaml

from .ioutil import ValidationError, digest_of

# Implementation-keyword stems for sentence filtering. Matched case-insensitively
# as prefixes of word tokens, so "calculat" catches calculate/calculating/calculation.
DEFAULT_KEYWORDS = [
    "implement", "compute", "calculat", "algorithm", "function", "method",
    "procedure", "step", "input", "output", "parameter", "model", "train",
    "score", "align", "filter", "cluster", "normaliz", "estimat", "iterat",
]

DEFAULT_EXCLUDE_DIRS = [
    "tests", "test", "testing", "docs", "doc", "examples", "example",
    "build", "dist", "node_modules", "venv", "__pycache__",
]

DEFAULTS: dict[str, Any] = {
    "seed": 13,
    "paper": {
        "keywords": list(DEFAULT_KEYWORDS),
        "keyword_filtering": True,
        "min_keyword_hits": 1,
        # When true, methods-section sentences skip the keyword gate entirely.
        "methods_pass_unconditionally": False,
        "min_sentence_tokens": 4,
    },
    "code": {
        "source_extensions": [".py"],
        "exclude_dirs": list(DEFAULT_EXCLUDE_DIRS),
        # Functions with fewer body statements are flagged trivial and kept out
        # of retrieval candidate pools.
        "min_statements": 2,
        "normalization_version": 1,
    },
    "embedding": {
        "provider": "lexical",  # lexical | file | remote
        "hash_dim": 0,  # 0 disables feature hashing
        "file_path": None,
        "endpoint": None,
        "timeout": 10.0,
        "batch_size": 32,
        "max_retries": 3,
    },
    "retrieval": {
        "top_k": 10,
    },
    "annotation": {
        "required_annotators": 3,
    },
    "sampling": {
        "n_hard": 2,
        "n_random": 3,
        "hard_band": [5, 10],  # inclusive retrieval ranks
        # Random negatives are drawn from projects in the same split partition
        # so test pairs never contain training-project code.
        "constrain_random_to_split": True,
    },
    "split": {
        "ratios": [8, 1, 1],
    },
    "loss": {
        "gamma": 2.0,
        "alpha": [1.0, 5.0],
    },
    "training": {
        "learning_rate": 0.001,  # native linear head
        "encoder_finetune_lr": 0.00002,  # reference value for full-encoder fine-tuning
        "batch_size": 16,
        "max_epochs": 10,
        "patience": 3,
        "seeds": [13, 17, 19],
        "hidden_dim": 0,  # 0 keeps the head linear
        "weight_decay": 0.01,
        "early_stopping_metric": "macro_f1",  # macro_f1 | mcc | loss
    },
    "sequences": {
        "token_budget": 512,
    },
    "evaluation": {
        "threshold": 0.5,
        "threshold_grid": [0.40, 0.45, 0.50, 0.55, 0.60],
        "allow_test_sweep": False,
    },
}

DEFAULT_CONFIG_YAML = """\
# papercode pipeline configuration.
# Every key shown here is optional; omitted keys fall back to these defaults.
# Unknown keys are rejected.

seed: 13

paper:
  # Implementation-keyword stems; a sentence is retained when >= min_keyword_hits
  # of its word tokens start with one of these stems (case-insensitive).
  keywords: [implement, compute, calculat, algorithm, function, method,
             procedure, step, input, output, parameter, model, train,
             score, align, filter, cluster, normaliz, estimat, iterat]
  keyword_filtering: true
  min_keyword_hits: 1
  # When true, sentences in methods-like sections pass without keyword hits.
  methods_pass_unconditionally: false
  # Sentences with fewer word tokens are dropped as parse-noise fragments.
  min_sentence_tokens: 4

code:
  source_extensions: [".py"]
  exclude_dirs: [tests, test, testing, docs, doc, examples, example,
                 build, dist, node_modules, venv, __pycache__]
  # Functions with fewer body statements are flagged trivial and excluded
  # from retrieval candidate pools.
  min_statements: 2
  # Identifies which normalization rule set produced a dataset.
  normalization_version: 1

embedding:
  provider: lexical        # lexical | file | remote
  hash_dim: 0              # 0 disables feature hashing; 4096 is a sane large-corpus value
  file_path: null          # for provider=file: path to a vector store
  endpoint: null           # for provider=remote: POST {texts:[...]} -> {vectors:[[...]]}
  timeout: 10.0
  batch_size: 32
  max_retries: 3

retrieval:
  top_k: 10                # candidate functions retrieved per sentence

annotation:
  required_annotators: 3   # a pair is positive only on unanimous agreement

sampling:
  n_hard: 2                # same-repository hard negatives per positive
  n_random: 3              # cross-repository random negatives per positive
  hard_band: [5, 10]       # inclusive retrieval-rank band for hard negatives
  constrain_random_to_split: true

split:
  ratios: [8, 1, 1]        # train : validation : test, applied at project level

loss:
  gamma: 2.0               # focusing strength; 0 reduces to cross-entropy
  alpha: [1.0, 5.0]        # per-class weights [negative, positive] for imbalance

training:
  learning_rate: 0.001     # native linear head
  encoder_finetune_lr: 0.00002  # recorded rate for full-encoder fine-tuning setups
  batch_size: 16
  max_epochs: 10
  patience: 3              # early-stopping patience in epochs
  seeds: [13, 17, 19]      # independent runs to average
  hidden_dim: 0            # 0 = linear head; 256 enables the hidden-layer variant
  weight_decay: 0.01
  early_stopping_metric: macro_f1   # macro_f1 | mcc | loss

sequences:
  token_budget: 512        # joint-sequence token cap; code is truncated, never the sentence

evaluation:
  threshold: 0.5
  threshold_grid: [0.40, 0.45, 0.50, 0.55, 0.60]
  allow_test_sweep: false  # sweeps run on validation unless explicitly allowed
"""


def _merge(defaults: dict[str, Any], overrides: dict[str, Any], path: str) -> dict[str, Any]:
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if key not in defaults:
            raise ValidationError(f"unknown config key: {path}{key}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(f"config key {path}{key} must be a mapping")
            merged[key] = _merge(defaults[key], value, f"{path}{key}.")
        else:
            merged[key] = value
    return merged


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValidationError(f"invalid config: {message}")


def validate_config(cfg: dict[str, Any]) -> None:
    paper = cfg["paper"]
    _require(isinstance(paper["keywords"], list), "paper.keywords must be a list")
    if paper["keyword_filtering"]:
        _require(len(paper["keywords"]) > 0, "keyword filtering enabled with empty keyword list")
    _require(paper["min_keyword_hits"] >= 1, "paper.min_keyword_hits must be >= 1")
    _require(paper["min_sentence_tokens"] >= 0, "paper.min_sentence_tokens must be >= 0")

    _require(cfg["code"]["min_statements"] >= 0, "code.min_statements must be >= 0")

    emb = cfg["embedding"]
    _require(emb["provider"] in {"lexical", "file", "remote"}, "embedding.provider unknown")
    _require(emb["hash_dim"] >= 0, "embedding.hash_dim must be >= 0")
    _require(emb["batch_size"] >= 1, "embedding.batch_size must be >= 1")

    _require(cfg["retrieval"]["top_k"] >= 1, "retrieval.top_k must be >= 1")
    _require(cfg["annotation"]["required_annotators"] >= 1, "annotation.required_annotators must be >= 1")

    sampling = cfg["sampling"]
    band = sampling["hard_band"]
    _require(isinstance(band, list) and len(band) == 2, "sampling.hard_band must be [lo, hi]")
    _require(1 <= band[0] <= band[1], "sampling.hard_band must satisfy 1 <= lo <= hi")
    band_size = band[1] - band[0] + 1
    _require(0 <= sampling["n_hard"] <= band_size, "sampling.n_hard must fit inside the band")
    _require(sampling["n_random"] >= 0, "sampling.n_random must be >= 0")

    ratios = cfg["split"]["ratios"]
    _require(isinstance(ratios, list) and len(ratios) == 3, "split.ratios must have 3 entries")
    _require(all(r > 0 for r in ratios), "split.ratios must be positive")

    loss = cfg["loss"]
    _require(loss["gamma"] >= 0, "loss.gamma must be >= 0")
    _require(isinstance(loss["alpha"], list) and len(loss["alpha"]) == 2, "loss.alpha must have 2 entries")
    _require(all(a > 0 for a in loss["alpha"]), "loss.alpha entries must be > 0")

    training = cfg["training"]
    for key in ("learning_rate", "batch_size", "max_epochs"):
        _require(training[key] > 0, f"training.{key} must be > 0")
    _require(training["patience"] >= 0, "training.patience must be >= 0")
    _require(len(training["seeds"]) >= 1, "training.seeds must be non-empty")
    _require(training["early_stopping_metric"] in {"macro_f1", "mcc", "loss"},
             "training.early_stopping_metric unknown")

    _require(cfg["sequences"]["token_budget"] >= 4, "sequences.token_budget too small")

    grid = cfg["evaluation"]["threshold_grid"]
    _require(len(grid) >= 1, "evaluation.threshold_grid must be non-empty")
    _require(all(0 < t < 1 for t in grid), "thresholds must lie in (0, 1)")
    _require(all(a < b for a, b in zip(grid, grid[1:])), "threshold_grid must be strictly increasing")
    _require(0 < cfg["evaluation"]["threshold"] < 1, "evaluation.threshold must lie in (0, 1)")


def load_config(path: Path | None = None, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    """Load config from YAML (or defaults), apply overrides, validate."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ValidationError(f"{path}: malformed YAML: {exc}") from exc
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ValidationError(f"{path}: config root must be a mapping")
        cfg = _merge(cfg, raw, "")
    if overrides:
        cfg = _merge(cfg, overrides, "")
    validate_config(cfg)
    return cfg


def config_digest(cfg: dict[str, Any]) -> str:
    return digest_of(cfg)
