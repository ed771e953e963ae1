"""Native consistency classifier: pair features, softmax head, the four-loss
family, and deterministic gradient training with early stopping."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .evaluation import binarize, confusion, metrics
from .ioutil import ValidationError

EPS = 1e-12  # probability clamp before log


def build_pair_feature(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """[u; v; u*v; |u-v|] — order-sensitive by construction."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return np.concatenate([u, v, u * v, np.abs(u - v)])


@dataclass
class LossConfig:
    gamma: float = 2.0
    alpha: tuple[float, float] = (1.0, 5.0)

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValidationError("gamma must be >= 0")
        if len(self.alpha) != 2 or any(a <= 0 for a in self.alpha):
            raise ValidationError("alpha must be two positive weights")

    @property
    def variant(self) -> str:
        weighted = tuple(self.alpha) != (1.0, 1.0)
        if self.gamma > 0:
            return "WeightedFocal" if weighted else "Focal"
        return "WeightedCE" if weighted else "CE"

    def to_record(self) -> dict[str, Any]:
        return {"gamma": self.gamma, "alpha": list(self.alpha)}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3  # native head; full-encoder setups use ~2e-5
    batch_size: int = 16
    max_epochs: int = 10
    patience: int = 3
    seeds: tuple[int, ...] = (13, 17, 19)
    hidden_dim: int = 0  # 0 keeps the head linear
    weight_decay: float = 0.01
    early_stopping_metric: str = "macro_f1"  # macro_f1 | mcc | loss
    encoder_finetune_lr: float = 2e-5

    def to_record(self) -> dict[str, Any]:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "seeds": list(self.seeds),
            "hidden_dim": self.hidden_dim,
            "weight_decay": self.weight_decay,
            "early_stopping_metric": self.early_stopping_metric,
            "encoder_finetune_lr": self.encoder_finetune_lr,
        }


@dataclass
class ClassifierModel:
    params: dict[str, np.ndarray]  # W,b and optionally W1,b1
    feature_dim: int
    hidden_dim: int
    loss_cfg: LossConfig
    seed: int = 0
    trained_epochs: int = 0
    best_val_metric: float = 0.0
    log: list[dict[str, float]] = field(default_factory=list)


@dataclass
class Prediction:
    example_id: str
    p: tuple[float, float]

    @property
    def p_positive(self) -> float:
        return self.p[1]


def init_model(
    feature_dim: int, loss_cfg: LossConfig, seed: int, hidden_dim: int = 0
) -> ClassifierModel:
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    if hidden_dim > 0:
        params["W1"] = rng.uniform(-0.05, 0.05, size=(hidden_dim, feature_dim))
        params["b1"] = np.zeros(hidden_dim)
        params["W"] = rng.uniform(-0.05, 0.05, size=(2, hidden_dim))
    else:
        params["W"] = rng.uniform(-0.05, 0.05, size=(2, feature_dim))
    params["b"] = np.zeros(2)
    return ClassifierModel(
        params=params, feature_dim=feature_dim, hidden_dim=hidden_dim,
        loss_cfg=loss_cfg, seed=seed,
    )


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_batch(
    model: ClassifierModel, features: np.ndarray
) -> tuple[np.ndarray, np.ndarray | None]:
    """(probabilities, hidden activations or None)."""
    if not np.all(np.isfinite(features)):
        raise ValidationError("non-finite feature values")
    if model.hidden_dim > 0:
        activations = np.maximum(features @ model.params["W1"].T + model.params["b1"], 0.0)
        logits = activations @ model.params["W"].T + model.params["b"]
        return _softmax(logits), activations
    logits = features @ model.params["W"].T + model.params["b"]
    return _softmax(logits), None


def forward(model: ClassifierModel, feature: np.ndarray) -> tuple[float, float]:
    """Class probabilities for a single pair feature."""
    p = _forward_batch(model, feature.reshape(1, -1))[0][0]
    return (float(p[0]), float(p[1]))


def loss_value(p_y: float | np.ndarray, y: int | np.ndarray, cfg: LossConfig) -> Any:
    """Per-example loss: -alpha[y] * (1 - p_y)^gamma * log(p_y)."""
    p = np.clip(np.asarray(p_y, dtype=np.float64), EPS, 1.0)
    a = np.asarray(cfg.alpha, dtype=np.float64)[np.asarray(y)]
    value = -a * np.power(1.0 - p, cfg.gamma) * np.log(p)
    return float(value) if np.ndim(p_y) == 0 else value


def batch_loss(model: ClassifierModel, features: np.ndarray, labels: np.ndarray) -> float:
    probs, _ = _forward_batch(model, features)
    p_y = probs[np.arange(len(labels)), labels]
    return float(np.mean(loss_value(p_y, labels, model.loss_cfg)))


def loss_gradient(
    model: ClassifierModel, features: np.ndarray, labels: np.ndarray
) -> dict[str, np.ndarray]:
    """Analytic gradient of the mean loss, through the softmax and the focal
    modulation (the (1-p_y)^gamma factor depends on p_y too)."""
    if len(labels) == 0:
        raise ValidationError("empty batch")
    cfg = model.loss_cfg
    probs, activations = _forward_batch(model, features)
    n = len(labels)
    idx = np.arange(n)
    p_y = probs[idx, labels]
    pc = np.clip(p_y, EPS, 1.0)
    a = np.asarray(cfg.alpha, dtype=np.float64)[labels]
    # dL/dp_y
    if cfg.gamma == 0.0:
        dl_dp = -a / pc
    else:
        one_minus = 1.0 - p_y
        dl_dp = a * (
            cfg.gamma * np.power(one_minus, cfg.gamma - 1.0) * np.log(pc)
            - np.power(one_minus, cfg.gamma) / pc
        )
    # dp_y/dz_k = p_y * (delta_ky - p_k)
    delta = np.zeros_like(probs)
    delta[idx, labels] = 1.0
    dz = dl_dp[:, None] * p_y[:, None] * (delta - probs) / n
    grads: dict[str, np.ndarray] = {}
    if model.hidden_dim > 0:
        grads["W"] = dz.T @ activations
        grads["b"] = dz.sum(axis=0)
        d_act = (dz @ model.params["W"]) * (activations > 0)
        grads["W1"] = d_act.T @ features
        grads["b1"] = d_act.sum(axis=0)
    else:
        grads["W"] = dz.T @ features
        grads["b"] = dz.sum(axis=0)
    return grads


class _AdamW:
    """Per-parameter adaptive moments with decoupled weight decay."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, weight_decay: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for key, grad in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * grad * grad
            m_hat = self.m[key] / (1 - self.beta1 ** self.t)
            v_hat = self.v[key] / (1 - self.beta2 ** self.t)
            params[key] -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps))
            if key.startswith("W"):  # no decay on biases
                params[key] -= self.lr * self.weight_decay * params[key]


def _validation_score(
    model: ClassifierModel, features: np.ndarray, labels: np.ndarray, metric: str
) -> tuple[float, dict[str, float]]:
    """(score where higher is better, raw metric dict)."""
    probs, _ = _forward_batch(model, features)
    p_positive = probs[:, 1].tolist()
    cm = confusion(binarize(p_positive, 0.5), labels.tolist())
    acc, macro_f1, mcc = metrics(cm)
    raw = {
        "acc": acc,
        "macro_f1": macro_f1,
        "mcc": mcc,
        "loss": batch_loss(model, features, labels),
    }
    score = -raw["loss"] if metric == "loss" else raw[metric]
    return score, raw


def train(
    features_train: np.ndarray,
    labels_train: np.ndarray,
    features_val: np.ndarray,
    labels_val: np.ndarray,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    seed: int | None = None,
) -> tuple[ClassifierModel, list[dict[str, float]]]:
    """Mini-batch training with early stopping on the validation metric.

    Keeps the best checkpoint; stops after `patience` epochs without
    improvement. Fully deterministic for a fixed seed.
    """
    if len(features_train) == 0 or len(features_val) == 0:
        raise ValidationError("train and validation splits must be non-empty")
    seed = train_cfg.seeds[0] if seed is None else seed
    labels_train = np.asarray(labels_train, dtype=np.int64)
    labels_val = np.asarray(labels_val, dtype=np.int64)
    model = init_model(features_train.shape[1], loss_cfg, seed, hidden_dim=train_cfg.hidden_dim)
    optimizer = _AdamW(model.params, train_cfg.learning_rate, train_cfg.weight_decay)
    rng = np.random.default_rng(seed + 1)

    best_params = {k: v.copy() for k, v in model.params.items()}
    best_score = -np.inf
    best_metric_value = 0.0
    best_epoch = 0
    log: list[dict[str, float]] = []
    n = len(labels_train)
    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, train_cfg.batch_size):
            batch = order[start:start + train_cfg.batch_size]
            x, y = features_train[batch], labels_train[batch]
            grads = loss_gradient(model, x, y)
            optimizer.step(model.params, grads)
            epoch_loss += batch_loss(model, x, y)
            batches += 1
        score, raw = _validation_score(
            model, features_val, labels_val, train_cfg.early_stopping_metric
        )
        entry = {"epoch": float(epoch), "train_loss": epoch_loss / max(batches, 1), **raw}
        log.append(entry)
        if score > best_score:
            best_score = score
            best_metric_value = raw[train_cfg.early_stopping_metric]
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
        elif epoch - best_epoch > train_cfg.patience:
            break
    model.params = best_params
    model.trained_epochs = len(log)
    model.best_val_metric = float(best_metric_value)
    model.log = log
    return model, log


def predict_probabilities(model: ClassifierModel, features: np.ndarray) -> np.ndarray:
    if len(features) == 0:
        return np.zeros((0, 2))
    probs, _ = _forward_batch(model, features)
    return probs


def predict(
    model: ClassifierModel, features: np.ndarray, example_ids: Sequence[str]
) -> list[Prediction]:
    """One order-preserving Prediction per example; thresholding happens later."""
    probs = predict_probabilities(model, features)
    return [
        Prediction(example_id=example_id, p=(float(p[0]), float(p[1])))
        for example_id, p in zip(example_ids, probs)
    ]


# --- checkpoints --------------------------------------------------------------------


def save_checkpoint(model: ClassifierModel, train_cfg: TrainConfig, path: Path) -> None:
    payload = {
        "feature_dim": model.feature_dim,
        "hidden_dim": model.hidden_dim,
        "params": {k: v.tolist() for k, v in model.params.items()},
        "loss": model.loss_cfg.to_record(),
        "train": train_cfg.to_record(),
        "seed": model.seed,
        "trained_epochs": model.trained_epochs,
        "best_val_metric": model.best_val_metric,
        "log": model.log,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(path: Path) -> tuple[ClassifierModel, TrainConfig]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    loss_cfg = LossConfig(gamma=raw["loss"]["gamma"], alpha=tuple(raw["loss"]["alpha"]))
    train_raw = raw["train"]
    train_cfg = TrainConfig(
        learning_rate=train_raw["learning_rate"],
        batch_size=train_raw["batch_size"],
        max_epochs=train_raw["max_epochs"],
        patience=train_raw["patience"],
        seeds=tuple(train_raw["seeds"]),
        hidden_dim=train_raw["hidden_dim"],
        weight_decay=train_raw["weight_decay"],
        early_stopping_metric=train_raw["early_stopping_metric"],
        encoder_finetune_lr=train_raw["encoder_finetune_lr"],
    )
    model = ClassifierModel(
        params={k: np.asarray(v, dtype=np.float64) for k, v in raw["params"].items()},
        feature_dim=int(raw["feature_dim"]),
        hidden_dim=int(raw["hidden_dim"]),
        loss_cfg=loss_cfg,
        seed=int(raw["seed"]),
        trained_epochs=int(raw["trained_epochs"]),
        best_val_metric=float(raw["best_val_metric"]),
        log=raw.get("log", []),
    )
    return model, train_cfg
