from harlm.classifiers.base import (
    ClassifierModel,
    DegenerateDataError,
    Normalizer,
    predict,
)
from harlm.classifiers.forest import RandomForestModel, Tree, train_random_forest
from harlm.classifiers.net import FeedForwardModel, train_feedforward
from harlm.classifiers.svm import LinearSvmModel, svm_objective, train_linear_svm

MODEL_ALIASES = {"rf": "RANDOM_FOREST", "svm": "LINEAR_SVM", "dnn": "FEEDFORWARD_NET"}


def train(kind: str, data, seed: int, **kwargs) -> ClassifierModel:
    """Train a baseline by short (rf|svm|dnn) or full kind name."""
    kind = MODEL_ALIASES.get(kind.lower(), kind.upper())
    if kind == "RANDOM_FOREST":
        return train_random_forest(data, seed=seed, **kwargs)
    if kind == "LINEAR_SVM":
        return train_linear_svm(data, seed=seed, **kwargs)
    if kind == "FEEDFORWARD_NET":
        return train_feedforward(data, seed=seed, **kwargs)
    raise ValueError(f"unknown model kind {kind!r}")


load_model = ClassifierModel.load

__all__ = [
    "ClassifierModel",
    "DegenerateDataError",
    "FeedForwardModel",
    "LinearSvmModel",
    "MODEL_ALIASES",
    "Normalizer",
    "RandomForestModel",
    "Tree",
    "load_model",
    "predict",
    "svm_objective",
    "train",
    "train_feedforward",
    "train_linear_svm",
    "train_random_forest",
]
