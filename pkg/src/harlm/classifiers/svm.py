"""One-vs-rest linear SVM trained by stochastic subgradient descent."""
from __future__ import annotations

import numpy as np

from harlm import kernels
from harlm.classifiers.base import ClassifierModel, Normalizer, check_trainable
from harlm.dataset import LabeledDataset


class LinearSvmModel(ClassifierModel):
    kind = "LINEAR_SVM"

    def __init__(self, weights: np.ndarray, biases: np.ndarray, **common):
        super().__init__(**common)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.biases = np.asarray(biases, dtype=np.float64)

    def _raw_scores(self, X):
        return X @ self.weights.T + self.biases

    def _params_to_dict(self):
        return {"weights": self.weights.tolist(), "biases": self.biases.tolist()}

    @classmethod
    def _params_from_dict(cls, d, **common):
        return cls(weights=d["weights"], biases=d["biases"], **common)


def ovr_targets(y: np.ndarray, n_classes: int) -> np.ndarray:
    Y = -np.ones((y.size, n_classes))
    Y[np.arange(y.size), y] = 1.0
    return Y


def hinge_objective(W, b, X, Y, lam) -> float:
    """sum over heads of  lam/2 |w_k|^2 + mean_i max(0, 1 - y_ik (w_k.x_i + b_k))."""
    margins = Y * (X @ W.T + b)
    return float(0.5 * lam * (W * W).sum() + np.maximum(0.0, 1.0 - margins).mean(axis=0).sum())


def svm_objective(model: LinearSvmModel, data: LabeledDataset) -> float:
    X = model.normalization(data.features)
    lam = model.hyperparameters["lambda"]
    return hinge_objective(model.weights, model.biases, X, ovr_targets(data.label_indices(), data.n_classes), lam)


def train_linear_svm(
    data: LabeledDataset,
    lam: float = 1e-4,
    epochs: int = 50,
    seed: int = 0,
    eta0: float = 0.01,
) -> LinearSvmModel:
    check_trainable(data)
    norm = Normalizer.fit(data.features)
    X = np.ascontiguousarray(norm(data.features))
    Y = np.ascontiguousarray(ovr_targets(data.label_indices(), data.n_classes))
    W = np.zeros((data.n_classes, X.shape[1]))
    b = np.zeros(data.n_classes)
    rng = np.random.default_rng(seed)
    t = 0
    for _ in range(epochs):
        order = rng.permutation(X.shape[0]).astype(np.int64)
        t = kernels.hinge_sgd(X, Y, W, b, order, lam, eta0, t)
    hp = {"lambda": lam, "epochs": epochs, "eta0": eta0, "seed": seed}
    return LinearSvmModel(
        weights=W,
        biases=b,
        label_vocabulary=data.label_vocabulary,
        feature_names=data.feature_names,
        normalization=norm,
        hyperparameters=hp,
    )
