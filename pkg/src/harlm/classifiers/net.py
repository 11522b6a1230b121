"""Fully connected ReLU network with a softmax cross-entropy head."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from harlm.classifiers.base import ClassifierModel, Normalizer, check_trainable
from harlm.dataset import LabeledDataset

Params = list[tuple[np.ndarray, np.ndarray]]


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: Params, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits plus the list of layer inputs (for backprop)."""
    acts = [X]
    h = X
    for i, (W, b) in enumerate(params):
        z = h @ W + b
        if i < len(params) - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    return h, acts


def loss_and_grads(params: Params, X: np.ndarray, y: np.ndarray) -> tuple[float, Params]:
    """Mean cross-entropy over the batch and its gradient w.r.t. every (W, b)."""
    logits, acts = forward(params, X)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = X.shape[0]
    loss = float(-logp[np.arange(n), y].mean())
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads: Params = [None] * len(params)  # type: ignore[list-item]
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ W.T) * (acts[i] > 0)
    return loss, grads


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> Params:
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params.append((W, np.zeros(fan_out)))
    return params


class FeedForwardModel(ClassifierModel):
    kind = "FEEDFORWARD_NET"

    def __init__(self, params: Params, **common):
        super().__init__(**common)
        self.params = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)) for W, b in params]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.params[0][0].shape[0]] + [W.shape[1] for W, _ in self.params]

    def _raw_scores(self, X):
        return softmax(forward(self.params, X)[0])

    def _params_to_dict(self):
        return {
            "layer_sizes": self.layer_sizes,
            "weights": [W.tolist() for W, _ in self.params],
            "biases": [b.tolist() for _, b in self.params],
        }

    @classmethod
    def _params_from_dict(cls, d, **common):
        sizes = d["layer_sizes"]
        params = []
        for i, (W, b) in enumerate(zip(d["weights"], d["biases"])):
            W = np.asarray(W, dtype=np.float64).reshape(sizes[i], sizes[i + 1])
            params.append((W, np.asarray(b, dtype=np.float64)))
        return cls(params=params, **common)


def train_feedforward(
    data: LabeledDataset,
    hidden: Sequence[int] = (128, 64),
    lr: float = 1e-3,
    epochs: int = 30,
    seed: int = 0,
    batch_size: int = 64,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> FeedForwardModel:
    """Mini-batch training with Adam updates on z-normalised inputs."""
    check_trainable(data)
    norm = Normalizer.fit(data.features)
    X = norm(data.features)
    y = data.label_indices()
    rng = np.random.default_rng(seed)
    sizes = [X.shape[1], *hidden, data.n_classes]
    params = init_params(sizes, rng)
    m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    t = 0
    n = X.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for a in range(0, n, batch_size):
            sel = order[a : a + batch_size]
            _, grads = loss_and_grads(params, X[sel], y[sel])
            t += 1
            c1 = 1.0 - beta1**t
            c2 = 1.0 - beta2**t
            new = []
            for i, ((W, b), (gW, gb)) in enumerate(zip(params, grads)):
                mW = beta1 * m[i][0] + (1 - beta1) * gW
                mb = beta1 * m[i][1] + (1 - beta1) * gb
                vW = beta2 * v[i][0] + (1 - beta2) * gW * gW
                vb = beta2 * v[i][1] + (1 - beta2) * gb * gb
                m[i], v[i] = (mW, mb), (vW, vb)
                W = W - lr * (mW / c1) / (np.sqrt(vW / c2) + eps)
                b = b - lr * (mb / c1) / (np.sqrt(vb / c2) + eps)
                new.append((W, b))
            params = new
    hp = {"hidden": list(hidden), "lr": lr, "epochs": epochs, "batch_size": batch_size, "optimizer": "adam", "seed": seed}
    return FeedForwardModel(
        params=params,
        label_vocabulary=data.label_vocabulary,
        feature_names=data.feature_names,
        normalization=norm,
        hyperparameters=hp,
    )
