"""Forward pass, softmax, losses, and analytic gradients for the two model families.

Conventions: features are columns of X (d x N); the linear model is f(x) = Vx,
the MLP is f(x) = V relu(Wx). The squared loss is mean_n ||f(x_n) - y_n||^2 and
its factor 2 is kept in every derivative. The ReLU mask uses the strict
inequality Wx > 0.
"""

from dataclasses import dataclass

import numpy as np

from .randkit import Dataset, ModelParams

LOSS_KINDS = ("mse", "ce")


class ShapeMismatchError(ValueError):
    pass


class NonFiniteInputError(ValueError):
    pass


@dataclass
class Activations:
    Z: np.ndarray      # pre-activations W X, m x N
    A: np.ndarray      # relu(Z)
    mask: np.ndarray   # float {0,1}, 1 where Z > 0


@dataclass
class SoftmaxProbs:
    P: np.ndarray  # C x N, columns sum to 1

    def validate(self, tol: float = 1e-12) -> None:
        if np.abs(self.P.sum(axis=0) - 1.0).max() > tol:
            raise ValueError("softmax columns must sum to 1")
        if self.P.min() <= 0.0 or self.P.max() >= 1.0:
            raise ValueError("softmax entries must lie strictly in (0,1)")


@dataclass
class LossValue:
    loss_kind: str
    value: float


def _check_shapes(params: ModelParams, data: Dataset) -> None:
    params.validate()
    if params.kind == "linear":
        if params.V.shape[1] != data.d:
            raise ShapeMismatchError(f"V has {params.V.shape[1]} columns, data dim is {data.d}")
    else:
        if params.W.shape[1] != data.d:
            raise ShapeMismatchError(f"W has {params.W.shape[1]} columns, data dim is {data.d}")
    if params.C != data.C:
        raise ShapeMismatchError(f"params have C={params.C}, data has C={data.C}")


def forward(params: ModelParams, data: Dataset):
    """Return (logits C x N, activations or None)."""
    _check_shapes(params, data)
    if params.kind == "linear":
        return params.V @ data.X, None
    Z = params.W @ data.X
    mask = (Z > 0).astype(np.float64)
    A = Z * mask
    return params.V @ A, Activations(Z=Z, A=A, mask=mask)


def softmax(logits: np.ndarray) -> SoftmaxProbs:
    """Column-wise max-subtracted softmax."""
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInputError("logits must be finite")
    shifted = logits - logits.max(axis=0, keepdims=True)
    E = np.exp(shifted)
    return SoftmaxProbs(P=E / E.sum(axis=0, keepdims=True))


def _log_probs(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def loss(params: ModelParams, data: Dataset, loss_kind: str) -> LossValue:
    """mse: (1/N) sum ||f - y||^2;  ce: -(1/N) sum log p_{n, y_n}."""
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    logits, _ = forward(params, data)
    N = data.N
    if loss_kind == "mse":
        R = logits - data.onehot
        return LossValue("mse", float((R * R).sum() / N))
    logp = _log_probs(logits)
    return LossValue("ce", float(-logp[data.labels, np.arange(N)].mean()))


def grad(params: ModelParams, data: Dataset, loss_kind: str) -> ModelParams:
    """Exact analytic gradient, packaged with the same shapes as params."""
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    logits, act = forward(params, data)
    N = data.N
    if loss_kind == "mse":
        D = 2.0 * (logits - data.onehot) / N
    else:
        D = (softmax(logits).P - data.onehot) / N
    if params.kind == "linear":
        return ModelParams(kind="linear", V=D @ data.X.T)
    gV = D @ act.A.T
    gW = ((params.V.T @ D) * act.mask) @ data.X.T
    return ModelParams(kind="mlp", V=gV, W=gW)
