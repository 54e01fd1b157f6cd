"""Closed-form Hessian blocks for both models under both losses, full assembly,
and a finite-difference oracle built on the analytic gradient.

Block indices are 0-based. The pair kinds are:
  vv : per-class output blocks (d x d for the linear model, m x m for the MLP)
  ww : per-neuron hidden blocks (m x m grid of d x d matrices)
  wv : cross-layer blocks (d x m), exact two-term form; the leading term alone
       (the single-nonzero-column part) is available separately.

All blocks are weighted Gram matrices accumulated in one pass over samples.
The squared-loss factor 2 is carried everywhere (see models module).
"""

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .models import forward, grad, softmax
from .randkit import Dataset, ModelParams


class IndexOutOfRangeError(IndexError):
    pass


class MemoryBudgetError(RuntimeError):
    pass


class BudgetExceededError(RuntimeError):
    pass


class KinkError(RuntimeError):
    pass


@dataclass
class HessianBlock:
    loss_kind: str
    pair_kind: str  # "vv" | "ww" | "wv"
    i: int
    j: int
    M: np.ndarray
    variant: str = "exact"  # "exact" | "leading" (wv only)


@dataclass
class Layout:
    """Parameter ordering: [w_0 .. w_{m-1} | v_0 .. v_{C-1}] (mlp) or [v_0 .. v_{C-1}]."""

    kind: str
    d: int
    C: int
    m: Optional[int] = None

    @property
    def side(self) -> int:
        if self.kind == "linear":
            return self.C * self.d
        return self.m * self.d + self.C * self.m

    @property
    def n_groups(self) -> int:
        return self.C if self.kind == "linear" else self.m + self.C

    def w_slice(self, i: int) -> slice:
        if self.kind != "mlp" or not (0 <= i < self.m):
            raise IndexOutOfRangeError(f"w index {i} out of range")
        return slice(i * self.d, (i + 1) * self.d)

    def v_slice(self, j: int) -> slice:
        if not (0 <= j < self.C):
            raise IndexOutOfRangeError(f"v index {j} out of range")
        if self.kind == "linear":
            return slice(j * self.d, (j + 1) * self.d)
        off = self.m * self.d
        return slice(off + j * self.m, off + (j + 1) * self.m)

    def groups(self):
        """Yield (name, index, slice) in parameter order."""
        if self.kind == "mlp":
            for i in range(self.m):
                yield ("w", i, self.w_slice(i))
        for j in range(self.C):
            yield ("v", j, self.v_slice(j))

    def to_json_dict(self) -> dict:
        out = {"kind": self.kind, "d": self.d, "C": self.C, "side": self.side}
        if self.kind == "mlp":
            out["m"] = self.m
        return out


@dataclass
class FullHessian:
    H: np.ndarray
    layout: Layout


def layout_of(params: ModelParams, data: Dataset) -> Layout:
    if params.kind == "linear":
        return Layout(kind="linear", d=data.d, C=params.C)
    return Layout(kind="mlp", d=data.d, C=params.C, m=params.m)


def _gram(X: np.ndarray, w: np.ndarray, scale: float) -> np.ndarray:
    return (X * (scale * w)) @ X.T


class _Cache:
    """Per-(params, data, loss) quantities shared by the block formulas."""

    def __init__(self, params: ModelParams, data: Dataset, loss_kind: str):
        self.params = params
        self.data = data
        self.loss_kind = loss_kind
        self.logits, self.act = forward(params, data)
        self.P = softmax(self.logits).P if loss_kind == "ce" else None
        if params.kind == "mlp":
            V = params.V
            if loss_kind == "ce":
                self.T = V.T @ self.P          # m x N: sum_c p_nc V_ci
                self.S2 = (V**2).T @ self.P    # m x N: sum_c p_nc V_ci^2
            else:
                self.R = self.logits - data.onehot  # residual f - y


def _check_idx(i: int, hi: int) -> None:
    if not (0 <= i < hi):
        raise IndexOutOfRangeError(f"index {i} not in [0, {hi})")


def hessian_block_linear(params: ModelParams, data: Dataset, loss_kind: str, i: int, j: int,
                         cache: Optional[_Cache] = None) -> HessianBlock:
    """Linear-model block d^2 loss / dv_i dv_j^T (d x d)."""
    _check_idx(i, params.C)
    _check_idx(j, params.C)
    X, N = data.X, data.N
    if loss_kind == "mse":
        M = (2.0 / N) * (X @ X.T) if i == j else np.zeros((data.d, data.d))
        return HessianBlock("mse", "vv", i, j, M)
    c = cache or _Cache(params, data, "ce")
    P = c.P
    w = P[i] * (1.0 - P[i]) if i == j else -P[i] * P[j]
    return HessianBlock("ce", "vv", i, j, _gram(X, w, 1.0 / N))


def hessian_block_mlp_ww(params: ModelParams, data: Dataset, loss_kind: str, i: int, j: int,
                         cache: Optional[_Cache] = None) -> HessianBlock:
    """Hidden-layer block d^2 loss / dw_i dw_j^T (d x d)."""
    _check_idx(i, params.m)
    _check_idx(j, params.m)
    c = cache or _Cache(params, data, loss_kind)
    X, N = data.X, data.N
    mask = c.act.mask
    V = params.V
    if loss_kind == "mse":
        pref = float(V[:, i] @ V[:, j])
        w = mask[i] if i == j else mask[i] * mask[j]
        return HessianBlock("mse", "ww", i, j, _gram(X, w, 2.0 * pref / N))
    if i == j:
        w = (c.S2[i] - c.T[i] ** 2) * mask[i]
    else:
        s2ij = (V[:, i] * V[:, j]) @ c.P
        w = (s2ij - c.T[i] * c.T[j]) * mask[i] * mask[j]
    return HessianBlock("ce", "ww", i, j, _gram(X, w, 1.0 / N))


def hessian_block_mlp_vv(params: ModelParams, data: Dataset, loss_kind: str, i: int, j: int,
                         cache: Optional[_Cache] = None) -> HessianBlock:
    """Output-layer block d^2 loss / dv_i dv_j^T (m x m)."""
    _check_idx(i, params.C)
    _check_idx(j, params.C)
    c = cache or _Cache(params, data, loss_kind)
    A, N = c.act.A, data.N
    if loss_kind == "mse":
        M = (2.0 / N) * (A @ A.T) if i == j else np.zeros((params.m, params.m))
        return HessianBlock("mse", "vv", i, j, M)
    w = c.P[i] * (1.0 - c.P[i]) if i == j else -c.P[i] * c.P[j]
    return HessianBlock("ce", "vv", i, j, _gram(A, w, 1.0 / N))


def hessian_block_mlp_wv(params: ModelParams, data: Dataset, loss_kind: str, i: int, j: int,
                         leading_only: bool = False, cache: Optional[_Cache] = None) -> HessianBlock:
    """Cross-layer block d^2 loss / dw_i dv_j^T (d x m).

    The leading term is the rank-style part with a single nonzero column at
    position i; leading_only returns it alone for the circulant analysis.
    """
    _check_idx(i, params.m)
    _check_idx(j, params.C)
    c = cache or _Cache(params, data, loss_kind)
    X, N = data.X, data.N
    mask_i = c.act.mask[i]
    A = c.act.A
    if loss_kind == "mse":
        fac = 2.0
        c1 = (c.logits[j] - data.onehot[j]) * mask_i
        c2 = params.V[j, i] * mask_i
    else:
        fac = 1.0
        c1 = (c.P[j] - data.onehot[j]) * mask_i
        c2 = c.P[j] * (params.V[j, i] - c.T[i]) * mask_i
    M = np.zeros((data.d, params.m))
    M[:, i] = (fac / N) * (X @ c1)
    if leading_only:
        return HessianBlock(loss_kind, "wv", i, j, M, variant="leading")
    M += (fac / N) * ((X * c2) @ A.T)
    return HessianBlock(loss_kind, "wv", i, j, M, variant="exact")


def iter_hessian_blocks(params: ModelParams, data: Dataset, loss_kind: str) -> Iterator[HessianBlock]:
    """Stream all upper-triangle blocks without materializing the full matrix."""
    c = _Cache(params, data, loss_kind)
    if params.kind == "linear":
        for i in range(params.C):
            for j in range(i, params.C):
                yield hessian_block_linear(params, data, loss_kind, i, j, cache=c)
        return
    for i in range(params.m):
        for j in range(i, params.m):
            yield hessian_block_mlp_ww(params, data, loss_kind, i, j, cache=c)
    for i in range(params.C):
        for j in range(i, params.C):
            yield hessian_block_mlp_vv(params, data, loss_kind, i, j, cache=c)
    for i in range(params.m):
        for j in range(params.C):
            yield hessian_block_mlp_wv(params, data, loss_kind, i, j, cache=c)


def assemble_full_hessian(params: ModelParams, data: Dataset, loss_kind: str,
                          max_side: int = 5000) -> FullHessian:
    """Dense symmetric Hessian over the declared parameter layout."""
    layout = layout_of(params, data)
    if layout.side > max_side:
        raise MemoryBudgetError(
            f"side {layout.side} exceeds cap {max_side}; raise max_side or stream blocks"
        )
    H = np.zeros((layout.side, layout.side))
    for blk in iter_hessian_blocks(params, data, loss_kind):
        if blk.pair_kind == "ww":
            ri, rj = layout.w_slice(blk.i), layout.w_slice(blk.j)
        elif blk.pair_kind == "vv":
            ri, rj = layout.v_slice(blk.i), layout.v_slice(blk.j)
        else:
            ri, rj = layout.w_slice(blk.i), layout.v_slice(blk.j)
        H[ri, rj] = blk.M
        if ri != rj:
            H[rj, ri] = blk.M.T
    return FullHessian(H=H, layout=layout)


def _flatten(params: ModelParams) -> np.ndarray:
    if params.kind == "linear":
        return params.V.reshape(-1).copy()
    return np.concatenate([params.W.reshape(-1), params.V.reshape(-1)])


def _unflatten(theta: np.ndarray, like: ModelParams) -> ModelParams:
    if like.kind == "linear":
        return ModelParams(kind="linear", V=theta.reshape(like.V.shape).copy())
    nw = like.W.size
    W = theta[:nw].reshape(like.W.shape).copy()
    V = theta[nw:].reshape(like.V.shape).copy()
    return ModelParams(kind="mlp", V=V, W=W)


def relu_margin(params: ModelParams, data: Dataset) -> float:
    """Smallest |w_i^T x_n|; the Hessian is discontinuous where this hits 0."""
    if params.kind != "mlp":
        return np.inf
    return float(np.abs(params.W @ data.X).min())


def fd_hessian_oracle(params: ModelParams, data: Dataset, loss_kind: str,
                      step: float = 1e-5, max_params: int = 2000,
                      min_relu_margin: float = 1e-6) -> FullHessian:
    """Central differences of the analytic gradient, symmetrized.

    Column k uses step h_k = step * (1 + |theta_k|). Points too close to a
    ReLU kink are rejected; resample the instance instead of loosening this.
    """
    layout = layout_of(params, data)
    theta = _flatten(params)
    if theta.size > max_params:
        raise BudgetExceededError(f"{theta.size} parameters exceed oracle budget {max_params}")
    if relu_margin(params, data) < min_relu_margin:
        raise KinkError("test point is within min_relu_margin of a ReLU kink")
    H = np.empty((theta.size, theta.size))
    for k in range(theta.size):
        h = step * (1.0 + abs(theta[k]))
        tp = theta.copy()
        tp[k] += h
        tm = theta.copy()
        tm[k] -= h
        gp = _flatten(grad(_unflatten(tp, params), data, loss_kind))
        gm = _flatten(grad(_unflatten(tm, params), data, loss_kind))
        H[:, k] = (gp - gm) / (2.0 * h)
    H = 0.5 * (H + H.T)
    return FullHessian(H=H, layout=layout)


def block_fro_sq(M: np.ndarray) -> float:
    return float((M * M).sum())
