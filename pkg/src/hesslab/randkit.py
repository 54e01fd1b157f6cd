"""Deterministic random streams, synthetic datasets, and weight initialization.

Every stochastic operation in this package is driven by an RngStream, a
counter-based generator keyed by (root_seed, stream_label). Derived streams
get fresh keys, so parallel trials produce identical results under any
schedule.
"""

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

_MASK64 = (1 << 64) - 1


class InvalidDimensionError(ValueError):
    pass


class InvalidConfigError(ValueError):
    pass


def _label_key(label: str) -> int:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (root_seed, stream_label).

    Streams with identical keys replay identical sequences on any machine or
    thread count; distinct labels give statistically independent streams.
    `counter` is the starting Philox block offset (for resuming a stream);
    independent work should use `child`, never counter offsets.
    """

    root_seed: int
    stream_label: str = "root"
    counter: int = 0

    def generator(self) -> np.random.Generator:
        bitgen = np.random.Philox(
            key=[self.root_seed & _MASK64, _label_key(self.stream_label)],
            counter=[self.counter & _MASK64, 0, 0, 0],
        )
        return np.random.Generator(bitgen)

    def child(self, suffix: str) -> "RngStream":
        """Derive an independent stream; suffixes accumulate in the label."""
        return RngStream(self.root_seed, f"{self.stream_label}/{suffix}")


@dataclass
class Dataset:
    """Feature matrix X (d x N, samples as columns), labels, and one-hot targets."""

    X: np.ndarray
    labels: np.ndarray
    onehot: np.ndarray

    @property
    def d(self) -> int:
        return self.X.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[1]

    @property
    def C(self) -> int:
        return self.onehot.shape[0]

    def validate(self) -> None:
        d, N = self.X.shape
        C = self.onehot.shape[0]
        if d < 1 or N < 1 or C < 2:
            raise InvalidDimensionError(f"need d,N >= 1 and C >= 2, got d={d} N={N} C={C}")
        if self.labels.shape != (N,) or self.onehot.shape != (C, N):
            raise InvalidDimensionError("labels/onehot shapes disagree with X")
        if self.labels.min() < 0 or self.labels.max() >= C:
            raise InvalidDimensionError("labels out of range")
        cols = self.onehot.sum(axis=0)
        if not np.all(cols == 1.0):
            raise InvalidDimensionError("each one-hot column must contain exactly one 1")
        if not np.all(self.onehot[self.labels, np.arange(N)] == 1.0):
            raise InvalidDimensionError("one-hot rows disagree with labels")


@dataclass
class ModelParams:
    """Linear weights V (C x d) or MLP weights W (m x d), V (C x m)."""

    kind: str  # "linear" | "mlp"
    V: np.ndarray
    W: Optional[np.ndarray] = None

    @property
    def C(self) -> int:
        return self.V.shape[0]

    @property
    def m(self) -> int:
        if self.kind != "mlp":
            raise InvalidConfigError("m is only defined for mlp params")
        return self.W.shape[0]

    def validate(self) -> None:
        if self.kind == "linear":
            if self.W is not None:
                raise InvalidConfigError("linear params must not carry W")
        elif self.kind == "mlp":
            if self.W is None or self.W.shape[0] < 1:
                raise InvalidConfigError("mlp params need W with m >= 1")
            if self.V.shape[1] != self.W.shape[0]:
                raise InvalidConfigError("V columns must equal hidden width m")
        else:
            raise InvalidConfigError(f"unknown model kind {self.kind!r}")


def _onehot(labels: np.ndarray, C: int) -> np.ndarray:
    Y = np.zeros((C, labels.size))
    Y[labels, np.arange(labels.size)] = 1.0
    return Y


def gen_gaussian_dataset(d: int, N: int, C: int, rng: RngStream, label_policy: str = "uniform") -> Dataset:
    """i.i.d. standard Gaussian features with uniform (or block-cyclic) labels.

    label_policy "cyclic" reproduces the per-class block assignment of the
    reference generator (class c labels samples [c*N//C, (c+1)*N//C)); labels
    never enter any initialization-Hessian weight, so either policy is valid.
    """
    if d < 1 or N < 1 or C < 2:
        raise InvalidDimensionError(f"need d,N >= 1 and C >= 2, got d={d} N={N} C={C}")
    gen = rng.generator()
    X = gen.standard_normal((d, N))
    if label_policy == "uniform":
        labels = gen.integers(0, C, size=N)
    elif label_policy == "cyclic":
        per = max(N // C, 1)
        labels = np.minimum(np.arange(N) // per, C - 1)
    else:
        raise InvalidConfigError(f"unknown label policy {label_policy!r}")
    ds = Dataset(X=X, labels=labels.astype(np.int64), onehot=_onehot(labels, C))
    ds.validate()
    return ds


def gen_cluster_dataset(
    n_total: int,
    n_classes: int,
    n_clusters: int,
    d: int,
    noise_scale: float = 0.05,
    rng: RngStream = None,
    return_centers: bool = False,
):
    """Clustered data with centers on a radius-5 circle (d=2) or the unit sphere (d>2).

    Each class owns n_clusters // n_classes clusters; each cluster contributes
    n_total // n_clusters samples of isotropic Gaussian noise around its center.
    With return_centers, also returns the d x K center matrix.
    """
    if n_classes > n_clusters:
        raise InvalidConfigError(f"n_classes={n_classes} exceeds n_clusters={n_clusters}")
    if d < 2:
        raise InvalidDimensionError("cluster data needs d >= 2")
    if n_classes < 2:
        raise InvalidDimensionError("need n_classes >= 2")
    per_class = n_clusters // n_classes
    per_cluster = n_total // n_clusters
    if per_class < 1 or per_cluster < 1:
        raise InvalidConfigError("n_total and n_clusters leave an empty class or cluster")
    gen = rng.generator()
    cols = []
    labels = []
    centers = []
    cluster_idx = 0
    for class_idx in range(n_classes):
        for _ in range(per_class):
            cluster_idx += 1
            if d == 2:
                angle = 2.0 * np.pi * cluster_idx / n_clusters
                center = 5.0 * np.array([np.cos(angle), np.sin(angle)])
            else:
                center = gen.standard_normal(d)
                center /= np.linalg.norm(center)
            pts = gen.standard_normal((d, per_cluster)) * noise_scale + center[:, None]
            cols.append(pts)
            centers.append(center)
            labels.extend([class_idx] * per_cluster)
    X = np.concatenate(cols, axis=1)
    labels = np.asarray(labels, dtype=np.int64)
    ds = Dataset(X=X, labels=labels, onehot=_onehot(labels, n_classes))
    ds.validate()
    if return_centers:
        return ds, np.stack(centers, axis=1)
    return ds


def lecun_init(kind: str, d: int, m: Optional[int], C: int, rng: RngStream) -> ModelParams:
    """Fan-in Gaussian init: Var = 1/d for first-layer rows, 1/m for output rows."""
    if C < 2 or d < 1:
        raise InvalidDimensionError(f"need C >= 2 and d >= 1, got C={C} d={d}")
    gen = rng.generator()
    if kind == "linear":
        V = gen.standard_normal((C, d)) / np.sqrt(d)
        return ModelParams(kind="linear", V=V)
    if kind == "mlp":
        if m is None or m < 1:
            raise InvalidDimensionError("mlp init needs m >= 1")
        W = gen.standard_normal((m, d)) / np.sqrt(d)
        V = gen.standard_normal((C, m)) / np.sqrt(m)
        return ModelParams(kind="mlp", V=V, W=W)
    raise InvalidConfigError(f"unknown model kind {kind!r}")
