"""hesslab: exact Hessian blocks of small classifiers and their random-matrix limits."""

__version__ = "0.1.0"

from .randkit import RngStream, Dataset, ModelParams, gen_gaussian_dataset, gen_cluster_dataset, lecun_init

__all__ = [
    "RngStream",
    "Dataset",
    "ModelParams",
    "gen_gaussian_dataset",
    "gen_cluster_dataset",
    "lecun_init",
    "__version__",
]
