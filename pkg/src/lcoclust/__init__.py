"""Clustering from pairwise similarity predictions with a learnable clustering objective."""

from ._accel import backend_name
from .clustering import CcnConfig, assign_clusters, best_of_restarts, estimate_ndc, kmeans, train_ccn
from .data import Dataset, GaussianMixtureSpec, gen_gaussian_mixture
from .metrics import acc, hungarian, nmi
from .objective import LcoConfig, dense_batch_loss

__version__ = "0.1.0"

__all__ = [
    "CcnConfig", "Dataset", "GaussianMixtureSpec", "LcoConfig", "acc", "assign_clusters", "backend_name",
    "best_of_restarts", "dense_batch_loss", "estimate_ndc", "gen_gaussian_mixture", "hungarian", "kmeans",
    "nmi", "train_ccn",
]
