"""
Automatic language grouping from sentence representations.

- PcaModel / pca_fit / pca_project: covariance eigendecomposition
- GmmModel / gmm_fit_em / gmm_soft_assign: diagonal Gaussian mixture via EM
- mean_pool_embed / EmbeddingBatch: encoder sentence vectors or an imported file
- hard_assign_majority / cluster_report: language-level clusters vs. families
"""

from .errors import ClusterCoverageError, ClusteringDomainError
from .pca import PcaModel, pca_fit, pca_project, pca_reconstruct
from .gmm import GmmModel, gmm_fit_em, gmm_soft_assign
from .pipeline import (
    ClusterReport,
    ClusterResult,
    EmbeddingBatch,
    cluster_languages,
    cluster_report,
    embed_corpora,
    hard_assign_majority,
    language_centroids_2d,
    load_external_embeddings,
    mean_pool_embed,
    save_embeddings,
)

__all__ = [
    'PcaModel',
    'GmmModel',
    'EmbeddingBatch',
    'ClusterReport',
    'ClusterResult',
    'pca_fit',
    'pca_project',
    'pca_reconstruct',
    'gmm_fit_em',
    'gmm_soft_assign',
    'mean_pool_embed',
    'embed_corpora',
    'load_external_embeddings',
    'save_embeddings',
    'hard_assign_majority',
    'cluster_report',
    'cluster_languages',
    'language_centroids_2d',
    'ClusteringDomainError',
    'ClusterCoverageError',
]
