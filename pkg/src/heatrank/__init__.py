"""heatrank: heat-diffusion feature weighting and re-ranked cosine retrieval."""

from .aggregation import DEFAULT_ALPHA, ImageVector, aggregate, hew_vector, suma_vector
from .diffusion import (
    DiffusionConfig,
    SimilarityMatrix,
    heat_weights,
    similarity_matrix,
    system_matrix,
    temperatures_fast,
    temperatures_naive,
)
from .evaluation import (
    GroundTruth,
    average_precision,
    load_groundtruth,
    mean_average_precision,
)
from .retrieval import (
    DEFAULT_N_QE,
    DEFAULT_TOPK,
    Index,
    RankedResult,
    build_index,
    expand_query,
    full_query,
    load_index,
    rerank_heat,
    save_index,
    search,
    temperature_gains,
)
from .tensor_io import (
    FeatureSet,
    FeatureTensor,
    flatten,
    read_feature_tensor,
    write_feature_tensor,
)
from .whitening import PcaModel, fit_pca, load_pca, save_pca, transform

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_ALPHA",
    "DEFAULT_N_QE",
    "DEFAULT_TOPK",
    "DiffusionConfig",
    "FeatureSet",
    "FeatureTensor",
    "GroundTruth",
    "ImageVector",
    "Index",
    "PcaModel",
    "RankedResult",
    "SimilarityMatrix",
    "aggregate",
    "average_precision",
    "build_index",
    "expand_query",
    "fit_pca",
    "flatten",
    "full_query",
    "heat_weights",
    "hew_vector",
    "load_groundtruth",
    "load_index",
    "load_pca",
    "mean_average_precision",
    "read_feature_tensor",
    "rerank_heat",
    "save_index",
    "save_pca",
    "search",
    "similarity_matrix",
    "suma_vector",
    "system_matrix",
    "temperature_gains",
    "temperatures_fast",
    "temperatures_naive",
    "transform",
    "write_feature_tensor",
]
