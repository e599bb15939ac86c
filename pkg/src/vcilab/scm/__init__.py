from .blob import blob_attributes, blob_attributes_batch, render_blob, render_blobs
from .generate import (
    TrueMarginal,
    blob_image_spec,
    discrete_spec,
    generate_dataset,
    holdout_strata,
    linear_gaussian_spec,
    nonlinear_vector_spec,
    random_discrete_scm,
    substream,
    true_marginal,
)
from .io import DatasetFormatError, file_sha256, read_dataset, read_metadata, read_spec, write_dataset
from .spec import ArrayData, DiscreteScm, FullSample, InvalidSpecError, ScmSpec, TreatmentSpace

__all__ = [
    "ArrayData",
    "DatasetFormatError",
    "DiscreteScm",
    "FullSample",
    "InvalidSpecError",
    "ScmSpec",
    "TreatmentSpace",
    "TrueMarginal",
    "blob_attributes",
    "blob_attributes_batch",
    "blob_image_spec",
    "discrete_spec",
    "file_sha256",
    "generate_dataset",
    "holdout_strata",
    "linear_gaussian_spec",
    "nonlinear_vector_spec",
    "random_discrete_scm",
    "read_dataset",
    "read_metadata",
    "read_spec",
    "render_blob",
    "render_blobs",
    "substream",
    "true_marginal",
    "write_dataset",
]
