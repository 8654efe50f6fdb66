//! Illumination-robust face recognition from Radon cumulative distribution
//! transforms of image-gradient patches.
//!
//! Each patch of an image gradient field is treated as a point cloud in the
//! plane, mapped to its sliced transport representation, and classified by
//! distance to per-class, per-patch linear subspaces. Affine intensity
//! changes of a patch act on the representation as a two-parameter linear
//! deformation, which the subspaces absorb.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod features;
pub mod illumination;
pub mod io;
pub mod oracle;
pub mod subspace;
pub mod synthetic;
pub mod transport;

pub use error::{Error, Result};
pub use features::{
    build_patch_grid, compute_gradient, extract_features, log_preprocess, FeatureConfig,
    FeatureExtractor, FeatureSet, GradientField, GrayImage, PatchGrid, PatchRect, PixelSelection,
};
pub use illumination::{
    apply_global_illumination, apply_patch_illumination, sample_illumination,
    GlobalIlluminationParams, IlluminatedImage, Interval, PatchIlluminationParams, SamplingRanges,
};
pub use subspace::{
    build_spanning_set, classify, select_components, subspace_distance, train_model,
    train_subspace, ClassSubspaces, ClassificationResult, DeformationSpanningSet, RankRule,
    SubjectPatchSubspace, TrainedModel,
};
pub use transport::{
    discrete_cdt, discrete_rcdt, flatten, push_forward_1d, push_forward_affine_2d,
    sliced_wasserstein, wasserstein_1d, AffineDeformation, AngleGrid, CdtVector, Distribution1D,
    Distribution2D, MonotoneMap1D, RcdtRepresentation,
};
