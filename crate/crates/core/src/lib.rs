//! Similarity measures between labeled 3D atom clouds, built around
//! convolution kernels maximized over rigid motions, for comparing protein
//! binding pockets and predicting their ligands.
//!
//! The pieces, bottom up:
//!
//! - [`geometry`] — atom clouds, rigid transforms, the Gaussian convolution
//!   kernel and its analytic gradient, inertia-ellipsoid summaries.
//! - [`align`] — multi-start gradient ascent maximizing the kernel over
//!   rotations and translations (the sup-CK score).
//! - [`measures`] — the measure family: sup-CK, its label-weighted variant,
//!   ellipsoid baselines (Vol, Princ-Axis), the overlap index sup-PI, and
//!   the kernel/volume combination.
//! - [`pdb`] — fixed-column structure parsing, pocket extraction around a
//!   bound ligand, partial-charge labeling from a parameter table.
//! - [`eval`] — per-query AUC, KNN prediction, leave-one-out double
//!   cross-validation.
//! - [`kpca`] — kernel PCA on (possibly indefinite) similarity matrices.
//! - [`io`] — the CSV/JSON file formats shared with the CLI.

pub mod align;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod kpca;
pub mod matching;
pub mod measures;
pub mod pdb;

pub use align::{gradient_ascent, initial_transforms, sup_ck, AlignConfig, AlignResult};
pub use error::{Error, Result};
pub use eval::{
    auc_for_query, auc_report, knn_predict, loo_double_cv, loo_double_cv_matrices,
    loo_double_cv_sets, loo_knn_error, similarity_matrix, EvalReport, HyperGrid, PocketSet,
    SimilarityMatrix,
};
pub use geometry::{
    ck_distance, ellipsoid_summary, kernel_ck, kernel_gradient, Atom, AtomCloud, AtomMeta,
    EllipsoidSummary, RigidTransform,
};
pub use kpca::{kpca_project, Projection};
pub use measures::{MeasureConfig, MeasureKind, Orientation};
pub use pdb::{
    extract_ligand, extract_pocket, parse_structure, ChargeTable, ExtractionConfig,
    MissingChargePolicy, Structure,
};
