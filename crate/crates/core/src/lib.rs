//! Template-based 2D human pose fitting.
//!
//! A template of 18 Gaussian body parts is warped by per-part affine
//! transforms, rendered to heatmaps and fitted to targets by gradient
//! descent. Metrics cover keypoint accuracy (PDJ, L2) and limb proportion
//! consistency (BPLP-C).

pub mod coarse2fine;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod pfm;
pub mod template;

pub use coarse2fine::{effective_affines, parameter_count, Mode, Parameterization, PartMapping, TransformSet};
pub use error::{Error, Result};
pub use fit::{
    finite_difference_gradient, fit_frame, fit_sequence, fit_sequence_with_flip_check, generate_synthetic_sequence,
    FitConfig, FitResult, FlipCheck, SyntheticFrame, SyntheticSequenceSpec,
};
pub use geometry::{
    apply, build_constrained, compose, constrained_jacobian, flip_transform, AffineTransform,
    ConstrainedTransformParams, FrameScale, Point2,
};
pub use losses::{
    anchor_loss, boundary_loss, loss_gradient, mse_loss, perceptual_l1, total_loss, FeatureExtractor, LossReport,
    LossWeights, Objective, Perceptual,
};
pub use metrics::{
    bplp, bplp_consistency, flip_annotation, l2_error, pdj, person_diagonal, BplpReport, FrameAnnotation,
    HasKeypoints, Limb, MetricsReport,
};
pub use template::{
    flip_template, load_template, render, transform_template, transform_template_on, Canvas, Heatmap, Keypoint, KeypointSet, Part,
    PoseEstimate, TemplateSpec,
};
