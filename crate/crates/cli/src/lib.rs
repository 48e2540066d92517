//! Commands behind the `posekit` binary.
//!
//! Every command writes its outputs through an [`output::OutputDir`], which
//! hashes each artifact into a [`output::RunManifest`]. Nothing time- or
//! host-dependent is written, so reruns with the same inputs and seed
//! produce identical bytes.

pub mod commands;
pub mod exit;
pub mod output;
pub mod targets;

pub use exit::{exit_code, AlignmentError};
