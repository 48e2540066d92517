//! Mapping from failures to process exit codes.

use posekit::Error;

pub const SUCCESS: u8 = 0;
/// Unreadable or malformed input, bad flags or configuration.
pub const INPUT: u8 = 2;
/// The numerics broke down: non-finite loss, collapsed geometry.
pub const NUMERIC: u8 = 3;
/// Inputs that parse but do not line up, e.g. unmatched frame ids.
pub const ALIGNMENT: u8 = 4;

/// Ground truth and predictions that cannot be joined.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct AlignmentError(pub String);

fn classify(e: &Error) -> u8 {
    match e.root() {
        Error::NonFiniteLoss { .. }
        | Error::DegeneratePart { .. }
        | Error::DegenerateBox(_)
        | Error::DegenerateTorso(_)
        | Error::NonPositiveScale { .. }
        | Error::ScaleOutOfBounds { .. }
        | Error::InvalidTransform(_) => NUMERIC,
        Error::LengthMismatch { .. } | Error::TooFewFrames { .. } => ALIGNMENT,
        _ => INPUT,
    }
}

/// Exit code for an error, from the first classifiable cause in its chain.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return classify(e);
        }
        if cause.is::<AlignmentError>() {
            return ALIGNMENT;
        }
    }
    INPUT
}
