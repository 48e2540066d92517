//! One module per subcommand. Each `run` writes its files and returns a
//! short human-readable summary for stdout.

pub mod augment;
pub mod compare;
pub mod eval;
pub mod fit;
pub mod render;
pub mod synth;

use std::path::Path;

use anyhow::{bail, Context, Result};
use posekit::{Canvas, TemplateSpec};

use crate::output::{read_input, OutputDir};

/// Names accepted by `--template` in place of a file path.
pub const BUILTIN_TEMPLATES: [&str; 2] = ["t_new", "t_orig"];

/// Loads a template from a file, or a built-in one by name when no such
/// file exists.
pub fn load_template_arg(arg: &str, out: Option<&mut OutputDir>) -> Result<TemplateSpec> {
    let path = Path::new(arg);
    if path.is_file() {
        let bytes = read_input(path, out)?;
        let text = String::from_utf8(bytes).with_context(|| format!("{arg}: not UTF-8"))?;
        return posekit::load_template(&text).with_context(|| format!("loading template {arg}"));
    }
    match arg {
        "t_new" => Ok(TemplateSpec::t_new()),
        "t_orig" => Ok(TemplateSpec::t_orig()),
        _ => bail!("template `{arg}` is neither a file nor one of {BUILTIN_TEMPLATES:?}"),
    }
}

/// `--canvas W H`, falling back to `default`.
pub fn canvas_arg(arg: Option<&[u32]>, default: Canvas) -> Result<Canvas> {
    match arg {
        None => Ok(default),
        Some([w, h]) => Ok(Canvas::new(*w, *h)?),
        Some(other) => bail!("--canvas takes two values, got {}", other.len()),
    }
}

/// Parses a JSON file into `T`, reporting schema problems with their location.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, out: Option<&mut OutputDir>) -> Result<T> {
    let bytes = read_input(path, out)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| posekit::Error::Schema(format!("{}: {e}", path.display())))
        .map_err(Into::into)
}
