//! Target heatmaps on disk.
//!
//! A frame is a directory of single-plane PFM files named after their
//! channels (`core.pfm`, ..., `composite.pfm`). A targets directory holds
//! one such directory per frame, named by frame id; a directory that itself
//! contains PFM files is read as a single frame.

use std::path::Path;

use anyhow::{bail, Context, Result};
use posekit::pfm;
use posekit::template::ChannelLayout;
use posekit::Heatmap;

use crate::output::OutputDir;

/// Writes every channel of `h` under `prefix/`.
pub fn write_frame(out: &mut OutputDir, prefix: &str, h: &Heatmap) -> Result<()> {
    for (c, name) in h.layout.channel_names().into_iter().enumerate() {
        let bytes = pfm::encode(h.width, h.height, h.channel(c))?;
        let rel = if prefix.is_empty() { format!("{name}.pfm") } else { format!("{prefix}/{name}.pfm") };
        out.write(&rel, &bytes)?;
    }
    Ok(())
}

fn has_pfm(dir: &Path) -> Result<bool> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        if entry?.path().extension().is_some_and(|e| e == "pfm") {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Reads one frame directory, choosing the richest layout whose files exist.
fn read_frame(dir: &Path, key: &str, mut out: Option<&mut OutputDir>) -> Result<Heatmap> {
    let present = |name: &str| dir.join(format!("{name}.pfm")).is_file();
    let layout = [ChannelLayout::PartsWithComposite, ChannelLayout::Parts, ChannelLayout::Composite]
        .into_iter()
        .find(|l| l.channel_names().iter().all(|n| present(n)))
        .with_context(|| format!("{}: no complete set of part or composite channels", dir.display()))?;
    let mut size = None;
    let mut channels = Vec::with_capacity(layout.channels());
    for name in layout.channel_names() {
        let path = dir.join(format!("{name}.pfm"));
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        if let Some(out) = out.as_deref_mut() {
            out.record_input(format!("input:{key}/{name}.pfm"), &bytes);
        }
        let plane = pfm::decode(&bytes).with_context(|| format!("decoding {}", path.display()))?;
        match size {
            None => size = Some((plane.width, plane.height)),
            Some(s) if s != (plane.width, plane.height) => bail!(
                "{}: {}x{} does not match {}x{}",
                path.display(),
                plane.width,
                plane.height,
                s.0,
                s.1
            ),
            Some(_) => {}
        }
        channels.push(plane.data);
    }
    let (w, h) = size.expect("layouts have at least one channel");
    Ok(Heatmap::from_channels(w, h, channels)?)
}

/// Reads every frame under `dir`, ordered by frame id.
pub fn read_targets(dir: &Path, mut out: Option<&mut OutputDir>) -> Result<Vec<(String, Heatmap)>> {
    let key = dir.display().to_string();
    if has_pfm(dir)? {
        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "frame".into());
        return Ok(vec![(id, read_frame(dir, &key, out)?)]);
    }
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        bail!("{}: no frame directories or PFM files", dir.display());
    }
    ids.into_iter()
        .map(|id| {
            let h = read_frame(&dir.join(&id), &format!("{key}/{id}"), out.as_deref_mut())?;
            Ok((id, h))
        })
        .collect()
}
