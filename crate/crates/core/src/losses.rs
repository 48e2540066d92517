//! Reconstruction, anchor and boundary losses and their gradients with respect
//! to the transform parameters.
//!
//! The rendered prediction and the target must share a channel layout. For
//! layouts with a composite channel, the gradient of a composite pixel flows
//! to the part that attains the maximum there (lowest index on ties).

use serde::{Deserialize, Serialize};

use crate::coarse2fine::{backprop_effective, effective_affines, PartMapping, TransformSet};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::template::{
    gaussian_with_partials, render, transform_template_on, Canvas, ChannelLayout, Endpoint, GaussianShape, Heatmap,
    PoseEstimate, RenderOptions, TemplateSpec, PART_COUNT,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Anchor weight.
    pub lambda1: f64,
    /// Boundary weight.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 0.5, lambda2: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.lambda1) && ok(self.lambda2) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "loss weights must be finite and non-negative, got ({}, {})",
                self.lambda1, self.lambda2
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub recon: f64,
    pub anchor: f64,
    pub boundary: f64,
    pub total: f64,
}

impl LossReport {
    pub fn combine(recon: f64, anchor: f64, boundary: f64, w: &LossWeights) -> Self {
        LossReport {
            recon,
            anchor,
            boundary,
            total: recon + w.lambda1 * anchor + w.lambda2 * boundary,
        }
    }
}

/// Maps a heatmap to a feature vector for the perceptual term.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &'static str;

    fn extract(&self, h: &Heatmap) -> Vec<f64>;

    /// Pulls a gradient on the features back to the heatmap values
    /// (same indexing as [`Heatmap::data`]).
    fn vjp(&self, h: &Heatmap, grad_features: &[f64]) -> Vec<f64>;
}

/// The heatmap values themselves.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityFeatures;

impl FeatureExtractor for IdentityFeatures {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn extract(&self, h: &Heatmap) -> Vec<f64> {
        h.data.clone()
    }

    fn vjp(&self, _h: &Heatmap, grad_features: &[f64]) -> Vec<f64> {
        grad_features.to_vec()
    }
}

/// Each channel at full, half and quarter resolution (2×2 average pooling;
/// an odd trailing row or column is dropped).
#[derive(Clone, Copy, Debug, Default)]
pub struct PyramidFeatures;

pub const PYRAMID_LEVELS: usize = 3;

fn pool2(src: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (w2, h2) = (w / 2, h / 2);
    let mut out = vec![0.0; w2 * h2];
    for y in 0..h2 {
        for x in 0..w2 {
            let i = 2 * y * w + 2 * x;
            out[y * w2 + x] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
        }
    }
    (out, w2, h2)
}

fn unpool2(grad: &[f64], w: usize, h: usize) -> Vec<f64> {
    let (w2, h2) = (w / 2, h / 2);
    let mut out = vec![0.0; w * h];
    for y in 0..h2 {
        for x in 0..w2 {
            let g = 0.25 * grad[y * w2 + x];
            let i = 2 * y * w + 2 * x;
            out[i] += g;
            out[i + 1] += g;
            out[i + w] += g;
            out[i + w + 1] += g;
        }
    }
    out
}

impl FeatureExtractor for PyramidFeatures {
    fn name(&self) -> &'static str {
        "pyramid"
    }

    fn extract(&self, h: &Heatmap) -> Vec<f64> {
        let mut out = Vec::new();
        for c in 0..h.channels() {
            let (mut level, mut w, mut ht) = (h.channel(c).to_vec(), h.width, h.height);
            out.extend_from_slice(&level);
            for _ in 1..PYRAMID_LEVELS {
                (level, w, ht) = pool2(&level, w, ht);
                out.extend_from_slice(&level);
            }
        }
        out
    }

    fn vjp(&self, h: &Heatmap, grad_features: &[f64]) -> Vec<f64> {
        let mut sizes = vec![(h.width, h.height)];
        for _ in 1..PYRAMID_LEVELS {
            let (w, ht) = *sizes.last().expect("non-empty");
            sizes.push((w / 2, ht / 2));
        }
        let per_channel: usize = sizes.iter().map(|(w, ht)| w * ht).sum();
        let mut out = Vec::with_capacity(h.data.len());
        for c in 0..h.channels() {
            let feats = &grad_features[c * per_channel..(c + 1) * per_channel];
            let mut offsets = Vec::with_capacity(PYRAMID_LEVELS);
            let mut o = 0;
            for (w, ht) in &sizes {
                offsets.push(o);
                o += w * ht;
            }
            // Walk from the coarsest level down, adding each level's own gradient.
            let (wl, hl) = sizes[PYRAMID_LEVELS - 1];
            let mut acc = feats[offsets[PYRAMID_LEVELS - 1]..][..wl * hl].to_vec();
            for l in (0..PYRAMID_LEVELS - 1).rev() {
                let (w, ht) = sizes[l];
                let mut down = unpool2(&acc, w, ht);
                for (d, g) in down.iter_mut().zip(&feats[offsets[l]..offsets[l] + w * ht]) {
                    *d += g;
                }
                acc = down;
            }
            out.extend_from_slice(&acc);
        }
        out
    }
}

/// Built-in perceptual feature extractors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perceptual {
    Identity,
    Pyramid,
}

impl Perceptual {
    pub fn extractor(self) -> &'static dyn FeatureExtractor {
        match self {
            Perceptual::Identity => &IdentityFeatures,
            Perceptual::Pyramid => &PyramidFeatures,
        }
    }
}

impl std::str::FromStr for Perceptual {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Perceptual::Identity),
            "pyramid" => Ok(Perceptual::Pyramid),
            other => Err(Error::InvalidConfig(format!("unknown perceptual extractor `{other}`"))),
        }
    }
}

/// What the fitted objective contains: `recon = [mse] + [perceptual L1]`,
/// plus the weighted anchor and boundary terms.
#[derive(Clone, Copy)]
pub struct Objective<'a> {
    pub weights: LossWeights,
    pub use_mse: bool,
    pub extractor: Option<&'a dyn FeatureExtractor>,
}

impl Default for Objective<'_> {
    fn default() -> Self {
        Objective { weights: LossWeights::default(), use_mse: true, extractor: None }
    }
}

impl std::fmt::Debug for Objective<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Objective")
            .field("weights", &self.weights)
            .field("use_mse", &self.use_mse)
            .field("extractor", &self.extractor.map(|e| e.name()))
            .finish()
    }
}

impl<'a> Objective<'a> {
    pub fn new(weights: LossWeights, use_mse: bool, extractor: Option<&'a dyn FeatureExtractor>) -> Self {
        Objective { weights, use_mse, extractor }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !self.use_mse && self.extractor.is_none() {
            return Err(Error::InvalidConfig(
                "objective has no reconstruction term (mse disabled and no perceptual extractor)".into(),
            ));
        }
        Ok(())
    }
}

fn check_same(a: &Heatmap, b: &Heatmap) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::DimMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width,
            a.height,
            a.channels(),
            b.width,
            b.height,
            b.channels()
        )))
    }
}

/// Mean squared difference over every pixel and channel.
pub fn mse_loss(a: &Heatmap, b: &Heatmap) -> Result<f64> {
    check_same(a, b)?;
    let n = a.data.len() as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `Σ |f(a) − f(b)|`.
pub fn perceptual_l1(a: &Heatmap, b: &Heatmap, f: &dyn FeatureExtractor) -> Result<f64> {
    check_same(a, b)?;
    Ok(f.extract(a).iter().zip(&f.extract(b)).map(|(x, y)| (x - y).abs()).sum())
}

/// Mean squared pixel distance between adjacent anchors, over `diagonal²`.
pub fn anchor_loss(pose: &PoseEstimate, t: &TemplateSpec) -> f64 {
    let pairs = t.adjacency_refs();
    if pairs.is_empty() {
        return 0.0;
    }
    let d2 = pose.canvas.diagonal().powi(2);
    let sum: f64 = pairs
        .iter()
        .map(|&(pu, eu, pv, ev)| {
            let d = pose.part(pu).endpoint(eu) - pose.part(pv).endpoint(ev);
            d.dot(d)
        })
        .sum();
    sum / (pairs.len() as f64 * d2)
}

fn hinge(v: f64, max: f64) -> (f64, f64) {
    if v < 0.0 {
        (-v, -1.0)
    } else if v > max {
        (v - max, 1.0)
    } else {
        (0.0, 0.0)
    }
}

/// Mean squared out-of-frame distance over every part anchor, over `diagonal²`.
pub fn boundary_loss(pose: &PoseEstimate, canvas: Canvas) -> f64 {
    let (wmax, hmax) = (canvas.width as f64 - 1.0, canvas.height as f64 - 1.0);
    let d2 = canvas.diagonal().powi(2);
    let n = (2 * pose.parts.len()) as f64;
    let sum: f64 = pose
        .parts
        .iter()
        .flat_map(|p| [p.head, p.tail])
        .map(|q| {
            let hx = hinge(q.x, wmax).0;
            let hy = hinge(q.y, hmax).0;
            hx * hx + hy * hy
        })
        .sum();
    sum / (n * d2)
}

/// Render settings used by the losses; targets built for fitting should use
/// the same so a perfect fit has exactly zero reconstruction error.
pub fn loss_render_options(layout: ChannelLayout) -> RenderOptions {
    RenderOptions::windowed(layout)
}

/// Effective pose of a transform set on a canvas.
pub fn pose_for(ts: &TransformSet, t: &TemplateSpec, mapping: &PartMapping, canvas: Canvas) -> Result<PoseEstimate> {
    let eff = effective_affines(ts, mapping)?;
    transform_template_on(t, &eff, canvas)
}

/// Renders a transform set exactly as the losses see it.
pub fn render_transforms(
    ts: &TransformSet,
    t: &TemplateSpec,
    canvas: Canvas,
    layout: ChannelLayout,
) -> Result<(PoseEstimate, Heatmap)> {
    let pose = pose_for(ts, t, &t.mapping_or_default(), canvas)?;
    let heat = render(&pose, &loss_render_options(layout))?;
    Ok((pose, heat))
}

/// A loss evaluation that keeps what the gradient pass needs.
pub(crate) struct Evaluation {
    pose: PoseEstimate,
    rendered: Heatmap,
    pub report: LossReport,
}

pub(crate) fn evaluate(target: &Heatmap, ts: &TransformSet, t: &TemplateSpec, obj: &Objective) -> Result<Evaluation> {
    obj.validate()?;
    let canvas = target.canvas()?;
    let (pose, rendered) = render_transforms(ts, t, canvas, target.layout)?;
    let mut recon = 0.0;
    if obj.use_mse {
        recon += mse_loss(&rendered, target)?;
    }
    if let Some(f) = obj.extractor {
        recon += perceptual_l1(&rendered, target, f)?;
    }
    let report = LossReport::combine(recon, anchor_loss(&pose, t), boundary_loss(&pose, canvas), &obj.weights);
    Ok(Evaluation { pose, rendered, report })
}

/// Loss of `ts` against `target`; the canvas is the target's size.
pub fn total_loss(target: &Heatmap, ts: &TransformSet, t: &TemplateSpec, obj: &Objective) -> Result<LossReport> {
    Ok(evaluate(target, ts, t, obj)?.report)
}

/// Gradient of [`total_loss`] with respect to `ts.parameters()`.
pub fn loss_gradient(target: &Heatmap, ts: &TransformSet, t: &TemplateSpec, obj: &Objective) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(target, ts, t, obj)?.1)
}

/// Which terms [`loss_and_gradient_terms`] differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Terms {
    pub recon: bool,
    pub anchor: bool,
    pub boundary: bool,
}

impl Terms {
    pub const ALL: Terms = Terms { recon: true, anchor: true, boundary: true };
}

pub fn loss_and_gradient(
    target: &Heatmap,
    ts: &TransformSet,
    t: &TemplateSpec,
    obj: &Objective,
) -> Result<(LossReport, Vec<f64>)> {
    loss_and_gradient_terms(target, ts, t, obj, Terms::ALL)
}

pub(crate) fn loss_and_gradient_terms(
    target: &Heatmap,
    ts: &TransformSet,
    t: &TemplateSpec,
    obj: &Objective,
    terms: Terms,
) -> Result<(LossReport, Vec<f64>)> {
    let eval = evaluate(target, ts, t, obj)?;
    let grad = eval.gradient(target, ts, t, obj, terms)?;
    Ok((eval.report, grad))
}

impl Evaluation {
    pub(crate) fn gradient(
        &self,
        target: &Heatmap,
        ts: &TransformSet,
        t: &TemplateSpec,
        obj: &Objective,
        terms: Terms,
    ) -> Result<Vec<f64>> {
    let Evaluation { pose, rendered, .. } = self;
    let canvas = pose.canvas;
    let mapping = t.mapping_or_default();

    // dL/d(anchor pixel) per part, [head, tail].
    let mut anchor_grad = [[Point2::ORIGIN; 2]; PART_COUNT];

    if terms.recon {
        let pixel_grad = recon_pixel_gradient(rendered, target, obj);
        accumulate_render_gradient(pose, rendered, &pixel_grad, &mut anchor_grad)?;
    }

    let d2 = canvas.diagonal().powi(2);
    if terms.anchor && obj.weights.lambda1 != 0.0 {
        let pairs = t.adjacency_refs();
        if !pairs.is_empty() {
            let k = obj.weights.lambda1 * 2.0 / (pairs.len() as f64 * d2);
            for (pu, eu, pv, ev) in pairs {
                let d = pose.part(pu).endpoint(eu) - pose.part(pv).endpoint(ev);
                let g = k * d;
                let slot = |e: Endpoint| if e == Endpoint::Head { 0 } else { 1 };
                anchor_grad[pu.index()][slot(eu)] = anchor_grad[pu.index()][slot(eu)] + g;
                anchor_grad[pv.index()][slot(ev)] = anchor_grad[pv.index()][slot(ev)] - g;
            }
        }
    }

    if terms.boundary && obj.weights.lambda2 != 0.0 {
        let (wmax, hmax) = (canvas.width as f64 - 1.0, canvas.height as f64 - 1.0);
        let k = obj.weights.lambda2 * 2.0 / ((2 * PART_COUNT) as f64 * d2);
        for (i, p) in pose.parts.iter().enumerate() {
            for (slot, q) in [p.head, p.tail].into_iter().enumerate() {
                let (hx, sx) = hinge(q.x, wmax);
                let (hy, sy) = hinge(q.y, hmax);
                if hx != 0.0 || hy != 0.0 {
                    anchor_grad[i][slot] = anchor_grad[i][slot] + Point2::new(k * hx * sx, k * hy * sy);
                }
            }
        }
    }

    // Anchor pixels → effective matrix entries.
    let (sx, sy) = canvas.pixel_scale();
    let mut grad_eff = [[0.0f64; 6]; PART_COUNT];
    for (i, part) in crate::template::Part::ALL.iter().enumerate() {
        let spec = t.part(*part);
        for (slot, q) in [spec.head, spec.tail].into_iter().enumerate() {
            let g = anchor_grad[i][slot];
            let (gx, gy) = (g.x * sx, g.y * sy);
            let e = &mut grad_eff[i];
            e[0] += gx * q.x;
            e[1] += gx * q.y;
            e[2] += gx;
            e[3] += gy * q.x;
            e[4] += gy * q.y;
            e[5] += gy;
        }
    }

    backprop_effective(ts, &mapping, &grad_eff)
    }
}

/// dRecon/d(rendered value), indexed like `rendered.data`. The plain-MSE
/// case is evaluated on demand rather than stored.
enum PixelGradient<'a> {
    Mse { k: f64, rendered: &'a [f64], target: &'a [f64] },
    Dense(Vec<f64>),
}

impl PixelGradient<'_> {
    fn at(&self, i: usize) -> f64 {
        match self {
            PixelGradient::Mse { k, rendered, target } => k * (rendered[i] - target[i]),
            PixelGradient::Dense(g) => g[i],
        }
    }
}

fn recon_pixel_gradient<'a>(rendered: &'a Heatmap, target: &'a Heatmap, obj: &Objective) -> PixelGradient<'a> {
    let n = rendered.data.len();
    let k = 2.0 / n as f64;
    let Some(f) = obj.extractor else {
        return PixelGradient::Mse { k: if obj.use_mse { k } else { 0.0 }, rendered: &rendered.data, target: &target.data };
    };
    let sign: Vec<f64> = f
        .extract(rendered)
        .iter()
        .zip(&f.extract(target))
        .map(|(a, b)| {
            let d = a - b;
            if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    let mut g = f.vjp(rendered, &sign);
    if obj.use_mse {
        for ((gi, r), t) in g.iter_mut().zip(&rendered.data).zip(&target.data) {
            *gi += k * (r - t);
        }
    }
    PixelGradient::Dense(g)
}

/// Adds the render's contribution to `dL/d(anchor)` given `dL/d(pixel value)`.
fn accumulate_render_gradient(
    pose: &PoseEstimate,
    rendered: &Heatmap,
    pixel_grad: &PixelGradient,
    anchor_grad: &mut [[Point2; 2]; PART_COUNT],
) -> Result<()> {
    let canvas = pose.canvas;
    let w = rendered.width;
    let plane = rendered.plane_len();
    let window = loss_render_options(rendered.layout).window_sigmas;
    let shapes = pose.parts.iter().map(GaussianShape::of).collect::<Result<Vec<_>>>()?;
    let has_parts = rendered.layout.has_parts();
    let composite = rendered.layout.composite_index();

    // For each pixel, the part that wins the composite max.
    let winner: Vec<u8> = match composite {
        None => Vec::new(),
        Some(_) => {
            let owned;
            let values: &Heatmap = if has_parts {
                rendered
            } else {
                owned = render(pose, &RenderOptions { layout: ChannelLayout::Parts, window_sigmas: window })?;
                &owned
            };
            (0..plane)
                .map(|px| {
                    let mut best = 0;
                    for c in 1..PART_COUNT {
                        if values.data[c * plane + px] > values.data[best * plane + px] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect()
        }
    };

    for (c, shape) in shapes.iter().enumerate() {
        let Some((x0, x1, y0, y1)) = shape.pixel_box(window, canvas) else {
            continue;
        };
        let (mut gh, mut gt) = (Point2::ORIGIN, Point2::ORIGIN);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let px = y * w + x;
                let mut g = if has_parts { pixel_grad.at(c * plane + px) } else { 0.0 };
                if let Some(ci) = composite {
                    if winner[px] as usize == c {
                        g += pixel_grad.at(ci * plane + px);
                    }
                }
                if g == 0.0 {
                    continue;
                }
                let (_, dh, dt) = gaussian_with_partials(shape, Point2::new(x as f64, y as f64));
                gh = gh + g * dh;
                gt = gt + g * dt;
            }
        }
        anchor_grad[c][0] = anchor_grad[c][0] + gh;
        anchor_grad[c][1] = anchor_grad[c][1] + gt;
    }
    Ok(())
}
