use serde::{Deserialize, Serialize};

use super::pose::{transform_template_on, PartPose, PoseEstimate};
use super::{Canvas, Part, TemplateSpec, PART_COUNT};
use crate::error::{Error, Result};
use crate::geometry::{AffineTransform, Point2};

/// Window radius, in sigmas, beyond which a Gaussian is below `1e-9`
/// (`exp(-6.5² / 2) ≈ 6.7e-10`), so windowed and exact renders agree to 1e-9.
pub const EXACT_WINDOW_SIGMAS: f64 = 6.5;

const MAX_CONDITION: f64 = 1e8;

/// Which channels a heatmap carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelLayout {
    /// One channel per part, canonical order.
    Parts,
    /// Part channels followed by their per-pixel max.
    #[default]
    PartsWithComposite,
    /// Only the per-pixel max over parts.
    Composite,
}

impl ChannelLayout {
    pub fn channels(self) -> usize {
        match self {
            ChannelLayout::Parts => PART_COUNT,
            ChannelLayout::PartsWithComposite => PART_COUNT + 1,
            ChannelLayout::Composite => 1,
        }
    }

    pub fn from_channels(n: usize) -> Result<Self> {
        match n {
            PART_COUNT => Ok(ChannelLayout::Parts),
            n if n == PART_COUNT + 1 => Ok(ChannelLayout::PartsWithComposite),
            1 => Ok(ChannelLayout::Composite),
            other => Err(Error::DimMismatch(format!(
                "no channel layout has {other} channels"
            ))),
        }
    }

    pub fn channel_names(self) -> Vec<&'static str> {
        let parts = Part::ALL.iter().map(|p| p.name());
        match self {
            ChannelLayout::Parts => parts.collect(),
            ChannelLayout::PartsWithComposite => parts.chain(["composite"]).collect(),
            ChannelLayout::Composite => vec!["composite"],
        }
    }

    pub(crate) fn has_parts(self) -> bool {
        self != ChannelLayout::Composite
    }

    pub(crate) fn composite_index(self) -> Option<usize> {
        match self {
            ChannelLayout::Parts => None,
            ChannelLayout::PartsWithComposite => Some(PART_COUNT),
            ChannelLayout::Composite => Some(0),
        }
    }
}

/// Channel-major grid of values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub layout: ChannelLayout,
    /// `data[c * width * height + y * width + x]`
    pub data: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(width: usize, height: usize, layout: ChannelLayout) -> Self {
        Heatmap {
            width,
            height,
            layout,
            data: vec![0.0; width * height * layout.channels()],
        }
    }

    pub fn from_channels(width: usize, height: usize, channels: Vec<Vec<f64>>) -> Result<Self> {
        let layout = ChannelLayout::from_channels(channels.len())?;
        if let Some(c) = channels.iter().find(|c| c.len() != width * height) {
            return Err(Error::DimMismatch(format!(
                "channel has {} values, expected {}",
                c.len(),
                width * height
            )));
        }
        Ok(Heatmap {
            width,
            height,
            layout,
            data: channels.concat(),
        })
    }

    pub fn channels(&self) -> usize {
        self.layout.channels()
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn part_channel(&self, p: Part) -> Option<&[f64]> {
        self.layout.has_parts().then(|| self.channel(p.index()))
    }

    pub fn composite(&self) -> Option<&[f64]> {
        self.layout.composite_index().map(|c| self.channel(c))
    }

    pub fn canvas(&self) -> Result<Canvas> {
        Canvas::new(self.width as u32, self.height as u32)
    }

    pub fn same_shape(&self, other: &Heatmap) -> bool {
        self.width == other.width && self.height == other.height && self.layout == other.layout
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[c * self.plane_len() + y * self.width + x]
    }

    pub fn is_in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub layout: ChannelLayout,
    /// Evaluate each Gaussian only inside a box of this many sigmas; `None`
    /// evaluates every pixel.
    pub window_sigmas: Option<f64>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            layout: ChannelLayout::PartsWithComposite,
            window_sigmas: None,
        }
    }
}

impl RenderOptions {
    pub fn windowed(layout: ChannelLayout) -> Self {
        RenderOptions {
            layout,
            window_sigmas: Some(EXACT_WINDOW_SIGMAS),
        }
    }
}

/// A part's Gaussian in pixel space.
///
/// `value(q) = exp(-½ [(d·e)² / a² + (d·n)² / b²])` with `d = q - mean`, `e`
/// the head→tail unit axis and `n` its normal. For elongated parts `a` and
/// `b` are proportional to the head–tail distance.
#[derive(Clone, Copy, Debug)]
pub(crate) struct GaussianShape {
    pub mean: Point2,
    pub axis: Point2,
    pub normal: Point2,
    pub a: f64,
    pub b: f64,
    /// Head–tail distance; zero for rigid (isotropic, coincident-anchor) parts.
    pub length: f64,
}

impl GaussianShape {
    pub fn of(p: &PartPose) -> Result<Self> {
        let degenerate = |reason: String| Error::DegeneratePart {
            part: p.part.name().into(),
            reason,
        };
        let (a, b) = (p.sigma_along, p.sigma_across);
        if !(a.is_finite() && b.is_finite() && p.head.is_finite() && p.tail.is_finite()) {
            return Err(degenerate("non-finite geometry".into()));
        }
        if !(a > 0.0 && b > 0.0) {
            return Err(degenerate(format!("collapsed sigmas ({a}, {b})")));
        }
        let cond = (a.max(b) / a.min(b)).powi(2);
        if cond > MAX_CONDITION {
            return Err(degenerate(format!("covariance condition number {cond:.3e}")));
        }
        let v = p.tail - p.head;
        let length = v.norm();
        let axis = if length > 0.0 {
            (1.0 / length) * v
        } else if a == b {
            Point2::new(1.0, 0.0)
        } else {
            return Err(degenerate("coincident anchors with anisotropic sigmas".into()));
        };
        Ok(GaussianShape {
            mean: p.head.midpoint(p.tail),
            axis,
            normal: Point2::new(axis.y, -axis.x),
            a,
            b,
            length,
        })
    }

    pub fn value(&self, q: Point2) -> f64 {
        let d = q - self.mean;
        let s = d.dot(self.axis) / self.a;
        let c = d.dot(self.normal) / self.b;
        (-0.5 * (s * s + c * c)).exp()
    }

    /// Inclusive pixel box outside of which the value is below the
    /// `window_sigmas` level.
    pub fn window(&self, window_sigmas: f64, canvas: Canvas) -> Option<(usize, usize, usize, usize)> {
        let (e, n) = (self.axis, self.normal);
        let hx = window_sigmas * (self.a * self.a * e.x * e.x + self.b * self.b * n.x * n.x).sqrt();
        let hy = window_sigmas * (self.a * self.a * e.y * e.y + self.b * self.b * n.y * n.y).sqrt();
        let (w, h) = (canvas.width as f64 - 1.0, canvas.height as f64 - 1.0);
        let x0 = (self.mean.x - hx).ceil().max(0.0);
        let x1 = (self.mean.x + hx).floor().min(w);
        let y0 = (self.mean.y - hy).ceil().max(0.0);
        let y1 = (self.mean.y + hy).floor().min(h);
        (x0 <= x1 && y0 <= y1).then_some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
    }

    pub fn pixel_box(&self, window_sigmas: Option<f64>, canvas: Canvas) -> Option<(usize, usize, usize, usize)> {
        match window_sigmas {
            Some(k) => self.window(k, canvas),
            None => Some((0, canvas.width as usize - 1, 0, canvas.height as usize - 1)),
        }
    }
}

/// Value of the Gaussian at `q` and its gradient with respect to the head and
/// tail pixel positions, accounting for the sigmas' dependence on length.
pub(crate) fn gaussian_with_partials(g: &GaussianShape, q: Point2) -> (f64, Point2, Point2) {
    let d = q - g.mean;
    let (e, n) = (g.axis, g.normal);
    let s = d.dot(e);
    let c = d.dot(n);
    let (a2, b2) = (g.a * g.a, g.b * g.b);
    let value = (-0.5 * (s * s / a2 + c * c / b2)).exp();
    if value == 0.0 {
        return (0.0, Point2::ORIGIN, Point2::ORIGIN);
    }

    let ds = 2.0 * s / a2;
    let dc = 2.0 * c / b2;
    // ∂Q through the mean: both anchors carry half.
    let through_mean = -0.5 * (ds * e + dc * n);
    let (dq_dh, dq_dt) = if g.length > 0.0 {
        let inv_l = 1.0 / g.length;
        // ∂Q through the axis direction, acting on the tail (the head gets the negative).
        let through_axis = (inv_l * (ds * c - dc * s)) * n;
        // a = k_a·length and b = k_b·length: ∂Q/∂length = -(2s²/a² + 2c²/b²) / length.
        let through_len = (-(ds * s + dc * c) * inv_l) * e;
        (
            through_mean - through_axis - through_len,
            through_mean + through_axis + through_len,
        )
    } else {
        (through_mean, through_mean)
    };
    let k = -0.5 * value;
    (value, k * dq_dh, k * dq_dt)
}

/// Renders a pose on its own canvas.
pub fn render(pose: &PoseEstimate, opts: &RenderOptions) -> Result<Heatmap> {
    let canvas = pose.canvas;
    let (w, h) = (canvas.width as usize, canvas.height as usize);
    let shapes = pose
        .parts
        .iter()
        .map(GaussianShape::of)
        .collect::<Result<Vec<_>>>()?;

    let mut parts = Heatmap::zeros(w, h, ChannelLayout::Parts);
    for (i, shape) in shapes.iter().enumerate() {
        let plane = parts.channel_mut(i);
        if let Some((x0, x1, y0, y1)) = shape.pixel_box(opts.window_sigmas, canvas) {
            for y in y0..=y1 {
                for (x, v) in plane[y * w + x0..=y * w + x1].iter_mut().enumerate() {
                    *v = shape.value(Point2::new((x0 + x) as f64, y as f64));
                }
            }
        }
    }

    let composite = || {
        let mut out = vec![0.0f64; w * h];
        for c in 0..PART_COUNT {
            for (o, v) in out.iter_mut().zip(parts.channel(c)) {
                *o = o.max(*v);
            }
        }
        out
    };

    Ok(match opts.layout {
        ChannelLayout::Parts => parts,
        ChannelLayout::PartsWithComposite => {
            let comp = composite();
            parts.layout = ChannelLayout::PartsWithComposite;
            parts.data.extend_from_slice(&comp);
            parts
        }
        ChannelLayout::Composite => Heatmap {
            width: w,
            height: h,
            layout: ChannelLayout::Composite,
            data: composite(),
        },
    })
}

/// Renders an untransformed template on the given canvas.
pub fn render_template(t: &TemplateSpec, canvas: Canvas, opts: &RenderOptions) -> Result<Heatmap> {
    let pose = transform_template_on(t, &[AffineTransform::IDENTITY; PART_COUNT], canvas)?;
    render(&pose, opts)
}

/// Mirrors a heatmap left-to-right and swaps left/right part channels, so it
/// matches a render of the flipped template on the flipped pose.
pub fn flip_heatmap(h: &Heatmap) -> Heatmap {
    let mut out = Heatmap::zeros(h.width, h.height, h.layout);
    let source_channel = |c: usize| -> usize {
        if h.layout.has_parts() && c < PART_COUNT {
            Part::ALL[c].mirror().index()
        } else {
            c
        }
    };
    for c in 0..h.channels() {
        let src = h.channel(source_channel(c));
        let dst = out.channel_mut(c);
        for y in 0..h.height {
            for x in 0..h.width {
                dst[y * h.width + x] = src[y * h.width + (h.width - 1 - x)];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::{flip_template, transform_template, PartSpec};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn small(t: &TemplateSpec) -> PoseEstimate {
        transform_template_on(t, &[AffineTransform::IDENTITY; PART_COUNT], Canvas::new(64, 64).unwrap()).unwrap()
    }

    #[test]
    fn isotropic_blob_peaks_at_mean() {
        let mut t = TemplateSpec::t_new();
        let spec = t.parts.iter_mut().find(|p| p.name == "head").unwrap();
        *spec = PartSpec {
            head: Point2::new(0.0, 0.0),
            tail: Point2::new(0.0, 0.0),
            sigma_along: 0.1,
            sigma_across: 0.1,
            ..spec.clone()
        };
        t.validate().unwrap();
        // 65×65 puts the template origin exactly on pixel (32, 32).
        let hm = render_template(&t, Canvas::new(65, 65).unwrap(), &RenderOptions::default()).unwrap();
        let ch = Part::Head.index();
        assert_eq!(hm.get(ch, 32, 32), 1.0);
        assert!(hm.get(ch, 33, 32) < 1.0);
        assert_eq!(hm.get(ch, 33, 32), hm.get(ch, 31, 32));
    }

    #[test]
    fn values_are_bounded_and_reach_one_sigma_level() {
        let t = TemplateSpec::t_new();
        let pose = small(&t);
        let hm = render(&pose, &RenderOptions::default()).unwrap();
        assert!(hm.is_in_unit_range());
        for p in &pose.parts {
            let ch = hm.channel(p.part.index());
            let max = ch.iter().cloned().fold(0.0, f64::max);
            assert!(max <= 1.0 && max >= (-0.5f64).exp(), "{}: {max}", p.part);
        }
    }

    #[test]
    fn composite_is_channel_max() {
        let hm = render(&small(&TemplateSpec::t_orig()), &RenderOptions::default()).unwrap();
        let comp = hm.composite().unwrap();
        for i in 0..hm.plane_len() {
            let m = (0..PART_COUNT).map(|c| hm.channel(c)[i]).fold(0.0, f64::max);
            assert_eq!(comp[i], m);
        }
    }

    #[test]
    fn windowed_render_matches_exact() {
        for t in [TemplateSpec::t_orig(), TemplateSpec::t_new()] {
            let pose = small(&t);
            let exact = render(&pose, &RenderOptions::default()).unwrap();
            let windowed = render(&pose, &RenderOptions::windowed(ChannelLayout::PartsWithComposite)).unwrap();
            let worst = exact.data.iter().zip(&windowed.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-9, "{worst}");
        }
    }

    /// Rotating a part about the canvas centre by a quarter turn and rendering
    /// equals rendering and rotating the pixel grid.
    #[test]
    fn quarter_turn_commutes_with_render() {
        let t = TemplateSpec::t_new();
        let canvas = Canvas::new(64, 64).unwrap();
        let rot = AffineTransform::rotation(FRAC_PI_2);
        let base = transform_template_on(&t, &[AffineTransform::IDENTITY; PART_COUNT], canvas).unwrap();
        let turned = transform_template_on(&t, &[rot; PART_COUNT], canvas).unwrap();
        let a = render(&base, &RenderOptions { layout: ChannelLayout::Parts, window_sigmas: None }).unwrap();
        let b = render(&turned, &RenderOptions { layout: ChannelLayout::Parts, window_sigmas: None }).unwrap();
        let n = 64;
        let mut total = 0.0;
        for c in 0..PART_COUNT {
            for y in 0..n {
                for x in 0..n {
                    // (u, v) = (x, y) - centre maps to (v, -u) under the rotation.
                    let (u, v) = (x as f64 - 31.5, y as f64 - 31.5);
                    let (rx, ry) = ((v + 31.5) as usize, (-u + 31.5) as usize);
                    total += (a.get(c, x, y) - b.get(c, rx, ry)).abs();
                }
            }
        }
        let mean = total / (PART_COUNT * n * n) as f64;
        assert!(mean < 1e-3, "{mean}");
    }

    #[test]
    fn flipped_symmetric_template_renders_mirrored() {
        let t = TemplateSpec::t_orig();
        let canvas = Canvas::new(64, 64).unwrap();
        let opts = RenderOptions::default();
        let direct = render_template(&flip_template(&t), canvas, &opts).unwrap();
        let mirrored = flip_heatmap(&render_template(&t, canvas, &opts).unwrap());
        let worst = direct.data.iter().zip(&mirrored.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "{worst}");
        // the composite needs no channel swap at all
        let plain = render_template(&t, canvas, &opts).unwrap();
        let comp = plain.composite().unwrap();
        let flipped_comp = direct.composite().unwrap();
        for y in 0..64 {
            for x in 0..64 {
                assert!((flipped_comp[y * 64 + x] - comp[y * 64 + 63 - x]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn collapsed_part_is_degenerate() {
        let t = TemplateSpec::t_new();
        let mut transforms = [AffineTransform::IDENTITY; PART_COUNT];
        transforms[Part::LeftHand.index()] = AffineTransform::from_rows_unchecked([[0.0, 0.0, 0.1], [0.0, 0.0, 0.1]]);
        let pose = transform_template(&t, &transforms).unwrap();
        assert!(matches!(render(&pose, &RenderOptions::default()), Err(Error::DegeneratePart { .. })));
    }

    #[test]
    fn gaussian_partials_match_finite_differences() {
        let part = PartPose {
            part: Part::LeftForearm,
            head: Point2::new(20.3, 14.1),
            tail: Point2::new(27.9, 30.2),
            sigma_along: 9.0,
            sigma_across: 2.5,
        };
        let len = part.head.distance(part.tail);
        let (ka, kb) = (part.sigma_along / len, part.sigma_across / len);
        let eval = |h: Point2, t: Point2, q: Point2| {
            let l = h.distance(t);
            let p = PartPose { head: h, tail: t, sigma_along: ka * l, sigma_across: kb * l, ..part };
            GaussianShape::of(&p).unwrap().value(q)
        };
        let shape = GaussianShape::of(&part).unwrap();
        let step = 1e-6;
        for q in [Point2::new(22.0, 20.0), Point2::new(26.5, 25.0), Point2::new(19.0, 27.0)] {
            let (v, dh, dt) = gaussian_with_partials(&shape, q);
            assert!((v - shape.value(q)).abs() < 1e-15);
            let fd = |which: usize, axis: usize| {
                let bump = |s: f64| {
                    let mut h = part.head;
                    let mut t = part.tail;
                    let target = if which == 0 { &mut h } else { &mut t };
                    if axis == 0 { target.x += s } else { target.y += s }
                    eval(h, t, q)
                };
                (bump(step) - bump(-step)) / (2.0 * step)
            };
            for (got, want) in [(dh.x, fd(0, 0)), (dh.y, fd(0, 1)), (dt.x, fd(1, 0)), (dt.y, fd(1, 1))] {
                assert!((got - want).abs() < 1e-7 * (1.0 + want.abs()), "{got} vs {want}");
            }
        }
    }

    proptest! {
        /// Shifting a part by whole pixels shifts its channel exactly.
        #[test]
        fn render_is_translation_equivariant(dx in -6i32..6, dy in -6i32..6) {
            let t = TemplateSpec::t_new();
            let canvas = Canvas::new(64, 64).unwrap();
            let (sx, sy) = canvas.pixel_scale();
            let shift = AffineTransform::translation(dx as f64 / sx, dy as f64 / sy);
            let base = transform_template_on(&t, &[AffineTransform::IDENTITY; PART_COUNT], canvas).unwrap();
            let moved = transform_template_on(&t, &[shift; PART_COUNT], canvas).unwrap();
            let opts = RenderOptions { layout: ChannelLayout::Parts, window_sigmas: None };
            let a = render(&base, &opts).unwrap();
            let b = render(&moved, &opts).unwrap();
            let c = Part::LeftThigh.index();
            for y in 8..56 {
                for x in 8..56 {
                    let (xs, ys) = ((x as i32 + dx) as usize, (y as i32 + dy) as usize);
                    prop_assert!((a.get(c, x, y) - b.get(c, xs, ys)).abs() < 1e-12);
                }
            }
        }
    }
}
