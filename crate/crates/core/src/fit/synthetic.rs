//! Seeded synthetic sequences with known ground truth.
//!
//! Each part gets an absolute rotation that oscillates smoothly over the
//! sequence; translations are then solved so that adjacent parts stay joined
//! at their shared anchors. The frame scale `(φ, β)` is drawn once per
//! subject, so limb proportions are constant across frames.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::coarse2fine::{Mode, TransformSet};
use crate::error::{Error, Result};
use crate::geometry::{constrained_matrix, AffineTransform, ConstrainedTransformParams, FrameScale, Point2};
use crate::losses::loss_render_options;
use crate::metrics::FrameAnnotation;
use crate::template::{render, transform_template_on, Canvas, ChannelLayout, Heatmap, Part, TemplateSpec, PART_COUNT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSequenceSpec {
    pub n_frames: usize,
    /// Per-part stretch along the part's own axis (about its head). Parts
    /// not listed keep factor 1.
    pub subject_bplp_profile: BTreeMap<Part, f64>,
    /// Peak limb rotation in radians; torso parts move at 0.3 of this.
    pub motion_amplitude: f64,
    /// Standard deviation of additive Gaussian pixel noise (clamped to [0, 1]).
    pub noise_sigma: f64,
    pub seed: u64,
    pub canvas: Canvas,
}

impl Default for SyntheticSequenceSpec {
    fn default() -> Self {
        SyntheticSequenceSpec {
            n_frames: 10,
            subject_bplp_profile: BTreeMap::new(),
            motion_amplitude: 0.25,
            noise_sigma: 0.0,
            seed: 0,
            canvas: Canvas { width: 64, height: 64 },
        }
    }
}

impl SyntheticSequenceSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_frames == 0 {
            return bad("n_frames must be positive".into());
        }
        if !(self.motion_amplitude >= 0.0 && self.motion_amplitude.is_finite()) {
            return bad(format!("motion_amplitude must be non-negative, got {}", self.motion_amplitude));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if let Some((p, f)) = self.subject_bplp_profile.iter().find(|(_, f)| !(**f > 0.0 && f.is_finite())) {
            return bad(format!("profile factor for `{p}` must be positive, got {f}"));
        }
        Canvas::new(self.canvas.width, self.canvas.height)?;
        Ok(())
    }

    pub fn subject_id(&self) -> String {
        format!("subject-{}", self.seed)
    }

    fn is_rigid_profile(&self) -> bool {
        self.subject_bplp_profile.values().all(|&f| f == 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFrame {
    /// Per-part channels.
    pub target: Heatmap,
    /// Ground truth, `baseline18`; constrained unless the profile stretches parts.
    pub transforms: TransformSet,
    pub annotation: FrameAnnotation,
}

struct Oscillator {
    offset: f64,
    freq: f64,
    phase: f64,
}

impl Oscillator {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Oscillator {
            offset: rng.random_range(-0.5..0.5),
            freq: rng.random_range(0.3..0.9),
            phase: rng.random_range(0.0..TAU),
        }
    }

    fn at(&self, k: usize) -> f64 {
        self.offset + (self.freq * k as f64 + self.phase).sin()
    }
}

fn motion_weight(p: Part) -> f64 {
    use Part::*;
    match p {
        Core | LeftHip | RightHip | LeftShoulder | RightShoulder | Head => 0.3,
        _ => 1.0,
    }
}

/// Stretch by `f` along the part's axis, fixing its head.
fn axis_stretch(head: Point2, tail: Point2, f: f64) -> AffineTransform {
    let v = tail - head;
    let len = v.norm();
    if f == 1.0 || len == 0.0 {
        return AffineTransform::IDENTITY;
    }
    let e = (1.0 / len) * v;
    let k = f - 1.0;
    let a = [[1.0 + k * e.x * e.x, k * e.x * e.y], [k * e.x * e.y, 1.0 + k * e.y * e.y]];
    let t = Point2::new(
        head.x - (a[0][0] * head.x + a[0][1] * head.y),
        head.y - (a[1][0] * head.x + a[1][1] * head.y),
    );
    AffineTransform::from_rows_unchecked([[a[0][0], a[0][1], t.x], [a[1][0], a[1][1], t.y]])
}

/// Translation `(μ, δ)` such that `R(θ)·(S·a + l) = j`.
fn solve_translation(theta: f64, scale: FrameScale, a: Point2, j: Point2) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    // Rᵀ·j with R = [[c, s], [−s, c]]
    let rx = c * j.x - s * j.y;
    let ry = s * j.x + c * j.y;
    (rx - scale.phi * a.x, ry - scale.beta * a.y)
}

/// Generates a seeded sequence of targets with their ground truth.
pub fn generate_synthetic_sequence(spec: &SyntheticSequenceSpec, t: &TemplateSpec) -> Result<Vec<SyntheticFrame>> {
    spec.validate()?;
    t.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = FrameScale::new(rng.random_range(0.9..1.1), rng.random_range(0.9..1.1))?;
    let root = [Oscillator::sample(&mut rng), Oscillator::sample(&mut rng), Oscillator::sample(&mut rng)];
    let parts: Vec<Oscillator> = (0..PART_COUNT).map(|_| Oscillator::sample(&mut rng)).collect();
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("validated sigma"));

    let stretch: Vec<AffineTransform> = Part::ALL
        .iter()
        .map(|&p| {
            let s = t.part(p);
            axis_stretch(s.head, s.tail, spec.subject_bplp_profile.get(&p).copied().unwrap_or(1.0))
        })
        .collect();
    let adjacency = t.adjacency_refs();
    let amp = spec.motion_amplitude;
    let subject = spec.subject_id();

    let mut frames = Vec::with_capacity(spec.n_frames);
    for k in 0..spec.n_frames {
        let root_theta = 0.2 * amp * root[0].at(k);
        let shift = Point2::new(0.15 * amp * root[1].at(k), 0.15 * amp * root[2].at(k));
        let theta: Vec<f64> = Part::ALL
            .iter()
            .map(|&p| root_theta + amp * motion_weight(p) * parts[p.index()].at(k))
            .collect();

        let mut limbs: Vec<Option<ConstrainedTransformParams>> = vec![None; PART_COUNT];
        let mut full: Vec<AffineTransform> = vec![AffineTransform::IDENTITY; PART_COUNT];
        let place = |p: Part, a: Point2, j: Point2, limbs: &mut Vec<Option<ConstrainedTransformParams>>, full: &mut Vec<AffineTransform>| {
            let i = p.index();
            let a = stretch[i].apply(a);
            let (mu, delta) = solve_translation(theta[i], scale, a, j);
            let c = ConstrainedTransformParams::new(theta[i], mu, delta);
            full[i] = stretch[i].then(&constrained_matrix(&c, scale.phi, scale.beta));
            limbs[i] = Some(c);
        };

        let core = t.part(Part::Core);
        place(Part::Core, core.head, core.head + shift, &mut limbs, &mut full);
        loop {
            let mut progressed = false;
            for &(pu, eu, pv, ev) in &adjacency {
                for (from, fe, to, te) in [(pu, eu, pv, ev), (pv, ev, pu, eu)] {
                    if limbs[from.index()].is_some() && limbs[to.index()].is_none() {
                        let j = full[from.index()].apply(t.part(from).endpoint(fe));
                        place(to, t.part(to).endpoint(te), j, &mut limbs, &mut full);
                        progressed = true;
                    }
                }
            }
            if !progressed {
                break;
            }
        }
        // Parts with no adjacency path to the core ride on the core's transform.
        for p in Part::ALL {
            if limbs[p.index()].is_none() {
                let a = t.part(p).head;
                let j = full[Part::Core.index()].apply(a);
                place(p, a, j, &mut limbs, &mut full);
            }
        }

        let transforms = if spec.is_rigid_profile() {
            TransformSet::Constrained {
                mode: Mode::Baseline18,
                limbs: limbs.into_iter().map(|c| c.expect("every part placed")).collect(),
                scale,
            }
        } else {
            TransformSet::FullAffine { mode: Mode::Baseline18, matrices: full.clone() }
        };

        let effective = match &transforms {
            TransformSet::Constrained { limbs, .. } => limbs
                .iter()
                .map(|c| constrained_matrix(c, scale.phi, scale.beta))
                .collect::<Vec<_>>(),
            TransformSet::FullAffine { matrices, .. } => matrices.clone(),
        };
        let pose = transform_template_on(t, &effective, spec.canvas)?;
        let mut target = render(&pose, &loss_render_options(ChannelLayout::Parts))?;
        if let Some(n) = &noise {
            for v in target.data.iter_mut() {
                *v = (*v + n.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        let annotation = FrameAnnotation {
            frame_id: format!("{subject}-f{k:04}"),
            subject_id: subject.clone(),
            image_size: [spec.canvas.width, spec.canvas.height],
            keypoints: pose.keypoints,
            flipped: false,
        }
        .snapped();
        frames.push(SyntheticFrame { target, transforms, annotation });
    }
    Ok(frames)
}
