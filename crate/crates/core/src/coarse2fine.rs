//! Transform sets and the two-step (coarse, then fine) warp.
//!
//! In `coarse2fine20` mode matrices 1–14 each move one or more whole parts
//! (matrices 10 and 11 move an entire arm) and matrices 15–20 refine the six
//! arm segments afterwards. Fine matrices act in template coordinates, so a
//! part's effective transform is `fine · coarse`.
//!
//! Parameter vectors are laid out matrix by matrix: six row-major entries per
//! matrix for full affine, or `(θ, μ, δ)` per matrix followed by the shared
//! `(φ, β)` for the constrained form. Fine matrices in the constrained form
//! carry rotation and localization only; the frame scale is applied once, by
//! the coarse matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    compose, constrained_matrix, constrained_matrix_partials, normalize_angle, AffineTransform,
    ConstrainedTransformParams, FrameScale,
};
use crate::template::{Part, PART_COUNT};

const COARSE_RANGE: std::ops::RangeInclusive<u32> = 1..=14;
const FINE_RANGE: std::ops::RangeInclusive<u32> = 15..=20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "baseline18")]
    Baseline18,
    #[serde(rename = "coarse2fine20")]
    Coarse2Fine20,
}

impl Mode {
    pub fn matrix_count(self) -> usize {
        match self {
            Mode::Baseline18 => 18,
            Mode::Coarse2Fine20 => 20,
        }
    }

    pub fn is_fine_matrix(self, index0: usize) -> bool {
        self == Mode::Coarse2Fine20 && FINE_RANGE.contains(&(index0 as u32 + 1))
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline18 => "baseline18",
            Mode::Coarse2Fine20 => "coarse2fine20",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline18" => Ok(Mode::Baseline18),
            "coarse2fine20" => Ok(Mode::Coarse2Fine20),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    FullAffine,
    Constrained,
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parameterization::FullAffine => "full_affine",
            Parameterization::Constrained => "constrained",
        })
    }
}

impl std::str::FromStr for Parameterization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_affine" => Ok(Parameterization::FullAffine),
            "constrained" => Ok(Parameterization::Constrained),
            other => Err(Error::InvalidConfig(format!("unknown parameterization `{other}`"))),
        }
    }
}

/// Number of free transform parameters: 6 per matrix for full affine, or 3
/// per matrix plus 2 shared scale factors when constrained.
pub fn parameter_count(mode: Mode, parameterization: Parameterization) -> usize {
    let n = mode.matrix_count();
    match parameterization {
        Parameterization::FullAffine => 6 * n,
        Parameterization::Constrained => 3 * n + 2,
    }
}

/// Which matrix moves which part in `coarse2fine20` mode. Indices are 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartMapping {
    pub coarse: BTreeMap<u32, Vec<Part>>,
    pub fine: BTreeMap<u32, Part>,
}

impl Default for PartMapping {
    fn default() -> Self {
        Self::default_mapping()
    }
}

impl PartMapping {
    /// The standard assignment: one coarse matrix per part except the arms,
    /// which move as a unit under matrices 10 and 11 and are refined segment
    /// by segment under 15–20.
    pub fn default_mapping() -> PartMapping {
        use Part::*;
        let coarse = [
            (1, vec![Core]),
            (2, vec![LeftHip]),
            (3, vec![RightHip]),
            (4, vec![LeftThigh]),
            (5, vec![RightThigh]),
            (6, vec![LeftShin]),
            (7, vec![RightShin]),
            (8, vec![LeftShoulder]),
            (9, vec![RightShoulder]),
            (10, vec![LeftUpperArm, LeftForearm, LeftHand]),
            (11, vec![RightUpperArm, RightForearm, RightHand]),
            (12, vec![LeftFoot]),
            (13, vec![RightFoot]),
            (14, vec![Head]),
        ];
        let fine = [
            (15, LeftUpperArm),
            (16, LeftForearm),
            (17, LeftHand),
            (18, RightUpperArm),
            (19, RightForearm),
            (20, RightHand),
        ];
        PartMapping {
            coarse: coarse.into_iter().collect(),
            fine: fine.into_iter().collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(format!("mapping: {m}")));
        let mut covered = BTreeSet::new();
        for (&k, parts) in &self.coarse {
            if !COARSE_RANGE.contains(&k) {
                return fail(format!("coarse index {k} outside 1..=14"));
            }
            for &p in parts {
                if !covered.insert(p) {
                    return fail(format!("part `{p}` is coarse-mapped twice"));
                }
            }
        }
        if covered.len() != PART_COUNT {
            return fail(format!("coarse matrices cover {} of 18 parts", covered.len()));
        }
        let mut fine_parts = BTreeSet::new();
        for (&k, &p) in &self.fine {
            if !FINE_RANGE.contains(&k) {
                return fail(format!("fine index {k} outside 15..=20"));
            }
            if !fine_parts.insert(p) {
                return fail(format!("part `{p}` is fine-mapped twice"));
            }
        }
        Ok(())
    }

    /// Per part (canonical order): 0-based coarse matrix and optional fine matrix.
    pub fn resolve(&self) -> Result<[(usize, Option<usize>); PART_COUNT]> {
        self.validate()?;
        let mut out = [(usize::MAX, None); PART_COUNT];
        for (&k, parts) in &self.coarse {
            for p in parts {
                out[p.index()].0 = k as usize - 1;
            }
        }
        for (&k, p) in &self.fine {
            out[p.index()].1 = Some(k as usize - 1);
        }
        Ok(out)
    }
}

/// One frame's transform parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRecord", into = "TransformRecord")]
pub enum TransformSet {
    FullAffine {
        mode: Mode,
        matrices: Vec<AffineTransform>,
    },
    Constrained {
        mode: Mode,
        limbs: Vec<ConstrainedTransformParams>,
        scale: FrameScale,
    },
}

/// Flat serialized form: mode and parameterization tags plus the full vector.
#[derive(Serialize, Deserialize)]
struct TransformRecord {
    mode: Mode,
    parameterization: Parameterization,
    parameter_count: usize,
    parameters: Vec<f64>,
}

impl TryFrom<TransformRecord> for TransformSet {
    type Error = Error;
    fn try_from(r: TransformRecord) -> Result<Self> {
        if r.parameter_count != r.parameters.len() {
            return Err(Error::LengthMismatch {
                left: r.parameter_count,
                right: r.parameters.len(),
            });
        }
        TransformSet::from_parameters(r.mode, r.parameterization, &r.parameters)
    }
}

impl From<TransformSet> for TransformRecord {
    fn from(t: TransformSet) -> Self {
        let parameters = t.parameters();
        TransformRecord {
            mode: t.mode(),
            parameterization: t.parameterization(),
            parameter_count: parameters.len(),
            parameters,
        }
    }
}

impl TransformSet {
    /// All-identity transforms.
    pub fn identity(mode: Mode, parameterization: Parameterization) -> Self {
        let n = mode.matrix_count();
        match parameterization {
            Parameterization::FullAffine => TransformSet::FullAffine {
                mode,
                matrices: vec![AffineTransform::IDENTITY; n],
            },
            Parameterization::Constrained => TransformSet::Constrained {
                mode,
                limbs: vec![ConstrainedTransformParams::default(); n],
                scale: FrameScale::UNIT,
            },
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            TransformSet::FullAffine { mode, .. } | TransformSet::Constrained { mode, .. } => *mode,
        }
    }

    pub fn parameterization(&self) -> Parameterization {
        match self {
            TransformSet::FullAffine { .. } => Parameterization::FullAffine,
            TransformSet::Constrained { .. } => Parameterization::Constrained,
        }
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(self.mode(), self.parameterization())
    }

    pub fn validate(&self) -> Result<()> {
        let (mode, len) = match self {
            TransformSet::FullAffine { mode, matrices } => (*mode, matrices.len()),
            TransformSet::Constrained { mode, limbs, .. } => (*mode, limbs.len()),
        };
        if len != mode.matrix_count() {
            return Err(Error::ModeMismatch(format!(
                "{mode} needs {} matrices, got {len}",
                mode.matrix_count()
            )));
        }
        match self {
            TransformSet::FullAffine { matrices, .. } => {
                if matrices.iter().flat_map(|m| m.params()).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidTransform("non-finite matrix entry".into()));
                }
            }
            TransformSet::Constrained { limbs, scale, .. } => {
                if limbs.iter().any(|l| !l.is_finite()) {
                    return Err(Error::InvalidTransform("non-finite limb parameters".into()));
                }
                scale.check_bounds()?;
            }
        }
        Ok(())
    }

    pub fn parameters(&self) -> Vec<f64> {
        match self {
            TransformSet::FullAffine { matrices, .. } => {
                matrices.iter().flat_map(|m| m.params()).collect()
            }
            TransformSet::Constrained { limbs, scale, .. } => limbs
                .iter()
                .flat_map(|l| [l.theta, l.mu, l.delta])
                .chain([scale.phi, scale.beta])
                .collect(),
        }
    }

    /// Rebuilds a set from a parameter vector. Angles are wrapped into
    /// `(-π, π]`; scale bounds are checked by [`TransformSet::validate`].
    pub fn from_parameters(mode: Mode, parameterization: Parameterization, v: &[f64]) -> Result<Self> {
        let expected = parameter_count(mode, parameterization);
        if v.len() != expected {
            return Err(Error::LengthMismatch { left: expected, right: v.len() });
        }
        let set = match parameterization {
            Parameterization::FullAffine => TransformSet::FullAffine {
                mode,
                matrices: v
                    .chunks_exact(6)
                    .map(|c| AffineTransform::from_params(c.try_into().expect("chunk of 6")))
                    .collect(),
            },
            Parameterization::Constrained => {
                let n = mode.matrix_count();
                TransformSet::Constrained {
                    mode,
                    limbs: v[..3 * n]
                        .chunks_exact(3)
                        .map(|c| ConstrainedTransformParams::new(c[0], c[1], c[2]))
                        .collect(),
                    scale: FrameScale { phi: v[3 * n], beta: v[3 * n + 1] },
                }
            }
        };
        Ok(set)
    }

    /// The individual matrices `M_1 … M_n` (not yet composed per part).
    pub fn matrices(&self) -> Vec<AffineTransform> {
        match self {
            TransformSet::FullAffine { matrices, .. } => matrices.clone(),
            TransformSet::Constrained { mode, limbs, scale } => limbs
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    if mode.is_fine_matrix(i) {
                        constrained_matrix(l, 1.0, 1.0)
                    } else {
                        constrained_matrix(l, scale.phi, scale.beta)
                    }
                })
                .collect(),
        }
    }

    /// Indices into the parameter vector owned by fine matrices.
    pub fn fine_parameter_indices(mode: Mode, parameterization: Parameterization) -> Vec<usize> {
        let width = match parameterization {
            Parameterization::FullAffine => 6,
            Parameterization::Constrained => 3,
        };
        (0..mode.matrix_count())
            .filter(|&i| mode.is_fine_matrix(i))
            .flat_map(|i| i * width..(i + 1) * width)
            .collect()
    }

    /// Mirrors every matrix (see [`crate::geometry::flip_transform`]) and swaps
    /// left/right matrix slots, matching a flipped template.
    pub fn flipped(&self, mapping: &PartMapping) -> Result<TransformSet> {
        let perm = mirror_permutation(self.mode(), mapping)?;
        Ok(match self {
            TransformSet::FullAffine { mode, matrices } => TransformSet::FullAffine {
                mode: *mode,
                matrices: perm
                    .iter()
                    .map(|&j| crate::geometry::flip_transform(&matrices[j]))
                    .collect(),
            },
            TransformSet::Constrained { mode, limbs, scale } => TransformSet::Constrained {
                mode: *mode,
                limbs: perm
                    .iter()
                    .map(|&j| {
                        let l = limbs[j];
                        ConstrainedTransformParams {
                            theta: normalize_angle(-l.theta),
                            mu: -l.mu,
                            delta: l.delta,
                        }
                    })
                    .collect(),
                scale: *scale,
            },
        })
    }
}

/// For each matrix slot, the slot holding its mirror-image counterpart.
fn mirror_permutation(mode: Mode, mapping: &PartMapping) -> Result<Vec<usize>> {
    match mode {
        Mode::Baseline18 => Ok(Part::ALL.iter().map(|p| p.mirror().index()).collect()),
        Mode::Coarse2Fine20 => {
            let resolved = mapping.resolve()?;
            let mut perm: Vec<usize> = (0..20).collect();
            for p in Part::ALL {
                let (c, f) = resolved[p.index()];
                let (mc, mf) = resolved[p.mirror().index()];
                perm[c] = mc;
                if let (Some(f), Some(mf)) = (f, mf) {
                    perm[f] = mf;
                }
            }
            Ok(perm)
        }
    }
}

/// Per-part effective transforms (canonical [`Part`] order).
pub fn effective_affines(ts: &TransformSet, mapping: &PartMapping) -> Result<Vec<AffineTransform>> {
    ts.validate_shape()?;
    let matrices = ts.matrices();
    match ts.mode() {
        Mode::Baseline18 => Ok(matrices),
        Mode::Coarse2Fine20 => {
            let resolved = mapping.resolve()?;
            Ok(resolved
                .iter()
                .map(|&(c, f)| match f {
                    Some(f) => compose(&matrices[f], &matrices[c]),
                    None => matrices[c],
                })
                .collect())
        }
    }
}

impl TransformSet {
    fn validate_shape(&self) -> Result<()> {
        let len = match self {
            TransformSet::FullAffine { matrices, .. } => matrices.len(),
            TransformSet::Constrained { limbs, .. } => limbs.len(),
        };
        if len != self.mode().matrix_count() {
            return Err(Error::ModeMismatch(format!(
                "{} needs {} matrices, got {len}",
                self.mode(),
                self.mode().matrix_count()
            )));
        }
        Ok(())
    }
}

/// Pulls gradients with respect to the per-part effective matrices
/// (`[a, b, tx, c, d, ty]` each) back to the parameter vector.
pub(crate) fn backprop_effective(
    ts: &TransformSet,
    mapping: &PartMapping,
    grad_effective: &[[f64; 6]; PART_COUNT],
) -> Result<Vec<f64>> {
    let matrices = ts.matrices();
    let mut grad_m = vec![[0.0f64; 6]; matrices.len()];
    match ts.mode() {
        Mode::Baseline18 => grad_m.copy_from_slice(grad_effective),
        Mode::Coarse2Fine20 => {
            let resolved = mapping.resolve()?;
            // Fixed part order keeps the accumulation deterministic.
            for (p, &(c, f)) in resolved.iter().enumerate() {
                let g = &grad_effective[p];
                match f {
                    None => add6(&mut grad_m[c], g),
                    Some(f) => {
                        let (fine, coarse) = (matrices[f].matrix(), matrices[c].matrix());
                        // E = F·C  ⇒  ∂L/∂F = G·Cᵀ,  ∂L/∂C = Fᵀ·G  (top two rows only).
                        let gm = [[g[0], g[1], g[2]], [g[3], g[4], g[5]]];
                        let mut df = [0.0; 6];
                        let mut dc = [0.0; 6];
                        for i in 0..2 {
                            for j in 0..3 {
                                df[3 * i + j] = (0..3).map(|k| gm[i][k] * coarse[j][k]).sum();
                                dc[3 * i + j] = (0..2).map(|k| fine[k][i] * gm[k][j]).sum();
                            }
                        }
                        add6(&mut grad_m[f], &df);
                        add6(&mut grad_m[c], &dc);
                    }
                }
            }
        }
    }

    Ok(match ts {
        TransformSet::FullAffine { .. } => grad_m.iter().flatten().copied().collect(),
        TransformSet::Constrained { mode, limbs, scale } => {
            let n = limbs.len();
            let mut out = vec![0.0; 3 * n + 2];
            for (i, (l, g)) in limbs.iter().zip(&grad_m).enumerate() {
                let fine = mode.is_fine_matrix(i);
                let (phi, beta) = if fine { (1.0, 1.0) } else { (scale.phi, scale.beta) };
                let partials = constrained_matrix_partials(l, phi, beta);
                let dot = |d: &[f64; 6]| d.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                out[3 * i] = dot(&partials[0]);
                out[3 * i + 1] = dot(&partials[1]);
                out[3 * i + 2] = dot(&partials[2]);
                if !fine {
                    out[3 * n] += dot(&partials[3]);
                    out[3 * n + 1] += dot(&partials[4]);
                }
            }
            out
        }
    })
}

fn add6(acc: &mut [f64; 6], g: &[f64; 6]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}
