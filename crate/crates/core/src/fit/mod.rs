//! Direct per-frame pose fitting by gradient descent on the total loss.

mod synthetic;

pub use synthetic::{generate_synthetic_sequence, SyntheticFrame, SyntheticSequenceSpec};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarse2fine::{parameter_count, Mode, Parameterization, TransformSet};
use crate::error::{Error, Result};
use crate::losses::{evaluate, pose_for, total_loss, Evaluation, LossReport, LossWeights, Objective, Perceptual, Terms};
use crate::metrics::flip_keypoints;
use crate::template::{flip_heatmap, flip_template, Heatmap, Keypoint, PoseEstimate, TemplateSpec};

const ARMIJO_C: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const GROW: f64 = 2.0;
const MAX_BACKTRACKS: usize = 60;
/// Losses below this count as an exact fit.
const LOSS_FLOOR: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub mode: Mode,
    pub parameterization: Parameterization,
    pub use_mse: bool,
    /// Optional perceptual term added to the reconstruction loss.
    pub perceptual: Option<Perceptual>,
    pub weights: LossWeights,
    /// Initial step; the line search grows and shrinks it from here.
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once one accepted step lowers the loss by less than this fraction.
    pub tol: f64,
    pub seed: u64,
    /// Start frame k from frame k−1's result instead of identity.
    pub warm_start: bool,
    /// In `coarse2fine20` mode, keep fine matrices at their initial value
    /// for this fraction of `max_iters`.
    pub fine_freeze_fraction: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            mode: Mode::Coarse2Fine20,
            parameterization: Parameterization::Constrained,
            use_mse: true,
            perceptual: None,
            weights: LossWeights::default(),
            step_size: 0.05,
            max_iters: 500,
            tol: 1e-7,
            seed: 0,
            warm_start: false,
            fine_freeze_fraction: 0.25,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step_size must be positive, got {}", self.step_size));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return bad(format!("tol must be non-negative, got {}", self.tol));
        }
        if !(0.0..=1.0).contains(&self.fine_freeze_fraction) {
            return bad(format!("fine_freeze_fraction must be in [0, 1], got {}", self.fine_freeze_fraction));
        }
        self.objective().validate()
    }

    pub fn objective(&self) -> Objective<'static> {
        Objective::new(self.weights, self.use_mse, self.perceptual.map(Perceptual::extractor))
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(self.mode, self.parameterization)
    }

    fn freeze_iters(&self) -> usize {
        if self.mode == Mode::Coarse2Fine20 {
            (self.fine_freeze_fraction * self.max_iters as f64).floor() as usize
        } else {
            0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub transforms: TransformSet,
    pub pose: PoseEstimate,
    /// Loss at the initial parameters followed by one entry per accepted step.
    pub loss_trace: Vec<LossReport>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn final_loss(&self) -> &LossReport {
        self.loss_trace.last().expect("trace holds the initial loss")
    }
}

struct Trial {
    params: Vec<f64>,
    ts: TransformSet,
    eval: Evaluation,
}

/// Evaluates a candidate. `Ok(None)` marks a point the line search should
/// back away from (scale out of bounds, collapsed part).
fn try_point(target: &Heatmap, t: &TemplateSpec, cfg: &FitConfig, obj: &Objective, params: Vec<f64>, iteration: usize) -> Result<Option<Trial>> {
    let ts = TransformSet::from_parameters(cfg.mode, cfg.parameterization, &params)?;
    match ts.validate() {
        Ok(()) => {}
        Err(Error::ScaleOutOfBounds { .. } | Error::NonPositiveScale { .. }) => return Ok(None),
        Err(Error::InvalidTransform(detail)) => return Err(Error::NonFiniteLoss { iteration, detail }),
        Err(e) => return Err(e),
    }
    match evaluate(target, &ts, t, obj) {
        Ok(eval) => {
            if !eval.report.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration,
                    detail: format!("loss {:?}", eval.report),
                });
            }
            Ok(Some(Trial { params: ts.parameters(), ts, eval }))
        }
        Err(Error::DegeneratePart { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn gradient_of(trial: &Trial, target: &Heatmap, t: &TemplateSpec, obj: &Objective, iteration: usize) -> Result<Vec<f64>> {
    let g = trial.eval.gradient(target, &trial.ts, t, obj, Terms::ALL)?;
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss { iteration, detail: format!("gradient component {i} is {}", g[i]) });
    }
    Ok(g)
}

/// Fits one frame from `init` by gradient descent with Armijo backtracking.
///
/// Returns the best parameters seen. A `NonFiniteLoss` aborts the fit.
pub fn fit_frame(target: &Heatmap, t: &TemplateSpec, cfg: &FitConfig, init: &TransformSet) -> Result<FitResult> {
    cfg.validate()?;
    if init.mode() != cfg.mode || init.parameterization() != cfg.parameterization {
        return Err(Error::ModeMismatch(format!(
            "init is {}/{}, config wants {}/{}",
            init.mode(),
            init.parameterization(),
            cfg.mode,
            cfg.parameterization
        )));
    }
    init.validate()?;
    let obj = cfg.objective();
    let mut current = try_point(target, t, cfg, &obj, init.parameters(), 0)?.ok_or_else(|| {
        Error::Validation("initial transforms give a degenerate pose".into())
    })?;

    let frozen = TransformSet::fine_parameter_indices(cfg.mode, cfg.parameterization);
    let mut freeze_until = cfg.freeze_iters();
    let mut grad = gradient_of(&current, target, t, &obj, 0)?;
    let mut trace = vec![current.eval.report];
    let mut step = cfg.step_size;
    let mut iterations = 0;
    let mut converged = current.eval.report.total < LOSS_FLOOR;

    while !converged && iterations < cfg.max_iters {
        let mut direction = grad.clone();
        if iterations < freeze_until {
            for &i in &frozen {
                direction[i] = 0.0;
            }
        }
        let slope: f64 = direction.iter().map(|g| g * g).sum();
        if slope == 0.0 {
            if iterations < freeze_until {
                freeze_until = iterations;
                continue;
            }
            converged = true;
            break;
        }

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let params: Vec<f64> = current.params.iter().zip(&direction).map(|(x, g)| x - step * g).collect();
            if let Some(trial) = try_point(target, t, cfg, &obj, params, iterations + 1)? {
                if trial.eval.report.total <= current.eval.report.total - ARMIJO_C * step * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            step *= SHRINK;
        }
        let Some(next) = accepted else {
            // No descent possible along the gradient at machine precision.
            if iterations < freeze_until {
                freeze_until = iterations;
                step = cfg.step_size;
                continue;
            }
            converged = true;
            break;
        };

        let decrease = (current.eval.report.total - next.eval.report.total) / current.eval.report.total.max(f64::MIN_POSITIVE);
        iterations += 1;
        trace.push(next.eval.report);
        grad = gradient_of(&next, target, t, &obj, iterations)?;
        current = next;
        step *= GROW;
        if current.eval.report.total < LOSS_FLOOR {
            converged = true;
        } else if decrease < cfg.tol {
            if iterations < freeze_until {
                // The coarse stage has settled; release the fine matrices early.
                freeze_until = iterations;
            } else {
                converged = true;
            }
        }
    }

    let pose = pose_for(&current.ts, t, &t.mapping_or_default(), target.canvas()?)?;
    Ok(FitResult {
        transforms: current.ts,
        pose,
        loss_trace: trace,
        iterations,
        converged,
    })
}

/// Fits each frame independently (in parallel), or sequentially from the
/// previous frame's result when `warm_start` is set. Output order follows
/// `targets`. Errors carry the index of the failing frame.
pub fn fit_sequence(targets: &[Heatmap], t: &TemplateSpec, cfg: &FitConfig) -> Result<Vec<FitResult>> {
    if targets.is_empty() {
        return Err(Error::Validation("no targets to fit".into()));
    }
    cfg.validate()?;
    let identity = TransformSet::identity(cfg.mode, cfg.parameterization);
    if cfg.warm_start {
        let mut out: Vec<FitResult> = Vec::with_capacity(targets.len());
        for (k, target) in targets.iter().enumerate() {
            let init = out.last().map_or(&identity, |r| &r.transforms);
            out.push(fit_frame(target, t, cfg, init).map_err(|e| e.in_frame(k))?);
        }
        Ok(out)
    } else {
        targets
            .par_iter()
            .enumerate()
            .map(|(k, target)| fit_frame(target, t, cfg, &identity).map_err(|e| e.in_frame(k)))
            .collect()
    }
}

/// Agreement between fits of the original frames and fits of their mirror
/// images (flipped target, flipped template), mapped back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipCheck {
    /// Largest keypoint distance, in pixels, over all frames and joints.
    pub max_keypoint_discrepancy: f64,
    pub mean_keypoint_discrepancy: f64,
}

/// Runs [`fit_sequence`] on the targets and on their mirror images.
pub fn fit_sequence_with_flip_check(
    targets: &[Heatmap],
    t: &TemplateSpec,
    cfg: &FitConfig,
) -> Result<(Vec<FitResult>, FlipCheck)> {
    let direct = fit_sequence(targets, t, cfg)?;
    let flipped_targets: Vec<Heatmap> = targets.iter().map(flip_heatmap).collect();
    let mirrored = fit_sequence(&flipped_targets, &flip_template(t), cfg)?;
    let (mut max, mut sum, mut n) = (0.0f64, 0.0, 0usize);
    for (a, b) in direct.iter().zip(&mirrored) {
        let back = flip_keypoints(&b.pose.keypoints, a.pose.canvas.width);
        for k in Keypoint::ALL {
            let d = a.pose.keypoints[k].distance(back[k]);
            max = max.max(d);
            sum += d;
            n += 1;
        }
    }
    Ok((
        direct,
        FlipCheck {
            max_keypoint_discrepancy: max,
            mean_keypoint_discrepancy: sum / n as f64,
        },
    ))
}

/// Central differences of the total loss, one parameter at a time.
pub fn finite_difference_gradient(
    target: &Heatmap,
    ts: &TransformSet,
    t: &TemplateSpec,
    obj: &Objective,
    h: f64,
) -> Result<Vec<f64>> {
    if !(1e-8..=1e-2).contains(&h) {
        return Err(Error::InvalidConfig(format!("finite-difference step {h} outside [1e-8, 1e-2]")));
    }
    let base = ts.parameters();
    let (mode, param) = (ts.mode(), ts.parameterization());
    let eval = |v: &[f64]| -> Result<f64> {
        Ok(total_loss(target, &TransformSet::from_parameters(mode, param, v)?, t, obj)?.total)
    };
    let mut out = Vec::with_capacity(base.len());
    let mut v = base.clone();
    for i in 0..base.len() {
        v[i] = base[i] + h;
        let plus = eval(&v)?;
        v[i] = base[i] - h;
        let minus = eval(&v)?;
        v[i] = base[i];
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}
