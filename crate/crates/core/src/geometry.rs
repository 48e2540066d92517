//! Homogeneous 2D affine transforms and the rotation/localization/scaling
//! factorization used for constrained fitting.
//!
//! Template space is `[-1, 1]²` with `x` to the right and `y` downward. All
//! transforms act on column vectors, so `compose(a, b)` applies `b` first.
//!
//! The rotation matrix follows the layout `[[cos θ, sin θ], [-sin θ, cos θ]]`,
//! which turns `(1, 0)` into `(0, -1)` at `θ = π/2`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower sanity bound for the frame scale factors.
pub const MIN_FRAME_SCALE: f64 = 0.05;
/// Upper sanity bound for the frame scale factors.
pub const MAX_FRAME_SCALE: f64 = 20.0;

/// A 2D point in template units or pixels, depending on context.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(&self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn distance(&self, other: Point2) -> f64 {
        (*self - other).norm()
    }

    pub fn midpoint(&self, other: Point2) -> Point2 {
        Point2::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<Point2> for f64 {
    type Output = Point2;
    fn mul(self, rhs: Point2) -> Point2 {
        Point2::new(self * rhs.x, self * rhs.y)
    }
}

/// A 3×3 homogeneous affine matrix whose last row is `(0, 0, 1)`.
///
/// Serialized as its top two rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 2]", into = "[[f64; 3]; 2]")]
pub struct AffineTransform {
    m: [[f64; 3]; 3],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Builds a transform from its top two rows, checking finiteness and
    /// invertibility of the linear block.
    pub fn from_rows(rows: [[f64; 3]; 2]) -> Result<Self> {
        let t = Self::from_rows_unchecked(rows);
        t.validate()?;
        Ok(t)
    }

    /// Builds a transform without validation. Used on optimizer iterates,
    /// where the linear block may pass through null directions of the loss.
    pub fn from_rows_unchecked(rows: [[f64; 3]; 2]) -> Self {
        AffineTransform {
            m: [rows[0], rows[1], [0.0, 0.0, 1.0]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        if self.m[2] != [0.0, 0.0, 1.0] {
            return Err(Error::InvalidTransform("last row must be (0, 0, 1)".into()));
        }
        if self.linear_det() == 0.0 {
            return Err(Error::InvalidTransform("singular linear block".into()));
        }
        Ok(())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::from_rows_unchecked([[1.0, 0.0, tx], [0.0, 1.0, ty]])
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Self::from_rows_unchecked([[sx, 0.0, 0.0], [0.0, sy, 0.0]])
    }

    /// Rotation with the `[[cos, sin], [-sin, cos]]` layout.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::from_rows_unchecked([[c, s, 0.0], [-s, c, 0.0]])
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn rows(&self) -> [[f64; 3]; 2] {
        [self.m[0], self.m[1]]
    }

    /// The six free entries in row-major order: `[a, b, tx, c, d, ty]`.
    pub fn params(&self) -> [f64; 6] {
        let [r0, r1] = self.rows();
        [r0[0], r0[1], r0[2], r1[0], r1[1], r1[2]]
    }

    pub fn from_params(p: &[f64; 6]) -> Self {
        Self::from_rows_unchecked([[p[0], p[1], p[2]], [p[3], p[4], p[5]]])
    }

    pub fn linear_det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        apply(self, p)
    }

    pub fn then(&self, after: &AffineTransform) -> AffineTransform {
        compose(after, self)
    }
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl TryFrom<[[f64; 3]; 2]> for AffineTransform {
    type Error = Error;
    fn try_from(rows: [[f64; 3]; 2]) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<AffineTransform> for [[f64; 3]; 2] {
    fn from(t: AffineTransform) -> Self {
        t.rows()
    }
}

/// Matrix product `a · b`: applying the result equals applying `b`, then `a`.
pub fn compose(a: &AffineTransform, b: &AffineTransform) -> AffineTransform {
    let (a, b) = (&a.m, &b.m);
    let mut out = [[0.0; 3]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    AffineTransform::from_rows_unchecked(out)
}

pub fn apply(t: &AffineTransform, p: Point2) -> Point2 {
    let m = &t.m;
    Point2::new(
        m[0][0] * p.x + m[0][1] * p.y + m[0][2],
        m[1][0] * p.x + m[1][1] * p.y + m[1][2],
    )
}

/// Conjugates by the mirror `diag(-1, 1, 1)` so that a transform acting on a
/// mirrored template mirrors its result. This only flips the sign of the
/// off-diagonal and x-translation entries, so it is an exact involution.
pub fn flip_transform(t: &AffineTransform) -> AffineTransform {
    let [r0, r1] = t.rows();
    AffineTransform::from_rows_unchecked([[r0[0], -r0[1], -r0[2]], [-r1[0], r1[1], r1[2]]])
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    // In-range angles pass through untouched so that wrapping is idempotent.
    if theta > -PI && theta <= PI {
        return theta;
    }
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Per-limb rotation and localization parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedTransformParams {
    pub theta: f64,
    pub mu: f64,
    pub delta: f64,
}

impl ConstrainedTransformParams {
    /// Creates params with `theta` wrapped into `(-π, π]`.
    pub fn new(theta: f64, mu: f64, delta: f64) -> Self {
        Self {
            theta: normalize_angle(theta),
            mu,
            delta,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.mu.is_finite() && self.delta.is_finite()
    }
}

/// Frame-wide axis scale shared by every limb.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameScale {
    pub phi: f64,
    pub beta: f64,
}

impl Default for FrameScale {
    fn default() -> Self {
        Self::UNIT
    }
}

impl FrameScale {
    pub const UNIT: FrameScale = FrameScale { phi: 1.0, beta: 1.0 };

    /// Creates a scale, rejecting values outside `[MIN_FRAME_SCALE, MAX_FRAME_SCALE]`.
    pub fn new(phi: f64, beta: f64) -> Result<Self> {
        let s = FrameScale { phi, beta };
        s.check_bounds()?;
        Ok(s)
    }

    pub fn check_bounds(&self) -> Result<()> {
        self.check_positive()?;
        let ok = |v: f64| (MIN_FRAME_SCALE..=MAX_FRAME_SCALE).contains(&v);
        if ok(self.phi) && ok(self.beta) {
            Ok(())
        } else {
            Err(Error::ScaleOutOfBounds {
                phi: self.phi,
                beta: self.beta,
                min: MIN_FRAME_SCALE,
                max: MAX_FRAME_SCALE,
            })
        }
    }

    fn check_positive(&self) -> Result<()> {
        // NaN fails both comparisons and is rejected here too.
        if self.phi > 0.0 && self.beta > 0.0 {
            Ok(())
        } else {
            Err(Error::NonPositiveScale {
                phi: self.phi,
                beta: self.beta,
            })
        }
    }
}

/// `R(θ) · L(μ, δ) · S(φ, β)`: scale first, then translate, then rotate.
pub fn build_constrained(c: &ConstrainedTransformParams, s: &FrameScale) -> Result<AffineTransform> {
    s.check_positive()?;
    Ok(constrained_matrix(c, s.phi, s.beta))
}

/// The constrained matrix without the scale checks. Fine-level matrices use
/// `phi = beta = 1`, i.e. `R · L` only.
pub(crate) fn constrained_matrix(c: &ConstrainedTransformParams, phi: f64, beta: f64) -> AffineTransform {
    let (s, co) = c.theta.sin_cos();
    AffineTransform::from_rows_unchecked([
        [co * phi, s * beta, co * c.mu + s * c.delta],
        [-s * phi, co * beta, -s * c.mu + co * c.delta],
    ])
}

/// Derivatives of the six free matrix entries (`[a, b, tx, c, d, ty]`) with
/// respect to `(θ, μ, δ, φ, β)`.
pub(crate) fn constrained_matrix_partials(
    c: &ConstrainedTransformParams,
    phi: f64,
    beta: f64,
) -> [[f64; 6]; 5] {
    let (s, co) = c.theta.sin_cos();
    let (mu, de) = (c.mu, c.delta);
    [
        // θ
        [-s * phi, co * beta, -s * mu + co * de, -co * phi, -s * beta, -co * mu - s * de],
        // μ
        [0.0, 0.0, co, 0.0, 0.0, -s],
        // δ
        [0.0, 0.0, s, 0.0, 0.0, co],
        // φ
        [co, 0.0, 0.0, -s, 0.0, 0.0],
        // β
        [0.0, s, 0.0, 0.0, co, 0.0],
    ]
}

/// Jacobian of `apply(build_constrained(c, s), p)` with respect to
/// `(θ, μ, δ, φ, β)`. Row 0 is `∂x'`, row 1 is `∂y'`.
pub fn constrained_jacobian(
    c: &ConstrainedTransformParams,
    s: &FrameScale,
    p: Point2,
) -> Result<[[f64; 5]; 2]> {
    s.check_positive()?;
    let partials = constrained_matrix_partials(c, s.phi, s.beta);
    let mut jac = [[0.0; 5]; 2];
    for (k, d) in partials.iter().enumerate() {
        jac[0][k] = d[0] * p.x + d[1] * p.y + d[2];
        jac[1][k] = d[3] * p.x + d[4] * p.y + d[5];
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    /// Plain triple-loop 3×3 product, independent of `compose`.
    fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    fn assert_matrix_close(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3], tol: f64) {
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(a[i][j], b[i][j], epsilon = tol);
            }
        }
    }

    #[test]
    fn compose_identity_and_translations() {
        let id = AffineTransform::IDENTITY;
        assert_eq!(compose(&id, &id), id);
        let t = compose(
            &AffineTransform::translation(1.0, 2.0),
            &AffineTransform::translation(3.0, 4.0),
        );
        assert_eq!(t, AffineTransform::translation(4.0, 6.0));
    }

    #[test]
    fn compose_quarter_turns_matches_direct_product() {
        let r = AffineTransform::rotation(FRAC_PI_2);
        let composed = compose(&r, &r);
        assert_matrix_close(composed.matrix(), &matmul(r.matrix(), r.matrix()), 1e-15);
        assert_matrix_close(composed.matrix(), AffineTransform::rotation(PI).matrix(), 1e-15);
    }

    #[test]
    fn apply_examples() {
        let p = AffineTransform::IDENTITY.apply(Point2::new(0.3, -0.7));
        assert_eq!(p, Point2::new(0.3, -0.7));
        assert_eq!(
            AffineTransform::scaling(2.0, 3.0).apply(Point2::new(1.0, 1.0)),
            Point2::new(2.0, 3.0)
        );
        // [[cos, sin], [-sin, cos]] at π/2 sends (1, 0) to (0, -1).
        let q = AffineTransform::rotation(FRAC_PI_2).apply(Point2::new(1.0, 0.0));
        assert_abs_diff_eq!(q.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.y, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn build_constrained_examples() {
        let unit = FrameScale::UNIT;
        let id = build_constrained(&ConstrainedTransformParams::default(), &unit).unwrap();
        assert_eq!(id, AffineTransform::IDENTITY);

        let tr = build_constrained(&ConstrainedTransformParams::new(0.0, 2.0, -1.0), &unit).unwrap();
        assert_eq!(tr, AffineTransform::translation(2.0, -1.0));

        let c = ConstrainedTransformParams::new(FRAC_PI_2, 1.0, 0.0);
        let s = FrameScale { phi: 2.0, beta: 1.0 };
        let built = build_constrained(&c, &s).unwrap();
        let (sn, cs) = FRAC_PI_2.sin_cos();
        let r = [[cs, sn, 0.0], [-sn, cs, 0.0], [0.0, 0.0, 1.0]];
        let l = [[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let sc = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_matrix_close(built.matrix(), &matmul(&matmul(&r, &l), &sc), 1e-15);
    }

    #[test]
    fn build_constrained_rejects_nonpositive_scale() {
        let c = ConstrainedTransformParams::default();
        for s in [
            FrameScale { phi: 0.0, beta: 1.0 },
            FrameScale { phi: 1.0, beta: -2.0 },
        ] {
            assert!(matches!(build_constrained(&c, &s), Err(Error::NonPositiveScale { .. })));
            assert!(matches!(
                constrained_jacobian(&c, &s, Point2::ORIGIN),
                Err(Error::NonPositiveScale { .. })
            ));
        }
    }

    #[test]
    fn frame_scale_bounds() {
        assert!(FrameScale::new(1.0, 1.0).is_ok());
        assert!(FrameScale::new(0.05, 20.0).is_ok());
        assert!(matches!(FrameScale::new(0.04, 1.0), Err(Error::ScaleOutOfBounds { .. })));
        assert!(matches!(FrameScale::new(1.0, 21.0), Err(Error::ScaleOutOfBounds { .. })));
        assert!(matches!(FrameScale::new(f64::NAN, 1.0), Err(Error::NonPositiveScale { .. })));
    }

    #[test]
    fn angle_normalization() {
        assert_eq!(normalize_angle(PI), PI);
        assert_abs_diff_eq!(normalize_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI + 0.25), -PI + 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(ConstrainedTransformParams::new(7.0, 0.0, 0.0).theta, 7.0 - 2.0 * PI, epsilon = 1e-12);
    }

    fn central_difference(
        c: &ConstrainedTransformParams,
        s: &FrameScale,
        p: Point2,
        h: f64,
    ) -> [[f64; 5]; 2] {
        let eval = |k: usize, step: f64| {
            let mut v = [c.theta, c.mu, c.delta, s.phi, s.beta];
            v[k] += step;
            // no angle wrapping: FD steps must stay on the raw parameter
            let cc = ConstrainedTransformParams { theta: v[0], mu: v[1], delta: v[2] };
            let ss = FrameScale { phi: v[3], beta: v[4] };
            build_constrained(&cc, &ss).unwrap().apply(p)
        };
        let mut jac = [[0.0; 5]; 2];
        for k in 0..5 {
            let (plus, minus) = (eval(k, h), eval(k, -h));
            jac[0][k] = (plus.x - minus.x) / (2.0 * h);
            jac[1][k] = (plus.y - minus.y) / (2.0 * h);
        }
        jac
    }

    #[test]
    fn jacobian_examples() {
        let c = ConstrainedTransformParams::default();
        let s = FrameScale::UNIT;
        let p = Point2::new(1.0, 0.0);
        let jac = constrained_jacobian(&c, &s, p).unwrap();
        let fd = central_difference(&c, &s, p, 1e-5);
        // ∂x'/∂μ is cos θ = 1 at identity.
        assert_abs_diff_eq!(jac[0][1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(jac[0][1], fd[0][1], epsilon = 1e-9);
        // ∂/∂θ at θ = 0 on (1, 0): (0, -1).
        for row in 0..2 {
            let rel = (jac[row][0] - fd[row][0]).abs() / fd[row][0].abs().max(1e-12);
            assert!(jac[row][0] == fd[row][0] || rel < 1e-6, "row {row}: {rel}");
        }
        assert_abs_diff_eq!(jac[1][0], -1.0, epsilon = 1e-15);

        let jac0 = constrained_jacobian(&ConstrainedTransformParams::new(0.4, 0.2, -0.1), &FrameScale { phi: 1.3, beta: 0.7 }, Point2::ORIGIN).unwrap();
        for row in jac0 {
            assert_eq!(row[3], 0.0);
            assert_eq!(row[4], 0.0);
        }
    }

    #[test]
    fn flip_examples() {
        let id = AffineTransform::IDENTITY;
        assert_eq!(flip_transform(&id), id);
        assert_eq!(
            flip_transform(&AffineTransform::translation(0.3, -0.2)),
            AffineTransform::translation(-0.3, -0.2)
        );
        let f = AffineTransform::scaling(-1.0, 1.0);
        let theta = 0.7;
        let conj = compose(&compose(&f, &AffineTransform::rotation(theta)), &f);
        let flipped = flip_transform(&AffineTransform::rotation(theta));
        assert_matrix_close(flipped.matrix(), conj.matrix(), 0.0);
        assert_matrix_close(flipped.matrix(), AffineTransform::rotation(-theta).matrix(), 1e-15);
    }

    fn affine_strategy() -> impl Strategy<Value = AffineTransform> {
        prop::array::uniform6(-2.0f64..2.0).prop_filter_map("singular", |p| {
            let t = AffineTransform::from_params(&p);
            (t.linear_det().abs() > 1e-3).then_some(t)
        })
    }

    proptest! {
        #[test]
        fn composition_is_associative(a in affine_strategy(), b in affine_strategy(), c in affine_strategy()) {
            let left = compose(&a, &compose(&b, &c));
            let right = compose(&compose(&a, &b), &c);
            assert_matrix_close(left.matrix(), right.matrix(), 1e-12);
        }

        #[test]
        fn flip_is_involution(t in affine_strategy()) {
            prop_assert_eq!(flip_transform(&flip_transform(&t)), t);
        }

        #[test]
        fn apply_preserves_affine_combinations(
            t in affine_strategy(),
            p in prop::array::uniform2(-1.0f64..1.0),
            q in prop::array::uniform2(-1.0f64..1.0),
            lambda in -1.0f64..2.0,
        ) {
            let (p, q) = (Point2::from(p), Point2::from(q));
            let mixed = t.apply(lambda * p + (1.0 - lambda) * q);
            let combined = lambda * t.apply(p) + (1.0 - lambda) * t.apply(q);
            prop_assert!((mixed.x - combined.x).abs() < 1e-12);
            prop_assert!((mixed.y - combined.y).abs() < 1e-12);
        }

        #[test]
        fn jacobian_matches_finite_differences(
            theta in -3.0f64..3.0, mu in -1.0f64..1.0, delta in -1.0f64..1.0,
            phi in 0.3f64..3.0, beta in 0.3f64..3.0,
            p in prop::array::uniform2(-1.0f64..1.0),
        ) {
            let c = ConstrainedTransformParams::new(theta, mu, delta);
            let s = FrameScale { phi, beta };
            let p = Point2::from(p);
            let jac = constrained_jacobian(&c, &s, p).unwrap();
            let fd = central_difference(&c, &s, p, 1e-5);
            let mut diff = 0.0f64;
            let mut scale = 0.0f64;
            for row in 0..2 {
                for k in 0..5 {
                    diff = diff.max((jac[row][k] - fd[row][k]).abs());
                    scale = scale.max(fd[row][k].abs());
                }
            }
            prop_assert!(diff / scale.max(1e-12) < 1e-4, "rel err {}", diff / scale);
        }
    }
}
