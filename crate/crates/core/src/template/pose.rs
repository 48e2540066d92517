use std::collections::BTreeMap;
use std::ops::{Index, IndexMut};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Canvas, Endpoint, Keypoint, Part, TemplateSpec, KEYPOINT_COUNT, PART_COUNT};
use crate::error::{Error, Result};
use crate::geometry::{AffineTransform, Point2};

/// The 15 evaluation keypoints, indexed by [`Keypoint`].
///
/// Serialized as a `{name: [x, y]}` map; all 15 names are required.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeypointSet(pub [Point2; KEYPOINT_COUNT]);

impl KeypointSet {
    pub fn from_fn(mut f: impl FnMut(Keypoint) -> Point2) -> Self {
        KeypointSet(Keypoint::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Keypoint, Point2)> + '_ {
        Keypoint::ALL.iter().map(move |&k| (k, self.0[k.index()]))
    }

    pub fn map(&self, mut f: impl FnMut(Point2) -> Point2) -> Self {
        KeypointSet(self.0.map(&mut f))
    }
}

impl Index<Keypoint> for KeypointSet {
    type Output = Point2;
    fn index(&self, k: Keypoint) -> &Point2 {
        &self.0[k.index()]
    }
}

impl IndexMut<Keypoint> for KeypointSet {
    fn index_mut(&mut self, k: Keypoint) -> &mut Point2 {
        &mut self.0[k.index()]
    }
}

impl Serialize for KeypointSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(KEYPOINT_COUNT))?;
        for (k, p) in self.iter() {
            map.serialize_entry(k.name(), &p)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for KeypointSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<String, Point2>::deserialize(deserializer)?;
        let mut out = [None; KEYPOINT_COUNT];
        for (name, p) in raw {
            let k: Keypoint = name.parse().map_err(D::Error::custom)?;
            if !p.is_finite() {
                return Err(D::Error::custom(format!("keypoint `{name}` is not finite")));
            }
            out[k.index()] = Some(p);
        }
        if let Some(k) = Keypoint::ALL.iter().find(|k| out[k.index()].is_none()) {
            return Err(D::Error::custom(format!("missing keypoint `{k}`")));
        }
        Ok(KeypointSet(out.map(|p| p.expect("checked above"))))
    }
}

/// One transformed part, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartPose {
    pub part: Part,
    pub head: Point2,
    pub tail: Point2,
    pub sigma_along: f64,
    pub sigma_across: f64,
}

impl PartPose {
    pub fn endpoint(&self, e: Endpoint) -> Point2 {
        match e {
            Endpoint::Head => self.head,
            Endpoint::Tail => self.tail,
        }
    }
}

/// A transformed template: per-part anchors and the derived keypoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub canvas: Canvas,
    /// Canonical [`Part`] order.
    pub parts: Vec<PartPose>,
    pub keypoints: KeypointSet,
}

impl PoseEstimate {
    pub fn part(&self, p: Part) -> &PartPose {
        &self.parts[p.index()]
    }
}

/// Sigma growth for a transformed part: elongated parts scale their sigmas
/// with the transformed anchor distance; coincident-anchor parts keep their
/// template sigmas.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SigmaModel {
    pub template_length: f64,
    /// `max(sigma_along, length / 2)`, in template units.
    pub along: f64,
    pub across: f64,
}

impl SigmaModel {
    pub fn of(spec: &super::PartSpec) -> Self {
        let len = spec.length();
        SigmaModel {
            template_length: len,
            along: if len > 0.0 { spec.sigma_along.max(0.5 * len) } else { spec.sigma_along },
            across: spec.sigma_across,
        }
    }

    pub fn is_rigid(&self) -> bool {
        self.template_length == 0.0
    }

    /// Pixel sigmas given the transformed anchor distance in pixels.
    pub fn pixel_sigmas(&self, pixel_length: f64, canvas: Canvas) -> (f64, f64) {
        if self.is_rigid() {
            let (sx, sy) = canvas.pixel_scale();
            let s = (sx * sy).sqrt();
            (self.along * s, self.across * s)
        } else {
            let stretch = pixel_length / self.template_length;
            (self.along * stretch, self.across * stretch)
        }
    }
}

/// Applies one transform per part (canonical [`Part`] order) and maps the
/// result to pixels on the template's canvas.
pub fn transform_template(t: &TemplateSpec, transforms: &[AffineTransform]) -> Result<PoseEstimate> {
    transform_template_on(t, transforms, t.canvas)
}

/// Like [`transform_template`] but on an explicit canvas.
pub fn transform_template_on(
    t: &TemplateSpec,
    transforms: &[AffineTransform],
    canvas: Canvas,
) -> Result<PoseEstimate> {
    if transforms.len() < PART_COUNT {
        return Err(Error::MissingTransform(Part::ALL[transforms.len()].name().into()));
    }
    let parts: Vec<PartPose> = Part::ALL
        .iter()
        .map(|&part| {
            let spec = t.part(part);
            let m = &transforms[part.index()];
            let head = canvas.to_pixel(m.apply(spec.head));
            let tail = canvas.to_pixel(m.apply(spec.tail));
            let (sigma_along, sigma_across) =
                SigmaModel::of(spec).pixel_sigmas(head.distance(tail), canvas);
            PartPose { part, head, tail, sigma_along, sigma_across }
        })
        .collect();
    let refs = t.keypoint_refs();
    let keypoints = KeypointSet(refs.map(|(p, e)| parts[p.index()].endpoint(e)));
    Ok(PoseEstimate { canvas, parts, keypoints })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_keeps_template_anchors() {
        let t = TemplateSpec::t_new();
        let pose = transform_template(&t, &[AffineTransform::IDENTITY; PART_COUNT]).unwrap();
        for kp in Keypoint::ALL {
            let expected = t.canvas.to_pixel(t.keypoint(kp));
            assert!((pose.keypoints[kp].x - expected.x).abs() < 1e-12);
            assert!((pose.keypoints[kp].y - expected.y).abs() < 1e-12);
        }
        for p in &pose.parts {
            let spec = t.part(p.part);
            assert!(p.head.distance(t.canvas.to_pixel(spec.head)) < 1e-12);
            assert!(p.tail.distance(t.canvas.to_pixel(spec.tail)) < 1e-12);
        }
    }

    #[test]
    fn uniform_translation_shifts_keypoints() {
        let t = TemplateSpec::t_new();
        let base = transform_template(&t, &[AffineTransform::IDENTITY; PART_COUNT]).unwrap();
        let moved = transform_template(&t, &[AffineTransform::translation(0.1, 0.0); PART_COUNT]).unwrap();
        let shift = 0.1 * (t.canvas.width as f64 - 1.0) / 2.0;
        for kp in Keypoint::ALL {
            assert!((moved.keypoints[kp].x - base.keypoints[kp].x - shift).abs() < 1e-9);
            assert_eq!(moved.keypoints[kp].y, base.keypoints[kp].y);
        }
    }

    #[test]
    fn random_transforms_match_hand_application() {
        let t = TemplateSpec::t_orig();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let transforms: Vec<AffineTransform> = (0..PART_COUNT)
            .map(|_| {
                let mut p: [f64; 6] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
                p[0] += 1.0;
                p[4] += 1.0;
                AffineTransform::from_params(&p)
            })
            .collect();
        let pose = transform_template(&t, &transforms).unwrap();
        let (sx, sy) = t.canvas.pixel_scale();
        for kp in Keypoint::ALL {
            let (id, e) = t.keypoint_map[kp.name()];
            let spec = t.part_by_id(id).unwrap();
            let part: Part = spec.name.parse().unwrap();
            let m = transforms[part.index()].matrix();
            let q = spec.endpoint(e);
            let x = m[0][0] * q.x + m[0][1] * q.y + m[0][2];
            let y = m[1][0] * q.x + m[1][1] * q.y + m[1][2];
            assert!((pose.keypoints[kp].x - (x + 1.0) * sx).abs() < 1e-12);
            assert!((pose.keypoints[kp].y - (y + 1.0) * sy).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_transform_is_reported() {
        let t = TemplateSpec::t_new();
        let err = transform_template(&t, &[AffineTransform::IDENTITY; 17]).unwrap_err();
        assert!(matches!(err, Error::MissingTransform(ref p) if p == "head"));
    }

    #[test]
    fn keypoints_are_part_anchors() {
        let t = TemplateSpec::t_new();
        let transforms: Vec<_> = (0..PART_COUNT)
            .map(|i| AffineTransform::translation(0.01 * i as f64, -0.02 * i as f64))
            .collect();
        let pose = transform_template(&t, &transforms).unwrap();
        for (kp, (part, e)) in Keypoint::ALL.iter().zip(t.keypoint_refs()) {
            assert_eq!(pose.keypoints[*kp], pose.part(part).endpoint(e));
        }
    }

    #[test]
    fn keypoint_set_requires_every_name() {
        let t = TemplateSpec::t_new();
        let pose = transform_template(&t, &[AffineTransform::IDENTITY; PART_COUNT]).unwrap();
        let mut v = serde_json::to_value(pose.keypoints).unwrap();
        let back: KeypointSet = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(back, pose.keypoints);
        v.as_object_mut().unwrap().remove("neck");
        assert!(serde_json::from_value::<KeypointSet>(v).is_err());
    }
}
