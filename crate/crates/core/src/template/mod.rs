//! Gaussian body-part templates.
//!
//! A template is 18 elongated Gaussians, each anchored by a head and a tail
//! point in template units (`[-1, 1]²`, y down). Parts are identified by the
//! fixed [`Part`] vocabulary; the 15 evaluation keypoints are looked up as part
//! endpoints through the template's keypoint map.

mod pose;
mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coarse2fine::PartMapping;
use crate::error::{Error, Result};
use crate::geometry::Point2;

pub use pose::{transform_template, transform_template_on, KeypointSet, PartPose, PoseEstimate};
pub use render::{
    flip_heatmap, render, render_template, ChannelLayout, Heatmap, RenderOptions,
    EXACT_WINDOW_SIGMAS,
};

pub(crate) use render::{gaussian_with_partials, GaussianShape};

pub const PART_COUNT: usize = 18;
pub const KEYPOINT_COUNT: usize = 15;

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: [$name; [$($text),+].len()] = [$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Schema(format!(
                        concat!("unknown ", stringify!($name), " `{}`"), other
                    ))),
                }
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                s.parse()
            }
        }

        impl From<$name> for String {
            fn from(v: $name) -> String {
                v.name().to_string()
            }
        }
    };
}

named_enum! {
    /// The 18 body parts, in canonical order. Per-part transform lists and
    /// heatmap channels are indexed in this order.
    Part {
        Core => "core",
        LeftHip => "left_hip",
        RightHip => "right_hip",
        LeftThigh => "left_thigh",
        RightThigh => "right_thigh",
        LeftShin => "left_shin",
        RightShin => "right_shin",
        LeftShoulder => "left_shoulder",
        RightShoulder => "right_shoulder",
        LeftUpperArm => "left_upper_arm",
        RightUpperArm => "right_upper_arm",
        LeftForearm => "left_forearm",
        RightForearm => "right_forearm",
        LeftHand => "left_hand",
        RightHand => "right_hand",
        LeftFoot => "left_foot",
        RightFoot => "right_foot",
        Head => "head",
    }
}

named_enum! {
    /// The 15 evaluation keypoints.
    Keypoint {
        Abdomen => "abdomen",
        Chest => "chest",
        Neck => "neck",
        LeftHip => "left_hip",
        RightHip => "right_hip",
        LeftShoulder => "left_shoulder",
        RightShoulder => "right_shoulder",
        LeftKnee => "left_knee",
        RightKnee => "right_knee",
        LeftAnkle => "left_ankle",
        RightAnkle => "right_ankle",
        LeftElbow => "left_elbow",
        RightElbow => "right_elbow",
        LeftWrist => "left_wrist",
        RightWrist => "right_wrist",
    }
}

/// Swaps a `left_`/`right_` prefix. Names without a side map to themselves.
fn mirror_name(name: &str) -> String {
    if let Some(rest) = name.strip_prefix("left_") {
        format!("right_{rest}")
    } else if let Some(rest) = name.strip_prefix("right_") {
        format!("left_{rest}")
    } else {
        name.to_string()
    }
}

impl Part {
    /// The same part on the other side of the body.
    pub fn mirror(self) -> Part {
        mirror_name(self.name()).parse().expect("swap table is closed")
    }
}

impl Keypoint {
    pub fn mirror(self) -> Keypoint {
        mirror_name(self.name()).parse().expect("swap table is closed")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Head,
    Tail,
}

/// Canvas size in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

impl Canvas {
    pub const DEFAULT: Canvas = Canvas { width: 256, height: 256 };

    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::Validation(format!(
                "canvas must be at least 2×2, got {width}×{height}"
            )));
        }
        Ok(Canvas { width, height })
    }

    /// Pixels per template unit along x and y.
    pub fn pixel_scale(&self) -> (f64, f64) {
        (
            0.5 * (self.width as f64 - 1.0),
            0.5 * (self.height as f64 - 1.0),
        )
    }

    /// Maps template units to pixels: `x_px = (x + 1) / 2 · (W - 1)`.
    pub fn to_pixel(&self, p: Point2) -> Point2 {
        let (sx, sy) = self.pixel_scale();
        Point2::new((p.x + 1.0) * sx, (p.y + 1.0) * sy)
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub id: u32,
    pub name: String,
    pub head: Point2,
    pub tail: Point2,
    pub sigma_along: f64,
    pub sigma_across: f64,
}

impl PartSpec {
    pub fn endpoint(&self, e: Endpoint) -> Point2 {
        match e {
            Endpoint::Head => self.head,
            Endpoint::Tail => self.tail,
        }
    }

    pub fn length(&self) -> f64 {
        self.head.distance(self.tail)
    }
}

/// `[part_id, endpoint, part_id, endpoint]`: two anchors that should coincide.
pub type Adjacency = (u32, Endpoint, u32, Endpoint);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub canvas: Canvas,
    pub parts: Vec<PartSpec>,
    pub adjacency: Vec<Adjacency>,
    pub keypoint_map: BTreeMap<String, (u32, Endpoint)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<PartMapping>,
}

const T_ORIG_JSON: &str = include_str!("../../data/t_orig.json");
const T_NEW_JSON: &str = include_str!("../../data/t_new.json");

/// Parses and validates a template from JSON text.
pub fn load_template(source: &str) -> Result<TemplateSpec> {
    let t: TemplateSpec = serde_json::from_str(source).map_err(Error::schema_from_json)?;
    t.validate()?;
    Ok(t)
}

pub fn load_template_file(path: impl AsRef<Path>) -> Result<TemplateSpec> {
    load_template(&std::fs::read_to_string(path)?)
}

impl TemplateSpec {
    /// Arms-out template.
    pub fn t_orig() -> TemplateSpec {
        load_template(T_ORIG_JSON).expect("shipped t_orig.json is valid")
    }

    /// Arms-down template.
    pub fn t_new() -> TemplateSpec {
        load_template(T_NEW_JSON).expect("shipped t_new.json is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("template serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.parts.len() != PART_COUNT {
            return fail(format!("expected {PART_COUNT} parts, found {}", self.parts.len()));
        }
        Canvas::new(self.canvas.width, self.canvas.height)?;

        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for p in &self.parts {
            if !(1..=20).contains(&p.id) {
                return fail(format!("part id {} outside 1..=20", p.id));
            }
            if !ids.insert(p.id) {
                return fail(format!("duplicate part id {}", p.id));
            }
            let part: Part = p
                .name
                .parse()
                .map_err(|_| Error::Validation(format!("unknown part name `{}`", p.name)))?;
            if !names.insert(part) {
                return fail(format!("duplicate part name `{}`", p.name));
            }
            if !(p.head.is_finite() && p.tail.is_finite()) {
                return fail(format!("part `{}` has non-finite anchors", p.name));
            }
            if !(p.sigma_along > 0.0 && p.sigma_across > 0.0)
                || !(p.sigma_along.is_finite() && p.sigma_across.is_finite())
            {
                return fail(format!("part `{}` needs positive finite sigmas", p.name));
            }
            if p.head == p.tail && p.sigma_along != p.sigma_across {
                return fail(format!(
                    "part `{}` has coincident anchors but anisotropic sigmas",
                    p.name
                ));
            }
        }

        for &(a, _, b, _) in &self.adjacency {
            for id in [a, b] {
                if !ids.contains(&id) {
                    return fail(format!("adjacency references unknown part id {id}"));
                }
            }
        }

        let mut seen = BTreeSet::new();
        for (name, &(id, _)) in &self.keypoint_map {
            let kp: Keypoint = name
                .parse()
                .map_err(|_| Error::Validation(format!("unknown keypoint `{name}`")))?;
            seen.insert(kp);
            if !ids.contains(&id) {
                return fail(format!("keypoint `{name}` references unknown part id {id}"));
            }
        }
        if seen.len() != KEYPOINT_COUNT {
            let missing: Vec<_> = Keypoint::ALL
                .iter()
                .filter(|k| !seen.contains(k))
                .map(|k| k.name())
                .collect();
            return fail(format!("keypoint map is missing {missing:?}"));
        }

        if let Some(m) = &self.mapping {
            m.validate()?;
        }
        Ok(())
    }

    pub fn part(&self, part: Part) -> &PartSpec {
        self.parts
            .iter()
            .find(|p| p.name == part.name())
            .expect("validated template has every part")
    }

    pub fn part_by_id(&self, id: u32) -> Option<&PartSpec> {
        self.parts.iter().find(|p| p.id == id)
    }

    pub(crate) fn part_of_id(&self, id: u32) -> Part {
        self.part_by_id(id)
            .and_then(|p| p.name.parse().ok())
            .expect("validated template resolves ids")
    }

    /// Keypoint location in template units.
    pub fn keypoint(&self, kp: Keypoint) -> Point2 {
        let (id, e) = self.keypoint_map[kp.name()];
        self.part_by_id(id).expect("validated").endpoint(e)
    }

    /// Keypoint references resolved to canonical parts, in [`Keypoint::ALL`] order.
    pub(crate) fn keypoint_refs(&self) -> [(Part, Endpoint); KEYPOINT_COUNT] {
        Keypoint::ALL.map(|kp| {
            let (id, e) = self.keypoint_map[kp.name()];
            (self.part_of_id(id), e)
        })
    }

    pub(crate) fn adjacency_refs(&self) -> Vec<(Part, Endpoint, Part, Endpoint)> {
        self.adjacency
            .iter()
            .map(|&(a, ea, b, eb)| (self.part_of_id(a), ea, self.part_of_id(b), eb))
            .collect()
    }

    /// The coarse-to-fine mapping stored with the template, or the default one.
    pub fn mapping_or_default(&self) -> PartMapping {
        self.mapping.clone().unwrap_or_else(PartMapping::default_mapping)
    }
}

/// Mirrors a template across the vertical axis: negates x, swaps left/right
/// part names and keypoint map entries. Ids and part order are kept, so the
/// operation is an exact involution.
pub fn flip_template(t: &TemplateSpec) -> TemplateSpec {
    let flip = |p: Point2| Point2::new(-p.x, p.y);
    let parts = t
        .parts
        .iter()
        .map(|p| PartSpec {
            id: p.id,
            name: mirror_name(&p.name),
            head: flip(p.head),
            tail: flip(p.tail),
            sigma_along: p.sigma_along,
            sigma_across: p.sigma_across,
        })
        .collect();
    let keypoint_map = t
        .keypoint_map
        .iter()
        .map(|(k, v)| (mirror_name(k), *v))
        .collect();
    TemplateSpec {
        name: t.name.clone(),
        note: t.note.clone(),
        canvas: t.canvas,
        parts,
        adjacency: t.adjacency.clone(),
        keypoint_map,
        mapping: t.mapping.clone(),
    }
}
