use crate::error::{Error, Result};
use crate::numerics::DenseTensor;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Skill {
    SideGrasp,
    LiftUp,
    TopPinch,
}

impl Skill {
    pub const ALL: [Skill; 3] = [Skill::SideGrasp, Skill::LiftUp, Skill::TopPinch];

    pub fn display_name(self) -> &'static str {
        match self {
            Skill::SideGrasp => "side Grasp",
            Skill::LiftUp => "Lift up",
            Skill::TopPinch => "top Pinch",
        }
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Skill::SideGrasp => "SideGrasp",
            Skill::LiftUp => "LiftUp",
            Skill::TopPinch => "TopPinch",
        })
    }
}

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl FromStr for Skill {
    type Err = Error;

    /// Case-insensitive; spaces, dashes and underscores are ignored.
    fn from_str(s: &str) -> Result<Self> {
        match squash(s).as_str() {
            "sidegrasp" => Ok(Skill::SideGrasp),
            "liftup" => Ok(Skill::LiftUp),
            "toppinch" => Ok(Skill::TopPinch),
            _ => Err(Error::invalid(format!("unknown skill {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeCategory {
    Cylindrical,
    Squashed,
    ThinSmall,
    Other,
}

impl ShapeCategory {
    pub const ALL: [ShapeCategory; 4] = [
        ShapeCategory::Cylindrical,
        ShapeCategory::Squashed,
        ShapeCategory::ThinSmall,
        ShapeCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ShapeCategory::Cylindrical => "cylindrical",
            ShapeCategory::Squashed => "squashed",
            ShapeCategory::ThinSmall => "thin_small",
            ShapeCategory::Other => "other",
        }
    }
}

impl fmt::Display for ShapeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match squash(s).as_str() {
            "cylindrical" => Ok(ShapeCategory::Cylindrical),
            "squashed" => Ok(ShapeCategory::Squashed),
            "thinsmall" | "thin" | "small" => Ok(ShapeCategory::ThinSmall),
            "other" => Ok(ShapeCategory::Other),
            _ => Err(Error::invalid(format!("unknown shape category {s:?}"))),
        }
    }
}

/// Axis-aligned pixel box with `0 <= x1 < x2 <= width`, `0 <= y1 < y2 <= height`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64, width: usize, height: usize) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate(width, height)?;
        Ok(b)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let ok = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && 0.0 <= self.x1
            && self.x1 < self.x2
            && self.x2 <= width as f64
            && 0.0 <= self.y1
            && self.y1 < self.y2
            && self.y2 <= height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "bounding box {self:?} is not inside a {width}x{height} image"
            )))
        }
    }

    /// Clamps into the image; `None` when nothing of the box remains.
    pub fn clipped(&self, width: usize, height: usize) -> Option<Self> {
        let (w, h) = (width as f64, height as f64);
        let b = Self {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        };
        (b.x1 < b.x2 && b.y1 < b.y2).then_some(b)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersects(&self, other: &Self) -> bool {
        self.x1 < other.x2 && other.x1 < self.x2 && self.y1 < other.y2 && other.y1 < self.y2
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// The user's command.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction(String);

impl Instruction {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::invalid("instruction text is empty"));
        }
        Ok(Self(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

/// What the robot sees: an optional RGB image `[3, H, W]` in `[0, 1]`,
/// its extents, and an optional externally supplied shape label.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    pub image: Option<DenseTensor>,
    pub shape_label: Option<ShapeCategory>,
}

impl Observation {
    /// A 640x480 frame with no pixels attached.
    pub fn blank() -> Self {
        Self {
            width: 640,
            height: 480,
            image: None,
            shape_label: None,
        }
    }

    pub fn from_image(image: DenseTensor) -> Result<Self> {
        if image.rank() != 3 || image.shape()[0] != 3 {
            return Err(Error::invalid(format!(
                "expected a [3, H, W] image, got {:?}",
                image.shape()
            )));
        }
        let (height, width) = (image.shape()[1], image.shape()[2]);
        if width == 0 || height == 0 {
            return Err(Error::invalid("image extents must be positive"));
        }
        Ok(Self {
            width,
            height,
            image: Some(image),
            shape_label: None,
        })
    }
}

/// Selected skill with the box it applies to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillDecision {
    pub skill: Skill,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub rationale: String,
}
