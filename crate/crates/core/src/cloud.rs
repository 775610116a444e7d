use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A 3-D point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn coord(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn distance_squared(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn distance(&self, other: &Point) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub fn offset(&self, dx: f64, dy: f64, dz: f64) -> Point {
        Point::new(self.x + dx, self.y + dy, self.z + dz)
    }
}

/// Per-point semantic class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SemanticLabel {
    Terrain,
    Vegetation,
    Cwd,
    Stem,
}

impl SemanticLabel {
    pub const ALL: [SemanticLabel; 4] = [
        SemanticLabel::Terrain,
        SemanticLabel::Vegetation,
        SemanticLabel::Cwd,
        SemanticLabel::Stem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticLabel::Terrain => "terrain",
            SemanticLabel::Vegetation => "vegetation",
            SemanticLabel::Cwd => "cwd",
            SemanticLabel::Stem => "stem",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SemanticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SemanticLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "terrain" => Ok(SemanticLabel::Terrain),
            "vegetation" => Ok(SemanticLabel::Vegetation),
            "cwd" => Ok(SemanticLabel::Cwd),
            "stem" => Ok(SemanticLabel::Stem),
            other => Err(format!("unknown semantic class `{other}`")),
        }
    }
}

/// Tree instance identifier. Unassigned points carry `None`.
pub type InstanceId = u32;

/// An ordered point set with optional per-point labels.
///
/// `heights` holds height above ground once [`crate::instance::normalize_heights`]
/// has run; it is not part of the interchange format.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledCloud {
    pub points: Vec<Point>,
    pub semantic: Option<Vec<SemanticLabel>>,
    pub instance: Option<Vec<Option<InstanceId>>>,
    pub heights: Option<Vec<f64>>,
}

impl LabeledCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            points,
            ..Default::default()
        })
    }

    pub fn with_semantic(mut self, labels: Vec<SemanticLabel>) -> Result<Self> {
        check_len("semantic", labels.len(), self.points.len())?;
        self.semantic = Some(labels);
        Ok(self)
    }

    pub fn with_instance(mut self, labels: Vec<Option<InstanceId>>) -> Result<Self> {
        check_len("instance", labels.len(), self.points.len())?;
        self.instance = Some(labels);
        Ok(self)
    }

    pub fn with_heights(mut self, heights: Vec<f64>) -> Result<Self> {
        check_len("heights", heights.len(), self.points.len())?;
        self.heights = Some(heights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks that every label sequence matches the point count.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let n = self.points.len();
        if let Some(s) = &self.semantic {
            check_len("semantic", s.len(), n)?;
        }
        if let Some(s) = &self.instance {
            check_len("instance", s.len(), n)?;
        }
        if let Some(h) = &self.heights {
            check_len("heights", h.len(), n)?;
        }
        Ok(())
    }

    /// Height above ground if normalised, raw z otherwise.
    pub fn height(&self, i: usize) -> f64 {
        match &self.heights {
            Some(h) => h[i],
            None => self.points[i].z,
        }
    }

    pub fn semantic_at(&self, i: usize) -> Option<SemanticLabel> {
        self.semantic.as_ref().map(|s| s[i])
    }

    pub fn instance_at(&self, i: usize) -> Option<InstanceId> {
        self.instance.as_ref().and_then(|s| s[i])
    }

    /// Indices of points carrying the given semantic label.
    pub fn indices_of(&self, label: SemanticLabel) -> Vec<usize> {
        match &self.semantic {
            Some(s) => (0..s.len()).filter(|&i| s[i] == label).collect(),
            None => Vec::new(),
        }
    }

    /// Sub-cloud of the given indices, in the given order, labels carried through.
    pub fn select(&self, indices: &[usize]) -> LabeledCloud {
        LabeledCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            semantic: self
                .semantic
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
            instance: self
                .instance
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
            heights: self
                .heights
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
        }
    }

    /// Concatenates clouds; a label sequence survives only if every part has it.
    pub fn concat(parts: &[LabeledCloud]) -> LabeledCloud {
        let all_sem = parts.iter().all(|p| p.semantic.is_some());
        let all_inst = parts.iter().all(|p| p.instance.is_some());
        let all_h = parts.iter().all(|p| p.heights.is_some());
        let mut out = LabeledCloud::default();
        if all_sem {
            out.semantic = Some(Vec::new());
        }
        if all_inst {
            out.instance = Some(Vec::new());
        }
        if all_h {
            out.heights = Some(Vec::new());
        }
        for p in parts {
            out.points.extend_from_slice(&p.points);
            if let (Some(dst), Some(src)) = (out.semantic.as_mut(), p.semantic.as_ref()) {
                dst.extend_from_slice(src);
            }
            if let (Some(dst), Some(src)) = (out.instance.as_mut(), p.instance.as_ref()) {
                dst.extend_from_slice(src);
            }
            if let (Some(dst), Some(src)) = (out.heights.as_mut(), p.heights.as_ref()) {
                dst.extend_from_slice(src);
            }
        }
        out
    }

    /// Componentwise minimum and maximum, `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point, Point)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (
                Point::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
                Point::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
            )
        }))
    }

    /// Rigidly translates every point.
    pub fn translate(&mut self, dx: f64, dy: f64, dz: f64) {
        for p in &mut self.points {
            *p = p.offset(dx, dy, dz);
        }
    }

    /// Sorted distinct instance ids present in the cloud.
    pub fn instance_ids(&self) -> Vec<InstanceId> {
        let mut ids: Vec<InstanceId> = self.instance.iter().flatten().filter_map(|&i| i).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::LengthMismatch {
            what,
            got,
            expected,
        });
    }
    Ok(())
}
