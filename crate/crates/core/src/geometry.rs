//! Box arithmetic, distractor selection and the occlusion-gated attention weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel units, `(left, top, width, height)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Result<Self> {
        let b = Self { left, top, width, height };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.left, self.top, self.width, self.height].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("box {self:?}")));
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::Invalid(format!("box must have positive size, got {self:?}")));
        }
        Ok(())
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn center(&self) -> (f64, f64) {
        (self.left + self.width / 2.0, self.top + self.height / 2.0)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { left: self.left + dx, top: self.top + dy, ..*self }
    }

    /// Overlap area; boxes that only touch along an edge do not intersect.
    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.right().min(other.right()) - self.left.max(other.left)).max(0.0);
        let h = (self.bottom().min(other.bottom()) - self.top.max(other.top)).max(0.0);
        w * h
    }

    /// True when the open interiors overlap.
    pub fn intersects(&self, other: &BBox) -> bool {
        self.intersection(other) > 0.0
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Minimum overlap before target/distractor attention engages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub o_min: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self { o_min: 0.2 }
    }
}

impl OcclusionConfig {
    pub fn new(o_min: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&o_min) {
            return Err(Error::Invalid(format!("o_min must lie in [0, 1), got {o_min}")));
        }
        Ok(Self { o_min })
    }
}

/// `max(iou - o_min, 0) / (1 - o_min)`.
pub fn weight_from_iou(overlap: f64, cfg: OcclusionConfig) -> f64 {
    ((overlap - cfg.o_min).max(0.0) / (1.0 - cfg.o_min)).clamp(0.0, 1.0)
}

pub fn adaptive_weight(target_box: &BBox, distractor_box: &BBox, cfg: OcclusionConfig) -> f64 {
    weight_from_iou(iou(target_box, distractor_box), cfg)
}

/// The other box with the largest positive IoU against `target`.
///
/// Equal overlaps resolve to the smallest id, so the result does not depend on
/// iteration order. Returns `None` when `target` is absent or nothing overlaps.
pub fn select_distractor<'a, K, I>(target: K, boxes: I) -> Option<K>
where
    K: Ord + Copy + 'a,
    I: IntoIterator<Item = (K, &'a BBox)>,
{
    let boxes: Vec<(K, &BBox)> = boxes.into_iter().collect();
    let target_box = boxes.iter().find(|(id, _)| *id == target)?.1;
    let mut best: Option<(K, f64)> = None;
    for (id, b) in &boxes {
        if *id == target {
            continue;
        }
        let overlap = iou(target_box, b);
        if overlap <= 0.0 {
            continue;
        }
        best = match best {
            None => Some((*id, overlap)),
            Some((bid, bo)) if overlap > bo || (overlap == bo && *id < bid) => Some((*id, overlap)),
            keep => keep,
        };
    }
    best.map(|(id, _)| id)
}
