//! Boxes, detections, ground-truth instances and the two geometric
//! primitives everything else is built on: box IoU and polygon bounds.
//!
//! Coordinates are continuous pixel positions with the origin at the top-left
//! corner. Area is `(x_max - x_min) * (y_max - y_min)`; there is no `+1`
//! pixel convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = u32;

/// Axis-aligned box with strictly positive area and finite coordinates.
///
/// Serialized as `[x_min, y_min, x_max, y_max]`; deserialization validates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite coordinate in {coords:?}")));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidBox(format!("zero or negative extent in {coords:?}")));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from COCO-style `[x, y, width, height]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width && self.y_max <= height
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Largest per-coordinate absolute difference to `other`.
    pub fn max_coord_diff(&self, other: &BBox) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Intersection-over-union of two boxes.
///
/// Symmetric, exactly `1.0` for identical boxes and `0.0` for disjoint or
/// edge-touching boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A predicted box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection", into = "RawDetection")]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: ClassId,
    confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox, class_id: ClassId, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidBox(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            bbox,
            class_id,
            confidence,
        })
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

/// Wire shape of a detection: `{"bbox":[x1,y1,x2,y2],"class":c,"conf":p}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RawDetection {
    pub bbox: [f64; 4],
    pub class: ClassId,
    pub conf: f64,
}

impl TryFrom<RawDetection> for Detection {
    type Error = Error;

    fn try_from(raw: RawDetection) -> Result<Self> {
        Detection::new(BBox::try_from(raw.bbox)?, raw.class, raw.conf)
    }
}

impl From<Detection> for RawDetection {
    fn from(d: Detection) -> Self {
        RawDetection {
            bbox: d.bbox.to_array(),
            class: d.class_id,
            conf: d.confidence,
        }
    }
}

/// Ordered polygon vertices in pixel coordinates.
pub type Polygon = Vec<[f64; 2]>;

/// Tight axis-aligned bounds of a polygon.
pub fn mask_bounds(polygon: &[[f64; 2]]) -> Result<BBox> {
    if polygon.len() < 3 {
        return Err(Error::DegeneratePolygon(format!(
            "{} vertices, need at least 3",
            polygon.len()
        )));
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for v in polygon {
        for axis in 0..2 {
            lo[axis] = lo[axis].min(v[axis]);
            hi[axis] = hi[axis].max(v[axis]);
        }
    }
    BBox::new(lo[0], lo[1], hi[0], hi[1])
        .map_err(|e| Error::DegeneratePolygon(format!("zero-area bounds ({e})")))
}

/// A labelled object instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance", into = "RawInstance")]
pub struct GroundTruthInstance {
    pub bbox: BBox,
    pub class_id: ClassId,
    mask: Option<Polygon>,
}

impl GroundTruthInstance {
    pub fn new(bbox: BBox, class_id: ClassId) -> Self {
        Self {
            bbox,
            class_id,
            mask: None,
        }
    }

    /// Attaches a mask; its bounds must agree with the box within one pixel.
    pub fn with_mask(bbox: BBox, class_id: ClassId, mask: Polygon) -> Result<Self> {
        let bounds = mask_bounds(&mask)?;
        if bounds.max_coord_diff(&bbox) > 1.0 {
            return Err(Error::InvalidBox(format!(
                "mask bounds {:?} disagree with box {:?}",
                bounds.to_array(),
                bbox.to_array()
            )));
        }
        Ok(Self {
            bbox,
            class_id,
            mask: Some(mask),
        })
    }

    pub fn mask(&self) -> Option<&[[f64; 2]]> {
        self.mask.as_deref()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawInstance {
    bbox: [f64; 4],
    class: ClassId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Polygon>,
}

impl TryFrom<RawInstance> for GroundTruthInstance {
    type Error = Error;

    fn try_from(raw: RawInstance) -> Result<Self> {
        let bbox = BBox::try_from(raw.bbox)?;
        match raw.mask {
            Some(mask) => GroundTruthInstance::with_mask(bbox, raw.class, mask),
            None => Ok(GroundTruthInstance::new(bbox, raw.class)),
        }
    }
}

impl From<GroundTruthInstance> for RawInstance {
    fn from(g: GroundTruthInstance) -> Self {
        RawInstance {
            bbox: g.bbox.to_array(),
            class: g.class_id,
            mask: g.mask,
        }
    }
}
