//! Box arithmetic and the 14-value human/object geometric relationship feature.

use crate::datamodel::{BoundingBox, ImageInfo};
use crate::error::{HoiError, Result};

pub const GEOMETRIC_FEATURE_LEN: usize = 14;

/// Geometric relationship between a human box and an object box:
///
/// ```text
/// [x1h/W, y1h/H, x2h/W, y2h/H, Ah/AI,
///  x1o/W, y1o/H, x2o/W, y2o/H, Ao/AI,
///  (x1h-x1o)/wo, (y1h-y1o)/ho, ln(wh/wo), ln(hh/ho)]
/// ```
///
/// where `wo`, `ho` (`wh`, `hh`) are the object (human) width and height and
/// `AI = W * H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricFeature(pub [f64; GEOMETRIC_FEATURE_LEN]);

impl GeometricFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn intersection_area(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    w * h
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Smallest box enclosing both `a` and `b`.
pub fn union_box(a: &BoundingBox, b: &BoundingBox) -> BoundingBox {
    BoundingBox { x1: a.x1.min(b.x1), y1: a.y1.min(b.y1), x2: a.x2.max(b.x2), y2: a.y2.max(b.y2) }
}

pub fn geometric_feature(human: &BoundingBox, object: &BoundingBox, img: &ImageInfo) -> Result<GeometricFeature> {
    for b in [human, object] {
        if !(b.width() > 0.0 && b.height() > 0.0) {
            return Err(HoiError::DegenerateBox(b.to_array()));
        }
    }
    if !(img.width > 0.0 && img.height > 0.0) {
        return Err(HoiError::invalid(format!("image {}", img.image_id), "width and height must be positive"));
    }
    let (w, h) = (img.width, img.height);
    let image_area = img.area();
    let (wo, ho) = (object.width(), object.height());
    Ok(GeometricFeature([
        human.x1 / w,
        human.y1 / h,
        human.x2 / w,
        human.y2 / h,
        human.area() / image_area,
        object.x1 / w,
        object.y1 / h,
        object.x2 / w,
        object.y2 / h,
        object.area() / image_area,
        (human.x1 - object.x1) / wo,
        (human.y1 - object.y1) / ho,
        (human.width() / wo).ln(),
        (human.height() / ho).ln(),
    ]))
}
