//! Axis-aligned box algebra: intersection-over-union and greedy
//! non-maximum suppression.

use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle in continuous pixel coordinates, corner format.
/// Valid boxes satisfy `x1 <= x2` and `y1 <= y2`; area may be zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// One detector output: a box with a confidence score and a behavior class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: u32,
}

/// Intersection area over union area of two boxes. Returns 0 when the union
/// has zero area, so two degenerate boxes never divide by zero.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy non-maximum suppression: repeatedly keep the highest-score
/// remaining detection and drop same-class detections overlapping it with
/// IOU above `iou_threshold`. Score ties keep input order. The survivors are
/// returned sorted by descending score.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    let mut suppressed = vec![false; detections.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(detections[i]);
        for &j in &order[pos + 1..] {
            if suppressed[j] || detections[j].class_id != detections[i].class_id {
                continue;
            }
            if iou(&detections[j].bbox, &detections[i].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}
