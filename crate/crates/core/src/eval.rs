//! Detection evaluation: greedy prediction/ground-truth matching,
//! precision/recall, average precision at a fixed IOU threshold, annotation
//! ingestion, and dataset statistics.
//!
//! Matching follows the usual convention: predictions are swept in order of
//! descending confidence and each claims the unmatched ground truth it
//! overlaps best, counting as a true positive when that overlap reaches the
//! IOU threshold. Average precision integrates the precision envelope over
//! recall; the default is all-point (continuous) integration, with the
//! 101-point interpolated variant available for comparison.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox, Detection};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: {message}")]
    OutOfRange {
        file: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// True/false positive and false negative tallies for one evaluated class.
/// `true_positives + false_negatives` equals the ground-truth count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Precision/recall pairs in descending-confidence sweep order, one point
/// per prediction. Recall never decreases along the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub total_ground_truths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// How the area under the precision envelope is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// Exact step integral over every achieved recall value.
    AllPoints,
    /// Mean envelope precision over the 101 recall grid points 0.00..=1.00.
    Points101,
}

/// Predictions and ground truths of one image for a single class.
#[derive(Debug, Clone, Default)]
pub struct EvalImage {
    pub predictions: Vec<Detection>,
    pub ground_truths: Vec<BBox>,
}

/// Greedy single-image, single-class matching. Predictions are visited in
/// descending confidence (ties keep input order); each claims its
/// best-overlap unmatched ground truth and is a true positive when that IOU
/// reaches `iou_thresh`. Returns one TP flag per prediction, aligned with
/// input order.
pub fn match_predictions(preds: &[Detection], gts: &[BBox], iou_thresh: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .partial_cmp(&preds[a].score)
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    let mut gt_matched = vec![false; gts.len()];
    let mut flags = vec![false; preds.len()];
    for &p in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_matched[g] {
                continue;
            }
            let overlap = iou(&preds[p].bbox, gt);
            let better = match best {
                None => true,
                Some((_, best_iou)) => overlap > best_iou,
            };
            if better {
                best = Some((g, overlap));
            }
        }
        if let Some((g, overlap)) = best {
            if overlap >= iou_thresh {
                gt_matched[g] = true;
                flags[p] = true;
            }
        }
    }
    flags
}

/// Tallies matching over one image.
pub fn confusion_counts(preds: &[Detection], gts: &[BBox], iou_thresh: f64) -> ConfusionCounts {
    let flags = match_predictions(preds, gts, iou_thresh);
    let tp = flags.iter().filter(|&&f| f).count();
    ConfusionCounts {
        true_positives: tp,
        false_positives: preds.len() - tp,
        false_negatives: gts.len() - tp,
    }
}

/// Recall = TP/(TP+FN) and Precision = TP/(TP+FP), each 0 when its
/// denominator is 0.
pub fn precision_recall(counts: &ConfusionCounts) -> (f64, f64) {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(
        counts.true_positives,
        counts.true_positives + counts.false_positives,
    );
    let recall = ratio(
        counts.true_positives,
        counts.true_positives + counts.false_negatives,
    );
    (precision, recall)
}

/// Sweeps all predictions across the dataset in descending-confidence order
/// (ties broken by image index, then input order) and accumulates the
/// precision/recall curve. Matching within each image is identical to
/// [`match_predictions`].
pub fn pr_curve(images: &[EvalImage], iou_thresh: f64) -> PrCurve {
    let total_ground_truths: usize = images.iter().map(|im| im.ground_truths.len()).sum();
    let mut entries: Vec<(usize, usize)> = Vec::new();
    for (img, image) in images.iter().enumerate() {
        for p in 0..image.predictions.len() {
            entries.push((img, p));
        }
    }
    entries.sort_by(|&(ia, pa), &(ib, pb)| {
        images[ib].predictions[pb]
            .score
            .partial_cmp(&images[ia].predictions[pa].score)
            .expect("scores are finite")
            .then(ia.cmp(&ib))
            .then(pa.cmp(&pb))
    });

    let mut gt_matched: Vec<Vec<bool>> = images
        .iter()
        .map(|im| vec![false; im.ground_truths.len()])
        .collect();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut points = Vec::with_capacity(entries.len());
    for (img, p) in entries {
        let pred = &images[img].predictions[p];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in images[img].ground_truths.iter().enumerate() {
            if gt_matched[img][g] {
                continue;
            }
            let overlap = iou(&pred.bbox, gt);
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        match best {
            Some((g, overlap)) if overlap >= iou_thresh => {
                gt_matched[img][g] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
        let recall = if total_ground_truths == 0 {
            0.0
        } else {
            tp as f64 / total_ground_truths as f64
        };
        points.push(PrPoint {
            recall,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    PrCurve {
        points,
        total_ground_truths,
    }
}

/// Area under the precision envelope of a PR curve. The envelope replaces
/// each precision by the maximum precision at equal-or-greater recall;
/// confidence scores only matter through their ordering.
pub fn average_precision_from_curve(curve: &PrCurve, interp: Interpolation) -> f64 {
    if curve.points.is_empty() || curve.total_ground_truths == 0 {
        return 0.0;
    }
    let n = curve.points.len();
    let mut envelope = vec![0.0; n];
    let mut running = 0.0f64;
    for i in (0..n).rev() {
        running = running.max(curve.points[i].precision);
        envelope[i] = running;
    }
    match interp {
        Interpolation::AllPoints => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (point, env) in curve.points.iter().zip(&envelope) {
                ap += (point.recall - prev_recall) * env;
                prev_recall = point.recall;
            }
            ap
        }
        Interpolation::Points101 => {
            let mut sum = 0.0;
            for step in 0..=100 {
                let target = step as f64 / 100.0;
                let p = curve
                    .points
                    .iter()
                    .zip(&envelope)
                    .find(|(pt, _)| pt.recall >= target - 1e-12)
                    .map_or(0.0, |(_, &env)| env);
                sum += p;
            }
            sum / 101.0
        }
    }
}

/// Single-class average precision over a dataset at one IOU threshold.
pub fn average_precision(images: &[EvalImage], iou_thresh: f64, interp: Interpolation) -> f64 {
    average_precision_from_curve(&pr_curve(images, iou_thresh), interp)
}

/// One normalized annotation line: class id plus center/size in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// All annotation lines of one image; `records` is empty for images whose
/// annotation file has no labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotations {
    pub image_id: String,
    pub records: Vec<AnnotationRecord>,
}

/// A directory of annotation files, ordered by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationCorpus {
    pub images: Vec<ImageAnnotations>,
}

impl AnnotationCorpus {
    pub fn label_count(&self) -> usize {
        self.images.iter().map(|im| im.records.len()).sum()
    }
}

/// Converts a normalized center-format record to a pixel corner box:
/// `((cx-w/2)*W, (cy-h/2)*H, (cx+w/2)*W, (cy+h/2)*H)`.
pub fn box_from_record(record: &AnnotationRecord, img_w: f64, img_h: f64) -> BBox {
    BBox::new(
        (record.cx - record.w / 2.0) * img_w,
        (record.cy - record.h / 2.0) * img_h,
        (record.cx + record.w / 2.0) * img_w,
        (record.cy + record.h / 2.0) * img_h,
    )
}

/// Inverse of [`box_from_record`]: pixel corner box back to normalized
/// `(cx, cy, w, h)`.
pub fn normalized_center(bbox: &BBox, img_w: f64, img_h: f64) -> (f64, f64, f64, f64) {
    (
        (bbox.x1 + bbox.x2) / 2.0 / img_w,
        (bbox.y1 + bbox.y2) / 2.0 / img_h,
        (bbox.x2 - bbox.x1) / img_w,
        (bbox.y2 - bbox.y1) / img_h,
    )
}

/// Parses the lines of one annotation file: `class_id cx cy w h`,
/// whitespace-separated, geometry normalized to [0,1] with positive size.
/// Blank lines are skipped; anything else malformed reports the file and
/// line number.
pub fn parse_annotation_lines(
    image_id: &str,
    text: &str,
    file_label: &str,
) -> Result<Vec<AnnotationRecord>, EvalError> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(EvalError::Parse {
                file: file_label.to_string(),
                line: line_no,
                message: format!(
                    "expected 5 fields `class_id cx cy w h`, got {}",
                    fields.len()
                ),
            });
        }
        let class_id: u32 = fields[0].parse().map_err(|_| EvalError::Parse {
            file: file_label.to_string(),
            line: line_no,
            message: format!("invalid class id `{}`", fields[0]),
        })?;
        let mut geometry = [0.0f64; 4];
        for (slot, field) in geometry.iter_mut().zip(&fields[1..]) {
            *slot = field.parse().map_err(|_| EvalError::Parse {
                file: file_label.to_string(),
                line: line_no,
                message: format!("invalid number `{field}`"),
            })?;
        }
        let [cx, cy, w, h] = geometry;
        for (name, value) in [("cx", cx), ("cy", cy), ("w", w), ("h", h)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(EvalError::OutOfRange {
                    file: file_label.to_string(),
                    line: line_no,
                    message: format!("{name}={value} outside [0,1]"),
                });
            }
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(EvalError::OutOfRange {
                file: file_label.to_string(),
                line: line_no,
                message: format!("box size {w}x{h} must be positive"),
            });
        }
        records.push(AnnotationRecord {
            image_id: image_id.to_string(),
            class_id,
            cx,
            cy,
            w,
            h,
        });
    }
    Ok(records)
}

/// Reads every `.txt` file of a directory as one image's annotations.
/// Files are visited in filename order; the file stem is the image id.
pub fn parse_annotations(dir: &Path) -> Result<AnnotationCorpus, EvalError> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|entry| entry.path())
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    paths.sort();
    let mut images = Vec::with_capacity(paths.len());
    for path in paths {
        let image_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let text = fs::read_to_string(&path)?;
        let records = parse_annotation_lines(&image_id, &text, &path.to_string_lossy())?;
        images.push(ImageAnnotations { image_id, records });
    }
    Ok(AnnotationCorpus { images })
}

/// One prediction line of a predictions file: absolute pixel corners.
/// Serialized one JSON object per line with exactly these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub image_id: String,
    pub class_id: u32,
    pub score: f64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Reads a line-delimited predictions file; scores must lie in [0,1].
pub fn parse_predictions(path: &Path) -> Result<Vec<PredictionRecord>, EvalError> {
    let text = fs::read_to_string(path)?;
    let file_label = path.to_string_lossy();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let record: PredictionRecord =
            serde_json::from_str(line).map_err(|e| EvalError::Parse {
                file: file_label.to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        if !(0.0..=1.0).contains(&record.score) {
            return Err(EvalError::OutOfRange {
                file: file_label.to_string(),
                line: idx + 1,
                message: format!("score {} outside [0,1]", record.score),
            });
        }
        out.push(record);
    }
    Ok(out)
}

/// Joins a ground-truth corpus with predictions for one class, yielding one
/// [`EvalImage`] per image. Predictions naming an image id absent from the
/// corpus are kept on a synthetic empty-GT image so they still count as
/// false positives.
pub fn collect_eval_images(
    corpus: &AnnotationCorpus,
    preds: &[PredictionRecord],
    class_id: u32,
    img_w: f64,
    img_h: f64,
) -> Vec<EvalImage> {
    let mut images: Vec<(String, EvalImage)> = corpus
        .images
        .iter()
        .map(|im| {
            let gts = im
                .records
                .iter()
                .filter(|r| r.class_id == class_id)
                .map(|r| box_from_record(r, img_w, img_h))
                .collect();
            (
                im.image_id.clone(),
                EvalImage {
                    predictions: Vec::new(),
                    ground_truths: gts,
                },
            )
        })
        .collect();
    for pred in preds.iter().filter(|p| p.class_id == class_id) {
        let detection = Detection {
            bbox: BBox::new(pred.x1, pred.y1, pred.x2, pred.y2),
            score: pred.score,
            class_id: pred.class_id,
        };
        match images.iter_mut().find(|(id, _)| *id == pred.image_id) {
            Some((_, image)) => image.predictions.push(detection),
            None => images.push((
                pred.image_id.clone(),
                EvalImage {
                    predictions: vec![detection],
                    ground_truths: Vec::new(),
                },
            )),
        }
    }
    images.into_iter().map(|(_, im)| im).collect()
}

/// Unweighted mean of per-class APs over the classes present in the ground
/// truth. Equal to plain AP when only one class appears.
pub fn mean_average_precision(
    corpus: &AnnotationCorpus,
    preds: &[PredictionRecord],
    iou_thresh: f64,
    interp: Interpolation,
    img_w: f64,
    img_h: f64,
) -> f64 {
    let mut classes: Vec<u32> = corpus
        .images
        .iter()
        .flat_map(|im| im.records.iter().map(|r| r.class_id))
        .collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return 0.0;
    }
    let sum: f64 = classes
        .iter()
        .map(|&c| {
            average_precision(
                &collect_eval_images(corpus, preds, c, img_w, img_h),
                iou_thresh,
                interp,
            )
        })
        .sum();
    sum / classes.len() as f64
}

/// Per-image hand-raise count buckets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HandRaiseHistogram {
    pub one_to_two: usize,
    pub three_to_five: usize,
    pub six_plus: usize,
}

/// Corpus-level counts in the shape of the dataset summary table: image and
/// label totals, labels per image, and the histogram of per-image hand-raise
/// counts (images with zero labels count toward `image_count` but no bucket).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub image_count: usize,
    pub label_count: usize,
    pub labels_per_image: f64,
    pub handraise_histogram: HandRaiseHistogram,
}

pub fn dataset_stats(corpus: &AnnotationCorpus) -> DatasetStats {
    let image_count = corpus.images.len();
    let label_count = corpus.label_count();
    let labels_per_image = if image_count == 0 {
        0.0
    } else {
        label_count as f64 / image_count as f64
    };
    let mut histogram = HandRaiseHistogram::default();
    for image in &corpus.images {
        match image.records.len() {
            0 => {}
            1..=2 => histogram.one_to_two += 1,
            3..=5 => histogram.three_to_five += 1,
            _ => histogram.six_plus += 1,
        }
    }
    DatasetStats {
        image_count,
        label_count,
        labels_per_image,
        handraise_histogram: histogram,
    }
}

impl DatasetStats {
    /// Deterministic text report: a summary line plus the histogram buckets.
    pub fn render_report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} images, {} labels, {:.2} labels/image",
            self.image_count, self.label_count, self.labels_per_image
        );
        let _ = writeln!(out, "hand-raise histogram:");
        let _ = writeln!(out, "  1-2: {}", self.handraise_histogram.one_to_two);
        let _ = writeln!(out, "  3-5: {}", self.handraise_histogram.three_to_five);
        let _ = writeln!(out, "  6+: {}", self.handraise_histogram.six_plus);
        out
    }
}
