//! Score a small in-memory detection scene: greedy matching, the
//! precision/recall sweep, and average precision under both integration
//! variants.
//!
//! ```bash
//! cargo run --example evaluate_detections
//! ```

use proctor::eval::{
    average_precision, confusion_counts, pr_curve, precision_recall, EvalImage, Interpolation,
};
use proctor::geometry::{BBox, Detection};

fn det(bbox: BBox, score: f64) -> Detection {
    Detection {
        bbox,
        score,
        class_id: 0,
    }
}

fn main() {
    // Two images, three ground truths. One prediction is a clean hit, one a
    // sloppy hit, one a duplicate, one pure noise; one ground truth is missed.
    let images = vec![
        EvalImage {
            ground_truths: vec![
                BBox::new(10.0, 10.0, 50.0, 90.0),
                BBox::new(200.0, 30.0, 240.0, 110.0),
            ],
            predictions: vec![
                det(BBox::new(10.0, 10.0, 50.0, 90.0), 0.95), // exact hit
                det(BBox::new(205.0, 35.0, 245.0, 115.0), 0.80), // overlapping hit
                det(BBox::new(12.0, 12.0, 52.0, 92.0), 0.70), // duplicate of the first
            ],
        },
        EvalImage {
            ground_truths: vec![BBox::new(400.0, 200.0, 440.0, 280.0)],
            predictions: vec![det(BBox::new(100.0, 500.0, 140.0, 580.0), 0.60)], // noise
        },
    ];

    for (i, image) in images.iter().enumerate() {
        let counts = confusion_counts(&image.predictions, &image.ground_truths, 0.5);
        let (precision, recall) = precision_recall(&counts);
        println!(
            "image {i}: tp={} fp={} fn={} precision={precision:.3} recall={recall:.3}",
            counts.true_positives, counts.false_positives, counts.false_negatives
        );
    }

    let curve = pr_curve(&images, 0.5);
    println!("\nconfidence sweep (recall, precision):");
    for point in &curve.points {
        println!("  ({:.3}, {:.3})", point.recall, point.precision);
    }

    let ap_all = average_precision(&images, 0.5, Interpolation::AllPoints);
    let ap_101 = average_precision(&images, 0.5, Interpolation::Points101);
    println!("\nap@0.50 (all-point integral): {ap_all:.4}");
    println!("ap@0.50 (101-point variant):  {ap_101:.4}");
}
