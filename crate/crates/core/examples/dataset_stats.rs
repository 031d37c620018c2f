//! Build a small annotation corpus on disk, parse it back, and print the
//! dataset statistics table (image/label counts, labels per image, and the
//! per-image hand-raise histogram).
//!
//! ```bash
//! cargo run --example dataset_stats
//! ```

use std::fs;

use proctor::eval::{dataset_stats, parse_annotations};

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    // one file per image, normalized center-format lines: class_id cx cy w h
    let corpus: &[(&str, usize)] = &[
        ("lecture_001", 2),
        ("lecture_002", 3),
        ("lecture_003", 4),
        ("lecture_004", 0), // image with no labels still counts as an image
        ("lecture_005", 7),
    ];
    for (name, labels) in corpus {
        let mut text = String::new();
        for i in 0..*labels {
            let cx = 0.1 + 0.1 * i as f64;
            text.push_str(&format!("0 {cx:.2} 0.50 0.08 0.20\n"));
        }
        fs::write(dir.path().join(format!("{name}.txt")), text).expect("writable");
    }

    let parsed = parse_annotations(dir.path()).expect("corpus parses");
    let stats = dataset_stats(&parsed);
    print!("{}", stats.render_report());
}
