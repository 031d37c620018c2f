//! Fuse three recorded streams into per-student behavior records: tracked
//! boxes with identities, per-second continuous behaviors, and per-second
//! hand-raise detections.
//!
//! ```bash
//! cargo run --example fuse_streams
//! ```

use proctor::fusion::{
    fuse, render_records, ActionEvent, ContinuousBehavior, FusionConfig, HandRaiseEvent,
    LabelScore, TrackEvent,
};
use proctor::geometry::BBox;

fn main() {
    // Two students tracked over two seconds (keyframes at 30 fps).
    let tracks = vec![
        TrackEvent {
            frame: 0,
            track_id: 3,
            bbox: BBox::new(100.0, 50.0, 160.0, 170.0),
        },
        TrackEvent {
            frame: 0,
            track_id: 5,
            bbox: BBox::new(300.0, 60.0, 360.0, 180.0),
        },
        TrackEvent {
            frame: 30,
            track_id: 3,
            bbox: BBox::new(102.0, 50.0, 162.0, 170.0),
        },
        TrackEvent {
            frame: 30,
            track_id: 5,
            bbox: BBox::new(300.0, 58.0, 360.0, 178.0),
        },
    ];

    let sit = |second, bbox| ActionEvent {
        second,
        bbox,
        labels: vec![LabelScore {
            label: ContinuousBehavior::Sit,
            score: 0.92,
        }],
    };
    let actions = vec![
        sit(0, BBox::new(101.0, 52.0, 161.0, 172.0)),
        sit(0, BBox::new(299.0, 61.0, 359.0, 181.0)),
        ActionEvent {
            second: 1,
            bbox: BBox::new(103.0, 52.0, 163.0, 172.0),
            labels: vec![
                LabelScore {
                    label: ContinuousBehavior::Sit,
                    score: 0.90,
                },
                LabelScore {
                    label: ContinuousBehavior::Read,
                    score: 0.71,
                },
            ],
        },
        // detection in empty space: becomes an unassigned record
        ActionEvent {
            second: 1,
            bbox: BBox::new(500.0, 400.0, 560.0, 520.0),
            labels: vec![LabelScore {
                label: ContinuousBehavior::Stand,
                score: 0.55,
            }],
        },
    ];

    // Student 5 raises a hand during second 1.
    let handraises = vec![HandRaiseEvent {
        second: 1,
        bbox: BBox::new(301.0, 55.0, 361.0, 175.0),
        score: 0.84,
    }];

    let out =
        fuse(&tracks, &actions, &handraises, &FusionConfig::default()).expect("streams are valid");

    println!(
        "{} records, {} unassigned\n",
        out.records.len(),
        out.summary.unassigned_total()
    );
    for r in &out.records {
        let who = if r.track_id == proctor::fusion::UNASSIGNED {
            "unassigned".to_string()
        } else {
            format!("student {}", r.track_id)
        };
        let labels: Vec<&str> = r.behaviors.iter().map(String::as_str).collect();
        println!("second {}: {who:<12} {}", r.second, labels.join(", "));
    }

    println!("\nline format written by the CLI:");
    print!("{}", render_records(&out.records));
}
