//! Multi-stream behavior fusion.
//!
//! Three recorded streams feed the pipeline: track boxes with identities at
//! full frame rate, continuous-behavior detections produced once per second
//! on that second's keyframe, and hand-raise detections sampled at one frame
//! per second. Per second, events are matched to the tracks visible at the
//! keyframe by greedy IOU assignment; labels of both event kinds union into
//! one record per student, and events that match no track are emitted as
//! unassigned records so nothing is dropped.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox};

/// Track id used for events that matched no track.
pub const UNASSIGNED: i64 = -1;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("duplicate track record for frame {frame}, track_id {track_id}")]
    DuplicateTrack { frame: u64, track_id: i64 },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: {message}")]
    Invalid {
        file: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Continuous behavior classes carried by the keyframe stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContinuousBehavior {
    Sit,
    Stand,
    Read,
    Write,
    Talk,
    Listen,
    Walk,
}

impl fmt::Display for ContinuousBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ContinuousBehavior::Sit => "sit",
            ContinuousBehavior::Stand => "stand",
            ContinuousBehavior::Read => "read",
            ContinuousBehavior::Write => "write",
            ContinuousBehavior::Talk => "talk",
            ContinuousBehavior::Listen => "listen",
            ContinuousBehavior::Walk => "walk",
        };
        f.write_str(name)
    }
}

/// Label printed for fused hand-raise events.
pub const HAND_RAISING_LABEL: &str = "hand-raising";

/// One tracked box: at most one per (frame, track_id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackEvent {
    pub frame: u64,
    pub track_id: i64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: ContinuousBehavior,
    pub score: f64,
}

/// One keyframe detection carrying a non-empty set of continuous behaviors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionEvent {
    pub second: u64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub labels: Vec<LabelScore>,
}

/// One hand-raise detection from the 1 fps stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandRaiseEvent {
    pub second: u64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

/// Fused output row: who (track id, or [`UNASSIGNED`]), when (second), what
/// (sorted behavior labels), where (box).
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorRecord {
    pub track_id: i64,
    pub second: u64,
    pub behaviors: BTreeSet<String>,
    pub bbox: BBox,
}

/// Event tallies of one fusion run; inputs are conserved, so
/// `assigned + unassigned` of each stream equals its input length.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionSummary {
    pub assigned_actions: usize,
    pub unassigned_actions: usize,
    pub assigned_handraises: usize,
    pub unassigned_handraises: usize,
}

impl FusionSummary {
    pub fn unassigned_total(&self) -> usize {
        self.unassigned_actions + self.unassigned_handraises
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub records: Vec<BehaviorRecord>,
    pub summary: FusionSummary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Minimum IOU for an event to claim a track.
    pub iou_min: f64,
    /// Keyframe stride: the behavior stream runs once per second on frame
    /// `second * fps`.
    pub fps: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            iou_min: 0.3,
            fps: 30,
        }
    }
}

/// Frame on which second `second`'s continuous detections run.
pub fn keyframe_of(second: u64, fps: u64) -> u64 {
    second * fps
}

/// Half-open frame range a keyframe detection propagates to: all frames of
/// its second.
pub fn frame_window(second: u64, fps: u64) -> (u64, u64) {
    (second * fps, (second + 1) * fps)
}

/// Whether a detection made at `second` propagates to `frame`.
pub fn covers(second: u64, frame: u64, fps: u64) -> bool {
    let (start, end) = frame_window(second, fps);
    (start..end).contains(&frame)
}

/// Greedy one-to-one assignment of event boxes to tracks: candidate pairs
/// sorted by descending IOU (ties by event index, then track position), a
/// pair accepted when both sides are still free and the IOU reaches
/// `iou_min`. Returns, per event, the index into `tracks` it claimed.
pub fn assign(event_boxes: &[BBox], tracks: &[(i64, BBox)], iou_min: f64) -> Vec<Option<usize>> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (e, event_box) in event_boxes.iter().enumerate() {
        for (t, (_, track_box)) in tracks.iter().enumerate() {
            let overlap = iou(event_box, track_box);
            if overlap >= iou_min {
                candidates.push((overlap, e, t));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("IOU values are finite")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut event_taken = vec![false; event_boxes.len()];
    let mut track_taken = vec![false; tracks.len()];
    let mut result = vec![None; event_boxes.len()];
    for (_, e, t) in candidates {
        if event_taken[e] || track_taken[t] {
            continue;
        }
        event_taken[e] = true;
        track_taken[t] = true;
        result[e] = Some(t);
    }
    result
}

/// Runs the full fusion: per second, actions and hand-raises are matched
/// (independently, so a student can hold both) against the tracks at that
/// second's keyframe; matched labels union into one record per track with
/// the track's box, and unmatched events become [`UNASSIGNED`] records with
/// their own box. Records are ordered by (second, track id), unassigned
/// last within a second.
pub fn fuse(
    tracks: &[TrackEvent],
    actions: &[ActionEvent],
    handraises: &[HandRaiseEvent],
    config: &FusionConfig,
) -> Result<FusionOutput, FusionError> {
    let mut seen = BTreeSet::new();
    for t in tracks {
        if !seen.insert((t.frame, t.track_id)) {
            return Err(FusionError::DuplicateTrack {
                frame: t.frame,
                track_id: t.track_id,
            });
        }
    }

    let mut seconds: Vec<u64> = actions
        .iter()
        .map(|a| a.second)
        .chain(handraises.iter().map(|h| h.second))
        .collect();
    seconds.sort_unstable();
    seconds.dedup();

    let mut records = Vec::new();
    let mut summary = FusionSummary::default();
    for &second in &seconds {
        let keyframe = keyframe_of(second, config.fps);
        // Keep stream input order: assignment tie-breaks must not depend on
        // the id values or renaming ids could change the matching.
        let tracks_here: Vec<(i64, BBox)> = tracks
            .iter()
            .filter(|t| t.frame == keyframe)
            .map(|t| (t.track_id, t.bbox))
            .collect();

        let second_actions: Vec<&ActionEvent> =
            actions.iter().filter(|a| a.second == second).collect();
        let second_handraises: Vec<&HandRaiseEvent> =
            handraises.iter().filter(|h| h.second == second).collect();

        let action_boxes: Vec<BBox> = second_actions.iter().map(|a| a.bbox).collect();
        let handraise_boxes: Vec<BBox> = second_handraises.iter().map(|h| h.bbox).collect();
        let action_slots = assign(&action_boxes, &tracks_here, config.iou_min);
        let handraise_slots = assign(&handraise_boxes, &tracks_here, config.iou_min);

        // Union labels per claimed track.
        let mut per_track: Vec<(i64, BBox, BTreeSet<String>)> = tracks_here
            .iter()
            .map(|&(id, bbox)| (id, bbox, BTreeSet::new()))
            .collect();
        let mut unassigned: Vec<BehaviorRecord> = Vec::new();

        for (event, slot) in second_actions.iter().zip(&action_slots) {
            let labels: BTreeSet<String> =
                event.labels.iter().map(|l| l.label.to_string()).collect();
            match slot {
                Some(t) => {
                    summary.assigned_actions += 1;
                    per_track[*t].2.extend(labels);
                }
                None => {
                    summary.unassigned_actions += 1;
                    unassigned.push(BehaviorRecord {
                        track_id: UNASSIGNED,
                        second,
                        behaviors: labels,
                        bbox: event.bbox,
                    });
                }
            }
        }
        for (event, slot) in second_handraises.iter().zip(&handraise_slots) {
            match slot {
                Some(t) => {
                    summary.assigned_handraises += 1;
                    per_track[*t].2.insert(HAND_RAISING_LABEL.to_string());
                }
                None => {
                    summary.unassigned_handraises += 1;
                    unassigned.push(BehaviorRecord {
                        track_id: UNASSIGNED,
                        second,
                        behaviors: BTreeSet::from([HAND_RAISING_LABEL.to_string()]),
                        bbox: event.bbox,
                    });
                }
            }
        }

        let mut assigned: Vec<BehaviorRecord> = per_track
            .into_iter()
            .filter(|(_, _, behaviors)| !behaviors.is_empty())
            .map(|(id, bbox, behaviors)| BehaviorRecord {
                track_id: id,
                second,
                behaviors,
                bbox,
            })
            .collect();
        assigned.sort_by_key(|r| r.track_id);
        records.extend(assigned);
        records.extend(unassigned);
    }
    Ok(FusionOutput { records, summary })
}

// Flat serialization row for BehaviorRecord: behaviors comma-joined, box
// corners inline.
#[derive(Serialize, Deserialize)]
struct BehaviorRow {
    track_id: i64,
    second: u64,
    behaviors: String,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

/// Renders fused records one JSON object per line with fields
/// `track_id, second, behaviors, x1, y1, x2, y2`; behaviors are sorted and
/// comma-joined. Identical inputs render byte-identically.
pub fn render_records(records: &[BehaviorRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let row = BehaviorRow {
            track_id: r.track_id,
            second: r.second,
            behaviors: r.behaviors.iter().cloned().collect::<Vec<_>>().join(","),
            x1: r.bbox.x1,
            y1: r.bbox.y1,
            x2: r.bbox.x2,
            y2: r.bbox.y2,
        };
        out.push_str(&serde_json::to_string(&row).expect("rows serialize"));
        out.push('\n');
    }
    out
}

pub fn write_records(path: &Path, records: &[BehaviorRecord]) -> Result<(), FusionError> {
    fs::write(path, render_records(records))?;
    Ok(())
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(
    path: &Path,
    validate: impl Fn(&T) -> Result<(), String>,
) -> Result<Vec<T>, FusionError> {
    let text = fs::read_to_string(path)?;
    let file_label = path.to_string_lossy();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(line).map_err(|e| FusionError::Parse {
            file: file_label.to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        validate(&value).map_err(|message| FusionError::Invalid {
            file: file_label.to_string(),
            line: idx + 1,
            message,
        })?;
        out.push(value);
    }
    Ok(out)
}

fn check_score(score: f64, what: &str) -> Result<(), String> {
    if (0.0..=1.0).contains(&score) {
        Ok(())
    } else {
        Err(format!("{what} score {score} outside [0,1]"))
    }
}

/// Reads a track stream (`{"frame":..,"track_id":..,"box":{..}}` per line).
pub fn read_tracks(path: &Path) -> Result<Vec<TrackEvent>, FusionError> {
    parse_jsonl(path, |_: &TrackEvent| Ok(()))
}

/// Reads an action stream; every event must carry at least one label and
/// scores in [0,1].
pub fn read_actions(path: &Path) -> Result<Vec<ActionEvent>, FusionError> {
    parse_jsonl(path, |event: &ActionEvent| {
        if event.labels.is_empty() {
            return Err("action event has no labels".to_string());
        }
        for l in &event.labels {
            check_score(l.score, "label")?;
        }
        Ok(())
    })
}

/// Reads a hand-raise stream; scores must lie in [0,1].
pub fn read_handraises(path: &Path) -> Result<Vec<HandRaiseEvent>, FusionError> {
    parse_jsonl(path, |event: &HandRaiseEvent| {
        check_score(event.score, "hand-raise")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2)
    }

    fn action(second: u64, bbox: BBox, labels: &[ContinuousBehavior]) -> ActionEvent {
        ActionEvent {
            second,
            bbox,
            labels: labels
                .iter()
                .map(|&label| LabelScore { label, score: 0.9 })
                .collect(),
        }
    }

    #[test]
    fn keyframe_arithmetic() {
        assert_eq!(keyframe_of(0, 30), 0);
        assert_eq!(keyframe_of(3, 30), 90);
        assert_eq!(frame_window(3, 30), (90, 120));
        assert_eq!(frame_window(5, 1), (5, 6));
    }

    #[test]
    fn coverage_spans_exactly_one_second() {
        assert!(covers(3, 90, 30));
        assert!(covers(3, 119, 30));
        assert!(!covers(3, 120, 30));
        assert!(!covers(3, 89, 30));
        // fps 1 degenerates to one frame per second
        assert!(covers(5, 5, 1));
        assert!(!covers(5, 6, 1));
    }

    #[test]
    fn assign_single_pair_above_floor() {
        let events = vec![bx(0.0, 0.0, 10.0, 10.0)];
        let tracks = vec![(7, bx(1.0, 0.0, 10.0, 10.0))];
        let slots = assign(&events, &tracks, 0.3);
        assert_eq!(slots, vec![Some(0)]);
    }

    #[test]
    fn assign_no_tracks_leaves_event_unassigned() {
        let events = vec![bx(0.0, 0.0, 10.0, 10.0)];
        assert_eq!(assign(&events, &[], 0.3), vec![None]);
    }

    #[test]
    fn assign_below_floor_is_unassigned() {
        let events = vec![bx(0.0, 0.0, 1.0, 1.0)];
        let tracks = vec![(7, bx(0.9, 0.9, 2.0, 2.0))];
        assert_eq!(assign(&events, &tracks, 0.3), vec![None]);
    }

    #[test]
    fn assign_crossed_ious_resolve_greedily() {
        // e1t1: 0.9, e1t2: ~0.4, e2t2: 0.8, e2t1: ~0.1 -> e1->t1, e2->t2
        let e1 = bx(0.0, 0.0, 10.0, 10.0);
        let e2 = bx(20.0, 0.0, 30.0, 10.0);
        let t1 = bx(0.0, 0.5, 10.0, 10.5); // iou(e1,t1) ~ 0.9
        let t2 = bx(20.0, 1.0, 30.0, 11.0); // iou(e2,t2) ~ 0.8
        let slots = assign(&[e1, e2], &[(1, t1), (2, t2)], 0.05);
        assert_eq!(slots, vec![Some(0), Some(1)]);
    }

    #[test]
    fn fuse_single_track_example() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let tracks = vec![TrackEvent {
            frame: 30,
            track_id: 7,
            bbox: b,
        }];
        let actions = vec![action(
            1,
            bx(0.0, 1.0, 10.0, 11.0),
            &[ContinuousBehavior::Sit],
        )];
        let out = fuse(&tracks, &actions, &[], &FusionConfig::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.track_id, 7);
        assert_eq!(r.second, 1);
        assert_eq!(r.behaviors, BTreeSet::from(["sit".to_string()]));
        assert_eq!(r.bbox, b);
        assert_eq!(out.summary.unassigned_total(), 0);
    }

    #[test]
    fn fuse_unions_handraise_with_action() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let tracks = vec![TrackEvent {
            frame: 30,
            track_id: 7,
            bbox: b,
        }];
        let actions = vec![action(
            1,
            bx(0.0, 1.0, 10.0, 11.0),
            &[ContinuousBehavior::Sit],
        )];
        let handraises = vec![HandRaiseEvent {
            second: 1,
            bbox: bx(0.0, 1.5, 10.0, 11.5),
            score: 0.8,
        }];
        let out = fuse(&tracks, &actions, &handraises, &FusionConfig::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(
            out.records[0].behaviors,
            BTreeSet::from(["hand-raising".to_string(), "sit".to_string()])
        );
    }

    #[test]
    fn fuse_empty_streams_yield_empty_output() {
        let tracks = vec![TrackEvent {
            frame: 0,
            track_id: 1,
            bbox: bx(0.0, 0.0, 1.0, 1.0),
        }];
        let out = fuse(&tracks, &[], &[], &FusionConfig::default()).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.summary, FusionSummary::default());
    }

    #[test]
    fn fuse_duplicate_track_is_error() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        let tracks = vec![
            TrackEvent {
                frame: 30,
                track_id: 7,
                bbox: b,
            },
            TrackEvent {
                frame: 30,
                track_id: 7,
                bbox: b,
            },
        ];
        let err = fuse(&tracks, &[], &[], &FusionConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("frame 30") && msg.contains("track_id 7"),
            "{msg}"
        );
    }

    #[test]
    fn fuse_unmatched_event_becomes_unassigned_record() {
        let actions = vec![action(
            2,
            bx(0.0, 0.0, 5.0, 5.0),
            &[ContinuousBehavior::Stand],
        )];
        let out = fuse(&[], &actions, &[], &FusionConfig::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].track_id, UNASSIGNED);
        assert_eq!(out.records[0].bbox, bx(0.0, 0.0, 5.0, 5.0));
        assert_eq!(out.summary.unassigned_actions, 1);
    }

    #[test]
    fn fuse_orders_by_second_then_track_with_unassigned_last() {
        let tracks = vec![
            TrackEvent {
                frame: 30,
                track_id: 9,
                bbox: bx(0.0, 0.0, 10.0, 10.0),
            },
            TrackEvent {
                frame: 30,
                track_id: 2,
                bbox: bx(20.0, 0.0, 30.0, 10.0),
            },
        ];
        let actions = vec![
            action(1, bx(0.0, 0.0, 10.0, 10.0), &[ContinuousBehavior::Sit]),
            action(1, bx(20.0, 0.0, 30.0, 10.0), &[ContinuousBehavior::Stand]),
            action(1, bx(50.0, 50.0, 60.0, 60.0), &[ContinuousBehavior::Walk]),
            action(0, bx(50.0, 50.0, 60.0, 60.0), &[ContinuousBehavior::Read]),
        ];
        let out = fuse(&tracks, &actions, &[], &FusionConfig::default()).unwrap();
        let ids: Vec<(u64, i64)> = out.records.iter().map(|r| (r.second, r.track_id)).collect();
        assert_eq!(ids, vec![(0, UNASSIGNED), (1, 2), (1, 9), (1, UNASSIGNED)]);
    }

    #[test]
    fn render_is_deterministic_and_flat() {
        let record = BehaviorRecord {
            track_id: 7,
            second: 1,
            behaviors: BTreeSet::from(["sit".to_string(), "hand-raising".to_string()]),
            bbox: bx(0.0, 1.0, 10.0, 11.0),
        };
        let text = render_records(std::slice::from_ref(&record));
        assert_eq!(text, render_records(&[record]));
        assert_eq!(
            text,
            "{\"track_id\":7,\"second\":1,\"behaviors\":\"hand-raising,sit\",\"x1\":0.0,\"y1\":1.0,\"x2\":10.0,\"y2\":11.0}\n"
        );
    }

    #[test]
    fn stream_parse_error_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracks.jsonl");
        std::fs::write(&path, "{\"frame\":0,\"track_id\":1,\"box\":{\"x1\":0,\"y1\":0,\"x2\":1,\"y2\":1}}\nnot json\n").unwrap();
        let err = read_tracks(&path).unwrap_err();
        assert!(err.to_string().contains("tracks.jsonl:2"));
    }

    #[test]
    fn action_stream_rejects_empty_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("actions.jsonl");
        std::fs::write(
            &path,
            "{\"second\":0,\"box\":{\"x1\":0,\"y1\":0,\"x2\":1,\"y2\":1},\"labels\":[]}\n",
        )
        .unwrap();
        let err = read_actions(&path).unwrap_err();
        assert!(err.to_string().contains("no labels"));
    }

    #[test]
    fn handraise_stream_rejects_bad_score() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hr.jsonl");
        std::fs::write(
            &path,
            "{\"second\":0,\"box\":{\"x1\":0,\"y1\":0,\"x2\":1,\"y2\":1},\"score\":1.5}\n",
        )
        .unwrap();
        let err = read_handraises(&path).unwrap_err();
        assert!(err.to_string().contains("outside [0,1]"));
    }

    // Seeded scene generator shared by the property tests below.
    fn scene(seed: u64) -> (Vec<TrackEvent>, Vec<ActionEvent>, Vec<HandRaiseEvent>) {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let mut tracks = Vec::new();
        let mut actions = Vec::new();
        let mut handraises = Vec::new();
        for second in 0..3u64 {
            let n_tracks = (next() % 4) as usize;
            for t in 0..n_tracks {
                let x = (next() % 100) as f64;
                tracks.push(TrackEvent {
                    frame: second * 30,
                    track_id: t as i64 + 1,
                    bbox: bx(x, 0.0, x + 20.0, 20.0),
                });
            }
            let n_actions = (next() % 3) as usize;
            for _ in 0..n_actions {
                let x = (next() % 100) as f64;
                actions.push(action(
                    second,
                    bx(x, 1.0, x + 20.0, 21.0),
                    &[ContinuousBehavior::Sit],
                ));
            }
            if next() % 2 == 0 {
                let x = (next() % 100) as f64;
                handraises.push(HandRaiseEvent {
                    second,
                    bbox: bx(x, 2.0, x + 20.0, 22.0),
                    score: 0.7,
                });
            }
        }
        (tracks, actions, handraises)
    }

    proptest! {
        #[test]
        fn events_are_conserved(seed in 0u64..400) {
            let (tracks, actions, handraises) = scene(seed);
            let out = fuse(&tracks, &actions, &handraises, &FusionConfig::default()).unwrap();
            prop_assert_eq!(
                out.summary.assigned_actions + out.summary.unassigned_actions,
                actions.len()
            );
            prop_assert_eq!(
                out.summary.assigned_handraises + out.summary.unassigned_handraises,
                handraises.len()
            );
            // contribution count across records equals event count
            let contributions: usize = out
                .records
                .iter()
                .map(|r| {
                    if r.track_id == UNASSIGNED {
                        1
                    } else {
                        let has_action = r.behaviors.iter().any(|b| b != HAND_RAISING_LABEL);
                        let has_handraise = r.behaviors.contains(HAND_RAISING_LABEL);
                        has_action as usize + has_handraise as usize
                    }
                })
                .sum();
            prop_assert_eq!(contributions, actions.len() + handraises.len());
        }

        #[test]
        fn output_sorted_by_second_then_track(seed in 0u64..400) {
            let (tracks, actions, handraises) = scene(seed);
            let out = fuse(&tracks, &actions, &handraises, &FusionConfig::default()).unwrap();
            for pair in out.records.windows(2) {
                let key = |r: &BehaviorRecord| {
                    (r.second, r.track_id == UNASSIGNED, if r.track_id == UNASSIGNED { 0 } else { r.track_id })
                };
                prop_assert!(key(&pair[0]) <= key(&pair[1]));
            }
        }

        #[test]
        fn track_id_bijection_equivariance(seed in 0u64..400, offset in 1i64..1000) {
            let (tracks, actions, handraises) = scene(seed);
            let renamed: Vec<TrackEvent> = tracks
                .iter()
                .map(|t| TrackEvent { track_id: t.track_id + offset, ..t.clone() })
                .collect();
            let base = fuse(&tracks, &actions, &handraises, &FusionConfig::default()).unwrap();
            let shifted = fuse(&renamed, &actions, &handraises, &FusionConfig::default()).unwrap();
            prop_assert_eq!(base.summary, shifted.summary);
            let mut mapped: Vec<BehaviorRecord> = base
                .records
                .iter()
                .map(|r| BehaviorRecord {
                    track_id: if r.track_id == UNASSIGNED { UNASSIGNED } else { r.track_id + offset },
                    ..r.clone()
                })
                .collect();
            mapped.sort_by(|a, b| {
                (a.second, a.track_id == UNASSIGNED, a.track_id)
                    .partial_cmp(&(b.second, b.track_id == UNASSIGNED, b.track_id))
                    .unwrap()
            });
            prop_assert_eq!(mapped, shifted.records);
        }
    }
}
