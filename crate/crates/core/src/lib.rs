//! Routed sparse attention, detection metrics, and behavior-stream fusion.
//!
//! `proctor` is a desk-scale toolkit for analyzing classroom video pipelines
//! without running any neural network. It provides:
//!
//! - [`tensor`] — a minimal deterministic dense-tensor engine (f64, row-major,
//!   pinned summation order) that backs the attention kernels.
//! - [`attention`] — bi-level routing attention over feature maps: coarse
//!   region routing via a top-k regional adjacency, then fine token-to-token
//!   attention restricted to the routed regions, plus a dense-attention
//!   reference and an analytic MAC model.
//! - [`geometry`] — axis-aligned box algebra (IOU, greedy NMS).
//! - [`eval`] — precision/recall/AP evaluation, annotation parsing, and
//!   dataset statistics.
//! - [`fusion`] — merges per-second action detections, hand-raise detections,
//!   and recorded track identities into per-student behavior records.
//! - [`harness`] — seeded benchmark/verification drivers shared by the CLI
//!   and the runnable examples.
//!
//! The `examples/` directory is the front door: each example is a runnable
//! walkthrough of one capability (`cargo run --example bench_attention`,
//! `--example fuse_streams`, ...). The `proctor` binary exposes the same
//! drivers as subcommands for scripting.

pub mod attention;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod tensor;

pub use attention::{BraConfig, BraParams, FeatureMap, FlopReport, RoutingTrace};
pub use geometry::{BBox, Detection};
pub use tensor::Tensor;
