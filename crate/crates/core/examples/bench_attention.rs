//! Benchmark the routed-attention layer on a seeded feature map.
//!
//! Prints the per-stage MAC counts, the routed/dense token-to-token ratio,
//! a deterministic output digest, and wall-clock timing.
//!
//! ```bash
//! cargo run --release --example bench_attention
//! ```

use proctor::harness::{run_bench, BenchOptions};

fn main() {
    for (regions_per_side, routed_regions) in [(8, 4), (8, 16), (8, 64)] {
        let report = run_bench(BenchOptions {
            height: 64,
            width: 64,
            channels: 32,
            regions_per_side,
            routed_regions,
            iters: 3,
            seed: 7,
        })
        .expect("valid configuration");
        println!(
            "--- routed {routed_regions}/{} regions ---",
            regions_per_side * regions_per_side
        );
        print!("{}", report.render_deterministic());
        print!("{}", report.render_timing());
        println!();
    }
}
