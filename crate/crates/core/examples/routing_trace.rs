//! Inspect the routing decisions of one forward pass: for every region of
//! the grid, show which regions its tokens attend to and the adjacency row
//! that drove the choice.
//!
//! ```bash
//! cargo run --example routing_trace
//! ```

use proctor::attention::{bra_forward, BraConfig};
use proctor::harness::{seeded_feature_map, seeded_params};

fn main() {
    let (side, channels) = (16, 8);
    let cfg = BraConfig::new(4, 3);
    let params = seeded_params(channels, 11);
    let fm = seeded_feature_map(side, side, channels, 12);

    let (_, trace) = bra_forward(&fm, &cfg, &params).expect("valid configuration");
    let regions = cfg.region_count();

    println!(
        "{}x{} map, {}x{} region grid, each region routed to {} of {} regions\n",
        side, side, cfg.regions_per_side, cfg.regions_per_side, cfg.routed_regions, regions
    );
    println!("region -> routed regions (by descending adjacency score)");
    for (region, routed) in trace.routed.iter().enumerate() {
        let row = &trace.adjacency.data()[region * regions..(region + 1) * regions];
        let scores: Vec<String> = routed
            .iter()
            .map(|&r| format!("{r}({:+.3})", row[r]))
            .collect();
        println!("  {region:>2} -> {}", scores.join(", "));
    }

    // grid view: how often each region is routed to
    let mut indegree = vec![0usize; regions];
    for routed in &trace.routed {
        for &r in routed {
            indegree[r] += 1;
        }
    }
    println!("\nrouted-to counts per region (grid layout):");
    for row in 0..cfg.regions_per_side {
        let cells: Vec<String> = (0..cfg.regions_per_side)
            .map(|col| format!("{:>3}", indegree[row * cfg.regions_per_side + col]))
            .collect();
        println!("  {}", cells.join(" "));
    }
}
