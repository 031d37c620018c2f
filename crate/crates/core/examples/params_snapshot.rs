//! Save a layer's parameters to the binary snapshot format, load them back,
//! and show that the reloaded layer reproduces the original forward pass
//! bit for bit.
//!
//! ```bash
//! cargo run --example params_snapshot
//! ```

use proctor::attention::{bra_forward, load_params, save_params, BraConfig};
use proctor::harness::{seeded_feature_map, seeded_params, tensor_digest};

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("layer.braparm");

    let cfg = BraConfig::new(4, 6);
    let params = seeded_params(16, 2024);
    save_params(&path, &cfg, &params).expect("snapshot written");
    let bytes = std::fs::metadata(&path).expect("snapshot exists").len();
    println!("wrote {} ({bytes} bytes)", path.display());

    let (cfg2, params2) = load_params(&path).expect("snapshot parses");
    assert_eq!(cfg, cfg2);
    assert_eq!(params, params2);

    let fm = seeded_feature_map(32, 32, 16, 2025);
    let (original, _) = bra_forward(&fm, &cfg, &params).expect("forward");
    let (reloaded, _) = bra_forward(&fm, &cfg2, &params2).expect("forward");
    println!("original digest: {}", tensor_digest(original.values()));
    println!("reloaded digest: {}", tensor_digest(reloaded.values()));
    assert_eq!(original.values().data(), reloaded.values().data());
    println!("forward passes identical");
}
