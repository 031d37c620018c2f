//! Drivers behind the CLI subcommands and the runnable examples: seeded
//! scene generation, the benchmark loop, runtime self-checks, and the
//! evaluation/fusion/stats glue.
//!
//! Randomness lives here, not in the kernels: every generator takes an
//! explicit seed and draws from ChaCha8, so identical flags reproduce
//! identical tensors, reports, and output digests on any platform.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::attention::{
    bra_forward, bra_forward_with_gather_fault, dense_attention_forward, flops, patchify,
    AttentionError, BraConfig, BraParams, FeatureMap, FlopReport,
};
use crate::eval::{
    collect_eval_images, confusion_counts, mean_average_precision, parse_annotations,
    parse_predictions, precision_recall, ConfusionCounts, EvalError, Interpolation,
};
use crate::fusion::{
    fuse, read_actions, read_handraises, read_tracks, write_records, FusionConfig, FusionError,
};
use crate::tensor::Tensor;

/// Harness failures split by exit class: bad inputs/configuration/parsing
/// versus a failing internal self-check.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl HarnessError {
    /// 1 for validation/parse failures, 2 for failed internal checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) => 1,
            HarnessError::CheckFailed(_) => 2,
        }
    }
}

impl From<AttentionError> for HarnessError {
    fn from(e: AttentionError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}

impl From<EvalError> for HarnessError {
    fn from(e: EvalError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}

impl From<FusionError> for HarnessError {
    fn from(e: FusionError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}

/// Layer parameters drawn uniformly from [-0.1, 0.1].
pub fn seeded_params(channels: usize, seed: u64) -> BraParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight: Vec<f64> = (0..channels * 3 * channels)
        .map(|_| rng.gen_range(-0.1..=0.1))
        .collect();
    let kernels: Vec<f64> = (0..channels * 9)
        .map(|_| rng.gen_range(-0.1..=0.1))
        .collect();
    BraParams::new(
        Tensor::new(vec![channels, 3 * channels], weight).expect("sampled weights are finite"),
        Tensor::new(vec![channels, 3, 3], kernels).expect("sampled kernels are finite"),
    )
    .expect("shapes are consistent by construction")
}

/// Same projection weights as [`seeded_params`] but with zeroed
/// local-context kernels, for checks that must exclude the LCE term.
pub fn seeded_params_zero_lce(channels: usize, seed: u64) -> BraParams {
    let p = seeded_params(channels, seed);
    BraParams::new(
        p.qkv_weight,
        Tensor::zeros(vec![channels, 3, 3]).expect("kernel shape is valid"),
    )
    .expect("shapes are consistent by construction")
}

/// Feature map with values drawn uniformly from [-1, 1].
pub fn seeded_feature_map(height: usize, width: usize, channels: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..height * width * channels)
        .map(|_| rng.gen_range(-1.0..=1.0))
        .collect();
    FeatureMap::new(
        Tensor::new(vec![height, width, channels], values).expect("sampled values are finite"),
    )
    .expect("rank-3 by construction")
}

fn max_abs_diff(a: &FeatureMap, b: &FeatureMap) -> f64 {
    a.values()
        .data()
        .iter()
        .zip(b.values().data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// FNV-1a over the little-endian bytes of shape and data; cheap stable
/// fingerprint for determinism checks.
pub fn tensor_digest(t: &Tensor) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    let mut eat = |byte: u8| {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    };
    for &dim in t.shape() {
        for b in (dim as u64).to_le_bytes() {
            eat(b);
        }
    }
    for v in t.data() {
        for b in v.to_le_bytes() {
            eat(b);
        }
    }
    format!("fnv1a:{hash:016x}")
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub regions_per_side: usize,
    pub routed_regions: usize,
    pub iters: usize,
    pub seed: u64,
}

/// One benchmark run: config echo, per-stage MAC counts, the routed/dense
/// ratio, an output digest, and wall-clock timing. Everything except the
/// timing fields is a deterministic function of the options.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub options: BenchOptions,
    pub flops: FlopReport,
    pub output_digest: String,
    pub mean_seconds: f64,
    pub std_seconds: f64,
}

impl BenchReport {
    /// The deterministic report section (no timing).
    pub fn render_deterministic(&self) -> String {
        let o = &self.options;
        let f = &self.flops;
        let mut out = String::new();
        out.push_str(&format!(
            "config: height={} width={} channels={} regions={}x{} routed={} seed={} scale_qk=on\n",
            o.height,
            o.width,
            o.channels,
            o.regions_per_side,
            o.regions_per_side,
            o.routed_regions,
            o.seed
        ));
        out.push_str(&format!("macs qkv_projection: {}\n", f.qkv_projection));
        out.push_str(&format!("macs regional_pooling: {}\n", f.regional_pooling));
        out.push_str(&format!("macs adjacency: {}\n", f.adjacency));
        out.push_str(&format!("macs token_to_token: {}\n", f.token_to_token));
        out.push_str(&format!("macs lce: {}\n", f.lce));
        out.push_str(&format!("macs bra_total: {}\n", f.bra_total()));
        out.push_str(&format!(
            "macs dense_token_to_token: {}\n",
            f.dense_token_to_token
        ));
        out.push_str(&format!(
            "token_to_token_ratio: {}\n",
            f.token_to_token_ratio()
        ));
        out.push_str(&format!("output_digest: {}\n", self.output_digest));
        out
    }

    /// The machine-dependent timing line, labeled so tests can strip it.
    pub fn render_timing(&self) -> String {
        format!(
            "timing: iters={} mean={:.6}s std={:.6}s\n",
            self.options.iters, self.mean_seconds, self.std_seconds
        )
    }
}

/// Runs `iters` seeded forward passes and reports MACs, digest and timing.
pub fn run_bench(options: BenchOptions) -> Result<BenchReport, HarnessError> {
    if options.iters == 0 {
        return Err(HarnessError::Validation(
            "iters must be at least 1".to_string(),
        ));
    }
    let cfg = BraConfig::new(options.regions_per_side, options.routed_regions);
    cfg.validate_for(options.height, options.width)?;
    let params = seeded_params(options.channels, options.seed);
    let fm = seeded_feature_map(
        options.height,
        options.width,
        options.channels,
        options.seed.wrapping_add(1),
    );
    let mut samples = Vec::with_capacity(options.iters);
    let mut last = None;
    for _ in 0..options.iters {
        let start = Instant::now();
        let (out, _) = bra_forward(&fm, &cfg, &params)?;
        samples.push(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    let output = last.expect("at least one iteration ran");
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / samples.len() as f64;
    Ok(BenchReport {
        options,
        flops: flops(&cfg, options.height, options.width, options.channels),
        output_digest: tensor_digest(output.values()),
        mean_seconds: mean,
        std_seconds: var.sqrt(),
    })
}

/// Outcome of one named runtime self-check.
#[derive(Debug, Clone)]
pub struct VerifyCheck {
    pub name: &'static str,
    pub detail: Result<(), String>,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.detail.is_ok())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for check in &self.checks {
            match &check.detail {
                Ok(()) => out.push_str(&format!("check {}: pass\n", check.name)),
                Err(why) => out.push_str(&format!("check {}: FAIL ({why})\n", check.name)),
            }
        }
        out
    }
}

fn forward(
    fm: &FeatureMap,
    cfg: &BraConfig,
    params: &BraParams,
    fault: bool,
) -> Result<(FeatureMap, crate::attention::RoutingTrace), AttentionError> {
    if fault {
        bra_forward_with_gather_fault(fm, cfg, params)
    } else {
        bra_forward(fm, cfg, params)
    }
}

/// Full routing must reproduce dense attention.
fn check_dense_equivalence(fault: bool) -> Result<(), String> {
    let grid = [(4usize, 2usize, 1usize), (4, 2, 2), (8, 2, 2), (8, 4, 4)];
    for (case, &(side, channels, s)) in grid.iter().enumerate() {
        let cfg = BraConfig::new(s, s * s);
        let params = seeded_params_zero_lce(channels, 100 + case as u64);
        let fm = seeded_feature_map(side, side, channels, 200 + case as u64);
        let (routed, _) = forward(&fm, &cfg, &params, fault).map_err(|e| e.to_string())?;
        let dense =
            dense_attention_forward(&fm, &params, cfg.scale_qk).map_err(|e| e.to_string())?;
        let delta = max_abs_diff(&routed, &dense);
        if delta > 1e-9 {
            return Err(format!(
                "max |routed - dense| = {delta:.3e} at side={side} channels={channels} grid={s}"
            ));
        }
    }
    Ok(())
}

fn perturb_pixel(fm: &FeatureMap, y: usize, x: usize, ch: usize, delta: f64) -> FeatureMap {
    let mut data = fm.values().data().to_vec();
    data[(y * fm.width() + x) * fm.channels() + ch] += delta;
    FeatureMap::new(
        Tensor::new(fm.values().shape().to_vec(), data).expect("perturbed values stay finite"),
    )
    .expect("shape unchanged")
}

fn tile_pixels(side: usize, grid: usize, region: usize) -> Vec<(usize, usize)> {
    let tile = side / grid;
    let (row, col) = (region / grid, region % grid);
    let mut out = Vec::with_capacity(tile * tile);
    for y in 0..tile {
        for x in 0..tile {
            out.push((row * tile + y, col * tile + x));
        }
    }
    out
}

/// With `routed_regions < S^2`, tokens outside a region's routed set must
/// not influence its pre-LCE output.
fn check_sparsity_law(fault: bool) -> Result<(), String> {
    for case in 0..4u64 {
        let (side, channels, s, k) = (8usize, 2usize, 4usize, 2usize);
        let cfg = BraConfig::new(s, k);
        let params = seeded_params_zero_lce(channels, 300 + case);
        let fm = seeded_feature_map(side, side, channels, 400 + case);
        let (base, trace) = forward(&fm, &cfg, &params, fault).map_err(|e| e.to_string())?;
        let regions = cfg.region_count();
        let pair = (0..regions)
            .flat_map(|r| (0..regions).map(move |j| (r, j)))
            .find(|&(r, j)| j != r && !trace.routed[r].contains(&j));
        let Some((target, outside)) = pair else {
            continue; // every region routes everywhere; nothing to test
        };
        for &(py, px) in &tile_pixels(side, s, outside) {
            let perturbed = perturb_pixel(&fm, py, px, 0, 1e-3);
            let (out, trace2) =
                forward(&perturbed, &cfg, &params, fault).map_err(|e| e.to_string())?;
            if trace2.routed[target] != trace.routed[target] {
                return Err(format!(
                    "routing of region {target} unexpectedly changed in case {case}"
                ));
            }
            for &(ty, tx) in &tile_pixels(side, s, target) {
                for ch in 0..channels {
                    let idx = (ty * side + tx) * channels + ch;
                    let delta = (out.values().data()[idx] - base.values().data()[idx]).abs();
                    if delta > 1e-12 {
                        return Err(format!(
                            "output token ({ty},{tx}) moved by {delta:.3e} when non-routed \
                             region {outside} was perturbed (case {case})"
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Shuffling input tiles must shuffle output tiles and the routing trace
/// identically (local context excluded via zero kernels).
fn check_permutation_equivariance(fault: bool) -> Result<(), String> {
    let (side, channels, s, k) = (4usize, 2usize, 2usize, 2usize);
    let cfg = BraConfig::new(s, k);
    let params = seeded_params_zero_lce(channels, 500);
    let fm = seeded_feature_map(side, side, channels, 501);
    // permuted map: tile at position p is the original tile sigma[p]
    let sigma = [2usize, 0, 3, 1];
    let mut inverse = [0usize; 4];
    for (p, &src) in sigma.iter().enumerate() {
        inverse[src] = p;
    }
    let tokens = patchify(&fm, s).map_err(|e| e.to_string())?;
    let shuffled = crate::tensor::gather_regions(
        &tokens,
        &sigma.iter().map(|&src| vec![src]).collect::<Vec<_>>(),
    )
    .map_err(|e| e.to_string())?;
    let permuted_fm =
        crate::attention::unpatchify(&shuffled, s, side, side).map_err(|e| e.to_string())?;

    let (base_out, base_trace) = forward(&fm, &cfg, &params, fault).map_err(|e| e.to_string())?;
    let (perm_out, perm_trace) =
        forward(&permuted_fm, &cfg, &params, fault).map_err(|e| e.to_string())?;

    let base_tiles = patchify(&base_out, s).map_err(|e| e.to_string())?;
    let perm_tiles = patchify(&perm_out, s).map_err(|e| e.to_string())?;
    let tile_len = base_tiles.len() / cfg.region_count();
    for (p, &src) in sigma.iter().enumerate() {
        let got = &perm_tiles.data()[p * tile_len..(p + 1) * tile_len];
        let want = &base_tiles.data()[src * tile_len..(src + 1) * tile_len];
        for (g, w) in got.iter().zip(want) {
            if (g - w).abs() > 1e-12 {
                return Err(format!(
                    "output tile {p} does not match source tile {src} after shuffle"
                ));
            }
        }
    }
    for (p, &src) in sigma.iter().enumerate() {
        let remapped: Vec<usize> = base_trace.routed[src].iter().map(|&r| inverse[r]).collect();
        if perm_trace.routed[p] != remapped {
            return Err(format!(
                "routing row {p} is {:?}, expected remapped {:?}",
                perm_trace.routed[p], remapped
            ));
        }
    }
    Ok(())
}

/// Runs the kernel self-checks; `inject_fault` corrupts the gather stage to
/// prove the checks can fail.
pub fn run_verify(inject_fault: bool) -> VerifyReport {
    let checks = vec![
        VerifyCheck {
            name: "dense-equivalence",
            detail: check_dense_equivalence(inject_fault),
        },
        VerifyCheck {
            name: "sparsity-law",
            detail: check_sparsity_law(inject_fault),
        },
        VerifyCheck {
            name: "permutation-equivariance",
            detail: check_permutation_equivariance(inject_fault),
        },
    ];
    VerifyReport { checks }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub predictions: PathBuf,
    pub ground_truth_dir: PathBuf,
    pub iou: f64,
    pub interpolation: Interpolation,
    pub image_width: f64,
    pub image_height: f64,
}

/// Evaluates a predictions file against an annotation directory: dataset
/// precision/recall over all predictions plus (m)AP at the IOU threshold.
pub fn run_eval(options: &EvalOptions) -> Result<String, HarnessError> {
    let corpus = parse_annotations(&options.ground_truth_dir)?;
    let preds = parse_predictions(&options.predictions)?;

    let mut classes: Vec<u32> = corpus
        .images
        .iter()
        .flat_map(|im| im.records.iter().map(|r| r.class_id))
        .chain(preds.iter().map(|p| p.class_id))
        .collect();
    classes.sort_unstable();
    classes.dedup();

    let mut totals = ConfusionCounts {
        true_positives: 0,
        false_positives: 0,
        false_negatives: 0,
    };
    for &class in &classes {
        let images = collect_eval_images(
            &corpus,
            &preds,
            class,
            options.image_width,
            options.image_height,
        );
        for image in &images {
            let c = confusion_counts(&image.predictions, &image.ground_truths, options.iou);
            totals.true_positives += c.true_positives;
            totals.false_positives += c.false_positives;
            totals.false_negatives += c.false_negatives;
        }
    }
    let (precision, recall) = precision_recall(&totals);
    let ap = mean_average_precision(
        &corpus,
        &preds,
        options.iou,
        options.interpolation,
        options.image_width,
        options.image_height,
    );

    let mut out = String::new();
    out.push_str(&format!("images: {}\n", corpus.images.len()));
    out.push_str(&format!(
        "ground_truths: {}\npredictions: {}\n",
        corpus.label_count(),
        preds.len()
    ));
    out.push_str(&format!("precision: {precision:.4}\n"));
    out.push_str(&format!("recall: {recall:.4}\n"));
    out.push_str(&format!("ap@{:.2}: {ap:.4}\n", options.iou));
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FuseOptions {
    pub tracks: PathBuf,
    pub actions: PathBuf,
    pub handraises: PathBuf,
    pub output: PathBuf,
    pub iou_min: f64,
    pub fps: u64,
}

/// Reads the three streams, fuses them, writes the behavior records and
/// returns the summary text.
pub fn run_fuse(options: &FuseOptions) -> Result<String, HarnessError> {
    let tracks = read_tracks(&options.tracks)?;
    let actions = read_actions(&options.actions)?;
    let handraises = read_handraises(&options.handraises)?;
    let config = FusionConfig {
        iou_min: options.iou_min,
        fps: options.fps,
    };
    let out = fuse(&tracks, &actions, &handraises, &config)?;
    write_records(&options.output, &out.records)?;
    Ok(format!(
        "records: {}\nunassigned: {}\n",
        out.records.len(),
        out.summary.unassigned_total()
    ))
}

/// Parses an annotation directory and renders the dataset statistics table.
pub fn run_stats(annotations: &Path) -> Result<String, HarnessError> {
    let corpus = parse_annotations(annotations)?;
    Ok(crate::eval::dataset_stats(&corpus).render_report())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = seeded_params(3, 42);
        let b = seeded_params(3, 42);
        assert_eq!(a, b);
        let c = seeded_params(3, 43);
        assert_ne!(a, c);
        assert_eq!(
            seeded_feature_map(4, 4, 2, 7),
            seeded_feature_map(4, 4, 2, 7)
        );
        assert!(a.qkv_weight.data().iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn digest_is_stable_and_shape_sensitive() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(tensor_digest(&t), tensor_digest(&t));
        let r = t.reshape(vec![4]).unwrap();
        assert_ne!(tensor_digest(&t), tensor_digest(&r));
    }

    #[test]
    fn bench_is_deterministic_apart_from_timing() {
        let options = BenchOptions {
            height: 8,
            width: 8,
            channels: 2,
            regions_per_side: 2,
            routed_regions: 2,
            iters: 2,
            seed: 7,
        };
        let a = run_bench(options).unwrap();
        let b = run_bench(options).unwrap();
        assert_eq!(a.render_deterministic(), b.render_deterministic());
        assert_eq!(a.output_digest, b.output_digest);
    }

    #[test]
    fn bench_rejects_bad_grid() {
        let options = BenchOptions {
            height: 64,
            width: 64,
            channels: 4,
            regions_per_side: 3,
            routed_regions: 1,
            iters: 1,
            seed: 0,
        };
        let err = run_bench(options).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("divide"));
    }

    #[test]
    fn verify_passes_clean_and_fails_faulted() {
        let clean = run_verify(false);
        assert!(clean.all_passed(), "{}", clean.render());
        let faulted = run_verify(true);
        assert!(!faulted.all_passed());
        let text = faulted.render();
        assert!(text.contains("check dense-equivalence: FAIL"), "{text}");
    }

    #[test]
    fn verify_lists_each_check_once() {
        let report = run_verify(false);
        let names: Vec<&str> = report.checks.iter().map(|c| c.name).collect();
        assert_eq!(
            names,
            vec![
                "dense-equivalence",
                "sparsity-law",
                "permutation-equivariance"
            ]
        );
    }
}
