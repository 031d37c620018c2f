//! Bi-level routing attention over feature maps.
//!
//! The forward pass tiles an `[H, W, C]` feature map into an `S x S` grid of
//! regions, projects queries/keys/values with one fused linear map, routes
//! each region to the top-k regions of a regional adjacency matrix (built
//! from per-region token means), and runs fine token-to-token attention only
//! against the gathered routed regions. A depthwise 3x3 convolution of the
//! value map is added back as local context. A dense all-token attention
//! reference with identical projections is provided as an oracle, along with
//! an analytic MAC model of both paths.
//!
//! The layer is a drop-in transform of any feature map whose sides the
//! region grid divides; it owns no backbone and learns nothing.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::{depthwise_conv3x3, gather_regions, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("region grid {side} must divide feature map sides {height}x{width}")]
    GridMismatch {
        side: usize,
        height: usize,
        width: usize,
    },
    #[error("routed_regions={routed} out of range for {regions} regions")]
    RoutedOutOfRange { routed: usize, regions: usize },
    #[error("{what}: expected shape {expected:?}, got {actual:?}")]
    ParamShape {
        what: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("feature map values: expected shape {expected:?}, got {actual:?}")]
    FeatureShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("snapshot i/o: {0}")]
    Io(#[from] io::Error),
    #[error("snapshot format: {0}")]
    Snapshot(String),
}

/// Routing hyperparameters for one layer.
///
/// `regions_per_side` is the square root of the region count (the feature map
/// is tiled into `regions_per_side^2` regions); `routed_regions` is how many
/// regions each region attends to. `scale_qk` multiplies the attention logits
/// by `1/sqrt(C)` before the softmax; it defaults to on because unscaled
/// logits saturate the softmax for all but tiny channel counts, and can be
/// switched off for the literal unscaled form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BraConfig {
    pub regions_per_side: usize,
    pub routed_regions: usize,
    pub scale_qk: bool,
}

impl BraConfig {
    pub fn new(regions_per_side: usize, routed_regions: usize) -> Self {
        Self {
            regions_per_side,
            routed_regions,
            scale_qk: true,
        }
    }

    pub fn region_count(&self) -> usize {
        self.regions_per_side * self.regions_per_side
    }

    /// Checks `1 <= routed_regions <= S^2` and that the grid divides the map.
    pub fn validate_for(&self, height: usize, width: usize) -> Result<(), AttentionError> {
        let s = self.regions_per_side;
        if s == 0 || !height.is_multiple_of(s) || !width.is_multiple_of(s) {
            return Err(AttentionError::GridMismatch {
                side: s,
                height,
                width,
            });
        }
        if self.routed_regions == 0 || self.routed_regions > self.region_count() {
            return Err(AttentionError::RoutedOutOfRange {
                routed: self.routed_regions,
                regions: self.region_count(),
            });
        }
        Ok(())
    }
}

/// Learned parameters of one layer: a fused `[C, 3C]` projection whose column
/// blocks `[0,C)`, `[C,2C)`, `[2C,3C)` are the query, key, and value maps (no
/// bias), plus per-channel `[C, 3, 3]` kernels for the local-context term.
#[derive(Debug, Clone, PartialEq)]
pub struct BraParams {
    pub qkv_weight: Tensor,
    pub lce_kernels: Tensor,
}

impl BraParams {
    pub fn new(qkv_weight: Tensor, lce_kernels: Tensor) -> Result<Self, AttentionError> {
        let c = qkv_weight.shape().first().copied().unwrap_or(0);
        if qkv_weight.rank() != 2 || qkv_weight.shape()[1] != 3 * c || c == 0 {
            return Err(AttentionError::ParamShape {
                what: "qkv_weight",
                expected: vec![c.max(1), 3 * c.max(1)],
                actual: qkv_weight.shape().to_vec(),
            });
        }
        if lce_kernels.shape() != [c, 3, 3] {
            return Err(AttentionError::ParamShape {
                what: "lce_kernels",
                expected: vec![c, 3, 3],
                actual: lce_kernels.shape().to_vec(),
            });
        }
        Ok(Self {
            qkv_weight,
            lce_kernels,
        })
    }

    pub fn channels(&self) -> usize {
        self.qkv_weight.shape()[0]
    }
}

/// An `[H, W, C]` stack of per-pixel feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Tensor,
}

impl FeatureMap {
    pub fn new(values: Tensor) -> Result<Self, AttentionError> {
        if values.rank() != 3 {
            return Err(AttentionError::FeatureShape {
                expected: vec![0, 0, 0],
                actual: values.shape().to_vec(),
            });
        }
        let (height, width, channels) = (values.shape()[0], values.shape()[1], values.shape()[2]);
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }
}

/// Introspection record of one forward pass: the regional adjacency matrix
/// and the per-region routed indices (each row holds `routed_regions`
/// distinct region ids, ordered by descending adjacency score).
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTrace {
    pub adjacency: Tensor,
    pub routed: Vec<Vec<usize>>,
}

/// Splits an `[H, W, C]` feature map into `S^2` regions of `(H/S)*(W/S)`
/// tokens each. Region r walks the `S x S` tile grid in row-major order and
/// lists its tile's pixels in row-major order, so the mapping is lossless.
pub fn patchify(fm: &FeatureMap, regions_per_side: usize) -> Result<Tensor, AttentionError> {
    let s = regions_per_side;
    if s == 0 || !fm.height.is_multiple_of(s) || !fm.width.is_multiple_of(s) {
        return Err(AttentionError::GridMismatch {
            side: s,
            height: fm.height,
            width: fm.width,
        });
    }
    let (tile_h, tile_w, c) = (fm.height / s, fm.width / s, fm.channels);
    let src = fm.values.data();
    let mut out = Vec::with_capacity(src.len());
    for tile_row in 0..s {
        for tile_col in 0..s {
            for y in 0..tile_h {
                for x in 0..tile_w {
                    let py = tile_row * tile_h + y;
                    let px = tile_col * tile_w + x;
                    let off = (py * fm.width + px) * c;
                    out.extend_from_slice(&src[off..off + c]);
                }
            }
        }
    }
    Ok(Tensor::new(vec![s * s, tile_h * tile_w, c], out)?)
}

/// Exact inverse of [`patchify`]: reassembles `[S^2, HW/S^2, C]` region
/// tokens into an `[H, W, C]` feature map.
pub fn unpatchify(
    tokens: &Tensor,
    regions_per_side: usize,
    height: usize,
    width: usize,
) -> Result<FeatureMap, AttentionError> {
    let s = regions_per_side;
    if s == 0 || !height.is_multiple_of(s) || !width.is_multiple_of(s) {
        return Err(AttentionError::GridMismatch {
            side: s,
            height,
            width,
        });
    }
    let (tile_h, tile_w) = (height / s, width / s);
    let c = tokens.shape().last().copied().unwrap_or(0);
    let expected = vec![s * s, tile_h * tile_w, c];
    if tokens.shape() != expected.as_slice() {
        return Err(AttentionError::FeatureShape {
            expected,
            actual: tokens.shape().to_vec(),
        });
    }
    let src = tokens.data();
    let mut out = vec![0.0; height * width * c];
    for region in 0..s * s {
        let (tile_row, tile_col) = (region / s, region % s);
        for y in 0..tile_h {
            for x in 0..tile_w {
                let token = (region * tile_h * tile_w + y * tile_w + x) * c;
                let py = tile_row * tile_h + y;
                let px = tile_col * tile_w + x;
                let off = (py * width + px) * c;
                out[off..off + c].copy_from_slice(&src[token..token + c]);
            }
        }
    }
    FeatureMap::new(Tensor::new(vec![height, width, c], out)?)
}

/// Coarse routing step: reduces per-region tokens to means, forms the
/// regional adjacency `Q_r * K_r^T`, and takes its row-wise top-k under the
/// deterministic tie rule of [`Tensor::topk_lastdim`].
pub fn route(
    query: &Tensor,
    key: &Tensor,
    routed_regions: usize,
) -> Result<RoutingTrace, AttentionError> {
    if query.shape() != key.shape() || query.rank() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "route",
            left: query.shape().to_vec(),
            right: key.shape().to_vec(),
        }
        .into());
    }
    let regions = query.shape()[0];
    if routed_regions == 0 || routed_regions > regions {
        return Err(AttentionError::RoutedOutOfRange {
            routed: routed_regions,
            regions,
        });
    }
    let query_means = query.mean_axis(1)?;
    let key_means = key.mean_axis(1)?;
    let adjacency = query_means.matmul(&key_means.transpose_last2()?)?;
    let (_, routed) = adjacency.topk_lastdim(routed_regions)?;
    Ok(RoutingTrace { adjacency, routed })
}

// Projects patchified tokens [R, m, C] through the fused weight and splits
// the 3C columns into the query/key/value blocks.
fn project_qkv(
    tokens: &Tensor,
    params: &BraParams,
) -> Result<(Tensor, Tensor, Tensor), AttentionError> {
    let (regions, per_region, c) = (tokens.shape()[0], tokens.shape()[1], tokens.shape()[2]);
    if params.channels() != c {
        return Err(AttentionError::ParamShape {
            what: "qkv_weight",
            expected: vec![c, 3 * c],
            actual: params.qkv_weight.shape().to_vec(),
        });
    }
    let flat = tokens.reshape(vec![regions * per_region, c])?;
    let projected = flat.matmul(&params.qkv_weight)?;
    let mut q = Vec::with_capacity(regions * per_region * c);
    let mut k = Vec::with_capacity(regions * per_region * c);
    let mut v = Vec::with_capacity(regions * per_region * c);
    for row in projected.data().chunks_exact(3 * c) {
        q.extend_from_slice(&row[0..c]);
        k.extend_from_slice(&row[c..2 * c]);
        v.extend_from_slice(&row[2 * c..3 * c]);
    }
    let shape = vec![regions, per_region, c];
    Ok((
        Tensor::new(shape.clone(), q)?,
        Tensor::new(shape.clone(), k)?,
        Tensor::new(shape, v)?,
    ))
}

/// Full routed-attention forward pass. Output shape equals input shape; the
/// routing trace is returned for inspection.
pub fn bra_forward(
    fm: &FeatureMap,
    cfg: &BraConfig,
    params: &BraParams,
) -> Result<(FeatureMap, RoutingTrace), AttentionError> {
    bra_forward_impl(fm, cfg, params, false)
}

/// Forward pass with a deliberately corrupted gather stage (the gathered
/// value blocks are sign-flipped). Exists so runtime self-checks can prove
/// they detect a broken kernel; never use for real computation.
#[doc(hidden)]
pub fn bra_forward_with_gather_fault(
    fm: &FeatureMap,
    cfg: &BraConfig,
    params: &BraParams,
) -> Result<(FeatureMap, RoutingTrace), AttentionError> {
    bra_forward_impl(fm, cfg, params, true)
}

fn bra_forward_impl(
    fm: &FeatureMap,
    cfg: &BraConfig,
    params: &BraParams,
    fault_gather: bool,
) -> Result<(FeatureMap, RoutingTrace), AttentionError> {
    cfg.validate_for(fm.height, fm.width)?;
    let tokens = patchify(fm, cfg.regions_per_side)?;
    let (query, key, value) = project_qkv(&tokens, params)?;

    let trace = route(&query, &key, cfg.routed_regions)?;
    let gathered_keys = gather_regions(&key, &trace.routed)?;
    let mut gathered_values = gather_regions(&value, &trace.routed)?;
    if fault_gather {
        gathered_values = gathered_values.scale(-1.0)?;
    }

    let mut logits = query.bmm(&gathered_keys.transpose_last2()?)?;
    if cfg.scale_qk {
        logits = logits.scale(1.0 / (fm.channels as f64).sqrt())?;
    }
    let attn = logits.softmax_lastdim()?;
    let context = attn.bmm(&gathered_values)?;

    let attended = unpatchify(&context, cfg.regions_per_side, fm.height, fm.width)?;
    let value_map = unpatchify(&value, cfg.regions_per_side, fm.height, fm.width)?;
    let local = depthwise_conv3x3(value_map.values(), &params.lce_kernels)?;
    let output = FeatureMap::new(attended.values.add(&local)?)?;
    Ok((output, trace))
}

/// Dense reference: token-to-token attention over all `H*W` tokens with the
/// same projections and local-context term, no routing. Serves as the oracle
/// for the `routed_regions = S^2` equivalence check.
pub fn dense_attention_forward(
    fm: &FeatureMap,
    params: &BraParams,
    scale_qk: bool,
) -> Result<FeatureMap, AttentionError> {
    let (h, w, c) = (fm.height, fm.width, fm.channels);
    let tokens = fm.values.reshape(vec![1, h * w, c])?;
    let (query, key, value) = project_qkv(&tokens, params)?;
    let flat_q = query.reshape(vec![h * w, c])?;
    let flat_k = key.reshape(vec![h * w, c])?;
    let flat_v = value.reshape(vec![h * w, c])?;

    let mut logits = flat_q.matmul(&flat_k.transpose_last2()?)?;
    if scale_qk {
        logits = logits.scale(1.0 / (c as f64).sqrt())?;
    }
    let attn = logits.softmax_lastdim()?;
    let context = attn.matmul(&flat_v)?;

    let value_map = flat_v.reshape(vec![h, w, c])?;
    let local = depthwise_conv3x3(&value_map, &params.lce_kernels)?;
    let output = context.reshape(vec![h, w, c])?.add(&local)?;
    FeatureMap::new(output)
}

/// Multiply-accumulate counts for one forward pass, by stage, plus the dense
/// reference count for the token-to-token stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopReport {
    /// Fused query/key/value projection: `3 * HW * C^2`.
    pub qkv_projection: u64,
    /// Per-region query and key means: `2 * HW * C`.
    pub regional_pooling: u64,
    /// Regional adjacency matrix: `S^4 * C`.
    pub adjacency: u64,
    /// Q*K_g^T plus A*V_g over the routed regions: `2 * HW * (k*HW/S^2) * C`.
    pub token_to_token: u64,
    /// Depthwise 3x3 local context: `9 * HW * C`.
    pub lce: u64,
    /// Token-to-token count of the dense reference: `2 * (HW)^2 * C`.
    pub dense_token_to_token: u64,
}

impl FlopReport {
    /// Total MACs of the routed path.
    pub fn bra_total(&self) -> u64 {
        self.qkv_projection
            + self.regional_pooling
            + self.adjacency
            + self.token_to_token
            + self.lce
    }

    /// Routed over dense token-to-token MACs; equals `k / S^2` exactly.
    pub fn token_to_token_ratio(&self) -> f64 {
        self.token_to_token as f64 / self.dense_token_to_token as f64
    }
}

/// Analytic MAC model of the routed and dense attention paths. Comparisons
/// and softmax are not counted.
pub fn flops(cfg: &BraConfig, height: usize, width: usize, channels: usize) -> FlopReport {
    let hw = (height * width) as u64;
    let c = channels as u64;
    let s2 = cfg.region_count() as u64;
    let k = cfg.routed_regions as u64;
    let gathered_tokens = k * hw / s2;
    FlopReport {
        qkv_projection: 3 * hw * c * c,
        regional_pooling: 2 * hw * c,
        adjacency: s2 * s2 * c,
        token_to_token: 2 * hw * gathered_tokens * c,
        lce: 9 * hw * c,
        dense_token_to_token: 2 * hw * hw * c,
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"BRAPARM1";

/// Writes a parameter snapshot. Layout, all little-endian:
/// magic `"BRAPARM1"`, then u32 channels, u32 regions_per_side,
/// u32 routed_regions, u8 scale_qk, then `C*3C` f64 qkv weights row-major,
/// then `C*3*3` f64 local-context kernels row-major.
pub fn save_params(path: &Path, cfg: &BraConfig, params: &BraParams) -> Result<(), AttentionError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&(params.channels() as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.regions_per_side as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.routed_regions as u32).to_le_bytes());
    buf.push(cfg.scale_qk as u8);
    for v in params.qkv_weight.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in params.lce_kernels.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads a parameter snapshot written by [`save_params`].
pub fn load_params(path: &Path) -> Result<(BraConfig, BraParams), AttentionError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 21 || &bytes[0..8] != SNAPSHOT_MAGIC {
        return Err(AttentionError::Snapshot(
            "missing BRAPARM1 magic header".into(),
        ));
    }
    let word = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let channels = word(8);
    let regions_per_side = word(12);
    let routed_regions = word(16);
    let scale_qk = match bytes[20] {
        0 => false,
        1 => true,
        other => {
            return Err(AttentionError::Snapshot(format!(
                "scale_qk flag must be 0 or 1, got {other}"
            )))
        }
    };
    let weight_len = channels * 3 * channels;
    let kernel_len = channels * 9;
    let expected = 21 + 8 * (weight_len + kernel_len);
    if bytes.len() != expected {
        return Err(AttentionError::Snapshot(format!(
            "expected {expected} bytes for {channels} channels, got {}",
            bytes.len()
        )));
    }
    let mut values = bytes[21..]
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().unwrap()));
    let weight: Vec<f64> = values.by_ref().take(weight_len).collect();
    let kernels: Vec<f64> = values.collect();
    let params = BraParams::new(
        Tensor::new(vec![channels, 3 * channels], weight)?,
        Tensor::new(vec![channels, 3, 3], kernels)?,
    )?;
    let cfg = BraConfig {
        regions_per_side,
        routed_regions,
        scale_qk,
    };
    Ok((cfg, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fill(shape: &[usize], seed: u64) -> Tensor {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % 2000) as f64 / 1000.0 - 1.0
            })
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn feature_map(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
        FeatureMap::new(fill(&[h, w, c], seed)).unwrap()
    }

    fn params(c: usize, seed: u64) -> BraParams {
        BraParams::new(
            fill(&[c, 3 * c], seed).scale(0.1).unwrap(),
            fill(&[c, 3, 3], seed + 1).scale(0.1).unwrap(),
        )
        .unwrap()
    }

    fn params_no_lce(c: usize, seed: u64) -> BraParams {
        BraParams::new(
            fill(&[c, 3 * c], seed).scale(0.1).unwrap(),
            Tensor::zeros(vec![c, 3, 3]).unwrap(),
        )
        .unwrap()
    }

    fn max_abs_diff(a: &FeatureMap, b: &FeatureMap) -> f64 {
        a.values()
            .data()
            .iter()
            .zip(b.values().data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn patchify_two_by_two_singleton_regions() {
        let fm =
            FeatureMap::new(Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let t = patchify(&fm, 2).unwrap();
        assert_eq!(t.shape(), &[4, 1, 1]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn patchify_region_zero_holds_top_left_tile() {
        // H=W=4, S=2: region 0 must walk pixels (0,0),(0,1),(1,0),(1,1).
        let mut data = vec![0.0; 16];
        for (i, v) in data.iter_mut().enumerate() {
            *v = i as f64;
        }
        let fm = FeatureMap::new(Tensor::new(vec![4, 4, 1], data).unwrap()).unwrap();
        let t = patchify(&fm, 2).unwrap();
        assert_eq!(&t.data()[0..4], &[0.0, 1.0, 4.0, 5.0]);
    }

    #[test]
    fn unpatchify_inverts_hand_case() {
        let fm =
            FeatureMap::new(Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let t = patchify(&fm, 2).unwrap();
        assert_eq!(unpatchify(&t, 2, 2, 2).unwrap(), fm);
    }

    #[test]
    fn unpatchify_with_region_permutation_relocates_tiles() {
        let fm = feature_map(4, 4, 1, 2);
        let t = patchify(&fm, 2).unwrap();
        // swap regions 0 and 3 (diagonal tiles)
        let permuted = gather_regions(&t, &[vec![3], vec![1], vec![2], vec![0]]).unwrap();
        let moved = unpatchify(&permuted, 2, 4, 4).unwrap();
        let orig = fm.values().data();
        let got = moved.values().data();
        // pixel (0,0) now holds old pixel (2,2)
        assert_eq!(got[0], orig[2 * 4 + 2]);
        // pixel (2,2) now holds old pixel (0,0)
        assert_eq!(got[2 * 4 + 2], orig[0]);
    }

    #[test]
    fn unpatchify_shape_mismatch_is_error() {
        let t = fill(&[4, 1, 1], 3);
        assert!(unpatchify(&t, 2, 4, 4).is_err());
    }

    #[test]
    fn patchify_divisibility_violation() {
        let fm = feature_map(4, 4, 1, 4);
        assert!(matches!(
            patchify(&fm, 3),
            Err(AttentionError::GridMismatch { side: 3, .. })
        ));
    }

    #[test]
    fn route_single_region_routes_to_itself() {
        let q = fill(&[1, 4, 2], 5);
        let k = fill(&[1, 4, 2], 6);
        let trace = route(&q, &k, 1).unwrap();
        assert_eq!(trace.routed, vec![vec![0]]);
    }

    #[test]
    fn route_hand_adjacency_argmax() {
        // One token per region with mean vectors chosen so the adjacency is
        // [[2,1],[0,3]]; the row-wise argmax is then [0] and [1].
        let q = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let k = Tensor::new(vec![2, 1, 2], vec![2.0, 0.0, 1.0, 3.0]).unwrap();
        let trace = route(&q, &k, 1).unwrap();
        assert_eq!(trace.adjacency.data(), &[2.0, 1.0, 0.0, 3.0]);
        assert_eq!(trace.routed, vec![vec![0], vec![1]]);
        let trace2 = route(&q, &k, 2).unwrap();
        assert_eq!(trace2.routed[0], vec![0, 1]);
        assert_eq!(trace2.routed[1], vec![1, 0]);
    }

    #[test]
    fn route_rejects_mismatched_query_key_shapes() {
        let q = fill(&[2, 3, 2], 61);
        let k = fill(&[2, 4, 2], 62);
        assert!(route(&q, &k, 1).is_err());
    }

    #[test]
    fn route_full_selection_is_permutation() {
        let q = fill(&[4, 3, 2], 7);
        let k = fill(&[4, 3, 2], 8);
        let trace = route(&q, &k, 4).unwrap();
        for row in &trace.routed {
            let mut sorted = row.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn forward_with_zero_weights_is_zero() {
        let fm = feature_map(4, 4, 2, 9);
        let zero =
            BraParams::new(Tensor::zeros(vec![2, 6]).unwrap(), fill(&[2, 3, 3], 10)).unwrap();
        let (out, _) = bra_forward(&fm, &BraConfig::new(2, 2), &zero).unwrap();
        assert!(out.values().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_single_region_equals_dense() {
        let fm = feature_map(4, 4, 2, 11);
        let p = params(2, 12);
        let cfg = BraConfig::new(1, 1);
        let (out, _) = bra_forward(&fm, &cfg, &p).unwrap();
        let dense = dense_attention_forward(&fm, &p, cfg.scale_qk).unwrap();
        assert!(max_abs_diff(&out, &dense) <= 1e-9);
    }

    #[test]
    fn forward_full_routing_matches_dense_oracle() {
        for scale_qk in [true, false] {
            let fm = feature_map(4, 4, 2, 13);
            let p = params_no_lce(2, 14);
            let cfg = BraConfig {
                regions_per_side: 2,
                routed_regions: 4,
                scale_qk,
            };
            let (out, _) = bra_forward(&fm, &cfg, &p).unwrap();
            let dense = dense_attention_forward(&fm, &p, scale_qk).unwrap();
            assert!(max_abs_diff(&out, &dense) <= 1e-9);
        }
    }

    #[test]
    fn forward_output_shape_equals_input_shape() {
        let fm = feature_map(8, 4, 3, 15);
        let (out, trace) = bra_forward(&fm, &BraConfig::new(2, 2), &params(3, 16)).unwrap();
        assert_eq!(out.values().shape(), fm.values().shape());
        assert_eq!(trace.routed.len(), 4);
        assert!(trace.routed.iter().all(|row| row.len() == 2));
    }

    #[test]
    fn forward_rejects_bad_grid() {
        let fm = feature_map(4, 4, 2, 17);
        let err = bra_forward(&fm, &BraConfig::new(3, 1), &params(2, 18)).unwrap_err();
        assert!(err.to_string().contains("divide"));
    }

    #[test]
    fn forward_rejects_k_out_of_range() {
        let fm = feature_map(4, 4, 2, 19);
        assert!(matches!(
            bra_forward(&fm, &BraConfig::new(2, 5), &params(2, 20)),
            Err(AttentionError::RoutedOutOfRange { .. })
        ));
    }

    #[test]
    fn dense_single_token_is_value_plus_lce() {
        let fm = feature_map(1, 1, 3, 21);
        let p = params(3, 22);
        let out = dense_attention_forward(&fm, &p, true).unwrap();
        // softmax over one logit is 1, so the token reduces to its value
        // vector plus the center tap of the local-context kernel.
        let tokens = fm.values().reshape(vec![1, 3]).unwrap();
        let projected = tokens.matmul(&p.qkv_weight).unwrap();
        for ch in 0..3 {
            let value = projected.data()[6 + ch];
            let center = p.lce_kernels.data()[ch * 9 + 4];
            let want = value + center * value;
            assert!((out.values().data()[ch] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn dense_zero_params_zero_output() {
        let fm = feature_map(2, 2, 2, 23);
        let zero = BraParams::new(
            Tensor::zeros(vec![2, 6]).unwrap(),
            Tensor::zeros(vec![2, 3, 3]).unwrap(),
        )
        .unwrap();
        let out = dense_attention_forward(&fm, &zero, true).unwrap();
        assert!(out.values().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gather_fault_breaks_dense_equivalence() {
        let fm = feature_map(4, 4, 2, 24);
        let p = params_no_lce(2, 25);
        let cfg = BraConfig::new(2, 4);
        let (faulted, _) = bra_forward_with_gather_fault(&fm, &cfg, &p).unwrap();
        let dense = dense_attention_forward(&fm, &p, cfg.scale_qk).unwrap();
        assert!(max_abs_diff(&faulted, &dense) > 1e-6);
    }

    #[test]
    fn flops_hand_values() {
        let report = flops(&BraConfig::new(2, 1), 8, 8, 4);
        assert_eq!(report.token_to_token, 8192);
        assert_eq!(report.dense_token_to_token, 32768);
        assert_eq!(report.token_to_token_ratio(), 0.25);
        assert_eq!(report.qkv_projection, 3 * 64 * 16);
        assert_eq!(report.regional_pooling, 2 * 64 * 4);
        assert_eq!(report.adjacency, 16 * 4);
        assert_eq!(report.lce, 9 * 64 * 4);
    }

    #[test]
    fn flops_full_routing_collapses_to_dense() {
        let report = flops(&BraConfig::new(4, 16), 16, 16, 8);
        assert_eq!(report.token_to_token, report.dense_token_to_token);
        assert_eq!(report.token_to_token_ratio(), 1.0);
    }

    #[test]
    fn flops_linear_in_routed_regions() {
        let one = flops(&BraConfig::new(4, 2), 16, 16, 8);
        let two = flops(&BraConfig::new(4, 4), 16, 16, 8);
        assert_eq!(two.token_to_token, 2 * one.token_to_token);
        assert_eq!(two.qkv_projection, one.qkv_projection);
        assert_eq!(two.adjacency, one.adjacency);
        assert_eq!(two.lce, one.lce);
    }

    #[test]
    fn snapshot_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("layer.braparm");
        let cfg = BraConfig {
            regions_per_side: 4,
            routed_regions: 3,
            scale_qk: false,
        };
        let p = params(3, 30);
        save_params(&path, &cfg, &p).unwrap();
        let (cfg2, p2) = load_params(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(p, p2);
    }

    #[test]
    fn snapshot_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.braparm");
        std::fs::write(&path, b"NOTPARMS0000000000000000000").unwrap();
        assert!(matches!(
            load_params(&path),
            Err(AttentionError::Snapshot(_))
        ));
    }

    #[test]
    fn snapshot_rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.braparm");
        let cfg = BraConfig::new(2, 1);
        let p = params(2, 31);
        save_params(&path, &cfg, &p).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_params(&path),
            Err(AttentionError::Snapshot(_))
        ));
    }

    proptest! {
        #[test]
        fn patchify_roundtrip(seed in 0u64..500, s in 1usize..3) {
            let side = s * 2;
            let fm = feature_map(side * 2, side * 2, 2, seed);
            let t = patchify(&fm, side).unwrap();
            let back = unpatchify(&t, side, side * 2, side * 2).unwrap();
            prop_assert_eq!(back, fm);
        }

        #[test]
        fn attention_rows_sum_to_one(seed in 0u64..200) {
            let fm = feature_map(4, 4, 2, seed);
            let cfg = BraConfig::new(2, 2);
            let p = params(2, seed + 1000);
            let tokens = patchify(&fm, 2).unwrap();
            let (q, k, _) = super::project_qkv(&tokens, &p).unwrap();
            let trace = route(&q, &k, 2).unwrap();
            let gathered = gather_regions(&k, &trace.routed).unwrap();
            let mut logits = q.bmm(&gathered.transpose_last2().unwrap()).unwrap();
            if cfg.scale_qk {
                logits = logits.scale(1.0 / (2.0f64).sqrt()).unwrap();
            }
            let attn = logits.softmax_lastdim().unwrap();
            let cols = *attn.shape().last().unwrap();
            for row in attn.data().chunks_exact(cols) {
                let sum: f64 = row.iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
            }
        }
    }
}
