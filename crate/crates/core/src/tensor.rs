//! Minimal deterministic dense-tensor engine.
//!
//! Everything is f64 and row-major. Every operation is a pure function of its
//! inputs with a pinned accumulation order (left-to-right over the contracted
//! axis), so repeated calls are byte-identical and results do not depend on
//! thread count or chunking. Operations return an error instead of letting a
//! NaN or infinity escape.

use thiserror::Error;

/// Errors raised by tensor construction and operations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("axis {axis} out of range for rank-{rank} tensor")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("k={k} out of range for last dimension of size {dim}")]
    KOutOfRange { k: usize, dim: usize },
    #[error("gather index {index} out of range for {regions} regions")]
    IndexOutOfRange { index: usize, regions: usize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("dimensions must be positive, got shape {shape:?}")]
    ZeroDim { shape: Vec<usize> },
}

/// Dense rank-N array of f64 with explicit shape, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, validating element count and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim { shape });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "new" });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim { shape });
        }
        let len = shape.iter().product();
        Ok(Self {
            shape,
            data: vec![0.0; len],
        })
    }

    // Constructor for op results: the shape is correct by construction and
    // finiteness is the caller's check_finite responsibility.
    fn assemble(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Reinterprets the flat buffer under a new shape with the same element
    /// count. Row-major order makes this a relabeling, not a copy.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Tensor::new(shape, self.data.clone())
    }

    fn expect_rank(&self, op: &'static str, rank: usize) -> Result<(), TensorError> {
        if self.rank() != rank {
            return Err(TensorError::RankMismatch {
                op,
                expected: rank,
                shape: self.shape.clone(),
            });
        }
        Ok(())
    }

    fn check_finite(self, op: &'static str) -> Result<Self, TensorError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    /// Matrix product of two rank-2 tensors. Accumulation runs left-to-right
    /// over the inner axis, so results are bit-reproducible.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.expect_rank("matmul", 2)?;
        other.expect_rank("matmul", 2)?;
        let (m, p) = (self.shape[0], self.shape[1]);
        let (p2, n) = (other.shape[0], other.shape[1]);
        if p != p2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for t in 0..p {
                    acc += self.data[i * p + t] * other.data[t * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::assemble(vec![m, n], out).check_finite("matmul")
    }

    /// Batched matrix product of two rank-3 tensors; batch i never touches
    /// batch j.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.expect_rank("bmm", 3)?;
        other.expect_rank("bmm", 3)?;
        let (b, m, p) = (self.shape[0], self.shape[1], self.shape[2]);
        let (b2, p2, n) = (other.shape[0], other.shape[1], other.shape[2]);
        if b != b2 || p != p2 {
            return Err(TensorError::ShapeMismatch {
                op: "bmm",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; b * m * n];
        for batch in 0..b {
            let a_off = batch * m * p;
            let b_off = batch * p * n;
            let o_off = batch * m * n;
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for t in 0..p {
                        acc += self.data[a_off + i * p + t] * other.data[b_off + t * n + j];
                    }
                    out[o_off + i * n + j] = acc;
                }
            }
        }
        Tensor::assemble(vec![b, m, n], out).check_finite("bmm")
    }

    /// Softmax over the last axis with max-subtraction for stability. Each
    /// row of the result sums to 1 within 1e-12 and preserves the input
    /// ordering.
    pub fn softmax_lastdim(&self) -> Result<Tensor, TensorError> {
        let dim = *self.shape.last().expect("tensors have at least one axis");
        let mut out = vec![0.0; self.data.len()];
        for (row_in, row_out) in self.data.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
            let max = row_in.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        Tensor::assemble(self.shape.clone(), out).check_finite("softmax_lastdim")
    }

    /// Arithmetic mean along `axis`; the output shape drops that axis.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor, TensorError> {
        if axis >= self.rank() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                rank: self.rank(),
            });
        }
        let axis_len = self.shape[axis];
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out_shape: Vec<usize> = self.shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0.0;
                for a in 0..axis_len {
                    acc += self.data[(o * axis_len + a) * inner + i];
                }
                out[o * inner + i] = acc / axis_len as f64;
            }
        }
        Tensor::assemble(out_shape, out).check_finite("mean_axis")
    }

    /// Per-row top-k over the last axis. Returns the selected values (shape
    /// `[..., k]`) and one index row per input row. Rows are ordered by
    /// descending value; equal values break toward the smaller index, so the
    /// selection is a deterministic function of the input.
    pub fn topk_lastdim(&self, k: usize) -> Result<(Tensor, Vec<Vec<usize>>), TensorError> {
        let dim = *self.shape.last().expect("tensors have at least one axis");
        if k == 0 || k > dim {
            return Err(TensorError::KOutOfRange { k, dim });
        }
        let rows = self.data.len() / dim;
        let mut values = Vec::with_capacity(rows * k);
        let mut indices = Vec::with_capacity(rows);
        for row in self.data.chunks_exact(dim) {
            let mut order: Vec<usize> = (0..dim).collect();
            order.sort_by(|&a, &b| {
                row[b]
                    .partial_cmp(&row[a])
                    .expect("finite values are totally ordered")
                    .then(a.cmp(&b))
            });
            order.truncate(k);
            values.extend(order.iter().map(|&i| row[i]));
            indices.push(order);
        }
        let mut out_shape = self.shape.clone();
        *out_shape.last_mut().unwrap() = k;
        Ok((Tensor::new(out_shape, values)?, indices))
    }

    /// Swaps the last two axes of a rank >= 2 tensor.
    pub fn transpose_last2(&self) -> Result<Tensor, TensorError> {
        if self.rank() < 2 {
            return Err(TensorError::RankMismatch {
                op: "transpose_last2",
                expected: 2,
                shape: self.shape.clone(),
            });
        }
        let r = self.rank();
        let (rows, cols) = (self.shape[r - 2], self.shape[r - 1]);
        let batch: usize = self.shape[..r - 2].iter().product();
        let mut out = vec![0.0; self.data.len()];
        for b in 0..batch {
            let off = b * rows * cols;
            for i in 0..rows {
                for j in 0..cols {
                    out[off + j * rows + i] = self.data[off + i * cols + j];
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.swap(r - 2, r - 1);
        Tensor::new(shape, out)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Tensor::assemble(self.shape.clone(), data).check_finite("add")
    }

    /// Multiplies every element by a scalar.
    pub fn scale(&self, factor: f64) -> Result<Tensor, TensorError> {
        let data = self.data.iter().map(|v| v * factor).collect();
        Tensor::assemble(self.shape.clone(), data).check_finite("scale")
    }
}

/// Concatenates routed region blocks. For input `[R, m, C]` and one index row
/// of length k per region, region r of the output holds the token blocks of
/// regions `idx[r][0..k]` in index-row order, giving `[R, k*m, C]`.
pub fn gather_regions(t: &Tensor, idx: &[Vec<usize>]) -> Result<Tensor, TensorError> {
    t.expect_rank("gather_regions", 3)?;
    let (r, m, c) = (t.shape[0], t.shape[1], t.shape[2]);
    if idx.len() != r {
        return Err(TensorError::ShapeMismatch {
            op: "gather_regions",
            left: t.shape.clone(),
            right: vec![idx.len()],
        });
    }
    let k = idx.first().map_or(0, Vec::len);
    if k == 0 || idx.iter().any(|row| row.len() != k) {
        return Err(TensorError::ShapeMismatch {
            op: "gather_regions",
            left: t.shape.clone(),
            right: vec![idx.len(), idx.iter().map(Vec::len).max().unwrap_or(0)],
        });
    }
    let block = m * c;
    let mut out = Vec::with_capacity(r * k * block);
    for row in idx {
        for &source in row {
            if source >= r {
                return Err(TensorError::IndexOutOfRange {
                    index: source,
                    regions: r,
                });
            }
            out.extend_from_slice(&t.data[source * block..(source + 1) * block]);
        }
    }
    Tensor::new(vec![r, k * m, c], out)
}

/// Depthwise 3x3 convolution over an `[H, W, C]` tensor with per-channel
/// kernels `[C, 3, 3]`, stride 1 and zero padding of 1, so the spatial shape
/// is preserved and channel c of the output depends only on channel c of the
/// input.
pub fn depthwise_conv3x3(input: &Tensor, kernels: &Tensor) -> Result<Tensor, TensorError> {
    input.expect_rank("depthwise_conv3x3", 3)?;
    let (h, w, c) = (input.shape[0], input.shape[1], input.shape[2]);
    if kernels.shape() != [c, 3, 3] {
        return Err(TensorError::ShapeMismatch {
            op: "depthwise_conv3x3",
            left: input.shape.clone(),
            right: kernels.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = y as isize + ky as isize - 1;
                        let ix = x as isize + kx as isize - 1;
                        if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let iv = input.data[(iy as usize * w + ix as usize) * c + ch];
                        acc += iv * kernels.data[ch * 9 + ky * 3 + kx];
                    }
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    Tensor::assemble(vec![h, w, c], out).check_finite("depthwise_conv3x3")
}
