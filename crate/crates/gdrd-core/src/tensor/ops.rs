//! Forward operations and their backward rules.
//!
//! Each operation validates shapes eagerly and names itself in the error so a
//! failure deep inside a model points at the offending call. Backward rules
//! return one cotangent contribution per tracked parent, in a fixed order.

use rayon::prelude::*;

use super::element::Element;
use super::gemm;
use super::{numel, Inner, Tensor, TensorError};

/// Lower bound applied when clamping log-probabilities: ln(1e-12).
pub const LOG_EPS: f64 = -27.631021115928547;

/// Epsilon added under the square root when normalizing, so zero vectors
/// stay finite.
pub const NORM_EPS: f64 = 1e-12;

pub(crate) enum Op<T: Element> {
    Leaf,
    Add(Tensor<T>, Tensor<T>),
    Sub(Tensor<T>, Tensor<T>),
    Mul(Tensor<T>, Tensor<T>),
    Scale(Tensor<T>, T),
    /// Negative control for the gradient checker: the forward pass multiplies
    /// by `k` but the backward pass deliberately reports the gradient for
    /// `k + 0.25`.
    BrokenScale(Tensor<T>, T),
    Matmul(Tensor<T>, Tensor<T>),
    Linear {
        x: Tensor<T>,
        w: Tensor<T>,
        b: Tensor<T>,
    },
    Conv2d {
        x: Tensor<T>,
        w: Tensor<T>,
        b: Tensor<T>,
        stride: usize,
        pad: usize,
        /// Saved im2col patch matrix, (n*oh*ow, cin*kh*kw). Empty when the
        /// result is untracked and backward can never run.
        col: Vec<T>,
    },
    Relu(Tensor<T>),
    Concat {
        parts: Vec<Tensor<T>>,
        axis: usize,
    },
    Sum {
        x: Tensor<T>,
        axis: Option<usize>,
    },
    Mean {
        x: Tensor<T>,
        axis: Option<usize>,
    },
    SquaredL2Norm(Tensor<T>),
    L2Normalize {
        x: Tensor<T>,
        /// Saved 1/sqrt(sum + eps) per row.
        inv_norms: Vec<T>,
    },
    Softmax {
        x: Tensor<T>,
        axis: usize,
    },
    LogSoftmax {
        x: Tensor<T>,
        axis: usize,
    },
    Reshape(Tensor<T>),
}

impl<T: Element> Op<T> {
    pub(crate) fn parents(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![a, b],
            Op::Scale(x, _) | Op::BrokenScale(x, _) | Op::Relu(x) | Op::SquaredL2Norm(x) | Op::Reshape(x) => {
                vec![x]
            }
            Op::Linear { x, w, b } => vec![x, w, b],
            Op::Conv2d { x, w, b, .. } => vec![x, w, b],
            Op::Concat { parts, .. } => parts.iter().collect(),
            Op::Sum { x, .. } | Op::Mean { x, .. } => vec![x],
            Op::L2Normalize { x, .. } => vec![x],
            Op::Softmax { x, .. } | Op::LogSoftmax { x, .. } => vec![x],
        }
    }

    /// Cotangent contributions for each tracked parent given the node's own
    /// cotangent. The emission order is fixed, which pins the accumulation
    /// order in the backward pass.
    pub(crate) fn backward(&self, node: &Inner<T>, cot: &[T]) -> Vec<(Tensor<T>, Vec<T>)> {
        let mut out: Vec<(Tensor<T>, Vec<T>)> = Vec::new();
        match self {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if a.is_tracked() {
                    out.push((a.clone(), cot.to_vec()));
                }
                if b.is_tracked() {
                    out.push((b.clone(), cot.to_vec()));
                }
            }
            Op::Sub(a, b) => {
                if a.is_tracked() {
                    out.push((a.clone(), cot.to_vec()));
                }
                if b.is_tracked() {
                    out.push((b.clone(), cot.iter().map(|c| -*c).collect()));
                }
            }
            Op::Mul(a, b) => {
                if a.is_tracked() {
                    out.push((a.clone(), zip_mul(cot, b.data())));
                }
                if b.is_tracked() {
                    out.push((b.clone(), zip_mul(cot, a.data())));
                }
            }
            Op::Scale(x, k) => {
                if x.is_tracked() {
                    out.push((x.clone(), cot.iter().map(|c| *c * *k).collect()));
                }
            }
            Op::BrokenScale(x, k) => {
                if x.is_tracked() {
                    let wrong = *k + T::from_f64(0.25);
                    out.push((x.clone(), cot.iter().map(|c| *c * wrong).collect()));
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                if a.is_tracked() {
                    let mut da = vec![T::zero(); m * k];
                    gemm::gemm_nt(m, n, k, cot, b.data(), &mut da, false);
                    out.push((a.clone(), da));
                }
                if b.is_tracked() {
                    let mut db = vec![T::zero(); k * n];
                    gemm::gemm_tn(k, m, n, a.data(), cot, &mut db, false);
                    out.push((b.clone(), db));
                }
            }
            Op::Linear { x, w, b } => {
                let (rows, in_dim) = (x.shape()[0], x.shape()[1]);
                let out_dim = w.shape()[0];
                if x.is_tracked() {
                    let mut dx = vec![T::zero(); rows * in_dim];
                    gemm::gemm_nn(rows, out_dim, in_dim, cot, w.data(), &mut dx, false);
                    out.push((x.clone(), dx));
                }
                if w.is_tracked() {
                    let mut dw = vec![T::zero(); out_dim * in_dim];
                    gemm::gemm_tn(out_dim, rows, in_dim, cot, x.data(), &mut dw, false);
                    out.push((w.clone(), dw));
                }
                if b.is_tracked() {
                    let mut db = vec![T::zero(); out_dim];
                    for r in 0..rows {
                        for (dbj, cj) in db.iter_mut().zip(&cot[r * out_dim..(r + 1) * out_dim]) {
                            *dbj += *cj;
                        }
                    }
                    out.push((b.clone(), db));
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                col,
            } => {
                let xs = x.shape();
                let ws = w.shape();
                let (n, cin, h, wid) = (xs[0], xs[1], xs[2], xs[3]);
                let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
                let (oh, ow) = (node.shape[2], node.shape[3]);
                let rows = n * oh * ow;
                let patch = cin * kh * kw;
                // Regroup the NCHW cotangent as one row per output pixel.
                let mut cot_rows = vec![T::zero(); rows * cout];
                cot_rows
                    .par_chunks_mut(oh * ow * cout)
                    .zip(cot.par_chunks(cout * oh * ow))
                    .for_each(|(dst, src)| {
                        for c in 0..cout {
                            for yx in 0..oh * ow {
                                dst[yx * cout + c] = src[c * oh * ow + yx];
                            }
                        }
                    });
                if x.is_tracked() {
                    let mut dcol = vec![T::zero(); rows * patch];
                    gemm::gemm_nn(rows, cout, patch, &cot_rows, w.data(), &mut dcol, false);
                    let mut dx = vec![T::zero(); n * cin * h * wid];
                    dx.par_chunks_mut(cin * h * wid)
                        .zip(dcol.par_chunks(oh * ow * patch))
                        .for_each(|(dxb, dcolb)| {
                            col2im_sample(dcolb, cin, h, wid, kh, kw, *stride, *pad, oh, ow, dxb);
                        });
                    out.push((x.clone(), dx));
                }
                if w.is_tracked() {
                    let mut dw = vec![T::zero(); cout * patch];
                    gemm::gemm_tn(cout, rows, patch, &cot_rows, col, &mut dw, false);
                    out.push((w.clone(), dw));
                }
                if b.is_tracked() {
                    let mut db = vec![T::zero(); cout];
                    for r in 0..rows {
                        for (dbj, cj) in db.iter_mut().zip(&cot_rows[r * cout..(r + 1) * cout]) {
                            *dbj += *cj;
                        }
                    }
                    out.push((b.clone(), db));
                }
            }
            Op::Relu(x) => {
                if x.is_tracked() {
                    let dx = x
                        .data()
                        .iter()
                        .zip(cot)
                        .map(|(xi, ci)| if *xi > T::zero() { *ci } else { T::zero() })
                        .collect();
                    out.push((x.clone(), dx));
                }
            }
            Op::Concat { parts, axis } => {
                let inner: usize = node.shape[axis + 1..].iter().product();
                let outer: usize = node.shape[..*axis].iter().product();
                let total_axis = node.shape[*axis];
                let mut offset = 0usize;
                for part in parts {
                    let part_axis = part.shape()[*axis];
                    if part.is_tracked() {
                        let mut dp = vec![T::zero(); part.len()];
                        for o in 0..outer {
                            let src = (o * total_axis + offset) * inner;
                            let dst = o * part_axis * inner;
                            dp[dst..dst + part_axis * inner]
                                .copy_from_slice(&cot[src..src + part_axis * inner]);
                        }
                        out.push((part.clone(), dp));
                    }
                    offset += part_axis;
                }
            }
            Op::Sum { x, axis } => {
                if x.is_tracked() {
                    out.push((x.clone(), spread_reduction(x.shape(), *axis, cot, T::one())));
                }
            }
            Op::Mean { x, axis } => {
                if x.is_tracked() {
                    let denom = match axis {
                        None => x.len(),
                        Some(a) => x.shape()[*a],
                    };
                    let scale = T::one() / T::from_f64(denom as f64);
                    out.push((x.clone(), spread_reduction(x.shape(), *axis, cot, scale)));
                }
            }
            Op::SquaredL2Norm(x) => {
                if x.is_tracked() {
                    let two_c = cot[0] * T::from_f64(2.0);
                    out.push((x.clone(), x.data().iter().map(|xi| *xi * two_c).collect()));
                }
            }
            Op::L2Normalize { x, inv_norms } => {
                if x.is_tracked() {
                    let row_len = *x.shape().last().expect("l2_normalize rank checked");
                    let mut dx = vec![T::zero(); x.len()];
                    for (r, inv) in inv_norms.iter().enumerate() {
                        let xr = &x.data()[r * row_len..(r + 1) * row_len];
                        let gr = &cot[r * row_len..(r + 1) * row_len];
                        let mut dot = T::zero();
                        for (xi, gi) in xr.iter().zip(gr) {
                            dot += *xi * *gi;
                        }
                        let inv3_dot = dot * *inv * *inv * *inv;
                        for ((di, xi), gi) in dx[r * row_len..(r + 1) * row_len].iter_mut().zip(xr).zip(gr) {
                            *di = *gi * *inv - *xi * inv3_dot;
                        }
                    }
                    out.push((x.clone(), dx));
                }
            }
            Op::Softmax { x, axis } => {
                if x.is_tracked() {
                    let (outer, axis_len, inner) = split_axis(&node.shape, *axis);
                    let y = &node.data;
                    let mut dx = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * axis_len * inner + i;
                            let mut dot = T::zero();
                            for a in 0..axis_len {
                                let idx = base + a * inner;
                                dot += cot[idx] * y[idx];
                            }
                            for a in 0..axis_len {
                                let idx = base + a * inner;
                                dx[idx] = y[idx] * (cot[idx] - dot);
                            }
                        }
                    }
                    out.push((x.clone(), dx));
                }
            }
            Op::LogSoftmax { x, axis } => {
                if x.is_tracked() {
                    let (outer, axis_len, inner) = split_axis(&node.shape, *axis);
                    let y = &node.data;
                    let mut dx = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * axis_len * inner + i;
                            let mut cot_sum = T::zero();
                            for a in 0..axis_len {
                                cot_sum += cot[base + a * inner];
                            }
                            for a in 0..axis_len {
                                let idx = base + a * inner;
                                dx[idx] = cot[idx] - y[idx].exp() * cot_sum;
                            }
                        }
                    }
                    out.push((x.clone(), dx));
                }
            }
            Op::Reshape(x) => {
                if x.is_tracked() {
                    out.push((x.clone(), cot.to_vec()));
                }
            }
        }
        out
    }
}

fn zip_mul<T: Element>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(x, y)| *x * *y).collect()
}

/// (product of dims before `axis`, dims[axis], product of dims after).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Broadcasts a reduction cotangent back over the reduced axis, scaled.
fn spread_reduction<T: Element>(shape: &[usize], axis: Option<usize>, cot: &[T], scale: T) -> Vec<T> {
    match axis {
        None => {
            let v = cot[0] * scale;
            vec![v; numel(shape)]
        }
        Some(a) => {
            let (outer, axis_len, inner) = split_axis(shape, a);
            let mut dx = vec![T::zero(); numel(shape)];
            for o in 0..outer {
                for ax in 0..axis_len {
                    let base = (o * axis_len + ax) * inner;
                    for i in 0..inner {
                        dx[base + i] = cot[o * inner + i] * scale;
                    }
                }
            }
            dx
        }
    }
}

fn im2col_sample<T: Element>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    let patch = cin * kh * kw;
    for y in 0..oh {
        for xo in 0..ow {
            let row = (y * ow + xo) * patch;
            for ci in 0..cin {
                for ky in 0..kh {
                    let iy = (y * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (xo * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        col[row + (ci * kh + ky) * kw + kx] = x[(ci * h + iy as usize) * w + ix as usize];
                    }
                }
            }
        }
    }
}

fn col2im_sample<T: Element>(
    dcol: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dx: &mut [T],
) {
    let patch = cin * kh * kw;
    for y in 0..oh {
        for xo in 0..ow {
            let row = (y * ow + xo) * patch;
            for ci in 0..cin {
                for ky in 0..kh {
                    let iy = (y * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (xo * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[(ci * h + iy as usize) * w + ix as usize] += dcol[row + (ci * kh + ky) * kw + kx];
                    }
                }
            }
        }
    }
}

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(), TensorError> {
    if axis >= shape.len() {
        return Err(TensorError::AxisOutOfRange {
            op,
            axis,
            rank: shape.len(),
        });
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| *a + *b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Add(self.clone(), other.clone()),
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| *a - *b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Sub(self.clone(), other.clone()),
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| *a * *b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Mul(self.clone(), other.clone()),
        ))
    }

    /// Multiplication by a compile-time constant scalar.
    pub fn scale(&self, k: T) -> Result<Tensor<T>, TensorError> {
        let data = self.data().iter().map(|a| *a * k).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Scale(self.clone(), k)))
    }

    /// Forward multiplies by `k`; backward is intentionally wrong. Exists so
    /// the gradient-check harness can prove it catches bad derivatives.
    pub fn broken_scale(&self, k: T) -> Result<Tensor<T>, TensorError> {
        let data = self.data().iter().map(|a| *a * k).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::BrokenScale(self.clone(), k),
        ))
    }

    /// 2-D matrix product: (m, k) x (k, n) -> (m, n).
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if self.shape().len() != 2 || other.shape().len() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = other.shape()[1];
        let mut data = vec![T::zero(); m * n];
        gemm::gemm_nn(m, k, n, self.data(), other.data(), &mut data, false);
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            Op::Matmul(self.clone(), other.clone()),
        ))
    }

    /// Affine map y = x W^T + b with x (rows, in), W (out, in), b (out).
    pub fn linear(&self, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if self.shape().len() != 2 || w.shape().len() != 2 || self.shape()[1] != w.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: self.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let (rows, in_dim) = (self.shape()[0], self.shape()[1]);
        let out_dim = w.shape()[0];
        if b.shape() != [out_dim] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: vec![out_dim],
                rhs: b.shape().to_vec(),
            });
        }
        let mut data = vec![T::zero(); rows * out_dim];
        gemm::gemm_nt(rows, in_dim, out_dim, self.data(), w.data(), &mut data, false);
        let bias = b.data();
        data.par_chunks_mut(out_dim).for_each(|row| {
            for (r, bv) in row.iter_mut().zip(bias) {
                *r += *bv;
            }
        });
        Ok(Tensor::from_op(
            vec![rows, out_dim],
            data,
            Op::Linear {
                x: self.clone(),
                w: w.clone(),
                b: b.clone(),
            },
        ))
    }

    /// 2-D convolution over NCHW input with OIHW weights.
    pub fn conv2d(&self, w: &Tensor<T>, b: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>, TensorError> {
        const OP: &str = "conv2d";
        if self.shape().len() != 4 || w.shape().len() != 4 || self.shape()[1] != w.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                lhs: self.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let (n, cin, h, wid) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let (cout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        if b.shape() != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                lhs: vec![cout],
                rhs: b.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: OP,
                message: "stride must be positive".into(),
            });
        }
        if h + 2 * pad < kh || wid + 2 * pad < kw {
            return Err(TensorError::Invalid {
                op: OP,
                message: format!("kernel {kh}x{kw} exceeds padded input {h}x{wid} (pad {pad})"),
            });
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wid + 2 * pad - kw) / stride + 1;
        let rows = n * oh * ow;
        let patch = cin * kh * kw;

        let mut col = vec![T::zero(); rows * patch];
        col.par_chunks_mut(oh * ow * patch)
            .zip(self.data().par_chunks(cin * h * wid))
            .for_each(|(colb, xb)| im2col_sample(xb, cin, h, wid, kh, kw, stride, pad, oh, ow, colb));

        let mut out_rows = vec![T::zero(); rows * cout];
        gemm::gemm_nt(rows, patch, cout, &col, w.data(), &mut out_rows, false);

        let bias = b.data();
        let mut data = vec![T::zero(); n * cout * oh * ow];
        data.par_chunks_mut(cout * oh * ow)
            .zip(out_rows.par_chunks(oh * ow * cout))
            .for_each(|(ob, rb)| {
                for c in 0..cout {
                    let bv = bias[c];
                    for yx in 0..oh * ow {
                        ob[c * oh * ow + yx] = rb[yx * cout + c] + bv;
                    }
                }
            });

        let tracked = self.is_tracked() || w.is_tracked() || b.is_tracked();
        let col = if tracked { col } else { Vec::new() };
        Ok(Tensor::from_op(
            vec![n, cout, oh, ow],
            data,
            Op::Conv2d {
                x: self.clone(),
                w: w.clone(),
                b: b.clone(),
                stride,
                pad,
                col,
            },
        ))
    }

    /// max(x, 0). The subgradient at exactly zero is taken as zero.
    pub fn relu(&self) -> Result<Tensor<T>, TensorError> {
        let data = self
            .data()
            .iter()
            .map(|a| if *a > T::zero() { *a } else { T::zero() })
            .collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Relu(self.clone())))
    }

    /// Concatenates tensors that agree on every dimension except `axis`.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>, TensorError> {
        const OP: &str = "concat";
        let first = parts.first().ok_or_else(|| TensorError::Invalid {
            op: OP,
            message: "need at least one tensor".into(),
        })?;
        check_axis(OP, first.shape(), axis)?;
        let mut out_shape = first.shape().to_vec();
        for p in &parts[1..] {
            if p.shape().len() != out_shape.len()
                || p.shape()
                    .iter()
                    .enumerate()
                    .any(|(i, d)| i != axis && *d != out_shape[i])
            {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            out_shape[axis] += p.shape()[axis];
        }
        let (outer, total_axis, inner) = split_axis(&out_shape, axis);
        let mut data = vec![T::zero(); numel(&out_shape)];
        let mut offset = 0usize;
        for p in parts {
            let part_axis = p.shape()[axis];
            for o in 0..outer {
                let dst = (o * total_axis + offset) * inner;
                let src = o * part_axis * inner;
                data[dst..dst + part_axis * inner].copy_from_slice(&p.data()[src..src + part_axis * inner]);
            }
            offset += part_axis;
        }
        Ok(Tensor::from_op(
            out_shape,
            data,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Sum over one axis, or over everything (`None`) to a scalar.
    pub fn sum(&self, axis: Option<usize>) -> Result<Tensor<T>, TensorError> {
        match axis {
            None => {
                let mut acc = T::zero();
                for v in self.data() {
                    acc += *v;
                }
                Ok(Tensor::from_op(
                    vec![],
                    vec![acc],
                    Op::Sum {
                        x: self.clone(),
                        axis: None,
                    },
                ))
            }
            Some(a) => {
                check_axis("sum", self.shape(), a)?;
                let (outer, axis_len, inner) = split_axis(self.shape(), a);
                let mut out_shape = self.shape().to_vec();
                out_shape.remove(a);
                let mut data = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for ax in 0..axis_len {
                        let base = (o * axis_len + ax) * inner;
                        for i in 0..inner {
                            data[o * inner + i] += self.data()[base + i];
                        }
                    }
                }
                Ok(Tensor::from_op(
                    out_shape,
                    data,
                    Op::Sum {
                        x: self.clone(),
                        axis: Some(a),
                    },
                ))
            }
        }
    }

    /// Arithmetic mean over one axis, or over everything (`None`).
    pub fn mean(&self, axis: Option<usize>) -> Result<Tensor<T>, TensorError> {
        let denom = match axis {
            None => self.len(),
            Some(a) => {
                check_axis("mean", self.shape(), a)?;
                self.shape()[a]
            }
        };
        if denom == 0 {
            return Err(TensorError::Invalid {
                op: "mean",
                message: "mean over an empty axis".into(),
            });
        }
        let summed = self.sum(axis)?;
        let inv = T::one() / T::from_f64(denom as f64);
        let data = summed.data().iter().map(|v| *v * inv).collect();
        Ok(Tensor::from_op(
            summed.shape().to_vec(),
            data,
            Op::Mean {
                x: self.clone(),
                axis,
            },
        ))
    }

    /// Scalar sum of squared entries.
    pub fn squared_l2_norm(&self) -> Result<Tensor<T>, TensorError> {
        let mut acc = T::zero();
        for v in self.data() {
            acc += *v * *v;
        }
        Ok(Tensor::from_op(vec![], vec![acc], Op::SquaredL2Norm(self.clone())))
    }

    /// Scales each row (last axis) to unit Euclidean length, with a small
    /// epsilon under the square root so zero rows stay finite.
    pub fn l2_normalize(&self) -> Result<Tensor<T>, TensorError> {
        let row_len = *self.shape().last().ok_or_else(|| TensorError::Invalid {
            op: "l2_normalize",
            message: "rank-0 tensor has no axis to normalize".into(),
        })?;
        if row_len == 0 {
            return Err(TensorError::Invalid {
                op: "l2_normalize",
                message: "last axis is empty".into(),
            });
        }
        let rows = self.len() / row_len;
        let eps = T::from_f64(NORM_EPS);
        let mut data = vec![T::zero(); self.len()];
        let mut inv_norms = vec![T::zero(); rows];
        for r in 0..rows {
            let xr = &self.data()[r * row_len..(r + 1) * row_len];
            let mut sq = T::zero();
            for v in xr {
                sq += *v * *v;
            }
            let inv = T::one() / (sq + eps).sqrt();
            inv_norms[r] = inv;
            for (d, v) in data[r * row_len..(r + 1) * row_len].iter_mut().zip(xr) {
                *d = *v * inv;
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::L2Normalize {
                x: self.clone(),
                inv_norms,
            },
        ))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>, TensorError> {
        check_axis("softmax", self.shape(), axis)?;
        let (outer, axis_len, inner) = split_axis(self.shape(), axis);
        let mut data = vec![T::zero(); self.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                let mut max = T::neg_infinity();
                for a in 0..axis_len {
                    let v = self.data()[base + a * inner];
                    if v > max {
                        max = v;
                    }
                }
                let mut denom = T::zero();
                for a in 0..axis_len {
                    let e = (self.data()[base + a * inner] - max).exp();
                    data[base + a * inner] = e;
                    denom += e;
                }
                let inv = T::one() / denom;
                for a in 0..axis_len {
                    data[base + a * inner] *= inv;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Softmax {
                x: self.clone(),
                axis,
            },
        ))
    }

    /// Numerically stable log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<T>, TensorError> {
        check_axis("log_softmax", self.shape(), axis)?;
        let (outer, axis_len, inner) = split_axis(self.shape(), axis);
        let mut data = vec![T::zero(); self.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                let mut max = T::neg_infinity();
                for a in 0..axis_len {
                    let v = self.data()[base + a * inner];
                    if v > max {
                        max = v;
                    }
                }
                let mut denom = T::zero();
                for a in 0..axis_len {
                    denom += (self.data()[base + a * inner] - max).exp();
                }
                let log_denom = max + denom.ln();
                for a in 0..axis_len {
                    data[base + a * inner] = self.data()[base + a * inner] - log_denom;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::LogSoftmax {
                x: self.clone(),
                axis,
            },
        ))
    }

    /// Reinterprets the data with a new shape of the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>, TensorError> {
        let expected = numel(shape);
        if expected != self.len() {
            return Err(TensorError::DataLength {
                op: "reshape",
                shape: shape.to_vec(),
                expected,
                got: self.len(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            Op::Reshape(self.clone()),
        ))
    }
}
