//! 2-D convolution lowered to im2col + GEMM.
//!
//! The per-sample column matrix has one row per (channel, ky, kx) kernel
//! tap and one column per output position; the convolution is then a
//! `[C_out, C_in*k*k] x [C_in*k*k, H'*W']` matrix product. A direct
//! nested-loop reference lives in the test suite only.

use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};
use crate::exec::{self, Exec};

/// Square-kernel convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            stride: 1,
            padding: 0,
        }
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    /// Output spatial extent `floor((n + 2p - k)/s) + 1`; errors when < 1.
    pub fn out_extent(&self, input: usize) -> Result<usize, TensorError> {
        let padded = input as isize + 2 * self.padding as isize - self.kernel_size as isize;
        if padded < 0 || self.stride == 0 {
            return Err(TensorError::EmptyOutput {
                input,
                kernel: self.kernel_size,
                stride: self.stride,
                padding: self.padding,
                computed: if self.stride == 0 { -1 } else { padded / self.stride as isize + 1 },
            });
        }
        Ok(padded as usize / self.stride + 1)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.kernel_size,
        ]
    }

    fn validate(&self, input: &Tensor, weights: &Tensor, bias: Option<&Tensor>) -> Result<(), TensorError> {
        let (_, c, _, _) = input.dims4("conv2d input")?;
        if c != self.in_channels {
            return Err(TensorError::DimMismatch {
                context: "conv2d input",
                dim: "channels",
                expected: self.in_channels,
                actual: c,
            });
        }
        if weights.shape() != self.weight_shape() {
            return Err(TensorError::Invalid(format!(
                "conv2d weights: expected shape {:?}, got {:?}",
                self.weight_shape(),
                weights.shape()
            )));
        }
        if let Some(b) = bias {
            if b.len() != self.out_channels {
                return Err(TensorError::DimMismatch {
                    context: "conv2d bias",
                    dim: "out_channels",
                    expected: self.out_channels,
                    actual: b.len(),
                });
            }
        }
        Ok(())
    }
}

pub(crate) struct Im2ColShape {
    pub rows: usize,
    pub cols: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Im2ColShape {
    pub(crate) fn of(spec: &ConvSpec, in_h: usize, in_w: usize) -> Result<Self, TensorError> {
        let out_h = spec.out_extent(in_h)?;
        let out_w = spec.out_extent(in_w)?;
        Ok(Im2ColShape {
            rows: spec.in_channels * spec.kernel_size * spec.kernel_size,
            cols: out_h * out_w,
            out_h,
            out_w,
        })
    }
}

/// Unroll one `[C, H, W]` sample into the `[C*k*k, H'*W']` column matrix.
pub(crate) fn im2col(
    sample: &[f32],
    spec: &ConvSpec,
    in_h: usize,
    in_w: usize,
    shape: &Im2ColShape,
    col: &mut [f32],
) {
    debug_assert_eq!(col.len(), shape.rows * shape.cols);
    let k = spec.kernel_size;
    let (stride, pad) = (spec.stride, spec.padding);
    for c in 0..spec.in_channels {
        let plane = &sample[c * in_h * in_w..(c + 1) * in_h * in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * shape.cols..(row + 1) * shape.cols];
                for oy in 0..shape.out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst_row = &mut dst[oy * shape.out_w..(oy + 1) * shape.out_w];
                    if iy < 0 || iy >= in_h as isize {
                        dst_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * in_w..(iy as usize + 1) * in_w];
                    for (ox, v) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *v = if ix < 0 || ix >= in_w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// `out[m][n] += sum_k a[m][k] * b[k][n]`, all row-major.
fn gemm_accum(out: &mut [f32], a: &[f32], b: &[f32], m: usize, k_dim: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k_dim..(i + 1) * k_dim];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// Cross-correlation with zero padding, batched over the leading dimension.
///
/// `input` is `[B, C_in, H, W]`, `weights` `[C_out, C_in, k, k]`, output
/// `[B, C_out, H', W']`. Deterministic for fixed inputs regardless of the
/// execution strategy.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor, TensorError> {
    conv2d_with(Exec::default(), input, weights, bias, spec)
}

/// [`conv2d`] with an explicit execution strategy (benchmarked paths).
pub fn conv2d_with(
    exec: Exec,
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor, TensorError> {
    spec.validate(input, weights, bias)?;
    input.check_finite("conv2d input")?;
    let (batch, _, in_h, in_w) = input.dims4("conv2d input")?;
    let shape = Im2ColShape::of(spec, in_h, in_w)?;
    let sample_in = spec.in_channels * in_h * in_w;
    let sample_out = spec.out_channels * shape.cols;

    let mut out = Tensor::zeros(&[batch, spec.out_channels, shape.out_h, shape.out_w]);
    let in_data = input.data();
    let w = weights.data();
    exec::for_each_chunk(exec, out.data_mut(), sample_out, |b, out_chunk| {
        let sample = &in_data[b * sample_in..(b + 1) * sample_in];
        let mut col = vec![0.0f32; shape.rows * shape.cols];
        im2col(sample, spec, in_h, in_w, &shape, &mut col);
        if let Some(bias) = bias {
            for (c, chunk) in out_chunk.chunks_mut(shape.cols).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bias.data()[c]);
            }
        }
        gemm_accum(out_chunk, w, &col, spec.out_channels, shape.rows, shape.cols);
    });
    Ok(out)
}

/// Gradients of [`conv2d`] w.r.t. input, weights, and bias.
///
/// `grad_out` is `[B, C_out, H', W']`. The weight gradient is reduced over
/// the batch in index order, so results do not depend on thread count.
pub(crate) fn conv2d_backward(
    exec: Exec,
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    grad_out: &[f32],
    want_bias: bool,
) -> Result<(Vec<f32>, Vec<f32>, Option<Vec<f32>>), TensorError> {
    let (batch, _, in_h, in_w) = input.dims4("conv2d backward")?;
    let shape = Im2ColShape::of(spec, in_h, in_w)?;
    let sample_in = spec.in_channels * in_h * in_w;
    let sample_out = spec.out_channels * shape.cols;
    debug_assert_eq!(grad_out.len(), batch * sample_out);

    let w = weights.data();
    let in_data = input.data();
    let w_len = w.len();

    // dx: disjoint per-sample writes; dW: per-sample partials folded in order.
    let mut grad_input = vec![0.0f32; input.len()];
    let partials: Vec<Vec<f32>> = {
        let grad_chunks: Vec<&mut [f32]> = grad_input.chunks_mut(sample_in).collect();
        let results = exec::map_indexed(exec, batch, |b| {
            let gout = &grad_out[b * sample_out..(b + 1) * sample_out];
            let sample = &in_data[b * sample_in..(b + 1) * sample_in];

            let mut col = vec![0.0f32; shape.rows * shape.cols];
            im2col(sample, spec, in_h, in_w, &shape, &mut col);

            // dW[m][kk] = sum_n gout[m][n] * col[kk][n]
            let mut dw = vec![0.0f32; w_len];
            for m in 0..spec.out_channels {
                let g_row = &gout[m * shape.cols..(m + 1) * shape.cols];
                let dw_row = &mut dw[m * shape.rows..(m + 1) * shape.rows];
                for (kk, dw_v) in dw_row.iter_mut().enumerate() {
                    let c_row = &col[kk * shape.cols..(kk + 1) * shape.cols];
                    *dw_v = g_row.iter().zip(c_row.iter()).map(|(&g, &c)| g * c).sum();
                }
            }

            // dcol[kk][n] = sum_m w[m][kk] * gout[m][n], then scatter back.
            let mut dcol = vec![0.0f32; shape.rows * shape.cols];
            for m in 0..spec.out_channels {
                let g_row = &gout[m * shape.cols..(m + 1) * shape.cols];
                let w_row = &w[m * shape.rows..(m + 1) * shape.rows];
                for (kk, &wv) in w_row.iter().enumerate() {
                    let d_row = &mut dcol[kk * shape.cols..(kk + 1) * shape.cols];
                    for (d, &g) in d_row.iter_mut().zip(g_row.iter()) {
                        *d += wv * g;
                    }
                }
            }
            let mut dx = vec![0.0f32; sample_in];
            col2im(&dcol, spec, in_h, in_w, &shape, &mut dx);
            (dx, dw)
        });
        let mut partials = Vec::with_capacity(batch);
        for (chunk, (dx, dw)) in grad_chunks.into_iter().zip(results) {
            chunk.copy_from_slice(&dx);
            partials.push(dw);
        }
        partials
    };

    let mut grad_weights = vec![0.0f32; w_len];
    for dw in &partials {
        for (g, d) in grad_weights.iter_mut().zip(dw.iter()) {
            *g += d;
        }
    }

    let grad_bias = want_bias.then(|| {
        let mut db = vec![0.0f32; spec.out_channels];
        for b in 0..batch {
            let gout = &grad_out[b * sample_out..(b + 1) * sample_out];
            for (c, db_v) in db.iter_mut().enumerate() {
                *db_v += gout[c * shape.cols..(c + 1) * shape.cols].iter().sum::<f32>();
            }
        }
        db
    });

    Ok((grad_input, grad_weights, grad_bias))
}

/// Scatter-add a column-matrix gradient back to the `[C, H, W]` sample.
fn col2im(
    dcol: &[f32],
    spec: &ConvSpec,
    in_h: usize,
    in_w: usize,
    shape: &Im2ColShape,
    dx: &mut [f32],
) {
    let k = spec.kernel_size;
    let (stride, pad) = (spec.stride, spec.padding);
    for c in 0..spec.in_channels {
        let plane = &mut dx[c * in_h * in_w..(c + 1) * in_h * in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &dcol[row * shape.cols..(row + 1) * shape.cols];
                for oy in 0..shape.out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= in_h as isize {
                        continue;
                    }
                    let src_row = &src[oy * shape.out_w..(oy + 1) * shape.out_w];
                    let dst_row = &mut plane[iy as usize * in_w..(iy as usize + 1) * in_w];
                    for (ox, &g) in src_row.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < in_w {
                            dst_row[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Max-abs deviation between `conv(sum_i c_i x_i)` and `sum_i c_i conv(x_i)`.
///
/// Zero up to rounding for any coefficients; this is the executable form of
/// the linearity identity the aggregation operators rely on.
pub fn linearity_check(
    weights: &Tensor,
    spec: &ConvSpec,
    inputs: &[Tensor],
    coeffs: &[f32],
) -> Result<f32, TensorError> {
    if inputs.is_empty() {
        return Err(TensorError::Invalid("linearity_check: empty input list".into()));
    }
    if inputs.len() != coeffs.len() {
        return Err(TensorError::Invalid(format!(
            "linearity_check: {} inputs vs {} coefficients",
            inputs.len(),
            coeffs.len()
        )));
    }
    let mut combined = Tensor::zeros(inputs[0].shape());
    for (x, &c) in inputs.iter().zip(coeffs.iter()) {
        combined.accumulate(c, x)?;
    }
    let lhs = conv2d(&combined, weights, None, spec)?;

    let mut rhs = Tensor::zeros(lhs.shape());
    for (x, &c) in inputs.iter().zip(coeffs.iter()) {
        let y = conv2d(x, weights, None, spec)?;
        rhs.accumulate(c, &y)?;
    }
    Ok(lhs.sub(&rhs)?.max_abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Direct six-nested-loop convolution; the oracle for the GEMM path.
    fn conv2d_reference(input: &Tensor, weights: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Tensor {
        let (batch, _, in_h, in_w) = input.dims4("ref").unwrap();
        let out_h = spec.out_extent(in_h).unwrap();
        let out_w = spec.out_extent(in_w).unwrap();
        let k = spec.kernel_size;
        let mut out = Tensor::zeros(&[batch, spec.out_channels, out_h, out_w]);
        let idx_in = |b: usize, c: usize, y: usize, x: usize| {
            ((b * spec.in_channels + c) * in_h + y) * in_w + x
        };
        let idx_w = |o: usize, c: usize, y: usize, x: usize| {
            ((o * spec.in_channels + c) * k + y) * k + x
        };
        let mut i = 0;
        for b in 0..batch {
            for o in 0..spec.out_channels {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut acc = bias.map_or(0.0, |bt| bt.data()[o]);
                        for c in 0..spec.in_channels {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                    let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                    if iy >= 0 && iy < in_h as isize && ix >= 0 && ix < in_w as isize {
                                        acc += input.data()[idx_in(b, c, iy as usize, ix as usize)]
                                            * weights.data()[idx_w(o, c, ky, kx)];
                                    }
                                }
                            }
                        }
                        out.data_mut()[i] = acc;
                        i += 1;
                    }
                }
            }
        }
        out
    }

    fn random_tensor(rng: &mut StdRng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn scalar_case() {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![-2.0]).unwrap();
        let spec = ConvSpec::new(1, 1, 1);
        let y = conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.data(), &[-6.0]);
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut rng = StdRng::seed_from_u64(7);
        let x = random_tensor(&mut rng, &[2, 1, 4, 4]);
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &w, None, &ConvSpec::new(1, 1, 1)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn matches_nested_loop_reference_with_padding() {
        let mut rng = StdRng::seed_from_u64(42);
        let spec = ConvSpec::new(2, 3, 3).with_padding(1);
        let x = random_tensor(&mut rng, &[2, 2, 5, 5]);
        let w = random_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = random_tensor(&mut rng, &[3]);
        let got = conv2d(&x, &w, Some(&b), &spec).unwrap();
        let want = conv2d_reference(&x, &w, Some(&b), &spec);
        for (g, e) in got.iter().zip(want.iter()) {
            assert!((g - e).abs() <= 1e-5 * e.abs().max(1.0), "{g} vs {e}");
        }
    }

    #[test]
    fn matches_reference_on_random_geometries() {
        let mut rng = StdRng::seed_from_u64(1);
        for trial in 0..200 {
            let spec = ConvSpec {
                in_channels: rng.random_range(1..4),
                out_channels: rng.random_range(1..4),
                kernel_size: rng.random_range(1..4),
                stride: rng.random_range(1..3),
                padding: rng.random_range(0..2),
            };
            let h = rng.random_range(spec.kernel_size..spec.kernel_size + 5);
            let w_ext = rng.random_range(spec.kernel_size..spec.kernel_size + 5);
            let batch = rng.random_range(1..3);
            let x = random_tensor(&mut rng, &[batch, spec.in_channels, h, w_ext]);
            let w = random_tensor(&mut rng, &spec.weight_shape());
            let got = conv2d(&x, &w, None, &spec).unwrap();
            let want = conv2d_reference(&x, &w, None, &spec);
            for (g, e) in got.iter().zip(want.iter()) {
                assert!(
                    (g - e).abs() <= 1e-5 * e.abs().max(1.0),
                    "trial {trial}: {g} vs {e}"
                );
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let mut rng = StdRng::seed_from_u64(9);
        let spec = ConvSpec::new(3, 4, 3).with_padding(1);
        let x = random_tensor(&mut rng, &[4, 3, 8, 8]);
        let w = random_tensor(&mut rng, &spec.weight_shape());
        let a = conv2d_with(Exec::Sequential, &x, &w, None, &spec).unwrap();
        let b = conv2d_with(Exec::Parallel, &x, &w, None, &spec).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        let err = conv2d(&x, &w, None, &ConvSpec::new(1, 1, 3)).unwrap_err();
        match err {
            TensorError::DimMismatch { dim, expected, actual, .. } => {
                assert_eq!(dim, "channels");
                assert_eq!((expected, actual), (1, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut x = Tensor::zeros(&[1, 1, 2, 2]);
        x.data_mut()[3] = f32::INFINITY;
        let w = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(matches!(
            conv2d(&x, &w, None, &ConvSpec::new(1, 1, 1)),
            Err(TensorError::NonFinite { .. })
        ));
    }

    #[test]
    fn empty_output_extent_is_an_error() {
        let spec = ConvSpec::new(1, 1, 5);
        assert!(spec.out_extent(3).is_err());
    }

    #[test]
    fn linearity_single_input_is_exact_zero() {
        let mut rng = StdRng::seed_from_u64(3);
        let spec = ConvSpec::new(1, 2, 3);
        let w = random_tensor(&mut rng, &spec.weight_shape());
        let x = random_tensor(&mut rng, &[1, 1, 5, 5]);
        let dev = linearity_check(&w, &spec, &[x], &[1.0]).unwrap();
        assert_eq!(dev, 0.0);
    }

    #[test]
    fn linearity_two_inputs_within_tolerance() {
        let mut rng = StdRng::seed_from_u64(4);
        let spec = ConvSpec::new(2, 2, 3).with_padding(1);
        let w = random_tensor(&mut rng, &spec.weight_shape());
        let xs = vec![
            random_tensor(&mut rng, &[1, 2, 6, 6]),
            random_tensor(&mut rng, &[1, 2, 6, 6]),
        ];
        let dev = linearity_check(&w, &spec, &xs, &[0.9, 1.0]).unwrap();
        assert!(dev <= 1e-5, "deviation {dev}");
    }

    #[test]
    fn linearity_decay_weighted_binary_frames() {
        let mut rng = StdRng::seed_from_u64(5);
        let spec = ConvSpec::new(1, 2, 3);
        let w = random_tensor(&mut rng, &spec.weight_shape());
        let beta: f32 = 0.9;
        let frames: Vec<Tensor> = (0..4)
            .map(|_| {
                let data = (0..25).map(|_| if rng.random::<f32>() < 0.3 { 1.0 } else { 0.0 }).collect();
                Tensor::from_vec(&[1, 1, 5, 5], data).unwrap()
            })
            .collect();
        let coeffs: Vec<f32> = (0..4).map(|j| beta.powi(3 - j)).collect();
        let dev = linearity_check(&w, &spec, &frames, &coeffs).unwrap();
        assert!(dev <= 1e-5, "deviation {dev}");
    }

    #[test]
    fn empty_input_list_is_an_error() {
        let w = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(linearity_check(&w, &ConvSpec::new(1, 1, 1), &[], &[]).is_err());
    }
}
