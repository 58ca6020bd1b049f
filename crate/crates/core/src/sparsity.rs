//! Sparsity feasibility statistics for SIMD hardware.
//!
//! Reference implementations and analytical models for the strategies that
//! try to exploit spike sparsity in convolutions: SIMD lane skipping,
//! temporal-delta convolution, index-gather convolution, and im2col
//! zero-row compression. Each estimator comes with a closed form and a
//! measurement that must agree with it; wall-clock comparisons are
//! reported but never asserted, because they are hardware-dependent.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use thiserror::Error;

use crate::exec::{self, Exec};
use crate::temporal::SpikeTrain;
use crate::tensor::{self, ConvSpec, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum SparsityError {
    #[error("delta density needs at least 2 timesteps, got {0}")]
    TooFewSteps(usize),
    #[error("firing rate must be in [0,1], got {0}")]
    BadRate(f32),
    #[error("Monte-Carlo sample count {0} below minimum {1}")]
    TooFewSamples(usize, usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// SIMD execution model: lane width and i.i.d. firing rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimdModel {
    pub lane_width: u32,
    pub firing_rate: f32,
}

impl SimdModel {
    pub fn new(lane_width: u32, firing_rate: f32) -> Result<Self, SparsityError> {
        if !(0.0..=1.0).contains(&firing_rate) {
            return Err(SparsityError::BadRate(firing_rate));
        }
        Ok(SimdModel {
            lane_width,
            firing_rate,
        })
    }
}

/// One row of the sparsity-lab report.
#[derive(Debug, Clone, Serialize)]
pub struct SparsityReport {
    pub method: String,
    pub measured: f64,
    pub analytical: f64,
    pub sample_count: usize,
    /// Measured within 3 binomial standard errors of the analytical value.
    pub agreement: bool,
}

impl SparsityReport {
    /// Build a row, deriving the agreement flag from binomial statistics
    /// of the analytical proportion over `n` samples.
    pub fn from_parts(method: &str, measured: f64, analytical: f64, n: usize) -> Self {
        let se = (analytical * (1.0 - analytical) / n as f64).sqrt();
        SparsityReport {
            method: method.to_string(),
            measured,
            analytical,
            sample_count: n,
            agreement: (measured - analytical).abs() <= 3.0 * se.max(f64::EPSILON),
        }
    }
}

/// Fraction of SIMD lanes whose elements are all zero: `(1 - rho)^W`.
pub fn skip_fraction(model: &SimdModel) -> f64 {
    (1.0 - model.firing_rate as f64).powi(model.lane_width as i32)
}

/// Throughput ceiling from lane skipping: `1 / (1 - f_skip)`.
pub fn max_skip_speedup(model: &SimdModel) -> f64 {
    1.0 / (1.0 - skip_fraction(model))
}

/// Monte-Carlo estimate of [`skip_fraction`]: sample `n_vectors` lanes of
/// `W` Bernoulli draws and count the all-zero ones.
///
/// Sampling is sharded with per-shard generators derived from the seed, so
/// the result is identical whichever execution strategy runs it.
pub fn skip_fraction_mc(
    model: &SimdModel,
    n_vectors: usize,
    seed: u64,
) -> Result<SparsityReport, SparsityError> {
    skip_fraction_mc_with(Exec::default(), model, n_vectors, seed)
}

/// [`skip_fraction_mc`] with an explicit execution strategy.
pub fn skip_fraction_mc_with(
    exec: Exec,
    model: &SimdModel,
    n_vectors: usize,
    seed: u64,
) -> Result<SparsityReport, SparsityError> {
    const MIN_SAMPLES: usize = 10_000;
    if n_vectors < MIN_SAMPLES {
        return Err(SparsityError::TooFewSamples(n_vectors, MIN_SAMPLES));
    }
    let shards = shard_count(n_vectors);
    let per_shard = n_vectors / shards;
    let remainder = n_vectors % shards;
    let rho = model.firing_rate;
    let width = model.lane_width;
    let counts = exec::map_indexed(exec, shards, |s| {
        let mut rng = StdRng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(s as u64 + 1)));
        let n = per_shard + usize::from(s < remainder);
        let mut skippable = 0u64;
        for _ in 0..n {
            let all_zero = (0..width).all(|_| rng.random::<f32>() >= rho);
            skippable += u64::from(all_zero);
        }
        skippable
    });
    let skippable: u64 = counts.iter().sum();
    Ok(SparsityReport::from_parts(
        "simd_skip_fraction",
        skippable as f64 / n_vectors as f64,
        skip_fraction(model),
        n_vectors,
    ))
}

/// Environment-tunable Monte-Carlo shard count (`TACSNN_THREADS`), with a
/// fixed default so results never depend on machine parallelism.
fn shard_count(n: usize) -> usize {
    let configured = std::env::var("TACSNN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(64);
    configured.min(n.max(1))
}

/// Fraction of nonzero entries in the temporal difference `S_t - S_{t-1}`
/// over `t >= 1`. For i.i.d. Bernoulli(rho) frames this tends to
/// `2 rho (1 - rho)`, denser than the original train at low rates.
pub fn delta_density(train: &SpikeTrain) -> Result<f64, SparsityError> {
    let t = train.steps();
    if t < 2 {
        return Err(SparsityError::TooFewSteps(t));
    }
    let n = train.frame_len();
    let mut nonzero = 0u64;
    for step in 1..t {
        let cur = train.frame_data(step);
        let prev = train.frame_data(step - 1);
        nonzero += cur
            .iter()
            .zip(prev.iter())
            .filter(|(&a, &b)| a != b)
            .count() as u64;
    }
    Ok(nonzero as f64 / ((t - 1) * n) as f64)
}

/// Outcome of the index-gather lowering: output plus operation counts.
#[derive(Debug, Clone, Serialize)]
pub struct GatherStats {
    /// Multiply-accumulates actually performed (nonzero inputs only).
    pub gathered_ops: u64,
    /// Multiply-accumulates a dense lowering performs.
    pub dense_ops: u64,
}

/// Sparse convolution via gathering nonzero input positions and scattering
/// their weighted contributions. Output-equivalent to [`crate::tensor::conv2d`]; the
/// point is the operation-count ratio, which never survives contact with
/// SIMD hardware.
pub fn gather_conv(
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
) -> Result<(Tensor, GatherStats), SparsityError> {
    let (batch, _, in_h, in_w) = input.dims4("gather_conv")?;
    let out_h = spec.out_extent(in_h)?;
    let out_w = spec.out_extent(in_w)?;
    let k = spec.kernel_size;
    let mut out = Tensor::zeros(&[batch, spec.out_channels, out_h, out_w]);
    let mut gathered = 0u64;

    for b in 0..batch {
        for c_in in 0..spec.in_channels {
            let plane = (b * spec.in_channels + c_in) * in_h * in_w;
            for y in 0..in_h {
                for x in 0..in_w {
                    let v = input.data()[plane + y * in_w + x];
                    if v == 0.0 {
                        continue;
                    }
                    // Scatter this input into every output it touches.
                    for ky in 0..k {
                        let oy_num = y as isize + spec.padding as isize - ky as isize;
                        if oy_num < 0 || oy_num % spec.stride as isize != 0 {
                            continue;
                        }
                        let oy = (oy_num / spec.stride as isize) as usize;
                        if oy >= out_h {
                            continue;
                        }
                        for kx in 0..k {
                            let ox_num = x as isize + spec.padding as isize - kx as isize;
                            if ox_num < 0 || ox_num % spec.stride as isize != 0 {
                                continue;
                            }
                            let ox = (ox_num / spec.stride as isize) as usize;
                            if ox >= out_w {
                                continue;
                            }
                            for c_out in 0..spec.out_channels {
                                let w = weights.data()
                                    [((c_out * spec.in_channels + c_in) * k + ky) * k + kx];
                                let o = ((b * spec.out_channels + c_out) * out_h + oy) * out_w + ox;
                                out.data_mut()[o] += v * w;
                                gathered += 1;
                            }
                        }
                    }
                }
            }
        }
    }

    let dense_ops = (batch * spec.out_channels * out_h * out_w) as u64
        * (spec.in_channels * k * k) as u64;
    Ok((
        out,
        GatherStats {
            gathered_ops: gathered,
            dense_ops,
        },
    ))
}

/// Probability an im2col row is all-zero: `(1 - rho)^(C_in * k^2)`.
pub fn row_compressibility(rho: f64, in_channels: usize, kernel_size: usize) -> f64 {
    (1.0 - rho).powi((in_channels * kernel_size * kernel_size) as i32)
}

/// Measure the all-zero-row fraction on the im2col matrix the convolution
/// actually builds (same unrolling routine as [`crate::tensor::conv2d`]).
pub fn row_compressibility_empirical(
    input: &Tensor,
    spec: &ConvSpec,
) -> Result<(f64, usize), SparsityError> {
    let (batch, _, in_h, in_w) = input.dims4("row_compressibility")?;
    let shape = tensor::Im2ColShape::of(spec, in_h, in_w)?;
    let sample_len = spec.in_channels * in_h * in_w;
    let mut col = vec![0.0f32; shape.rows * shape.cols];
    let mut zero_rows = 0usize;
    let mut total_rows = 0usize;
    for b in 0..batch {
        let sample = &input.data()[b * sample_len..(b + 1) * sample_len];
        tensor::im2col(sample, spec, in_h, in_w, &shape, &mut col);
        // A "row" here is one receptive-field patch: one GEMM column.
        for c in 0..shape.cols {
            let all_zero = (0..shape.rows).all(|r| col[r * shape.cols + c] == 0.0);
            zero_rows += usize::from(all_zero);
            total_rows += 1;
        }
    }
    Ok((zero_rows as f64 / total_rows as f64, total_rows))
}

/// Convenience: i.i.d. Bernoulli train for the lab's measurements.
pub fn bernoulli_train(
    t: usize,
    shape: [usize; 4],
    rho: f32,
    seed: u64,
) -> Result<SpikeTrain, SparsityError> {
    let mut rng = StdRng::seed_from_u64(seed);
    let n: usize = t * shape.iter().product::<usize>();
    let data: Vec<f32> = (0..n)
        .map(|_| if rng.random::<f32>() < rho { 1.0 } else { 0.0 })
        .collect();
    let full = [t, shape[0], shape[1], shape[2], shape[3]];
    SpikeTrain::new(Tensor::from_vec(&full, data)?, true)
        .map_err(|e| match e {
            crate::temporal::TemporalError::Tensor(t) => SparsityError::Tensor(t),
            other => panic!("unexpected train error: {other}"),
        })
}
