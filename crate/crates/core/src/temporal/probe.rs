//! Empirical probes: membrane error scaling of temporal collapse, and
//! variance reduction of group averaging.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::neuron::{lif_step, LifParams, LifState, ResetMode, SurrogateSpec};
use crate::tensor::{conv2d, ConvSpec, Tensor};

use super::{aggregate_slice, check_group, SpikeTrain, TemporalError};

/// Mean squared membrane deviation for one group size.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorProbeRow {
    pub k: usize,
    pub rho: f32,
    /// Mean over trials of `||V_T_exact - V_T_collapsed||^2` at the final step.
    pub final_mse: f64,
    /// Mean over all group boundaries and trials.
    pub boundary_mse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorScalingReport {
    pub beta: f32,
    pub n_trials: usize,
    pub weight_frobenius_sq: f64,
    pub rows: Vec<ErrorProbeRow>,
    /// Least-squares slope (through the origin) of final error vs K at the
    /// first requested rate.
    pub slope_vs_k: f64,
    /// Least-squares slope of final error vs `rho (1 - rho)` at the first
    /// requested group size.
    pub slope_vs_rate_var: f64,
}

impl ErrorScalingReport {
    pub fn row(&self, k: usize, rho: f32) -> Option<&ErrorProbeRow> {
        self.rows.iter().find(|r| r.k == k && r.rho == rho)
    }
}

/// Compare exact per-step membranes against the collapsed path on i.i.d.
/// Bernoulli trains with fixed random weights.
///
/// Both paths consume identical trains (paired trials); membranes are
/// compared at group boundaries, the only steps where both trajectories
/// are defined.
pub fn error_probe(
    t: usize,
    ks: &[usize],
    rhos: &[f32],
    beta: f32,
    spec: &ConvSpec,
    n_trials: usize,
    seed: u64,
) -> Result<ErrorScalingReport, TemporalError> {
    for &k in ks {
        check_group(k, t)?;
    }
    let params = LifParams::new(beta, 1.0, SurrogateSpec::fast_sigmoid(25.0), ResetMode::Subtract)
        .map_err(TemporalError::Neuron)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let w_shape = spec.weight_shape();
    let w_len: usize = w_shape.iter().product();
    let weights = Tensor::from_vec(
        &w_shape,
        (0..w_len).map(|_| rng.random_range(-0.5..0.5)).collect::<Vec<f32>>(),
    )
    .map_err(TemporalError::Tensor)?;
    let frob_sq: f64 = weights.iter().map(|&v| (v as f64) * (v as f64)).sum();

    let frame_shape = [1usize, spec.in_channels, 8, 8];
    let frame_len: usize = frame_shape.iter().product();

    let mut rows = Vec::new();
    for &rho in rhos {
        // One set of trains per rate, shared across every K (paired).
        let trains: Vec<SpikeTrain> = (0..n_trials)
            .map(|_| {
                let data: Vec<f32> = (0..t * frame_len)
                    .map(|_| if rng.random::<f32>() < rho { 1.0 } else { 0.0 })
                    .collect();
                let shape = [t, frame_shape[0], frame_shape[1], frame_shape[2], frame_shape[3]];
                SpikeTrain::new(Tensor::from_vec(&shape, data).unwrap(), true)
            })
            .collect::<Result<_, _>>()?;

        for &k in ks {
            let mut final_acc = 0.0f64;
            let mut boundary_acc = 0.0f64;
            let mut boundary_n = 0usize;
            for train in &trains {
                // Exact per-step membranes after each step.
                let mut exact_v = Vec::with_capacity(t);
                let mut state: Option<LifState> = None;
                for step in 0..t {
                    let y = conv2d(&train.frame(step), &weights, None, spec)?;
                    let st = state.unwrap_or_else(|| LifState::zeros(y.shape()));
                    let (_, next) = lif_step(&st, &y, &params, 1).map_err(TemporalError::Neuron)?;
                    exact_v.push(next.v.clone());
                    state = Some(next);
                }
                // Collapsed membranes after each group.
                let mut state: Option<LifState> = None;
                for g in 0..t / k {
                    let agg = aggregate_slice(train, g * k, k, beta);
                    let y = conv2d(&agg, &weights, None, spec)?;
                    let st = state.unwrap_or_else(|| LifState::zeros(y.shape()));
                    let (_, next) = lif_step(&st, &y, &params, k as u32).map_err(TemporalError::Neuron)?;
                    let boundary = (g + 1) * k - 1;
                    let sq = sq_norm_diff(&exact_v[boundary], &next.v);
                    boundary_acc += sq;
                    boundary_n += 1;
                    if boundary == t - 1 {
                        final_acc += sq;
                    }
                    state = Some(next);
                }
            }
            rows.push(ErrorProbeRow {
                k,
                rho,
                final_mse: final_acc / n_trials as f64,
                boundary_mse: boundary_acc / boundary_n as f64,
            });
        }
    }

    let slope_vs_k = {
        let rho0 = rhos[0];
        slope_through_origin(
            rows.iter()
                .filter(|r| r.rho == rho0)
                .map(|r| (r.k as f64, r.final_mse)),
        )
    };
    let slope_vs_rate_var = {
        let k0 = ks[0];
        slope_through_origin(
            rows.iter()
                .filter(|r| r.k == k0)
                .map(|r| ((r.rho as f64) * (1.0 - r.rho as f64), r.final_mse)),
        )
    };

    Ok(ErrorScalingReport {
        beta,
        n_trials,
        weight_frobenius_sq: frob_sq,
        rows,
        slope_vs_k,
        slope_vs_rate_var,
    })
}

fn sq_norm_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum()
}

fn slope_through_origin<I: Iterator<Item = (f64, f64)>>(points: I) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in points {
        num += x * y;
        den += x * x;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceRow {
    pub k: usize,
    pub empirical_var: f64,
    pub analytical_var: f64,
    /// Standard error of the empirical variance estimate.
    pub std_error: f64,
}

/// Empirical variance of the K-frame mean of i.i.d. Bernoulli(rho) draws,
/// against the analytic `rho (1 - rho) / K`.
pub fn variance_probe(rho: f32, ks: &[usize], n_samples: usize, seed: u64) -> Vec<VarianceRow> {
    let mut rng = StdRng::seed_from_u64(seed);
    ks.iter()
        .map(|&k| {
            let mut means = Vec::with_capacity(n_samples);
            for _ in 0..n_samples {
                let ones = (0..k).filter(|_| rng.random::<f32>() < rho).count();
                means.push(ones as f64 / k as f64);
            }
            let n = n_samples as f64;
            let mean: f64 = means.iter().sum::<f64>() / n;
            let m2: f64 = means.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / n;
            let m4: f64 = means.iter().map(|&x| (x - mean).powi(4)).sum::<f64>() / n;
            // Unbiased sample variance and the standard error of that
            // estimator via the fourth central moment.
            let var = m2 * n / (n - 1.0);
            let se = ((m4 - m2 * m2).max(0.0) / n).sqrt();
            VarianceRow {
                k,
                empirical_var: var,
                analytical_var: rho as f64 * (1.0 - rho as f64) / k as f64,
                std_error: se,
            }
        })
        .collect()
}
