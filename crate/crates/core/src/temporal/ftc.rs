//! Second-order IIR membrane filtering in place of the first-order LIF
//! leak.
//!
//! The filter is `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`
//! run in direct form II transposed with two state registers per neuron.
//! The learnable denominator is parametrized through a conjugate pole pair
//! at radius `r = sigmoid(r_raw) < 1` and angle `+-theta`, which gives
//! `a1 = -2 r cos(theta)`, `a2 = r^2` and BIBO stability by construction.
//!
//! Spike reset: after a spike, the membrane that feeds back through the
//! recursion is the post-reset value `y - v_th`, so the first-order
//! degenerate filter reproduces LIF's subtract reset exactly.

use crate::neuron::NeuronError;
use crate::tensor::{conv2d, ConvSpec, Tensor};

use super::{ConvCallCounter, SpikeTrain, TemporalError};

/// Learnable biquad with stability by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiquadFilter {
    pub b0: f32,
    pub b1: f32,
    pub b2: f32,
    denom: Denominator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Denominator {
    /// Conjugate pole pair at radius `sigmoid(r_raw)` and angle `theta`.
    Poles { r_raw: f32, theta: f32 },
    /// Real poles `{beta, 0}`: the first-order LIF leak.
    FirstOrder { beta: f32 },
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl BiquadFilter {
    /// Filter from pole parameters; `theta` must lie in `[0, pi]`.
    pub fn from_pole_params(
        b0: f32,
        b1: f32,
        b2: f32,
        r_raw: f32,
        theta: f32,
    ) -> Result<Self, NeuronError> {
        if !(0.0..=std::f32::consts::PI).contains(&theta) {
            return Err(NeuronError::InvalidParam(format!(
                "theta must be in [0, pi], got {theta}"
            )));
        }
        Ok(BiquadFilter {
            b0,
            b1,
            b2,
            denom: Denominator::Poles { r_raw, theta },
        })
    }

    /// The degenerate case `H(z) = 1 / (1 - beta z^-1)`: identical to the
    /// LIF membrane leak.
    pub fn first_order(beta: f32) -> Result<Self, NeuronError> {
        if !(0.0 < beta && beta < 1.0) {
            return Err(NeuronError::InvalidParam(format!(
                "first-order beta must be in (0,1), got {beta}"
            )));
        }
        Ok(BiquadFilter {
            b0: 1.0,
            b1: 0.0,
            b2: 0.0,
            denom: Denominator::FirstOrder { beta },
        })
    }

    pub fn pole_radius(&self) -> f32 {
        match self.denom {
            Denominator::Poles { r_raw, .. } => sigmoid(r_raw),
            Denominator::FirstOrder { beta } => beta,
        }
    }

    pub fn a1(&self) -> f32 {
        match self.denom {
            Denominator::Poles { r_raw, theta } => -2.0 * sigmoid(r_raw) * theta.cos(),
            Denominator::FirstOrder { beta } => -beta,
        }
    }

    pub fn a2(&self) -> f32 {
        match self.denom {
            Denominator::Poles { r_raw, .. } => {
                let r = sigmoid(r_raw);
                r * r
            }
            Denominator::FirstOrder { .. } => 0.0,
        }
    }

    /// Pole parameters `(r_raw, theta)` when pole-parametrized.
    pub fn pole_params(&self) -> Option<(f32, f32)> {
        match self.denom {
            Denominator::Poles { r_raw, theta } => Some((r_raw, theta)),
            Denominator::FirstOrder { .. } => None,
        }
    }

    /// First `n` samples of the impulse response via direct recursion
    /// (no spiking); the oracle for the stability checks.
    pub fn impulse_response(&self, n: usize) -> Vec<f32> {
        let (a1, a2) = (self.a1(), self.a2());
        let mut out = Vec::with_capacity(n);
        let (mut s1, mut s2) = (0.0f32, 0.0f32);
        for i in 0..n {
            let x = if i == 0 { 1.0 } else { 0.0 };
            let y = self.b0 * x + s1;
            s1 = self.b1 * x - a1 * y + s2;
            s2 = self.b2 * x - a2 * y;
            out.push(y);
        }
        out
    }
}

/// Per-element filter registers.
#[derive(Debug, Clone)]
pub(crate) struct BiquadState {
    s1: Vec<f32>,
    s2: Vec<f32>,
}

impl BiquadState {
    pub(crate) fn zeros(len: usize) -> Self {
        BiquadState {
            s1: vec![0.0; len],
            s2: vec![0.0; len],
        }
    }

    /// One filtered LIF step: filter the drive, threshold, and feed the
    /// post-reset membrane back through the recursion.
    pub(crate) fn step(&mut self, drive: &[f32], filter: &BiquadFilter, v_th: f32, spikes: &mut [f32]) {
        let (a1, a2) = (filter.a1(), filter.a2());
        for i in 0..drive.len() {
            let x = drive[i];
            let y = filter.b0 * x + self.s1[i];
            let s = if y - v_th >= 0.0 { 1.0 } else { 0.0 };
            let y_eff = y - s * v_th;
            self.s1[i] = filter.b1 * x - a1 * y_eff + self.s2[i];
            self.s2[i] = filter.b2 * x - a2 * y_eff;
            spikes[i] = s;
        }
    }

    /// Membrane values the next step would see before thresholding.
    #[cfg(test)]
    pub(crate) fn peek_membrane(&self, drive: &[f32], filter: &BiquadFilter) -> Vec<f32> {
        drive
            .iter()
            .zip(self.s1.iter())
            .map(|(&x, &s1)| filter.b0 * x + s1)
            .collect()
    }
}

/// Per-step convolution followed by biquad membrane filtering and spiking.
///
/// Makes T convolution calls: the filter changes the membrane dynamics,
/// not the call count.
pub fn ftc_forward(
    input: &SpikeTrain,
    weights: &Tensor,
    spec: &ConvSpec,
    filter: &BiquadFilter,
    v_th: f32,
    counter: &mut ConvCallCounter,
) -> Result<SpikeTrain, TemporalError> {
    let t = input.steps();
    let mut out_frames = Vec::with_capacity(t);
    let mut state: Option<BiquadState> = None;
    for step in 0..t {
        let frame = input.frame(step);
        let y = conv2d(&frame, weights, None, spec)?;
        counter.bump();
        let st = state.get_or_insert_with(|| BiquadState::zeros(y.len()));
        let mut spikes = Tensor::zeros(y.shape());
        st.step(y.data(), filter, v_th, spikes.data_mut());
        out_frames.push(spikes);
    }
    SpikeTrain::from_frames(&out_frames, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::{lif_step, LifParams, LifState, ResetMode, SurrogateSpec};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn random_pole_params_stay_inside_unit_circle() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..200 {
            let f = BiquadFilter::from_pole_params(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.0..std::f32::consts::PI),
            )
            .unwrap();
            assert!(f.pole_radius() < 1.0);
        }
    }

    #[test]
    fn impulse_response_decays_geometrically() {
        // r = 0.5: |h[n]| <= 10 * 0.5^n for n >= 5.
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..50 {
            let f = BiquadFilter::from_pole_params(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                0.0, // sigmoid(0) = 0.5
                rng.random_range(0.3..2.8),
            )
            .unwrap();
            let h = f.impulse_response(64);
            for (n, &v) in h.iter().enumerate().skip(5) {
                assert!(
                    v.abs() <= 10.0 * 0.5f32.powi(n as i32),
                    "h[{n}] = {v} for {f:?}"
                );
            }
        }
    }

    #[test]
    fn impulse_tail_vanishes_for_radius_up_to_09() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            // sigmoid(2.1972246) ~= 0.9; draw below that cap.
            let f = BiquadFilter::from_pole_params(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-5.0..2.19),
                rng.random_range(0.0..std::f32::consts::PI),
            )
            .unwrap();
            assert!(f.pole_radius() <= 0.9 + 1e-4);
            let h = f.impulse_response(201);
            assert!(h[200].abs() < 1e-6, "tail {} for {f:?}", h[200]);
        }
    }

    #[test]
    fn first_order_filter_matches_lif_membrane() {
        // Pre-spike membranes of the degenerate filter and of plain LIF
        // agree to float precision, spikes included.
        let beta = 0.9f32;
        let filter = BiquadFilter::first_order(beta).unwrap();
        let params =
            LifParams::new(beta, 1.0, SurrogateSpec::fast_sigmoid(25.0), ResetMode::Subtract).unwrap();
        let mut rng = StdRng::seed_from_u64(4);
        let n = 32;
        let mut lif_state = LifState::zeros(&[n]);
        let mut bq = BiquadState::zeros(n);
        for _ in 0..40 {
            let drive: Vec<f32> = (0..n).map(|_| rng.random_range(-0.3..0.8)).collect();
            let drive_t = Tensor::from_vec(&[n], drive.clone()).unwrap();

            let membrane = bq.peek_membrane(&drive, &filter);
            let (lif_spikes, next) = lif_step(&lif_state, &drive_t, &params, 1).unwrap();
            // lif pre-spike membrane = post-reset v + spike * v_th
            for i in 0..n {
                let lif_pre = next.v.data()[i] + lif_spikes.data()[i] * params.v_th;
                assert!(
                    (membrane[i] - lif_pre).abs() <= 1e-6,
                    "{} vs {}",
                    membrane[i],
                    lif_pre
                );
            }
            let mut spikes = vec![0.0; n];
            bq.step(&drive, &filter, params.v_th, &mut spikes);
            assert_eq!(spikes, lif_spikes.data());
            lif_state = next;
        }
    }

    #[test]
    fn ftc_makes_one_call_per_step() {
        let mut rng = StdRng::seed_from_u64(5);
        let spec = ConvSpec::new(1, 2, 3);
        let data: Vec<f32> = (0..8 * 25).map(|_| if rng.random::<f32>() < 0.2 { 1.0 } else { 0.0 }).collect();
        let train = SpikeTrain::new(Tensor::from_vec(&[8, 1, 1, 5, 5], data).unwrap(), true).unwrap();
        let w = Tensor::from_vec(
            &spec.weight_shape(),
            (0..18).map(|_| rng.random_range(-0.5..0.5)).collect(),
        )
        .unwrap();
        let f = BiquadFilter::from_pole_params(1.0, 0.2, -0.1, 1.0, 1.1).unwrap();
        let mut counter = ConvCallCounter::new();
        let out = ftc_forward(&train, &w, &spec, &f, 1.0, &mut counter).unwrap();
        assert_eq!(counter.count(), 8);
        assert_eq!(out.steps(), 8);
    }
}
