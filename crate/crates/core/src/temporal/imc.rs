//! Information-theoretic channel gating.
//!
//! Each channel is modeled as a binary symmetric channel with capacity
//! `1 - H_b(rho)` bits per symbol at firing rate `rho`. Channels are
//! sorted by capacity and gated from the bottom while the kept channels
//! still carry at least the requested information budget.

use crate::tensor::Tensor;

use super::{SpikeTrain, TemporalError};

/// Binary entropy `H_b(rho)` in bits; 0 at the endpoints.
pub fn binary_entropy(rho: f64) -> f64 {
    if rho <= 0.0 || rho >= 1.0 {
        return 0.0;
    }
    -rho * rho.log2() - (1.0 - rho) * (1.0 - rho).log2()
}

/// Binary symmetric channel capacity `1 - H_b(rho)` in bits.
pub fn bsc_capacity(rho: f64) -> f64 {
    1.0 - binary_entropy(rho)
}

/// Capacity-ranked gate over channels.
#[derive(Debug, Clone)]
pub struct ChannelGateSpec {
    /// Information budget the kept channels must carry, in bits.
    pub info_target_bits: f64,
    /// Per-channel firing rate in [0, 1].
    pub measured_rates: Vec<f32>,
    /// `true` marks a kept channel.
    pub gate_mask: Vec<bool>,
}

impl ChannelGateSpec {
    /// Build the gate from measured rates.
    ///
    /// Channels are ranked by capacity (ties broken by index) and kept
    /// greedily until their summed capacity covers the budget; if the
    /// total capacity is below the budget every channel is kept. An
    /// all-zero-capacity channel set cannot carry information and is an
    /// error.
    pub fn from_rates(measured_rates: Vec<f32>, info_target_bits: f64) -> Result<Self, TemporalError> {
        let capacities: Vec<f64> = measured_rates.iter().map(|&r| bsc_capacity(r as f64)).collect();
        let total: f64 = capacities.iter().sum();
        if total <= 0.0 {
            return Err(TemporalError::AllChannelsGated);
        }
        let mut order: Vec<usize> = (0..capacities.len()).collect();
        order.sort_by(|&a, &b| capacities[b].partial_cmp(&capacities[a]).unwrap().then(a.cmp(&b)));

        let mut gate_mask = vec![false; capacities.len()];
        let mut kept = 0.0f64;
        for &c in &order {
            if kept >= info_target_bits && kept > 0.0 {
                break;
            }
            gate_mask[c] = true;
            kept += capacities[c];
        }
        Ok(ChannelGateSpec {
            info_target_bits,
            measured_rates,
            gate_mask,
        })
    }

    /// Measure per-channel firing rates of a binary train and build the
    /// gate from them.
    pub fn from_train(train: &SpikeTrain, info_target_bits: f64) -> Result<Self, TemporalError> {
        if !train.is_binary() {
            return Err(TemporalError::BinaryRequired("imc gating"));
        }
        let [b, c, h, w] = train.frame_shape();
        let t = train.steps();
        let mut counts = vec![0u64; c];
        let plane = h * w;
        for step in 0..t {
            let frame = train.frame_data(step);
            for bi in 0..b {
                for ci in 0..c {
                    let start = (bi * c + ci) * plane;
                    counts[ci] += frame[start..start + plane]
                        .iter()
                        .filter(|&&v| v != 0.0)
                        .count() as u64;
                }
            }
        }
        let denom = (t * b * plane) as f32;
        let rates = counts.iter().map(|&n| n as f32 / denom).collect();
        Self::from_rates(rates, info_target_bits)
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.measured_rates.iter().map(|&r| bsc_capacity(r as f64)).collect()
    }

    pub fn kept_channels(&self) -> usize {
        self.gate_mask.iter().filter(|&&m| m).count()
    }
}

/// Zero out gated channels across the whole train.
pub fn imc_gate(train: &SpikeTrain, spec: &ChannelGateSpec) -> Result<SpikeTrain, TemporalError> {
    let [b, c, h, w] = train.frame_shape();
    if spec.gate_mask.len() != c {
        return Err(TemporalError::Tensor(crate::tensor::TensorError::DimMismatch {
            context: "imc_gate",
            dim: "channels",
            expected: spec.gate_mask.len(),
            actual: c,
        }));
    }
    if spec.kept_channels() == 0 {
        return Err(TemporalError::AllChannelsGated);
    }
    let t = train.steps();
    let plane = h * w;
    let mut data = train.tensor().data().to_vec();
    for step in 0..t {
        for bi in 0..b {
            for ci in 0..c {
                if spec.gate_mask[ci] {
                    continue;
                }
                let start = (step * b * c + bi * c + ci) * plane;
                data[start..start + plane].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    SpikeTrain::new(
        Tensor::from_vec(train.tensor().shape(), data)?,
        train.is_binary(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_endpoints_are_zero() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert!((binary_entropy(0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn capacities_match_scalar_oracle() {
        // Independent evaluation: H_b via direct formula in f64.
        let h = |p: f64| -p * p.log2() - (1.0 - p) * (1.0 - p).log2();
        assert!((bsc_capacity(0.1) - (1.0 - h(0.1))).abs() < 1e-12);
        assert!((bsc_capacity(0.1) - 0.531).abs() < 1e-3);
        assert!((bsc_capacity(0.3) - 0.119).abs() < 1e-3);
        assert!(bsc_capacity(0.5).abs() < 1e-12);
    }

    #[test]
    fn extreme_rates_are_never_gated() {
        let spec = ChannelGateSpec::from_rates(vec![0.0, 0.5, 1.0], 2.0).unwrap();
        assert!(spec.gate_mask[0]);
        assert!(spec.gate_mask[2]);
        assert!(!spec.gate_mask[1], "rate 0.5 carries no information");
    }

    #[test]
    fn half_rate_channels_are_gated_first() {
        let spec = ChannelGateSpec::from_rates(vec![0.5, 0.1, 0.4], 0.5).unwrap();
        // capacity(0.1) = 0.531 covers the budget on its own.
        assert_eq!(spec.gate_mask, vec![false, true, false]);
    }

    #[test]
    fn kept_count_satisfies_width_inequality() {
        let rates = vec![0.1f32, 0.2, 0.3, 0.45, 0.5];
        let target = 0.8;
        let spec = ChannelGateSpec::from_rates(rates.clone(), target).unwrap();
        let max_cap = rates.iter().map(|&r| bsc_capacity(r as f64)).fold(0.0, f64::max);
        let min_width = (target / max_cap).ceil() as usize;
        assert!(spec.kept_channels() >= min_width);
        let kept_cap: f64 = spec
            .capacities()
            .iter()
            .zip(&spec.gate_mask)
            .filter(|(_, &m)| m)
            .map(|(c, _)| c)
            .sum();
        assert!(kept_cap >= target);
    }

    #[test]
    fn insufficient_total_capacity_keeps_everything() {
        // Total capacity ~0.935 bits cannot meet 2 bits: nothing is gated.
        let spec = ChannelGateSpec::from_rates(vec![0.1, 0.2, 0.3, 0.45, 0.5], 2.0).unwrap();
        assert_eq!(spec.kept_channels(), 5);
    }

    #[test]
    fn all_half_rate_is_an_error() {
        assert!(matches!(
            ChannelGateSpec::from_rates(vec![0.5, 0.5], 1.0),
            Err(TemporalError::AllChannelsGated)
        ));
    }

    #[test]
    fn gating_zeroes_only_gated_channels() {
        // Channel 0 always on (rate 1.0), channel 1 coin-flip rate.
        let t = 4;
        let mut data = vec![0.0f32; t * 2 * 4];
        for step in 0..t {
            for i in 0..4 {
                data[step * 8 + i] = 1.0;
                data[step * 8 + 4 + i] = if (step + i) % 2 == 0 { 1.0 } else { 0.0 };
            }
        }
        let train = SpikeTrain::new(Tensor::from_vec(&[t, 1, 2, 2, 2], data).unwrap(), true).unwrap();
        let spec = ChannelGateSpec::from_train(&train, 0.9).unwrap();
        assert_eq!(spec.gate_mask, vec![true, false]);
        let gated = imc_gate(&train, &spec).unwrap();
        for step in 0..t {
            let frame = gated.frame_data(step);
            assert!(frame[..4].iter().all(|&v| v == 1.0));
            assert!(frame[4..].iter().all(|&v| v == 0.0));
        }
    }
}
