//! Desk-scale surrogate-gradient training.

mod adam;
mod data;
mod model;

pub use adam::{Adam, Schedule};
pub use data::{digits_dataset, gesture_dataset, Dataset, Split};
pub use model::{build_model, Architecture, LossKind, Model, ModelConfig, StepGraph};

use std::time::Instant;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuron::NeuronError;
use crate::tensor::{BnMode, TensorError};
use crate::temporal::{ConvCallCounter, SpikeTrain, TemporalError};
use crate::encoding::EncodingError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at epoch {epoch}, batch {batch_index} (lr {lr})")]
    NanLoss {
        epoch: usize,
        batch_index: usize,
        lr: f32,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Neuron(#[from] NeuronError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Idx(#[from] crate::encoding::IdxError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub schedule: Schedule,
    pub loss: LossKind,
    pub seeds: Vec<u64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.learning_rate.is_finite()
            || self.learning_rate < 0.0
            || self.batch_size == 0
            || self.seeds.is_empty()
        {
            return Err(TrainError::Config(
                "finite learning_rate >= 0, batch_size >= 1, and at least one seed required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
    pub lr: f32,
    pub seconds: f64,
}

/// Everything one (seed, config) training run produced.
#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    pub best_acc: f64,
    pub final_acc: f64,
    /// Conv calls made by training forwards.
    pub conv_calls: u64,
    /// Analytic prediction: calls per forward times training forwards.
    pub predicted_conv_calls: u64,
    pub conv_calls_per_forward: u64,
    pub param_count: usize,
    /// Wall-clock around the training loop, data loading excluded.
    pub elapsed_seconds: f64,
    /// Mean epoch seconds with the first (warm-up) epoch excluded when
    /// more than one epoch ran.
    pub time_per_epoch_seconds: f64,
}

fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(tag)
}

/// Train one model from `seed` and report per-epoch metrics.
///
/// Deterministic: identical `(model_config, train_config, seed, data)`
/// reproduce every numeric field except wall-clock times.
pub fn train_one(
    model_config: &ModelConfig,
    dataset: &Dataset,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    let mut model = build_model(model_config, seed)?;
    train_model(&mut model, dataset, train_config, seed)
}

/// Train an already-built model in place; `seed` drives shuffling and
/// rate-coding draws.
pub fn train_model(
    model: &mut Model,
    dataset: &Dataset,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    train_config.validate()?;
    let model_config = &model.config.clone();
    let mut adam = Adam::new();
    let mut counter = ConvCallCounter::new();
    let mut epochs = Vec::with_capacity(train_config.epochs);
    let mut training_forwards = 0u64;

    let started = Instant::now();
    for epoch in 0..train_config.epochs {
        let epoch_started = Instant::now();
        let lr = train_config
            .schedule
            .lr_at(train_config.learning_rate, epoch, train_config.epochs);

        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        let mut shuffle_rng = StdRng::seed_from_u64(derive_seed(seed, 0xe90c + epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for (batch_index, chunk) in order.chunks(train_config.batch_size).enumerate() {
            let encode_seed = derive_seed(seed, ((epoch as u64) << 20) | batch_index as u64);
            let (input, labels) = dataset.train.batch(chunk, model_config.t, encode_seed)?;
            let graph = model.run_batch(&input, &labels, BnMode::Train, train_config.loss, &mut counter)?;
            training_forwards += 1;
            let loss = graph.tape.value(graph.loss).data()[0];
            if !loss.is_finite() {
                return Err(TrainError::NanLoss {
                    epoch,
                    batch_index,
                    lr,
                });
            }
            loss_sum += loss as f64;
            batches += 1;

            let grads = graph.tape.backward(graph.loss)?;
            let mut params = model.param_tensors_mut();
            for (p, &var) in params.iter_mut().zip(&graph.param_vars) {
                p.set_grad(grads.get_or_zeros(var, p.len()));
            }
            adam.step(&mut params, lr);
        }

        let test_acc = evaluate(model, &dataset.test, train_config, seed)?;
        epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            test_acc,
            lr,
            seconds: epoch_started.elapsed().as_secs_f64(),
        });
    }
    let elapsed_seconds = started.elapsed().as_secs_f64();

    let best_acc = epochs.iter().map(|e| e.test_acc).fold(0.0, f64::max);
    let final_acc = epochs.last().map_or(0.0, |e| e.test_acc);
    let per_forward = model.predicted_calls_per_forward();
    let time_per_epoch_seconds = if epochs.len() > 1 {
        epochs[1..].iter().map(|e| e.seconds).sum::<f64>() / (epochs.len() - 1) as f64
    } else {
        epochs.first().map_or(0.0, |e| e.seconds)
    };
    Ok(TrainOutcome {
        seed,
        best_acc,
        final_acc,
        conv_calls: counter.count(),
        predicted_conv_calls: per_forward * training_forwards,
        conv_calls_per_forward: per_forward,
        param_count: model.param_count(),
        elapsed_seconds,
        time_per_epoch_seconds,
        epochs,
    })
}

/// Run every seed in the config.
pub fn train_seeds(
    model_config: &ModelConfig,
    dataset: &Dataset,
    train_config: &TrainConfig,
) -> Result<Vec<TrainOutcome>, TrainError> {
    train_config
        .seeds
        .iter()
        .map(|&s| train_one(model_config, dataset, train_config, s))
        .collect()
}

/// Test-set accuracy under eval-mode batch norm.
pub fn evaluate(
    model: &mut Model,
    split: &Split,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<f64, TrainError> {
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..split.len()).collect();
    let mut scratch = ConvCallCounter::new();
    for (bi, chunk) in indices.chunks(train_config.batch_size).enumerate() {
        let encode_seed = derive_seed(seed, 0xea0 + bi as u64);
        let (input, labels) = split.batch(chunk, model.config.t, encode_seed)?;
        let graph = model.run_batch(&input, &labels, BnMode::Eval, train_config.loss, &mut scratch)?;
        let scores = graph.tape.value(graph.scores);
        let classes = scores.shape()[1];
        for (b, &label) in labels.iter().enumerate() {
            let row = &scores.data()[b * classes..(b + 1) * classes];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            correct += usize::from(pred == label);
        }
    }
    Ok(correct as f64 / split.len() as f64)
}

/// Firing-rate MSE against one-hot targets, the voting-head loss in pure
/// form: rate = mean over timesteps and voters, loss = mean squared error
/// over batch and classes.
pub fn mse_rate_loss(
    output_train: &SpikeTrain,
    labels: &[usize],
    classes: usize,
    voters: usize,
) -> Result<f64, TrainError> {
    let [b, c, h, w] = output_train.frame_shape();
    if c != classes * voters || h != 1 || w != 1 {
        return Err(TrainError::Config(format!(
            "output train frame [{b},{c},{h},{w}] does not match {classes} classes x {voters} voters"
        )));
    }
    if labels.len() != b {
        return Err(TrainError::Config(format!(
            "{} labels for batch of {b}",
            labels.len()
        )));
    }
    let t = output_train.steps();
    let mut rates = vec![0.0f64; b * classes];
    for step in 0..t {
        let frame = output_train.frame_data(step);
        for bi in 0..b {
            for class in 0..classes {
                for voter in 0..voters {
                    rates[bi * classes + class] += frame[bi * c + class * voters + voter] as f64;
                }
            }
        }
    }
    let norm = (t * voters) as f64;
    let mut loss = 0.0;
    for bi in 0..b {
        for class in 0..classes {
            let rate = rates[bi * classes + class] / norm;
            let target = if class == labels[bi] { 1.0 } else { 0.0 };
            loss += (rate - target) * (rate - target);
        }
    }
    Ok(loss / (b * classes) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::{LifParams, ResetMode, SurrogateSpec};
    use crate::temporal::TemporalOpConfig;
    use crate::tensor::Tensor;

    fn lif() -> LifParams {
        LifParams::new(0.9, 1.0, SurrogateSpec::fast_sigmoid(25.0), ResetMode::Subtract).unwrap()
    }

    fn tiny_config() -> ModelConfig {
        let mut cfg = ModelConfig::mnist_small(4, lif());
        cfg.widths = vec![4, 8];
        cfg.fc_hidden = vec![16];
        cfg
    }

    fn tiny_train_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            learning_rate: 1e-3,
            schedule: Schedule::Cosine,
            loss: LossKind::CeSpikeCount,
            seeds: vec![0],
        }
    }

    #[test]
    fn mse_rate_loss_trivial_cases() {
        // Perfect rates: spike every step on the target class only.
        let classes = 2;
        let voters = 2;
        let mut data = vec![0.0f32; 2 * 4];
        // Batch 0 targets class 0, batch 1 targets class 1.
        for (bi, class) in [(0usize, 0usize), (1, 1)] {
            for voter in 0..voters {
                data[bi * 4 + class * voters + voter] = 1.0;
            }
        }
        let frame = Tensor::from_vec(&[2, 4, 1, 1], data).unwrap();
        let train = SpikeTrain::from_frames(&[frame.clone(), frame], true).unwrap();
        let loss = mse_rate_loss(&train, &[0, 1], classes, voters).unwrap();
        assert_eq!(loss, 0.0);

        // All-zero output: loss = 1/classes.
        let silent = SpikeTrain::new(Tensor::zeros(&[2, 2, 4, 1, 1]), true).unwrap();
        let loss = mse_rate_loss(&silent, &[0, 1], classes, voters).unwrap();
        assert!((loss - 1.0 / classes as f64).abs() < 1e-12);
    }

    #[test]
    fn mse_rate_loss_matches_hand_toy() {
        // 2 classes, 1 voter, T=2, batch 1, label 0.
        // Spikes: class0 fires at t0 only (rate 0.5), class1 fires twice
        // (rate 1.0). Loss = ((0.5-1)^2 + (1-0)^2)/2 = 0.625.
        let f0 = Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 1.0]).unwrap();
        let f1 = Tensor::from_vec(&[1, 2, 1, 1], vec![0.0, 1.0]).unwrap();
        let train = SpikeTrain::from_frames(&[f0, f1], true).unwrap();
        let loss = mse_rate_loss(&train, &[0], 2, 1).unwrap();
        assert!((loss - 0.625).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_leaves_every_parameter_unchanged() {
        // The optimizer is a no-op at lr = 0; batch-norm running stats are
        // measurement state, not parameters, and may still move.
        let ds = digits_dataset(None, 32, 16, 7).unwrap();
        let cfg = tiny_config();
        let mut tc = tiny_train_config(2);
        tc.learning_rate = 0.0;
        let mut model = build_model(&cfg, 3).unwrap();
        let before: Vec<Vec<f32>> = model.param_tensors().iter().map(|p| p.data().to_vec()).collect();
        train_model(&mut model, &ds, &tc, 3).unwrap();
        for (p, b) in model.param_tensors().iter().zip(&before) {
            assert_eq!(p.data(), b.as_slice());
        }
    }

    #[test]
    fn training_is_bit_deterministic_per_seed() {
        let ds = digits_dataset(None, 24, 12, 1).unwrap();
        let cfg = tiny_config();
        let tc = tiny_train_config(2);
        let a = train_one(&cfg, &ds, &tc, 5).unwrap();
        let b = train_one(&cfg, &ds, &tc, 5).unwrap();
        assert_eq!(a.final_acc, b.final_acc);
        assert_eq!(a.conv_calls, b.conv_calls);
        for (ea, eb) in a.epochs.iter().zip(&b.epochs) {
            assert_eq!(ea.train_loss, eb.train_loss);
            assert_eq!(ea.test_acc, eb.test_acc);
        }
        let c = train_one(&cfg, &ds, &tc, 6).unwrap();
        assert_ne!(a.epochs[0].train_loss, c.epochs[0].train_loss);
    }

    #[test]
    fn single_sample_overfits_quickly() {
        // One digit, many steps: train accuracy must hit 100%.
        let (images, labels) = crate::encoding::synth_digits(1, 3);
        let split = Split::RateCoded {
            images,
            labels,
        };
        let ds = Dataset {
            train: split.clone(),
            test: split,
            classes: 10,
        };
        let cfg = tiny_config();
        let tc = TrainConfig {
            epochs: 50,
            batch_size: 1,
            learning_rate: 1e-2,
            schedule: Schedule::Cosine,
            loss: LossKind::CeSpikeCount,
            seeds: vec![0],
        };
        let outcome = train_one(&cfg, &ds, &tc, 0).unwrap();
        assert_eq!(outcome.best_acc, 1.0, "failed to overfit: {:?}", outcome.best_acc);
    }

    #[test]
    fn conv_calls_match_analytic_prediction() {
        let ds = digits_dataset(None, 16, 8, 2).unwrap();
        for op in [
            TemporalOpConfig::baseline(),
            TemporalOpConfig::tac(2),
            TemporalOpConfig::tac_tp(2),
        ] {
            let cfg = tiny_config().with_all_conv_ops(&op);
            let tc = tiny_train_config(1);
            let outcome = train_one(&cfg, &ds, &tc, 0).unwrap();
            assert_eq!(
                outcome.conv_calls, outcome.predicted_conv_calls,
                "{:?}",
                op.kind
            );
        }
    }

    #[test]
    fn tac_k1_training_is_bit_identical_to_baseline() {
        let ds = digits_dataset(None, 16, 8, 4).unwrap();
        let base = tiny_config();
        let tac1 = tiny_config().with_all_conv_ops(&TemporalOpConfig::tac(1));
        let tc = tiny_train_config(2);
        let a = train_one(&base, &ds, &tc, 9).unwrap();
        let b = train_one(&tac1, &ds, &tc, 9).unwrap();
        for (ea, eb) in a.epochs.iter().zip(&b.epochs) {
            assert_eq!(ea.train_loss, eb.train_loss);
            assert_eq!(ea.test_acc, eb.test_acc);
        }
    }

    #[test]
    fn gradient_reaches_every_conv_weight() {
        // Dead-network detector: with the arctan surrogate every conv
        // weight sees a nonzero gradient on a spiking batch.
        let ds = digits_dataset(None, 8, 4, 11).unwrap();
        let mut cfg = tiny_config();
        cfg.lif = LifParams::new(0.9, 1.0, SurrogateSpec::arctan(2.0), ResetMode::Subtract).unwrap();
        let mut model = build_model(&cfg, 1).unwrap();
        let (input, labels) = ds.train.batch(&[0, 1, 2, 3, 4, 5, 6, 7], cfg.t, 77).unwrap();
        let mut counter = ConvCallCounter::new();
        let graph = model
            .run_batch(&input, &labels, BnMode::Train, LossKind::CeSpikeCount, &mut counter)
            .unwrap();
        let grads = graph.tape.backward(graph.loss).unwrap();
        // Conv weight leaves are registered first for each block (3 tensors
        // per block: weights, gamma, beta).
        for block in 0..2 {
            let w_var = graph.param_vars[block * 3];
            let g = grads.get(w_var).expect("conv weights must receive gradient");
            let nonzero = g.iter().filter(|&&v| v != 0.0).count();
            assert_eq!(nonzero, g.len(), "block {block}: {} of {} weights dead", g.len() - nonzero, g.len());
        }
    }

    #[test]
    fn non_finite_learning_rate_is_rejected_up_front() {
        let ds = digits_dataset(None, 8, 4, 11).unwrap();
        let cfg = tiny_config();
        let mut tc = tiny_train_config(1);
        tc.learning_rate = f32::NAN;
        assert!(matches!(train_one(&cfg, &ds, &tc, 0), Err(TrainError::Config(_))));
    }

    #[test]
    fn event_model_with_voting_trains() {
        let ds = gesture_dataset(16, 8, 8, 32, 32, 5).unwrap();
        let mut cfg = ModelConfig::event_small(8, lif());
        cfg.widths = vec![4, 8];
        cfg.conv_ops = vec![TemporalOpConfig::baseline(); 2];
        let tc = TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 1e-3,
            schedule: Schedule::CosineWarmRestarts { t_max: 64 },
            loss: LossKind::MseRateOnehot,
            seeds: vec![0],
        };
        let outcome = train_one(&cfg, &ds, &tc, 0).unwrap();
        assert_eq!(outcome.epochs.len(), 1);
        assert!(outcome.epochs[0].train_loss.is_finite());
    }
}
