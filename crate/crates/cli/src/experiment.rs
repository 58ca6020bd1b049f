//! Experiment execution: resolve data, run training or the sparsity lab,
//! assemble the report.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};

use tacsnn_core::sparsity::{
    self, bernoulli_train, delta_density, gather_conv, row_compressibility,
    row_compressibility_empirical, skip_fraction, skip_fraction_mc, SimdModel, SparsityReport,
};
use tacsnn_core::tensor::{conv2d, ConvSpec};
use tacsnn_core::train::{self, Dataset};

use crate::config::{fingerprint, DataSource, ExperimentKind, RunConfig};
use crate::report::{summarize, BenchReport, SparsitySection, TrainSection};

/// Dataset cache directory (`TACSNN_DATA_DIR`), when set.
pub fn data_dir() -> Option<PathBuf> {
    std::env::var_os("TACSNN_DATA_DIR").map(PathBuf::from)
}

pub fn build_dataset(config: &RunConfig) -> Result<Dataset> {
    let data = config.data.as_ref().ok_or_else(|| anyhow!("missing [data] section"))?;
    let model = config.model.as_ref().ok_or_else(|| anyhow!("missing [model] section"))?;
    match data.source {
        DataSource::Digits => {
            let dir = data_dir();
            train::digits_dataset(dir.as_deref(), data.n_train, data.n_test, data.seed)
                .context("building digit dataset")
        }
        DataSource::Gesture => train::gesture_dataset(
            data.n_train,
            data.n_test,
            model.t,
            data.h,
            data.w,
            data.seed,
        )
        .context("building gesture dataset"),
    }
}

pub fn run_experiment(config: &RunConfig) -> Result<BenchReport> {
    let fp = fingerprint(config);
    let (train_section, sparsity_section) = match config.kind {
        ExperimentKind::Train => (Some(run_training(config)?), None),
        ExperimentKind::SparsityLab => (None, Some(run_sparsity_lab(config)?)),
    };
    Ok(BenchReport {
        schema_version: crate::report::SCHEMA_VERSION,
        name: config.name.clone(),
        fingerprint: fp,
        config: config.clone(),
        train: train_section,
        sparsity: sparsity_section,
    })
}

fn run_training(config: &RunConfig) -> Result<TrainSection> {
    let model_cfg = config
        .model
        .as_ref()
        .ok_or_else(|| anyhow!("missing [model]"))?
        .to_model_config()?;
    let train_cfg = config.train.clone().ok_or_else(|| anyhow!("missing [train]"))?;
    let dataset = build_dataset(config)?;
    let per_seed = train::train_seeds(&model_cfg, &dataset, &train_cfg)?;
    let summary = summarize(&per_seed);
    Ok(TrainSection { per_seed, summary })
}

fn run_sparsity_lab(config: &RunConfig) -> Result<SparsitySection> {
    let s = config.sparsity.as_ref().ok_or_else(|| anyhow!("missing [sparsity]"))?;
    let model = SimdModel::new(s.lane_width, s.rho)?;

    let analytic = skip_fraction(&model);
    let mc = skip_fraction_mc(&model, s.mc_samples, s.seed)?;

    // Temporal-delta density on an i.i.d. train.
    let delta_train = bernoulli_train(s.delta_steps, [1, 8, 16, 16], s.rho, s.seed ^ 0xde17a)?;
    let delta = delta_density(&delta_train)?;
    let delta_analytic = 2.0 * s.rho as f64 * (1.0 - s.rho as f64);
    let delta_n = (s.delta_steps - 1) * 8 * 16 * 16;

    // im2col row compressibility: analytic shallow/deep plus a measurement
    // on the actual unrolling.
    let shallow = row_compressibility(s.rho as f64, s.in_channels, s.kernel_size);
    let deep = row_compressibility(s.rho as f64, s.deep_channels, s.kernel_size);
    let spec = ConvSpec::new(s.in_channels, 4, s.kernel_size);
    let sample_train = bernoulli_train(1, [128, s.in_channels, 16, 16], s.rho, s.seed ^ 0x10c01)?;
    let sample = sample_train.frame(0);
    let (empirical, n_rows) = row_compressibility_empirical(&sample, &spec)?;

    // Gather lowering vs dense: output equivalence is asserted in tests;
    // here we record op counts and a wall-clock ratio for the report only.
    let weights_train = bernoulli_train(1, [spec.out_channels, s.in_channels, 3, 3], 0.5, s.seed)?;
    let weights = weights_train.frame(0).scale(0.25);
    let started = Instant::now();
    let dense_out = conv2d(&sample, &weights, None, &spec)?;
    let dense_time = started.elapsed().as_secs_f64();
    let started = Instant::now();
    let (gather_out, stats) = gather_conv(&sample, &weights, &spec)?;
    let gather_time = started.elapsed().as_secs_f64();
    let max_dev = dense_out
        .data()
        .iter()
        .zip(gather_out.data())
        .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
    if max_dev > 1e-4 {
        return Err(anyhow!("gather lowering deviated from dense conv by {max_dev}"));
    }

    let rows = vec![
        mc.clone(),
        SparsityReport::from_parts("temporal_delta_density", delta, delta_analytic, delta_n),
        SparsityReport::from_parts("im2col_row_compressibility", empirical, shallow, n_rows),
    ];

    Ok(SparsitySection {
        rows,
        skip_fraction_analytic: analytic,
        skip_fraction_mc: mc.measured,
        max_skip_speedup: sparsity::max_skip_speedup(&model),
        delta_density_measured: delta,
        delta_density_analytic: delta_analytic,
        row_compressibility_shallow: shallow,
        row_compressibility_deep: deep,
        row_compressibility_empirical: empirical,
        gather_time_ratio: if gather_time > 0.0 { dense_time / gather_time } else { 0.0 },
        gathered_op_fraction: stats.gathered_ops as f64 / stats.dense_ops as f64,
    })
}
