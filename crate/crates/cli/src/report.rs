//! Report assembly and serialization: one JSON document per run plus CSV
//! metric rows, sharing identical numeric values.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use tacsnn_core::sparsity::SparsityReport;
use tacsnn_core::train::TrainOutcome;

use crate::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub name: String,
    pub fingerprint: String,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<SparsitySection>,
}

#[derive(Debug, Serialize)]
pub struct TrainSection {
    pub per_seed: Vec<TrainOutcome>,
    pub summary: TrainSummary,
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub mean_best_acc: f64,
    pub std_best_acc: f64,
    pub mean_final_acc: f64,
    pub std_final_acc: f64,
    /// Per-run conv calls (identical across seeds by construction).
    pub conv_calls: u64,
    pub predicted_conv_calls: u64,
    pub mean_elapsed_seconds: f64,
    pub mean_time_per_epoch_seconds: f64,
    pub param_count: usize,
}

#[derive(Debug, Serialize)]
pub struct SparsitySection {
    pub rows: Vec<SparsityReport>,
    pub skip_fraction_analytic: f64,
    pub skip_fraction_mc: f64,
    pub max_skip_speedup: f64,
    pub delta_density_measured: f64,
    pub delta_density_analytic: f64,
    pub row_compressibility_shallow: f64,
    pub row_compressibility_deep: f64,
    pub row_compressibility_empirical: f64,
    /// Wall-clock ratio dense/gather on the sampled input; reported, never
    /// asserted (hardware-dependent).
    pub gather_time_ratio: f64,
    pub gathered_op_fraction: f64,
}

pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(per_seed: &[TrainOutcome]) -> TrainSummary {
    let (mean_best_acc, std_best_acc) = mean_std(per_seed.iter().map(|o| o.best_acc));
    let (mean_final_acc, std_final_acc) = mean_std(per_seed.iter().map(|o| o.final_acc));
    let (mean_elapsed_seconds, _) = mean_std(per_seed.iter().map(|o| o.elapsed_seconds));
    let (mean_time_per_epoch_seconds, _) = mean_std(per_seed.iter().map(|o| o.time_per_epoch_seconds));
    TrainSummary {
        mean_best_acc,
        std_best_acc,
        mean_final_acc,
        std_final_acc,
        conv_calls: per_seed.first().map_or(0, |o| o.conv_calls),
        predicted_conv_calls: per_seed.first().map_or(0, |o| o.predicted_conv_calls),
        mean_elapsed_seconds,
        mean_time_per_epoch_seconds,
        param_count: per_seed.first().map_or(0, |o| o.param_count),
    }
}

/// Render a float exactly as it appears in the JSON document, so CSV and
/// JSON carry identical numeric text.
pub fn json_num(v: f64) -> String {
    serde_json::to_string(&v).expect("finite float")
}

/// Same for `f32` fields, which serde serializes at f32 precision.
pub fn json_num32(v: f32) -> String {
    serde_json::to_string(&v).expect("finite float")
}

impl BenchReport {
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("report.json"), json).context("writing report.json")?;

        if let Some(train) = &self.train {
            let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
            w.write_record(["seed", "epoch", "train_loss", "test_acc", "lr", "seconds"])?;
            for outcome in &train.per_seed {
                for e in &outcome.epochs {
                    w.write_record([
                        outcome.seed.to_string(),
                        e.epoch.to_string(),
                        json_num(e.train_loss),
                        json_num(e.test_acc),
                        json_num32(e.lr),
                        json_num(e.seconds),
                    ])?;
                }
            }
            w.flush()?;
        }
        Ok(())
    }

    pub fn print_table(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "{:-<72}", "")?;
        writeln!(out, "{} (fingerprint {})", self.name, self.fingerprint)?;
        if let Some(train) = &self.train {
            writeln!(
                out,
                "{:>6} {:>10} {:>10} {:>12} {:>10}",
                "seed", "best_acc", "final_acc", "conv_calls", "elapsed_s"
            )?;
            for o in &train.per_seed {
                writeln!(
                    out,
                    "{:>6} {:>10.4} {:>10.4} {:>12} {:>10.2}",
                    o.seed, o.best_acc, o.final_acc, o.conv_calls, o.elapsed_seconds
                )?;
            }
            let s = &train.summary;
            writeln!(
                out,
                "{:>6} {:>10.4} {:>10.4} {:>12} {:>10.2}  (mean +/- {:.4})",
                "mean", s.mean_best_acc, s.mean_final_acc, s.conv_calls, s.mean_elapsed_seconds, s.std_best_acc
            )?;
        }
        if let Some(sp) = &self.sparsity {
            writeln!(
                out,
                "{:>28} {:>12} {:>12} {:>10}",
                "statistic", "measured", "analytical", "agreement"
            )?;
            for row in &sp.rows {
                writeln!(
                    out,
                    "{:>28} {:>12.6} {:>12.6} {:>10}",
                    row.method, row.measured, row.analytical, row.agreement
                )?;
            }
            writeln!(out, "max skip speedup: {:.3}x", sp.max_skip_speedup)?;
            writeln!(out, "gather wall-clock ratio (dense/gather): {:.3}", sp.gather_time_ratio)?;
        }
        writeln!(out, "{:-<72}", "")?;
        Ok(())
    }
}

/// One sweep summary row; `status` is `ok` or `error: ...` for group sizes
/// rejected by the resolution rule.
#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub operator: String,
    pub k: usize,
    pub mean_acc: Option<f64>,
    pub std_acc: Option<f64>,
    pub conv_calls: Option<u64>,
    pub elapsed_s: Option<f64>,
    pub status: String,
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["operator", "k", "mean_acc", "std_acc", "conv_calls", "elapsed_s", "status"])?;
    for r in rows {
        w.write_record([
            r.operator.clone(),
            r.k.to_string(),
            r.mean_acc.map(json_num).unwrap_or_default(),
            r.std_acc.map(json_num).unwrap_or_default(),
            r.conv_calls.map(|c| c.to_string()).unwrap_or_default(),
            r.elapsed_s.map(json_num).unwrap_or_default(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
