//! Declarative run configuration: one TOML file per experiment, with
//! bundled presets for the standard runs.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use tacsnn_core::neuron::{LifParams, ResetMode, SurrogateKind, SurrogateSpec};
use tacsnn_core::temporal::{BiquadFilter, OpKind, TemporalOpConfig};
use tacsnn_core::train::{Architecture, ModelConfig, TrainConfig};

pub const PRESETS: &[(&str, &str)] = &[
    ("mnist-baseline", include_str!("../presets/mnist-baseline.toml")),
    ("mnist-tac", include_str!("../presets/mnist-tac.toml")),
    ("mnist-tac-tp", include_str!("../presets/mnist-tac-tp.toml")),
    ("mnist-tcc", include_str!("../presets/mnist-tcc.toml")),
    ("mnist-ftc", include_str!("../presets/mnist-ftc.toml")),
    ("mnist-imc", include_str!("../presets/mnist-imc.toml")),
    ("gesture-baseline", include_str!("../presets/gesture-baseline.toml")),
    ("gesture-tac", include_str!("../presets/gesture-tac.toml")),
    ("gesture-tac-tp", include_str!("../presets/gesture-tac-tp.toml")),
    ("sparsity-lab", include_str!("../presets/sparsity-lab.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn load_preset(name: &str) -> Result<RunConfig> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| anyhow!("unknown preset '{name}'; available: {}", preset_names().join(", ")))?;
    parse_config(text).with_context(|| format!("preset '{name}'"))
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Train,
    SparsityLab,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub sparsity: Option<SparsitySection>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: Architecture,
    pub operator: OpKind,
    #[serde(default = "default_k")]
    pub k: usize,
    pub widths: Vec<usize>,
    #[serde(default)]
    pub fc_hidden: Vec<usize>,
    pub classes: usize,
    #[serde(default = "default_voters")]
    pub voters: usize,
    pub t: usize,
    pub beta: f32,
    pub v_th: f32,
    pub surrogate: SurrogateKind,
    pub alpha: f32,
    pub reset: ResetMode,
    /// Which conv blocks the operator applies to; the rest run per-step.
    #[serde(default)]
    pub apply_to: Option<ApplyTo>,
    #[serde(default)]
    pub ftc: Option<FtcSection>,
    #[serde(default)]
    pub imc_target_bits: Option<f32>,
}

fn default_k() -> usize {
    1
}

fn default_voters() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ApplyTo {
    /// Operator on the first conv block only.
    First,
    /// Operator on every conv block.
    All,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FtcSection {
    pub b0: f32,
    pub b1: f32,
    pub b2: f32,
    pub r_raw: f32,
    pub theta: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    #[serde(default = "default_extent")]
    pub h: usize,
    #[serde(default = "default_extent")]
    pub w: usize,
}

fn default_extent() -> usize {
    32
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// 14x14 digit images: real MNIST under `TACSNN_DATA_DIR` when
    /// present, synthetic glyphs otherwise.
    Digits,
    /// Synthetic moving-blob event recordings, 4 motion classes.
    Gesture,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SparsitySection {
    pub rho: f32,
    pub lane_width: u32,
    pub mc_samples: usize,
    pub in_channels: usize,
    pub kernel_size: usize,
    pub deep_channels: usize,
    pub seed: u64,
    #[serde(default = "default_delta_steps")]
    pub delta_steps: usize,
}

fn default_delta_steps() -> usize {
    64
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ExperimentKind::Train => {
                let model = self.model.as_ref().ok_or_else(|| anyhow!("train runs need a [model] section"))?;
                self.train
                    .as_ref()
                    .ok_or_else(|| anyhow!("train runs need a [train] section"))?;
                let data = self.data.as_ref().ok_or_else(|| anyhow!("train runs need a [data] section"))?;
                model.to_model_config().context("[model]")?;
                match (model.architecture, data.source) {
                    (Architecture::MnistSmall, DataSource::Digits) => {}
                    (Architecture::EventSmall, DataSource::Gesture) => {}
                    (arch, src) => bail!("[data].source {src:?} does not feed architecture {arch:?}"),
                }
            }
            ExperimentKind::SparsityLab => {
                let s = self
                    .sparsity
                    .as_ref()
                    .ok_or_else(|| anyhow!("sparsity-lab runs need a [sparsity] section"))?;
                if !(0.0..=1.0).contains(&s.rho) {
                    bail!("[sparsity].rho must be in [0,1], got {}", s.rho);
                }
                if s.mc_samples < 10_000 {
                    bail!("[sparsity].mc_samples must be at least 10000");
                }
            }
        }
        Ok(())
    }

    /// Apply CLI overrides; each one re-validates.
    pub fn with_overrides(
        mut self,
        seeds: Option<Vec<u64>>,
        k: Option<usize>,
        epochs: Option<usize>,
    ) -> Result<Self> {
        if let Some(seeds) = seeds {
            let train = self
                .train
                .as_mut()
                .ok_or_else(|| anyhow!("--seeds applies only to train configurations"))?;
            train.seeds = seeds;
        }
        if let Some(k) = k {
            let model = self
                .model
                .as_mut()
                .ok_or_else(|| anyhow!("--k applies only to train configurations"))?;
            model.k = k;
        }
        if let Some(epochs) = epochs {
            let train = self
                .train
                .as_mut()
                .ok_or_else(|| anyhow!("--epochs applies only to train configurations"))?;
            train.epochs = epochs;
        }
        self.validate()?;
        Ok(self)
    }
}

impl ModelSection {
    pub fn lif_params(&self) -> Result<LifParams> {
        let surrogate = SurrogateSpec {
            kind: self.surrogate,
            alpha: self.alpha,
        };
        LifParams::new(self.beta, self.v_th, surrogate, self.reset)
            .map_err(|e| anyhow!("[model] lif: {e}"))
    }

    pub fn operator_config(&self) -> Result<TemporalOpConfig> {
        Ok(match self.operator {
            OpKind::Baseline => TemporalOpConfig::baseline(),
            OpKind::Tac => TemporalOpConfig::tac(self.k),
            OpKind::TacTp => TemporalOpConfig::tac_tp(self.k),
            OpKind::Tcc => TemporalOpConfig::tcc(),
            OpKind::Ftc => {
                let f = self.ftc.ok_or_else(|| anyhow!("[model].ftc section required for the ftc operator"))?;
                TemporalOpConfig::ftc(
                    BiquadFilter::from_pole_params(f.b0, f.b1, f.b2, f.r_raw, f.theta)
                        .map_err(|e| anyhow!("[model].ftc: {e}"))?,
                )
            }
            OpKind::Imc => TemporalOpConfig::imc(self.imc_target_bits.unwrap_or(1.0)),
        })
    }

    /// Collapse defaults to the first conv block only: cascading it
    /// through L layers divides the output train by K^L, which starves a
    /// spike-count readout. Preserving operators default to every block.
    fn effective_apply_to(&self) -> ApplyTo {
        self.apply_to.unwrap_or(match self.operator {
            OpKind::Tac => ApplyTo::First,
            _ => ApplyTo::All,
        })
    }

    pub fn to_model_config(&self) -> Result<ModelConfig> {
        let lif = self.lif_params()?;
        let op = self.operator_config()?;
        let conv_ops = match self.effective_apply_to() {
            ApplyTo::All => vec![op; self.widths.len()],
            ApplyTo::First => {
                let mut ops = vec![TemporalOpConfig::baseline(); self.widths.len()];
                if let Some(first) = ops.first_mut() {
                    *first = op;
                }
                ops
            }
        };
        let cfg = ModelConfig {
            architecture: self.architecture,
            conv_ops,
            widths: self.widths.clone(),
            fc_hidden: self.fc_hidden.clone(),
            classes: self.classes,
            voters: self.voters,
            t: self.t,
            lif,
        };
        cfg.validate().map_err(|e| anyhow!("{e}"))?;
        Ok(cfg)
    }
}

/// 64-bit FNV-1a over the canonical JSON encoding of the resolved config.
/// Any field change changes the fingerprint.
pub fn fingerprint(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in canonical.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}
