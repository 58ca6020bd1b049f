//! Model builders and the per-batch BPTT graph.
//!
//! Two desk-scale architectures share one layer vocabulary: a stack of
//! Conv-BN-LIF-Pool blocks (each with its own temporal operator), a
//! flatten, and per-timestep FC-LIF blocks feeding either a spike-count
//! softmax head or a voting rate head.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::neuron::{lif_step_on_tape, LifParams, ResetMode};
use crate::tape::{Tape, Var};
use crate::temporal::{
    predicted_conv_calls, temporal_resolution, ChannelGateSpec, ConvCallCounter, OpKind,
    SpikeTrain, TemporalOpConfig,
};
use crate::tensor::{BatchNormState, BnMode, ConvSpec, Tensor};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// 14x14 single-channel images, two conv blocks, spike-count head.
    MnistSmall,
    /// 32x32 two-channel event frames, conv stack, voting rate head.
    EventSmall,
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// One temporal operator per conv block.
    pub conv_ops: Vec<TemporalOpConfig>,
    /// Output channels per conv block.
    pub widths: Vec<usize>,
    /// Hidden FC sizes between the flatten and the output layer.
    pub fc_hidden: Vec<usize>,
    pub classes: usize,
    /// Output neurons per class in the voting head (1 = no voting).
    pub voters: usize,
    pub t: usize,
    pub lif: LifParams,
}

impl ModelConfig {
    pub fn mnist_small(t: usize, lif: LifParams) -> Self {
        ModelConfig {
            architecture: Architecture::MnistSmall,
            conv_ops: vec![TemporalOpConfig::baseline(), TemporalOpConfig::baseline()],
            widths: vec![8, 16],
            fc_hidden: vec![64],
            classes: 10,
            voters: 1,
            t,
            lif,
        }
    }

    pub fn event_small(t: usize, lif: LifParams) -> Self {
        ModelConfig {
            architecture: Architecture::EventSmall,
            conv_ops: vec![TemporalOpConfig::baseline(); 3],
            widths: vec![8, 16, 16],
            fc_hidden: Vec::new(),
            classes: 4,
            voters: 4,
            t,
            lif,
        }
    }

    /// Apply one operator to every conv block.
    pub fn with_all_conv_ops(mut self, op: &TemporalOpConfig) -> Self {
        self.conv_ops = vec![op.clone(); self.widths.len()];
        self
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        match self.architecture {
            Architecture::MnistSmall => (1, 14, 14),
            Architecture::EventSmall => (2, 32, 32),
        }
    }

    fn conv_padding(&self) -> usize {
        match self.architecture {
            Architecture::MnistSmall => 0,
            Architecture::EventSmall => 1,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.conv_ops.len() != self.widths.len() {
            return Err(TrainError::Config(format!(
                "{} conv ops for {} conv blocks",
                self.conv_ops.len(),
                self.widths.len()
            )));
        }
        if self.classes < 2 || self.voters == 0 || self.t == 0 {
            return Err(TrainError::Config("classes >= 2, voters >= 1, t >= 1 required".into()));
        }
        temporal_resolution(&self.conv_ops, self.t).map_err(TrainError::Temporal)?;
        Ok(())
    }
}

#[derive(Clone)]
struct FtcParams {
    b0: Tensor,
    b1: Tensor,
    b2: Tensor,
    r_raw: Tensor,
    theta: Tensor,
}

#[derive(Clone)]
struct ConvBlock {
    spec: ConvSpec,
    op: TemporalOpConfig,
    weights: Tensor,
    gamma: Tensor,
    beta_shift: Tensor,
    bn: BatchNormState,
    ftc: Option<FtcParams>,
    pool: usize,
}

#[derive(Clone)]
struct FcBlock {
    weights: Tensor,
    bias: Tensor,
}

#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    conv_blocks: Vec<ConvBlock>,
    fc_blocks: Vec<FcBlock>,
    flat_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CeSpikeCount,
    MseRateOnehot,
}

/// One recorded batch: the tape plus handles for the loss, the per-class
/// scores, and every parameter leaf (in [`Model::param_tensors_mut`] order).
pub struct StepGraph {
    pub tape: Tape,
    pub loss: Var,
    pub scores: Var,
    pub param_vars: Vec<Var>,
}

fn kaiming_uniform(rng: &mut StdRng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0f32 / fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect())
        .expect("init shape")
}

/// Build a model with Kaiming-uniform conv/linear weights, zero biases,
/// and identity BN, all drawn deterministically from `seed`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model, TrainError> {
    config.validate()?;
    let mut rng = StdRng::seed_from_u64(seed);
    let (mut c, mut h, mut w) = config.input_shape();
    let padding = config.conv_padding();

    let mut conv_blocks = Vec::with_capacity(config.widths.len());
    for (bi, (&width, op)) in config.widths.iter().zip(&config.conv_ops).enumerate() {
        let spec = ConvSpec::new(c, width, 3).with_padding(padding);
        let oh = spec.out_extent(h).map_err(TrainError::Tensor)?;
        let ow = spec.out_extent(w).map_err(TrainError::Tensor)?;
        if oh % 2 != 0 || ow % 2 != 0 {
            return Err(TrainError::Config(format!(
                "conv block {bi} output {oh}x{ow} is not poolable by 2"
            )));
        }
        let ftc = match op.kind {
            OpKind::Ftc => {
                let filter = op.ftc_coeffs.as_ref().ok_or_else(|| {
                    TrainError::Config(format!("conv block {bi}: ftc operator needs filter coefficients"))
                })?;
                let (r_raw, theta) = filter.pole_params().ok_or_else(|| {
                    TrainError::Config(format!(
                        "conv block {bi}: trainable ftc needs a pole-parametrized filter"
                    ))
                })?;
                Some(FtcParams {
                    b0: Tensor::scalar(filter.b0),
                    b1: Tensor::scalar(filter.b1),
                    b2: Tensor::scalar(filter.b2),
                    r_raw: Tensor::scalar(r_raw),
                    theta: Tensor::scalar(theta),
                })
            }
            _ => None,
        };
        conv_blocks.push(ConvBlock {
            spec,
            op: op.clone(),
            weights: kaiming_uniform(&mut rng, &spec.weight_shape(), c * 9),
            gamma: Tensor::filled(&[width], 1.0),
            beta_shift: Tensor::zeros(&[width]),
            bn: BatchNormState::new(width),
            ftc,
            pool: 2,
        });
        c = width;
        h = oh / 2;
        w = ow / 2;
    }

    let flat_dim = c * h * w;
    let mut fc_blocks = Vec::new();
    let mut in_dim = flat_dim;
    for &hidden in &config.fc_hidden {
        fc_blocks.push(FcBlock {
            weights: kaiming_uniform(&mut rng, &[hidden, in_dim], in_dim),
            bias: Tensor::zeros(&[hidden]),
        });
        in_dim = hidden;
    }
    let out_dim = config.classes * config.voters;
    fc_blocks.push(FcBlock {
        weights: kaiming_uniform(&mut rng, &[out_dim, in_dim], in_dim),
        bias: Tensor::zeros(&[out_dim]),
    });

    Ok(Model {
        config: config.clone(),
        conv_blocks,
        fc_blocks,
        flat_dim,
    })
}

struct BlockVars {
    w: Var,
    gamma: Var,
    beta: Var,
    ftc: Option<[Var; 5]>,
}

struct FcVars {
    w: Var,
    b: Var,
}

impl Model {
    pub fn flat_dim(&self) -> usize {
        self.flat_dim
    }

    pub fn conv_block_count(&self) -> usize {
        self.conv_blocks.len()
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for b in &self.conv_blocks {
            n += b.weights.len() + b.gamma.len() + b.beta_shift.len();
            if b.ftc.is_some() {
                n += 5;
            }
        }
        for f in &self.fc_blocks {
            n += f.weights.len() + f.bias.len();
        }
        n
    }

    /// Analytic conv-call count for one forward pass.
    pub fn predicted_calls_per_forward(&self) -> u64 {
        predicted_conv_calls(&self.config.conv_ops, self.config.t).expect("validated at build")
    }

    /// Every trainable tensor in registration order (read-only view).
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for b in &self.conv_blocks {
            out.push(&b.weights);
            out.push(&b.gamma);
            out.push(&b.beta_shift);
            if let Some(f) = &b.ftc {
                out.extend([&f.b0, &f.b1, &f.b2, &f.r_raw, &f.theta]);
            }
        }
        for f in &self.fc_blocks {
            out.push(&f.weights);
            out.push(&f.bias);
        }
        out
    }

    /// Every trainable tensor in registration order.
    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for b in &mut self.conv_blocks {
            out.push(&mut b.weights);
            out.push(&mut b.gamma);
            out.push(&mut b.beta_shift);
            if let Some(f) = &mut b.ftc {
                out.push(&mut f.b0);
                out.push(&mut f.b1);
                out.push(&mut f.b2);
                out.push(&mut f.r_raw);
                out.push(&mut f.theta);
            }
        }
        for f in &mut self.fc_blocks {
            out.push(&mut f.weights);
            out.push(&mut f.bias);
        }
        out
    }

    /// Record one batch: forward through every layer and the loss.
    ///
    /// `input` is `[T, B, C, H, W]`; `counter` advances once per conv2d
    /// invocation (a `tcc` block skips silent frames).
    pub fn run_batch(
        &mut self,
        input: &SpikeTrain,
        labels: &[usize],
        mode: BnMode,
        loss_kind: LossKind,
        counter: &mut ConvCallCounter,
    ) -> Result<StepGraph, TrainError> {
        if input.steps() != self.config.t {
            return Err(TrainError::Config(format!(
                "input has {} timesteps, model expects {}",
                input.steps(),
                self.config.t
            )));
        }
        let [_, c, h, w] = input.frame_shape();
        let expected = self.config.input_shape();
        if (c, h, w) != expected {
            return Err(TrainError::Config(format!(
                "input frames are {c}x{h}x{w}, architecture expects {}x{}x{}",
                expected.0, expected.1, expected.2
            )));
        }
        let mut tape = Tape::new();

        // Parameter leaves, in param_tensors_mut order.
        let mut param_vars = Vec::new();
        let mut block_vars = Vec::with_capacity(self.conv_blocks.len());
        for b in &self.conv_blocks {
            let w = tape.leaf(b.weights.clone());
            let gamma = tape.leaf(b.gamma.clone());
            let beta = tape.leaf(b.beta_shift.clone());
            param_vars.extend([w, gamma, beta]);
            let ftc = b.ftc.as_ref().map(|f| {
                let vars = [
                    tape.leaf(f.b0.clone()),
                    tape.leaf(f.b1.clone()),
                    tape.leaf(f.b2.clone()),
                    tape.leaf(f.r_raw.clone()),
                    tape.leaf(f.theta.clone()),
                ];
                param_vars.extend(vars);
                vars
            });
            block_vars.push(BlockVars { w, gamma, beta, ftc });
        }
        let mut fc_vars = Vec::with_capacity(self.fc_blocks.len());
        for f in &self.fc_blocks {
            let w = tape.leaf(f.weights.clone());
            let b = tape.leaf(f.bias.clone());
            param_vars.extend([w, b]);
            fc_vars.push(FcVars { w, b });
        }

        let mut frames: Vec<Var> = (0..input.steps()).map(|s| tape.leaf(input.frame(s))).collect();

        let lif = self.config.lif;
        for bi in 0..self.conv_blocks.len() {
            let vars = &block_vars[bi];
            let block = &mut self.conv_blocks[bi];
            if block.op.kind == OpKind::Tcc && bi == 0 && !input.is_binary() {
                return Err(TrainError::Config(
                    "tcc requires binary input; the first layer sees continuous frames".into(),
                ));
            }
            frames = apply_conv_block(&mut tape, block, vars, frames, &lif, mode, counter)?;
            // Spatial pooling on each output frame.
            let mut pooled = Vec::with_capacity(frames.len());
            for &f in &frames {
                pooled.push(tape.maxpool2d(f, block.pool).map_err(TrainError::Tensor)?);
            }
            frames = pooled;
        }

        // Flatten each timestep.
        let batch = input.frame_shape()[0];
        let mut flat = Vec::with_capacity(frames.len());
        for &f in &frames {
            flat.push(tape.reshape(f, &[batch, self.flat_dim]).map_err(TrainError::Tensor)?);
        }
        let mut frames = flat;

        // FC-LIF blocks run per timestep.
        for fc in &fc_vars {
            let mut out = Vec::with_capacity(frames.len());
            let first = tape.linear(frames[0], fc.w, Some(fc.b)).map_err(TrainError::Tensor)?;
            let mut v = tape.leaf(Tensor::zeros(tape.value(first).shape()));
            let (s0, v0) = lif_step_on_tape(&mut tape, v, first, &lif, 1).map_err(TrainError::Neuron)?;
            out.push(s0);
            v = v0;
            for &f in &frames[1..] {
                let drive = tape.linear(f, fc.w, Some(fc.b)).map_err(TrainError::Tensor)?;
                let (s, v_next) = lif_step_on_tape(&mut tape, v, drive, &lif, 1).map_err(TrainError::Neuron)?;
                out.push(s);
                v = v_next;
            }
            frames = out;
        }

        // Output head: accumulate spikes over the surviving timesteps.
        let mut acc = frames[0];
        for &f in &frames[1..] {
            acc = tape.add(acc, f).map_err(TrainError::Tensor)?;
        }
        let (scores, loss) = match loss_kind {
            LossKind::CeSpikeCount => {
                let loss = tape.softmax_cross_entropy(acc, labels).map_err(TrainError::Tensor)?;
                (acc, loss)
            }
            LossKind::MseRateOnehot => {
                let grouped = tape.group_avg(acc, self.config.voters).map_err(TrainError::Tensor)?;
                let rates = tape.scale(grouped, 1.0 / frames.len() as f32);
                let loss = tape.mse_to_onehot(rates, labels).map_err(TrainError::Tensor)?;
                (rates, loss)
            }
        };

        Ok(StepGraph {
            tape,
            loss,
            scores,
            param_vars,
        })
    }
}

/// Conv + BN + spike dynamics under the block's temporal operator.
/// Returns the output spike frames (length depends on the operator).
fn apply_conv_block(
    tape: &mut Tape,
    block: &mut ConvBlock,
    vars: &BlockVars,
    frames: Vec<Var>,
    lif: &LifParams,
    mode: BnMode,
    counter: &mut ConvCallCounter,
) -> Result<Vec<Var>, TrainError> {
    let t_in = frames.len();
    let k = block.op.effective_k();
    if t_in % k != 0 {
        return Err(TrainError::Temporal(crate::temporal::TemporalError::GroupMismatch {
            k,
            t: t_in,
        }));
    }

    // IMC gates channels of the incoming train before convolving.
    let frames = if block.op.kind == OpKind::Imc {
        let target = block.op.imc_target_bits.unwrap_or(1.0) as f64;
        let gate = build_gate(tape, &frames, target)?;
        let shape = tape.value(frames[0]).shape().to_vec();
        let mask = tape.leaf(channel_mask(&shape, &gate));
        let mut masked = Vec::with_capacity(frames.len());
        for &f in &frames {
            masked.push(tape.mul(f, mask).map_err(TrainError::Tensor)?);
        }
        masked
    } else {
        frames
    };

    let mut out = Vec::with_capacity(t_in);
    let mut v: Option<Var> = None;
    match block.op.kind {
        OpKind::Tac | OpKind::TacTp => {
            let preserve = block.op.kind == OpKind::TacTp;
            for g in 0..t_in / k {
                let agg = aggregate_on_tape(tape, &frames[g * k..(g + 1) * k], lif.beta)?;
                let y = tape.conv2d(agg, vars.w, None, block.spec).map_err(TrainError::Tensor)?;
                counter.bump();
                let y = tape
                    .batchnorm(y, vars.gamma, vars.beta, &mut block.bn, mode)
                    .map_err(TrainError::Tensor)?;
                if preserve {
                    for _ in 0..k {
                        let v_in = v_or_zeros(tape, &mut v, y);
                        let (s, v_next) = lif_step_on_tape(tape, v_in, y, lif, 1).map_err(TrainError::Neuron)?;
                        out.push(s);
                        v = Some(v_next);
                    }
                } else {
                    let v_in = v_or_zeros(tape, &mut v, y);
                    let (s, v_next) =
                        lif_step_on_tape(tape, v_in, y, lif, k as u32).map_err(TrainError::Neuron)?;
                    out.push(s);
                    v = Some(v_next);
                }
            }
        }
        OpKind::Ftc => {
            let [b0, b1, b2, r_raw, theta] = vars.ftc.expect("ftc params exist for ftc blocks");
            // Scalar graph for the denominator: a1 = -2 r cos(theta), a2 = r^2.
            let r = tape.sigmoid(r_raw);
            let cos_t = tape.cos(theta);
            let rc = tape.mul(r, cos_t).map_err(TrainError::Tensor)?;
            let a1 = tape.scale(rc, -2.0);
            let a2 = tape.mul(r, r).map_err(TrainError::Tensor)?;
            let mut s1: Option<Var> = None;
            let mut s2: Option<Var> = None;
            for &f in &frames {
                let x = tape.conv2d(f, vars.w, None, block.spec).map_err(TrainError::Tensor)?;
                counter.bump();
                let x = tape
                    .batchnorm(x, vars.gamma, vars.beta, &mut block.bn, mode)
                    .map_err(TrainError::Tensor)?;
                let s1_prev = match s1 {
                    Some(s) => s,
                    None => tape.leaf(Tensor::zeros(tape.value(x).shape())),
                };
                let s2_prev = match s2 {
                    Some(s) => s,
                    None => tape.leaf(Tensor::zeros(tape.value(x).shape())),
                };
                let xb0 = tape.mul_scalar_var(x, b0).map_err(TrainError::Tensor)?;
                let y = tape.add(xb0, s1_prev).map_err(TrainError::Tensor)?;
                let shifted = tape.add_scalar(y, -lif.v_th);
                let spike = tape.spike(shifted, lif.surrogate);
                let reset_src = match lif.reset {
                    ResetMode::Subtract => spike,
                    ResetMode::SubtractDetached => tape.detach(spike),
                };
                let reset = tape.scale(reset_src, lif.v_th);
                let y_eff = tape.sub(y, reset).map_err(TrainError::Tensor)?;
                let xb1 = tape.mul_scalar_var(x, b1).map_err(TrainError::Tensor)?;
                let fb1 = tape.mul_scalar_var(y_eff, a1).map_err(TrainError::Tensor)?;
                let s1_partial = tape.add(xb1, s2_prev).map_err(TrainError::Tensor)?;
                s1 = Some(tape.sub(s1_partial, fb1).map_err(TrainError::Tensor)?);
                let xb2 = tape.mul_scalar_var(x, b2).map_err(TrainError::Tensor)?;
                let fb2 = tape.mul_scalar_var(y_eff, a2).map_err(TrainError::Tensor)?;
                s2 = Some(tape.sub(xb2, fb2).map_err(TrainError::Tensor)?);
                out.push(spike);
            }
        }
        OpKind::Baseline | OpKind::Tcc | OpKind::Imc => {
            let skip_silent = block.op.kind == OpKind::Tcc;
            for &f in &frames {
                let silent = skip_silent && tape.value(f).iter().all(|&v| v == 0.0);
                let y = tape.conv2d(f, vars.w, None, block.spec).map_err(TrainError::Tensor)?;
                if !silent {
                    counter.bump();
                }
                let y = tape
                    .batchnorm(y, vars.gamma, vars.beta, &mut block.bn, mode)
                    .map_err(TrainError::Tensor)?;
                let v_in = v_or_zeros(tape, &mut v, y);
                let (s, v_next) = lif_step_on_tape(tape, v_in, y, lif, 1).map_err(TrainError::Neuron)?;
                out.push(s);
                v = Some(v_next);
            }
        }
    }
    Ok(out)
}

fn v_or_zeros(tape: &mut Tape, v: &mut Option<Var>, like: Var) -> Var {
    match v {
        Some(existing) => *existing,
        None => {
            let zeros = tape.leaf(Tensor::zeros(tape.value(like).shape()));
            *v = Some(zeros);
            zeros
        }
    }
}

fn aggregate_on_tape(tape: &mut Tape, group: &[Var], beta: f32) -> Result<Var, TrainError> {
    let k = group.len();
    let mut acc = tape.scale(group[0], beta.powi((k - 1) as i32));
    for (j, &f) in group.iter().enumerate().skip(1) {
        acc = tape
            .axpy(beta.powi((k - 1 - j) as i32), f, acc)
            .map_err(TrainError::Tensor)?;
    }
    Ok(acc)
}

/// Per-channel firing rates of the frame stack, measured from tape values.
fn build_gate(tape: &Tape, frames: &[Var], target_bits: f64) -> Result<ChannelGateSpec, TrainError> {
    let shape = tape.value(frames[0]).shape();
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let plane = h * w;
    let mut counts = vec![0u64; c];
    for &f in frames {
        let data = tape.value(f).data();
        for bi in 0..b {
            for ci in 0..c {
                let start = (bi * c + ci) * plane;
                counts[ci] += data[start..start + plane].iter().filter(|&&v| v != 0.0).count() as u64;
            }
        }
    }
    let denom = (frames.len() * b * plane) as f32;
    let rates: Vec<f32> = counts.iter().map(|&n| n as f32 / denom).collect();
    ChannelGateSpec::from_rates(rates, target_bits).map_err(TrainError::Temporal)
}

fn channel_mask(shape: &[usize], gate: &ChannelGateSpec) -> Tensor {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut mask = Tensor::zeros(&[b, c, h, w]);
    let plane = h * w;
    for bi in 0..b {
        for ci in 0..c {
            if gate.gate_mask[ci] {
                let start = (bi * c + ci) * plane;
                mask.data_mut()[start..start + plane].iter_mut().for_each(|v| *v = 1.0);
            }
        }
    }
    mask
}
