//! Reverse-mode differentiation over the fixed op set.
//!
//! Ops are recorded in execution order; [`Tape::backward`] replays them in
//! reverse, accumulating gradients for every node reachable from the loss.
//! Forward values are computed by the same kernels as the pure functions in
//! [`crate::tensor`], so recording and then discarding a tape changes
//! nothing about the forward result.
//!
//! The tape is single-writer: one recording context per training step.

use crate::neuron::SurrogateSpec;
use crate::tensor::{
    self, BatchNormState, BnMode, ConvSpec, Tensor, TensorError,
};
use crate::Exec;

/// Handle to a recorded tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type Rule = Box<dyn Fn(&[Node], &[f32], &mut Gradients)>;

struct Node {
    value: Tensor,
    rule: Option<Rule>,
}

/// Per-node gradient buffers produced by [`Tape::backward`].
pub struct Gradients {
    slots: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    fn new(n: usize) -> Self {
        Gradients {
            slots: (0..n).map(|_| None).collect(),
        }
    }

    /// Gradient of `var`, if any path from the loss reached it.
    pub fn get(&self, var: Var) -> Option<&[f32]> {
        self.slots[var.0].as_deref()
    }

    /// Gradient of `var`, or zeros when nothing reached it.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f32> {
        match self.get(var) {
            Some(g) => g.to_vec(),
            None => vec![0.0; len],
        }
    }

    fn slot(&mut self, var: Var, len: usize) -> &mut [f32] {
        self.slots[var.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn add(&mut self, var: Var, src: &[f32]) {
        let dst = self.slot(var, src.len());
        for (d, s) in dst.iter_mut().zip(src.iter()) {
            *d += s;
        }
    }

    fn add_scaled(&mut self, var: Var, src: &[f32], k: f32) {
        let dst = self.slot(var, src.len());
        for (d, s) in dst.iter_mut().zip(src.iter()) {
            *d += k * s;
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, None)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, rule: Option<Rule>) -> Var {
        self.nodes.push(Node { value, rule });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(
            value,
            Some(Box::new(move |_, gout, grads| {
                grads.add(a, gout);
                grads.add(b, gout);
            })),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(
            value,
            Some(Box::new(move |_, gout, grads| {
                grads.add(a, gout);
                grads.add_scaled(b, gout, -1.0);
            })),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.push(
            value,
            Some(Box::new(move |nodes, gout, grads| {
                let bv = nodes[b.0].value.data();
                let av = nodes[a.0].value.data();
                let ga: Vec<f32> = gout.iter().zip(bv.iter()).map(|(&g, &v)| g * v).collect();
                let gb: Vec<f32> = gout.iter().zip(av.iter()).map(|(&g, &v)| g * v).collect();
                grads.add(a, &ga);
                grads.add(b, &gb);
            })),
        ))
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Var {
        let value = self.value(a).scale(factor);
        self.push(
            value,
            Some(Box::new(move |_, gout, grads| {
                grads.add_scaled(a, gout, factor);
            })),
        )
    }

    /// `alpha * x + y`; the membrane-update primitive.
    pub fn axpy(&mut self, alpha: f32, x: Var, y: Var) -> Result<Var, TensorError> {
        let value = self.value(x).axpy(alpha, self.value(y))?;
        Ok(self.push(
            value,
            Some(Box::new(move |_, gout, grads| {
                grads.add_scaled(x, gout, alpha);
                grads.add(y, gout);
            })),
        ))
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Var {
        let value = self.value(a).map(|v| v + c);
        self.push(
            value,
            Some(Box::new(move |_, gout, grads| {
                grads.add(a, gout);
            })),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        let out_data = value.data().to_vec();
        self.push(
            value,
            Some(Box::new(move |_, gout, grads| {
                let ga: Vec<f32> = gout
                    .iter()
                    .zip(out_data.iter())
                    .map(|(&g, &y)| g * y * (1.0 - y))
                    .collect();
                grads.add(a, &ga);
            })),
        )
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f32::cos);
        self.push(
            value,
            Some(Box::new(move |nodes, gout, grads| {
                let x = nodes[a.0].value.data();
                let ga: Vec<f32> = gout.iter().zip(x.iter()).map(|(&g, &v)| -g * v.sin()).collect();
                grads.add(a, &ga);
            })),
        )
    }

    /// Broadcast-multiply a tensor by a one-element scalar variable.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        if self.value(s).len() != 1 {
            return Err(TensorError::Invalid(format!(
                "mul_scalar_var: scalar operand has {} elements",
                self.value(s).len()
            )));
        }
        let sv = self.value(s).data()[0];
        let value = self.value(x).scale(sv);
        Ok(self.push(
            value,
            Some(Box::new(move |nodes, gout, grads| {
                let xv = nodes[x.0].value.data();
                let sv = nodes[s.0].value.data()[0];
                grads.add_scaled(x, gout, sv);
                let gs: f32 = gout.iter().zip(xv.iter()).map(|(&g, &v)| g * v).sum();
                grads.add(s, &[gs]);
            })),
        ))
    }

    /// Pass the value through and block the gradient.
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, None)
    }

    /// Heaviside step with a surrogate derivative: fires at exact threshold
    /// (`x >= 0` gives 1), backward multiplies by `surrogate.grad(x)`.
    pub fn spike(&mut self, a: Var, surrogate: SurrogateSpec) -> Var {
        let value = self.value(a).map(|v| if v >= 0.0 { 1.0 } else { 0.0 });
        self.push(
            value,
            Some(Box::new(move |nodes, gout, grads| {
                let x = nodes[a.0].value.data();
                let ga: Vec<f32> = gout
                    .iter()
                    .zip(x.iter())
                    .map(|(&g, &v)| g * surrogate.grad(v))
                    .collect();
                grads.add(a, &ga);
            })),
        )
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    ) -> Result<Var, TensorError> {
        let value = tensor::conv2d(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
            &spec,
        )?;
        Ok(self.push(
            value,
            Some(Box::new(move |nodes, gout, grads| {
                let (dx, dw, db) = tensor::conv2d_backward(
                    Exec::default(),
                    &nodes[x.0].value,
                    &nodes[w.0].value,
                    &spec,
                    gout,
                    bias.is_some(),
                )
                .expect("shapes validated in forward");
                grads.add(x, &dx);
                grads.add(w, &dw);
                if let (Some(b), Some(db)) = (bias, db) {
                    grads.add(b, &db);
                }
            })),
        ))
    }

    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var, TensorError> {
        let value = tensor::linear(self.value(x), self.value(w), bias.map(|b| self.value(b)))?;
        Ok(self.push(
            value,
            Some(Box::new(move |nodes, gout, grads| {
                let (dx, dw, db) = tensor::linear_backward(
                    &nodes[x.0].value,
                    &nodes[w.0].value,
                    gout,
                    bias.is_some(),
                );
                grads.add(x, &dx);
                grads.add(w, &dw);
                if let (Some(b), Some(db)) = (bias, db) {
                    grads.add(b, &db);
                }
            })),
        ))
    }

    pub fn maxpool2d(&mut self, x: Var, window: usize) -> Result<Var, TensorError> {
        let (value, argmax) = tensor::maxpool2d_with_argmax(self.value(x), window)?;
        let input_len = self.value(x).len();
        Ok(self.push(
            value,
            Some(Box::new(move |_, gout, grads| {
                let dx = tensor::maxpool2d_backward(&argmax, gout, input_len);
                grads.add(x, &dx);
            })),
        ))
    }

    /// Batch normalization; train mode folds batch statistics into `state`.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: BnMode,
    ) -> Result<Var, TensorError> {
        match mode {
            BnMode::Train => {
                let (value, mean, var) =
                    tensor::batchnorm_train_stats(self.value(x), self.value(gamma), self.value(beta))?;
                let m = state.momentum;
                for c in 0..state.channels() {
                    state.running_mean[c] = (1.0 - m) * state.running_mean[c] + m * mean[c];
                    state.running_var[c] = (1.0 - m) * state.running_var[c] + m * var[c];
                }
                Ok(self.push(
                    value,
                    Some(Box::new(move |nodes, gout, grads| {
                        let (dx, dgamma, dbeta) = tensor::batchnorm_backward(
                            &nodes[x.0].value,
                            &nodes[gamma.0].value,
                            &mean,
                            &var,
                            gout,
                        );
                        grads.add(x, &dx);
                        grads.add(gamma, &dgamma);
                        grads.add(beta, &dbeta);
                    })),
                ))
            }
            BnMode::Eval => {
                // Running statistics are constants for the backward pass.
                let mut st = state.clone();
                let value = tensor::batchnorm(self.value(x), self.value(gamma), self.value(beta), &mut st, BnMode::Eval)?;
                let mean = state.running_mean.clone();
                let var = state.running_var.clone();
                let channels = state.channels();
                Ok(self.push(
                    value,
                    Some(Box::new(move |nodes, gout, grads| {
                        let input = &nodes[x.0].value;
                        let g = nodes[gamma.0].value.data();
                        let (b_dim, _, h, w) = input.dims4("batchnorm eval backward").unwrap();
                        let plane = h * w;
                        let mut dx = vec![0.0f32; input.len()];
                        let mut dgamma = vec![0.0f32; channels];
                        let mut dbeta = vec![0.0f32; channels];
                        for bi in 0..b_dim {
                            for c in 0..channels {
                                let inv = (var[c] + tensor::BN_EPSILON).sqrt().recip();
                                let start = (bi * channels + c) * plane;
                                for i in 0..plane {
                                    let go = gout[start + i];
                                    let xhat = (input.data()[start + i] - mean[c]) * inv;
                                    dx[start + i] = go * g[c] * inv;
                                    dgamma[c] += go * xhat;
                                    dbeta[c] += go;
                                }
                            }
                        }
                        grads.add(x, &dx);
                        grads.add(gamma, &dgamma);
                        grads.add(beta, &dbeta);
                    })),
                ))
            }
        }
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let len = self.value(a).len();
        self.push(
            value,
            Some(Box::new(move |_, gout, grads| {
                let g = vec![gout[0]; len];
                grads.add(a, &g);
            })),
        )
    }

    /// Reinterpret the value under a new shape; gradient passes through.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).reshaped(shape)?;
        Ok(self.push(
            value,
            Some(Box::new(move |_, gout, grads| {
                grads.add(a, gout);
            })),
        ))
    }

    /// Average consecutive groups of `group` columns: `[B, C*group]` to
    /// `[B, C]`. The voting head.
    pub fn group_avg(&mut self, a: Var, group: usize) -> Result<Var, TensorError> {
        let v = self.value(a);
        v.expect_rank(2, "group_avg")?;
        let (batch, wide) = (v.shape()[0], v.shape()[1]);
        if group == 0 || wide % group != 0 {
            return Err(TensorError::NotDivisible {
                context: "group_avg",
                extent: wide,
                divisor: group.max(1),
            });
        }
        let classes = wide / group;
        let mut out = Tensor::zeros(&[batch, classes]);
        for b in 0..batch {
            for c in 0..classes {
                let start = b * wide + c * group;
                out.data_mut()[b * classes + c] =
                    v.data()[start..start + group].iter().sum::<f32>() / group as f32;
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |_, gout, grads| {
                let mut ga = vec![0.0f32; batch * wide];
                let inv = 1.0 / group as f32;
                for b in 0..batch {
                    for c in 0..classes {
                        let g = gout[b * classes + c] * inv;
                        let start = b * wide + c * group;
                        for slot in &mut ga[start..start + group] {
                            *slot += g;
                        }
                    }
                }
                grads.add(a, &ga);
            })),
        ))
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let v = self.value(logits);
        v.expect_rank(2, "softmax_cross_entropy")?;
        let (batch, classes) = (v.shape()[0], v.shape()[1]);
        if labels.len() != batch {
            return Err(TensorError::DimMismatch {
                context: "softmax_cross_entropy",
                dim: "labels",
                expected: batch,
                actual: labels.len(),
            });
        }
        let mut loss = 0.0f32;
        for b in 0..batch {
            let row = &v.data()[b * classes..(b + 1) * classes];
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f32>().ln();
            loss += lse - row[labels[b]];
        }
        loss /= batch as f32;
        let labels = labels.to_vec();
        Ok(self.push(
            Tensor::scalar(loss),
            Some(Box::new(move |nodes, gout, grads| {
                let v = nodes[logits.0].value.data();
                let mut g = vec![0.0f32; v.len()];
                let scale = gout[0] / batch as f32;
                for b in 0..batch {
                    let row = &v[b * classes..(b + 1) * classes];
                    let max = row.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x));
                    let denom: f32 = row.iter().map(|&x| (x - max).exp()).sum();
                    for c in 0..classes {
                        let p = (row[c] - max).exp() / denom;
                        let target = if c == labels[b] { 1.0 } else { 0.0 };
                        g[b * classes + c] = scale * (p - target);
                    }
                }
                grads.add(logits, &g);
            })),
        ))
    }

    /// Mean squared error of `[B, C]` predictions against one-hot labels.
    pub fn mse_to_onehot(&mut self, pred: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let v = self.value(pred);
        v.expect_rank(2, "mse_to_onehot")?;
        let (batch, classes) = (v.shape()[0], v.shape()[1]);
        if labels.len() != batch {
            return Err(TensorError::DimMismatch {
                context: "mse_to_onehot",
                dim: "labels",
                expected: batch,
                actual: labels.len(),
            });
        }
        let n = (batch * classes) as f32;
        let mut loss = 0.0f32;
        for b in 0..batch {
            for c in 0..classes {
                let target = if c == labels[b] { 1.0 } else { 0.0 };
                let d = v.data()[b * classes + c] - target;
                loss += d * d;
            }
        }
        loss /= n;
        let labels = labels.to_vec();
        Ok(self.push(
            Tensor::scalar(loss),
            Some(Box::new(move |nodes, gout, grads| {
                let v = nodes[pred.0].value.data();
                let scale = 2.0 * gout[0] / n;
                let mut g = vec![0.0f32; v.len()];
                for b in 0..batch {
                    for c in 0..classes {
                        let target = if c == labels[b] { 1.0 } else { 0.0 };
                        g[b * classes + c] = scale * (v[b * classes + c] - target);
                    }
                }
                grads.add(pred, &g);
            })),
        ))
    }

    /// Replay recorded ops in reverse, populating gradients for every node
    /// reachable from `loss`. The loss must be a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads = Gradients::new(self.nodes.len());
        grads.add(loss, &[1.0]);
        for i in (0..=loss.0).rev() {
            let Some(rule) = &self.nodes[i].rule else { continue };
            let Some(gout) = grads.slots[i].take() else { continue };
            rule(&self.nodes, &gout, &mut grads);
            grads.slots[i] = Some(gout);
        }
        Ok(grads)
    }
}
