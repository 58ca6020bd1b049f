//! Fully connected layer: `y = x W^T + b`.

use super::{Tensor, TensorError};

/// `input` is `[B, in]`, `weights` `[out, in]`, output `[B, out]`.
pub(crate) fn linear(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Tensor, TensorError> {
    input.expect_rank(2, "linear input")?;
    weights.expect_rank(2, "linear weights")?;
    let (batch, in_dim) = (input.shape()[0], input.shape()[1]);
    let (out_dim, w_in) = (weights.shape()[0], weights.shape()[1]);
    if in_dim != w_in {
        return Err(TensorError::DimMismatch {
            context: "linear",
            dim: "input features",
            expected: w_in,
            actual: in_dim,
        });
    }
    let mut out = Tensor::zeros(&[batch, out_dim]);
    for b in 0..batch {
        let x = &input.data()[b * in_dim..(b + 1) * in_dim];
        let y = &mut out.data_mut()[b * out_dim..(b + 1) * out_dim];
        for (o, y_v) in y.iter_mut().enumerate() {
            let w_row = &weights.data()[o * in_dim..(o + 1) * in_dim];
            let dot: f32 = x.iter().zip(w_row.iter()).map(|(&a, &b)| a * b).sum();
            *y_v = dot + bias.map_or(0.0, |bt| bt.data()[o]);
        }
    }
    Ok(out)
}

pub(crate) fn linear_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &[f32],
    want_bias: bool,
) -> (Vec<f32>, Vec<f32>, Option<Vec<f32>>) {
    let (batch, in_dim) = (input.shape()[0], input.shape()[1]);
    let out_dim = weights.shape()[0];
    let mut dx = vec![0.0f32; input.len()];
    let mut dw = vec![0.0f32; weights.len()];
    let mut db = want_bias.then(|| vec![0.0f32; out_dim]);
    for b in 0..batch {
        let x = &input.data()[b * in_dim..(b + 1) * in_dim];
        let g = &grad_out[b * out_dim..(b + 1) * out_dim];
        let dx_row = &mut dx[b * in_dim..(b + 1) * in_dim];
        for (o, &go) in g.iter().enumerate() {
            let w_row = &weights.data()[o * in_dim..(o + 1) * in_dim];
            let dw_row = &mut dw[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                dx_row[i] += go * w_row[i];
                dw_row[i] += go * x[i];
            }
            if let Some(db) = db.as_mut() {
                db[o] += go;
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_hand_computation() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 0.5, -1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 0.0, -1.0, 2.0, 1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.1, -0.1]).unwrap();
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[1.0 - 3.0 + 0.1, 2.0 + 2.0 - 0.1, 0.5 - 2.0 + 0.1, 1.0 - 1.0 - 0.1]);
    }

    #[test]
    fn feature_mismatch_is_an_error() {
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 4]);
        assert!(linear(&x, &w, None).is_err());
    }
}
