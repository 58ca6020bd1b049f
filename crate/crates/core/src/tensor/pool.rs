//! Non-overlapping max pooling.

use super::{Tensor, TensorError};

/// Per-window maximum over `[B, C, H, W]` with a square window and stride
/// equal to the window. Both spatial extents must be divisible by it.
pub fn maxpool2d(input: &Tensor, window: usize) -> Result<Tensor, TensorError> {
    Ok(maxpool2d_with_argmax(input, window)?.0)
}

/// Max pool plus the flat input index of each window maximum.
///
/// Ties resolve to the first element in row-major scan order, which is
/// where the backward pass routes the gradient.
pub(crate) fn maxpool2d_with_argmax(
    input: &Tensor,
    window: usize,
) -> Result<(Tensor, Vec<u32>), TensorError> {
    let (batch, channels, in_h, in_w) = input.dims4("maxpool2d")?;
    if window == 0 || in_h % window != 0 {
        return Err(TensorError::NotDivisible {
            context: "maxpool2d height",
            extent: in_h,
            divisor: window.max(1),
        });
    }
    if in_w % window != 0 {
        return Err(TensorError::NotDivisible {
            context: "maxpool2d width",
            extent: in_w,
            divisor: window,
        });
    }
    let (out_h, out_w) = (in_h / window, in_w / window);
    let mut out = Tensor::zeros(&[batch, channels, out_h, out_w]);
    let mut argmax = vec![0u32; out.len()];
    let data = input.data();

    let mut o = 0;
    for bc in 0..batch * channels {
        let plane = bc * in_h * in_w;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0usize;
                for wy in 0..window {
                    let row = plane + (oy * window + wy) * in_w + ox * window;
                    for wx in 0..window {
                        let v = data[row + wx];
                        if v > best {
                            best = v;
                            best_idx = row + wx;
                        }
                    }
                }
                out.data_mut()[o] = best;
                argmax[o] = best_idx as u32;
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

/// Scatter the output gradient back to each window's argmax position.
pub(crate) fn maxpool2d_backward(argmax: &[u32], grad_out: &[f32], input_len: usize) -> Vec<f32> {
    let mut dx = vec![0.0f32; input_len];
    for (&idx, &g) in argmax.iter().zip(grad_out.iter()) {
        dx[idx as usize] += g;
    }
    dx
}
