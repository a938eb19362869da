//! Neural-network primitives composed from the differentiable core operations.

use super::kernels::ConvGeom;
use super::ops::{
    self, axis_broadcast, axis_sum, im2col_unchecked, matmul_t, reshape, transpose_last2,
};
use super::{AutodiffError, Tensor};

/// Variance epsilon of [`batch_norm_train`].
pub const BN_EPSILON: f64 = 1e-5;

/// 2-D cross-correlation of `x: [n, c, h, w]` with `weight: [out, c, k, k]` plus an optional
/// per-output-channel bias. Output is `[n, out, oh, ow]`.
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor, AutodiffError> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || xs[1] != ws[1] {
        return Err(AutodiffError::ShapeMismatch {
            op: "conv2d",
            detail: format!("input {:?} is incompatible with kernel {:?}", xs, ws),
        });
    }
    let out_ch = ws[0];
    if let Some(b) = bias {
        if b.shape() != [out_ch] {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "bias {:?} does not match {} output channels",
                    b.shape(),
                    out_ch
                ),
            });
        }
    }
    let geom =
        ConvGeom::new(xs, ws[2], stride, pad).ok_or_else(|| AutodiffError::ShapeMismatch {
            op: "conv2d",
            detail: format!(
                "kernel {} with stride {} and padding {} does not fit input {:?}",
                ws[2], stride, pad, xs
            ),
        })?;
    let cols = im2col_unchecked(x, geom);
    let wmat = reshape(weight, vec![out_ch, geom.patch()])?;
    let rows = matmul_t(&cols, &wmat, false, true)?;
    let rows = reshape(&rows, vec![geom.n, geom.oh * geom.ow, out_ch])?;
    let planes = transpose_last2(&rows)?;
    let out = reshape(&planes, vec![geom.n, out_ch, geom.oh, geom.ow])?;
    match bias {
        Some(b) => ops::add(&out, &axis_broadcast(b, out.shape(), 1)?),
        None => Ok(out),
    }
}

/// Fully-connected layer: `x: [n, in]`, `weight: [out, in]`, `bias: [out]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor, AutodiffError> {
    let out = matmul_t(x, weight, false, true).map_err(|e| match e {
        AutodiffError::ShapeMismatch { detail, .. } => AutodiffError::ShapeMismatch {
            op: "linear",
            detail,
        },
        other => other,
    })?;
    match bias {
        Some(b) => ops::add(&out, &axis_broadcast(b, out.shape(), 1)?),
        None => Ok(out),
    }
}

/// Training-mode batch normalization over axis 1 using the current batch
/// statistics (population variance, no running averages).
///
/// Accepts `[n, c]` or `[n, c, h, w]`. Each channel needs at least two values
/// across batch and spatial positions.
pub fn batch_norm_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<Tensor, AutodiffError> {
    let s = x.shape();
    if s.len() < 2 || gamma.shape() != [s[1]] || beta.shape() != [s[1]] {
        return Err(AutodiffError::ShapeMismatch {
            op: "batch_norm_train",
            detail: format!(
                "input {:?} with scale {:?} and shift {:?}",
                s,
                gamma.shape(),
                beta.shape()
            ),
        });
    }
    let per_channel = x.len() / s[1];
    if per_channel < 2 {
        return Err(AutodiffError::ShapeMismatch {
            op: "batch_norm_train",
            detail: format!("input {:?} has fewer than 2 values per channel", s),
        });
    }
    let inv_count = 1.0 / per_channel as f64;
    let mean = ops::scale(&axis_sum(x, 1)?, inv_count);
    let centered = ops::sub(x, &axis_broadcast(&mean, s, 1)?)?;
    let var = ops::scale(&axis_sum(&ops::mul(&centered, &centered)?, 1)?, inv_count);
    let inv_std = ops::powf(&ops::add_scalar(&var, BN_EPSILON), -0.5);
    let normalized = ops::mul(&centered, &axis_broadcast(&inv_std, s, 1)?)?;
    let scaled = ops::mul(&normalized, &axis_broadcast(gamma, s, 1)?)?;
    ops::add(&scaled, &axis_broadcast(beta, s, 1)?)
}

/// Mean cross-entropy between row-wise softmax of `logits: [n, k]` and target
/// distributions `targets: [n, k]` (one-hot rows for hard labels).
pub fn softmax_cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<Tensor, AutodiffError> {
    if logits.shape().len() != 2 || logits.shape() != targets.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op: "softmax_cross_entropy",
            detail: format!(
                "logits {:?} vs targets {:?}",
                logits.shape(),
                targets.shape()
            ),
        });
    }
    let log_probs = ops::log_softmax(logits)?;
    let total = ops::sum_all(&ops::mul(targets, &log_probs)?);
    Ok(ops::scale(&total, -1.0 / logits.shape()[0] as f64))
}

/// Row-wise softmax of a 2-D tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor, AutodiffError> {
    Ok(ops::exp(&ops::log_softmax(logits)?))
}
