//! Primitive operations and their vector-Jacobian products.
//!
//! Every VJP is written with the same differentiable operations it
//! differentiates, so a backward pass run while the tape is recording yields
//! gradients that can be differentiated again.

use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::{Array, AutodiffError, Tensor};

#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    Powf(Tensor, f64),
    Exp(Tensor),
    Relu(Tensor),
    Matmul {
        a: Tensor,
        b: Tensor,
        ta: bool,
        tb: bool,
    },
    Reshape(Tensor),
    SumAll(Tensor),
    Expand(Tensor),
    AxisSum {
        x: Tensor,
        axis: usize,
    },
    AxisBroadcast {
        v: Tensor,
        axis: usize,
    },
    TransposeLast2(Tensor),
    Im2col {
        x: Tensor,
        geom: ConvGeom,
    },
    Col2im {
        cols: Tensor,
        geom: ConvGeom,
    },
    SliceRows {
        x: Tensor,
        start: usize,
    },
    PadRows {
        x: Tensor,
        start: usize,
    },
    /// `out[i] = x[order[i]]` along the leading axis; `order` is a permutation.
    PermuteRows {
        x: Tensor,
        order: Vec<usize>,
    },
    LogSoftmax(Tensor),
    SumSquares(Tensor),
}

impl Op {
    pub(crate) fn for_each_input(&self, mut f: impl FnMut(&Tensor)) {
        match self {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul { a, b, .. } => {
                f(a);
                f(b);
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Powf(a, _)
            | Op::Exp(a)
            | Op::Relu(a)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::Expand(a)
            | Op::AxisSum { x: a, .. }
            | Op::AxisBroadcast { v: a, .. }
            | Op::TransposeLast2(a)
            | Op::Im2col { x: a, .. }
            | Op::Col2im { cols: a, .. }
            | Op::SliceRows { x: a, .. }
            | Op::PadRows { x: a, .. }
            | Op::PermuteRows { x: a, .. }
            | Op::LogSoftmax(a)
            | Op::SumSquares(a) => f(a),
        }
    }

    pub(crate) fn for_each_input_mut(&mut self, mut f: impl FnMut(&mut Tensor)) {
        match self {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul { a, b, .. } => {
                f(a);
                f(b);
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Powf(a, _)
            | Op::Exp(a)
            | Op::Relu(a)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::Expand(a)
            | Op::AxisSum { x: a, .. }
            | Op::AxisBroadcast { v: a, .. }
            | Op::TransposeLast2(a)
            | Op::Im2col { x: a, .. }
            | Op::Col2im { cols: a, .. }
            | Op::SliceRows { x: a, .. }
            | Op::PadRows { x: a, .. }
            | Op::PermuteRows { x: a, .. }
            | Op::LogSoftmax(a)
            | Op::SumSquares(a) => f(a),
        }
    }

    /// Gradients for each input (in `for_each_input` order) given the upstream
    /// gradient `g` of this node's output `out`. Inputs for which `needs`
    /// returns false get `None`.
    pub(crate) fn vjp(
        &self,
        out: &Tensor,
        g: &Tensor,
        needs: &dyn Fn(&Tensor) -> bool,
    ) -> Vec<Option<Tensor>> {
        let want = |t: &Tensor| needs(t);
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![want(a).then(|| g.clone()), want(b).then(|| g.clone())],
            Op::Sub(a, b) => vec![
                want(a).then(|| g.clone()),
                want(b).then(|| scale_unchecked(g, -1.0)),
            ],
            Op::Mul(a, b) => vec![
                want(a).then(|| mul_unchecked(g, b)),
                want(b).then(|| mul_unchecked(g, a)),
            ],
            Op::Scale(a, c) => vec![want(a).then(|| scale_unchecked(g, *c))],
            Op::AddScalar(a) => vec![want(a).then(|| g.clone())],
            Op::Powf(a, p) => vec![want(a).then(|| {
                let d = scale_unchecked(&powf_unchecked(a, p - 1.0), *p);
                mul_unchecked(g, &d)
            })],
            Op::Exp(a) => vec![want(a).then(|| mul_unchecked(g, out))],
            Op::Relu(a) => vec![want(a).then(|| {
                let mask = a.value().map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                mul_unchecked(g, &Tensor::constant(mask))
            })],
            Op::Matmul { a, b, ta, tb } => {
                let (ta, tb) = (*ta, *tb);
                let ga = want(a).then(|| {
                    if ta {
                        matmul_unchecked(b, g, tb, true)
                    } else {
                        matmul_unchecked(g, b, false, !tb)
                    }
                });
                let gb = want(b).then(|| {
                    if tb {
                        matmul_unchecked(g, a, true, ta)
                    } else {
                        matmul_unchecked(a, g, !ta, false)
                    }
                });
                vec![ga, gb]
            }
            Op::Reshape(a) => vec![want(a).then(|| reshape_unchecked(g, a.shape().to_vec()))],
            Op::SumAll(a) => vec![want(a).then(|| expand_unchecked(g, a.shape()))],
            Op::Expand(a) => {
                vec![want(a).then(|| reshape_unchecked(&sum_all_unchecked(g), a.shape().to_vec()))]
            }
            Op::AxisSum { x, axis } => {
                vec![want(x).then(|| axis_broadcast_unchecked(g, x.shape(), *axis))]
            }
            Op::AxisBroadcast { v, axis } => vec![want(v).then(|| axis_sum_unchecked(g, *axis))],
            Op::TransposeLast2(a) => vec![want(a).then(|| transpose_last2_unchecked(g))],
            Op::Im2col { x, geom } => vec![want(x).then(|| col2im_unchecked(g, *geom))],
            Op::Col2im { cols, geom } => vec![want(cols).then(|| im2col_unchecked(g, *geom))],
            Op::SliceRows { x, start } => {
                vec![want(x).then(|| pad_rows_unchecked(g, *start, x.shape()[0]))]
            }
            Op::PadRows { x, start } => {
                vec![want(x).then(|| slice_rows_unchecked(g, *start, start + x.shape()[0]))]
            }
            Op::PermuteRows { x, order } => vec![want(x).then(|| {
                let mut inverse = vec![0; order.len()];
                for (i, &o) in order.iter().enumerate() {
                    inverse[o] = i;
                }
                permute_rows_unchecked(g, inverse)
            })],
            Op::LogSoftmax(a) => vec![want(a).then(|| {
                let probs = exp_unchecked(out);
                let row_total = axis_broadcast_unchecked(&axis_sum_unchecked(g, 0), g.shape(), 0);
                sub_unchecked(g, &mul_unchecked(&probs, &row_total))
            })],
            Op::SumSquares(a) => vec![want(a)
                .then(|| mul_unchecked(&expand_unchecked(g, a.shape()), &scale_unchecked(a, 2.0)))],
        }
    }
}

/// Attaches `value` to the tape of the first recording input, or returns a constant.
fn record(value: Array, inputs: &[&Tensor], op: impl FnOnce() -> Op) -> Tensor {
    for t in inputs {
        if let Some(tape) = t.tape() {
            if tape.is_recording() {
                return tape.push(op(), Rc::new(value));
            }
        }
    }
    Tensor::constant(value)
}

fn check_tapes(op: &'static str, inputs: &[&Tensor]) -> Result<(), AutodiffError> {
    let mut tapes = inputs.iter().filter_map(|t| t.tape());
    if let Some(first) = tapes.next() {
        if tapes.any(|t| !t.same(first)) {
            return Err(AutodiffError::MixedTapes { op });
        }
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            detail: format!("operands have shapes {:?} and {:?}", a.shape(), b.shape()),
        });
    }
    check_tapes(op, &[a, b])
}

// ---------------------------------------------------------------------------
// elementwise

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
    same_shape("add", a, b)?;
    Ok(add_unchecked(a, b))
}

pub(crate) fn add_unchecked(a: &Tensor, b: &Tensor) -> Tensor {
    let v = a.value().zip(b.value(), |x, y| x + y);
    record(v, &[a, b], || Op::Add(a.clone(), b.clone()))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
    same_shape("sub", a, b)?;
    Ok(sub_unchecked(a, b))
}

pub(crate) fn sub_unchecked(a: &Tensor, b: &Tensor) -> Tensor {
    let v = a.value().zip(b.value(), |x, y| x - y);
    record(v, &[a, b], || Op::Sub(a.clone(), b.clone()))
}

/// Elementwise (Hadamard) product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
    same_shape("mul", a, b)?;
    Ok(mul_unchecked(a, b))
}

pub(crate) fn mul_unchecked(a: &Tensor, b: &Tensor) -> Tensor {
    let v = a.value().zip(b.value(), |x, y| x * y);
    record(v, &[a, b], || Op::Mul(a.clone(), b.clone()))
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    scale_unchecked(a, c)
}

pub(crate) fn scale_unchecked(a: &Tensor, c: f64) -> Tensor {
    let v = a.value().map(|x| x * c);
    record(v, &[a], || Op::Scale(a.clone(), c))
}

pub fn add_scalar(a: &Tensor, c: f64) -> Tensor {
    let v = a.value().map(|x| x + c);
    record(v, &[a], || Op::AddScalar(a.clone()))
}

/// Elementwise power with a fixed real exponent.
pub fn powf(a: &Tensor, p: f64) -> Tensor {
    powf_unchecked(a, p)
}

fn powf_unchecked(a: &Tensor, p: f64) -> Tensor {
    let v = a.value().map(|x| x.powf(p));
    record(v, &[a], || Op::Powf(a.clone(), p))
}

pub fn exp(a: &Tensor) -> Tensor {
    exp_unchecked(a)
}

fn exp_unchecked(a: &Tensor) -> Tensor {
    let v = a.value().map(f64::exp);
    record(v, &[a], || Op::Exp(a.clone()))
}

/// `max(x, 0)`; the backward pass uses subgradient 0 at exactly 0.
pub fn relu(a: &Tensor) -> Tensor {
    let v = a.value().map(|x| if x > 0.0 { x } else { 0.0 });
    record(v, &[a], || Op::Relu(a.clone()))
}

// ---------------------------------------------------------------------------
// linear algebra and layout

/// `op(a) · op(b)` for 2-D tensors, where `op` optionally transposes.
pub fn matmul_t(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor, AutodiffError> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(AutodiffError::ShapeMismatch {
            op: "matmul",
            detail: format!(
                "expected 2-D operands, got {:?} and {:?}",
                a.shape(),
                b.shape()
            ),
        });
    }
    let inner_a = if ta { a.shape()[0] } else { a.shape()[1] };
    let inner_b = if tb { b.shape()[1] } else { b.shape()[0] };
    if inner_a != inner_b {
        return Err(AutodiffError::ShapeMismatch {
            op: "matmul",
            detail: format!(
                "inner dimensions differ: {:?}{} x {:?}{}",
                a.shape(),
                if ta { "^T" } else { "" },
                b.shape(),
                if tb { "^T" } else { "" }
            ),
        });
    }
    check_tapes("matmul", &[a, b])?;
    Ok(matmul_unchecked(a, b, ta, tb))
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
    matmul_t(a, b, false, false)
}

pub(crate) fn matmul_unchecked(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    let v = kernels::matmul(a.value(), b.value(), ta, tb);
    record(v, &[a, b], || Op::Matmul {
        a: a.clone(),
        b: b.clone(),
        ta,
        tb,
    })
}

pub fn reshape(a: &Tensor, shape: Vec<usize>) -> Result<Tensor, AutodiffError> {
    if shape.iter().product::<usize>() != a.len() || shape.contains(&0) {
        return Err(AutodiffError::ShapeMismatch {
            op: "reshape",
            detail: format!("cannot view {:?} as {:?}", a.shape(), shape),
        });
    }
    Ok(reshape_unchecked(a, shape))
}

pub(crate) fn reshape_unchecked(a: &Tensor, shape: Vec<usize>) -> Tensor {
    if a.shape() == shape.as_slice() {
        return a.clone();
    }
    let v = Array::from_parts(shape, a.data().to_vec());
    record(v, &[a], || Op::Reshape(a.clone()))
}

/// Swaps the last two axes of a 3-D tensor.
pub fn transpose_last2(a: &Tensor) -> Result<Tensor, AutodiffError> {
    if a.shape().len() != 3 {
        return Err(AutodiffError::ShapeMismatch {
            op: "transpose_last2",
            detail: format!("expected a 3-D tensor, got {:?}", a.shape()),
        });
    }
    Ok(transpose_last2_unchecked(a))
}

fn transpose_last2_unchecked(a: &Tensor) -> Tensor {
    let v = kernels::transpose_last2(a.value());
    record(v, &[a], || Op::TransposeLast2(a.clone()))
}

// ---------------------------------------------------------------------------
// reductions and broadcasts

pub fn sum_all(a: &Tensor) -> Tensor {
    sum_all_unchecked(a)
}

fn sum_all_unchecked(a: &Tensor) -> Tensor {
    let v = Array::scalar(a.data().iter().sum());
    record(v, &[a], || Op::SumAll(a.clone()))
}

/// Arithmetic mean of all entries, as a one-element tensor.
pub fn mean(a: &Tensor) -> Tensor {
    scale_unchecked(&sum_all_unchecked(a), 1.0 / a.len() as f64)
}

/// Sum of squared entries, as a one-element tensor.
pub fn sum_of_squares(a: &Tensor) -> Tensor {
    let v = Array::scalar(a.data().iter().map(|x| x * x).sum());
    record(v, &[a], || Op::SumSquares(a.clone()))
}

/// Repeats a one-element tensor to `shape`.
pub fn expand(a: &Tensor, shape: &[usize]) -> Result<Tensor, AutodiffError> {
    if a.len() != 1 {
        return Err(AutodiffError::ShapeMismatch {
            op: "expand",
            detail: format!("source must hold one element, got {:?}", a.shape()),
        });
    }
    Ok(expand_unchecked(a, shape))
}

fn expand_unchecked(a: &Tensor, shape: &[usize]) -> Tensor {
    let v = Array::full(shape, a.item());
    record(v, &[a], || Op::Expand(a.clone()))
}

/// Sums over every axis except `axis`; the result has shape `[shape[axis]]`.
pub fn axis_sum(a: &Tensor, axis: usize) -> Result<Tensor, AutodiffError> {
    if axis >= a.shape().len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "axis_sum",
            detail: format!("axis {} out of range for {:?}", axis, a.shape()),
        });
    }
    Ok(axis_sum_unchecked(a, axis))
}

fn axis_sum_unchecked(a: &Tensor, axis: usize) -> Tensor {
    let v = kernels::axis_sum(a.value(), axis);
    record(v, &[a], || Op::AxisSum { x: a.clone(), axis })
}

/// Broadcasts a 1-D tensor of length `shape[axis]` along every other axis of `shape`.
pub fn axis_broadcast(v: &Tensor, shape: &[usize], axis: usize) -> Result<Tensor, AutodiffError> {
    if v.shape().len() != 1 || axis >= shape.len() || shape[axis] != v.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "axis_broadcast",
            detail: format!(
                "cannot broadcast {:?} along axis {} of {:?}",
                v.shape(),
                axis,
                shape
            ),
        });
    }
    Ok(axis_broadcast_unchecked(v, shape, axis))
}

fn axis_broadcast_unchecked(v: &Tensor, shape: &[usize], axis: usize) -> Tensor {
    let out = kernels::axis_broadcast(v.value(), shape, axis);
    record(out, &[v], || Op::AxisBroadcast { v: v.clone(), axis })
}

// ---------------------------------------------------------------------------
// batching

/// Rows `start..end` along the leading axis.
pub fn slice_rows(a: &Tensor, start: usize, end: usize) -> Result<Tensor, AutodiffError> {
    if start >= end || end > a.shape()[0] {
        return Err(AutodiffError::ShapeMismatch {
            op: "slice_rows",
            detail: format!("rows {}..{} out of range for {:?}", start, end, a.shape()),
        });
    }
    Ok(slice_rows_unchecked(a, start, end))
}

fn slice_rows_unchecked(a: &Tensor, start: usize, end: usize) -> Tensor {
    if start == 0 && end == a.shape()[0] {
        return a.clone();
    }
    let row: usize = a.shape()[1..].iter().product();
    let mut shape = a.shape().to_vec();
    shape[0] = end - start;
    let v = Array::from_parts(shape, a.data()[start * row..end * row].to_vec());
    record(v, &[a], || Op::SliceRows {
        x: a.clone(),
        start,
    })
}

/// Embeds `a` at rows `start..` of a zero tensor with `total` rows.
fn pad_rows_unchecked(a: &Tensor, start: usize, total: usize) -> Tensor {
    if start == 0 && total == a.shape()[0] {
        return a.clone();
    }
    let row: usize = a.shape()[1..].iter().product();
    let mut shape = a.shape().to_vec();
    shape[0] = total;
    let mut data = vec![0.0; total * row];
    data[start * row..start * row + a.len()].copy_from_slice(a.data());
    let v = Array::from_parts(shape, data);
    record(v, &[a], || Op::PadRows {
        x: a.clone(),
        start,
    })
}

/// Reorders rows along the leading axis: row `i` of the result is row
/// `order[i]` of `a`.
pub fn permute_rows(a: &Tensor, order: &[usize]) -> Result<Tensor, AutodiffError> {
    let n = a.shape().first().copied().unwrap_or(0);
    let mut seen = vec![false; n];
    let valid = order.len() == n
        && order
            .iter()
            .all(|&o| o < n && !std::mem::replace(&mut seen[o], true));
    if !valid {
        return Err(AutodiffError::ShapeMismatch {
            op: "permute_rows",
            detail: format!(
                "{order:?} is not a permutation of the {n} rows of {:?}",
                a.shape()
            ),
        });
    }
    Ok(permute_rows_unchecked(a, order.to_vec()))
}

fn permute_rows_unchecked(a: &Tensor, order: Vec<usize>) -> Tensor {
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return a.clone();
    }
    let row: usize = a.shape()[1..].iter().product();
    let src = a.data();
    let mut data = Vec::with_capacity(src.len());
    for &o in &order {
        data.extend_from_slice(&src[o * row..(o + 1) * row]);
    }
    let v = Array::from_parts(a.shape().to_vec(), data);
    record(v, &[a], || Op::PermuteRows {
        x: a.clone(),
        order,
    })
}

// ---------------------------------------------------------------------------
// convolution

pub(crate) fn im2col_unchecked(x: &Tensor, geom: ConvGeom) -> Tensor {
    let v = kernels::im2col(x.value(), &geom);
    record(v, &[x], || Op::Im2col { x: x.clone(), geom })
}

fn col2im_unchecked(cols: &Tensor, geom: ConvGeom) -> Tensor {
    let v = kernels::col2im(cols.value(), &geom);
    record(v, &[cols], || Op::Col2im {
        cols: cols.clone(),
        geom,
    })
}

// ---------------------------------------------------------------------------
// softmax

/// Row-wise `log(softmax(x))` for a 2-D tensor.
pub fn log_softmax(a: &Tensor) -> Result<Tensor, AutodiffError> {
    if a.shape().len() != 2 {
        return Err(AutodiffError::ShapeMismatch {
            op: "log_softmax",
            detail: format!("expected [batch, classes], got {:?}", a.shape()),
        });
    }
    let v = kernels::log_softmax(a.value());
    Ok(record(v, &[a], || Op::LogSoftmax(a.clone())))
}
