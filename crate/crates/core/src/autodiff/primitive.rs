use super::{nn, ops, AutodiffError, Tensor};

/// The primitive set the model zoo is built from, addressable by kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Matmul,
    Conv2d {
        stride: usize,
        pad: usize,
    },
    Add,
    Sub,
    Scale(f64),
    Relu,
    Mean,
    Reshape(Vec<usize>),
    /// Inputs: `x`, `gamma`, `beta`.
    BatchNormTrain,
    /// Inputs: `logits`, `targets`.
    SoftmaxCrossEntropy,
    SumOfSquares,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Matmul => "matmul",
            Primitive::Conv2d { .. } => "conv2d",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Scale(_) => "scale",
            Primitive::Relu => "relu",
            Primitive::Mean => "mean",
            Primitive::Reshape(_) => "reshape",
            Primitive::BatchNormTrain => "batch_norm_train",
            Primitive::SoftmaxCrossEntropy => "softmax_cross_entropy",
            Primitive::SumOfSquares => "sum_of_squares",
        }
    }

    fn arity(&self) -> std::ops::RangeInclusive<usize> {
        match self {
            Primitive::Matmul
            | Primitive::Add
            | Primitive::Sub
            | Primitive::SoftmaxCrossEntropy => 2..=2,
            Primitive::Conv2d { .. } => 2..=3,
            Primitive::BatchNormTrain => 3..=3,
            _ => 1..=1,
        }
    }
}

/// Evaluates one primitive on `inputs`, recording it when any input requires grad.
pub fn forward_primitive(kind: &Primitive, inputs: &[Tensor]) -> Result<Tensor, AutodiffError> {
    let arity = kind.arity();
    if !arity.contains(&inputs.len()) {
        return Err(AutodiffError::Arity {
            primitive: kind.name(),
            expected: *arity.start(),
            got: inputs.len(),
        });
    }
    let x = &inputs[0];
    match kind {
        Primitive::Matmul => ops::matmul(x, &inputs[1]),
        Primitive::Conv2d { stride, pad } => {
            nn::conv2d(x, &inputs[1], inputs.get(2), *stride, *pad)
        }
        Primitive::Add => ops::add(x, &inputs[1]),
        Primitive::Sub => ops::sub(x, &inputs[1]),
        Primitive::Scale(c) => Ok(ops::scale(x, *c)),
        Primitive::Relu => Ok(ops::relu(x)),
        Primitive::Mean => Ok(ops::mean(x)),
        Primitive::Reshape(shape) => ops::reshape(x, shape.clone()),
        Primitive::BatchNormTrain => nn::batch_norm_train(x, &inputs[1], &inputs[2]),
        Primitive::SoftmaxCrossEntropy => nn::softmax_cross_entropy(x, &inputs[1]),
        Primitive::SumOfSquares => Ok(ops::sum_of_squares(x)),
    }
}
