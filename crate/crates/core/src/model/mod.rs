//! Desk-scale architectures `h(x; θ)`, their layer typing and the training loss.

mod io;
mod params;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{batch_norm_train, conv2d, linear, softmax_cross_entropy};
use crate::autodiff::{ops, Array, Tensor};
use crate::error::{Error, Result};
use crate::rng;

pub use io::{read_params, read_params_from, write_params, write_params_to};
pub use params::{LayerParams, ModelParams, ModelUpdate, ParamSet};

pub const HIDDEN_UNITS: usize = 32;
pub const CNN_CHANNELS: usize = 8;
pub const CNN_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    /// fc(d_x → 32) – relu – fc(32 → classes)
    MlpSmall,
    /// conv – bn – relu – conv – bn – relu – fc
    CnnSmall,
    /// A single fc(d_x → classes) layer.
    Linear,
}

impl ArchKind {
    pub fn name(self) -> &'static str {
        match self {
            ArchKind::MlpSmall => "mlp_small",
            ArchKind::CnnSmall => "cnn_small",
            ArchKind::Linear => "linear",
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp_small" => Ok(ArchKind::MlpSmall),
            "cnn_small" => Ok(ArchKind::CnnSmall),
            "linear" => Ok(ArchKind::Linear),
            other => Err(Error::UnknownArchitecture(other.to_string())),
        }
    }
}

/// Per-sample input shape `(channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// A flat feature vector of length `d`.
    pub fn flat(d: usize) -> Self {
        Self {
            channels: 1,
            height: 1,
            width: d,
        }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    BatchNorm,
    FullyConnected,
}

/// One layer `l`: its kind and parameter slots. Conv and fc layers hold
/// `[weight, bias]`; batch-norm layers hold `[scale, shift]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub param_shapes: Vec<Vec<usize>>,
    pub fan_in: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ArchKind,
    pub input: InputShape,
    pub classes: usize,
}

/// Layer indices (0-based, forward order) of each kind.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerPartition {
    pub conv: Vec<usize>,
    pub batch_norm: Vec<usize>,
    pub fully_connected: Vec<usize>,
}

impl LayerPartition {
    pub fn num_layers(&self) -> usize {
        self.conv.len() + self.batch_norm.len() + self.fully_connected.len()
    }
}

impl Architecture {
    pub fn new(kind: ArchKind, input: InputShape, classes: usize) -> Result<Self> {
        if classes < 2 || input.numel() == 0 {
            return Err(Error::InvalidConfig(format!(
                "{kind} needs at least 2 classes and a non-empty input, got {classes} classes and {input:?}"
            )));
        }
        Ok(Self {
            kind,
            input,
            classes,
        })
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let fc = |inp: usize, out: usize| LayerSpec {
            kind: LayerKind::FullyConnected,
            param_shapes: vec![vec![out, inp], vec![out]],
            fan_in: inp,
        };
        let conv = |inp: usize, out: usize| LayerSpec {
            kind: LayerKind::Conv,
            param_shapes: vec![vec![out, inp, CNN_KERNEL, CNN_KERNEL], vec![out]],
            fan_in: inp * CNN_KERNEL * CNN_KERNEL,
        };
        let bn = |ch: usize| LayerSpec {
            kind: LayerKind::BatchNorm,
            param_shapes: vec![vec![ch], vec![ch]],
            fan_in: ch,
        };
        let d = self.input.numel();
        match self.kind {
            ArchKind::Linear => vec![fc(d, self.classes)],
            ArchKind::MlpSmall => vec![fc(d, HIDDEN_UNITS), fc(HIDDEN_UNITS, self.classes)],
            ArchKind::CnnSmall => {
                let flat = CNN_CHANNELS * self.input.height * self.input.width;
                vec![
                    conv(self.input.channels, CNN_CHANNELS),
                    bn(CNN_CHANNELS),
                    conv(CNN_CHANNELS, CNN_CHANNELS),
                    bn(CNN_CHANNELS),
                    fc(flat, self.classes),
                ]
            }
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers().len()
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .flat_map(|l| l.param_shapes.iter())
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Logits `[n, classes]` for a batch `x: [n, c, h, w]` (or `[n, d]` for
    /// the fully-connected models).
    pub fn forward(&self, params: &[Vec<Tensor>], x: &Tensor) -> Result<Tensor> {
        self.check_param_tensors(params)?;
        let n = x.shape()[0];
        if x.len() != n * self.input.numel() {
            return Err(Error::ArchitectureMismatch(format!(
                "batch of shape {:?} does not match input {:?}",
                x.shape(),
                self.input
            )));
        }
        let flat = |t: &Tensor| ops::reshape(t, vec![n, t.len() / n]);
        let fc = |t: &Tensor, p: &[Tensor]| linear(t, &p[0], Some(&p[1]));
        let out = match self.kind {
            ArchKind::Linear => fc(&flat(x)?, &params[0])?,
            ArchKind::MlpSmall => {
                let h = ops::relu(&fc(&flat(x)?, &params[0])?);
                fc(&h, &params[1])?
            }
            ArchKind::CnnSmall => {
                let pad = CNN_KERNEL / 2;
                let img = ops::reshape(
                    x,
                    vec![n, self.input.channels, self.input.height, self.input.width],
                )?;
                let h = conv2d(&img, &params[0][0], Some(&params[0][1]), 1, pad)?;
                let h = ops::relu(&batch_norm_train(&h, &params[1][0], &params[1][1])?);
                let h = conv2d(&h, &params[2][0], Some(&params[2][1]), 1, pad)?;
                let h = ops::relu(&batch_norm_train(&h, &params[3][0], &params[3][1])?);
                fc(&flat(&h)?, &params[4])?
            }
        };
        Ok(out)
    }

    fn check_param_tensors(&self, params: &[Vec<Tensor>]) -> Result<()> {
        let layers = self.layers();
        let ok = params.len() == layers.len()
            && params.iter().zip(&layers).all(|(p, spec)| {
                p.len() == spec.param_shapes.len()
                    && p.iter()
                        .zip(&spec.param_shapes)
                        .all(|(t, s)| t.shape() == s.as_slice())
            });
        if ok {
            Ok(())
        } else {
            Err(Error::ArchitectureMismatch(format!(
                "parameters do not fit {}",
                self.kind
            )))
        }
    }

    /// Zero-valued parameters of this architecture.
    pub fn zeros(&self) -> ParamSet {
        ParamSet::new(
            self.layers()
                .into_iter()
                .map(|spec| LayerParams {
                    kind: spec.kind,
                    tensors: spec.param_shapes.iter().map(|s| Array::zeros(s)).collect(),
                })
                .collect(),
        )
    }
}

/// Builds an architecture and draws its parameters.
///
/// Weights and biases of conv/fc layers are uniform on `[-a, a]` with
/// `a = 1/sqrt(fan_in)`; batch-norm scale starts at 1 and shift at 0.
pub fn build_model(
    kind: ArchKind,
    input: InputShape,
    classes: usize,
    seed: u64,
) -> Result<(Architecture, ModelParams)> {
    let arch = Architecture::new(kind, input, classes)?;
    let mut rng = rng::rng_from(seed);
    let layers = arch
        .layers()
        .into_iter()
        .map(|spec| {
            let bound = 1.0 / (spec.fan_in as f64).sqrt();
            let tensors = spec
                .param_shapes
                .iter()
                .enumerate()
                .map(|(slot, shape)| match (spec.kind, slot) {
                    (LayerKind::BatchNorm, 0) => Array::full(shape, 1.0),
                    (LayerKind::BatchNorm, _) => Array::zeros(shape),
                    _ => {
                        let n = shape.iter().product();
                        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
                        Array::from_parts(shape.clone(), data)
                    }
                })
                .collect();
            LayerParams {
                kind: spec.kind,
                tensors,
            }
        })
        .collect();
    Ok((arch, ParamSet::new(layers)))
}

/// One-hot target rows for hard labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Array> {
    let mut out = Array::zeros(&[labels.len(), classes]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        out.data_mut()[i * classes + y] = 1.0;
    }
    Ok(out)
}

/// Mean softmax cross-entropy of the batch against target distributions `[n, classes]`.
pub fn forward_loss_soft(
    arch: &Architecture,
    params: &[Vec<Tensor>],
    x: &Tensor,
    targets: &Tensor,
) -> Result<Tensor> {
    let logits = arch.forward(params, x)?;
    Ok(softmax_cross_entropy(&logits, targets)?)
}

/// Mean softmax cross-entropy of the batch against class-index labels.
pub fn forward_loss(
    arch: &Architecture,
    params: &[Vec<Tensor>],
    x: &Tensor,
    labels: &[usize],
) -> Result<Tensor> {
    if labels.len() != x.shape()[0] {
        return Err(Error::ArchitectureMismatch(format!(
            "{} labels for a batch of {}",
            labels.len(),
            x.shape()[0]
        )));
    }
    let targets = Tensor::constant(one_hot(labels, arch.classes)?);
    forward_loss_soft(arch, params, x, &targets)
}

/// Splits layer indices by kind, each list in forward order. Position `r`
/// within a list is the per-kind rank used by the weight schedules.
pub fn layer_partition(arch: &Architecture) -> LayerPartition {
    let mut part = LayerPartition::default();
    for (i, spec) in arch.layers().iter().enumerate() {
        match spec.kind {
            LayerKind::Conv => part.conv.push(i),
            LayerKind::BatchNorm => part.batch_norm.push(i),
            LayerKind::FullyConnected => part.fully_connected.push(i),
        }
    }
    part
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn cnn() -> (Architecture, ModelParams) {
        build_model(ArchKind::CnnSmall, InputShape::new(3, 4, 4), 10, 1).unwrap()
    }

    #[test]
    fn cnn_layer_kind_counts() {
        let part = layer_partition(&cnn().0);
        assert_eq!(part.conv, vec![0, 2]);
        assert_eq!(part.batch_norm, vec![1, 3]);
        assert_eq!(part.fully_connected, vec![4]);
        assert_eq!(part.num_layers(), 5);
    }

    #[test]
    fn mlp_partition_is_all_fc() {
        let (arch, _) = build_model(ArchKind::MlpSmall, InputShape::flat(12), 4, 0).unwrap();
        let part = layer_partition(&arch);
        assert!(part.conv.is_empty() && part.batch_norm.is_empty());
        assert_eq!(part.fully_connected, vec![0, 1]);
    }

    #[test]
    fn mlp_parameter_count() {
        let (arch, params) = build_model(ArchKind::MlpSmall, InputShape::flat(12), 4, 0).unwrap();
        assert_eq!(arch.param_count(), 12 * 32 + 32 + 32 * 4 + 4);
        assert_eq!(params.param_count(), 548);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = cnn().1;
        let b = cnn().1;
        assert_eq!(a, b);
        let c = build_model(ArchKind::CnnSmall, InputShape::new(3, 4, 4), 10, 2)
            .unwrap()
            .1;
        assert_ne!(a, c);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let (arch, params) = cnn();
        for (spec, layer) in arch.layers().iter().zip(params.layers()) {
            if spec.kind == LayerKind::BatchNorm {
                assert!(layer.tensors[0].data().iter().all(|&v| v == 1.0));
                continue;
            }
            let a = 1.0 / (spec.fan_in as f64).sqrt();
            assert!(layer
                .tensors
                .iter()
                .flat_map(|t| t.data())
                .all(|v| v.abs() <= a));
        }
    }

    #[test]
    fn unknown_arch_is_rejected() {
        assert!(matches!(
            "resnet18".parse::<ArchKind>(),
            Err(Error::UnknownArchitecture(_))
        ));
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        let (arch, params) = build_model(ArchKind::Linear, InputShape::flat(5), 10, 0).unwrap();
        let zero = arch.zeros();
        let x = Tensor::constant(Array::full(&[1, 5], 0.3));
        let loss = forward_loss(&arch, &zero.to_tensors(None), &x, &[3]).unwrap();
        assert!((loss.item() - 10f64.ln()).abs() < 1e-12);
        assert!(
            forward_loss(&arch, &params.to_tensors(None), &x, &[3])
                .unwrap()
                .item()
                >= 0.0
        );
    }

    #[test]
    fn label_out_of_range() {
        let (arch, params) = build_model(ArchKind::Linear, InputShape::flat(5), 3, 0).unwrap();
        let x = Tensor::constant(Array::full(&[1, 5], 0.3));
        let err = forward_loss(&arch, &params.to_tensors(None), &x, &[3]).unwrap_err();
        assert!(matches!(
            err,
            Error::LabelOutOfRange {
                label: 3,
                classes: 3
            }
        ));
    }

    #[test]
    fn loss_is_differentiable_in_params_and_input() {
        let (arch, params) = cnn();
        let tape = Tape::new();
        let p = params.to_tensors(Some(&tape));
        let x = tape.leaf(Array::full(&[2, 3, 4, 4], 0.5));
        let loss = forward_loss(&arch, &p, &x, &[1, 2]).unwrap();
        let mut wrt: Vec<Tensor> = p.iter().flatten().cloned().collect();
        wrt.push(x);
        let g = crate::autodiff::grad(&loss, &wrt, false).unwrap();
        assert!(g.unreachable.is_empty());
    }
}
