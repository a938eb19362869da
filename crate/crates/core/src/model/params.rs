use crate::autodiff::{Array, Tape, Tensor};
use crate::error::{Error, Result};

use super::LayerKind;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub tensors: Vec<Array>,
}

impl LayerParams {
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Array::len).sum()
    }

    /// All scalar entries of the layer, slot by slot.
    pub fn values(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        self.tensors.iter().flat_map(|t| t.data().iter().copied())
    }
}

/// Layer-ordered parameter collection. The same shape carries parameters
/// `θ` and updates `Δθ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    layers: Vec<LayerParams>,
}

pub type ModelParams = ParamSet;
pub type ModelUpdate = ParamSet;

impl ParamSet {
    pub fn new(layers: Vec<LayerParams>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::numel).sum()
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind).collect()
    }

    /// True when both sets have the same layer kinds and tensor shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.kind == b.kind
                    && a.tensors.len() == b.tensors.len()
                    && a.tensors
                        .iter()
                        .zip(&b.tensors)
                        .all(|(x, y)| x.shape() == y.shape())
            })
    }

    pub fn zip_with(&self, other: &ParamSet, f: impl Fn(f64, f64) -> f64) -> Result<ParamSet> {
        if !self.same_layout(other) {
            return Err(Error::ArchitectureMismatch(
                "parameter sets have different layouts".into(),
            ));
        }
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| LayerParams {
                kind: a.kind,
                tensors: a
                    .tensors
                    .iter()
                    .zip(&b.tensors)
                    .map(|(x, y)| x.zip(y, &f))
                    .collect(),
            })
            .collect();
        Ok(ParamSet { layers })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ParamSet {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerParams {
                kind: l.kind,
                tensors: l.tensors.iter().map(|t| t.map(&f)).collect(),
            })
            .collect();
        ParamSet { layers }
    }

    pub fn sub(&self, other: &ParamSet) -> Result<ParamSet> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &ParamSet) -> Result<ParamSet> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> ParamSet {
        self.map(|v| v * c)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(LayerParams::values)
    }

    pub fn squared_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f64> {
        Ok(self.sub(other)?.values().fold(0.0, |m, v| m.max(v.abs())))
    }

    /// Tensors per layer. With a tape, every tensor becomes a differentiable leaf.
    pub fn to_tensors(&self, tape: Option<&Tape>) -> Vec<Vec<Tensor>> {
        self.layers
            .iter()
            .map(|l| {
                l.tensors
                    .iter()
                    .map(|t| match tape {
                        Some(tape) => tape.leaf(t.clone()),
                        None => Tensor::constant(t.clone()),
                    })
                    .collect()
            })
            .collect()
    }

    /// Snapshot of tensor values laid out like `template`.
    pub fn from_tensors(template: &ParamSet, tensors: &[Vec<Tensor>]) -> ParamSet {
        let layers = template
            .layers
            .iter()
            .zip(tensors)
            .map(|(l, ts)| LayerParams {
                kind: l.kind,
                tensors: ts.iter().map(|t| t.value().clone()).collect(),
            })
            .collect();
        ParamSet { layers }
    }
}
