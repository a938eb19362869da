//! Flat binary persistence for parameter sets.
//!
//! Layout (all integers little-endian `u32`, floats little-endian `f64`):
//!
//! ```text
//! magic    b"AWAPARAM"
//! version  1
//! name_len, name bytes (architecture name)
//! channels, height, width, classes
//! L
//! per layer: kind (u8: 0 conv, 1 batch_norm, 2 fully_connected), slot count,
//!            per slot: rank, dims...
//! payload: every tensor row-major in layer/slot order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ArchKind, Architecture, InputShape, LayerKind, LayerParams, ParamSet};
use crate::autodiff::Array;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"AWAPARAM";
const VERSION: u32 = 1;

fn kind_code(kind: LayerKind) -> u8 {
    match kind {
        LayerKind::Conv => 0,
        LayerKind::BatchNorm => 1,
        LayerKind::FullyConnected => 2,
    }
}

fn u32_of(v: usize) -> Result<[u8; 4]> {
    u32::try_from(v).map(u32::to_le_bytes).map_err(|_| {
        Error::InvalidConfig(format!(
            "dimension {v} does not fit the parameter file format"
        ))
    })
}

pub fn write_params_to(mut w: impl Write, arch: &Architecture, params: &ParamSet) -> Result<()> {
    if params.kinds() != arch.layers().iter().map(|l| l.kind).collect::<Vec<_>>() {
        return Err(Error::ArchitectureMismatch(format!(
            "parameters do not fit {}",
            arch.kind
        )));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let name = arch.kind.name().as_bytes();
    w.write_all(&u32_of(name.len())?)?;
    w.write_all(name)?;
    for v in [
        arch.input.channels,
        arch.input.height,
        arch.input.width,
        arch.classes,
        params.num_layers(),
    ] {
        w.write_all(&u32_of(v)?)?;
    }
    for layer in params.layers() {
        w.write_all(&[kind_code(layer.kind)])?;
        w.write_all(&u32_of(layer.tensors.len())?)?;
        for t in &layer.tensors {
            w.write_all(&u32_of(t.shape().len())?)?;
            for &d in t.shape() {
                w.write_all(&u32_of(d)?)?;
            }
        }
    }
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_params(path: &Path, arch: &Architecture, params: &ParamSet) -> Result<()> {
    write_params_to(BufWriter::new(File::create(path)?), arch, params)
}

struct Reader<R> {
    inner: R,
    origin: String,
}

impl<R: Read> Reader<R> {
    fn bad(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.origin.clone(),
            reason: reason.into(),
        }
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| self.bad(format!("truncated: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes::<4>()?) as usize)
    }
}

pub fn read_params_from(r: impl Read, origin: &str) -> Result<(Architecture, ParamSet)> {
    let mut r = Reader {
        inner: r,
        origin: origin.to_string(),
    };
    if &r.bytes::<8>()? != MAGIC {
        return Err(r.bad("not a parameter file"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(r.bad(format!("unsupported version {version}")));
    }
    let name_len = r.u32()?;
    if name_len > 64 {
        return Err(r.bad("architecture name too long"));
    }
    let mut name = vec![0u8; name_len];
    r.inner
        .read_exact(&mut name)
        .map_err(|e| r.bad(format!("truncated: {e}")))?;
    let name = String::from_utf8(name).map_err(|_| r.bad("architecture name is not UTF-8"))?;
    let kind: ArchKind = name.parse()?;
    let input = InputShape::new(r.u32()?, r.u32()?, r.u32()?);
    let classes = r.u32()?;
    let arch = Architecture::new(kind, input, classes)?;
    let num_layers = r.u32()?;
    let specs = arch.layers();
    if num_layers != specs.len() {
        return Err(r.bad(format!(
            "{} declares {num_layers} layers, expected {}",
            arch.kind,
            specs.len()
        )));
    }

    let mut shapes = Vec::with_capacity(num_layers);
    for spec in &specs {
        let code = r.bytes::<1>()?[0];
        if code != kind_code(spec.kind) {
            return Err(r.bad(format!(
                "layer kind code {code} does not match {:?}",
                spec.kind
            )));
        }
        let slots = r.u32()?;
        let mut layer_shapes = Vec::with_capacity(slots);
        for _ in 0..slots {
            let rank = r.u32()?;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            layer_shapes.push(dims);
        }
        if layer_shapes != spec.param_shapes {
            return Err(r.bad(format!(
                "layer shapes {:?} do not match {:?}",
                layer_shapes, spec.param_shapes
            )));
        }
        shapes.push(layer_shapes);
    }

    let mut layers = Vec::with_capacity(num_layers);
    for (spec, layer_shapes) in specs.iter().zip(shapes) {
        let mut tensors = Vec::with_capacity(layer_shapes.len());
        for shape in layer_shapes {
            let n = shape.iter().product();
            let data = (0..n)
                .map(|_| r.bytes::<8>().map(f64::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            tensors.push(Array::from_parts(shape, data));
        }
        layers.push(LayerParams {
            kind: spec.kind,
            tensors,
        });
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(r.bad("trailing bytes after payload"));
    }
    Ok((arch, ParamSet::new(layers)))
}

pub fn read_params(path: &Path) -> Result<(Architecture, ParamSet)> {
    read_params_from(
        BufReader::new(File::open(path)?),
        &path.display().to_string(),
    )
}
