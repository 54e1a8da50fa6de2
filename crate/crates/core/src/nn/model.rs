//! Model parameters, initialization and the versioned `WSQA` file format.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "WSQA" | format_version | in_channels | in_height | in_width | n_layers
//! n_layers × { kind: u8, a: u32, b: u32, c: u32, d: u32 }
//! for each layer in order: weights then biases as little-endian f32
//! ```
//!
//! Layer kinds: 0 conv (in, out, kernel, stride), 1 relu, 2 maxpool
//! (size), 3 global average pool, 4 dense (inputs, outputs). Unused
//! fields are zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{Architecture, LayerSpec, Shape};
use super::layers::Real;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WSQA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Architecture plus one weight/bias pair per layer (empty for layers
/// without parameters). Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub arch: Architecture,
    pub layers: Vec<LayerParams<T>>,
    shapes: Vec<Shape>,
}

/// Stored classifier weights.
pub type ModelParams = Params<f32>;

impl<T: Real> Params<T> {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        let shapes = arch.shapes()?;
        let layers = arch
            .layers
            .iter()
            .map(|l| {
                let (w, b) = l.param_counts();
                LayerParams {
                    weight: vec![T::zero(); w],
                    bias: vec![T::zero(); b],
                }
            })
            .collect();
        Ok(Self { arch, layers, shapes })
    }

    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (spec, layer) in p.arch.layers.iter().zip(p.layers.iter_mut()) {
            let fan_in = spec.fan_in();
            if fan_in == 0 {
                continue;
            }
            let limit = (6.0 / fan_in as f64).sqrt();
            for w in layer.weight.iter_mut() {
                *w = T::from_f64(rng.gen_range(-limit..limit));
            }
        }
        Ok(p)
    }

    pub fn from_layers(arch: Architecture, layers: Vec<LayerParams<T>>) -> Result<Self> {
        let shapes = arch.shapes()?;
        if layers.len() != arch.layers.len() {
            return Err(Error::ArchitectureMismatch(format!(
                "{} parameter blocks for {} layers",
                layers.len(),
                arch.layers.len()
            )));
        }
        for (i, (spec, l)) in arch.layers.iter().zip(&layers).enumerate() {
            if (l.weight.len(), l.bias.len()) != spec.param_counts() {
                return Err(Error::ArchitectureMismatch(format!(
                    "layer {i}: tensor lengths ({}, {}) do not match {:?}",
                    l.weight.len(),
                    l.bias.len(),
                    spec.param_counts()
                )));
            }
        }
        Ok(Self { arch, layers, shapes })
    }

    /// Activation shapes, input first.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn input_shape(&self) -> Shape {
        self.arch.input
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: vec![T::zero(); l.weight.len()],
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
            shapes: self.shapes.clone(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (a, &b) in self.iter_mut().zip(other.iter()) {
            *a = *a + scale * b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for a in self.iter_mut() {
            *a = *a * factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: l.weight.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                    bias: l.bias.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                })
                .collect(),
            shapes: self.shapes.clone(),
        }
    }
}

/// Desk architecture with seeded random weights.
pub fn init_model(seed: u64) -> ModelParams {
    Params::init(Architecture::desk(), seed).expect("desk architecture is consistent")
}

fn layer_record(spec: &LayerSpec) -> (u8, [u32; 4]) {
    let u = |v: usize| v as u32;
    match *spec {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => (0, [u(in_channels), u(out_channels), u(kernel), u(stride)]),
        LayerSpec::Relu => (1, [0; 4]),
        LayerSpec::MaxPool { size } => (2, [u(size), 0, 0, 0]),
        LayerSpec::GlobalAvgPool => (3, [0; 4]),
        LayerSpec::Dense { inputs, outputs } => (4, [u(inputs), u(outputs), 0, 0]),
    }
}

pub fn save_model(model: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + model.len() * 4);
    out.extend_from_slice(MAGIC);
    let put = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    put(&mut out, FORMAT_VERSION);
    let (c, h, w) = model.arch.input;
    put(&mut out, c as u32);
    put(&mut out, h as u32);
    put(&mut out, w as u32);
    put(&mut out, model.arch.layers.len() as u32);
    for spec in &model.arch.layers {
        let (kind, fields) = layer_record(spec);
        out.push(kind);
        for f in fields {
            put(&mut out, f);
        }
    }
    for v in model.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, expected_total: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::LengthMismatch {
                expected: expected_total.max(self.pos + n),
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4, 0)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_model(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let input = (cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize);
    let n_layers = cur.u32()? as usize;
    if n_layers > 1024 {
        return Err(Error::ArchitectureMismatch(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind = cur.take(1, 0)?[0];
        let f = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?].map(|v| v as usize);
        layers.push(match kind {
            0 => LayerSpec::Conv {
                in_channels: f[0],
                out_channels: f[1],
                kernel: f[2],
                stride: f[3],
            },
            1 => LayerSpec::Relu,
            2 => LayerSpec::MaxPool { size: f[0] },
            3 => LayerSpec::GlobalAvgPool,
            4 => LayerSpec::Dense {
                inputs: f[0],
                outputs: f[1],
            },
            k => return Err(Error::ArchitectureMismatch(format!("unknown layer kind {k}"))),
        });
    }
    let arch = Architecture { input, layers };
    let mut params = Params::<f32>::zeros(arch)?;
    let expected = cur.pos + params.len() * 4;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    for (i, layer) in params.layers.iter_mut().enumerate() {
        for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            let b = cur.take(4, expected)?;
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(Error::NonFiniteWeights { layer: i });
            }
        }
    }
    Ok(params)
}
