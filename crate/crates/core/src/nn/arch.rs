use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::INPUT_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid (unpadded) convolution with square kernels.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    /// Non-overlapping max pooling; trailing rows/columns are dropped.
    MaxPool { size: usize },
    GlobalAvgPool,
    Dense { inputs: usize, outputs: usize },
}

impl LayerSpec {
    /// (weight count, bias count).
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * in_channels * kernel * kernel, out_channels),
            LayerSpec::Dense { inputs, outputs } => (inputs * outputs, outputs),
            _ => (0, 0),
        }
    }

    /// Fan-in of one output unit, for initialization scaling.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }
}

/// Tensor shape (channels, height, width).
pub type Shape = (usize, usize, usize);

/// Ordered layer list plus the input shape it was built for. The output
/// of the last layer is the logit pair fed to softmax.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// conv(8, 5×5, /2) → ReLU → maxpool 2 → conv(16, 3×3, /2) → ReLU →
    /// maxpool 2 → conv(32, 3×3) → ReLU → global average → dense(2).
    pub fn desk() -> Self {
        Self::desk_for_side(INPUT_SIDE)
    }

    pub fn desk_for_side(side: usize) -> Self {
        Self {
            input: (1, side, side),
            layers: vec![
                LayerSpec::Conv {
                    in_channels: 1,
                    out_channels: 8,
                    kernel: 5,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv {
                    in_channels: 8,
                    out_channels: 16,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv {
                    in_channels: 16,
                    out_channels: 32,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense {
                    inputs: 32,
                    outputs: 2,
                },
            ],
        }
    }

    /// Shapes of every activation, input first. Fails if any layer does
    /// not fit its input or the network does not end in two logits.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mismatch = |i: usize, msg: String| Error::ArchitectureMismatch(format!("layer {i}: {msg}"));
        let mut shapes = vec![self.input];
        let mut cur = self.input;
        if cur.0 == 0 || cur.1 == 0 || cur.2 == 0 {
            return Err(Error::ArchitectureMismatch(format!("empty input shape {cur:?}")));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if in_channels != cur.0 {
                        return Err(mismatch(i, format!("expects {in_channels} channels, got {}", cur.0)));
                    }
                    if kernel == 0 || stride == 0 || out_channels == 0 {
                        return Err(mismatch(i, "zero kernel, stride or channels".into()));
                    }
                    if cur.1 < kernel || cur.2 < kernel {
                        return Err(mismatch(i, format!("kernel {kernel} larger than {}x{}", cur.1, cur.2)));
                    }
                    (out_channels, (cur.1 - kernel) / stride + 1, (cur.2 - kernel) / stride + 1)
                }
                LayerSpec::Relu => cur,
                LayerSpec::MaxPool { size } => {
                    if size == 0 || cur.1 < size || cur.2 < size {
                        return Err(mismatch(i, format!("pool {size} does not fit {}x{}", cur.1, cur.2)));
                    }
                    (cur.0, cur.1 / size, cur.2 / size)
                }
                LayerSpec::GlobalAvgPool => (cur.0, 1, 1),
                LayerSpec::Dense { inputs, outputs } => {
                    let n = cur.0 * cur.1 * cur.2;
                    if inputs != n {
                        return Err(mismatch(i, format!("expects {inputs} inputs, got {n}")));
                    }
                    if outputs == 0 {
                        return Err(mismatch(i, "zero outputs".into()));
                    }
                    (outputs, 1, 1)
                }
            };
            shapes.push(cur);
        }
        if cur != (2, 1, 1) {
            return Err(Error::ArchitectureMismatch(format!(
                "network must end in 2 logits, ends in {cur:?}"
            )));
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let (w, b) = l.param_counts();
                w + b
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_shapes() {
        let shapes = Architecture::desk().shapes().unwrap();
        assert_eq!(shapes[1], (8, 148, 148));
        assert_eq!(shapes[3], (8, 74, 74));
        assert_eq!(shapes[4], (16, 36, 36));
        assert_eq!(shapes[6], (16, 18, 18));
        assert_eq!(shapes[7], (32, 16, 16));
        assert_eq!(shapes.last(), Some(&(2, 1, 1)));
        assert_eq!(Architecture::desk().param_count(), 208 + 1168 + 4640 + 66);
    }

    #[test]
    fn rejects_inconsistent_layers() {
        let mut a = Architecture::desk();
        a.layers[3] = LayerSpec::Conv {
            in_channels: 4,
            out_channels: 16,
            kernel: 3,
            stride: 2,
        };
        assert!(a.shapes().is_err());
        let mut a = Architecture::desk();
        a.layers.pop();
        assert!(a.shapes().is_err());
        assert!(Architecture::desk_for_side(10).shapes().is_err());
    }
}
