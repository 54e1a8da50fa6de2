//! Slow, direct reference implementations for checking the optimized code
//! paths in `weldqa-core`. Nothing here shares code with the routines it
//! checks beyond plain data types.

use weldqa_core::nn::{LayerSpec, Params};
use weldqa_core::Grid;

/// Cubic convolution weight, written as the two polynomial pieces with
/// a = -1/2 expanded.
fn cubic_weight(d: f64) -> f64 {
    let d = d.abs();
    if d < 1.0 {
        1.5 * d * d * d - 2.5 * d * d + 1.0
    } else if d < 2.0 {
        -0.5 * d * d * d + 2.5 * d * d - 4.0 * d + 2.0
    } else {
        0.0
    }
}

/// Bicubic resize by direct 4×4 neighbourhood convolution at every output
/// pixel, half-pixel centers, clamp-to-edge.
pub fn bicubic_direct(src: &Grid<u8>, out_w: usize, out_h: usize) -> Grid<u8> {
    let mut data = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let sy = (oy as f64 + 0.5) * src.height as f64 / out_h as f64 - 0.5;
        for ox in 0..out_w {
            let sx = (ox as f64 + 0.5) * src.width as f64 / out_w as f64 - 0.5;
            let (fx, fy) = (sx.floor() as i64, sy.floor() as i64);
            let mut acc = 0.0;
            for j in -1..=2i64 {
                for i in -1..=2i64 {
                    let px = fx + i;
                    let py = fy + j;
                    let w = cubic_weight(sx - px as f64) * cubic_weight(sy - py as f64);
                    let cx = px.clamp(0, src.width as i64 - 1) as usize;
                    let cy = py.clamp(0, src.height as i64 - 1) as usize;
                    acc += w * src.data[cy * src.width + cx] as f64;
                }
            }
            data.push(acc.clamp(0.0, 255.0).round() as u8);
        }
    }
    Grid {
        width: out_w,
        height: out_h,
        data,
    }
}

/// Naive forward pass returning the two logits. Tensors are nested
/// `[channel][row][col]` vectors; every layer is a textbook loop nest.
pub fn brute_logits(params: &Params<f64>, input: &[f64]) -> [f64; 2] {
    let (c0, h0, w0) = params.arch.input;
    let mut x: Vec<Vec<Vec<f64>>> = (0..c0)
        .map(|c| (0..h0).map(|r| input[(c * h0 + r) * w0..(c * h0 + r + 1) * w0].to_vec()).collect())
        .collect();
    for (spec, lp) in params.arch.layers.iter().zip(&params.layers) {
        x = match *spec {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let h = (x[0].len() - kernel) / stride + 1;
                let w = (x[0][0].len() - kernel) / stride + 1;
                let mut y = vec![vec![vec![0.0; w]; h]; out_channels];
                for (o, plane) in y.iter_mut().enumerate() {
                    for (r, row) in plane.iter_mut().enumerate() {
                        for (col, out) in row.iter_mut().enumerate() {
                            let mut acc = lp.bias[o];
                            for (c, xc) in x.iter().enumerate().take(in_channels) {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let wgt = lp.weight[o * in_channels * kernel * kernel + c * kernel * kernel + ky * kernel + kx];
                                        acc += wgt * xc[r * stride + ky][col * stride + kx];
                                    }
                                }
                            }
                            *out = acc;
                        }
                    }
                }
                y
            }
            LayerSpec::Relu => x
                .into_iter()
                .map(|p| p.into_iter().map(|r| r.into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect()).collect())
                .collect(),
            LayerSpec::MaxPool { size } => x
                .iter()
                .map(|p| {
                    (0..p.len() / size)
                        .map(|r| {
                            (0..p[0].len() / size)
                                .map(|c| {
                                    let mut m = f64::NEG_INFINITY;
                                    for dy in 0..size {
                                        for dx in 0..size {
                                            m = m.max(p[r * size + dy][c * size + dx]);
                                        }
                                    }
                                    m
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
            LayerSpec::GlobalAvgPool => x
                .iter()
                .map(|p| {
                    let n = (p.len() * p[0].len()) as f64;
                    vec![vec![p.iter().flatten().sum::<f64>() / n]]
                })
                .collect(),
            LayerSpec::Dense { inputs, outputs } => {
                let flat: Vec<f64> = x.iter().flatten().flatten().copied().collect();
                assert_eq!(flat.len(), inputs);
                (0..outputs)
                    .map(|j| {
                        let v: f64 = lp.bias[j] + (0..inputs).map(|i| lp.weight[j * inputs + i] * flat[i]).sum::<f64>();
                        vec![vec![v]]
                    })
                    .collect()
            }
        };
    }
    [x[0][0][0], x[1][0][0]]
}

pub fn brute_softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let a = (logits[0] - m).exp();
    let b = (logits[1] - m).exp();
    [a / (a + b), b / (a + b)]
}

/// Mean cross-entropy of a batch of (flat input, class index) pairs.
pub fn brute_loss(params: &Params<f64>, batch: &[(Vec<f64>, usize)]) -> f64 {
    batch
        .iter()
        .map(|(x, y)| -brute_softmax(brute_logits(params, x))[*y].ln())
        .sum::<f64>()
        / batch.len() as f64
}

/// Central finite differences of [`brute_loss`] for every parameter, in
/// `Params::iter` order.
pub fn finite_difference_gradient(params: &Params<f64>, batch: &[(Vec<f64>, usize)], step: f64) -> Vec<f64> {
    let mut p = params.clone();
    let mut grads = Vec::with_capacity(params.len());
    for l in 0..p.layers.len() {
        for (is_bias, n) in [(false, p.layers[l].weight.len()), (true, p.layers[l].bias.len())] {
            for i in 0..n {
                let orig = *param_mut(&mut p, l, is_bias, i);
                *param_mut(&mut p, l, is_bias, i) = orig + step;
                let plus = brute_loss(&p, batch);
                *param_mut(&mut p, l, is_bias, i) = orig - step;
                let minus = brute_loss(&p, batch);
                *param_mut(&mut p, l, is_bias, i) = orig;
                grads.push((plus - minus) / (2.0 * step));
            }
        }
    }
    grads
}

fn param_mut(p: &mut Params<f64>, layer: usize, bias: bool, i: usize) -> &mut f64 {
    if bias {
        &mut p.layers[layer].bias[i]
    } else {
        &mut p.layers[layer].weight[i]
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Tiny deterministic generator for test inputs (SplitMix64).
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        lo + (self.next_u64() % (hi_inclusive - lo + 1) as u64) as usize
    }
}

/// A small randomized network and batch for gradient checking.
#[derive(Debug, Clone)]
pub struct GradientCase {
    pub params: Params<f64>,
    pub batch: Vec<(Vec<f64>, usize)>,
}

/// Builds case `seed`. Even seeds end in global average pooling, odd seeds
/// feed the flattened feature map straight into the dense layer, so every
/// layer kind is exercised across a handful of seeds.
pub fn gradient_case(seed: u64) -> GradientCase {
    let mut rng = SplitMix(seed.wrapping_mul(0x1000_0000_01B3) ^ 0xA5A5);
    loop {
        let c0 = rng.range(1, 2);
        let side = rng.range(8, 14);
        let c1 = rng.range(1, 3);
        let k1 = rng.range(2, 3);
        let s1 = rng.range(1, 2);
        let mut layers = vec![
            LayerSpec::Conv {
                in_channels: c0,
                out_channels: c1,
                kernel: k1,
                stride: s1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
        ];
        let mut c = c1;
        if rng.range(0, 1) == 1 {
            let c2 = rng.range(1, 3);
            layers.push(LayerSpec::Conv {
                in_channels: c1,
                out_channels: c2,
                kernel: rng.range(1, 2),
                stride: 1,
            });
            layers.push(LayerSpec::Relu);
            c = c2;
        }
        let mut arch = weldqa_core::nn::Architecture {
            input: (c0, side, side),
            layers,
        };
        let inputs = if seed.is_multiple_of(2) {
            arch.layers.push(LayerSpec::GlobalAvgPool);
            c
        } else {
            let mut probe = arch.clone();
            probe.layers.push(LayerSpec::GlobalAvgPool);
            probe.layers.push(LayerSpec::Dense { inputs: c, outputs: 2 });
            match probe.shapes() {
                Ok(s) => {
                    let (c, h, w) = s[s.len() - 3];
                    c * h * w
                }
                Err(_) => continue,
            }
        };
        arch.layers.push(LayerSpec::Dense { inputs, outputs: 2 });
        let Ok(mut params) = Params::<f64>::init(arch, seed) else {
            continue;
        };
        for l in params.layers.iter_mut() {
            for b in l.bias.iter_mut() {
                *b = rng.unit() * 0.2 - 0.1;
            }
        }
        let n_in = c0 * side * side;
        let batch = (0..3)
            .map(|_| ((0..n_in).map(|_| rng.unit()).collect(), rng.range(0, 1)))
            .collect();
        return GradientCase { params, batch };
    }
}

/// Largest relative error between the analytic gradient of `case` and
/// central finite differences with `step`. Denominators are floored at
/// `floor` so coordinates that are zero up to rounding compare absolutely.
pub fn gradient_check(case: &GradientCase, step: f64, floor: f64) -> f64 {
    let batch: Vec<_> = case
        .batch
        .iter()
        .map(|(x, y)| {
            let t = weldqa_core::nn::Tensor::new(case.params.arch.input, x.clone()).expect("case input matches arch");
            let v = if *y == 1 {
                weldqa_core::Verdict::Erroneous
            } else {
                weldqa_core::Verdict::Faultless
            };
            (t, v)
        })
        .collect();
    let (_, grads) = weldqa_core::nn::loss_and_gradients(&case.params, &batch).expect("valid batch");
    let numeric = finite_difference_gradient(&case.params, &case.batch, step);
    grads
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}
