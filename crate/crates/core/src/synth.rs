//! Deterministic synthetic weld-seam scans.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), whose output stream is
//! fixed by its specification and therefore identical on every platform.
//! The seed keys the generator; stream 0 draws the class order and stream
//! `index + 1` renders scan `index`, so each scan is independent of the
//! others and generation can run in parallel.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::{RawScan, ScanSource, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Defect {
    Pore,
    Interruption,
    Spatter,
    Undercut,
}

impl Defect {
    pub const ALL: [Defect; 4] = [Defect::Pore, Defect::Interruption, Defect::Spatter, Defect::Undercut];

    pub fn as_str(self) -> &'static str {
        match self {
            Defect::Pore => "pore",
            Defect::Interruption => "interruption",
            Defect::Spatter => "spatter",
            Defect::Undercut => "undercut",
        }
    }
}

/// Relative frequency of each defect archetype among erroneous scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectMix {
    pub pore: f64,
    pub interruption: f64,
    pub spatter: f64,
    pub undercut: f64,
}

impl DefectMix {
    pub fn uniform() -> Self {
        Self {
            pore: 1.0,
            interruption: 1.0,
            spatter: 1.0,
            undercut: 1.0,
        }
    }

    pub fn only(defect: Defect) -> Self {
        let mut mix = Self {
            pore: 0.0,
            interruption: 0.0,
            spatter: 0.0,
            undercut: 0.0,
        };
        match defect {
            Defect::Pore => mix.pore = 1.0,
            Defect::Interruption => mix.interruption = 1.0,
            Defect::Spatter => mix.spatter = 1.0,
            Defect::Undercut => mix.undercut = 1.0,
        }
        mix
    }

    fn weights(&self) -> [f64; 4] {
        [self.pore, self.interruption, self.spatter, self.undercut]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interference {
    /// Shift the seam band by a random per-scan offset.
    pub vertical_displacement: bool,
    /// Multiply intensities by a per-scan factor in [0.7, 1.3].
    pub gain_shift: bool,
    /// Standard deviation of zero-mean additive noise (16-bit units).
    pub additive_noise_sigma: f64,
}

impl Interference {
    pub fn none() -> Self {
        Self {
            vertical_displacement: false,
            gain_shift: false,
            additive_noise_sigma: 0.0,
        }
    }

    pub fn all() -> Self {
        Self {
            vertical_displacement: true,
            gain_shift: true,
            additive_noise_sigma: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub n_faultless: usize,
    pub n_erroneous: usize,
    pub defect_mix: DefectMix,
    pub interference: Interference,
}

impl GenConfig {
    pub fn new(seed: u64, n_faultless: usize, n_erroneous: usize) -> Self {
        Self {
            seed,
            width: 1600,
            height: 200,
            n_faultless,
            n_erroneous,
            defect_mix: DefectMix::uniform(),
            interference: Interference::all(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig(format!(
                "zero-area scan geometry {}x{}",
                self.width, self.height
            )));
        }
        if self.width <= self.height {
            return Err(Error::InvalidConfig(format!(
                "seam scans must be wider than tall, got {}x{}",
                self.width, self.height
            )));
        }
        if self.height < 16 {
            return Err(Error::InvalidConfig(format!("height {} too small for a seam band", self.height)));
        }
        let w = self.defect_mix.weights();
        if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidConfig("defect weights must be finite and non-negative".into()));
        }
        if self.n_erroneous > 0 && w.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidConfig("empty defect mix with erroneous scans requested".into()));
        }
        let sigma = self.interference.additive_noise_sigma;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise sigma must be >= 0, got {sigma}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScan {
    pub scan: RawScan,
    pub verdict: Verdict,
    pub defects: Vec<Defect>,
}

pub fn scan_id(seed: u64, index: usize) -> String {
    format!("s{seed}-{index:04}")
}

pub fn generate(cfg: &GenConfig) -> Result<Vec<GeneratedScan>> {
    cfg.validate()?;
    let total = cfg.n_faultless + cfg.n_erroneous;
    let mut labels: Vec<Verdict> = std::iter::repeat_n(Verdict::Faultless, cfg.n_faultless)
        .chain(std::iter::repeat_n(Verdict::Erroneous, cfg.n_erroneous))
        .collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(0);
    labels.shuffle(&mut order_rng);

    (0..total)
        .into_par_iter()
        .map(|index| render_scan(cfg, index, labels[index]))
        .collect()
}

/// Class sizes of the 616-scan corpus.
pub const PAPER_FAULTLESS: usize = 553;
pub const PAPER_ERRONEOUS: usize = 63;

/// Full-size 553/63 corpus with every interference mode on.
pub fn default_corpus(seed: u64) -> Vec<GeneratedScan> {
    generate(&GenConfig::new(seed, PAPER_FAULTLESS, PAPER_ERRONEOUS)).expect("default corpus config is valid")
}

/// Seam geometry shared by all renderers of one scan.
struct Seam {
    center: f64,
    half_width: f64,
}

impl Seam {
    /// Cross-seam profile in [0, 1]: flat top with soft shoulders.
    fn profile(&self, y: f64) -> f64 {
        let d = (y - self.center).abs() / self.half_width;
        if d >= 1.3 {
            0.0
        } else if d <= 0.7 {
            1.0
        } else {
            let t = (d - 0.7) / 0.6;
            0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

const PLATE_LEVEL: f64 = 9000.0;
const SEAM_LEVEL: f64 = 42000.0;

fn render_scan(cfg: &GenConfig, index: usize, verdict: Verdict) -> Result<GeneratedScan> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let (w, h) = (cfg.width, cfg.height);
    let hf = h as f64;

    let displacement = if cfg.interference.vertical_displacement {
        rng.gen_range(-0.15..0.15) * hf
    } else {
        0.0
    };
    let seam = Seam {
        center: hf / 2.0 + displacement,
        half_width: hf * rng.gen_range(0.16..0.2),
    };
    let ripple_period = rng.gen_range(14.0..22.0);
    let ripple_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let ripple_curve = rng.gen_range(0.02..0.05);
    let plate_tilt = rng.gen_range(-0.15..0.15);

    let mut img = vec![0.0_f64; w * h];
    for y in 0..h {
        let yf = y as f64;
        let p = seam.profile(yf);
        let dy = yf - seam.center;
        for x in 0..w {
            let xf = x as f64;
            let plate = PLATE_LEVEL * (1.0 + plate_tilt * (xf / w as f64 - 0.5));
            // chevron ripples: phase bends with distance from the seam axis
            let phase = std::f64::consts::TAU * (xf + ripple_curve * dy * dy) / ripple_period + ripple_phase;
            let seam_value = SEAM_LEVEL * (1.0 + 0.12 * phase.sin());
            img[y * w + x] = plate + p * (seam_value - plate);
        }
    }

    let mut defects = Vec::new();
    if verdict == Verdict::Erroneous {
        let dist = WeightedIndex::new(cfg.defect_mix.weights())
            .map_err(|e| Error::InvalidConfig(format!("defect mix: {e}")))?;
        let count = if rng.gen_bool(0.3) { 2 } else { 1 };
        for _ in 0..count {
            let defect = Defect::ALL[dist.sample(&mut rng)];
            render_defect(&mut img, w, h, &seam, defect, &mut rng);
            defects.push(defect);
        }
        defects.sort();
        defects.dedup();
    }

    let gain = if cfg.interference.gain_shift {
        rng.gen_range(0.7..=1.3)
    } else {
        1.0
    };
    let sigma = cfg.interference.additive_noise_sigma;
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("sigma validated"));

    let pixels: Vec<u16> = img
        .iter()
        .map(|&v| {
            let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            (v * gain + n).clamp(0.0, 65535.0).round() as u16
        })
        .collect();

    let scan = RawScan::new(
        scan_id(cfg.seed, index),
        w,
        h,
        pixels,
        "synthetic-butt",
        ScanSource::Synthetic,
    )?;
    Ok(GeneratedScan { scan, verdict, defects })
}

fn render_defect(img: &mut [f64], w: usize, h: usize, seam: &Seam, defect: Defect, rng: &mut ChaCha8Rng) {
    let (wf, hf) = (w as f64, h as f64);
    let clamp_row = |y: f64| y.clamp(0.0, hf - 1.0) as usize;
    // absolute sizes below are for a 1600x200 scan
    let (sx, sy) = (wf / 1600.0, hf / 200.0);
    match defect {
        Defect::Pore => {
            // dark elliptical blob on the seam
            let rx = rng.gen_range(80.0..140.0) * sx;
            // whole pore inside the scan
            let cx = if wf > 2.0 * rx + 2.0 { rng.gen_range(rx + 1.0..wf - rx - 1.0) } else { wf / 2.0 };
            let cy = seam.center + rng.gen_range(-0.2..0.2) * seam.half_width;
            let ry = rng.gen_range(0.8..1.0) * seam.half_width;
            let depth = rng.gen_range(0.0..0.1);
            let (x0, x1) = ((cx - rx).max(0.0) as usize, ((cx + rx).ceil() as usize).min(w - 1));
            for y in clamp_row(cy - ry)..=clamp_row(cy + ry) {
                for x in x0..=x1 {
                    let d = ((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2);
                    if d <= 1.0 {
                        let v = &mut img[y * w + x];
                        let dark = PLATE_LEVEL * depth;
                        // solid core, soft rim
                        let t = (3.0 * (1.0 - d)).min(1.0);
                        *v = *v * (1.0 - t) + dark * t;
                    }
                }
            }
        }
        Defect::Interruption => {
            // missing weld material: zero band across the full seam width
            let gap = (rng.gen_range(0.03..0.06) * wf).ceil() as usize;
            let start = rng.gen_range((0.05 * wf) as usize..(0.95 * wf) as usize - gap);
            let (y0, y1) = (
                clamp_row(seam.center - 1.4 * seam.half_width),
                clamp_row(seam.center + 1.4 * seam.half_width),
            );
            for y in y0..=y1 {
                for x in start..start + gap {
                    img[y * w + x] = 0.0;
                }
            }
        }
        Defect::Spatter => {
            // bright droplets on the plate, away from the seam band
            let n = rng.gen_range(6..=12);
            for _ in 0..n {
                let r = rng.gen_range(10.0..18.0) * sy;
                let cx = rng.gen_range(0.02..0.98) * wf;
                let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let off = rng.gen_range(1.5..2.2) * seam.half_width;
                let cy = (seam.center + side * off).clamp(r.min(hf / 2.0), (hf - 1.0 - r).max(hf / 2.0));
                let peak = rng.gen_range(52000.0..60000.0);
                let (x0, x1) = ((cx - r).max(0.0) as usize, ((cx + r).ceil() as usize).min(w - 1));
                for y in clamp_row(cy - r)..=clamp_row(cy + r) {
                    for x in x0..=x1 {
                        let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() / r;
                        if d <= 1.0 {
                            let v = &mut img[y * w + x];
                            *v = v.max(peak * (1.0 - 0.4 * d * d));
                        }
                    }
                }
            }
        }
        Defect::Undercut => {
            // dark groove along one edge of the seam over part of its length
            let len = (rng.gen_range(0.4..0.8) * wf) as usize;
            let start = rng.gen_range(0..w - len);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            // inside the flat top, so bright seam remains on both sides
            let edge = seam.center + side * 0.5 * seam.half_width;
            let half = rng.gen_range(0.35..0.45) * seam.half_width;
            let depth = rng.gen_range(0.0..0.1);
            for y in clamp_row(edge - half)..=clamp_row(edge + half) {
                let d = (y as f64 - edge).abs() / half;
                if d > 1.0 {
                    continue;
                }
                let factor = 1.0 - (1.0 - depth) * (1.0 - d * d);
                for x in start..start + len {
                    // taper the groove ends
                    let e = ((x - start).min(start + len - 1 - x) as f64 / (20.0 * sx)).min(1.0);
                    let f = 1.0 - (1.0 - factor) * e;
                    img[y * w + x] *= f;
                }
            }
        }
    }
}
