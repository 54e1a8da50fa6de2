//! Inference latency measurement.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use weldqa_core::nn::{self, load_model};
use weldqa_core::preprocess::to_network_input;
use weldqa_core::ResizeMode;

use crate::http::{classify_bytes, preprocess_for};
use crate::registry::ScanRegistry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n: usize,
    pub mode: ResizeMode,
    pub model_load_ms: f64,
    pub classify_min_ms: f64,
    pub classify_median_ms: f64,
    pub classify_p99_ms: f64,
    pub end_to_end_median_ms: f64,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    // clock granularity can round a very fast call to zero
    (start.elapsed().as_secs_f64() * 1e3).max(1e-6)
}

/// Loads the model once, then times `n` classifications of preprocessed
/// images and `n` full raw-scan-to-verdict runs, cycling through the
/// scans under `data_dir`.
pub fn bench(model_path: &Path, data_dir: &Path, n: usize, mode: ResizeMode) -> anyhow::Result<BenchReport> {
    if n == 0 {
        bail!("bench needs at least one iteration");
    }
    let start = Instant::now();
    let bytes = std::fs::read(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let model = load_model(&bytes).with_context(|| format!("loading {}", model_path.display()))?;
    let model_load_ms = elapsed_ms(start);

    let registry = ScanRegistry::load(data_dir)?;
    if registry.is_empty() {
        bail!("no scans under {}", data_dir.join(crate::registry::SCANS_DIR).display());
    }
    let ids: Vec<&str> = registry.ids().take(n).collect();
    let raw: Vec<Vec<u8>> = ids
        .iter()
        .map(|id| registry.bytes(id).expect("listed id").map_err(anyhow::Error::from))
        .collect::<anyhow::Result<_>>()?;
    let cfg = preprocess_for(&model, mode);
    let images = ids
        .iter()
        .map(|id| {
            let scan = registry.scan(id).expect("listed id")?;
            Ok(to_network_input(&scan, &cfg)?)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut classify = Vec::with_capacity(n);
    let mut end_to_end = Vec::with_capacity(n);
    for i in 0..n {
        let img = &images[i % images.len()];
        let t = Instant::now();
        std::hint::black_box(nn::classify(&model, img, nn::DEFAULT_THRESHOLD)?);
        classify.push(elapsed_ms(t));

        let t = Instant::now();
        std::hint::black_box(classify_bytes(&model, &raw[i % raw.len()], mode)?);
        end_to_end.push(elapsed_ms(t));
    }
    classify.sort_by(f64::total_cmp);
    end_to_end.sort_by(f64::total_cmp);
    Ok(BenchReport {
        n,
        mode,
        model_load_ms,
        classify_min_ms: classify[0],
        classify_median_ms: median(&classify),
        classify_p99_ms: percentile(&classify, 0.99),
        end_to_end_median_ms: median(&end_to_end),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_statistics() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(median(&s), 2.5);
        assert_eq!(median(&s[..3]), 2.0);
        assert_eq!(percentile(&s, 0.99), 4.0);
        assert_eq!(percentile(&s, 0.5), 2.0);
        assert_eq!(percentile(&[7.0], 0.99), 7.0);
    }
}
