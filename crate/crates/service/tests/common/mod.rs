#![allow(dead_code)]

use std::path::Path;

use weldqa_core::nn::{save_model, Architecture, ModelParams, Params};
use weldqa_core::pgm::write_scan_pgm;
use weldqa_core::synth::{generate, GenConfig};
use weldqa_core::Verdict;

/// Writes a small synthetic corpus under `<dir>/scans` and returns
/// (id, verdict) pairs in id order.
pub fn small_corpus(dir: &Path, n_faultless: usize, n_erroneous: usize) -> Vec<(String, Verdict)> {
    let mut cfg = GenConfig::new(3, n_faultless, n_erroneous);
    cfg.width = 160;
    cfg.height = 20;
    let scans = dir.join("scans");
    std::fs::create_dir_all(&scans).unwrap();
    generate(&cfg)
        .unwrap()
        .into_iter()
        .map(|g| {
            std::fs::write(scans.join(format!("{}.pgm", g.scan.id())), write_scan_pgm(&g.scan)).unwrap();
            (g.scan.id().to_string(), g.verdict)
        })
        .collect()
}

/// Randomly initialized network for 64×64 inputs.
pub fn small_model(seed: u64) -> ModelParams {
    Params::init(Architecture::desk_for_side(64), seed).unwrap()
}

/// A model whose output ignores the input: the dense layer has zero
/// weights and biases favouring `verdict`.
pub fn constant_model(verdict: Verdict) -> ModelParams {
    let mut m = Params::zeros(Architecture::desk_for_side(64)).unwrap();
    let last = m.layers.last_mut().unwrap();
    last.bias = match verdict {
        Verdict::Faultless => vec![2.0, -2.0],
        Verdict::Erroneous => vec![-2.0, 2.0],
    };
    m
}

pub fn write_model(path: &Path, model: &ModelParams) {
    std::fs::write(path, save_model(model)).unwrap();
}
