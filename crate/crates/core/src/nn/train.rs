//! Cross-entropy loss, mini-batch SGD training and single-image inference.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{backward, cross_entropy, forward_trace, softmax, Real, Tensor};
use super::model::{init_model, ModelParams, Params};
use crate::dataset::{flip, DatasetManifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::scan::{Augmentation, ProcessedImage, Verdict};

pub const PAPER_LEARNING_RATE: f64 = 1e-6;
pub const DESK_LEARNING_RATE: f64 = 1e-2;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Lower bound on the per-image standard deviation, in 8-bit levels.
pub const STD_FLOOR: f64 = 1.0;

/// Base (unaugmented) processed images keyed by scan id.
pub type ImageStore = BTreeMap<String, ProcessedImage>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub runs: usize,
    /// Per-class loss weights (faultless, erroneous); `None` is unweighted.
    pub class_weights: Option<[f64; 2]>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            learning_rate: DESK_LEARNING_RATE,
            batch_size: 16,
            seed: 0,
            runs: 3,
            class_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidConfig(format!("class weights must be > 0, got {w:?}")));
            }
        }
        Ok(())
    }

    /// Seed of the `run`-th independent run.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
}

impl TrainTrace {
    /// CSV with columns epoch, train_acc, train_loss, val_acc, val_loss.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,train_acc,train_loss,val_acc,val_loss")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for e in &self.epochs {
            writeln!(
                w,
                "{},{:.6},{:.6},{},{}",
                e.epoch,
                e.train_accuracy,
                e.train_loss,
                opt(e.val_accuracy),
                opt(e.val_loss)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_model: ModelParams,
    /// Model after the epoch with the highest validation accuracy, ties
    /// going to the lower validation loss and then the earlier epoch; the
    /// final model when there is no validation split.
    pub best_model: ModelParams,
    pub best_epoch: usize,
    pub max_validation_accuracy: Option<f64>,
    pub trace: TrainTrace,
}

/// Anything that maps a processed image to (faultless, erroneous)
/// probabilities.
pub trait Classifier: Send + Sync {
    fn probabilities(&self, img: &ProcessedImage) -> Result<[f64; 2]>;

    fn classify(&self, img: &ProcessedImage, threshold: f64) -> Result<Verdict> {
        decide(self.probabilities(img)?, threshold)
    }
}

impl Classifier for ModelParams {
    fn probabilities(&self, img: &ProcessedImage) -> Result<[f64; 2]> {
        forward(self, img)
    }
}

/// Erroneous iff the erroneous probability reaches the threshold; a tie
/// goes to Erroneous.
pub fn decide(probabilities: [f64; 2], threshold: f64) -> Result<Verdict> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!("threshold must be in (0, 1), got {threshold}")));
    }
    Ok(if probabilities[1] >= threshold {
        Verdict::Erroneous
    } else {
        Verdict::Faultless
    })
}

/// Network input: the 8-bit image standardized to zero mean and unit
/// variance over all pixels. A flat image maps to all zeros.
pub fn image_tensor<T: Real>(img: &ProcessedImage) -> Tensor<T> {
    let px = img.pixels();
    let n = px.len() as f64;
    let mean = px.iter().map(|&p| p as f64).sum::<f64>() / n;
    let var = px.iter().map(|&p| (p as f64 - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / var.sqrt().max(STD_FLOOR);
    let data = px.iter().map(|&p| T::from_f64((p as f64 - mean) * inv)).collect();
    Tensor::new((1, img.height(), img.width()), data).expect("shape matches pixel count")
}

fn check_input<T: Real>(model: &Params<T>, img: &ProcessedImage) -> Result<()> {
    let (c, h, w) = model.input_shape();
    if (c, h, w) != (1, img.height(), img.width()) {
        return Err(Error::ArchitectureMismatch(format!(
            "model expects {c}x{h}x{w} input, image is 1x{}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Softmax probabilities (faultless, erroneous) for one image.
pub fn forward(model: &ModelParams, img: &ProcessedImage) -> Result<[f64; 2]> {
    check_input(model, img)?;
    forward_tensor(model, &image_tensor(img))
}

pub fn forward_tensor<T: Real>(model: &Params<T>, input: &Tensor<T>) -> Result<[f64; 2]> {
    let trace = forward_trace(model, input)?;
    let p = softmax(trace.logits());
    Ok([p[0].to_f64(), p[1].to_f64()])
}

pub fn classify(model: &ModelParams, img: &ProcessedImage, threshold: f64) -> Result<Verdict> {
    model.classify(img, threshold)
}

struct ExampleResult<T> {
    loss: T,
    correct: bool,
    grads: Params<T>,
}

fn example<T: Real>(params: &Params<T>, input: &Tensor<T>, target: Verdict) -> Result<ExampleResult<T>> {
    let trace = forward_trace(params, input)?;
    let logits = trace.logits();
    let (loss, dlogits) = cross_entropy(logits, target.class_index());
    let mut grads = params.zeros_like();
    backward(params, &trace, dlogits, &mut grads, false);
    let predicted = if logits[1] >= logits[0] {
        Verdict::Erroneous
    } else {
        Verdict::Faultless
    };
    Ok(ExampleResult {
        loss,
        correct: predicted == target,
        grads,
    })
}

/// Weighted mean of per-example losses and gradients, reduced in batch
/// order so the result does not depend on thread scheduling.
fn reduce<T: Real>(
    params: &Params<T>,
    results: Vec<ExampleResult<T>>,
    targets: impl Iterator<Item = Verdict>,
    class_weights: Option<[f64; 2]>,
) -> (T, Params<T>) {
    let mut grads = params.zeros_like();
    let mut loss = T::zero();
    let mut total_weight = T::zero();
    for (r, target) in results.into_iter().zip(targets) {
        let w = T::from_f64(class_weights.map_or(1.0, |cw| cw[target.class_index()]));
        loss = loss + w * r.loss;
        grads.add_scaled(&r.grads, w);
        total_weight = total_weight + w;
    }
    let inv = T::one() / total_weight;
    grads.scale(inv);
    (loss * inv, grads)
}

/// Mean cross-entropy over a batch and its gradient for every parameter.
pub fn loss_and_gradients<T: Real>(params: &Params<T>, batch: &[(Tensor<T>, Verdict)]) -> Result<(T, Params<T>)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let results = batch
        .par_iter()
        .map(|(x, y)| example(params, x, *y))
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce(params, results, batch.iter().map(|(_, y)| *y), None))
}

/// [`loss_and_gradients`] on processed images with the stored f32 model.
pub fn loss_and_gradients_images(
    model: &ModelParams,
    batch: &[(ProcessedImage, Verdict)],
) -> Result<(f64, ModelParams)> {
    for (img, _) in batch {
        check_input(model, img)?;
    }
    let tensors: Vec<(Tensor<f32>, Verdict)> = batch.iter().map(|(img, y)| (image_tensor(img), *y)).collect();
    let (loss, grads) = loss_and_gradients(model, &tensors)?;
    Ok((loss as f64, grads))
}

fn entry_tensor(images: &ImageStore, e: &ManifestEntry) -> Result<Tensor<f32>> {
    let base = images
        .get(&e.scan_id)
        .ok_or_else(|| Error::MissingImage(e.scan_id.clone()))?;
    Ok(if e.variant == Augmentation::None {
        image_tensor(base)
    } else {
        image_tensor(&flip(base, e.variant))
    })
}

/// Accuracy and mean loss of `model` over a set of manifest entries.
pub fn evaluate_entries(model: &ModelParams, images: &ImageStore, entries: &[&ManifestEntry]) -> Result<(f64, f64)> {
    let per: Vec<(bool, f64)> = entries
        .par_iter()
        .map(|e| {
            let x = entry_tensor(images, e)?;
            let logits = forward_trace(model, &x)?.logits();
            let (loss, _) = cross_entropy(logits, e.verdict.class_index());
            let predicted = if logits[1] >= logits[0] {
                Verdict::Erroneous
            } else {
                Verdict::Faultless
            };
            Ok((predicted == e.verdict, loss as f64))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let correct = per.iter().filter(|(c, _)| *c).count() as f64;
    let loss = per.iter().map(|(_, l)| l).sum::<f64>();
    Ok((correct / n, loss / n))
}

/// One training run with seed `cfg.seed`: weights come from
/// `init_model(cfg.seed)`, epoch shuffles from ChaCha8 stream 1 of the
/// same seed.
pub fn train(manifest: &DatasetManifest, images: &ImageStore, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(manifest, images, cfg, |_| {})
}

pub fn train_with_progress(
    manifest: &DatasetManifest,
    images: &ImageStore,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let input_side = images.values().next().map(|i| i.side()).unwrap_or(crate::scan::INPUT_SIDE);
    let model = if input_side == crate::scan::INPUT_SIDE {
        init_model(cfg.seed)
    } else {
        Params::init(super::arch::Architecture::desk_for_side(input_side), cfg.seed)?
    };
    train_from(model, manifest, images, cfg, &mut on_epoch)
}

/// Trains a given initial model.
pub fn train_from(
    mut model: ModelParams,
    manifest: &DatasetManifest,
    images: &ImageStore,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    for e in &manifest.entries {
        let img = images
            .get(&e.scan_id)
            .ok_or_else(|| Error::MissingImage(e.scan_id.clone()))?;
        check_input(&model, img)?;
    }
    let mut train_entries: Vec<&ManifestEntry> = manifest.split_entries(Split::Train).collect();
    if train_entries.is_empty() {
        return Err(Error::Manifest("no training entries".into()));
    }
    let val_entries: Vec<&ManifestEntry> = manifest.split_entries(Split::Validation).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let lr = cfg.learning_rate as f32;

    let mut trace = TrainTrace::default();
    let mut best: Option<(f64, f64, usize, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        train_entries.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for (b, chunk) in train_entries.chunks(cfg.batch_size).enumerate() {
            let results = chunk
                .par_iter()
                .map(|e| example(&model, &entry_tensor(images, e)?, e.verdict))
                .collect::<Result<Vec<_>>>()?;
            for r in &results {
                loss_sum += r.loss as f64;
                correct += r.correct as usize;
            }
            seen += results.len();
            let (loss, grads) = reduce(&model, results, chunk.iter().map(|e| e.verdict), cfg.class_weights);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            model.add_scaled(&grads, -lr);
        }

        let (val_accuracy, val_loss) = if val_entries.is_empty() {
            (None, None)
        } else {
            let (a, l) = evaluate_entries(&model, images, &val_entries)?;
            (Some(a), Some(l))
        };
        let record = EpochRecord {
            epoch,
            train_accuracy: correct as f64 / seen as f64,
            train_loss: loss_sum / seen as f64,
            val_accuracy,
            val_loss,
        };
        on_epoch(&record);
        trace.epochs.push(record);

        if let (Some(acc), Some(loss)) = (val_accuracy, val_loss) {
            if best.as_ref().is_none_or(|(a, l, _, _)| acc > *a || (acc == *a && loss < *l)) {
                best = Some((acc, loss, epoch, model.clone()));
            }
        }
    }

    let (max_validation_accuracy, best_epoch, best_model) = match best {
        Some((acc, _, epoch, m)) => (Some(acc), epoch, m),
        None => (None, cfg.epochs, model.clone()),
    };
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        best_epoch,
        max_validation_accuracy,
        trace,
    })
}

/// `cfg.runs` independent runs with seeds `cfg.seed`, `cfg.seed + 1`, ...
pub fn train_runs(manifest: &DatasetManifest, images: &ImageStore, cfg: &TrainConfig) -> Result<Vec<TrainOutcome>> {
    cfg.validate()?;
    (0..cfg.runs)
        .map(|r| {
            let run_cfg = TrainConfig {
                seed: cfg.run_seed(r),
                ..cfg.clone()
            };
            train(manifest, images, &run_cfg)
        })
        .collect()
}
