//! Training runs, evaluation, and the multi-run experiment driver.
//!
//! A run trains one classifier under a declared configuration and produces
//! a fully populated record; given identical (seed, split, config, backend)
//! the per-epoch sequence reproduces exactly. In `FrozenFeatures` mode the
//! backbone never changes, so its features are computed once and the head
//! trains on the cached pooled vectors.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::dataset::{ImagePatch, Label, PatchDataset, SplitResult};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, MetricVector};
use crate::model::{
    build_classifier, hwc_batch_to_nchw, BackboneName, ClassifierModel, PatchScorer, TrainMode,
};
use crate::nn::{Adam, Layer, Tensor};
use crate::rng::SplitMix64;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    #[default]
    RandomShufflePerEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    /// Unset means the per-mode default: 1e-4 when fine-tuning everything,
    /// 1e-3 when training the head only.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default = "defaults::optimizer_id")]
    pub optimizer_id: String,
    #[serde(default = "defaults::loss_id")]
    pub loss_id: String,
    #[serde(default)]
    pub seed: u64,
    /// Recorded abstain-band width; inert unless surfaced in reports.
    #[serde(default = "defaults::margin")]
    pub margin: f64,
    #[serde(default)]
    pub sampling: SamplingScheme,
    /// Early-stopping patience in epochs; off by default.
    #[serde(default)]
    pub patience: Option<usize>,
}

mod defaults {
    pub fn epochs() -> usize {
        500
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn optimizer_id() -> String {
        "adam".to_string()
    }
    pub fn loss_id() -> String {
        "bce".to_string()
    }
    pub fn margin() -> f64 {
        0.2
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            learning_rate: None,
            optimizer_id: defaults::optimizer_id(),
            loss_id: defaults::loss_id(),
            seed: 0,
            margin: defaults::margin(),
            sampling: SamplingScheme::RandomShufflePerEpoch,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be >= 1".into()));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidInput(format!("learning_rate must be positive, got {lr}")));
            }
        }
        if self.optimizer_id != "adam" {
            return Err(Error::InvalidInput(format!(
                "unknown optimizer {:?}; only \"adam\" is provided",
                self.optimizer_id
            )));
        }
        if self.loss_id != "bce" {
            return Err(Error::InvalidInput(format!(
                "unknown loss {:?}; only \"bce\" (binary cross-entropy) is provided",
                self.loss_id
            )));
        }
        if !(self.margin >= 0.0 && self.margin < 1.0) {
            return Err(Error::InvalidInput(format!("margin must be in [0, 1), got {}", self.margin)));
        }
        Ok(())
    }

    pub fn resolved_learning_rate(&self, mode: TrainMode) -> f64 {
        self.learning_rate.unwrap_or(match mode {
            TrainMode::FineTuneAll => 1e-4,
            TrainMode::FrozenFeatures => 1e-3,
        })
    }

    /// Copy with the learning rate pinned to its effective value, for
    /// echoing into run artifacts.
    pub fn resolved(&self, mode: TrainMode) -> TrainConfig {
        let mut c = self.clone();
        c.learning_rate = Some(self.resolved_learning_rate(mode));
        c
    }

    /// FNV-1a 64 digest of the canonical JSON encoding, recorded in model
    /// artifact sidecars.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xCBF2_9CE4_8422_2325;
        for b in json.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
        }
        format!("{hash:016x}")
    }
}

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRunRecord {
    pub config: TrainConfig,
    pub model_id: String,
    pub mode: TrainMode,
    pub per_epoch: Vec<EpochStats>,
    pub wall_clock_seconds: f64,
    /// Path of the persisted model artifact, once saved.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_weights_ref: Option<String>,
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Numerically stable binary cross-entropy on logits. Returns the mean
/// loss, the logit gradient (already divided by the batch size), and the
/// number of correct predictions at `threshold`.
fn bce_with_logits(logits: &Tensor, targets: &[f32], threshold: f64) -> (f64, Tensor, usize) {
    let n = targets.len();
    assert_eq!(logits.data.len(), n, "one logit per target");
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    let mut grad = Tensor::zeros(logits.n, 1, 1, 1);
    for ((&z, &target), g) in logits.data.iter().zip(targets).zip(grad.data.iter_mut()) {
        let z = z as f64;
        let y = target as f64;
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let p = 1.0 / (1.0 + (-z).exp());
        *g = ((p - y) / n as f64) as f32;
        if (p >= threshold) == (target == 1.0) {
            correct += 1;
        }
    }
    (loss / n as f64, grad, correct)
}

fn label_target(label: Label) -> f32 {
    match label {
        Label::Positive => 1.0,
        Label::Negative => 0.0,
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Train `model` on the indexed subset of `dataset`. The trainable
/// partition follows the model's mode; see the module docs for the frozen
/// fast path.
pub fn train(
    model: &mut ClassifierModel,
    dataset: &PatchDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
) -> Result<TrainRunRecord> {
    config.validate()?;
    if train_idx.is_empty() {
        return Err(Error::InvalidInput("train set is empty".into()));
    }
    let has = |label: Label| train_idx.iter().any(|&i| dataset.patches[i].label == label);
    if !has(Label::Positive) || !has(Label::Negative) {
        return Err(Error::InvalidInput(
            "train set must contain both classes (loss is degenerate otherwise)".into(),
        ));
    }

    let started = Instant::now();
    let per_epoch = if config.epochs == 0 {
        Vec::new()
    } else {
        match model.mode {
            TrainMode::FineTuneAll => train_full(model, dataset, train_idx, val_idx, config)?,
            TrainMode::FrozenFeatures => train_head_only(model, dataset, train_idx, val_idx, config)?,
        }
    };

    Ok(TrainRunRecord {
        config: config.resolved(model.mode),
        model_id: format!(
            "{}__{}__seed{}",
            model.descriptor.name.as_str().to_ascii_lowercase(),
            model.mode,
            config.seed
        ),
        mode: model.mode,
        per_epoch,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        final_weights_ref: None,
    })
}

fn non_finite_loss_error(epoch: usize, per_epoch: &[EpochStats]) -> Error {
    let last = per_epoch
        .last()
        .map(|e| {
            format!(
                "last finite epoch {} (train_loss {:.6}, train_accuracy {:.4})",
                e.epoch, e.train_loss, e.train_accuracy
            )
        })
        .unwrap_or_else(|| "no finite epoch completed".to_string());
    Error::Training {
        reason: format!("non-finite loss at epoch {epoch}; {last}"),
        partial_epochs: per_epoch.len(),
    }
}

/// Stop once the best validation accuracy is more than `patience` epochs old.
fn maybe_stop_early(per_epoch: &[EpochStats], patience: Option<usize>) -> bool {
    let Some(patience) = patience else {
        return false;
    };
    let vals: Vec<f64> = per_epoch.iter().filter_map(|e| e.val_accuracy).collect();
    if vals.len() <= patience {
        return false;
    }
    let mut best = 0;
    for (i, v) in vals.iter().enumerate() {
        if *v > vals[best] {
            best = i;
        }
    }
    vals.len() - 1 - best >= patience
}

fn train_full(
    model: &mut ClassifierModel,
    dataset: &PatchDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    let lr = config.resolved_learning_rate(model.mode);
    let mut opt = Adam::new(lr);
    let mut rng = SplitMix64::new(config.seed);
    let mut order = train_idx.to_vec();
    let n = order.len();
    let mut per_epoch: Vec<EpochStats> = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&ImagePatch> = chunk.iter().map(|&i| &dataset.patches[i]).collect();
            let prepared = model.prepare_patches(&refs);
            let x = hwc_batch_to_nchw(&prepared, model.descriptor.native_input_size);
            let targets: Vec<f32> = refs.iter().map(|p| label_target(p.label)).collect();

            let features = model.backbone.forward(&x, true);
            let logits = model.head.forward(&features, true);
            let (loss, dlogits, batch_correct) =
                bce_with_logits(&logits, &targets, model.decision_threshold);
            if !loss.is_finite() {
                return Err(non_finite_loss_error(epoch, &per_epoch));
            }
            loss_sum += loss * chunk.len() as f64;
            correct += batch_correct;

            opt.zero_grads(&mut |f| {
                model.backbone.for_each_param(f);
                model.head.for_each_param(f);
            });
            let dfeatures = model.head.backward(&dlogits);
            model.backbone.backward(&dfeatures);
            opt.step(&mut |f| {
                model.backbone.for_each_param(f);
                model.head.for_each_param(f);
            });
        }
        let val_accuracy = if val_idx.is_empty() {
            None
        } else {
            Some(subset_accuracy(model, dataset, val_idx, config.batch_size)?)
        };
        per_epoch.push(EpochStats {
            epoch,
            train_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            val_accuracy,
        });
        if maybe_stop_early(&per_epoch, config.patience) {
            break;
        }
    }
    Ok(per_epoch)
}

/// Head-only training against cached pooled backbone features. The backbone
/// is evaluated exactly once per subset; its parameters are never touched.
fn train_head_only(
    model: &mut ClassifierModel,
    dataset: &PatchDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    let lr = config.resolved_learning_rate(model.mode);
    let pooled_train = pooled_features(model, dataset, train_idx, config.batch_size);
    let pooled_val = pooled_features(model, dataset, val_idx, config.batch_size);
    let targets: Vec<f32> = train_idx
        .iter()
        .map(|&i| label_target(dataset.patches[i].label))
        .collect();
    let val_targets: Vec<f32> = val_idx
        .iter()
        .map(|&i| label_target(dataset.patches[i].label))
        .collect();

    let feat = model.feature_channels;
    let mut opt = Adam::new(lr);
    let mut rng = SplitMix64::new(config.seed);
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    let n = order.len();
    let mut per_epoch: Vec<EpochStats> = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut x = Tensor::zeros(chunk.len(), feat, 1, 1);
            let mut batch_targets = Vec::with_capacity(chunk.len());
            for (row, &pos) in chunk.iter().enumerate() {
                x.sample_mut(row)
                    .copy_from_slice(&pooled_train[pos * feat..(pos + 1) * feat]);
                batch_targets.push(targets[pos]);
            }
            let logits = model.head.forward_pooled(&x, true);
            let (loss, dlogits, batch_correct) =
                bce_with_logits(&logits, &batch_targets, model.decision_threshold);
            if !loss.is_finite() {
                return Err(non_finite_loss_error(epoch, &per_epoch));
            }
            loss_sum += loss * chunk.len() as f64;
            correct += batch_correct;

            opt.zero_grads(&mut |f| model.head.for_each_param(f));
            model.head.backward_pooled(&dlogits);
            opt.step(&mut |f| model.head.for_each_param(f));
        }
        let val_accuracy = if val_idx.is_empty() {
            None
        } else {
            let mut x = Tensor::zeros(val_idx.len(), feat, 1, 1);
            for row in 0..val_idx.len() {
                x.sample_mut(row)
                    .copy_from_slice(&pooled_val[row * feat..(row + 1) * feat]);
            }
            let logits = model.head.forward_pooled(&x, false);
            let mut ok = 0usize;
            for (i, &z) in logits.data.iter().enumerate() {
                let p = 1.0 / (1.0 + (-z as f64).exp());
                if (p >= model.decision_threshold) == (val_targets[i] == 1.0) {
                    ok += 1;
                }
            }
            Some(ok as f64 / val_idx.len() as f64)
        };
        per_epoch.push(EpochStats {
            epoch,
            train_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            val_accuracy,
        });
        if maybe_stop_early(&per_epoch, config.patience) {
            break;
        }
    }
    Ok(per_epoch)
}

/// Pooled (post-GAP) feature vectors for a subset, concatenated row-major.
fn pooled_features(
    model: &mut ClassifierModel,
    dataset: &PatchDataset,
    idx: &[usize],
    batch_size: usize,
) -> Vec<f32> {
    let feat = model.feature_channels;
    let mut out = vec![0.0f32; idx.len() * feat];
    for (chunk_no, chunk) in idx.chunks(batch_size).enumerate() {
        let refs: Vec<&ImagePatch> = chunk.iter().map(|&i| &dataset.patches[i]).collect();
        let prepared = model.prepare_patches(&refs);
        let x = hwc_batch_to_nchw(&prepared, model.descriptor.native_input_size);
        let features = model.backbone.forward(&x, false);
        let pooled = model.head.pool(&features);
        let offset = chunk_no * batch_size * feat;
        out[offset..offset + chunk.len() * feat].copy_from_slice(&pooled.data);
    }
    out
}

fn subset_accuracy(
    model: &mut ClassifierModel,
    dataset: &PatchDataset,
    idx: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let mut correct = 0usize;
    for chunk in idx.chunks(batch_size) {
        let refs: Vec<&ImagePatch> = chunk.iter().map(|&i| &dataset.patches[i]).collect();
        let probs = model.predict_patches(&refs)?;
        for (p, patch) in probs.iter().zip(&refs) {
            if (*p >= model.decision_threshold) == (patch.label == Label::Positive) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / idx.len() as f64)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// A test patch the classifier got wrong.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MisclassifiedPatch {
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub path: Option<String>,
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub confusion: ConfusionMatrix,
    pub misclassified: Vec<MisclassifiedPatch>,
    /// Predictions whose score fell within the abstain band
    /// (threshold +- margin/2); informational only.
    pub low_confidence: usize,
}

/// Score the indexed test subset and count the four confusion outcomes,
/// with positive meaning "cracked".
pub fn evaluate_detailed(
    scorer: &mut dyn PatchScorer,
    dataset: &PatchDataset,
    test_idx: &[usize],
    threshold: f64,
    abstain_margin: f64,
) -> Result<EvalOutcome> {
    if test_idx.is_empty() {
        return Err(Error::InvalidInput("test set is empty".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut confusion = ConfusionMatrix::default();
    let mut misclassified = Vec::new();
    let mut low_confidence = 0usize;
    for chunk in test_idx.chunks(64) {
        let refs: Vec<&ImagePatch> = chunk.iter().map(|&i| &dataset.patches[i]).collect();
        let scores = scorer.score_patches(&refs)?;
        for ((&i, patch), &score) in chunk.iter().zip(&refs).zip(&scores) {
            let predicted = crate::model::classify(score, threshold)?;
            match (patch.label, predicted) {
                (Label::Positive, Label::Positive) => confusion.tp += 1,
                (Label::Negative, Label::Positive) => confusion.fp += 1,
                (Label::Negative, Label::Negative) => confusion.tn += 1,
                (Label::Positive, Label::Negative) => confusion.fn_ += 1,
            }
            if (score - threshold).abs() < abstain_margin / 2.0 {
                low_confidence += 1;
            }
            if predicted != patch.label {
                misclassified.push(MisclassifiedPatch {
                    index: i,
                    path: patch.source_id.clone(),
                    label: patch.label,
                    score,
                });
            }
        }
    }
    assert_eq!(
        confusion.total() as usize,
        test_idx.len(),
        "confusion counts must cover the test set"
    );
    Ok(EvalOutcome {
        confusion,
        misclassified,
        low_confidence,
    })
}

pub fn evaluate(
    scorer: &mut dyn PatchScorer,
    dataset: &PatchDataset,
    test_idx: &[usize],
    threshold: f64,
) -> Result<ConfusionMatrix> {
    Ok(evaluate_detailed(scorer, dataset, test_idx, threshold, 0.0)?.confusion)
}

// ---------------------------------------------------------------------------
// Run result files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix: f64,
    pub finished_unix: f64,
}

/// One persisted experiment run: the effective configuration plus the
/// evaluation outcome. Filenames encode (backbone, mode, seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub backbone: BackboneName,
    pub mode: TrainMode,
    pub seed: u64,
    pub config: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dataset_root: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub split_manifest: Option<String>,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricVector,
    pub low_confidence: usize,
    pub misclassified: Vec<MisclassifiedPatch>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_epoch: Option<Vec<EpochStats>>,
    pub timestamps: Timestamps,
    pub wall_clock_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub model_artifact: Option<String>,
}

impl RunResult {
    pub fn file_name(backbone: BackboneName, mode: TrainMode, seed: u64) -> String {
        format!(
            "run__{}__{}__seed{}.json",
            backbone.as_str().to_ascii_lowercase(),
            mode.as_str(),
            seed
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("run result serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<RunResult> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ResultFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::ResultFile {
            path: path.to_path_buf(),
            reason: format!("malformed JSON: {e}"),
        })
    }
}

/// Run result files (`run__*.json`) under a directory, sorted by name.
pub fn list_run_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingPath(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("run__") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_run_results(paths: &[PathBuf]) -> Result<Vec<RunResult>> {
    paths.iter().map(|p| RunResult::read(p)).collect()
}

// ---------------------------------------------------------------------------
// Experiment driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub backbones: Vec<BackboneName>,
    pub modes: Vec<TrainMode>,
    pub n_runs: usize,
    pub base_config: TrainConfig,
    pub weight_store: PathBuf,
    pub output_dir: PathBuf,
    /// When false, `FrozenFeatures` cells skip head training entirely and
    /// evaluate the seed-initialized head (the literal zero-training regime).
    pub frozen_head_training: bool,
    pub save_models: bool,
    /// Echoed into run results for report generation.
    pub dataset_root: Option<String>,
    pub split_manifest: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunFailure {
    pub backbone: BackboneName,
    pub mode: TrainMode,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct ExperimentOutcome {
    pub results: Vec<RunResult>,
    pub result_files: Vec<PathBuf>,
    pub failures: Vec<RunFailure>,
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Execute `n_runs` independently seeded runs for every (backbone, mode)
/// cell, evaluate each on the pinned test split, and persist one result
/// file per run. Failures are recorded per cell without aborting siblings.
pub fn run_experiment(
    spec: &ExperimentSpec,
    dataset: &PatchDataset,
    split: &SplitResult,
) -> Result<ExperimentOutcome> {
    if spec.n_runs == 0 {
        return Err(Error::InvalidInput("n_runs must be >= 1".into()));
    }
    spec.base_config.validate()?;
    std::fs::create_dir_all(&spec.output_dir).map_err(|e| Error::io(&spec.output_dir, e))?;

    let mut outcome = ExperimentOutcome::default();
    for &backbone in &spec.backbones {
        for &mode in &spec.modes {
            for run_no in 0..spec.n_runs {
                let seed = spec.base_config.seed.wrapping_add(run_no as u64);
                match run_single(spec, dataset, split, backbone, mode, seed) {
                    Ok((result, path)) => {
                        outcome.results.push(result);
                        outcome.result_files.push(path);
                    }
                    Err(e) => outcome.failures.push(RunFailure {
                        backbone,
                        mode,
                        seed,
                        error: e.to_string(),
                    }),
                }
            }
        }
    }
    if !outcome.failures.is_empty() {
        let path = spec.output_dir.join("failures.json");
        let json =
            serde_json::to_string_pretty(&outcome.failures).expect("failures serialize");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(outcome)
}

fn run_single(
    spec: &ExperimentSpec,
    dataset: &PatchDataset,
    split: &SplitResult,
    backbone: BackboneName,
    mode: TrainMode,
    seed: u64,
) -> Result<(RunResult, PathBuf)> {
    let started_unix = now_unix();
    let mut config = spec.base_config.clone();
    config.seed = seed;
    if mode == TrainMode::FrozenFeatures && !spec.frozen_head_training {
        // Literal zero-training regime: evaluate the seed-initialized head.
        config.epochs = 0;
    }

    let mut model = build_classifier(backbone, mode, seed, &spec.weight_store)?;
    let record = train(&mut model, dataset, &split.train, &split.val, &config)?;
    let threshold = model.decision_threshold;
    let eval = evaluate_detailed(&mut model, dataset, &split.test, threshold, config.margin)?;

    let model_artifact = if spec.save_models {
        let dir = spec.output_dir.join("models");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!(
            "{}__{}__seed{}.ckpt",
            backbone.as_str().to_ascii_lowercase(),
            mode.as_str(),
            seed
        ));
        model.save_artifact(&path, Some(record.config.digest()))?;
        Some(path.display().to_string())
    } else {
        None
    };

    let result = RunResult {
        backbone,
        mode,
        seed,
        config: record.config.clone(),
        dataset_root: spec.dataset_root.clone(),
        split_manifest: spec.split_manifest.clone(),
        confusion: eval.confusion,
        metrics: eval.confusion.metric_vector(),
        low_confidence: eval.low_confidence,
        misclassified: eval.misclassified,
        per_epoch: Some(record.per_epoch),
        timestamps: Timestamps {
            started_unix,
            finished_unix: now_unix(),
        },
        wall_clock_seconds: record.wall_clock_seconds,
        model_artifact,
    };
    let path = spec.output_dir.join(RunResult::file_name(backbone, mode, seed));
    result.write(&path)?;
    Ok((result, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ImagePatch;
    use crate::model::{descriptor, zoo, BackboneDescriptor, Preprocessing};
    use crate::nn::Sequential;

    /// Classifier over a tiny input so tests run in milliseconds: real zoo
    /// backbone, custom native size.
    fn small_classifier(mode: TrainMode, seed: u64, size: usize) -> ClassifierModel {
        let desc = BackboneDescriptor {
            native_input_size: size,
            preprocessing_id: Preprocessing::UnitRange,
            ..descriptor(BackboneName::EfficientNetV2)
        };
        let mut rng = SplitMix64::new(0xA11CE);
        let (backbone, feat) = zoo::build_backbone(BackboneName::EfficientNetV2, &mut rng);
        ClassifierModel::from_parts(desc, mode, seed, backbone, feat)
    }

    fn small_crack_dataset(n_per_class: usize, size: usize) -> PatchDataset {
        crate::synth::synth_dataset(n_per_class, size, 17)
    }

    fn quick_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            learning_rate: Some(3e-3),
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_leaves_weights_untouched() {
        let dataset = small_crack_dataset(4, 32);
        let idx: Vec<usize> = (0..dataset.len()).collect();
        for mode in [TrainMode::FineTuneAll, TrainMode::FrozenFeatures] {
            let mut model = small_classifier(mode, 3, 32);
            let backbone_before = model.backbone_checksum();
            let head_before = model.head_checksum();
            let record = train(&mut model, &dataset, &idx, &[], &quick_config(0)).unwrap();
            assert!(record.per_epoch.is_empty());
            assert_eq!(model.backbone_checksum(), backbone_before);
            assert_eq!(model.head_checksum(), head_before);
        }
    }

    #[test]
    fn degenerate_train_sets_error() {
        let dataset = small_crack_dataset(4, 32);
        let mut model = small_classifier(TrainMode::FineTuneAll, 3, 32);
        let err = train(&mut model, &dataset, &[], &[], &quick_config(1)).unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
        // All-negative subset (negatives come first in synth datasets).
        let single: Vec<usize> = (0..4).collect();
        let err = train(&mut model, &dataset, &single, &[], &quick_config(1)).unwrap_err();
        assert!(err.to_string().contains("both classes"), "{err}");
    }

    /// A linear head over identity features must fit a linearly separable
    /// toy set exactly.
    #[test]
    fn identity_backbone_fits_separable_toy_set() {
        // 1x1 patches: positives bright red channel, negatives dark.
        let mut patches = Vec::new();
        for i in 0..20u8 {
            patches.push(ImagePatch::new(
                vec![200 + (i % 20), 90, 120],
                1,
                Label::Positive,
                None,
                None,
            ));
            patches.push(ImagePatch::new(
                vec![40 + (i % 20), 90, 120],
                1,
                Label::Negative,
                None,
                None,
            ));
        }
        let dataset = PatchDataset::from_patches(patches);
        let idx: Vec<usize> = (0..dataset.len()).collect();

        let desc = BackboneDescriptor {
            native_input_size: 1,
            preprocessing_id: Preprocessing::UnitRange,
            ..descriptor(BackboneName::Vgg19)
        };
        // Identity feature extractor: features are the raw 3 channels.
        let mut model =
            ClassifierModel::from_parts(desc, TrainMode::FineTuneAll, 1, Sequential::default(), 3);
        let config = TrainConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: Some(0.05),
            seed: 1,
            ..TrainConfig::default()
        };
        let record = train(&mut model, &dataset, &idx, &[], &config).unwrap();
        let last = record.per_epoch.last().unwrap();
        assert_eq!(last.train_accuracy, 1.0, "separable set must be fit exactly");
        assert_eq!(record.per_epoch.len(), 200);
        assert!(record.wall_clock_seconds > 0.0);
        // Epoch indices are 1-based and strictly increasing.
        for (i, e) in record.per_epoch.iter().enumerate() {
            assert_eq!(e.epoch, i + 1);
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let dataset = small_crack_dataset(8, 32);
        let idx: Vec<usize> = (0..dataset.len()).collect();
        let (train_idx, val_idx) = idx.split_at(12);
        let run = || {
            let mut model = small_classifier(TrainMode::FineTuneAll, 3, 32);
            let record =
                train(&mut model, &dataset, train_idx, val_idx, &quick_config(3)).unwrap();
            (record.per_epoch, model.backbone_checksum(), model.head_checksum())
        };
        let (epochs_a, backbone_a, head_a) = run();
        let (epochs_b, backbone_b, head_b) = run();
        assert_eq!(epochs_a, epochs_b, "per-epoch history must reproduce exactly");
        assert_eq!(backbone_a, backbone_b);
        assert_eq!(head_a, head_b);
    }

    #[test]
    fn frozen_training_never_touches_backbone() {
        let dataset = small_crack_dataset(8, 32);
        let idx: Vec<usize> = (0..dataset.len()).collect();
        let mut model = small_classifier(TrainMode::FrozenFeatures, 3, 32);
        let backbone_before = model.backbone_checksum();
        let head_before = model.head_checksum();
        let record = train(&mut model, &dataset, &idx, &[], &quick_config(4)).unwrap();
        assert_eq!(model.backbone_checksum(), backbone_before);
        assert_ne!(model.head_checksum(), head_before, "head must have trained");
        assert_eq!(record.per_epoch.len(), 4);
    }

    struct StubScorer(Vec<f64>);

    impl PatchScorer for StubScorer {
        fn score_patches(&mut self, patches: &[&ImagePatch]) -> crate::Result<Vec<f64>> {
            let scores = self.0.clone();
            Ok(patches
                .iter()
                .enumerate()
                .map(|(i, _)| scores[i % scores.len()])
                .collect())
        }
    }

    struct EchoScorer;

    impl PatchScorer for EchoScorer {
        fn score_patches(&mut self, patches: &[&ImagePatch]) -> crate::Result<Vec<f64>> {
            Ok(patches
                .iter()
                .map(|p| if p.label == Label::Positive { 1.0 } else { 0.0 })
                .collect())
        }
    }

    /// 3 positives then 2 negatives, as 1x1 patches.
    fn three_two() -> PatchDataset {
        let mut patches = Vec::new();
        for _ in 0..3 {
            patches.push(ImagePatch::new(vec![0; 3], 1, Label::Positive, None, None));
        }
        for _ in 0..2 {
            patches.push(ImagePatch::new(vec![0; 3], 1, Label::Negative, None, None));
        }
        PatchDataset::from_patches(patches)
    }

    #[test]
    fn evaluate_stub_counts() {
        let dataset = three_two();
        let idx: Vec<usize> = (0..5).collect();
        let cm = evaluate(&mut StubScorer(vec![1.0]), &dataset, &idx, 0.5).unwrap();
        assert_eq!((cm.tp, cm.fp, cm.tn, cm.fn_), (3, 2, 0, 0));

        let cm = evaluate(&mut EchoScorer, &dataset, &idx, 0.5).unwrap();
        assert_eq!((cm.fp, cm.fn_), (0, 0));
        assert_eq!(cm.accuracy(), Some(1.0));
        assert_eq!(cm.total(), 5);

        assert!(evaluate(&mut EchoScorer, &dataset, &[], 0.5).is_err());
    }

    #[test]
    fn evaluate_threshold_boundary_matches_classify() {
        let dataset = three_two();
        let idx = [0usize];
        // Score exactly 0.5: positive at threshold 0.5, negative at 0.50001.
        let cm = evaluate(&mut StubScorer(vec![0.5]), &dataset, &idx, 0.5).unwrap();
        assert_eq!((cm.tp, cm.fn_), (1, 0));
        let cm = evaluate(&mut StubScorer(vec![0.5]), &dataset, &idx, 0.50001).unwrap();
        assert_eq!((cm.tp, cm.fn_), (0, 1));
    }

    #[test]
    fn evaluate_detailed_collects_misclassified_and_abstain_band() {
        let dataset = three_two();
        let idx: Vec<usize> = (0..5).collect();
        // Positives scored 0.45 (miss, inside band), negatives 0.05.
        let mut scorer = StubScorer(vec![0.45, 0.45, 0.45, 0.05, 0.05]);
        let out = evaluate_detailed(&mut scorer, &dataset, &idx, 0.5, 0.2).unwrap();
        assert_eq!((out.confusion.tp, out.confusion.fn_, out.confusion.tn), (0, 3, 2));
        assert_eq!(out.misclassified.len(), 3);
        assert!(out.misclassified.iter().all(|m| m.label == Label::Positive));
        assert_eq!(out.low_confidence, 3);
    }

    #[test]
    fn patience_stops_after_plateau() {
        let mk = |vals: &[f64]| -> Vec<EpochStats> {
            vals.iter()
                .enumerate()
                .map(|(i, &v)| EpochStats {
                    epoch: i + 1,
                    train_loss: 0.0,
                    train_accuracy: 0.0,
                    val_accuracy: Some(v),
                })
                .collect()
        };
        assert!(!maybe_stop_early(&mk(&[0.5, 0.6, 0.7]), Some(2)));
        assert!(maybe_stop_early(&mk(&[0.9, 0.6, 0.7]), Some(2)));
        assert!(!maybe_stop_early(&mk(&[0.9, 0.6, 0.7]), None));
    }
}
