//! Backbone registry and binary crack classifiers.
//!
//! The registry holds the published descriptors of the four supported
//! backbones. A classifier is a backbone loaded from a local weight store
//! with its classification layers replaced by a binary head: global average
//! pooling over the backbone's feature maps, one fully connected layer, and
//! a sigmoid output probability. The training mode decides which parameters
//! are trainable: `FrozenFeatures` freezes the backbone and trains only the
//! head, `FineTuneAll` trains everything.

pub mod zoo;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{ImagePatch, Label, NormalizedPatch};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, TensorEntry};
use crate::nn::{Dense, GlobalAvgPool, Layer, Param, Sequential, Tensor};
use crate::rng::SplitMix64;

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BackboneName {
    #[serde(rename = "VGG19")]
    Vgg19,
    #[serde(rename = "ResNet50")]
    ResNet50,
    #[serde(rename = "InceptionV3")]
    InceptionV3,
    #[serde(rename = "EfficientNetV2")]
    EfficientNetV2,
}

impl BackboneName {
    pub fn all() -> [BackboneName; 4] {
        [
            BackboneName::Vgg19,
            BackboneName::ResNet50,
            BackboneName::InceptionV3,
            BackboneName::EfficientNetV2,
        ]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneName::Vgg19 => "VGG19",
            BackboneName::ResNet50 => "ResNet50",
            BackboneName::InceptionV3 => "InceptionV3",
            BackboneName::EfficientNetV2 => "EfficientNetV2",
        }
    }

    /// Case-insensitive lookup; errors list the registered names.
    pub fn parse(name: &str) -> Result<BackboneName> {
        let lower = name.to_ascii_lowercase();
        Self::all()
            .into_iter()
            .find(|b| b.as_str().to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::UnknownBackbone {
                name: name.to_string(),
                registered: Self::all().map(|b| b.as_str()).join(", "),
            })
    }
}

impl fmt::Display for BackboneName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pixel preprocessing contract a backbone expects at its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocessing {
    /// v / 255, onto [0, 1].
    UnitRange,
    /// v / 127.5 - 1, onto [-1, 1].
    SymmetricRange,
    /// (v / 255 - mean_c) / std_c with the conventional per-channel
    /// statistics mean (0.485, 0.456, 0.406), std (0.229, 0.224, 0.225).
    ImagenetMeanStd,
}

impl Preprocessing {
    pub fn as_str(self) -> &'static str {
        match self {
            Preprocessing::UnitRange => "unit_range",
            Preprocessing::SymmetricRange => "symmetric_range",
            Preprocessing::ImagenetMeanStd => "imagenet_mean_std",
        }
    }

    pub fn apply(self, patch: &ImagePatch) -> NormalizedPatch {
        const MEAN: [f64; 3] = [0.485, 0.456, 0.406];
        const STD: [f64; 3] = [0.229, 0.224, 0.225];
        let size = patch.size();
        let data = patch
            .pixels()
            .iter()
            .enumerate()
            .map(|(i, &v)| match self {
                Preprocessing::UnitRange => v as f64 / 255.0,
                Preprocessing::SymmetricRange => v as f64 / 127.5 - 1.0,
                Preprocessing::ImagenetMeanStd => {
                    let c = i % 3;
                    (v as f64 / 255.0 - MEAN[c]) / STD[c]
                }
            })
            .collect();
        NormalizedPatch::new(size, size, data)
    }
}

/// Published metadata for a registered backbone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneDescriptor {
    pub name: BackboneName,
    pub declared_layers: u32,
    pub declared_params_millions: f64,
    /// Side length of the square input the backbone expects.
    pub native_input_size: usize,
    pub preprocessing_id: Preprocessing,
}

/// The four registered descriptors, in registry order.
pub fn list_backbones() -> Vec<BackboneDescriptor> {
    BackboneName::all().into_iter().map(descriptor).collect()
}

pub fn descriptor(name: BackboneName) -> BackboneDescriptor {
    match name {
        BackboneName::Vgg19 => BackboneDescriptor {
            name,
            declared_layers: 19,
            declared_params_millions: 143.0,
            native_input_size: 224,
            preprocessing_id: Preprocessing::ImagenetMeanStd,
        },
        BackboneName::ResNet50 => BackboneDescriptor {
            name,
            declared_layers: 50,
            declared_params_millions: 23.0,
            native_input_size: 224,
            preprocessing_id: Preprocessing::ImagenetMeanStd,
        },
        BackboneName::InceptionV3 => BackboneDescriptor {
            name,
            declared_layers: 48,
            declared_params_millions: 21.0,
            native_input_size: 299,
            preprocessing_id: Preprocessing::SymmetricRange,
        },
        // B0 variant.
        BackboneName::EfficientNetV2 => BackboneDescriptor {
            name,
            declared_layers: 237,
            declared_params_millions: 25.0,
            native_input_size: 224,
            preprocessing_id: Preprocessing::UnitRange,
        },
    }
}

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Backbone frozen at its pretrained weights; only the head trains.
    FrozenFeatures,
    /// Every parameter trains.
    FineTuneAll,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::FrozenFeatures => "frozen_features",
            TrainMode::FineTuneAll => "fine_tune_all",
        }
    }

    pub fn parse(s: &str) -> Result<TrainMode> {
        match s {
            "frozen_features" => Ok(TrainMode::FrozenFeatures),
            "fine_tune_all" => Ok(TrainMode::FineTuneAll),
            other => Err(Error::InvalidInput(format!(
                "unknown train mode {other:?}; expected frozen_features or fine_tune_all"
            ))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary classification head: global average pooling then one fully
/// connected layer producing a single crack logit.
pub struct Head {
    gap: GlobalAvgPool,
    pub fc: Dense,
}

impl Head {
    pub fn new(feature_channels: usize, rng: &mut SplitMix64) -> Self {
        Head {
            gap: GlobalAvgPool::new(),
            fc: Dense::new("head.fc", feature_channels, 1, rng),
        }
    }

    /// Pool feature maps without applying the dense layer (used to cache
    /// features when the backbone is frozen).
    pub fn pool(&mut self, features: &Tensor) -> Tensor {
        self.gap.forward(features, false)
    }

    pub fn forward_pooled(&mut self, pooled: &Tensor, train: bool) -> Tensor {
        self.fc.forward(pooled, train)
    }

    pub fn backward_pooled(&mut self, dy: &Tensor) -> Tensor {
        self.fc.backward(dy)
    }
}

impl Layer for Head {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let pooled = self.gap.forward(x, train);
        self.fc.forward(&pooled, train)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d = self.fc.backward(dy);
        self.gap.backward(&d)
    }

    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc.for_each_param(f);
    }

    fn for_each_param_ref(&self, f: &mut dyn FnMut(&Param)) {
        self.fc.for_each_param_ref(f);
    }
}

/// A backbone with a grafted binary head and a trainability regime.
pub struct ClassifierModel {
    pub descriptor: BackboneDescriptor,
    pub mode: TrainMode,
    pub seed: u64,
    pub decision_threshold: f64,
    pub backbone: Sequential,
    pub head: Head,
    pub feature_channels: usize,
}

impl fmt::Debug for ClassifierModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassifierModel")
            .field("backbone", &self.descriptor.name)
            .field("mode", &self.mode)
            .field("seed", &self.seed)
            .field("decision_threshold", &self.decision_threshold)
            .field("total_params", &self.total_param_count())
            .finish()
    }
}

impl ClassifierModel {
    /// Assemble a classifier from explicit parts. The head is initialized
    /// deterministically from `seed` and trainability follows `mode`.
    pub fn from_parts(
        descriptor: BackboneDescriptor,
        mode: TrainMode,
        seed: u64,
        backbone: Sequential,
        feature_channels: usize,
    ) -> Self {
        let mut head_rng = SplitMix64::new(seed);
        let head = Head::new(feature_channels, &mut head_rng);
        let mut model = ClassifierModel {
            descriptor,
            mode,
            seed,
            decision_threshold: 0.5,
            backbone,
            head,
            feature_channels,
        };
        model.apply_mode();
        model
    }

    fn apply_mode(&mut self) {
        let backbone_trainable = self.mode == TrainMode::FineTuneAll;
        self.backbone
            .for_each_param(&mut |p: &mut Param| p.trainable = backbone_trainable);
        self.head.for_each_param(&mut |p: &mut Param| p.trainable = true);
    }

    pub fn trainable_param_count(&self) -> usize {
        let mut count = 0;
        let mut tally = |p: &Param| {
            if p.trainable {
                count += p.len();
            }
        };
        self.backbone.for_each_param_ref(&mut tally);
        self.head.for_each_param_ref(&mut tally);
        count
    }

    pub fn total_param_count(&self) -> usize {
        let mut count = 0;
        let mut tally = |p: &Param| count += p.len();
        self.backbone.for_each_param_ref(&mut tally);
        self.head.for_each_param_ref(&mut tally);
        count
    }

    pub fn head_param_count(&self) -> usize {
        let mut count = 0;
        self.head.for_each_param_ref(&mut |p| count += p.len());
        count
    }

    pub fn backbone_checksum(&self) -> u64 {
        checkpoint::params_checksum(&self.backbone)
    }

    pub fn head_checksum(&self) -> u64 {
        checkpoint::params_checksum(&self.head)
    }

    /// Normalize patches with this backbone's preprocessing contract and
    /// bilinearly resize them to the native input size when they differ.
    pub fn prepare_patches(&self, patches: &[&ImagePatch]) -> Vec<NormalizedPatch> {
        use rayon::prelude::*;
        let native = self.descriptor.native_input_size;
        let preprocessing = self.descriptor.preprocessing_id;
        patches
            .par_iter()
            .map(|p| {
                let normalized = preprocessing.apply(p);
                if normalized.height == native && normalized.width == native {
                    normalized
                } else {
                    resize_bilinear(&normalized, native)
                }
            })
            .collect()
    }

    /// Score a batch of normalized, native-size patches. Returns one crack
    /// probability per input, order preserved.
    pub fn predict(&mut self, batch: &[NormalizedPatch]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let native = self.descriptor.native_input_size;
        for (i, p) in batch.iter().enumerate() {
            if p.height != native || p.width != native {
                return Err(Error::InvalidInput(format!(
                    "patch {i} is {}x{}, expected {native}x{native} for {}",
                    p.height, p.width, self.descriptor.name
                )));
            }
        }
        let x = hwc_batch_to_nchw(batch, native);
        Ok(self.forward_probabilities(&x))
    }

    /// Convenience path: preprocess raw patches then score them.
    pub fn predict_patches(&mut self, patches: &[&ImagePatch]) -> Result<Vec<f64>> {
        let prepared = self.prepare_patches(patches);
        self.predict(&prepared)
    }

    /// Forward a prepared NCHW batch to probabilities (inference mode).
    pub fn forward_probabilities(&mut self, x: &Tensor) -> Vec<f64> {
        let features = self.backbone.forward(x, false);
        let logits = self.head.forward(&features, false);
        logits
            .data
            .iter()
            .map(|&z| 1.0 / (1.0 + (-z as f64).exp()))
            .collect()
    }

    /// Persist this model as a checkpoint plus JSON sidecar.
    pub fn save_artifact(&self, path: &Path, training_config_digest: Option<String>) -> Result<()> {
        let mut tensors = Vec::new();
        let mut push = |p: &Param| {
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.data.clone(),
            })
        };
        self.backbone.for_each_param_ref(&mut push);
        self.head.for_each_param_ref(&mut push);
        checkpoint::save_tensors(path, &tensors)?;

        let sidecar = ArtifactSidecar {
            backbone: self.descriptor.name,
            mode: self.mode,
            seed: self.seed,
            decision_threshold: self.decision_threshold,
            preprocessing_id: self.descriptor.preprocessing_id,
            training_config_digest,
        };
        let sidecar_path = sidecar_path(path);
        let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(&sidecar_path, json + "\n").map_err(|e| Error::io(&sidecar_path, e))
    }

    /// Load a model artifact saved by [`ClassifierModel::save_artifact`].
    pub fn load_artifact(path: &Path) -> Result<ClassifierModel> {
        let sidecar_path = sidecar_path(path);
        let text =
            std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
        let sidecar: ArtifactSidecar =
            serde_json::from_str(&text).map_err(|e| Error::json(&sidecar_path, e))?;

        let mut arch_rng = SplitMix64::new(0);
        let (backbone, feature_channels) = zoo::build_backbone(sidecar.backbone, &mut arch_rng);
        let mut model = ClassifierModel::from_parts(
            descriptor(sidecar.backbone),
            sidecar.mode,
            sidecar.seed,
            backbone,
            feature_channels,
        );
        model.decision_threshold = sidecar.decision_threshold;

        let tensors = checkpoint::load_tensors(path)?;
        apply_tensors(path, tensors, &mut model)?;
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArtifactSidecar {
    backbone: BackboneName,
    mode: TrainMode,
    seed: u64,
    decision_threshold: f64,
    preprocessing_id: Preprocessing,
    training_config_digest: Option<String>,
}

fn sidecar_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("json")
}

fn apply_tensors(path: &Path, tensors: Vec<TensorEntry>, model: &mut ClassifierModel) -> Result<()> {
    let mut by_name: std::collections::HashMap<String, TensorEntry> =
        tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let mut problems = Vec::new();
    let mut apply = |p: &mut Param| match by_name.remove(&p.name) {
        Some(t) if t.shape == p.shape => p.data = t.data,
        Some(t) => problems.push(format!("{}: shape {:?} vs {:?}", p.name, t.shape, p.shape)),
        None => problems.push(format!("{}: missing", p.name)),
    };
    model.backbone.for_each_param(&mut apply);
    model.head.for_each_param(&mut apply);
    for extra in by_name.keys() {
        problems.push(format!("{extra}: unexpected"));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: problems.join("; "),
        })
    }
}

/// Path of the pretrained checkpoint for `name` inside a weight store.
pub fn weight_store_path(store: &Path, name: BackboneName) -> PathBuf {
    store.join(format!("{}.ckpt", name.as_str().to_ascii_lowercase()))
}

/// Construct a classifier: the named backbone loaded with pretrained
/// weights from `weight_store`, original classification layers replaced by
/// a seed-initialized binary head, trainability set per `mode`.
pub fn build_classifier(
    name: BackboneName,
    mode: TrainMode,
    seed: u64,
    weight_store: &Path,
) -> Result<ClassifierModel> {
    let ckpt = weight_store_path(weight_store, name);
    if !ckpt.is_file() {
        return Err(Error::MissingWeights {
            store: weight_store.to_path_buf(),
            backbone: name.as_str().to_string(),
            expected: ckpt,
        });
    }
    let mut arch_rng = SplitMix64::new(0);
    let (mut backbone, feature_channels) = zoo::build_backbone(name, &mut arch_rng);
    checkpoint::load_params(&ckpt, &mut backbone)?;
    Ok(ClassifierModel::from_parts(
        descriptor(name),
        mode,
        seed,
        backbone,
        feature_channels,
    ))
}

/// Write a seed-initialized checkpoint for `name` into a weight store.
/// Used to bootstrap fixture stores; real deployments drop converted
/// pretrained checkpoints into the store instead.
pub fn write_initialized_checkpoint(
    store: &Path,
    name: BackboneName,
    seed: u64,
) -> Result<PathBuf> {
    std::fs::create_dir_all(store).map_err(|e| Error::io(store, e))?;
    let mut rng = SplitMix64::new(seed);
    let (backbone, _) = zoo::build_backbone(name, &mut rng);
    let path = weight_store_path(store, name);
    checkpoint::save_params(&path, &backbone)?;
    Ok(path)
}

/// Decision rule: positive (crack) iff `probability >= threshold`.
pub fn classify(probability: f64, threshold: f64) -> Result<Label> {
    if !(0.0..=1.0).contains(&probability) || !probability.is_finite() {
        return Err(Error::InvalidInput(format!(
            "probability {probability} outside [0, 1]"
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    Ok(if probability >= threshold {
        Label::Positive
    } else {
        Label::Negative
    })
}

/// Anything that can score raw patches with a crack probability. Implemented
/// by [`ClassifierModel`]; tests substitute stubs.
pub trait PatchScorer {
    fn score_patches(&mut self, patches: &[&ImagePatch]) -> Result<Vec<f64>>;
}

impl PatchScorer for ClassifierModel {
    fn score_patches(&mut self, patches: &[&ImagePatch]) -> Result<Vec<f64>> {
        self.predict_patches(patches)
    }
}

/// Stack HWC patches into an NCHW batch tensor (f32 compute precision).
pub fn hwc_batch_to_nchw(batch: &[NormalizedPatch], size: usize) -> Tensor {
    let mut x = Tensor::zeros(batch.len(), 3, size, size);
    for (i, p) in batch.iter().enumerate() {
        let dst = x.sample_mut(i);
        for r in 0..size {
            for col in 0..size {
                let src = (r * size + col) * 3;
                for ch in 0..3 {
                    dst[(ch * size + r) * size + col] = p.data[src + ch] as f32;
                }
            }
        }
    }
    x
}

/// Bilinear resize of a normalized patch to `target x target`, with
/// half-pixel center alignment and edge clamping.
#[allow(clippy::needless_range_loop)]
pub fn resize_bilinear(patch: &NormalizedPatch, target: usize) -> NormalizedPatch {
    let (h, w) = (patch.height, patch.width);
    if h == target && w == target {
        return patch.clone();
    }
    let scale_y = h as f64 / target as f64;
    let scale_x = w as f64 / target as f64;
    let mut data = vec![0.0f64; target * target * 3];
    for r in 0..target {
        let sy = ((r as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for c in 0..target {
            let sx = ((c as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..3 {
                let at = |row: usize, col: usize| patch.data[(row * w + col) * 3 + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                data[(r * target + c) * 3 + ch] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    NormalizedPatch::new(target, target, data)
}
