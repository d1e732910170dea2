//! Patch corpus handling: directory ingestion, deterministic stratified
//! splits, pixel normalization, and patch extraction from large images.
//!
//! A corpus lives under `<root>/Positive/` and `<root>/Negative/` as PNG or
//! JPEG files. Patches are loaded in lexicographic order of their relative
//! paths, so a directory's contents fully determine dataset order. No
//! augmentation of any kind happens here: loaded pixel data is exactly what
//! the files contain.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Binary patch label; `Positive` means a crack is present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }

    /// Class subdirectory name under the corpus root.
    pub fn dir_name(self) -> &'static str {
        match self {
            Label::Negative => "Negative",
            Label::Positive => "Positive",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fixed-size square RGB patch (8-bit, HWC layout).
#[derive(Debug, Clone)]
pub struct ImagePatch {
    pixels: Vec<u8>,
    size: usize,
    pub label: Label,
    /// Identifier of the originating file or high-resolution image.
    pub source_id: Option<String>,
    /// (row, col) offset in the source image, when extracted from one.
    pub origin: Option<(usize, usize)>,
}

impl ImagePatch {
    pub fn new(
        pixels: Vec<u8>,
        size: usize,
        label: Label,
        source_id: Option<String>,
        origin: Option<(usize, usize)>,
    ) -> Self {
        assert_eq!(pixels.len(), size * size * 3, "patch must be size*size*3 bytes");
        ImagePatch {
            pixels,
            size,
            label,
            source_id,
            origin,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Raw HWC pixel bytes.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub negative: usize,
    pub positive: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.negative + self.positive
    }

    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Negative => self.negative,
            Label::Positive => self.positive,
        }
    }
}

/// A file that was present under the corpus root but not loaded.
#[derive(Debug, Clone)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Provenance {
    pub root: PathBuf,
    pub loaded_at_unix: f64,
}

/// An ordered, immutable collection of labeled patches.
#[derive(Debug, Clone, Default)]
pub struct PatchDataset {
    pub patches: Vec<ImagePatch>,
    pub class_counts: ClassCounts,
    pub provenance: Option<Provenance>,
    pub skipped: Vec<SkippedFile>,
}

impl PatchDataset {
    /// Build a dataset from in-memory patches (fixtures, extracted tiles).
    pub fn from_patches(patches: Vec<ImagePatch>) -> Self {
        let mut counts = ClassCounts::default();
        for p in &patches {
            match p.label {
                Label::Negative => counts.negative += 1,
                Label::Positive => counts.positive += 1,
            }
        }
        PatchDataset {
            patches,
            class_counts: counts,
            provenance: None,
            skipped: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// A large image that patches or sliding windows are taken from.
#[derive(Debug, Clone)]
pub struct SourceImage {
    pub height: usize,
    pub width: usize,
    /// 8-bit RGB, HWC layout.
    pub pixels: Vec<u8>,
    pub identifier: String,
}

impl SourceImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>, identifier: impl Into<String>) -> Self {
        assert!(height >= 1 && width >= 1);
        assert_eq!(pixels.len(), height * width * 3);
        SourceImage {
            height,
            width,
            pixels,
            identifier: identifier.into(),
        }
    }

    pub fn load(path: &Path) -> Result<SourceImage> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                source: e,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Ok(SourceImage::new(
            h as usize,
            w as usize,
            img.into_raw(),
            path.display().to_string(),
        ))
    }
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
    )
}

/// Load the two-class patch corpus under `root`. Files that fail to decode
/// or whose dimensions differ from `patch_size` are skipped and tallied, not
/// resized.
pub fn load_patch_dataset(root: &Path, patch_size: usize) -> Result<PatchDataset> {
    assert!(patch_size >= 1, "patch_size must be positive");
    if !root.is_dir() {
        return Err(Error::MissingPath(root.to_path_buf()));
    }
    let mut entries: Vec<(String, PathBuf, Label)> = Vec::new();
    for label in [Label::Negative, Label::Positive] {
        let class_dir = root.join(label.dir_name());
        if !class_dir.is_dir() {
            return Err(Error::Config(format!(
                "missing class directory {}",
                class_dir.display()
            )));
        }
        let read = std::fs::read_dir(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        for entry in read {
            let entry = entry.map_err(|e| Error::io(&class_dir, e))?;
            let path = entry.path();
            if path.is_file() && is_image_file(&path) {
                let relpath = format!(
                    "{}/{}",
                    label.dir_name(),
                    path.file_name().unwrap().to_string_lossy()
                );
                entries.push((relpath, path, label));
            }
        }
    }
    // Lexicographic order of relative paths defines dataset order.
    entries.sort_by(|a, b| a.0.cmp(&b.0));

    let loaded: Vec<std::result::Result<ImagePatch, SkippedFile>> = entries
        .par_iter()
        .map(|(relpath, path, label)| {
            let img = match image::open(path) {
                Ok(img) => img.to_rgb8(),
                Err(e) => {
                    return Err(SkippedFile {
                        path: path.clone(),
                        reason: format!("decode failed: {e}"),
                    })
                }
            };
            let (w, h) = img.dimensions();
            if w as usize != patch_size || h as usize != patch_size {
                return Err(SkippedFile {
                    path: path.clone(),
                    reason: format!("wrong dimensions {w}x{h}, expected {patch_size}x{patch_size}"),
                });
            }
            Ok(ImagePatch::new(
                img.into_raw(),
                patch_size,
                *label,
                Some(relpath.clone()),
                None,
            ))
        })
        .collect();

    let mut patches = Vec::new();
    let mut skipped = Vec::new();
    for item in loaded {
        match item {
            Ok(p) => patches.push(p),
            Err(s) => skipped.push(s),
        }
    }
    if patches.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    let mut dataset = PatchDataset::from_patches(patches);
    dataset.skipped = skipped;
    dataset.provenance = Some(Provenance {
        root: root.to_path_buf(),
        loaded_at_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0),
    });
    Ok(dataset)
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Requested partition of a dataset. The test fraction is implied:
/// `1 - train_fraction`; the validation set is carved out of the train
/// portion at `val_fraction_of_train`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction_of_train: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            val_fraction_of_train: 0.1,
            seed: 0,
            stratified: true,
        }
    }
}

/// Index lists into the parent dataset. The three lists are pairwise
/// disjoint and cover every index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitResult {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub warnings: Vec<String>,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Deterministically partition `dataset` according to `spec`.
///
/// The shuffle is Fisher-Yates driven by [`SplitMix64`] seeded from
/// `spec.seed`; with stratification the negative class is shuffled first,
/// then the positive class, on the same stream. Within each (possibly
/// single) group the shuffled order is cut as `[val | train | test]` with
/// `round(n * train_fraction)` items in the train pool and
/// `round(pool * val_fraction_of_train)` of those in val.
pub fn split(dataset: &PatchDataset, spec: &SplitSpec) -> Result<SplitResult> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty dataset".into()));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "train_fraction must be in (0, 1], got {}",
            spec.train_fraction
        )));
    }
    if !(0.0..1.0).contains(&spec.val_fraction_of_train) {
        return Err(Error::InvalidInput(format!(
            "val_fraction_of_train must be in [0, 1), got {}",
            spec.val_fraction_of_train
        )));
    }

    let mut warnings = Vec::new();
    let single_class =
        dataset.class_counts.negative == 0 || dataset.class_counts.positive == 0;
    let stratified = if spec.stratified && single_class {
        warnings.push("dataset has a single class; proceeding unstratified".to_string());
        false
    } else {
        spec.stratified
    };

    let groups: Vec<Vec<usize>> = if stratified {
        [Label::Negative, Label::Positive]
            .iter()
            .map(|&label| {
                dataset
                    .patches
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.label == label)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect()
    } else {
        vec![(0..dataset.len()).collect()]
    };

    let mut rng = SplitMix64::new(spec.seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut group in groups {
        rng.shuffle(&mut group);
        let pool = round_half_up(group.len() as f64 * spec.train_fraction).min(group.len());
        let n_val = round_half_up(pool as f64 * spec.val_fraction_of_train).min(pool);
        val.extend_from_slice(&group[..n_val]);
        train.extend_from_slice(&group[n_val..pool]);
        test.extend_from_slice(&group[pool..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    if train.is_empty() {
        return Err(Error::InvalidInput(
            "requested split leaves the train set empty".into(),
        ));
    }
    Ok(SplitResult {
        train,
        val,
        test,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Split manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestFractions {
    pub train: f64,
    pub val_of_train: f64,
}

/// On-disk record that pins a split exactly, by relative path.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitManifest {
    pub seed: u64,
    pub fractions: ManifestFractions,
    pub stratified: bool,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn from_split(
        dataset: &PatchDataset,
        spec: &SplitSpec,
        result: &SplitResult,
    ) -> Result<SplitManifest> {
        let relpath = |i: &usize| -> Result<String> {
            dataset.patches[*i].source_id.clone().ok_or_else(|| {
                Error::InvalidInput(format!("patch {i} has no source id; cannot write manifest"))
            })
        };
        Ok(SplitManifest {
            seed: spec.seed,
            fractions: ManifestFractions {
                train: spec.train_fraction,
                val_of_train: spec.val_fraction_of_train,
            },
            stratified: spec.stratified,
            train: result.train.iter().map(relpath).collect::<Result<_>>()?,
            val: result.val.iter().map(relpath).collect::<Result<_>>()?,
            test: result.test.iter().map(relpath).collect::<Result<_>>()?,
        })
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("manifest serializes");
        out.push('\n');
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<SplitManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Resolve the manifest's relative paths against a loaded dataset,
    /// reproducing the pinned index lists.
    pub fn apply(&self, dataset: &PatchDataset) -> Result<SplitResult> {
        let mut by_path: HashMap<&str, usize> = HashMap::new();
        for (i, p) in dataset.patches.iter().enumerate() {
            if let Some(id) = &p.source_id {
                by_path.insert(id.as_str(), i);
            }
        }
        let resolve = |paths: &[String]| -> Result<Vec<usize>> {
            paths
                .iter()
                .map(|p| {
                    by_path.get(p.as_str()).copied().ok_or_else(|| {
                        Error::InvalidInput(format!("manifest entry {p:?} not found in dataset"))
                    })
                })
                .collect()
        };
        Ok(SplitResult {
            train: resolve(&self.train)?,
            val: resolve(&self.val)?,
            test: resolve(&self.test)?,
            warnings: Vec::new(),
        })
    }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Pixel normalization scheme. `BackboneSpecific` applies the preprocessing
/// contract registered for the named backbone (see the model registry).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NormScheme {
    UnitRange,
    BackboneSpecific(String),
}

/// Real-valued H x W x 3 pixel data (HWC layout).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPatch {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl NormalizedPatch {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width * 3);
        NormalizedPatch {
            height,
            width,
            data,
        }
    }
}

pub fn normalize(patch: &ImagePatch, scheme: &NormScheme) -> Result<NormalizedPatch> {
    match scheme {
        NormScheme::UnitRange => Ok(crate::model::Preprocessing::UnitRange.apply(patch)),
        NormScheme::BackboneSpecific(name) => {
            let backbone = crate::model::BackboneName::parse(name)?;
            Ok(crate::model::descriptor(backbone).preprocessing_id.apply(patch))
        }
    }
}

// ---------------------------------------------------------------------------
// Patch extraction
// ---------------------------------------------------------------------------

/// Top-left offsets of a `window`-sized grid over an `height x width` image
/// with the given stride. Row-major order. With `cover_edges`, clamped
/// offsets are appended so the right/bottom margins are covered even when
/// they are narrower than the stride.
pub fn grid_offsets(
    height: usize,
    width: usize,
    window: usize,
    stride: usize,
    cover_edges: bool,
) -> Vec<(usize, usize)> {
    assert!(stride >= 1, "stride must be positive");
    assert!(window >= 1, "window must be positive");
    if height < window || width < window {
        return Vec::new();
    }
    let steps = |extent: usize| -> Vec<usize> {
        let mut offsets: Vec<usize> = (0..=(extent - window) / stride).map(|i| i * stride).collect();
        if cover_edges && *offsets.last().unwrap() != extent - window {
            offsets.push(extent - window);
        }
        offsets
    };
    let rows = steps(height);
    let cols = steps(width);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            out.push((r, c));
        }
    }
    out
}

/// Number of grid windows along both axes, in closed form.
pub fn grid_count(height: usize, width: usize, window: usize, stride: usize) -> usize {
    if height < window || width < window {
        return 0;
    }
    ((height - window) / stride + 1) * ((width - window) / stride + 1)
}

/// Cut one window out of a source image as an unlabeled (negative by
/// convention) patch carrying its provenance.
pub fn cut_window(image: &SourceImage, row: usize, col: usize, window: usize) -> ImagePatch {
    let mut pixels = Vec::with_capacity(window * window * 3);
    for r in row..row + window {
        let start = (r * image.width + col) * 3;
        pixels.extend_from_slice(&image.pixels[start..start + window * 3]);
    }
    ImagePatch::new(
        pixels,
        window,
        Label::Negative,
        Some(image.identifier.clone()),
        Some((row, col)),
    )
}

/// Tile a source image into non-padded patches at `(r*stride, c*stride)`
/// offsets; windows that do not fit are not emitted.
pub fn extract_patches(image: &SourceImage, patch_size: usize, stride: usize) -> Vec<ImagePatch> {
    grid_offsets(image.height, image.width, patch_size, stride, false)
        .into_iter()
        .map(|(r, c)| cut_window(image, r, c, patch_size))
        .collect()
}
