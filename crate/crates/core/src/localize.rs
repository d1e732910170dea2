//! Sliding-window crack localization over large images.
//!
//! A trained classifier is evaluated on a grid of fixed-size windows; the
//! windows scoring at or above the threshold become detections, and
//! overlapping detections are coalesced into union boxes (cracks are
//! elongated, so fragments belong together rather than suppressing one
//! another).

use serde::{Deserialize, Serialize};

use crate::dataset::{cut_window, grid_offsets, SourceImage};
use crate::error::{Error, Result};
use crate::model::PatchScorer;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_size: usize,
    pub stride: usize,
    pub score_threshold: f64,
    /// Add clamped windows so right/bottom margins narrower than the stride
    /// are still covered. Off by default (strict grid).
    #[serde(default)]
    pub cover_edges: bool,
    /// Windows are scored in batches of this size; batching never changes
    /// the results.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    64
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_size: 227,
            stride: 227,
            score_threshold: 0.5,
            cover_edges: false,
            batch_size: default_batch(),
        }
    }
}

/// A scored axis-aligned box, fully inside its source image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub score: f64,
}

impl Detection {
    fn right(&self) -> usize {
        self.x + self.width
    }

    fn bottom(&self) -> usize {
        self.y + self.height
    }

    fn area(&self) -> f64 {
        (self.width * self.height) as f64
    }
}

/// Intersection-over-union of two boxes; 0 when disjoint, 1 iff identical.
pub fn iou(a: &Detection, b: &Detection) -> f64 {
    let ix = a.x.max(b.x);
    let iy = a.y.max(b.y);
    let ix2 = a.right().min(b.right());
    let iy2 = a.bottom().min(b.bottom());
    if ix2 <= ix || iy2 <= iy {
        return 0.0;
    }
    let inter = ((ix2 - ix) * (iy2 - iy)) as f64;
    inter / (a.area() + b.area() - inter)
}

/// Slide the scorer across the window grid and emit one detection per
/// window scoring at or above `score_threshold`, ordered by (y, x). An
/// image smaller than the window yields an empty list.
pub fn slide(
    scorer: &mut dyn PatchScorer,
    image: &SourceImage,
    cfg: &WindowConfig,
) -> Result<Vec<Detection>> {
    if !(cfg.score_threshold > 0.0 && cfg.score_threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "score_threshold {} outside (0, 1)",
            cfg.score_threshold
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidInput("batch_size must be >= 1".into()));
    }
    let offsets = grid_offsets(
        image.height,
        image.width,
        cfg.window_size,
        cfg.stride,
        cfg.cover_edges,
    );
    let mut detections = Vec::new();
    for chunk in offsets.chunks(cfg.batch_size) {
        let patches: Vec<_> = chunk
            .iter()
            .map(|&(r, c)| cut_window(image, r, c, cfg.window_size))
            .collect();
        let refs: Vec<&_> = patches.iter().collect();
        let scores = scorer.score_patches(&refs)?;
        for (&(r, c), score) in chunk.iter().zip(scores) {
            if score >= cfg.score_threshold {
                detections.push(Detection {
                    x: c,
                    y: r,
                    width: cfg.window_size,
                    height: cfg.window_size,
                    score,
                });
            }
        }
    }
    Ok(detections)
}

/// Coalesce detections: connected components under `IoU >= iou_threshold`
/// are replaced by their pixel-union bounding box carrying the maximum
/// member score, repeated until the surviving boxes are pairwise below the
/// threshold. Output is ordered by (y, x).
#[allow(clippy::needless_range_loop)]
pub fn merge_boxes(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    assert!(
        iou_threshold > 0.0 && iou_threshold <= 1.0,
        "iou_threshold must be in (0, 1]"
    );
    let mut boxes: Vec<Detection> = detections.to_vec();
    loop {
        let n = boxes.len();
        if n <= 1 {
            break;
        }
        // Union-find over the IoU graph.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let root = find(parent, parent[i]);
                parent[i] = root;
            }
            parent[i]
        }
        let mut merged_any = false;
        for i in 0..n {
            for j in (i + 1)..n {
                if iou(&boxes[i], &boxes[j]) >= iou_threshold {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri] = rj;
                        merged_any = true;
                    }
                }
            }
        }
        if !merged_any {
            break;
        }
        let mut components: std::collections::BTreeMap<usize, Detection> =
            std::collections::BTreeMap::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            let b = boxes[i];
            components
                .entry(root)
                .and_modify(|u| {
                    let x2 = u.right().max(b.right());
                    let y2 = u.bottom().max(b.bottom());
                    u.x = u.x.min(b.x);
                    u.y = u.y.min(b.y);
                    u.width = x2 - u.x;
                    u.height = y2 - u.y;
                    u.score = u.score.max(b.score);
                })
                .or_insert(b);
        }
        boxes = components.into_values().collect();
    }
    boxes.sort_by_key(|b| (b.y, b.x));
    boxes
}

/// Detection output document: `{image_id, config, detections}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionReport {
    pub image_id: String,
    pub config: WindowConfig,
    pub detections: Vec<Detection>,
}

impl DetectionReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("detections serialize");
        s.push('\n');
        s
    }
}

/// Burn detection boxes (3 px red outlines) into a copy of the image.
pub fn annotate(image: &SourceImage, detections: &[Detection]) -> Vec<u8> {
    const RED: [u8; 3] = [220, 30, 30];
    const THICKNESS: usize = 3;
    let mut pixels = image.pixels.clone();
    let mut paint = |row: usize, col: usize| {
        if row < image.height && col < image.width {
            let at = (row * image.width + col) * 3;
            pixels[at..at + 3].copy_from_slice(&RED);
        }
    };
    for d in detections {
        for t in 0..THICKNESS {
            for col in d.x..d.right() {
                paint(d.y + t, col);
                paint(d.bottom().saturating_sub(1 + t), col);
            }
            for row in d.y..d.bottom() {
                paint(row, d.x + t);
                paint(row, d.right().saturating_sub(1 + t));
            }
        }
    }
    pixels
}
