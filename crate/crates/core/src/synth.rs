//! Synthetic concrete-surface fixtures.
//!
//! Generates concrete-like texture patches with and without dark crack
//! polylines. Used by the test suites and handy for exercising the full
//! pipeline without the real corpus. Per-patch base brightness varies over
//! a wide range in both classes, so mean intensity alone does not separate
//! them; a classifier has to pick up the crack's local contrast.

use std::path::Path;

use crate::dataset::{ImagePatch, Label, PatchDataset, SourceImage};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Concrete-like texture: per-patch base gray, mild illumination gradient,
/// per-pixel speckle.
fn texture(size: usize, rng: &mut SplitMix64) -> Vec<u8> {
    let base = 140.0 + rng.next_f64() * 60.0;
    let grad_r = rng.next_f64() * 20.0 - 10.0;
    let grad_c = rng.next_f64() * 20.0 - 10.0;
    let mut pixels = vec![0u8; size * size * 3];
    for r in 0..size {
        for c in 0..size {
            let drift = grad_r * (r as f64 / size as f64) + grad_c * (c as f64 / size as f64);
            let speckle = rng.next_f64() * 24.0 - 12.0;
            let v = (base + drift + speckle).clamp(0.0, 255.0) as u8;
            let at = (r * size + c) * 3;
            // Slight warm tint so channels are not identical.
            pixels[at] = v;
            pixels[at + 1] = v.saturating_sub(2);
            pixels[at + 2] = v.saturating_sub(5);
        }
    }
    pixels
}

/// Draw a dark crack polyline: a random walk across the patch, a few
/// pixels wide (scaled with patch size) with a lighter halo on each side.
fn draw_crack(pixels: &mut [u8], size: usize, rng: &mut SplitMix64) {
    let vertical = rng.next_index(2) == 0;
    let mut across = (size / 4 + rng.next_index(size / 2)) as isize;
    let width = (size as isize / 48).max(2) + rng.next_index(3) as isize;
    let halo = width + 2;
    let darkness = 100 + rng.next_index(40) as i32;
    let mut darken = |r: usize, c: usize, amount: i32| {
        let at = (r * size + c) * 3;
        for ch in 0..3 {
            let v = pixels[at + ch] as i32 - amount;
            pixels[at + ch] = v.clamp(0, 255) as u8;
        }
    };
    for along in 0..size {
        across += rng.next_index(3) as isize - 1;
        across = across.clamp(0, size as isize - 1);
        for d in -halo..=halo {
            let a = across + d;
            if a < 0 || a >= size as isize {
                continue;
            }
            let amount = if d.abs() <= width / 2 { darkness } else { darkness / 3 };
            let (r, c) = if vertical {
                (along, a as usize)
            } else {
                (a as usize, along)
            };
            darken(r, c, amount);
        }
    }
}

pub fn synth_patch(label: Label, size: usize, seed: u64) -> ImagePatch {
    let mut rng = SplitMix64::new(seed);
    let mut pixels = texture(size, &mut rng);
    if label == Label::Positive {
        draw_crack(&mut pixels, size, &mut rng);
    }
    ImagePatch::new(pixels, size, label, None, None)
}

/// Balanced in-memory corpus: `n_per_class` patches per class, negatives
/// first, deterministic for a fixed seed.
pub fn synth_dataset(n_per_class: usize, size: usize, seed: u64) -> PatchDataset {
    let mut patches = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        let mut p = synth_patch(Label::Negative, size, seed.wrapping_add(i as u64));
        p.source_id = Some(format!("Negative/{i:05}.png"));
        patches.push(p);
    }
    for i in 0..n_per_class {
        let mut p = synth_patch(
            Label::Positive,
            size,
            seed.wrapping_add(0x8000_0000).wrapping_add(i as u64),
        );
        p.source_id = Some(format!("Positive/{i:05}.png"));
        patches.push(p);
    }
    PatchDataset::from_patches(patches)
}

/// Write a synthetic corpus to disk in the standard two-directory layout.
pub fn write_synth_corpus(root: &Path, n_per_class: usize, size: usize, seed: u64) -> Result<()> {
    let dataset = synth_dataset(n_per_class, size, seed);
    for patch in &dataset.patches {
        let rel = patch.source_id.as_ref().expect("synth patches carry ids");
        let path = root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let img = image::RgbImage::from_raw(size as u32, size as u32, patch.pixels().to_vec())
            .expect("pixel buffer matches dimensions");
        img.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            source: e,
        })?;
    }
    Ok(())
}

/// Synthetic wall image with an optional crack region, for localization
/// tests and demos.
pub fn synth_wall(height: usize, width: usize, crack: bool, seed: u64) -> SourceImage {
    let mut rng = SplitMix64::new(seed);
    let base = 150.0 + rng.next_f64() * 40.0;
    let mut pixels = vec![0u8; height * width * 3];
    for r in 0..height {
        for c in 0..width {
            let speckle = rng.next_f64() * 24.0 - 12.0;
            let v = (base + speckle).clamp(0.0, 255.0) as u8;
            let at = (r * width + c) * 3;
            pixels[at] = v;
            pixels[at + 1] = v.saturating_sub(2);
            pixels[at + 2] = v.saturating_sub(5);
        }
    }
    if crack {
        // Diagonal-ish crack through the middle of the image.
        let mut col = width as isize / 4;
        for r in height / 4..(3 * height / 4) {
            col += rng.next_index(3) as isize - 1;
            col = col.clamp(0, width as isize - 3);
            for d in 0..3 {
                let at = (r * width + (col as usize + d)) * 3;
                for ch in 0..3 {
                    pixels[at + ch] = pixels[at + ch].saturating_sub(100);
                }
            }
        }
    }
    SourceImage::new(height, width, pixels, format!("synth_wall_{seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_balanced_and_deterministic() {
        let a = synth_dataset(5, 32, 9);
        let b = synth_dataset(5, 32, 9);
        assert_eq!(a.class_counts.negative, 5);
        assert_eq!(a.class_counts.positive, 5);
        assert_eq!(a.patches[0].pixels(), b.patches[0].pixels());
        assert_eq!(a.patches[9].pixels(), b.patches[9].pixels());
        let c = synth_dataset(5, 32, 10);
        assert_ne!(a.patches[0].pixels(), c.patches[0].pixels());
    }

    #[test]
    fn cracks_darken_patches() {
        // A cracked patch from the same seed must be strictly darker in sum.
        let neg = synth_patch(Label::Negative, 64, 3);
        let pos = synth_patch(Label::Positive, 64, 3);
        let sum = |p: &ImagePatch| p.pixels().iter().map(|&v| v as u64).sum::<u64>();
        assert!(sum(&pos) < sum(&neg));
    }
}
