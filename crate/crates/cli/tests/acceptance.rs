//! Acceptance suite: one test per criterion, each printing a PASS line
//! (run with `--nocapture` to see them). Criteria cover metric oracle
//! equivalence, F-tail exactness, ANOVA invariances, split determinism,
//! window grids, the localization oracle, frozen-weight integrity, the
//! desk-scale training smoke, and end-to-end CLI replay.

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use crackbench_core::dataset::{
    extract_patches, grid_count, split, ImagePatch, Label, PatchDataset, SourceImage,
    SplitManifest, SplitSpec,
};
use crackbench_core::localize::{iou, merge_boxes, slide, Detection, WindowConfig};
use crackbench_core::metrics::ConfusionMatrix;
use crackbench_core::model::{
    build_classifier, write_initialized_checkpoint, BackboneName, PatchScorer, TrainMode,
};
use crackbench_core::nn::checkpoint::file_checksum;
use crackbench_core::rng::SplitMix64;
use crackbench_core::stats::{f_upper_tail, one_way_anova, MetricSample};
use crackbench_core::synth::{synth_dataset, write_synth_corpus};
use crackbench_core::training::{evaluate, train, TrainConfig};

// ---------------------------------------------------------------------------
// 1. Metric oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn metric_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = SplitMix64::new(0xACC1);

    // Worked example.
    let cm = ConfusionMatrix::new(90, 10, 80, 20);
    assert!((cm.accuracy().unwrap() - 0.85).abs() < 1e-6);
    assert!((cm.precision().unwrap() - 0.9).abs() < 1e-6);
    assert!((cm.recall().unwrap() - 0.818182).abs() < 1e-6);
    assert!((cm.f1().unwrap() - 0.857143).abs() < 1e-6);

    // Independent direct-formula oracle over 1,000 random matrices.
    for _ in 0..1_000 {
        let (tp, fp, tn, fn_) = (
            rng.next_index(51) as u64,
            rng.next_index(51) as u64,
            rng.next_index(51) as u64,
            rng.next_index(51) as u64,
        );
        let cm = ConfusionMatrix::new(tp, fp, tn, fn_);
        let total = tp + fp + tn + fn_;

        let oracle_accuracy =
            (total > 0).then(|| (tp + tn) as f64 / total as f64);
        let oracle_precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        let oracle_recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
        let oracle_f1 = match (oracle_precision, oracle_recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };

        let close = |got: Option<f64>, want: Option<f64>| match (got, want) {
            (Some(g), Some(w)) => (g - w).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        assert!(close(cm.accuracy(), oracle_accuracy), "{cm:?}");
        assert!(close(cm.precision(), oracle_precision), "{cm:?}");
        assert!(close(cm.recall(), oracle_recall), "{cm:?}");
        assert!(close(cm.f1(), oracle_f1), "{cm:?}");
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, budget 1 s");
    println!("ACCEPTANCE PASS: metric oracle equivalence ({elapsed:?})");
}

// ---------------------------------------------------------------------------
// 2. F-tail exactness
// ---------------------------------------------------------------------------

#[test]
fn f_tail_exactness() {
    let started = Instant::now();

    assert!((f_upper_tail(3.0, 2, 6).unwrap() - 0.125).abs() < 1e-10);

    // A/B/C fixture: F = 3 exactly, p = 0.125 exactly.
    let sample = |label: &str, values: &[f64]| MetricSample {
        group_label: label.to_string(),
        metric_name: "accuracy".to_string(),
        values: values.to_vec(),
    };
    let r = one_way_anova(
        &[
            sample("A", &[1.0, 2.0, 3.0]),
            sample("B", &[2.0, 3.0, 4.0]),
            sample("C", &[3.0, 4.0, 5.0]),
        ],
        0.05,
    )
    .unwrap();
    assert!((r.f_statistic - 3.0).abs() < 1e-12, "F = {}", r.f_statistic);
    assert!((r.p_value - 0.125).abs() < 1e-9, "p = {}", r.p_value);

    // Closed form for d1 = 2: P(F > f) = (d2 / (d2 + 2 f))^(d2 / 2).
    for d2 in 2..=50u64 {
        for &f in &[0.1, 0.2, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 7.5, 10.0, 15.0, 20.0] {
            let got = f_upper_tail(f, 2, d2).unwrap();
            let want = (d2 as f64 / (d2 as f64 + 2.0 * f)).powf(d2 as f64 / 2.0);
            assert!((got - want).abs() < 1e-10, "d2={d2} f={f}: {got} vs {want}");
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, budget 1 s");
    println!("ACCEPTANCE PASS: F-tail exactness ({elapsed:?})");
}

// ---------------------------------------------------------------------------
// 3. ANOVA invariances
// ---------------------------------------------------------------------------

#[test]
fn anova_invariances() {
    let started = Instant::now();
    let sample = |label: String, values: Vec<f64>| MetricSample {
        group_label: label,
        metric_name: "accuracy".to_string(),
        values,
    };
    let random_groups = |rng: &mut SplitMix64, k: usize| -> Vec<MetricSample> {
        (0..k)
            .map(|i| {
                let n = 2 + rng.next_index(6);
                sample(
                    format!("g{i}"),
                    (0..n).map(|_| rng.next_gaussian() + i as f64 * 0.3).collect(),
                )
            })
            .collect()
    };

    let mut rng = SplitMix64::new(0xACC3);
    for _ in 0..200 {
        let k = 2 + rng.next_index(4);
        let groups = random_groups(&mut rng, k);
        let base = one_way_anova(&groups, 0.05).unwrap();
        if base.flag.is_some() {
            continue;
        }

        // Constant shift leaves F and p unchanged.
        let shift = rng.next_f64() * 20.0 - 10.0;
        let shifted: Vec<MetricSample> = groups
            .iter()
            .map(|g| sample(g.group_label.clone(), g.values.iter().map(|v| v + shift).collect()))
            .collect();
        let r = one_way_anova(&shifted, 0.05).unwrap();
        assert!((r.f_statistic - base.f_statistic).abs() <= 1e-9 * (1.0 + base.f_statistic.abs()));
        assert!((r.p_value - base.p_value).abs() <= 1e-9);

        // Nonzero scale leaves F and p unchanged.
        let scale = 0.25 + rng.next_f64() * 8.0;
        let scaled: Vec<MetricSample> = groups
            .iter()
            .map(|g| sample(g.group_label.clone(), g.values.iter().map(|v| v * scale).collect()))
            .collect();
        let r = one_way_anova(&scaled, 0.05).unwrap();
        assert!((r.f_statistic - base.f_statistic).abs() <= 1e-9 * (1.0 + base.f_statistic.abs()));
        assert!((r.p_value - base.p_value).abs() <= 1e-9);

        // Group order is irrelevant.
        let mut permuted = groups.clone();
        permuted.reverse();
        let r = one_way_anova(&permuted, 0.05).unwrap();
        assert!((r.f_statistic - base.f_statistic).abs() <= 1e-9 * (1.0 + base.f_statistic.abs()));
        assert!((r.p_value - base.p_value).abs() <= 1e-9);
    }

    // k = 2: F equals the squared pooled-variance t statistic.
    for _ in 0..200 {
        let n1 = 2 + rng.next_index(8);
        let n2 = 2 + rng.next_index(8);
        let a: Vec<f64> = (0..n1).map(|_| rng.next_gaussian()).collect();
        let b: Vec<f64> = (0..n2).map(|_| rng.next_gaussian() + 0.4).collect();
        let r = one_way_anova(
            &[sample("a".into(), a.clone()), sample("b".into(), b.clone())],
            0.05,
        )
        .unwrap();
        if r.flag.is_some() {
            continue;
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (m1, m2) = (mean(&a), mean(&b));
        let ss = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
        let pooled = (ss(&a, m1) + ss(&b, m2)) / (n1 + n2 - 2) as f64;
        let t = (m1 - m2) / (pooled * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
        assert!(
            (r.f_statistic - t * t).abs() <= 1e-9 * (1.0 + t * t),
            "F {} vs t^2 {}",
            r.f_statistic,
            t * t
        );
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5 s");
    println!("ACCEPTANCE PASS: ANOVA invariances ({elapsed:?})");
}

// ---------------------------------------------------------------------------
// 4. Split determinism and stratification
// ---------------------------------------------------------------------------

fn id_dataset(negative: usize, positive: usize) -> PatchDataset {
    let mut patches = Vec::new();
    for i in 0..negative {
        let mut p = ImagePatch::new(vec![0; 3], 1, Label::Negative, None, None);
        p.source_id = Some(format!("Negative/{i:05}"));
        patches.push(p);
    }
    for i in 0..positive {
        let mut p = ImagePatch::new(vec![9; 3], 1, Label::Positive, None, None);
        p.source_id = Some(format!("Positive/{i:05}"));
        patches.push(p);
    }
    PatchDataset::from_patches(patches)
}

#[test]
fn split_determinism_and_stratification() {
    let started = Instant::now();
    let mut rng = SplitMix64::new(0xACC4);
    for case in 0..100 {
        let n_neg = 2 + rng.next_index(300);
        let n_pos = 2 + rng.next_index(300);
        let dataset = id_dataset(n_neg, n_pos);
        let spec = SplitSpec {
            train_fraction: 0.3 + rng.next_f64() * 0.65,
            val_fraction_of_train: rng.next_f64() * 0.5,
            seed: rng.next_u64(),
            stratified: true,
        };

        let a = split(&dataset, &spec).unwrap();
        let b = split(&dataset, &spec).unwrap();
        let ma = SplitManifest::from_split(&dataset, &spec, &a).unwrap();
        let mb = SplitManifest::from_split(&dataset, &spec, &b).unwrap();
        assert_eq!(ma.to_json(), mb.to_json(), "case {case}: manifests must be byte-identical");

        // Disjoint cover.
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..dataset.len()).collect::<Vec<_>>());

        // Per-class stratification error of at most one item per part.
        let count = |idx: &[usize], label: Label| {
            idx.iter().filter(|&&i| dataset.patches[i].label == label).count() as f64
        };
        for (label, n_class) in [(Label::Negative, n_neg), (Label::Positive, n_pos)] {
            let n_class = n_class as f64;
            let pool_want = n_class * spec.train_fraction;
            let val_want = pool_want * spec.val_fraction_of_train;
            let train_want = pool_want - val_want;
            let test_want = n_class - pool_want;
            let checks = [
                (count(&a.train, label), train_want, "train"),
                (count(&a.val, label), val_want, "val"),
                (count(&a.test, label), test_want, "test"),
            ];
            for (got, want, part) in checks {
                assert!(
                    (got - want).abs() <= 1.0 + 1e-9,
                    "case {case} {part} {label}: got {got}, requested {want}"
                );
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5 s");
    println!("ACCEPTANCE PASS: split determinism and stratification ({elapsed:?})");
}

// ---------------------------------------------------------------------------
// 5. Patch/window grid
// ---------------------------------------------------------------------------

struct CountingScorer {
    scored: usize,
}

impl PatchScorer for CountingScorer {
    fn score_patches(&mut self, patches: &[&ImagePatch]) -> crackbench_core::Result<Vec<f64>> {
        self.scored += patches.len();
        Ok(vec![0.9; patches.len()])
    }
}

#[test]
fn patch_window_grid_counts() {
    let started = Instant::now();

    // Published geometry: 4032x3024 source at stride 227 gives 17 x 13.
    let big = SourceImage::new(3024, 4032, vec![128; 3024 * 4032 * 3], "big");
    assert_eq!(extract_patches(&big, 227, 227).len(), 221);

    // 1000x800 at window 227 stride 100 gives 8 x 6 windows.
    let wall = SourceImage::new(800, 1000, vec![128; 800 * 1000 * 3], "wall");
    let mut counter = CountingScorer { scored: 0 };
    let cfg = WindowConfig {
        window_size: 227,
        stride: 100,
        score_threshold: 0.5,
        cover_edges: false,
        batch_size: 7,
    };
    let detections = slide(&mut counter, &wall, &cfg).unwrap();
    assert_eq!(counter.scored, 48);
    assert_eq!(detections.len(), 48);

    // 200 random geometries: extraction count and slide count both match
    // the closed form, which matches brute-force offset enumeration.
    let mut rng = SplitMix64::new(0xACC5);
    for _ in 0..200 {
        let h = 1 + rng.next_index(240);
        let w = 1 + rng.next_index(240);
        let window = 1 + rng.next_index(64);
        let stride = 1 + rng.next_index(48);
        let brute = {
            let mut count = 0;
            let mut r = 0;
            while r + window <= h {
                let mut c = 0;
                while c + window <= w {
                    count += 1;
                    c += stride;
                }
                r += stride;
            }
            count
        };
        assert_eq!(grid_count(h, w, window, stride), brute);
        let image = SourceImage::new(h, w, vec![7; h * w * 3], "r");
        assert_eq!(extract_patches(&image, window, stride).len(), brute);
        let mut counter = CountingScorer { scored: 0 };
        let cfg = WindowConfig {
            window_size: window,
            stride,
            score_threshold: 0.5,
            cover_edges: false,
            batch_size: 16,
        };
        slide(&mut counter, &image, &cfg).unwrap();
        assert_eq!(counter.scored, brute);
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5 s");
    println!("ACCEPTANCE PASS: patch/window grid counts ({elapsed:?})");
}

// ---------------------------------------------------------------------------
// 6. Localization oracle
// ---------------------------------------------------------------------------

struct MarkedPixelScorer {
    row: usize,
    col: usize,
    window: usize,
}

impl PatchScorer for MarkedPixelScorer {
    fn score_patches(&mut self, patches: &[&ImagePatch]) -> crackbench_core::Result<Vec<f64>> {
        Ok(patches
            .iter()
            .map(|p| {
                let (r, c) = p.origin.expect("windows carry origins");
                let covers = r <= self.row
                    && self.row < r + self.window
                    && c <= self.col
                    && self.col < c + self.window;
                if covers {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }
}

#[test]
fn localization_oracle() {
    let started = Instant::now();
    let (height, width) = (500, 600);
    let (row, col) = (300, 300);
    let image = SourceImage::new(height, width, vec![150; height * width * 3], "oracle");
    let cfg = WindowConfig {
        window_size: 227,
        stride: 50,
        score_threshold: 0.5,
        cover_edges: false,
        batch_size: 32,
    };
    let mut scorer = MarkedPixelScorer {
        row,
        col,
        window: cfg.window_size,
    };
    let detections = slide(&mut scorer, &image, &cfg).unwrap();
    assert!(!detections.is_empty());

    // Brute-force union of qualifying windows.
    let offsets = crackbench_core::dataset::grid_offsets(height, width, 227, 50, false);
    let qualifying: Vec<(usize, usize)> = offsets
        .into_iter()
        .filter(|&(r, c)| r <= row && row < r + 227 && c <= col && col < c + 227)
        .collect();
    assert_eq!(detections.len(), qualifying.len());
    let min_r = qualifying.iter().map(|&(r, _)| r).min().unwrap();
    let min_c = qualifying.iter().map(|&(_, c)| c).min().unwrap();
    let max_r = qualifying.iter().map(|&(r, _)| r).max().unwrap();
    let max_c = qualifying.iter().map(|&(_, c)| c).max().unwrap();
    let union_box = Detection {
        x: min_c,
        y: min_r,
        width: max_c + 227 - min_c,
        height: max_r + 227 - min_r,
        score: 1.0,
    };

    let merged = merge_boxes(&detections, 0.1);
    assert_eq!(merged.len(), 1, "qualifying windows form one component");
    for b in &merged {
        assert!(
            b.y <= row && row < b.y + b.height && b.x <= col && col < b.x + b.width,
            "merged box must contain the marked pixel"
        );
    }
    let overlap = iou(&merged[0], &union_box);
    assert!(overlap >= 0.99, "IoU with brute-force union = {overlap}");

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5 s");
    println!("ACCEPTANCE PASS: localization oracle ({elapsed:?})");
}

// ---------------------------------------------------------------------------
// 7. Frozen-mode weight integrity
// ---------------------------------------------------------------------------

#[test]
fn frozen_mode_weight_integrity() {
    let started = Instant::now();
    let store = tempfile::tempdir().unwrap();
    let dataset = synth_dataset(6, 227, 31);
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let config = TrainConfig {
        epochs: 2,
        batch_size: 4,
        learning_rate: Some(1e-3),
        seed: 3,
        ..TrainConfig::default()
    };
    for name in BackboneName::all() {
        let ckpt = write_initialized_checkpoint(store.path(), name, 7).unwrap();
        let pretrained_checksum = file_checksum(&ckpt).unwrap();
        let mut model =
            build_classifier(name, TrainMode::FrozenFeatures, 3, store.path()).unwrap();
        assert_eq!(model.backbone_checksum(), pretrained_checksum);
        train(&mut model, &dataset, &idx, &[], &config).unwrap();
        assert_eq!(
            model.backbone_checksum(),
            pretrained_checksum,
            "{name}: backbone must match the pretrained checkpoint after head-only training"
        );
    }
    let elapsed = started.elapsed();
    println!("ACCEPTANCE PASS: frozen-mode weight integrity for all four backbones ({elapsed:?})");
}

// ---------------------------------------------------------------------------
// 8. Desk-scale training smoke
// ---------------------------------------------------------------------------

#[test]
fn desk_scale_training_smoke() {
    let started = Instant::now();
    let dataset = synth_dataset(1_000, 227, 7);
    let split = split(&dataset, &SplitSpec::default()).unwrap();
    let store = tempfile::tempdir().unwrap();
    write_initialized_checkpoint(store.path(), BackboneName::EfficientNetV2, 1).unwrap();

    let mut fine_tuned = Vec::new();
    let mut frozen = Vec::new();
    for seed in [1u64, 2, 3] {
        let config = TrainConfig {
            epochs: 5,
            batch_size: 16,
            learning_rate: Some(3e-3),
            seed,
            ..TrainConfig::default()
        };
        for (mode, bucket) in [
            (TrainMode::FineTuneAll, &mut fine_tuned),
            (TrainMode::FrozenFeatures, &mut frozen),
        ] {
            let mut model =
                build_classifier(BackboneName::EfficientNetV2, mode, seed, store.path()).unwrap();
            train(&mut model, &dataset, &split.train, &split.val, &config).unwrap();
            let cm = evaluate(&mut model, &dataset, &split.test, 0.5).unwrap();
            let accuracy = cm.accuracy().unwrap();
            println!("  smoke: seed {seed} {mode} test accuracy {accuracy:.4}");
            bucket.push(accuracy);
        }
    }
    let median = |values: &mut Vec<f64>| {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values[values.len() / 2]
    };
    let ft_median = median(&mut fine_tuned);
    let fr_median = median(&mut frozen);
    assert!(
        ft_median >= 0.95,
        "fine-tuned median accuracy {ft_median:.4} must reach 0.95"
    );
    assert!(
        ft_median >= fr_median,
        "fine-tuned ({ft_median:.4}) must not trail frozen ({fr_median:.4})"
    );
    let elapsed = started.elapsed();
    println!(
        "ACCEPTANCE PASS: desk-scale smoke (fine-tuned median {ft_median:.4}, frozen median {fr_median:.4}, {elapsed:?})"
    );
}

// ---------------------------------------------------------------------------
// 9. End-to-end replay through the CLI
// ---------------------------------------------------------------------------

fn crackbench(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_crackbench"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(0),
        "{what} failed: stdout={} stderr={}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter(|e| e.path().is_file())
                .map(|e| {
                    (
                        e.file_name().to_string_lossy().into_owned(),
                        std::fs::read(e.path()).unwrap(),
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    entries.sort();
    entries
}

#[test]
fn end_to_end_replay() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("corpus");
    write_synth_corpus(&root, 15, 227, 5).unwrap();
    let store = dir.path().join("weights");
    write_initialized_checkpoint(&store, BackboneName::EfficientNetV2, 1).unwrap();

    let split_path = dir.path().join("split.json");
    let out = crackbench(
        &[
            "split",
            "--root",
            root.to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            split_path.to_str().unwrap(),
        ],
        &[],
    );
    assert_ok(&out, "split");

    let results = dir.path().join("results");
    let manifest = serde_json::json!({
        "dataset_root": root,
        "split_manifest": split_path,
        "output_dir": results,
        "backbones": ["EfficientNetV2"],
        "modes": ["frozen_features"],
        "n_runs": 2,
        "train_config": {
            "epochs": 2,
            "batch_size": 8,
            "learning_rate": 1e-3,
            "seed": 5
        }
    });
    let manifest_path = dir.path().join("experiment.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

    let env = [("CRACKBENCH_WEIGHT_STORE", store.to_str().unwrap())];
    let out = crackbench(&["run", manifest_path.to_str().unwrap()], &env);
    assert_ok(&out, "run");

    // Exactly two result files.
    let run_files: Vec<_> = std::fs::read_dir(&results)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.starts_with("run__") && name.ends_with(".json")
        })
        .map(|e| e.path())
        .collect();
    assert_eq!(run_files.len(), 2, "expected 2 result files");

    // One aggregate row whose std follows the n-1 convention.
    let csv = std::fs::read_to_string(results.join("aggregate__frozen_features.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2, "header plus one aggregate row: {csv}");
    let accuracies: Vec<f64> = run_files
        .iter()
        .map(|p| {
            let v: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
            v["metrics"]["accuracy"].as_f64().unwrap()
        })
        .collect();
    let mean = (accuracies[0] + accuracies[1]) / 2.0;
    let std_n1 = (((accuracies[0] - mean).powi(2) + (accuracies[1] - mean).powi(2)) / 1.0).sqrt();
    let row: Vec<&str> = lines[1].split(',').collect();
    let (csv_mean, csv_std): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
    assert!((csv_mean - mean).abs() < 1e-9);
    assert!((csv_std - std_n1).abs() < 1e-9, "std must use the n-1 convention");

    // Re-running the same manifest into a fresh directory reproduces the
    // aggregate tables byte for byte.
    let results2 = dir.path().join("results2");
    let out = crackbench(
        &[
            "run",
            manifest_path.to_str().unwrap(),
            "--output-dir",
            results2.to_str().unwrap(),
        ],
        &env,
    );
    assert_ok(&out, "re-run");
    for name in ["aggregate__frozen_features.csv", "aggregate__frozen_features.md"] {
        let a = std::fs::read(results.join(name)).unwrap();
        let b = std::fs::read(results2.join(name)).unwrap();
        assert_eq!(a, b, "{name} must be identical across reruns");
    }

    // Compare completes cleanly even though only one model group exists.
    let out = crackbench(&["compare", "--results", results.to_str().unwrap()], &[]);
    assert_ok(&out, "compare");
    assert!(results.join("comparison.json").is_file());

    // Report regeneration is byte-identical.
    let report1 = dir.path().join("report1");
    let report2 = dir.path().join("report2");
    for out_dir in [&report1, &report2] {
        let out = crackbench(
            &[
                "report",
                "--results",
                results.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ],
            &[],
        );
        assert_ok(&out, "report");
    }
    let md1 = std::fs::read(report1.join("report.md")).unwrap();
    let md2 = std::fs::read(report2.join("report.md")).unwrap();
    assert_eq!(md1, md2, "report.md must regenerate byte-identically");
    assert_eq!(
        dir_snapshot(&report1.join("gallery")),
        dir_snapshot(&report2.join("gallery")),
        "gallery must regenerate identically"
    );

    let elapsed = started.elapsed();
    println!("ACCEPTANCE PASS: end-to-end replay ({elapsed:?})");
}
