//! `crackbench` — batch CLI for the crack detection benchmark harness.
//!
//! Subcommands: ingest, split, run, compare, localize, report.
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime/training
//! failure.

mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crackbench_core::dataset::{load_patch_dataset, split, SourceImage, SplitManifest, SplitSpec};
use crackbench_core::localize::{merge_boxes, slide, DetectionReport, WindowConfig};
use crackbench_core::metrics::MetricName;
use crackbench_core::model::{ClassifierModel, TrainMode};
use crackbench_core::report::{generate_report, render_anova_markdown, write_aggregates};
use crackbench_core::stats::compare_runs;
use crackbench_core::training::{list_run_files, load_run_results, run_experiment, ExperimentSpec};
use crackbench_core::{Error as CoreError, ErrorCategory};

use manifest::ExperimentManifest;

const WEIGHT_STORE_ENV: &str = "CRACKBENCH_WEIGHT_STORE";

#[derive(Parser)]
#[command(
    name = "crackbench",
    version,
    about = "Concrete crack detection benchmark: datasets, training regimes, metrics, ANOVA, localization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a patch corpus and print a summary
    Ingest {
        /// Corpus root containing Positive/ and Negative/ subdirectories
        #[arg(long)]
        root: PathBuf,
        /// Expected square patch size in pixels
        #[arg(long, default_value_t = 227)]
        patch_size: usize,
    },
    /// Produce a deterministic split manifest for a corpus
    Split(SplitArgs),
    /// Execute the experiment described by a manifest file
    Run {
        /// Experiment manifest (JSON)
        manifest: PathBuf,
        /// Override the manifest's output directory
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Override the weight store (flag > env > manifest > ./weights)
        #[arg(long)]
        weight_store: Option<PathBuf>,
        /// Persist a model artifact per run
        #[arg(long)]
        save_models: bool,
    },
    /// One-way ANOVA across models from persisted run results
    Compare {
        /// Directory of run__*.json result files
        #[arg(long)]
        results: PathBuf,
        /// Significance level
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Comma-separated metrics to test
        #[arg(long, default_value = "accuracy,precision,recall,f1", value_delimiter = ',')]
        metrics: Vec<String>,
        /// Restrict to one train mode when results mix regimes
        #[arg(long)]
        mode: Option<String>,
        /// Output JSON path (default: comparison.json in the results dir)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Slide a saved classifier over an image and emit merged detections
    Localize {
        /// Model artifact (.ckpt with its .json sidecar)
        #[arg(long)]
        model: PathBuf,
        /// Image to scan
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 227)]
        window_size: usize,
        #[arg(long, default_value_t = 227)]
        stride: usize,
        #[arg(long, default_value_t = 0.5)]
        score_threshold: f64,
        /// IoU at or above which detections merge into one box
        #[arg(long, default_value_t = 0.1)]
        iou_threshold: f64,
        /// Also cover right/bottom margins with clamped windows
        #[arg(long)]
        cover_edges: bool,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Detection JSON output path (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a copy of the image with detection boxes burned in
        #[arg(long)]
        annotate: Option<PathBuf>,
    },
    /// Render report.md (tables, ANOVA, gallery) from persisted results
    Report {
        /// Directory of run__*.json result files
        #[arg(long)]
        results: PathBuf,
        /// Output directory for report.md and gallery/
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

#[derive(Args)]
struct SplitArgs {
    /// Corpus root containing Positive/ and Negative/ subdirectories
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value_t = 227)]
    patch_size: usize,
    /// Fraction of each class assigned to the train pool
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Fraction of the train pool carved out for validation
    #[arg(long, default_value_t = 0.1)]
    val_fraction_of_train: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable per-class stratification
    #[arg(long)]
    no_stratify: bool,
    /// Split manifest output path
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Core(CoreError),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Data => 2,
                ErrorCategory::Runtime => 3,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Ingest { root, patch_size } => cmd_ingest(root, patch_size),
        Command::Split(args) => cmd_split(args),
        Command::Run {
            manifest,
            output_dir,
            weight_store,
            save_models,
        } => cmd_run(manifest, output_dir, weight_store, save_models),
        Command::Compare {
            results,
            alpha,
            metrics,
            mode,
            out,
        } => cmd_compare(results, alpha, metrics, mode, out),
        Command::Localize {
            model,
            image,
            window_size,
            stride,
            score_threshold,
            iou_threshold,
            cover_edges,
            batch_size,
            out,
            annotate,
        } => cmd_localize(
            model,
            image,
            WindowConfig {
                window_size,
                stride,
                score_threshold,
                cover_edges,
                batch_size,
            },
            iou_threshold,
            out,
            annotate,
        ),
        Command::Report { results, out, alpha } => cmd_report(results, out, alpha),
    }
}

fn print_skipped(dataset: &crackbench_core::dataset::PatchDataset) {
    for s in &dataset.skipped {
        eprintln!("warning: skipped {}: {}", s.path.display(), s.reason);
    }
}

fn cmd_ingest(root: PathBuf, patch_size: usize) -> Result<ExitCode, CliError> {
    let dataset = load_patch_dataset(&root, patch_size)?;
    print_skipped(&dataset);
    println!(
        "{} patches ({}/{})",
        dataset.len(),
        dataset.class_counts.positive,
        dataset.class_counts.negative
    );
    if !dataset.skipped.is_empty() {
        println!("skipped {}", dataset.skipped.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_split(args: SplitArgs) -> Result<ExitCode, CliError> {
    if !(args.train_fraction > 0.0 && args.train_fraction <= 1.0) {
        return Err(CliError::Usage(format!(
            "--train-fraction must be in (0, 1], got {}",
            args.train_fraction
        )));
    }
    if !(0.0..1.0).contains(&args.val_fraction_of_train) {
        return Err(CliError::Usage(format!(
            "--val-fraction-of-train must be in [0, 1), got {}",
            args.val_fraction_of_train
        )));
    }
    let dataset = load_patch_dataset(&args.root, args.patch_size)?;
    print_skipped(&dataset);
    let spec = SplitSpec {
        train_fraction: args.train_fraction,
        val_fraction_of_train: args.val_fraction_of_train,
        seed: args.seed,
        stratified: !args.no_stratify,
    };
    let result = split(&dataset, &spec)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let manifest = SplitManifest::from_split(&dataset, &spec, &result)?;
    manifest.write(&args.out)?;
    println!(
        "split written to {} (train {}, val {}, test {})",
        args.out.display(),
        result.train.len(),
        result.val.len(),
        result.test.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn resolve_weight_store(flag: Option<PathBuf>, manifest: &ExperimentManifest) -> PathBuf {
    flag.or_else(|| std::env::var_os(WEIGHT_STORE_ENV).map(PathBuf::from))
        .or_else(|| manifest.weight_store.clone())
        .unwrap_or_else(|| PathBuf::from("weights"))
}

fn cmd_run(
    manifest_path: PathBuf,
    output_dir: Option<PathBuf>,
    weight_store: Option<PathBuf>,
    save_models: bool,
) -> Result<ExitCode, CliError> {
    let manifest = ExperimentManifest::read(&manifest_path)?;
    if manifest.n_runs == 0 {
        return Err(CliError::Usage("n_runs must be >= 1".into()));
    }
    let backbones = manifest.parsed_backbones()?;
    let modes = manifest.parsed_modes()?;
    let out_dir = output_dir.unwrap_or_else(|| manifest.output_dir.clone());
    let store = resolve_weight_store(weight_store, &manifest);

    let dataset = load_patch_dataset(&manifest.dataset_root, manifest.patch_size)?;
    print_skipped(&dataset);
    let split_manifest = SplitManifest::read(&manifest.split_manifest)?;
    let split = split_manifest.apply(&dataset)?;

    let spec = ExperimentSpec {
        backbones,
        modes,
        n_runs: manifest.n_runs,
        base_config: manifest.train_config.clone(),
        weight_store: store,
        output_dir: out_dir.clone(),
        frozen_head_training: manifest.frozen_head_training,
        save_models: save_models || manifest.save_models,
        dataset_root: Some(manifest.dataset_root.display().to_string()),
        split_manifest: Some(manifest.split_manifest.display().to_string()),
    };
    let outcome = run_experiment(&spec, &dataset, &split)?;

    println!(
        "{} result file(s) under {}",
        outcome.result_files.len(),
        out_dir.display()
    );
    write_aggregates(&outcome.results, &out_dir)?;
    for table in crackbench_core::report::aggregate_by_mode(&outcome.results)? {
        println!("\n[{}]", table.mode);
        print!("{}", crackbench_core::report::render_table_markdown(&table));
    }
    if !outcome.failures.is_empty() {
        for f in &outcome.failures {
            eprintln!(
                "error: run {} {} seed {} failed: {}",
                f.backbone, f.mode, f.seed, f.error
            );
        }
        eprintln!("{} run(s) failed; see failures.json", outcome.failures.len());
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(
    results: PathBuf,
    alpha: f64,
    metrics: Vec<String>,
    mode: Option<String>,
    out: Option<PathBuf>,
) -> Result<ExitCode, CliError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha must be in (0, 1), got {alpha}")));
    }
    let metric_names: Vec<MetricName> = metrics
        .iter()
        .map(|m| MetricName::parse(m))
        .collect::<Result<_, _>>()
        .map_err(|e: CoreError| CliError::Usage(e.to_string()))?;
    let files = list_run_files(&results)?;
    if files.is_empty() {
        return Err(CliError::Core(CoreError::InvalidInput(format!(
            "no run result files (run__*.json) under {}",
            results.display()
        ))));
    }
    let mut runs = load_run_results(&files)?;
    if let Some(mode) = &mode {
        let mode = TrainMode::parse(mode).map_err(|e| CliError::Usage(e.to_string()))?;
        runs.retain(|r| r.mode == mode);
        if runs.is_empty() {
            return Err(CliError::Core(CoreError::InvalidInput(format!(
                "no runs with mode {mode} under {}",
                results.display()
            ))));
        }
    } else {
        let mut modes: Vec<&str> = runs.iter().map(|r| r.mode.as_str()).collect();
        modes.sort_unstable();
        modes.dedup();
        if modes.len() > 1 {
            return Err(CliError::Usage(format!(
                "results mix train modes ({}); pass --mode to pick one",
                modes.join(", ")
            )));
        }
    }

    let out_path = out.unwrap_or_else(|| results.join("comparison.json"));
    let mut models: Vec<&str> = runs.iter().map(|r| r.backbone.as_str()).collect();
    models.sort_unstable();
    models.dedup();
    if models.len() < 2 {
        // A single model group has nothing to compare; emit an explicit
        // not-applicable document rather than failing the pipeline.
        let doc = serde_json::json!({
            "alpha": alpha,
            "metrics": {},
            "note": format!(
                "ANOVA not applicable: single model group ({})",
                models.first().copied().unwrap_or("none")
            ),
        });
        std::fs::write(&out_path, serde_json::to_string_pretty(&doc).unwrap() + "\n")
            .map_err(|e| CliError::Core(CoreError::io(&out_path, e)))?;
        println!(
            "ANOVA not applicable (single model group); note written to {}",
            out_path.display()
        );
        return Ok(ExitCode::SUCCESS);
    }

    let report = compare_runs(&runs, &metric_names, alpha)?;
    report.write(&out_path)?;
    println!("comparison written to {}", out_path.display());
    print!("{}", render_anova_markdown(&report));
    Ok(ExitCode::SUCCESS)
}

fn cmd_localize(
    model_path: PathBuf,
    image_path: PathBuf,
    cfg: WindowConfig,
    iou_threshold: f64,
    out: Option<PathBuf>,
    annotate: Option<PathBuf>,
) -> Result<ExitCode, CliError> {
    if !(cfg.score_threshold > 0.0 && cfg.score_threshold < 1.0) {
        return Err(CliError::Usage(format!(
            "--score-threshold must be in (0, 1), got {}",
            cfg.score_threshold
        )));
    }
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(CliError::Usage(format!(
            "--iou-threshold must be in (0, 1], got {iou_threshold}"
        )));
    }
    let mut model = ClassifierModel::load_artifact(&model_path)?;
    let image = SourceImage::load(&image_path)?;
    let raw = slide(&mut model, &image, &cfg)?;
    let merged = merge_boxes(&raw, iou_threshold);
    let report = DetectionReport {
        image_id: image.identifier.clone(),
        config: cfg,
        detections: merged.clone(),
    };
    match &out {
        Some(path) => {
            std::fs::write(path, report.to_json())
                .map_err(|e| CliError::Core(CoreError::io(path, e)))?;
            println!(
                "{} window(s) above threshold, {} merged box(es), written to {}",
                raw.len(),
                merged.len(),
                path.display()
            );
        }
        None => print!("{}", report.to_json()),
    }
    if let Some(path) = annotate {
        let pixels = crackbench_core::localize::annotate(&image, &merged);
        let img = image::RgbImage::from_raw(image.width as u32, image.height as u32, pixels)
            .expect("annotated buffer matches dimensions");
        img.save(&path).map_err(|e| {
            CliError::Core(CoreError::Image {
                path: path.clone(),
                source: e,
            })
        })?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(results: PathBuf, out: PathBuf, alpha: f64) -> Result<ExitCode, CliError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha must be in (0, 1), got {alpha}")));
    }
    let outputs = generate_report(&results, &out, alpha)?;
    println!(
        "report written to {} ({} gallery patch(es) copied)",
        outputs.report_path.display(),
        outputs.gallery_copied
    );
    Ok(ExitCode::SUCCESS)
}
