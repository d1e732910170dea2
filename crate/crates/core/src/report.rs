//! Report rendering: aggregate tables in the benchmark's canonical column
//! order (Model, Accuracy, Precision, Recall, F1), ANOVA summaries, and the
//! misclassification gallery.
//!
//! Rendering is fully deterministic: regenerating a report from the same
//! persisted result files yields byte-identical output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{aggregate, AggStat, AggregateMetrics, MetricName, MetricVector};
use crate::model::{BackboneName, TrainMode};
use crate::stats::{compare_runs, ComparisonReport};
use crate::training::{list_run_files, load_run_results, RunResult};

/// Two significant figures, the convention for the "±" spread.
pub fn format_sig2(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = if exp >= 1 { 0 } else { (1 - exp) as usize };
    format!("{x:.decimals$}")
}

/// "mean±std" cell, e.g. `0.996±0.0042`; em dash when no defined runs.
pub fn fmt_mean_std(stat: &AggStat) -> String {
    match (stat.mean, stat.std) {
        (Some(mean), Some(std)) => format!("{:.3}\u{b1}{}", mean, format_sig2(std)),
        _ => "\u{2014}".to_string(),
    }
}

/// One aggregate table: rows of (model, aggregated metrics) for one mode,
/// in registry order.
#[derive(Debug, Clone)]
pub struct ModeTable {
    pub mode: TrainMode,
    pub rows: Vec<(BackboneName, AggregateMetrics, usize)>,
}

/// Group runs by mode and model and aggregate each cell. Modes appear in
/// fixed order (frozen first), models in registry order.
pub fn aggregate_by_mode(runs: &[RunResult]) -> Result<Vec<ModeTable>> {
    let mut tables = Vec::new();
    for mode in [TrainMode::FrozenFeatures, TrainMode::FineTuneAll] {
        let mut rows = Vec::new();
        for name in BackboneName::all() {
            let vectors: Vec<MetricVector> = runs
                .iter()
                .filter(|r| r.mode == mode && r.backbone == name)
                .map(|r| r.metrics)
                .collect();
            if !vectors.is_empty() {
                let agg = aggregate(&vectors)?;
                rows.push((name, agg, vectors.len()));
            }
        }
        if !rows.is_empty() {
            tables.push(ModeTable { mode, rows });
        }
    }
    Ok(tables)
}

fn mode_title(mode: TrainMode) -> &'static str {
    match mode {
        TrainMode::FrozenFeatures => "Pretrained features, trained head (frozen_features)",
        TrainMode::FineTuneAll => "Fine-tuned end to end (fine_tune_all)",
    }
}

pub fn render_table_markdown(table: &ModeTable) -> String {
    let mut out = String::new();
    out.push_str("| Model | Accuracy | Precision | Recall | F1 |\n");
    out.push_str("|---|---|---|---|---|\n");
    for (name, agg, _) in &table.rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            name,
            fmt_mean_std(&agg.accuracy),
            fmt_mean_std(&agg.precision),
            fmt_mean_std(&agg.recall),
            fmt_mean_std(&agg.f1),
        ));
    }
    out
}

pub fn render_table_csv(table: &ModeTable) -> String {
    let mut out = String::from("model");
    for m in MetricName::all() {
        out.push_str(&format!(",{m}_mean,{m}_std,{m}_n,{m}_excluded"));
    }
    out.push('\n');
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.12}")).unwrap_or_default();
    for (name, agg, _) in &table.rows {
        out.push_str(name.as_str());
        for m in MetricName::all() {
            let s = agg.get(m);
            out.push_str(&format!(
                ",{},{},{},{}",
                cell(s.mean),
                cell(s.std),
                s.n,
                s.excluded
            ));
        }
        out.push('\n');
    }
    out
}

fn format_p(p: f64) -> String {
    if p == 0.0 {
        "0".to_string()
    } else if p < 1e-3 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

pub fn render_anova_markdown(report: &ComparisonReport) -> String {
    let mut out = String::new();
    out.push_str("| Metric | F | df | p | significant |\n");
    out.push_str("|---|---|---|---|---|\n");
    for (metric, cmp) in &report.metrics {
        let f_cell = match cmp.f_statistic {
            Some(f) => format!("{f:.4}"),
            None => "\u{221e}".to_string(),
        };
        let mut sig = if cmp.significant { "yes" } else { "no" }.to_string();
        if let Some(flag) = &cmp.flag {
            sig.push_str(&format!(" ({})", flag.as_str()));
        }
        out.push_str(&format!(
            "| {} | {} | ({}, {}) | {} | {} |\n",
            metric,
            f_cell,
            cmp.df[0],
            cmp.df[1],
            format_p(cmp.p),
            sig
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Gallery
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GalleryEntry {
    pub backbone: BackboneName,
    pub mode: TrainMode,
    pub seed: u64,
    /// "fp" for a false positive, "fn" for a false negative.
    pub kind: &'static str,
    pub score: f64,
    /// Confidence of the wrong prediction (distance from the far side).
    pub confidence: f64,
    pub path: Option<String>,
}

/// All misclassified test patches across runs, most confident first.
pub fn collect_gallery(runs: &[RunResult]) -> Vec<GalleryEntry> {
    let mut entries: Vec<GalleryEntry> = Vec::new();
    for run in runs {
        for m in &run.misclassified {
            let kind = match m.label {
                // Actual negative predicted positive.
                crate::dataset::Label::Negative => "fp",
                crate::dataset::Label::Positive => "fn",
            };
            let confidence = if kind == "fp" { m.score } else { 1.0 - m.score };
            entries.push(GalleryEntry {
                backbone: run.backbone,
                mode: run.mode,
                seed: run.seed,
                kind,
                score: m.score,
                confidence,
                path: m.path.clone(),
            });
        }
    }
    entries.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.backbone.as_str().cmp(b.backbone.as_str()))
            .then_with(|| a.mode.as_str().cmp(b.mode.as_str()))
            .then_with(|| a.seed.cmp(&b.seed))
            .then_with(|| a.path.cmp(&b.path))
    });
    entries
}

fn render_gallery_markdown(entries: &[GalleryEntry]) -> String {
    let mut out = String::new();
    if entries.is_empty() {
        out.push_str("No misclassified test patches in the persisted runs.\n");
        return out;
    }
    out.push_str("| # | Model | Mode | Seed | Kind | Score | Patch |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for (i, e) in entries.iter().enumerate() {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {:.4} | {} |\n",
            i + 1,
            e.backbone,
            e.mode,
            e.seed,
            e.kind,
            e.score,
            e.path.as_deref().unwrap_or("(in-memory)"),
        ));
    }
    out
}

/// File name that carries the score, e.g.
/// `001__vgg19__fine_tune_all__seed1__fp__0.9731__00042.png`.
fn gallery_file_name(rank: usize, e: &GalleryEntry, source: &str) -> String {
    let stem = Path::new(source)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| source.to_string());
    format!(
        "{:03}__{}__{}__seed{}__{}__{:.4}__{}",
        rank,
        e.backbone.as_str().to_ascii_lowercase(),
        e.mode,
        e.seed,
        e.kind,
        e.score,
        stem
    )
}

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ReportOutputs {
    pub report_path: PathBuf,
    pub gallery_copied: usize,
}

/// Render `report.md` (aggregate tables, per-mode ANOVA, gallery) from the
/// run files in `results_dir`, copying gallery patches into
/// `out_dir/gallery/`.
pub fn generate_report(results_dir: &Path, out_dir: &Path, alpha: f64) -> Result<ReportOutputs> {
    let files = list_run_files(results_dir)?;
    if files.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no run result files (run__*.json) under {}",
            results_dir.display()
        )));
    }
    let runs = load_run_results(&files)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut md = String::from("# Crack Detection Benchmark Report\n");
    let tables = aggregate_by_mode(&runs)?;
    for table in &tables {
        md.push_str(&format!("\n## {}\n\n", mode_title(table.mode)));
        md.push_str(&render_table_markdown(table));
    }

    md.push_str(&format!("\n## Model comparison (one-way ANOVA, alpha = {alpha})\n"));
    for table in &tables {
        let mode_runs: Vec<RunResult> = runs
            .iter()
            .filter(|r| r.mode == table.mode)
            .cloned()
            .collect();
        md.push_str(&format!("\n### {}\n\n", mode_title(table.mode)));
        match compare_runs(&mode_runs, &MetricName::all(), alpha) {
            Ok(report) => md.push_str(&render_anova_markdown(&report)),
            Err(e) => md.push_str(&format!("Not applicable: {e}\n")),
        }
    }

    md.push_str("\n## Misclassification gallery\n\n");
    let entries = collect_gallery(&runs);
    md.push_str(&render_gallery_markdown(&entries));

    // Copy gallery patches for entries whose files are reachable.
    let dataset_roots: BTreeMap<(BackboneName, &str, u64), &str> = runs
        .iter()
        .filter_map(|r| {
            r.dataset_root
                .as_deref()
                .map(|root| ((r.backbone, r.mode.as_str(), r.seed), root))
        })
        .collect();
    let gallery_dir = out_dir.join("gallery");
    let mut copied = 0usize;
    if !entries.is_empty() {
        std::fs::create_dir_all(&gallery_dir).map_err(|e| Error::io(&gallery_dir, e))?;
        for (i, e) in entries.iter().enumerate() {
            let (Some(rel), Some(root)) = (
                e.path.as_deref(),
                dataset_roots.get(&(e.backbone, e.mode.as_str(), e.seed)),
            ) else {
                continue;
            };
            let src = Path::new(root).join(rel);
            if src.is_file() {
                let dst = gallery_dir.join(gallery_file_name(i + 1, e, rel));
                std::fs::copy(&src, &dst).map_err(|err| Error::io(&dst, err))?;
                copied += 1;
            }
        }
    }

    let report_path = out_dir.join("report.md");
    std::fs::write(&report_path, &md).map_err(|e| Error::io(&report_path, e))?;
    Ok(ReportOutputs {
        report_path,
        gallery_copied: copied,
    })
}

/// Write per-mode aggregate tables (markdown and CSV) next to run results.
pub fn write_aggregates(runs: &[RunResult], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let tables = aggregate_by_mode(runs)?;
    let mut written = Vec::new();
    for table in &tables {
        let md_path = out_dir.join(format!("aggregate__{}.md", table.mode));
        std::fs::write(&md_path, render_table_markdown(table))
            .map_err(|e| Error::io(&md_path, e))?;
        let csv_path = out_dir.join(format!("aggregate__{}.csv", table.mode));
        std::fs::write(&csv_path, render_table_csv(table)).map_err(|e| Error::io(&csv_path, e))?;
        written.push(md_path);
        written.push(csv_path);
    }
    Ok(written)
}
