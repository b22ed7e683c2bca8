use std::path::PathBuf;

use cadence_core::stats::{corrected_paired_ttest, corrected_ttest_from_summary, most_confused_submatrix, ConfusionMatrix, FoldScores};
use clap::Args;
use serde::Deserialize;

use super::learn::fmt_acc;
use super::{create_dir, write_csv, write_json, Context};
use crate::config::config_hash;
use crate::error::{invalid, Result};
use crate::formats::{read_file, write_atomic};
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct TtestArgs {
    /// Per-fold scores of the first method.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub a: Vec<f64>,
    /// Per-fold scores of the second method.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub b: Vec<f64>,
    /// CSV with columns `a` and `b`, one row per fold.
    #[arg(long, conflicts_with_all = ["a", "b"])]
    pub scores: Option<PathBuf>,
    /// Summary mode: mean of the paired differences.
    #[arg(long, requires_all = ["se", "k"], conflicts_with_all = ["a", "b", "scores"], allow_hyphen_values = true)]
    pub mean_diff: Option<f64>,
    /// Summary mode: uncorrected standard error sd/sqrt(k).
    #[arg(long, requires = "mean_diff")]
    pub se: Option<f64>,
    /// Summary mode: number of folds.
    #[arg(long, requires = "mean_diff")]
    pub k: Option<usize>,
    /// Test/train size ratio (default 1/(k-1)).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Also write the JSON result here.
    #[arg(long = "out")]
    pub output: Option<PathBuf>,
}

#[derive(Deserialize)]
struct FoldRow {
    a: f64,
    b: f64,
}

pub fn ttest(t: &TtestArgs) -> Result<()> {
    let result = if let Some(mean) = t.mean_diff {
        corrected_ttest_from_summary(mean, t.se.unwrap_or_default(), t.k.unwrap_or_default(), t.rho)?
    } else {
        let (a, b) = match &t.scores {
            Some(p) => {
                let bytes = read_file(p)?;
                let rows = csv::Reader::from_reader(bytes.as_slice()).deserialize().collect::<csv::Result<Vec<FoldRow>>>()?;
                rows.iter().map(|r| (r.a, r.b)).unzip()
            }
            None => (t.a.clone(), t.b.clone()),
        };
        if a.is_empty() {
            invalid!("give fold scores with --a/--b or --scores, or summary statistics with --mean-diff/--se/--k");
        }
        corrected_paired_ttest(&FoldScores::new(a, b, t.rho)?)?
    };
    let mut json = serde_json::to_vec_pretty(&result)?;
    json.push(b'\n');
    if let Some(p) = &t.output {
        write_atomic(p, &json)?;
    }
    print!("{}", String::from_utf8_lossy(&json));
    if let Some(w) = &result.warning {
        eprintln!("warning: {w}");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ConfusionArgs {
    /// CSV with `truth` and `pred` columns (e.g. an eval predictions.csv).
    #[arg(long)]
    pub predictions: PathBuf,
    /// Class count (default: largest label + 1).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Size of the most-confused submatrix.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Deserialize)]
struct PredRow {
    truth: usize,
    pred: usize,
}

pub fn confusion(c: &ConfusionArgs, ctx: &Context) -> Result<()> {
    let mut manifest = RunManifest::start("confusion", &ctx.argv, ctx.seed);
    let bytes = read_file(&c.predictions)?;
    let rows = csv::Reader::from_reader(bytes.as_slice()).deserialize().collect::<csv::Result<Vec<PredRow>>>()?;
    if rows.is_empty() {
        invalid!("{} has no rows", c.predictions.display());
    }
    let seen = rows.iter().map(|r| r.truth.max(r.pred)).max().unwrap_or(0) + 1;
    let classes = c.classes.unwrap_or(seen);
    let (truth, preds): (Vec<usize>, Vec<usize>) = rows.iter().map(|r| (r.truth, r.pred)).unzip();
    let cm = ConfusionMatrix::from_predictions(&preds, &truth, classes)?;
    let summary = cm.summary();
    let sub = most_confused_submatrix(&cm, c.top.min(classes))?;

    create_dir(&c.out_dir)?;
    let mut outputs = Vec::new();
    let header: Vec<String> = std::iter::once("truth\\pred".to_string()).chain((0..classes).map(|j| j.to_string())).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let matrix_rows: Vec<Vec<String>> = (0..classes)
        .map(|i| std::iter::once(i.to_string()).chain((0..classes).map(|j| cm.get(i, j).to_string())).collect())
        .collect();
    write_csv(&c.out_dir, "confusion.csv", &header_refs, &matrix_rows, &mut outputs)?;
    let per_class: Vec<Vec<String>> = (0..classes)
        .map(|i| vec![i.to_string(), cm.row_sum(i).to_string(), cm.get(i, i).to_string(), fmt_acc(summary.per_class_accuracy[i])])
        .collect();
    write_csv(&c.out_dir, "per_class.csv", &["class", "support", "correct", "accuracy"], &per_class, &mut outputs)?;
    let n = sub.classes.len();
    let sub_header: Vec<String> = std::iter::once("truth\\pred".to_string()).chain(sub.classes.iter().map(|j| j.to_string())).collect();
    let sub_refs: Vec<&str> = sub_header.iter().map(String::as_str).collect();
    let sub_rows: Vec<Vec<String>> = (0..n)
        .map(|i| std::iter::once(sub.classes[i].to_string()).chain((0..n).map(|j| sub.counts[i * n + j].to_string())).collect())
        .collect();
    write_csv(&c.out_dir, "submatrix.csv", &sub_refs, &sub_rows, &mut outputs)?;
    write_json(&c.out_dir, "summary.json", &serde_json::json!({ "summary": summary, "submatrix": sub }), &mut outputs)?;
    manifest.config_hash = config_hash(&(classes, c.top));
    manifest.inputs = vec![c.predictions.display().to_string()];
    manifest.finish(&c.out_dir, outputs)?;
    if let Some(w) = &sub.warning {
        eprintln!("warning: {w}");
    }
    println!("top-1 {:.4} over {} predictions", summary.top1, rows.len());
    Ok(())
}
