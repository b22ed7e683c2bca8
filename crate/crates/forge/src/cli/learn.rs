use std::path::{Path, PathBuf};

use cadence_core::ablation::{self, Variant, VariantGroup};
use cadence_core::stats::ConfusionMatrix;
use cadence_core::synth::Split;
use cadence_core::train::{self, argmax, predict_ensemble, EpochLog, ExperimentConfig, MixEvent, TtaConfig};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use super::{create_dir, write_csv, write_json, Context, ExperimentArgs};
use crate::checkpoint::CheckpointFile;
use crate::config::{config_hash, layered, preset};
use crate::dataset::Dataset;
use crate::error::{invalid, ForgeError, Result};
use crate::manifest::RunManifest;

pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Preset, then JSON file, then flags, then the variant's single change.
fn experiment(a: &ExperimentArgs, classes: usize, seed: u64, variant: &Variant) -> Result<ExperimentConfig> {
    let mut e = layered(preset(a.preset, classes), a.config.as_deref())?;
    if e.model.num_classes != classes {
        invalid!("config declares {} classes but the dataset has {classes}", e.model.num_classes);
    }
    e.train.seed = seed;
    if let Some(v) = a.epochs {
        e.train.epochs = v;
        e.train.warmup_epochs = e.train.warmup_epochs.min(v.saturating_sub(1));
    }
    if let Some(v) = a.lr {
        e.train.lr = v;
    }
    if let Some(v) = a.batch_size {
        e.train.batch_size = v;
    }
    if let Some(v) = a.spatial {
        e.pipeline.preprocess.spatial_size = v;
    }
    let e = variant.apply(&e);
    e.validate()?;
    Ok(e)
}

fn splits(ds: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let (tr, va) = (ds.indices(Split::Train), ds.indices(Split::Val));
    if tr.len() < 2 || va.is_empty() {
        invalid!("dataset needs at least 2 training and 1 validation samples");
    }
    Ok((tr, va))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Ablation variant slug.
    #[arg(long, default_value = "full")]
    pub variant: String,
    #[command(flatten)]
    pub exp: ExperimentArgs,
}

#[derive(Serialize)]
struct TrainLog<'a> {
    variant: &'a str,
    best_val_accuracy: f64,
    epochs: &'a [EpochLog],
    mix_events: &'a [MixEvent],
}

pub fn train(a: &TrainArgs, ctx: &Context) -> Result<()> {
    let mut manifest = RunManifest::start("train", &ctx.argv, ctx.seed);
    let variant = ablation::find(&a.variant)?;
    let ds = Dataset::load(&a.data_dir)?;
    let exp = experiment(&a.exp, ds.index.num_classes, ctx.seed, variant)?;
    let (tr, va) = splits(&ds)?;
    let bundle = train::train::<f32>(&exp, &ds.samples, &tr, &va)?;

    create_dir(&a.out_dir.join(CHECKPOINT_DIR))?;
    let mut outputs = Vec::new();
    write_json(&a.out_dir, "config.json", &exp, &mut outputs)?;
    let log = TrainLog {
        variant: variant.slug,
        best_val_accuracy: bundle.best_val_accuracy(),
        epochs: &bundle.log,
        mix_events: &bundle.mix_events,
    };
    write_json(&a.out_dir, "train_log.json", &log, &mut outputs)?;
    let ps = &bundle.params;
    let mut save = |name: String, ck: CheckpointFile| -> Result<()> {
        ck.save(&a.out_dir.join(&name))?;
        outputs.push(name);
        Ok(())
    };
    for c in &bundle.top_k {
        let ck = CheckpointFile::new(format!("epoch-{}", c.epoch), Some(c.epoch), Some(c.val_accuracy), &exp, ps, &c.values)?;
        save(format!("{CHECKPOINT_DIR}/epoch-{:03}.ckpt", c.epoch), ck)?;
    }
    if let Some(v) = &bundle.ema {
        save(format!("{CHECKPOINT_DIR}/ema.ckpt"), CheckpointFile::new("ema", None, None, &exp, ps, v)?)?;
    }
    if let Some(v) = &bundle.swa {
        save(format!("{CHECKPOINT_DIR}/swa.ckpt"), CheckpointFile::new("swa", None, None, &exp, ps, v)?)?;
    }
    let last = bundle.log.last().map(|l| l.epoch);
    save("final.ckpt".into(), CheckpointFile::new("final", last, None, &exp, ps, &ps.snapshot())?)?;
    manifest.config_hash = config_hash(&exp);
    manifest.inputs = vec![a.data_dir.display().to_string()];
    manifest.finish(&a.out_dir, outputs)?;
    println!("variant {} best val accuracy {:.4}", variant.slug, bundle.best_val_accuracy());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of .ckpt files; every file is an equally weighted member.
    #[arg(long)]
    pub checkpoints: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Average over the five test-time views.
    #[arg(long)]
    pub tta: bool,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
}

#[derive(Serialize)]
struct EvalReport {
    split: SplitArg,
    samples: usize,
    members: Vec<String>,
    tta_views: usize,
    top1: f64,
    macro_accuracy: f64,
    per_class_accuracy: Vec<f64>,
    confusion: Vec<Vec<u64>>,
}

fn checkpoint_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| ForgeError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| ForgeError::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "ckpt") {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        invalid!("no .ckpt files in {}", dir.display());
    }
    Ok(files)
}

pub fn eval(a: &EvalArgs, ctx: &Context) -> Result<()> {
    let mut manifest = RunManifest::start("eval", &ctx.argv, ctx.seed);
    let files = checkpoint_files(&a.checkpoints)?;
    let cks = files.iter().map(|p| CheckpointFile::load(p)).collect::<Result<Vec<_>>>()?;
    let hash = &cks[0].header.config_hash;
    if let Some((p, _)) = files.iter().zip(&cks).find(|(_, c)| &c.header.config_hash != hash) {
        invalid!("{} was trained with a different configuration", p.display());
    }
    let exp = &cks[0].header.experiment;
    let (model, mut ps) = cks[0].instantiate()?;
    let members = cks.iter().map(|c| c.values_for(&ps)).collect::<Result<Vec<_>>>()?;
    let member_refs: Vec<&[_]> = members.iter().map(Vec::as_slice).collect();

    let ds = Dataset::load(&a.data_dir)?;
    let classes = exp.model.num_classes;
    if ds.index.num_classes != classes {
        invalid!("dataset has {} classes, checkpoints {classes}", ds.index.num_classes);
    }
    let idx: Vec<usize> = match a.split {
        SplitArg::Train => ds.indices(Split::Train),
        SplitArg::Val => ds.indices(Split::Val),
        SplitArg::All => (0..ds.samples.len()).collect(),
    };
    if idx.is_empty() {
        invalid!("split has no samples");
    }
    let tta = if a.tta { TtaConfig { seed: ctx.seed, ..TtaConfig::default() } } else { TtaConfig::single() };
    let samples: Vec<_> = idx.iter().map(|&i| &ds.samples[i]).collect();
    let keys: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
    let probs = predict_ensemble(&model, &mut ps, &member_refs, &samples, &keys, &exp.pipeline, &tta, a.batch.max(1))?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let truth: Vec<usize> = idx.iter().map(|&i| ds.index.samples[i].label).collect();
    let cm = ConfusionMatrix::from_predictions(&preds, &truth, classes)?;
    let summary = cm.summary();

    create_dir(&a.out_dir)?;
    let mut outputs = Vec::new();
    let report = EvalReport {
        split: a.split,
        samples: idx.len(),
        members: files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect(),
        tta_views: tta.views.len(),
        top1: summary.top1,
        macro_accuracy: summary.macro_accuracy,
        per_class_accuracy: summary.per_class_accuracy.clone(),
        confusion: cm.counts.chunks(classes).map(<[u64]>::to_vec).collect(),
    };
    write_json(&a.out_dir, "metrics.json", &report, &mut outputs)?;
    let per_class: Vec<Vec<String>> = (0..classes)
        .map(|c| {
            let acc = summary.per_class_accuracy[c];
            vec![c.to_string(), cm.row_sum(c).to_string(), cm.get(c, c).to_string(), fmt_acc(acc)]
        })
        .collect();
    write_csv(&a.out_dir, "per_class.csv", &["class", "support", "correct", "accuracy"], &per_class, &mut outputs)?;
    let rows: Vec<Vec<String>> = idx
        .iter()
        .zip(&preds)
        .zip(&probs)
        .map(|((&i, &p), pr)| vec![i.to_string(), ds.index.samples[i].label.to_string(), p.to_string(), format!("{:.6}", pr[p])])
        .collect();
    write_csv(&a.out_dir, "predictions.csv", &["sample", "truth", "pred", "confidence"], &rows, &mut outputs)?;
    manifest.config_hash = hash.clone();
    manifest.inputs = files.iter().map(|p| p.display().to_string()).chain([a.data_dir.display().to_string()]).collect();
    manifest.finish(&a.out_dir, outputs)?;
    println!("top-1 {:.4} over {} samples ({} members x {} views)", summary.top1, idx.len(), cks.len(), tta.views.len());
    Ok(())
}

pub(crate) fn fmt_acc(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Variant slugs (default: all sixteen).
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    /// Training seeds; overrides --repeats.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Runs per variant with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[command(flatten)]
    pub exp: ExperimentArgs,
}

#[derive(Serialize)]
struct AblationRun {
    variant: &'static str,
    seed: u64,
    best_val_accuracy: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct AblationRow {
    variant: &'static str,
    label: &'static str,
    group: VariantGroup,
    runs: usize,
    mean_accuracy: Option<f64>,
    std_accuracy: Option<f64>,
    status: String,
}

/// Mean and sample standard deviation (0 for a single value).
pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn ablate(a: &AblateArgs, ctx: &Context) -> Result<()> {
    let mut manifest = RunManifest::start("ablate", &ctx.argv, ctx.seed);
    let variants: Vec<&Variant> = if a.variants.is_empty() {
        ablation::VARIANTS.iter().collect()
    } else {
        a.variants.iter().map(|s| ablation::find(s)).collect::<cadence_core::Result<_>>()?
    };
    let seeds: Vec<u64> = if a.seeds.is_empty() {
        if a.repeats == 0 {
            invalid!("--repeats must be at least 1");
        }
        (0..a.repeats as u64).map(|i| ctx.seed.wrapping_add(i)).collect()
    } else {
        a.seeds.clone()
    };
    let ds = Dataset::load(&a.data_dir)?;
    let classes = ds.index.num_classes;
    // validate every configuration before spending time on training
    let configs = variants
        .iter()
        .map(|v| seeds.iter().map(|&s| experiment(&a.exp, classes, s, v)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let (tr, va) = splits(&ds)?;
    let jobs: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..seeds.len()).map(move |s| (v, s))).collect();
    let runs: Vec<AblationRun> = jobs
        .par_iter()
        .map(|&(v, s)| {
            let result = train::train::<f32>(&configs[v][s], &ds.samples, &tr, &va);
            AblationRun {
                variant: variants[v].slug,
                seed: seeds[s],
                best_val_accuracy: result.as_ref().ok().map(|b| b.best_val_accuracy()),
                error: result.err().map(|e| e.to_string()),
            }
        })
        .collect();

    let rows: Vec<AblationRow> = variants
        .iter()
        .map(|v| {
            let mine: Vec<&AblationRun> = runs.iter().filter(|r| r.variant == v.slug).collect();
            let accs: Vec<f64> = mine.iter().filter_map(|r| r.best_val_accuracy).collect();
            let failed = mine.len() - accs.len();
            let (mean, std) = if accs.is_empty() { (None, None) } else { let (m, s) = mean_std(&accs); (Some(m), Some(s)) };
            AblationRow {
                variant: v.slug,
                label: v.label,
                group: v.group,
                runs: accs.len(),
                mean_accuracy: mean,
                std_accuracy: std,
                status: if failed == 0 { "ok".into() } else { format!("error ({failed} failed)") },
            }
        })
        .collect();

    create_dir(&a.out_dir)?;
    let mut outputs = Vec::new();
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.variant.into(), r.label.into(), r.runs.to_string(), opt(r.mean_accuracy), opt(r.std_accuracy), r.status.clone()])
        .collect();
    write_csv(
        &a.out_dir,
        "ablation.csv",
        &["variant", "label", "runs", "mean_accuracy", "std_accuracy", "status"],
        &csv_rows,
        &mut outputs,
    )?;
    write_json(&a.out_dir, "ablation.json", &serde_json::json!({ "rows": rows, "runs": runs }), &mut outputs)?;
    manifest.config_hash = config_hash(&configs);
    manifest.inputs = vec![a.data_dir.display().to_string()];
    manifest.finish(&a.out_dir, outputs)?;
    for r in &rows {
        println!("{:<18} {:>10} {}", r.variant, opt(r.mean_accuracy), r.status);
    }
    Ok(())
}
