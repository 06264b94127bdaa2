//! `umps`: synthesize cohorts, cross-validate models, evaluate checkpoints,
//! explain predictions and draw Kaplan–Meier curves.
//!
//! Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
//! configuration error.

mod overrides;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use umps::bags::{read_cohort, CancerType, GenomicSchema, PatientRecord};
use umps::checkpoint;
use umps::interpret::{explain_cohort, top_genes, CamReport, TopGenes, DEFAULT_TOP_K};
use umps::model::{Model, TrainConfig};
use umps::stats::{km_csv, km_svg, km_curve, logrank_test, median_risk_split, Metrics, Observation};
use umps::synth::{generate_cohort, write_synthetic, CohortSpec};
use umps::trainer::{cross_validate, evaluate, CvOutcome, PatientPrediction};

use overrides::{config_error, read_json_value, ConfigError};

#[derive(Parser)]
#[command(name = "umps", version, about = "Multi-modal pan-cancer survival modelling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (cohort.jsonl) and its ground truth (truth.json).
    Synth(SynthArgs),
    /// Cross-validate a model; writes one checkpoint and one metrics file per fold.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a cohort and print the metrics JSON.
    Eval(EvalArgs),
    /// Rank genes by class activation for each cancer type.
    Explain(ExplainArgs),
    /// Kaplan–Meier curves of the median-risk split for each cancer type.
    Km(KmArgs),
    /// Repeat cross-validation for several expert counts.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Overrides {
    /// Override one configuration field, e.g. `--set lr=0.001`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Cohort settings JSON; unspecified fields keep their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, env = "UMPS_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct TrainingArgs {
    /// Cohort file (JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Training configuration JSON; unspecified fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, env = "UMPS_SEED")]
    seed: Option<u64>,
    /// Folds trained concurrently; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    parallel_folds: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    training: TrainingArgs,
    /// Expert counts to compare.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 5, 10, 15, 20])]
    experts: Vec<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Metrics destination; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-patient predictions (JSON lines).
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to explain; with several, attributions are pooled.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    /// Gene names; placeholder names sized like the cohort when absent.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Ranking destination; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every per-position score (JSON lines).
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct KmArgs {
    /// Predictions (JSON lines) as written by `train` or `eval`.
    #[arg(long)]
    predictions: PathBuf,
    /// Restrict to one cancer code.
    #[arg(long)]
    cancer: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.chain().any(|c| c.is::<ConfigError>());
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Explain(a) => explain(a),
        Command::Km(a) => km(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: CohortSpec = overrides::load(a.spec.as_deref(), &a.overrides.sets)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| config_error(format!("invalid cohort spec: {e}")))?;
    let cohort = generate_cohort(&spec)?;
    write_synthetic(&a.out, &cohort)?;
    eprintln!(
        "wrote {} patients to {} (ground-truth C-index {:.3})",
        cohort.patients.len(),
        a.out.display(),
        cohort.oracle_cindex()?
    );
    Ok(())
}

fn load_cohort(path: &Path) -> Result<Vec<PatientRecord>> {
    if !path.is_file() {
        return Err(config_error(format!("cohort file {} does not exist", path.display())));
    }
    let cohort = read_cohort(path)?;
    if cohort.is_empty() {
        return Err(config_error(format!("cohort file {} is empty", path.display())));
    }
    Ok(cohort)
}

fn load_checkpoint(path: &Path) -> Result<Model> {
    if !path.is_file() {
        return Err(config_error(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(checkpoint::load(path)?)
}

fn training_config(a: &TrainingArgs) -> Result<TrainConfig> {
    let mut config: TrainConfig = overrides::load(a.config.as_deref(), &a.overrides.sets)?;
    if let Some(k) = a.folds {
        config.folds = k;
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate().map_err(|e| config_error(format!("invalid training configuration: {e}")))?;
    if a.parallel_folds == 0 {
        return Err(config_error("--parallel-folds must be at least 1"));
    }
    Ok(config)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Writes the artifacts of one cross-validation run into `dir`.
fn write_outcome(dir: &Path, config: &TrainConfig, cv: &CvOutcome) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("config.json"), config)?;
    let mut predictions = Vec::new();
    for f in &cv.folds {
        checkpoint::save(&f.model, &dir.join(format!("fold{}.umps", f.fold)))?;
        write_json(&dir.join(format!("fold{}_metrics.json", f.fold)), &f.metrics)?;
        write_jsonl(&dir.join(format!("fold{}_log.jsonl", f.fold)), &f.log)?;
        predictions.extend(f.predictions.iter().cloned());
    }
    write_jsonl(&dir.join("predictions.jsonl"), &predictions)?;
    write_json(&dir.join("metrics.json"), &cv.metrics)
}

fn describe(m: &Metrics) -> String {
    let per: Vec<String> = m
        .per_cancer_cindex
        .iter()
        .map(|(c, v)| format!("{c} {}", v.map_or("n/a".into(), |v| format!("{v:.3}"))))
        .collect();
    let overall = m.overall_mean_cindex.map_or("n/a".into(), |v| format!("{v:.4}"));
    format!("overall C-index {overall} ({})", per.join(", "))
}

fn train(a: TrainArgs) -> Result<()> {
    let a = a.training;
    let config = training_config(&a)?;
    let cohort = load_cohort(&a.data)?;
    let cv = cross_validate(&cohort, &config, a.parallel_folds)?;
    write_outcome(&a.out, &config, &cv)?;
    eprintln!("{}", describe(&cv.metrics));
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    n_experts: usize,
    overall_mean_cindex: Option<f64>,
    per_cancer_cindex: BTreeMap<String, Option<f64>>,
}

fn sweep(a: SweepArgs) -> Result<()> {
    let base = training_config(&a.training)?;
    if a.experts.is_empty() || a.experts.contains(&0) {
        return Err(config_error("--experts needs positive expert counts"));
    }
    let cohort = load_cohort(&a.training.data)?;
    let mut rows = Vec::new();
    for &n in &a.experts {
        let config = TrainConfig {
            n_experts: n,
            ..base.clone()
        };
        let cv = cross_validate(&cohort, &config, a.training.parallel_folds)?;
        write_outcome(&a.training.out.join(format!("experts_{n:02}")), &config, &cv)?;
        eprintln!("N_e = {n}: {}", describe(&cv.metrics));
        rows.push(SweepRow {
            n_experts: n,
            overall_mean_cindex: cv.metrics.overall_mean_cindex,
            per_cancer_cindex: cv.metrics.per_cancer_cindex,
        });
    }
    write_json(&a.training.out.join("sweep.json"), &rows)
}

fn emit(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value)?;
            writeln!(stdout)?;
            Ok(())
        }
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let cohort = load_cohort(&a.data)?;
    let (fold, predictions) = evaluate(&model, &cohort, 0)?;
    let metrics = Metrics {
        per_cancer_cindex: fold.per_cancer_cindex.clone(),
        overall_mean_cindex: fold.overall_mean_cindex,
        logrank_p: fold.logrank_p.clone(),
        fold_details: vec![fold],
    };
    if let Some(path) = &a.predictions {
        write_jsonl(path, &predictions)?;
    }
    emit(a.out.as_deref(), &metrics)
}

fn explain(a: ExplainArgs) -> Result<()> {
    if a.top_k == 0 {
        return Err(config_error("--top-k must be positive"));
    }
    let cohort = load_cohort(&a.data)?;
    let schema: GenomicSchema = match &a.schema {
        Some(path) => serde_json::from_value(read_json_value(path)?)
            .map_err(|e| config_error(format!("{} is not a gene schema: {e}", path.display())))?,
        None => GenomicSchema::with_sizes(cohort[0].genomic.sizes())?,
    };
    let models = a.checkpoint.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>>>()?;
    let mut by_cancer: BTreeMap<CancerType, Vec<PatientRecord>> = BTreeMap::new();
    for p in cohort {
        by_cancer.entry(p.cancer_type()).or_default().push(p);
    }
    let mut ranking: BTreeMap<String, TopGenes> = BTreeMap::new();
    let mut all_reports: Vec<CamReport> = Vec::new();
    for (cancer, patients) in &by_cancer {
        let mut reports = Vec::new();
        for m in &models {
            reports.extend(explain_cohort(m, patients, a.threads.max(1))?);
        }
        ranking.insert(cancer.code().to_string(), top_genes(&reports, &schema, a.top_k)?);
        if a.records.is_some() {
            all_reports.extend(reports);
        }
    }
    if let Some(path) = &a.records {
        let records: Vec<_> = all_reports.iter().flat_map(CamReport::records).collect();
        write_jsonl(path, &records)?;
    }
    emit(a.out.as_deref(), &ranking)
}

fn read_predictions(path: &Path) -> Result<Vec<PatientPrediction>> {
    let file = fs::File::open(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| config_error(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn km(a: KmArgs) -> Result<()> {
    let predictions = read_predictions(&a.predictions)?;
    let only = match &a.cancer {
        Some(code) => Some(CancerType::from_code(code).ok_or_else(|| config_error(format!("unknown cancer code `{code}`")))?),
        None => None,
    };
    let mut by_cancer: BTreeMap<CancerType, Vec<&PatientPrediction>> = BTreeMap::new();
    for p in &predictions {
        if only.is_none_or(|c| c == p.cancer_type) {
            by_cancer.entry(p.cancer_type).or_default().push(p);
        }
    }
    if by_cancer.is_empty() {
        return Err(config_error("no predictions for the requested cancer types"));
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (cancer, preds) in by_cancer {
        let risks: Vec<f64> = preds.iter().map(|p| p.risk).collect();
        let (low, high) = median_risk_split(&risks).with_context(|| format!("{cancer}"))?;
        let group = |idx: &[usize]| -> (Vec<f64>, Vec<bool>) { idx.iter().map(|&i| (preds[i].survival_months, !preds[i].censored)).unzip() };
        let ((lt, le), (ht, he)) = (group(&low), group(&high));
        let observations = |t: &[f64], e: &[bool]| -> Vec<Observation> {
            t.iter().zip(e).map(|(&time, &event)| Observation { time, event }).collect()
        };
        let test = logrank_test(&observations(&lt, &le), &observations(&ht, &he)).with_context(|| format!("{cancer}"))?;
        let (kl, kh) = (km_curve(&lt, &le)?, km_curve(&ht, &he)?);
        let stem = a.out.join(format!("km_{}", cancer.code()));
        fs::write(stem.with_extension("csv"), km_csv(&kl, &kh))?;
        fs::write(stem.with_extension("svg"), km_svg(&kl, &kh, test.p_value))?;
        println!("{cancer}\tlow {}\thigh {}\tlogrank p {:.4e}", low.len(), high.len(), test.p_value);
    }
    Ok(())
}
