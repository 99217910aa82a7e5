//! The workflows behind each subcommand. Each takes a resolved
//! [`RunConfig`], writes its outputs under `out_dir`, and returns a summary
//! for the caller to print.

use std::path::{Path, PathBuf};
use std::time::Instant;

use chemtext_core::codec::{Vocabulary, ENCODED_LEN};
use chemtext_core::data::{make_splits, Dataset, Splits};
use chemtext_core::explain::{
    interpretability_accuracy, predict_with_mask, train_explainer, ExplainerNet, InterpretabilityReport,
};
use chemtext_core::hpo::{
    run_search, val_test_correlation, Direction, SearchConfig, SearchReport, SearchSpace, Trial, TrainingObjective,
    TrialOutcome, TrialStatus,
};
use chemtext_core::model::{Model, TaskType};
use chemtext_core::nn::Real;
use chemtext_core::train::{evaluate, run_cv, CvReport, EncodedDataset, GridPolicy, MetricKind};
use serde::{Deserialize, Serialize};

use crate::config::{Precision, RunConfig};
use crate::container::{self, vocab_hash};
use crate::dataset::{load_csv, Columns, LoadReport};
use crate::error::{Error, Result};
use crate::reports::{self, SplitManifest, TrialLedger};
use crate::vocab_file;

/// Interpretability figure the per-character accuracy is compared against.
pub const REFERENCE_TOP3_ACCURACY: f64 = 0.88;

/// Largest all-ones-mask deviation tolerated by the identity check.
pub const IDENTITY_TOLERANCE: f64 = 1e-6;

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn load(cfg: &RunConfig, task: TaskType, columns: &Columns) -> Result<(Dataset, LoadReport)> {
    let path = cfg.dataset_path()?;
    let (ds, report) = load_csv(path, task, columns)?;
    log::info!("{}: {} records accepted, {} dropped", path.display(), report.accepted, report.dropped_total());
    Ok((ds, report))
}

fn corpus_vocab(ds: &Dataset) -> Result<Vocabulary> {
    Ok(Vocabulary::build(ds.records.iter().map(|r| r.smiles.as_str()))?)
}

fn manifest(ds: &Dataset, splits: &Splits) -> SplitManifest {
    SplitManifest {
        dataset: ds.name.clone(),
        n_records: ds.len(),
        n_unique: ds.unique_indices().len(),
        splits: splits.clone(),
    }
}

/// Drops records with characters the vocabulary lacks; returns how many.
fn restrict_to_vocab(ds: &mut Dataset, vocab: &Vocabulary) -> usize {
    let before = ds.records.len();
    ds.records.retain(|r| r.smiles.chars().all(|c| vocab.index_of(c).is_some()));
    let skipped = before - ds.records.len();
    if skipped > 0 {
        log::warn!("skipped {skipped} records with characters outside the model vocabulary");
    }
    skipped
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeSummary {
    pub dataset: String,
    pub vocabulary_size: usize,
    pub vocabulary_sha256: String,
    pub encoded_length: usize,
    pub load: LoadReport,
}

/// Builds the corpus vocabulary and writes it with the encoded rows and
/// ingestion statistics.
pub fn encode(cfg: &RunConfig) -> Result<EncodeSummary> {
    cfg.write_resolved()?;
    let (ds, load) = load(cfg, cfg.task, &cfg.columns)?;
    let vocab = corpus_vocab(&ds)?;
    vocab_file::save(&vocab, &out(cfg, "vocab.tsv"))?;

    let path = out(cfg, "encoded.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Csv { path: path.clone(), row: 0, detail: e.to_string() })?;
    let mut header = vec!["smiles".to_string()];
    header.extend(ds.task_names.iter().cloned());
    header.push("indices".into());
    let csv_err = |e: csv::Error| Error::Csv { path: path.clone(), row: 0, detail: e.to_string() };
    w.write_record(&header).map_err(csv_err)?;
    for r in &ds.records {
        let e = vocab.encode(&r.smiles)?;
        let mut row = vec![r.smiles.clone()];
        row.extend(r.labels.iter().map(|l| l.map(|v| v.to_string()).unwrap_or_default()));
        row.push(e.indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let summary = EncodeSummary {
        dataset: ds.name.clone(),
        vocabulary_size: vocab.size(),
        vocabulary_sha256: vocab_hash(&vocab),
        encoded_length: ENCODED_LEN,
        load,
    };
    reports::write_json(&out(cfg, "encoding.json"), &summary)?;
    Ok(summary)
}

/// Cross-validated training; writes the split manifest, one model and one
/// history file per fold, and the CV report.
pub fn train(cfg: &RunConfig) -> Result<CvReport> {
    match cfg.precision {
        Precision::F32 => train_impl::<f32>(cfg),
        Precision::F64 => train_impl::<f64>(cfg),
    }
}

fn train_impl<T: Real>(cfg: &RunConfig) -> Result<CvReport> {
    cfg.write_resolved()?;
    let (ds, _) = load(cfg, cfg.task, &cfg.columns)?;
    let vocab = corpus_vocab(&ds)?;
    vocab_file::save(&vocab, &out(cfg, "vocab.tsv"))?;
    let data = EncodedDataset::new(&ds, &vocab)?;
    let splits = make_splits(&ds, &cfg.split_plan(&ds.task))?;
    reports::write_json(&out(cfg, "splits.json"), &manifest(&ds, &splits))?;

    let policy = if cfg.off_grid { GridPolicy::OffGrid } else { GridPolicy::OnGrid };
    let mut io_err: Option<Error> = None;
    let outcome = run_cv::<T>(
        &data,
        &splits,
        cfg.arch,
        cfg.hyper_params,
        &vocab,
        &cfg.train,
        cfg.seed,
        policy,
        |k, model, history, _| {
            let r = container::save_model(model, &ds.task_names, &out(cfg, &format!("fold{k}.model")))
                .and_then(|_| reports::write_history_csv(&out(cfg, &format!("history_fold{k}.csv")), history));
            if let Err(e) = r {
                io_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = io_err {
        return Err(e);
    }
    reports::write_json(&out(cfg, "cv_report.json"), &outcome.report)?;
    Ok(outcome.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub model: PathBuf,
    pub dataset: String,
    pub n: usize,
    pub skipped_unknown_chars: usize,
    pub metric_kind: MetricKind,
    pub metric: Option<f64>,
    pub loss: f64,
}

/// Scores a saved model on every accepted row of a dataset.
pub fn eval(cfg: &RunConfig, model_path: &Path) -> Result<EvalSummary> {
    match cfg.precision {
        Precision::F32 => eval_impl::<f32>(cfg, model_path),
        Precision::F64 => eval_impl::<f64>(cfg, model_path),
    }
}

fn columns_for(cfg: &RunConfig, task_names: &[String]) -> Columns {
    let mut columns = cfg.columns.clone();
    if columns.labels.is_empty() {
        columns.labels = task_names.to_vec();
    }
    columns
}

fn eval_impl<T: Real>(cfg: &RunConfig, model_path: &Path) -> Result<EvalSummary> {
    cfg.write_resolved()?;
    let (model, meta) = container::load_model::<T>(model_path)?;
    let (mut ds, _) = load(cfg, meta.task.task_type, &columns_for(cfg, &meta.task_names))?;
    let skipped = restrict_to_vocab(&mut ds, model.vocab());
    let data = EncodedDataset::new(&ds, model.vocab())?;
    let rows: Vec<usize> = (0..ds.len()).collect();
    let ev = evaluate(&model, &data, &rows, cfg.train.regression_loss)?;

    let path = out(cfg, "predictions.csv");
    let csv_err = |e: csv::Error| Error::Csv { path: path.clone(), row: 0, detail: e.to_string() };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    let mut header = vec!["smiles".to_string()];
    for n in &ds.task_names {
        header.push(n.clone());
        header.push(format!("{n}_predicted"));
    }
    w.write_record(&header).map_err(csv_err)?;
    let k = ds.task.n_outputs;
    for (i, r) in ds.records.iter().enumerate() {
        let mut row = vec![r.smiles.clone()];
        for t in 0..k {
            row.push(r.labels[t].map(|v| v.to_string()).unwrap_or_default());
            row.push(ev.predictions[i * k + t].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let summary = EvalSummary {
        model: model_path.to_path_buf(),
        dataset: ds.name.clone(),
        n: ds.len(),
        skipped_unknown_chars: skipped,
        metric_kind: MetricKind::for_task(&ds.task),
        metric: ev.metric,
        loss: ev.loss,
    };
    reports::write_json(&out(cfg, "metrics.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub trials: usize,
    pub completed: usize,
    pub resumed_from: usize,
    pub best: Option<Trial>,
    pub scatter_rows: usize,
    /// Pearson correlation of validation and test metrics across trials.
    pub val_test_correlation: Option<f64>,
}

/// Bayesian search over the design grid of `cfg.arch`, resumable from the
/// trial ledger in the output directory.
pub fn hpo(cfg: &RunConfig) -> Result<SearchSummary> {
    match cfg.precision {
        Precision::F32 => hpo_impl::<f32>(cfg),
        Precision::F64 => hpo_impl::<f64>(cfg),
    }
}

/// A resumed search must use the configuration that produced the ledger;
/// only the budget may change.
fn check_resumable(cfg: &RunConfig) -> Result<()> {
    let path = out(cfg, "config.json");
    if !path.exists() {
        return Ok(());
    }
    let mut previous = RunConfig::load(&path)?;
    previous.search.n_trials = cfg.search.n_trials;
    previous.out_dir = cfg.out_dir.clone();
    if &previous != cfg {
        return Err(Error::Config(format!(
            "{} holds a ledger from a different configuration (see {}); use a fresh --out-dir",
            cfg.out_dir.display(),
            path.display()
        )));
    }
    Ok(())
}

fn hpo_impl<T: Real>(cfg: &RunConfig) -> Result<SearchSummary> {
    let ledger = TrialLedger::new(out(cfg, "trials.jsonl"));
    let prior = ledger.read()?;
    if !prior.is_empty() {
        check_resumable(cfg)?;
        log::info!("resuming after {} recorded trials", prior.len());
    }
    cfg.write_resolved()?;
    let resumed_from = prior.len();

    let (ds, _) = load(cfg, cfg.task, &cfg.columns)?;
    let vocab = corpus_vocab(&ds)?;
    vocab_file::save(&vocab, &out(cfg, "vocab.tsv"))?;
    let data = EncodedDataset::new(&ds, &vocab)?;
    let plan = cfg.split_plan(&ds.task);
    let objective = TrainingObjective::new(&ds, &data, &vocab, cfg.arch, &plan, cfg.train, cfg.seed)?
        .allow_off_grid(cfg.off_grid);
    let direction = if MetricKind::for_task(&ds.task).higher_is_better() {
        Direction::Maximize
    } else {
        Direction::Minimize
    };
    let space = SearchSpace::for_arch(cfg.arch);
    for t in &prior {
        if !space.contains(&t.params) {
            return Err(Error::Config(format!("ledger trial {} lies outside the {} grid", t.id, cfg.arch)));
        }
    }
    let search = SearchConfig { n_trials: cfg.search.n_trials, seed: cfg.seed, direction };

    let mut io_err: Option<Error> = None;
    let report: SearchReport = run_search(
        &space,
        &search,
        prior,
        |hp, id| {
            let start = Instant::now();
            let (validation, test) = objective.evaluate::<T>(hp, id)?;
            Ok(TrialOutcome { validation, test, wall_seconds: start.elapsed().as_secs_f64() })
        },
        |t| {
            if let Err(e) = ledger.append(t) {
                io_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = io_err {
        return Err(e);
    }
    let scatter_rows = reports::write_scatter_csv(&out(cfg, "scatter.csv"), &report.trials)?;
    let summary = SearchSummary {
        trials: report.trials.len(),
        completed: report.trials.iter().filter(|t| t.status == TrialStatus::Completed).count(),
        resumed_from,
        best: report.best_trial().cloned(),
        scatter_rows,
        val_test_correlation: val_test_correlation(&report.trials).ok(),
    };
    reports::write_json(&out(cfg, "search_report.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainSummary {
    pub base_model: PathBuf,
    pub base_fingerprint: u64,
    pub identity_max_diff: f64,
    pub explainer_epochs: Option<usize>,
    pub explainer_converged: Option<bool>,
    pub per_character: Option<f64>,
    pub per_molecule_majority: Option<f64>,
    pub reference_per_character: f64,
    pub n_soluble: usize,
    pub n_insoluble: usize,
    pub k: usize,
}

/// Largest absolute difference between plain predictions and predictions
/// under an all-ones mask.
pub fn identity_mask_deviation<T: Real>(model: &Model<T>, data: &EncodedDataset) -> Result<f64> {
    let mut idx = Vec::with_capacity(data.len() * ENCODED_LEN);
    for i in 0..data.len() {
        idx.extend_from_slice(data.row(i));
    }
    let plain = model.predict_indices(&idx)?;
    let masked = predict_with_mask(model, &idx, &vec![T::one(); idx.len()])?;
    Ok(plain
        .data()
        .iter()
        .zip(&masked)
        .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
        .fold(0.0, f64::max))
}

/// Trains (or loads) an explainer for a saved regression model and scores
/// its top-k attributions. With `identity_only`, stops after checking that
/// an all-ones mask leaves predictions unchanged.
pub fn explain(cfg: &RunConfig, identity_only: bool) -> Result<ExplainSummary> {
    match cfg.precision {
        Precision::F32 => explain_impl::<f32>(cfg, identity_only),
        Precision::F64 => explain_impl::<f64>(cfg, identity_only),
    }
}

fn explain_impl<T: Real>(cfg: &RunConfig, identity_only: bool) -> Result<ExplainSummary> {
    let base_path = cfg
        .explain
        .base_model
        .clone()
        .ok_or_else(|| Error::Usage("a base model is required (--base or explain.base_model)".into()))?;
    if !base_path.exists() {
        return Err(Error::io(
            &base_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "base model checkpoint not found"),
        ));
    }
    cfg.write_resolved()?;
    let (base, meta) = container::load_model::<T>(&base_path)?;
    let (mut ds, _) = load(cfg, TaskType::Regression, &columns_for(cfg, &meta.task_names))?;
    restrict_to_vocab(&mut ds, base.vocab());
    let data = EncodedDataset::new(&ds, base.vocab())?;
    let fingerprint = base.params().fingerprint();

    let identity_max_diff = identity_mask_deviation(&base, &data)?;
    let mut summary = ExplainSummary {
        base_model: base_path.clone(),
        base_fingerprint: fingerprint,
        identity_max_diff,
        explainer_epochs: None,
        explainer_converged: None,
        per_character: None,
        per_molecule_majority: None,
        reference_per_character: REFERENCE_TOP3_ACCURACY,
        n_soluble: 0,
        n_insoluble: 0,
        k: cfg.explain.top_k,
    };
    if identity_max_diff > IDENTITY_TOLERANCE {
        return Err(Error::IdentityMask { max_diff: identity_max_diff });
    }
    if identity_only {
        reports::write_json(&out(cfg, "identity_check.json"), &summary)?;
        return Ok(summary);
    }

    let net = match &cfg.explain.explainer {
        Some(path) => {
            let (net, m) = container::load_explainer::<T>(path)?;
            if m.base_fingerprint != fingerprint {
                return Err(Error::Config(format!(
                    "{} was trained against a different base model",
                    path.display()
                )));
            }
            net
        }
        None => {
            let splits = make_splits(&ds, &cfg.split_plan(&ds.task))?;
            let mut rows: Vec<usize> = splits.folds[0].train_originals().to_vec();
            rows.extend_from_slice(&splits.folds[0].validation);
            rows.sort_unstable();
            let mut net = ExplainerNet::<T>::new(cfg.explainer_config(), base.hyper_params().em_size)?;
            let history = train_explainer(&mut net, &base, &data, &rows, |e| {
                log::info!("explainer epoch {}: loss {:.5} (lr {:e})", e.epoch, e.total, e.learning_rate);
            })?;
            container::save_explainer(&net, fingerprint, &out(cfg, "explainer.model"))?;
            reports::write_explainer_history_csv(&out(cfg, "explainer_history.csv"), &history)?;
            summary.explainer_epochs = Some(history.epochs.len());
            summary.explainer_converged = Some(history.converged);
            net
        }
    };
    let smiles: Vec<&str> = ds.records.iter().map(|r| r.smiles.as_str()).collect();
    let labels: Vec<f64> = ds.records.iter().map(|r| r.labels[0].unwrap_or(f64::NAN)).collect();
    let report: InterpretabilityReport =
        interpretability_accuracy(&net, &base, &smiles, &labels, cfg.explain.cutoffs, cfg.explain.top_k)?;
    reports::write_attributions(&out(cfg, "attributions.jsonl"), &report.molecules)?;
    summary.per_character = Some(report.per_character);
    summary.per_molecule_majority = Some(report.per_molecule_majority);
    summary.n_soluble = report.n_soluble;
    summary.n_insoluble = report.n_insoluble;
    reports::write_json(&out(cfg, "interpretability.json"), &summary)?;
    Ok(summary)
}
