//! Supervised training with RMSprop and early stopping, plus k-fold cross
//! validation.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codec::{Vocabulary, ENCODED_LEN};
use crate::data::{Dataset, ResampledFold, Splits};
use crate::metrics;
use crate::model::{ArchClass, HyperParams, Model, TaskSpec};
use crate::nn::{Graph, Optimizer, ParamStore, Real, Rmsprop, RmspropConfig, Tensor, BCE_CLAMP};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionLoss {
    Mae,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Shuffle seed. [`run_cv`] replaces it with a per-fold derived seed.
    pub seed: u64,
    pub regression_loss: RegressionLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            rho: 0.9,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 250,
            patience: 25,
            seed: 0,
            regression_loss: RegressionLoss::Mae,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.rho) || !(self.epsilon > 0.0) {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Macro-averaged ROC AUC, maximized.
    Auc,
    /// Root mean squared error, minimized.
    Rmse,
}

impl MetricKind {
    pub fn for_task(task: &TaskSpec) -> Self {
        if task.is_classification() {
            MetricKind::Auc
        } else {
            MetricKind::Rmse
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == MetricKind::Auc
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Auc => "auc",
            MetricKind::Rmse => "rmse",
        }
    }
}

/// A dataset pre-encoded against one vocabulary, ready for batching.
#[derive(Debug, Clone)]
pub struct EncodedDataset {
    task: TaskSpec,
    indices: Vec<u32>,
    spans: Vec<(usize, usize)>,
    /// `[n, tasks]`; missing entries hold 0 with weight 0.
    targets: Vec<f64>,
    weights: Vec<f64>,
}

/// Rows gathered for one batch.
pub struct Batch {
    pub indices: Vec<u32>,
    pub spans: Vec<(usize, usize)>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

impl EncodedDataset {
    pub fn new(dataset: &Dataset, vocab: &Vocabulary) -> Result<Self> {
        let t = dataset.task.n_outputs;
        let n = dataset.len();
        let mut indices = Vec::with_capacity(n * ENCODED_LEN);
        let mut spans = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n * t);
        let mut weights = Vec::with_capacity(n * t);
        for r in &dataset.records {
            let e = vocab.encode(&r.smiles)?;
            indices.extend_from_slice(&e.indices);
            spans.push(e.content_span);
            for l in &r.labels {
                targets.push(l.unwrap_or(0.0));
                weights.push(if l.is_some() { 1.0 } else { 0.0 });
            }
        }
        Ok(Self {
            task: dataset.task,
            indices,
            spans,
            targets,
            weights,
        })
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * ENCODED_LEN..(i + 1) * ENCODED_LEN]
    }

    pub fn span(&self, i: usize) -> (usize, usize) {
        self.spans[i]
    }

    /// Target of record `i` for task `t`, `None` when missing.
    pub fn target(&self, i: usize, t: usize) -> Option<f64> {
        let k = i * self.task.n_outputs + t;
        (self.weights[k] != 0.0).then(|| self.targets[k])
    }

    pub fn gather(&self, rows: &[usize]) -> Batch {
        let t = self.task.n_outputs;
        let mut b = Batch {
            indices: Vec::with_capacity(rows.len() * ENCODED_LEN),
            spans: Vec::with_capacity(rows.len()),
            targets: Vec::with_capacity(rows.len() * t),
            weights: Vec::with_capacity(rows.len() * t),
        };
        for &i in rows {
            b.indices.extend_from_slice(self.row(i));
            b.spans.push(self.spans[i]);
            b.targets.extend_from_slice(&self.targets[i * t..(i + 1) * t]);
            b.weights.extend_from_slice(&self.weights[i * t..(i + 1) * t]);
        }
        b
    }
}

/// Loss of `pred` against a batch, computed directly (no graph). Agrees
/// with the graph losses used for training.
pub fn loss_value(task: &TaskSpec, reg: RegressionLoss, pred: &[f64], targets: &[f64], weights: &[f64]) -> Result<f64> {
    if pred.len() != targets.len() || pred.len() != weights.len() || pred.is_empty() {
        return Err(Error::shape("loss", format!("{} predictions, {} targets", pred.len(), targets.len())));
    }
    if task.is_classification() {
        let (lo, hi) = (BCE_CLAMP, 1.0 - BCE_CLAMP);
        let mut total = 0.0;
        let mut count = 0usize;
        for ((&p, &t), &w) in pred.iter().zip(targets).zip(weights) {
            if w == 0.0 {
                continue;
            }
            let p = p.clamp(lo, hi);
            total += -(t * libm::log(p) + (1.0 - t) * libm::log(1.0 - p));
            count += 1;
        }
        if count == 0 {
            return Err(Error::AllMasked);
        }
        Ok(total / count as f64)
    } else {
        let n = pred.len() as f64;
        Ok(match reg {
            RegressionLoss::Mae => pred.iter().zip(targets).map(|(p, t)| libm::fabs(p - t)).sum::<f64>() / n,
            RegressionLoss::Mse => pred.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n,
        })
    }
}

/// Task metric of predictions over `rows`; `None` when undefined (a
/// classification split with a single class).
pub fn metric_value(data: &EncodedDataset, rows: &[usize], pred: &[f64]) -> Result<Option<f64>> {
    let t = data.task.n_outputs;
    if data.task.is_classification() {
        let labels: Vec<Option<bool>> = rows
            .iter()
            .flat_map(|&i| (0..t).map(move |k| (i, k)))
            .map(|(i, k)| data.target(i, k).map(|v| v == 1.0))
            .collect();
        match metrics::macro_auc(pred, &labels, t) {
            Ok((auc, _)) => Ok(Some(auc)),
            Err(Error::SingleClass) => Ok(None),
            Err(e) => Err(e),
        }
    } else {
        let targets: Vec<f64> = rows.iter().map(|&i| data.targets[i]).collect();
        metrics::rmse(pred, &targets).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: Option<f64>,
    /// `[rows, n_outputs]` row-major.
    pub predictions: Vec<f64>,
}

/// Inference-mode loss, metric, and predictions over `rows`.
pub fn evaluate<T: Real>(model: &Model<T>, data: &EncodedDataset, rows: &[usize], reg: RegressionLoss) -> Result<Evaluation> {
    if rows.is_empty() {
        return Err(Error::NoData("evaluation rows"));
    }
    let batch = data.gather(rows);
    let pred: Vec<f64> = model.predict_indices(&batch.indices)?.data().iter().map(|v| v.as_f64()).collect();
    let loss = loss_value(model.task(), reg, &pred, &batch.targets, &batch.weights)?;
    let metric = metric_value(data, rows, &pred)?;
    Ok(Evaluation {
        loss,
        metric,
        predictions: pred,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }
}

/// Patience rule: training stops once `patience` epochs have passed without
/// a strictly lower validation loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
        }
    }

    /// Records epoch `epoch`'s loss; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            true
        } else {
            false
        }
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        epoch - self.best_epoch >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

/// One optimizer step on `rows`; returns the batch loss.
fn train_step<T: Real>(
    model: &mut Model<T>,
    opt: &mut Rmsprop<T>,
    data: &EncodedDataset,
    rows: &[usize],
    reg: RegressionLoss,
) -> Result<f64> {
    let batch = data.gather(rows);
    let conv = |v: &[f64]| -> Vec<T> { v.iter().map(|&x| T::from_f64(x)).collect() };
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let y = model.forward(&mut g, &vars, &batch.indices, batch.len())?;
    let loss = if model.task().is_classification() {
        g.bce(y, &conv(&batch.targets), &conv(&batch.weights))?
    } else {
        match reg {
            RegressionLoss::Mae => g.mae(y, &conv(&batch.targets))?,
            RegressionLoss::Mse => g.mse(y, &conv(&batch.targets))?,
        }
    };
    let value = g.value(loss).item().as_f64();
    if !value.is_finite() {
        return Ok(value);
    }
    let mut grads = g.backward(loss);
    let grads: Vec<Tensor<T>> = vars
        .iter()
        .zip(model.params().iter())
        .map(|(&v, p)| grads.take_or_zeros(v, p.value.shape()))
        .collect();
    opt.step(model.params_mut(), &grads)?;
    Ok(value)
}

/// Trains `model` on `fold.train`, monitoring `fold.validation`, and leaves
/// it holding the weights of the best validation epoch.
///
/// `progress` sees every epoch as it completes.
pub fn train<T: Real>(
    model: &mut Model<T>,
    fold: &ResampledFold,
    data: &EncodedDataset,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if fold.train.is_empty() || fold.validation.is_empty() {
        return Err(Error::NoData("training or validation rows"));
    }
    let mut opt = Rmsprop::new(RmspropConfig {
        learning_rate: cfg.learning_rate,
        rho: cfg.rho,
        epsilon: cfg.epsilon,
    });
    let mut rng = seed::rng(cfg.seed);
    let mut order = fold.train.clone();
    let mut stop = EarlyStopping::new(cfg.patience);
    let mut best: ParamStore<T> = model.params().clone();
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let loss = train_step(model, &mut opt, data, rows, cfg.regression_loss)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            total += loss * rows.len() as f64;
        }
        let val = evaluate(model, data, &fold.validation, cfg.regression_loss)?;
        if !val.loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        let rec = EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            val_loss: val.loss,
            val_metric: val.metric,
        };
        log::debug!(
            "epoch {} train {:.5} val {:.5} metric {:?}",
            epoch,
            rec.train_loss,
            rec.val_loss,
            rec.val_metric
        );
        progress(&rec);
        history.epochs.push(rec);
        if stop.observe(epoch, val.loss) {
            best = model.params().clone();
        }
        if stop.should_stop(epoch) {
            history.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    history.best_epoch = stop.best_epoch();
    model.params_mut().load_from(best)?;
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub val_loss: f64,
    pub val_metric: Option<f64>,
    pub test_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub arch: ArchClass,
    pub hyper_params: HyperParams,
    pub metric: MetricKind,
    /// AUC reports are macro-averaged over tasks.
    pub macro_averaged: bool,
    pub folds: Vec<FoldReport>,
    pub mean_val_metric: Option<f64>,
    /// Sample standard deviation across folds.
    pub std_val_metric: Option<f64>,
    pub mean_test_metric: Option<f64>,
}

pub struct CvOutcome<T> {
    pub report: CvReport,
    pub models: Vec<Model<T>>,
    pub histories: Vec<TrainHistory>,
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 {
        Some(libm::sqrt(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)))
    } else {
        None
    };
    (Some(m), s)
}

/// How [`run_cv`] builds each fold's model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPolicy {
    /// Hyperparameters must lie on the search grid.
    OnGrid,
    /// Any positive widths.
    OffGrid,
}

/// Trains one model per fold, each evaluated on its validation fold and on
/// the shared test set. `on_fold` sees every finished fold in order.
#[allow(clippy::too_many_arguments)]
pub fn run_cv<T: Real>(
    data: &EncodedDataset,
    splits: &Splits,
    arch: ArchClass,
    hp: HyperParams,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    master_seed: u64,
    grid: GridPolicy,
    mut on_fold: impl FnMut(usize, &Model<T>, &TrainHistory, &FoldReport),
) -> Result<CvOutcome<T>> {
    let task = *data.task();
    let mut folds = Vec::new();
    let mut models = Vec::new();
    let mut histories = Vec::new();
    for (k, fold) in splits.folds.iter().enumerate() {
        let init_seed = seed::derive(master_seed, seed::INIT, k as u64);
        let mut model = match grid {
            GridPolicy::OnGrid => Model::<T>::build(arch, hp, task, vocab.clone(), init_seed)?,
            GridPolicy::OffGrid => Model::<T>::build_off_grid(arch, hp, task, vocab.clone(), init_seed)?,
        };
        let fold_cfg = TrainConfig {
            seed: seed::derive(master_seed, seed::SHUFFLE, k as u64),
            ..*cfg
        };
        log::info!("fold {}: {} train rows, {} validation rows", k + 1, fold.train.len(), fold.validation.len());
        let history = train(&mut model, fold, data, &fold_cfg, |_| {})?;
        let val = evaluate(&model, data, &fold.validation, cfg.regression_loss)?;
        let test_metric = if splits.test.is_empty() {
            None
        } else {
            evaluate(&model, data, &splits.test, cfg.regression_loss)?.metric
        };
        let rep = FoldReport {
            fold: k,
            best_epoch: history.best_epoch,
            epochs_run: history.epochs.len(),
            stopped_early: history.stopped_early,
            val_loss: val.loss,
            val_metric: val.metric,
            test_metric,
        };
        log::info!("fold {}: best epoch {}, val metric {:?}, test metric {:?}", k + 1, rep.best_epoch, rep.val_metric, rep.test_metric);
        on_fold(k, &model, &history, &rep);
        folds.push(rep);
        models.push(model);
        histories.push(history);
    }
    let vals: Vec<f64> = folds.iter().filter_map(|f| f.val_metric).collect();
    let tests: Vec<f64> = folds.iter().filter_map(|f| f.test_metric).collect();
    let (mean_val_metric, std_val_metric) = mean_std(&vals);
    let report = CvReport {
        arch,
        hyper_params: hp,
        metric: MetricKind::for_task(&task),
        macro_averaged: task.is_classification() && task.n_outputs > 1,
        folds,
        mean_val_metric,
        std_val_metric,
        mean_test_metric: mean_std(&tests).0,
    };
    Ok(CvOutcome {
        report,
        models,
        histories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_rules() {
        let mut s = EarlyStopping::new(25);
        let mut stopped = None;
        for e in 1..=250 {
            s.observe(e, 1.0);
            if s.should_stop(e) {
                stopped = Some(e);
                break;
            }
        }
        assert_eq!(stopped, Some(26));
        assert_eq!(s.best_epoch(), 1);

        let mut s = EarlyStopping::new(25);
        for e in 1..=250 {
            s.observe(e, 1.0 / e as f64);
            assert!(!s.should_stop(e));
        }
        assert_eq!(s.best_epoch(), 250);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 300,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
