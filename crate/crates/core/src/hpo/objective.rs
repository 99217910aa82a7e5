use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::codec::Vocabulary;
use crate::data::{make_splits, oversample_minority, Dataset, ResampledFold, SplitPlan};
use crate::model::{ArchClass, HyperParams, Model};
use crate::nn::Real;
use crate::seed;
use crate::train::{evaluate, train, EncodedDataset, TrainConfig};
use crate::Result;

const SEARCH_SPLIT: &str = "search-split";

/// Trains one model per design on a single train/validation split.
///
/// The test set is fixed once from the split plan; each trial re-draws its
/// validation part (one fold's worth) from the remaining records with a
/// trial-specific seed.
pub struct TrainingObjective<'a> {
    data: &'a EncodedDataset,
    vocab: &'a Vocabulary,
    arch: ArchClass,
    cfg: TrainConfig,
    master_seed: u64,
    test: Vec<usize>,
    pool: Vec<usize>,
    validation_fraction: f64,
    /// Primary-task labels by record for stratification and oversampling.
    labels: Option<Vec<Option<bool>>>,
    oversample: bool,
    off_grid: bool,
}

impl<'a> TrainingObjective<'a> {
    pub fn new(
        dataset: &Dataset,
        data: &'a EncodedDataset,
        vocab: &'a Vocabulary,
        arch: ArchClass,
        plan: &SplitPlan,
        cfg: TrainConfig,
        master_seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let splits = make_splits(dataset, plan)?;
        let mut pool: Vec<usize> = splits.folds[0].validation.clone();
        pool.extend_from_slice(splits.folds[0].train_originals());
        pool.sort_unstable();
        let labels = splits.primary_task.map(|t| {
            dataset
                .records
                .iter()
                .map(|r| r.labels[t].map(|v| v == 1.0))
                .collect()
        });
        Ok(Self {
            data,
            vocab,
            arch,
            cfg,
            master_seed,
            test: splits.test,
            pool,
            validation_fraction: 1.0 / plan.n_folds as f64,
            labels,
            oversample: plan.oversample,
            off_grid: false,
        })
    }

    /// Accept designs off the search grid (for reduced test budgets).
    pub fn allow_off_grid(mut self, yes: bool) -> Self {
        self.off_grid = yes;
        self
    }

    pub fn test_rows(&self) -> &[usize] {
        &self.test
    }

    /// Trial-specific train/validation split of the non-test pool,
    /// stratified on the primary task for classification.
    pub fn split_for(&self, trial: usize) -> Result<ResampledFold> {
        let mut rng = seed::derived_rng(self.master_seed, SEARCH_SPLIT, trial as u64);
        let groups: Vec<Vec<usize>> = match &self.labels {
            Some(l) => {
                let mut g = alloc::vec![Vec::new(); 3];
                for &i in &self.pool {
                    let k = match l[i] {
                        Some(false) => 0,
                        Some(true) => 1,
                        None => 2,
                    };
                    g[k].push(i);
                }
                g
            }
            None => alloc::vec![self.pool.clone()],
        };
        let mut train_rows = Vec::new();
        let mut val_rows = Vec::new();
        for mut g in groups {
            g.shuffle(&mut rng);
            let nv = libm::round(g.len() as f64 * self.validation_fraction) as usize;
            val_rows.extend_from_slice(&g[..nv]);
            train_rows.extend_from_slice(&g[nv..]);
        }
        match (&self.labels, self.oversample) {
            (Some(l), true) => oversample_minority(train_rows, val_rows, l),
            _ => Ok(ResampledFold::without_resampling(train_rows, val_rows)),
        }
    }

    /// Trains `hp` for trial `trial`; returns `(validation metric, test
    /// metric)`. Undefined metrics come back as NaN.
    pub fn evaluate<T: Real>(&self, hp: &HyperParams, trial: usize) -> Result<(f64, Option<f64>)> {
        let fold = self.split_for(trial)?;
        let task = *self.data.task();
        let init = seed::derive(self.master_seed, seed::INIT, 1_000_000 + trial as u64);
        let mut model = if self.off_grid {
            Model::<T>::build_off_grid(self.arch, *hp, task, self.vocab.clone(), init)?
        } else {
            Model::<T>::build(self.arch, *hp, task, self.vocab.clone(), init)?
        };
        let cfg = TrainConfig {
            seed: seed::derive(self.master_seed, seed::SHUFFLE, 1_000_000 + trial as u64),
            ..self.cfg
        };
        train(&mut model, &fold, self.data, &cfg, |_| {})?;
        let val = evaluate(&model, self.data, &fold.validation, cfg.regression_loss)?;
        let test = if self.test.is_empty() {
            None
        } else {
            evaluate(&model, self.data, &self.test, cfg.regression_loss)?.metric
        };
        Ok((val.metric.unwrap_or(f64::NAN), test))
    }
}
