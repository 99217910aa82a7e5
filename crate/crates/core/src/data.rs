//! Labeled records, the fixed test split, cross-validation folds, and
//! minority oversampling.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codec::MAX_SMILES_LEN;
use crate::model::{TaskSpec, TaskType};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub smiles: String,
    /// One entry per task; `None` marks a missing label.
    pub labels: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub task: TaskSpec,
    pub task_names: Vec<String>,
    pub records: Vec<Record>,
}

impl Dataset {
    /// Checks label arity, string lengths, and binary labels for
    /// classification.
    pub fn new(name: impl Into<String>, task: TaskSpec, task_names: Vec<String>, records: Vec<Record>) -> Result<Self> {
        task.validate()?;
        if task_names.len() != task.n_outputs {
            return Err(Error::Config(format!(
                "{} task names for {} outputs",
                task_names.len(),
                task.n_outputs
            )));
        }
        for (i, r) in records.iter().enumerate() {
            if r.labels.len() != task.n_outputs {
                return Err(Error::Config(format!("record {} has {} labels", i, r.labels.len())));
            }
            let len = r.smiles.chars().count();
            if len == 0 {
                return Err(Error::EmptySmiles);
            }
            if len > MAX_SMILES_LEN {
                return Err(Error::TooLong {
                    len,
                    max: MAX_SMILES_LEN,
                });
            }
            if task.is_classification() {
                if let Some(v) = r.labels.iter().flatten().find(|v| **v != 0.0 && **v != 1.0) {
                    return Err(Error::Config(format!("record {} has non-binary label {}", i, v)));
                }
            } else if r.labels[0].is_none() {
                return Err(Error::Config(format!("record {} has no regression target", i)));
            }
        }
        Ok(Self {
            name: name.into(),
            task,
            task_names,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Keeps the first record of each distinct SMILES string.
    pub fn unique_indices(&self) -> Vec<usize> {
        let mut seen = BTreeSet::new();
        (0..self.records.len())
            .filter(|&i| seen.insert(self.records[i].smiles.as_str()))
            .collect()
    }

    /// Column `task` as booleans (classification only).
    fn binary_column(&self, task: usize) -> Vec<Option<bool>> {
        self.records
            .iter()
            .map(|r| r.labels[task].map(|v| v == 1.0))
            .collect()
    }

    /// The classification task whose positive/negative counts are most
    /// unequal, among tasks with both classes present.
    pub fn most_imbalanced_task(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for t in 0..self.task.n_outputs {
            let col = self.binary_column(t);
            let pos = col.iter().filter(|l| **l == Some(true)).count();
            let neg = col.iter().filter(|l| **l == Some(false)).count();
            if pos == 0 || neg == 0 {
                continue;
            }
            let ratio = pos.max(neg) as f64 / pos.min(neg) as f64;
            if best.is_none_or(|(_, r)| ratio > r) {
                best = Some((t, ratio));
            }
        }
        best.map(|(t, _)| t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test_fraction: f64,
    pub n_folds: usize,
    pub seed: u64,
    /// Task used for stratification and the oversampling ratio; `None`
    /// picks the most imbalanced one.
    #[serde(default)]
    pub primary_task: Option<usize>,
    /// Oversample minority classes in training folds (classification only).
    #[serde(default = "yes")]
    pub oversample: bool,
}

fn yes() -> bool {
    true
}

impl SplitPlan {
    pub fn new(test_fraction: f64, seed: u64) -> Self {
        Self {
            test_fraction,
            n_folds: 5,
            seed,
            primary_task: None,
            oversample: true,
        }
    }

    /// 1/6 for classification sets, 1/10 for regression sets.
    pub fn default_for(task: &TaskSpec, seed: u64) -> Self {
        let fraction = match task.task_type {
            TaskType::Classification => 1.0 / 6.0,
            TaskType::Regression => 1.0 / 10.0,
        };
        Self::new(fraction, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test fraction {} not in (0, 1)", self.test_fraction)));
        }
        if self.n_folds < 2 {
            return Err(Error::Config("need at least 2 folds".into()));
        }
        Ok(())
    }
}

/// Training and validation indices for one fold. Training indices form a
/// multiset: the first `originals` entries are distinct records, the rest
/// are oversampled copies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampledFold {
    pub train: Vec<usize>,
    pub originals: usize,
    /// For each copy `train[originals + k]`, the position in `train` of the
    /// original it duplicates.
    pub duplicate_of: Vec<usize>,
    pub validation: Vec<usize>,
}

impl ResampledFold {
    pub fn without_resampling(train: Vec<usize>, validation: Vec<usize>) -> Self {
        Self {
            originals: train.len(),
            train,
            duplicate_of: Vec::new(),
            validation,
        }
    }

    pub fn train_originals(&self) -> &[usize] {
        &self.train[..self.originals]
    }

    pub fn duplicates(&self) -> &[usize] {
        &self.train[self.originals..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub plan: SplitPlan,
    /// Stratification / oversampling task actually used.
    pub primary_task: Option<usize>,
    pub test: Vec<usize>,
    pub folds: Vec<ResampledFold>,
}

/// Largest-remainder apportionment of `total` across groups of `sizes`.
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return alloc::vec![0; sizes.len()];
    }
    let mut out: Vec<usize> = sizes.iter().map(|&s| s * total / n).collect();
    let mut rem: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(i, &s)| ((s * total) % n, i)).collect();
    // larger remainders first, earlier groups win ties
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - out.iter().sum::<usize>();
    for &(_, i) in &rem {
        if left == 0 {
            break;
        }
        if out[i] < sizes[i] {
            out[i] += 1;
            left -= 1;
        }
    }
    out
}

/// Builds the fixed test set and `n_folds` cross-validation folds.
///
/// Duplicate SMILES are collapsed first. Classification data is stratified
/// on the primary task (missing labels form their own stratum) and, when the
/// plan asks for it, each fold's training part is oversampled.
pub fn make_splits(dataset: &Dataset, plan: &SplitPlan) -> Result<Splits> {
    plan.validate()?;
    let unique = dataset.unique_indices();
    let n = unique.len();
    if n < 10 * plan.n_folds {
        return Err(Error::Config(format!(
            "{} distinct records, need at least {}",
            n,
            10 * plan.n_folds
        )));
    }
    let classification = dataset.task.is_classification();
    let primary = if classification {
        let t = match plan.primary_task {
            Some(t) if t < dataset.task.n_outputs => t,
            Some(t) => return Err(Error::Config(format!("primary task {} out of range", t))),
            None => dataset.most_imbalanced_task().ok_or(Error::SingleClass)?,
        };
        Some(t)
    } else {
        None
    };
    let labels: Vec<Option<bool>> = match primary {
        Some(t) => dataset.binary_column(t),
        None => Vec::new(),
    };

    // strata: 0 = negative, 1 = positive, 2 = missing; regression is one stratum
    let mut strata: Vec<Vec<usize>> = alloc::vec![Vec::new(); if classification { 3 } else { 1 }];
    for &i in &unique {
        let s = match labels.get(i) {
            Some(Some(false)) => 0,
            Some(Some(true)) => 1,
            Some(None) => 2,
            None => 0,
        };
        strata[s].push(i);
    }
    if classification && (strata[0].is_empty() || strata[1].is_empty()) {
        return Err(Error::SingleClass);
    }
    let mut rng = seed::derived_rng(plan.seed, seed::SPLIT, 0);
    for s in &mut strata {
        s.shuffle(&mut rng);
    }

    let test_n = libm::round(n as f64 * plan.test_fraction) as usize;
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let quota = apportion(&sizes, test_n);
    let mut test = Vec::with_capacity(test_n);
    let mut rest = Vec::with_capacity(n - test_n);
    for (s, &q) in strata.iter().zip(&quota) {
        test.extend_from_slice(&s[..q]);
        rest.extend_from_slice(&s[q..]);
    }

    // Dealing the stratum-ordered remainder round-robin keeps every fold's
    // class mix within one record of the overall mix.
    let k = plan.n_folds;
    let mut fold_members: Vec<Vec<usize>> = alloc::vec![Vec::new(); k];
    for (pos, &i) in rest.iter().enumerate() {
        fold_members[pos % k].push(i);
    }

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let validation = fold_members[f].clone();
        let train: Vec<usize> = (0..k)
            .filter(|&o| o != f)
            .flat_map(|o| fold_members[o].iter().copied())
            .collect();
        let fold = if classification && plan.oversample {
            oversample_minority(train, validation, &labels)?
        } else {
            ResampledFold::without_resampling(train, validation)
        };
        folds.push(fold);
    }
    Ok(Splits {
        plan: *plan,
        primary_task: primary,
        test,
        folds,
    })
}

/// Appends `round(majority / minority) - 1` extra copies of every minority
/// training record. `labels` is indexed by record; unlabeled records count
/// toward neither class and are never copied.
pub fn oversample_minority(train: Vec<usize>, validation: Vec<usize>, labels: &[Option<bool>]) -> Result<ResampledFold> {
    let label = |i: usize| labels.get(i).copied().flatten();
    let pos = train.iter().filter(|&&i| label(i) == Some(true)).count();
    let neg = train.iter().filter(|&&i| label(i) == Some(false)).count();
    if pos == 0 {
        return Err(Error::EmptyClass(1));
    }
    if neg == 0 {
        return Err(Error::EmptyClass(0));
    }
    let (minority, maj, min) = if pos < neg { (true, neg, pos) } else { (false, pos, neg) };
    let ratio = libm::round(maj as f64 / min as f64) as usize;
    let mut fold = ResampledFold::without_resampling(train, validation);
    if ratio <= 1 {
        return Ok(fold);
    }
    let minority_positions: Vec<usize> = (0..fold.originals)
        .filter(|&p| label(fold.train[p]) == Some(minority))
        .collect();
    for _ in 1..ratio {
        for &p in &minority_positions {
            fold.train.push(fold.train[p]);
            fold.duplicate_of.push(p);
        }
    }
    Ok(fold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(&[90, 10], 10), alloc::vec![9, 1]);
        assert_eq!(apportion(&[5, 5, 0], 3), alloc::vec![2, 1, 0]);
        let a = apportion(&[333, 667, 17], 170);
        assert_eq!(a.iter().sum::<usize>(), 170);
    }

    #[test]
    fn oversampling_counts() {
        let labels: Vec<Option<bool>> = (0..100).map(|i| Some(i < 10)).collect();
        let f = oversample_minority((0..100).collect(), Vec::new(), &labels).unwrap();
        let pos = f.train.iter().filter(|&&i| i < 10).count();
        assert_eq!(pos, 90);
        assert_eq!(f.train.len(), 180);
        assert!(f.duplicate_of.iter().all(|&p| p < f.originals));

        let labels: Vec<Option<bool>> = (0..100).map(|i| Some(i < 50)).collect();
        let f = oversample_minority((0..100).collect(), Vec::new(), &labels).unwrap();
        assert_eq!(f.train.len(), 100);

        let labels: Vec<Option<bool>> = (0..10).map(|_| Some(true)).collect();
        assert_eq!(
            oversample_minority((0..10).collect(), Vec::new(), &labels),
            Err(Error::EmptyClass(0))
        );
    }
}
