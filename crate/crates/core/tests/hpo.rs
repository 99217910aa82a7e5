use std::collections::{BTreeSet, HashSet};

use chemtext_core::codec::Vocabulary;
use chemtext_core::data::{Dataset, Record, SplitPlan};
use chemtext_core::hpo::{
    run_search, scatter, seed_trials, val_test_correlation, Direction, SearchConfig, SearchSpace, TrialOrigin,
    TrialOutcome, TrialStatus, TrainingObjective,
};
use chemtext_core::model::{ArchClass, GridRange, HyperParams, TaskSpec, RNN_GRID};
use chemtext_core::train::{EncodedDataset, TrainConfig};
use chemtext_core::Error;

fn quadratic(hp: &HyperParams) -> f64 {
    let c = hp.conv_filters.unwrap_or(100) as f64;
    ((hp.em_size as f64 - 30.0) / 50.0).powi(2)
        + ((c - 100.0) / 188.0).powi(2)
        + ((hp.rnn1_units as f64 - 200.0) / 376.0).powi(2)
        + ((hp.rnn2_units as f64 - 304.0) / 376.0).powi(2)
}

fn mock(hp: &HyperParams, _id: usize) -> chemtext_core::Result<TrialOutcome> {
    Ok(TrialOutcome { validation: quadratic(hp), test: Some(quadratic(hp) + 0.01), wall_seconds: 0.0 })
}

#[test]
fn one_dimensional_search_finds_the_minimum() {
    let space = SearchSpace {
        arch: ArchClass::Gru,
        em: GridRange::new(10, 10, 10),
        conv: None,
        rnn1: RNN_GRID,
        rnn2: GridRange::new(8, 8, 8),
    };
    assert_eq!(space.cardinality(), 48);
    let mut hits = 0;
    for seed in 0..20 {
        let cfg = SearchConfig { n_trials: 10, seed, direction: Direction::Minimize };
        let obj = |hp: &HyperParams, _: usize| {
            Ok(TrialOutcome { validation: (hp.rnn1_units as f64 - 200.0).powi(2), test: None, wall_seconds: 0.0 })
        };
        let report = run_search(&space, &cfg, vec![], obj, |_| {}).unwrap();
        let best = report.best_trial().unwrap().params.rnn1_units as i64;
        if (best - 200).abs() <= 8 {
            hits += 1;
        }
    }
    assert!(hits >= 18, "{hits}/20 within one grid step");
}

#[test]
fn seeds_come_first_then_unique_on_grid_suggestions() {
    let space = SearchSpace::for_arch(ArchClass::CnnGru);
    let cfg = SearchConfig { n_trials: 10, seed: 4, direction: Direction::Minimize };
    let report = run_search(&space, &cfg, vec![], mock, |_| {}).unwrap();
    let seeds = seed_trials(ArchClass::CnnGru);
    for (t, s) in report.trials.iter().zip(&seeds) {
        assert_eq!(t.origin, TrialOrigin::Seed);
        assert_eq!(&t.params, s);
    }
    let mut seen = HashSet::new();
    for t in &report.trials {
        assert!(space.contains(&t.params), "{:?} off grid", t.params);
        t.params.check_grid(ArchClass::CnnGru).unwrap();
        assert!(seen.insert(t.params), "duplicate {:?}", t.params);
    }
    assert!(report.trials[6..].iter().all(|t| t.origin == TrialOrigin::Suggested));
    let best = report.best_trial().unwrap();
    assert!(report.trials.iter().all(|t| t.objective.unwrap() >= best.objective.unwrap()));
}

#[test]
fn budget_of_six_is_exactly_the_seeds() {
    let space = SearchSpace::for_arch(ArchClass::Lstm);
    let cfg = SearchConfig { n_trials: 6, seed: 0, direction: Direction::Maximize };
    let report = run_search(&space, &cfg, vec![], mock, |_| {}).unwrap();
    let got: Vec<HyperParams> = report.trials.iter().map(|t| t.params).collect();
    assert_eq!(got, seed_trials(ArchClass::Lstm));
}

#[test]
fn resumed_search_matches_uninterrupted_search() {
    let space = SearchSpace::for_arch(ArchClass::Gru);
    let full = run_search(&space, &SearchConfig { n_trials: 11, seed: 8, direction: Direction::Minimize }, vec![], mock, |_| {})
        .unwrap();
    let part = run_search(&space, &SearchConfig { n_trials: 8, seed: 8, direction: Direction::Minimize }, vec![], mock, |_| {})
        .unwrap();
    let mut fresh = Vec::new();
    let resumed = run_search(
        &space,
        &SearchConfig { n_trials: 11, seed: 8, direction: Direction::Minimize },
        part.trials,
        mock,
        |t| fresh.push(t.id),
    )
    .unwrap();
    assert_eq!(fresh, vec![8, 9, 10]);
    assert_eq!(resumed, full);
}

#[test]
fn failed_trials_are_recorded_and_skipped() {
    let space = SearchSpace::for_arch(ArchClass::Gru);
    let cfg = SearchConfig { n_trials: 9, seed: 1, direction: Direction::Minimize };
    let obj = |hp: &HyperParams, id: usize| {
        if id % 3 == 1 {
            Err(Error::NonFinite("boom".into()))
        } else {
            mock(hp, id)
        }
    };
    let report = run_search(&space, &cfg, vec![], obj, |_| {}).unwrap();
    assert_eq!(report.trials.len(), 9);
    let failed: Vec<usize> =
        report.trials.iter().filter(|t| t.status == TrialStatus::Failed).map(|t| t.id).collect();
    assert_eq!(failed, vec![1, 4, 7]);
    assert!(report.best_trial().unwrap().status == TrialStatus::Completed);
    assert_eq!(scatter(&report.trials).len(), 6);
    assert!(val_test_correlation(&report.trials).unwrap() > 0.99);
}

#[test]
fn tiny_grid_is_exhausted_without_repeats() {
    let space = SearchSpace {
        arch: ArchClass::Gru,
        em: GridRange::new(10, 20, 10),
        conv: None,
        rnn1: GridRange::new(8, 16, 8),
        rnn2: GridRange::new(8, 8, 8),
    };
    let cfg = SearchConfig { n_trials: 10, seed: 0, direction: Direction::Minimize };
    let report = run_search(&space, &cfg, vec![], mock, |_| {}).unwrap();
    assert_eq!(report.trials.len(), 4);
}

fn toy_regression() -> Dataset {
    let records = (0..80)
        .map(|i| {
            let s = format!("{}{}", "C".repeat(i % 9 + 1), "O".repeat(i % 4));
            Record { smiles: format!("{s}N{i}"), labels: vec![Some((i % 4) as f64)] }
        })
        .collect();
    Dataset::new("toy", TaskSpec::regression(), vec!["y".into()], records).unwrap()
}

#[test]
fn training_objective_resplits_per_trial_and_never_touches_test() {
    let ds = toy_regression();
    let vocab = Vocabulary::build(ds.records.iter().map(|r| r.smiles.as_str())).unwrap();
    let data = EncodedDataset::new(&ds, &vocab).unwrap();
    let plan = SplitPlan { n_folds: 4, ..SplitPlan::default_for(&ds.task, 2) };
    let cfg = TrainConfig { max_epochs: 3, patience: 1, ..Default::default() };
    let obj = TrainingObjective::new(&ds, &data, &vocab, ArchClass::Gru, &plan, cfg, 5)
        .unwrap()
        .allow_off_grid(true);
    let test: BTreeSet<usize> = obj.test_rows().iter().copied().collect();
    assert_eq!(test.len(), 8);
    let a = obj.split_for(0).unwrap();
    let b = obj.split_for(1).unwrap();
    assert_eq!(a, obj.split_for(0).unwrap());
    assert_ne!(a.validation, b.validation);
    for f in [&a, &b] {
        assert!(f.train.iter().chain(&f.validation).all(|i| !test.contains(i)));
        assert_eq!(f.train.len() + f.validation.len(), 72);
        assert_eq!(f.validation.len(), 18);
    }
    let hp = HyperParams { em_size: 3, conv_filters: None, rnn1_units: 3, rnn2_units: 3 };
    let (v1, t1) = obj.evaluate::<f64>(&hp, 0).unwrap();
    let (v2, t2) = obj.evaluate::<f64>(&hp, 0).unwrap();
    assert!(v1.is_finite() && t1.is_some());
    assert_eq!((v1, t1), (v2, t2));
}
