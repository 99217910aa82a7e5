use chemtext_core::codec::Vocabulary;
use chemtext_core::data::{make_splits, Dataset, Record, SplitPlan};
use chemtext_core::model::{ArchClass, HyperParams, Model, TaskSpec};
use chemtext_core::nn::{Graph, Tensor};
use chemtext_core::train::{
    evaluate, loss_value, run_cv, train, EarlyStopping, EncodedDataset, GridPolicy, RegressionLoss, TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Target is the number of oxygens, so a recurrent model can count it.
fn counting_set(n: usize, seed: u64) -> Dataset {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let len = r.gen_range(3..10);
            let mut s: String = (0..len).map(|_| if r.gen_bool(0.3) { 'O' } else { 'C' }).collect();
            s.push_str(&"N".repeat(i % 7 + 1));
            let y = s.chars().filter(|&c| c == 'O').count() as f64;
            Record { smiles: s, labels: vec![Some(y)] }
        })
        .collect();
    Dataset::new("count", TaskSpec::regression(), vec!["o".into()], records).unwrap()
}

fn tiny() -> HyperParams {
    HyperParams { em_size: 4, conv_filters: None, rnn1_units: 4, rnn2_units: 4 }
}

fn cfg() -> TrainConfig {
    TrainConfig { max_epochs: 12, patience: 4, learning_rate: 1e-2, ..Default::default() }
}

#[test]
fn training_lowers_validation_loss_and_restores_best_weights() {
    let ds = counting_set(120, 1);
    let vocab = Vocabulary::build(ds.records.iter().map(|r| r.smiles.as_str())).unwrap();
    let data = EncodedDataset::new(&ds, &vocab).unwrap();
    let plan = SplitPlan { n_folds: 2, ..SplitPlan::default_for(&ds.task, 3) };
    let splits = make_splits(&ds, &plan).unwrap();
    let fold = &splits.folds[0];
    let mut model = Model::<f64>::build_off_grid(ArchClass::Gru, tiny(), ds.task, vocab, 5).unwrap();
    let before = evaluate(&model, &data, &fold.validation, RegressionLoss::Mae).unwrap().loss;
    let h = train(&mut model, fold, &data, &cfg(), |_| {}).unwrap();
    let best = h.best().unwrap();
    assert!(best.val_loss < before, "{} !< {}", best.val_loss, before);
    assert_eq!(h.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(), (1..=h.epochs.len()).collect::<Vec<_>>());
    let after = evaluate(&model, &data, &fold.validation, RegressionLoss::Mae).unwrap();
    assert_eq!(after.loss, best.val_loss);
    assert_eq!(after.metric, best.val_metric);
}

#[test]
fn cross_validation_is_deterministic_at_64_bit() {
    let ds = counting_set(100, 2);
    let vocab = Vocabulary::build(ds.records.iter().map(|r| r.smiles.as_str())).unwrap();
    let data = EncodedDataset::new(&ds, &vocab).unwrap();
    let plan = SplitPlan { n_folds: 2, ..SplitPlan::default_for(&ds.task, 9) };
    let splits = make_splits(&ds, &plan).unwrap();
    let c = TrainConfig { max_epochs: 4, patience: 2, ..cfg() };
    let go = || {
        run_cv::<f64>(&data, &splits, ArchClass::Gru, tiny(), &vocab, &c, 77, GridPolicy::OffGrid, |_, _, _, _| {})
            .unwrap()
    };
    let (a, b) = (go(), go());
    assert_eq!(a.report, b.report);
    assert_eq!(a.histories, b.histories);
    assert_eq!(a.report.folds.len(), 2);
    let vals: Vec<f64> = a.report.folds.iter().map(|f| f.val_metric.unwrap()).collect();
    let mean = (vals[0] + vals[1]) / 2.0;
    let std = (((vals[0] - mean).powi(2) + (vals[1] - mean).powi(2)) / 1.0).sqrt();
    assert!((a.report.mean_val_metric.unwrap() - mean).abs() < 1e-15);
    assert!((a.report.std_val_metric.unwrap() - std).abs() < 1e-15);
    // off-grid widths are refused under the grid policy
    assert!(run_cv::<f64>(&data, &splits, ArchClass::Gru, tiny(), &vocab, &c, 77, GridPolicy::OnGrid, |_, _, _, _| {}).is_err());
}

#[test]
fn direct_loss_agrees_with_graph_loss() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = r.gen_range(1..40);
        let pred: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
        let reg_pred: Vec<f64> = (0..n).map(|_| r.gen_range(-5.0..5.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| if r.gen() { 1.0 } else { 0.0 }).collect();
        let mut w: Vec<f64> = (0..n).map(|_| if r.gen_bool(0.8) { 1.0 } else { 0.0 }).collect();
        w[0] = 1.0;
        let mut g = Graph::new();
        let pv = g.leaf(Tensor::new(vec![n, 1], pred.clone()).unwrap(), false);
        let rv = g.leaf(Tensor::new(vec![n, 1], reg_pred.clone()).unwrap(), false);
        let bce = g.bce(pv, &t, &w).unwrap();
        let mae = g.mae(rv, &t).unwrap();
        let mse = g.mse(rv, &t).unwrap();
        let ones = vec![1.0; n];
        let cls = TaskSpec::classification(1);
        let reg = TaskSpec::regression();
        assert!((loss_value(&cls, RegressionLoss::Mae, &pred, &t, &w).unwrap() - g.value(bce).item()).abs() < 1e-12);
        assert!((loss_value(&reg, RegressionLoss::Mae, &reg_pred, &t, &ones).unwrap() - g.value(mae).item()).abs() < 1e-12);
        assert!((loss_value(&reg, RegressionLoss::Mse, &reg_pred, &t, &ones).unwrap() - g.value(mse).item()).abs() < 1e-12);
    }
}

/// Replays a loss sequence under the patience rule; returns (stop epoch,
/// best epoch).
fn patience_oracle(losses: &[f64], patience: usize) -> (usize, usize) {
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    for (i, &l) in losses.iter().enumerate() {
        let epoch = i + 1;
        if l < best {
            best = l;
            best_epoch = epoch;
        }
        if epoch - best_epoch >= patience {
            return (epoch, best_epoch);
        }
    }
    (losses.len(), best_epoch)
}

proptest! {
    #[test]
    fn early_stopping_follows_the_patience_rule(
        losses in proptest::collection::vec(0u8..20, 1..80),
        patience in 1usize..15,
    ) {
        let losses: Vec<f64> = losses.into_iter().map(f64::from).collect();
        let mut es = EarlyStopping::new(patience);
        let mut stopped = losses.len();
        for (i, &l) in losses.iter().enumerate() {
            es.observe(i + 1, l);
            if es.should_stop(i + 1) {
                stopped = i + 1;
                break;
            }
        }
        prop_assert_eq!((stopped, es.best_epoch()), patience_oracle(&losses, patience));
    }
}
