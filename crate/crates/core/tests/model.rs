use chemtext_core::codec::{Vocabulary, ENCODED_LEN};
use chemtext_core::model::{param_count, ArchClass, HyperParams, Model, TaskSpec, CONV_GRID, EM_GRID, RNN_GRID};
use chemtext_core::nn::{grad_check, Tensor};
use chemtext_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vocab() -> Vocabulary {
    Vocabulary::build(["CCO", "c1ccncc1", "ClC(Br)F", "O=C(O)c1ccccc1"]).unwrap()
}

fn hp_for(arch: ArchClass, em: usize, conv: usize, r1: usize, r2: usize) -> HyperParams {
    HyperParams {
        em_size: em,
        conv_filters: arch.has_conv().then_some(conv),
        rnn1_units: r1,
        rnn2_units: r2,
    }
}

/// Layer-by-layer tally: embedding table, optional conv kernel and bias,
/// two bidirectional recurrent layers (input, recurrent, bias blocks per
/// gate), dense head.
fn count_by_layers(arch: ArchClass, hp: &HyperParams, outputs: usize, vocab: usize) -> usize {
    let gates = match arch {
        ArchClass::Gru | ArchClass::CnnGru => 3,
        ArchClass::Lstm | ArchClass::CnnLstm => 4,
    };
    let mut total = vocab * hp.em_size;
    let mut width = hp.em_size;
    if let Some(f) = hp.conv_filters {
        total += 3 * width * f;
        total += f;
        width = f;
    }
    for h in [hp.rnn1_units, hp.rnn2_units] {
        for _direction in 0..2 {
            for _gate in 0..gates {
                total += width * h + h * h + h;
            }
        }
        width = 2 * h;
    }
    total + width * outputs + outputs
}

#[test]
fn param_count_matches_layer_tally_on_grid_points() {
    let v = vocab();
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for arch in ArchClass::ALL {
        for _ in 0..10 {
            let hp = hp_for(
                arch,
                EM_GRID.value(r.gen_range(0..EM_GRID.len())),
                CONV_GRID.value(r.gen_range(0..CONV_GRID.len())),
                RNN_GRID.value(r.gen_range(0..RNN_GRID.len())),
                RNN_GRID.value(r.gen_range(0..RNN_GRID.len())),
            );
            for task in [TaskSpec::regression(), TaskSpec::classification(3)] {
                let want = count_by_layers(arch, &hp, task.n_outputs, v.size());
                assert_eq!(param_count(arch, &hp, &task, v.size()), want, "{arch} {hp:?}");
            }
        }
        // instantiate one small point per class to tie the formula to real tensors
        let hp = hp_for(arch, 10, 4, 8, 8);
        let m = Model::<f32>::build(arch, hp, TaskSpec::regression(), v.clone(), 1).unwrap();
        assert_eq!(m.param_count(), count_by_layers(arch, &hp, 1, v.size()));
    }
}

#[test]
fn best_reported_design_size() {
    // em 50, conv 192, rnn 224 + 384 on a one-output head
    let hp = hp_for(ArchClass::CnnGru, 50, 192, 224, 384);
    let n = param_count(ArchClass::CnnGru, &hp, &TaskSpec::regression(), 30);
    assert_eq!(n, count_by_layers(ArchClass::CnnGru, &hp, 1, 30));
}

#[test]
fn build_rejects_off_grid_and_mismatched_shapes() {
    let v = vocab();
    let off = hp_for(ArchClass::Gru, 32, 0, 32, 32);
    assert!(matches!(
        Model::<f64>::build(ArchClass::Gru, off, TaskSpec::regression(), v.clone(), 0),
        Err(Error::HyperParams(_))
    ));
    assert!(Model::<f64>::build_off_grid(ArchClass::Gru, off, TaskSpec::regression(), v.clone(), 0).is_ok());
    let no_conv = hp_for(ArchClass::Gru, 10, 0, 8, 8);
    assert!(Model::<f64>::build(ArchClass::CnnGru, no_conv, TaskSpec::regression(), v, 0).is_err());
}

#[test]
fn micro_models_pass_grad_check() {
    let v = vocab();
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let (batch, len) = (2, 5);
    let indices: Vec<u32> = (0..batch * len).map(|_| r.gen_range(0..v.size() as u32)).collect();
    for arch in ArchClass::ALL {
        for task in [TaskSpec::regression(), TaskSpec::classification(2)] {
            let hp = hp_for(arch, 3, 3, 2, 2);
            let model = Model::<f64>::build_off_grid(arch, hp, task, v.clone(), 5).unwrap();
            let inputs: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
            let targets: Vec<f64> = (0..batch * task.n_outputs).map(|i| (i % 2) as f64).collect();
            let weights = vec![1.0; targets.len()];
            let err = grad_check(&inputs, |g, vars| {
                let y = model.forward(g, vars, &indices, batch)?;
                if task.is_classification() {
                    g.bce(y, &targets, &weights)
                } else {
                    g.mse(y, &targets)
                }
            })
            .unwrap();
            assert!(err < 1e-3, "{arch} {:?}: {err:e}", task.task_type);
        }
    }
}

#[test]
fn batch_prediction_equals_single_prediction() {
    let v = vocab();
    let smiles = ["CCO", "c1ccncc1", "ClC(Br)F", "O=C(O)c1ccccc1", "CC", "OCCO"];
    let enc: Vec<_> = smiles.iter().map(|s| v.encode(s).unwrap()).collect();
    for arch in ArchClass::ALL {
        let m = Model::<f64>::build(arch, hp_for(arch, 10, 8, 8, 16), TaskSpec::classification(2), v.clone(), 3).unwrap();
        let all = m.predict(&enc).unwrap();
        assert_eq!(all.shape(), &[smiles.len(), 2]);
        for (i, e) in enc.iter().enumerate() {
            let one = m.predict(std::slice::from_ref(e)).unwrap();
            for k in 0..2 {
                assert!((one.data()[k] - all.data()[i * 2 + k]).abs() < 1e-12);
            }
        }
        assert!(all.data().iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn predict_rejects_foreign_vocabulary() {
    let v = vocab();
    let other = Vocabulary::build(["CCN"]).unwrap();
    let m = Model::<f32>::build(ArchClass::Gru, hp_for(ArchClass::Gru, 10, 0, 8, 8), TaskSpec::regression(), v, 0).unwrap();
    let e = other.encode("CCN").unwrap();
    assert!(matches!(m.predict(&[e]), Err(Error::VocabMismatch(_))));
    assert!(m.predict_indices(&[0; ENCODED_LEN - 1]).is_err());
}

#[test]
fn same_seed_same_weights_and_casts_round_trip() {
    let v = vocab();
    let hp = hp_for(ArchClass::CnnLstm, 20, 8, 16, 8);
    let a = Model::<f64>::build(ArchClass::CnnLstm, hp, TaskSpec::regression(), v.clone(), 42).unwrap();
    let b = Model::<f64>::build(ArchClass::CnnLstm, hp, TaskSpec::regression(), v.clone(), 42).unwrap();
    let c = Model::<f64>::build(ArchClass::CnnLstm, hp, TaskSpec::regression(), v, 43).unwrap();
    assert_eq!(a.params().fingerprint(), b.params().fingerprint());
    assert_ne!(a.params().fingerprint(), c.params().fingerprint());
    let back: Model<f64> = a.cast::<f32>().cast();
    let diff = a
        .params()
        .iter()
        .zip(back.params().iter())
        .flat_map(|(p, q)| p.value.data().iter().zip(q.value.data()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    assert!(diff < 1e-6);
}
