use chemtext::checkpoint;
use chemtext::container::{self, decode_explainer, decode_model, encode_explainer, encode_model};
use chemtext::vocab_file;
use chemtext::FormatError;
use chemtext_core::codec::Vocabulary;
use chemtext_core::explain::{compute_mask, ExplainerConfig, ExplainerNet};
use chemtext_core::model::{ArchClass, HyperParams, Model, TaskSpec};
use chemtext_core::nn::Real;
use proptest::prelude::*;

const SMILES: [&str; 6] = ["c1ccncc1", "CCO", "ClC(Cl)Cl", "O=Cc1ccco1", "N#CC(Br)=C/F", "[Na+].[O-]S"];

fn model<T: Real>(arch: ArchClass, seed: u64) -> Model<T> {
    let vocab = Vocabulary::build(SMILES).unwrap();
    let hp = HyperParams {
        em_size: 5,
        conv_filters: arch.has_conv().then_some(4),
        rnn1_units: 6,
        rnn2_units: 3,
    };
    let task = if seed.is_multiple_of(2) { TaskSpec::regression() } else { TaskSpec::classification(2) };
    Model::build_off_grid(arch, hp, task, vocab, seed).unwrap()
}

fn predictions<T: Real>(m: &Model<T>) -> Vec<T> {
    let batch: Vec<_> = SMILES.iter().map(|s| m.vocab().encode(s).unwrap()).collect();
    m.predict(&batch).unwrap().into_data()
}

fn bits<T: Real>(v: &[T]) -> Vec<u64> {
    v.iter().map(|x| x.as_f64().to_bits()).collect()
}

#[test]
fn saved_models_predict_bit_identically() {
    for (i, arch) in ArchClass::ALL.into_iter().enumerate() {
        for seed in [i as u64 * 2, i as u64 * 2 + 1] {
            let m32 = model::<f32>(arch, seed);
            let (back, meta) = decode_model::<f32>(&encode_model(&m32, &["a".into()])).unwrap();
            assert_eq!(back, m32);
            assert_eq!(meta.precision, 32);
            assert_eq!(bits(&predictions(&back)), bits(&predictions(&m32)), "{arch} f32");

            let m64 = model::<f64>(arch, seed);
            let (back, meta) = decode_model::<f64>(&encode_model(&m64, &[])).unwrap();
            assert_eq!(back.params().fingerprint(), m64.params().fingerprint());
            assert_eq!(meta.precision, 64);
            assert_eq!(bits(&predictions(&back)), bits(&predictions(&m64)), "{arch} f64");
        }
    }
}

#[test]
fn a_32_bit_checkpoint_reloads_at_64_bits() {
    for arch in ArchClass::ALL {
        let m = model::<f32>(arch, 4);
        let (wide, _) = decode_model::<f64>(&encode_model(&m, &[])).unwrap();
        for (a, b) in predictions(&m).iter().zip(predictions(&wide)) {
            assert!((*a as f64 - b).abs() < 1e-6, "{arch}: {a} vs {b}");
        }
    }
}

#[test]
fn files_on_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = model::<f32>(ArchClass::CnnLstm, 6);
    let path = dir.path().join("m.model");
    container::save_model(&m, &["y".into()], &path).unwrap();
    let (back, meta) = container::load_model::<f32>(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(meta.task_names, vec!["y".to_string()]);
    assert_eq!(meta.vocabulary_sha256, container::vocab_hash(m.vocab()));

    let vpath = dir.path().join("vocab.tsv");
    vocab_file::save(m.vocab(), &vpath).unwrap();
    assert_eq!(&vocab_file::load(&vpath).unwrap(), m.vocab());

    let ppath = dir.path().join("p.ckpt");
    checkpoint::save(m.params(), &ppath).unwrap();
    assert_eq!(&checkpoint::load::<f32>(&ppath).unwrap(), m.params());
}

#[test]
fn damaged_checkpoints_are_rejected_distinctly() {
    let m = model::<f32>(ArchClass::Gru, 0);
    let good = checkpoint::encode(m.params());
    assert_eq!(&good[..8], b"CHTXPARM");

    let mut wrong_version = good.clone();
    wrong_version[8] = 2;
    assert_eq!(
        checkpoint::decode::<f32>(&wrong_version),
        Err(FormatError::Version { found: 2, supported: 1 })
    );

    let mut flipped = good.clone();
    let n = flipped.len();
    flipped[n - 20] ^= 0x40;
    assert!(matches!(checkpoint::decode::<f32>(&flipped), Err(FormatError::Checksum { .. })));

    let mut not_ours = good.clone();
    not_ours[0] = b'X';
    assert!(matches!(checkpoint::decode::<f32>(&not_ours), Err(FormatError::BadMagic { .. })));

    let mut padded = good.clone();
    padded.push(0);
    assert!(checkpoint::decode::<f32>(&padded).is_err());

    let model_bytes = encode_model(&m, &[]);
    let mut tampered = model_bytes.clone();
    // first character of the stored vocabulary list inside the JSON block
    let at = tampered.windows(14).position(|w| w == b"\"vocabulary\":[").unwrap() + 15;
    tampered[at] = b'Q';
    assert!(decode_model::<f32>(&tampered).is_err());
    assert!(decode_model::<f32>(&good).is_err(), "a bare checkpoint is not a model file");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_truncation_is_reported(cut in 0.0f64..1.0) {
        let m = model::<f32>(ArchClass::CnnGru, 2);
        let bytes = encode_model(&m, &[]);
        let len = ((bytes.len() - 1) as f64 * cut) as usize;
        let r = decode_model::<f32>(&bytes[..len]);
        prop_assert!(r.is_err());
        if len >= 12 {
            prop_assert!(matches!(r, Err(FormatError::Truncated(_))), "{:?}", r.err());
        }
    }

    #[test]
    fn vocabulary_files_round_trip(words in proptest::collection::vec("[ -~]{1,12}", 1..20)) {
        let v = Vocabulary::build(&words).unwrap();
        let text = vocab_file::render(&v);
        prop_assert_eq!(text.lines().count(), v.size());
        prop_assert_eq!(vocab_file::parse(&text).unwrap(), v);
    }
}

#[test]
fn explainers_round_trip_with_their_masks() {
    let base = model::<f64>(ArchClass::CnnGru, 0);
    let cfg = ExplainerConfig { width: 3, blocks: 2, ..Default::default() };
    let net = ExplainerNet::<f64>::new(cfg, 5).unwrap();
    let fp = base.params().fingerprint();
    let (back, meta) = decode_explainer::<f64>(&encode_explainer(&net, fp)).unwrap();
    assert_eq!(meta.base_fingerprint, fp);
    assert_eq!(back, net);
    for s in SMILES {
        assert_eq!(compute_mask(&back, &base, s).unwrap(), compute_mask(&net, &base, s).unwrap());
    }
}
