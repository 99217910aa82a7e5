use std::fs;
use std::path::PathBuf;

use chemtext::dataset::{load_csv, Columns, DropReason};
use chemtext::Error;
use chemtext_core::model::TaskType;

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn cols(labels: &[&str]) -> Columns {
    Columns { smiles: "smiles".into(), labels: labels.iter().map(|s| s.to_string()).collect() }
}

#[test]
fn well_formed_file_loads_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "three.csv", "smiles,y\nCCO,-0.5\nc1ccccc1,-2.1\nClC(Cl)Cl,-1.2\n");
    let (ds, rep) = load_csv(&p, TaskType::Regression, &Columns::default()).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(rep.accepted, 3);
    assert_eq!(rep.dropped_total(), 0);
    assert_eq!(ds.name, "three");
    assert_eq!(ds.task_names, vec!["y".to_string()]);
    assert_eq!(ds.records[1].labels, vec![Some(-2.1)]);
}

#[test]
fn over_long_and_invalid_smiles_are_dropped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let long = "C".repeat(251);
    let edge = "C".repeat(250);
    let text = format!("smiles,y\n{long},1\n{edge},2\nC1CC,3\nCC((C,4\nCCN,\nCCO,5\n");
    let p = write(&dir, "drops.csv", &text);
    let (ds, rep) = load_csv(&p, TaskType::Regression, &Columns::default()).unwrap();
    assert_eq!(rep.rows_read, 6);
    assert_eq!(rep.dropped_too_long, 1);
    assert_eq!(rep.dropped_invalid, 2);
    assert_eq!(rep.dropped_missing_target, 1);
    assert_eq!(ds.len(), 2);
    assert_eq!(rep.dropped[0].line, 2);
    assert_eq!(rep.dropped[0].reason, DropReason::TooLong);
    assert_eq!(rep.length_histogram, vec![(0, 1), (250, 1)]);
}

#[test]
fn bad_numbers_name_their_row() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "bad.csv", "smiles,y\nCCO,1.0\nCCN,abc\n");
    match load_csv(&p, TaskType::Regression, &Columns::default()) {
        Err(Error::Csv { row, detail, .. }) => {
            assert_eq!(row, 3);
            assert!(detail.contains("abc"), "{detail}");
        }
        other => panic!("expected a row error, got {other:?}"),
    }
    let p = write(&dir, "cls.csv", "smiles,a\nCCO,1\nCCN,0.5\n");
    assert!(matches!(load_csv(&p, TaskType::Classification, &Columns::default()), Err(Error::Csv { row: 3, .. })));
}

#[test]
fn column_selection() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "multi.csv", "id,smiles,a,b\nm1,CCO,1,\nm2,CCN,0,1\nm3,CCC,,0\n");
    let (ds, _) = load_csv(&p, TaskType::Classification, &cols(&["b", "a"])).unwrap();
    assert_eq!(ds.task.n_outputs, 2);
    assert_eq!(ds.records[0].labels, vec![None, Some(1.0)]);
    assert_eq!(ds.records[2].labels, vec![Some(0.0), None]);

    assert!(load_csv(&p, TaskType::Classification, &cols(&["zzz"])).is_err());
    let no_smiles = Columns { smiles: "SMILES".into(), labels: vec![] };
    assert!(matches!(load_csv(&p, TaskType::Regression, &no_smiles), Err(Error::Csv { row: 1, .. })));
    // every non-SMILES column would be a label, too many for regression
    assert!(load_csv(&p, TaskType::Regression, &Columns::default()).is_err());
    assert!(matches!(
        load_csv(&dir.path().join("missing.csv"), TaskType::Regression, &Columns::default()),
        Err(Error::Io { .. })
    ));
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn bundled_regression_sets() {
    let (esol, rep) =
        load_csv(&data("esol.csv"), TaskType::Regression, &cols(&["measured log solubility in mols per litre"])).unwrap();
    assert_eq!(esol.len(), 1128);
    assert_eq!(rep.dropped_total(), 0);
    // the copy shipped here has one molecule fewer than the published count of 643
    let (fs, _) = load_csv(&data("freesolv.csv"), TaskType::Regression, &cols(&["expt"])).unwrap();
    assert_eq!(fs.len(), 642);
}
