use std::path::{Path, PathBuf};

use vacalib::io::{check_algorithms, infer_classes, read_labeled, read_unlabeled, write_labeled, write_unlabeled};
use vacalib::model::ClassLabelMap;
use vacalib::sim::{build_dataset, MatrixChoice, ScenarioSpec};
use vacalib::Error;

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn classes4() -> ClassLabelMap {
    ClassLabelMap::new(["1", "2", "3", "4"]).unwrap()
}

#[test]
fn one_prediction_per_class() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "u.csv", "record_id,pred_a\nr1,1\nr2,2\nr3,3\nr4,4\n");
    let u = read_unlabeled(&p).unwrap();
    assert_eq!(u.prediction_counts(0, &classes4()).unwrap().as_slice(), &[1, 1, 1, 1]);
}

#[test]
fn two_algorithms_and_combinations() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "u.csv", "record_id,pred_a,pred_b\nr1,1,1\nr2,1,2\n");
    let e = read_unlabeled(&p).unwrap().ensemble_counts(&classes4()).unwrap();
    assert_eq!(e.marginal(0).as_slice(), &[2, 0, 0, 0]);
    assert_eq!(e.marginal(1).as_slice(), &[1, 1, 0, 0]);
    assert_eq!(e.combinations(), &[(vec![0, 0], 1), (vec![0, 1], 1)]);
}

#[test]
fn malformed_header_names_column() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "u.csv", "id,pred_a\nr1,1\n");
    let e = read_unlabeled(&p).unwrap_err();
    assert!(e.to_string().contains("record_id"), "{e}");
    let p = write(d.path(), "l.csv", "record_id,pred_a\nr1,1\n");
    assert!(read_labeled(&p).unwrap_err().to_string().contains("true_label"));
}

#[test]
fn unknown_label_reports_line() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "u.csv", "record_id,pred_a\nr1,1\nr2,9\n");
    let e = read_unlabeled(&p).unwrap().encoded(&classes4()).unwrap_err();
    assert!(e.to_string().contains("line 3"), "{e}");
    let p = write(d.path(), "l.csv", "record_id,true_label,pred_a\nr1,7,1\n");
    assert!(read_labeled(&p).unwrap().transfer_errors(0, &classes4()).is_err());
}

#[test]
fn empty_files() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "u.csv", "record_id,pred_a\n");
    assert!(matches!(read_unlabeled(&p), Err(Error::EmptyData(_))));
    let p = write(d.path(), "l.csv", "record_id,true_label,pred_a\n");
    let t = read_labeled(&p).unwrap().transfer_errors(0, &classes4()).unwrap();
    assert_eq!(t.total(), 0);
}

#[test]
fn transfer_error_rows() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "l.csv", "record_id,true_label,pred_a\na,1,1\nb,1,1\nc,1,1\nd,1,2\n");
    let t = read_labeled(&p).unwrap().transfer_errors(0, &classes4()).unwrap();
    assert_eq!(t.row(0), &[3, 1, 0, 0]);
}

#[test]
fn algorithm_sets_must_match() {
    let d = tempfile::tempdir().unwrap();
    let u = read_unlabeled(&write(d.path(), "u.csv", "record_id,pred_a\nr,1\n")).unwrap();
    let l = read_labeled(&write(d.path(), "l.csv", "record_id,true_label,pred_b\nr,1,1\n")).unwrap();
    assert!(check_algorithms(&u, &l).is_err());
}

#[test]
fn missing_file_is_io_error() {
    let e = read_unlabeled(Path::new("/nonexistent/u.csv")).unwrap_err();
    assert!(e.is_input_error());
    assert!(e.to_string().contains("/nonexistent/u.csv"));
}

#[test]
fn covariate_columns_group_records() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "u.csv", "record_id,pred_a,sex\nr1,1,f\nr2,2,m\nr3,1,f\n");
    let u = read_unlabeled(&p).unwrap();
    assert_eq!(u.covariate_names, vec!["sex"]);
    let (counts, design, groups) = u.stratified_counts(0, &classes4()).unwrap();
    assert_eq!(design.n_groups(), 2);
    assert_eq!(groups, vec![0, 1, 0]);
    assert_eq!(counts.group(0), &[2, 0, 0, 0]);
    assert_eq!(counts.group(1), &[0, 1, 0, 0]);
}

#[test]
fn synthetic_dataset_round_trips() {
    let spec = ScenarioSpec { matrices: vec![MatrixChoice::M2, MatrixChoice::M3], seed: 8, ..ScenarioSpec::default() };
    let data = build_dataset(&spec).unwrap();
    let classes = ClassLabelMap::new(["a", "b", "c", "d"]).unwrap();
    let algs = vec!["x".to_string(), "y".to_string()];
    let d = tempfile::tempdir().unwrap();
    let (up, lp) = (d.path().join("u.csv"), d.path().join("l.csv"));
    write_unlabeled(&up, &algs, &classes, data.unlabeled.iter().enumerate().map(|(r, (_, a))| (format!("u{r}"), a.clone())))
        .unwrap();
    write_labeled(&lp, &algs, &classes, data.labeled.iter().enumerate().map(|(r, (t, a))| (format!("l{r}"), *t, a.clone())))
        .unwrap();
    let (u, l) = (read_unlabeled(&up).unwrap(), read_labeled(&lp).unwrap());
    check_algorithms(&u, &l).unwrap();
    assert_eq!(u.ensemble_counts(&classes).unwrap(), data.ensemble_counts());
    for k in 0..2 {
        assert_eq!(u.prediction_counts(k, &classes).unwrap(), data.prediction_counts(k));
        assert_eq!(l.transfer_errors(k, &classes).unwrap(), data.transfer_errors(k));
    }
    assert_eq!(infer_classes(&u, Some(&l)).unwrap().labels().len(), 4);
}

#[test]
fn numeric_labels_sort_numerically() {
    let d = tempfile::tempdir().unwrap();
    let u = read_unlabeled(&write(d.path(), "u.csv", "record_id,pred_a\nr,10\ns,2\nt,1\n")).unwrap();
    assert_eq!(infer_classes(&u, None).unwrap().labels(), &["1", "2", "10"]);
}
