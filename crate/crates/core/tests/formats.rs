mod common;

use common::formats;

fn run(case: formats::Case) {
    let dir = tempfile::tempdir().unwrap();
    if let Err(msg) = case(dir.path()) {
        panic!("{msg}");
    }
}

#[test]
fn store_round_trip() {
    run(formats::store_round_trip);
}

#[test]
fn store_corruption() {
    run(formats::store_corruption);
}

#[test]
fn checkpoint_round_trip() {
    run(formats::checkpoint_round_trip);
}

#[test]
fn checkpoint_corruption() {
    run(formats::checkpoint_corruption);
}

#[test]
fn embeddings_round_trip() {
    run(formats::embeddings_round_trip);
}

#[test]
fn embeddings_errors() {
    run(formats::embeddings_errors);
}

#[test]
fn manifest_round_trip() {
    run(formats::manifest_round_trip);
}

#[test]
fn manifest_errors() {
    run(formats::manifest_errors);
}

#[test]
fn dataset_cross_checks() {
    run(formats::dataset_cross_checks);
}

#[test]
fn every_case_is_listed() {
    assert_eq!(formats::all().len(), 9);
}
