mod common;

use common::*;

#[test]
fn every_primitive_matches_central_differences() {
    let mut failed = Vec::new();
    for (name, report) in primitive_checks() {
        let r = report.unwrap_or_else(|e| panic!("{name}: {e}"));
        if !r.passed {
            failed.push(format!("{name}: max {:e} {:?}", r.max_rel_error, &r.failures[..r.failures.len().min(3)]));
        }
    }
    assert!(failed.is_empty(), "{failed:#?}");
}

#[test]
fn full_objective_matches_central_differences() {
    let r = end_to_end_check().unwrap();
    assert!(r.errors.len() > 100);
    assert!(r.passed, "max {:e}: {:?}", r.max_rel_error, &r.failures[..r.failures.len().min(5)]);
}

#[test]
fn retriever_loss_matches_central_differences() {
    let r = retriever_check().unwrap();
    assert!(r.passed, "max {:e}: {:?}", r.max_rel_error, &r.failures[..r.failures.len().min(5)]);
}
