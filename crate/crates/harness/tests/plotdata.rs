//! Plot-data layout against a golden file.

use tvsaddle::metrics::{summarize, Summary};
use tvsaddle_harness::config::ModeName;
use tvsaddle_harness::experiment::AggregateRow;
use tvsaddle_harness::plotdata::render_table;
use tvsaddle_harness::emit_plotdata;

fn row(a: f64, mode: ModeName, err: &[f64]) -> AggregateRow {
    let none = Summary {
        mean: f64::NAN,
        stderr: f64::NAN,
        count: 0,
    };
    AggregateRow {
        a,
        mode,
        runs: err.len(),
        failed: 0,
        err: summarize(err),
        err_z: summarize(err),
        err_dual: none,
        throughput: none,
        alpha_sq: none,
        bound: None,
        bound_holds: None,
        drift_violations: None,
    }
}

#[test]
fn error_table_matches_golden() {
    let rows = vec![
        row(0.01, ModeName::Plain, &[1.0, 3.0]),
        row(0.01, ModeName::DistributedCompensated, &[0.5, 0.5]),
        row(0.02, ModeName::Plain, &[4.0]),
    ];
    let table = render_table(&rows, |g| g.err).unwrap();
    assert_eq!(table, include_str!("golden/error_vs_a.dat"));
}

#[test]
fn empty_aggregates_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_plotdata(&[], dir.path()).unwrap().is_empty());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn throughput_file_only_when_measured() {
    let dir = tempfile::tempdir().unwrap();
    let files = emit_plotdata(&[row(0.01, ModeName::Plain, &[1.0])], dir.path()).unwrap();
    assert_eq!(files.len(), 1);
    assert!(files[0].ends_with("error_vs_a.dat"));
}
