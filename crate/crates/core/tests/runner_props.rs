mod common;

use std::collections::BTreeSet;
use std::fs;

use common::pearson_two_pass;
use privaudit_core::data::BlobSpec;
use privaudit_core::runner::{
    emit_report, pearson, read_cells_csv, run_sweep, DataSource, Method, SweepReport, SweepSpec,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pearson_matches_the_two_pass_formula(
        points in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 3..60),
    ) {
        let want = pearson_two_pass(&points);
        prop_assume!(want.is_finite());
        let got = pearson(&points).unwrap();
        prop_assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn pearson_is_invariant_under_positive_affine_maps(
        points in prop::collection::vec((-1e2..1e2f64, -1e2..1e2f64), 3..30),
        a in 0.1..10.0f64, b in -10.0..10.0f64,
    ) {
        let r = pearson(&points);
        prop_assume!(r.is_ok());
        let moved: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (a * x + b, y - b)).collect();
        prop_assert!((pearson(&moved).unwrap() - r.unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn exact_lines_correlate_perfectly() {
    let up: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 * i as f64 - 1.0)).collect();
    let down: Vec<(f64, f64)> = up.iter().map(|&(x, y)| (x, -y)).collect();
    assert!((pearson(&up).unwrap() - 1.0).abs() <= 1e-12);
    assert!((pearson(&down).unwrap() + 1.0).abs() <= 1e-12);
    assert!(pearson(&[(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)]).is_err());
}

fn tiny_spec(workers: usize) -> SweepSpec {
    let mut spec = SweepSpec {
        lambdas: vec![0.0, 0.004],
        runs_per_cell: 2,
        seed: 17,
        workers,
        data: DataSource::Blobs {
            blobs: BlobSpec {
                n_train: 40,
                n_test: 40,
                dim: 4,
                classes: 3,
                ..BlobSpec::default()
            },
        },
        ..SweepSpec::default()
    };
    spec.train.epochs = 2;
    spec.train.batch_size = 8;
    spec
}

#[test]
fn sweep_covers_every_cell_once_whatever_the_worker_count() {
    let one = run_sweep(&tiny_spec(1)).unwrap();
    let three = run_sweep(&tiny_spec(3)).unwrap();
    assert_eq!(one, three);
    assert_eq!(one.cells_expected, 8);
    assert!(one.failures.is_empty());
    let keys: BTreeSet<(String, u64, usize)> = one
        .cells
        .iter()
        .map(|c| (c.method.to_string(), c.lambda.to_bits(), c.run))
        .collect();
    assert_eq!(keys.len(), 8);
    for c in &one.cells {
        assert!((0.0..=100.0).contains(&c.attacker_advantage));
        assert!((0.0..=100.0).contains(&c.train_acc) && (0.0..=100.0).contains(&c.val_acc));
    }
    let seeds: BTreeSet<u64> = one.cells.iter().map(|c| c.seed).collect();
    assert_eq!(seeds.len(), 8, "cells must be independently seeded");
    assert!(one.cells.iter().any(|c| c.method == Method::Dp));
}

#[test]
fn reports_are_byte_identical_across_reruns_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let emit = |name: &str| {
        let report = run_sweep(&tiny_spec(2)).unwrap();
        emit_report(&report, &dir.path().join(name)).unwrap();
        report
    };
    let report = emit("a");
    emit("b");
    for f in ["cells.csv", "summary.json", "advantage.svg"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let cells = read_cells_csv(&dir.path().join("a/cells.csv")).unwrap();
    assert_eq!(cells, report.cells);
    let pooled = SweepReport::merge([report.clone(), report.clone()]);
    assert_eq!(pooled.cells.len(), 16);
    assert_eq!(pooled.summary().len(), report.summary().len());
}
