mod common;

use std::collections::BTreeMap;

use adiabatic::circle::QuadratureConfig;
use adiabatic::error::Error;
use adiabatic::experiments::{
    compare_variants, emit, measure_drift, order_sweep, report_json, DriftConfig, OutputFormat,
    ReportDocument, CSV_HEADER,
};
use adiabatic::invariants::F2Variant;

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn quick(name: &str, p: &[(&str, f64)]) -> DriftConfig {
    let mut c = DriftConfig::for_fixture(name, params(p)).unwrap();
    c.eps_grid = vec![0.2, 0.1, 0.05, 0.025];
    c.horizon = 0.5;
    c.samples = 48;
    c.quadrature = QuadratureConfig::new(32, 16).unwrap();
    c
}

#[test]
fn decoupled_pendulum_does_not_drift() {
    let c = quick("elastic_pendulum", &[("gamma", 0.0)]);
    for k in 0..=2 {
        let d = measure_drift(&c, 0.1, k).unwrap();
        assert!(d <= 1e-9, "order {k}: {d}");
    }
}

#[test]
fn first_order_improves_on_zeroth() {
    let c = quick("elastic_pendulum", &[]);
    let d0 = measure_drift(&c, 0.1, 0).unwrap();
    let d1 = measure_drift(&c, 0.1, 1).unwrap();
    assert!(d0 > 0.0 && d1 < d0, "{d0} {d1}");
    assert!(matches!(
        measure_drift(&c, 0.1, 3),
        Err(Error::UnsupportedOrder(3))
    ));
}

#[test]
fn horizon_scaling_of_second_order_drift() {
    let c = quick("elastic_pendulum", &[]);
    let short = measure_drift(
        &DriftConfig {
            horizon: 1.0,
            ..c.clone()
        },
        0.1,
        2,
    )
    .unwrap();
    let long = measure_drift(&DriftConfig { horizon: 2.0, ..c }, 0.1, 2).unwrap();
    assert!(long <= 2.5 * short, "{short} -> {long}");
}

#[test]
fn single_eps_has_no_slope() {
    let mut c = quick("elastic_pendulum", &[]);
    c.eps_grid = vec![0.1];
    assert!(matches!(order_sweep(&c), Err(Error::SlopeUndefined(_))));
}

#[test]
fn sweep_is_ordered_monotone_and_deterministic() {
    let c = quick("charged_particle", &[]);
    let a = order_sweep(&c).unwrap();
    let b = order_sweep(&c).unwrap();
    assert_eq!(a.rows, b.rows);
    let keys: Vec<(f64, usize)> = a.rows.iter().map(|r| (r.eps, r.order)).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
    assert_eq!(keys, sorted);
    for e in [0.05, 0.025] {
        let d: Vec<f64> = (0..=2).map(|k| a.drift(e, k).unwrap()).collect();
        assert!(d[2] < d[1] && d[1] < d[0], "eps {e}: {d:?}");
    }
    assert_eq!(a.slopes.len(), 3);
    assert!(a.slopes.iter().all(|s| s.points >= 4));

    let doc = ReportDocument {
        drift: a,
        variants: None,
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let docs = [
        doc.clone(),
        ReportDocument {
            drift: b,
            variants: None,
        },
    ];
    let mut bytes = Vec::new();
    for (d, doc) in dirs.iter().zip(&docs) {
        let paths = emit(doc, OutputFormat::Both, d.path(), "drift").unwrap();
        assert_eq!(paths.len(), 2);
        bytes.push(
            paths
                .iter()
                .map(|p| std::fs::read(p).unwrap())
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(bytes[0], bytes[1]);
    let csv = String::from_utf8(bytes[0][0].clone()).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(csv.lines().count(), 1 + 4 * 3);
    let back: ReportDocument = serde_json::from_str(&report_json(&doc).unwrap()).unwrap();
    assert_eq!(back.drift.rows, doc.drift.rows);
    assert_eq!(back.drift.config, c);
}

#[test]
fn variant_adjudication_on_pendulum() {
    let c = quick("elastic_pendulum", &[("gamma", 1.0)]);
    let c = DriftConfig {
        initial: vec![1.0, 0.0, 1.0, 1.0],
        ..c
    };
    let v = compare_variants(&c, false).unwrap();
    assert_eq!(v.default, Some(F2Variant::Ai3));
    assert!(!v.indistinguishable);
    let loser = v.entry(F2Variant::Ty3).unwrap();
    assert!(!loser.pass);
    assert!((loser.printed_error.unwrap() - 1.3125).abs() < 1e-4);
    let winner = v.entry(F2Variant::Ai3).unwrap();
    assert!(winner.printed_error.unwrap() <= 1e-4 && winner.ty3_residual <= 1e-4);
}

#[test]
fn variants_coincide_without_coupling() {
    let c = quick("elastic_pendulum", &[("gamma", 0.0)]);
    let v = compare_variants(&c, true).unwrap();
    assert!(v.indistinguishable);
    assert!(v
        .entries
        .iter()
        .all(|e| e.f2.abs() < 1e-9 && e.pass && e.drift2.len() == 4));
    assert_eq!(v.require_default().unwrap(), F2Variant::Ai3);
}

#[test]
fn no_variant_passes_on_corrupted_frequency() {
    let c = quick("elastic_pendulum", &[("omega_scale", 1.3)]);
    let v = compare_variants(&c, false).unwrap();
    assert!(v.default.is_none());
    assert!(matches!(v.require_default(), Err(Error::NoVariantPasses)));
}
