mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use adiabatic::circle::QuadratureConfig;
use adiabatic::cli::{read_csv, run};
use adiabatic::config::{RunConfig, VariantChoice};
use adiabatic::experiments::OutputFormat;
use adiabatic::integrators::{IntegratorConfig, Method};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, 1e-14..1e-2f64, Just(0.0), Just(-0.0)]
}

fn run_config() -> impl Strategy<Value = RunConfig> {
    let fixture = prop_oneof![
        Just("elastic_pendulum"),
        Just("charged_particle"),
        Just("harmonic_oscillator")
    ];
    let params = prop::collection::btree_map(
        prop_oneof![Just("Omega"), Just("gamma"), Just("B")],
        finite(),
        0..3,
    );
    let points = (
        prop::option::of(prop::collection::vec(finite(), 2)),
        prop::option::of(prop::collection::vec(finite(), 2)),
    );
    let integrator = (
        prop_oneof![Just(Method::Rk4), Just(Method::Dopri5)],
        1e-14..1e-2f64,
        1e-16..1e-2f64,
        1e-5..1.0f64,
        1usize..10_000_000,
    );
    let quad = prop_oneof![Just((64, 32)), Just((32, 32)), Just((128, 4))];
    let experiment = (
        prop::collection::vec(1e-4..0.99f64, 0..6),
        1e-3..100.0f64,
        2usize..5000,
        prop::collection::vec(0usize..3, 0..4),
        prop_oneof![
            Just(VariantChoice::Ai3),
            Just(VariantChoice::Ty3),
            Just(VariantChoice::Auto)
        ],
        any::<bool>(),
        0usize..3,
    );
    let output = (
        "[a-z0-9_/.]{1,16}",
        prop_oneof![
            Just(OutputFormat::Csv),
            Just(OutputFormat::Json),
            Just(OutputFormat::Both)
        ],
    );
    (
        fixture, params, points, integrator, quad, experiment, output,
    )
        .prop_map(
            |(
                fixture,
                params,
                (fast, slow),
                (method, rtol, atol, dt, max_steps),
                (outer, inner),
                e,
                (dir, format),
            )| RunConfig {
                fixture: fixture.to_string(),
                params: params
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), v))
                    .collect(),
                fast,
                slow,
                integrator: IntegratorConfig {
                    method,
                    rtol,
                    atol,
                    dt,
                    max_steps,
                },
                quadrature: QuadratureConfig { outer, inner },
                eps: e.0,
                horizon: e.1,
                samples: e.2,
                orders: e.3,
                variant: e.4,
                strict: e.5,
                order: e.6,
                out_dir: PathBuf::from(dir),
                format,
            },
        )
}

proptest! {
    #[test]
    fn config_round_trip(cfg in run_config()) {
        let text = cfg.to_ini();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_ini(), text);
        let json = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
    }
}

#[test]
fn config_converts_to_drift_config() {
    let cfg = RunConfig::parse(
        "[fixture]\nname = charged_particle\nparams = lambda:0.2\n[experiment]\nvariant = ty3\n",
    )
    .unwrap();
    let d = cfg
        .drift_config(adiabatic::invariants::F2Variant::Ty3)
        .unwrap();
    assert_eq!(d.initial, vec![0.1, 0.3, 0.2, 1.0]);
    assert_eq!(d.fixture.params["lambda"], 0.2);
    assert_eq!(d.eps_grid, vec![0.2, 0.1, 0.05, 0.025, 0.0125]);
    let bad = RunConfig::parse("[fixture]\nfast = 1, 2, 3\n").unwrap();
    assert!(bad.initial_point().is_err());
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["adiabatic"];
    full.extend_from_slice(args);
    let code = run(full, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn check_command_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let (code, stdout, _) = cli(&["check", "--out", out]);
    assert_eq!(code, 0, "{stdout}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("check.json")).unwrap()).unwrap();
    assert_eq!(json["periodicity"]["pass"], true);

    let cfg = write(
        tmp.path(),
        "axis.ini",
        "[fixture]\nname = charged_particle\nslow = 0.2, 0\n",
    );
    let (code, _, err) = cli(&["check", "--config", &cfg, "--out", out]);
    assert_eq!(code, 2);
    assert!(err.contains("domain"), "{err}");

    let cfg = write(
        tmp.path(),
        "bad.ini",
        "[fixture]\nname = elastic_pendulum\nparams = omega_scale:1.7\n",
    );
    let (code, stdout, err) = cli(&["check", "--config", &cfg, "--out", out]);
    assert_eq!(code, 1);
    assert!(err.contains("hypothesis failed: periodicity"), "{err}");
    assert!(stdout.contains("FAIL"));
}

#[test]
fn invariant_command_prints_twelve_digits() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "p.ini",
        "[fixture]\nname = elastic_pendulum\nparams = Omega:1, gamma:1\n",
    );
    let (code, out, _) = cli(&[
        "invariant",
        "--config",
        &cfg,
        "--point",
        "1,0,1,1",
        "--eps",
        "0.1",
        "--order",
        "1",
    ]);
    assert_eq!(code, 0);
    assert!(out.contains("J 6.25000000000e-1"), "{out}");
    assert!(out.contains("F1 1.00000000000e0"), "{out}");
    assert!(out.contains("series 7.25000000000e-1"), "{out}");
    assert!(!out.contains("F2"));
    let (code, out, _) = cli(&[
        "invariant",
        "--config",
        &cfg,
        "--point",
        "1,0,1,1",
        "--order",
        "0",
    ]);
    assert_eq!(code, 0);
    assert!(out.contains("series 6.25000000000e-1") && !out.contains("F1"));
    let (code, _, err) = cli(&["invariant", "--config", &cfg, "--order", "3"]);
    assert_eq!(code, 2);
    assert!(err.contains("unsupported"));
    let (code, out, _) = cli(&[
        "invariant",
        "--config",
        &cfg,
        "--point",
        "1,0,1,1",
        "--eps",
        "0.1",
        "--order",
        "2",
    ]);
    assert_eq!(code, 0);
    assert!(
        out.contains("variant ai3") && out.contains("F2 -8.750000000"),
        "{out}"
    );
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["--bogus"]).0, 2);
    assert_eq!(cli(&["drift", "--format", "xml"]).0, 2);
    assert_eq!(cli(&["check", "--config", "/nonexistent/x.ini"]).0, 2);
    let cfg = write(tmp.path(), "u.ini", "[fixture]\ncolour = red\n");
    let (code, _, err) = cli(&["check", "--config", &cfg]);
    assert_eq!(code, 2);
    assert!(err.contains("unknown key"));
    let cfg = write(tmp.path(), "n.ini", "[fixture]\nname = sphere\n");
    assert_eq!(cli(&["check", "--config", &cfg]).0, 2);
    let (code, _, err) = cli(&[
        "drift",
        "--eps",
        "0.1",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("slope undefined"));
    let (code, out, _) = cli(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("drift"));
}

#[test]
fn simulate_at_zero_eps_conserves_j() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "s.ini",
        "[experiment]\nsamples = 200\nhorizon = 20\n[quadrature]\nouter = 32\ninner = 16\n",
    );
    let (code, _, err) = cli(&[
        "simulate",
        "--config",
        &cfg,
        "--eps",
        "0",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let (header, rows) = read_csv(&tmp.path().join("simulate.csv")).unwrap();
    assert_eq!(header.join(","), "t,y1,x1,p1,q1,H,F0,F1s,F2s");
    assert_eq!(rows.len(), 200);
    let j0 = rows[0][6];
    for r in &rows {
        assert!((r[6] - j0).abs() <= 1e-9);
        assert_eq!(r[7], r[6]);
        assert_eq!(r[8], r[6]);
    }
    assert_eq!(rows.last().unwrap()[0], 20.0);
}

#[test]
fn drift_with_forced_failing_variant_still_emits() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "d.ini",
        "[experiment]\neps = 0.2, 0.1, 0.05, 0.025\nhorizon = 0.3\nsamples = 24\n[quadrature]\nouter = 32\ninner = 16\n",
    );
    let out = tmp.path().join("out");
    let (code, stdout, err) = cli(&[
        "drift",
        "--config",
        &cfg,
        "--variant",
        "ty3",
        "--format",
        "csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1, "{stdout}\n{err}");
    assert!(err.contains("variant ty3 fails"), "{err}");
    assert!(stdout.contains("s0 = ") && stdout.contains("s2 = "));
    let csv = fs::read_to_string(out.join("drift.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12);
    assert!(!out.join("drift.json").exists());
}

/// A killed run leaves a file whose rows are all complete.
#[test]
fn interrupted_simulation_leaves_valid_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "k.ini",
        "[experiment]\nsamples = 200000\nvariant = ai3\n",
    );
    let mut child = Command::new(env!("CARGO_BIN_EXE_adiabatic"))
        .args([
            "simulate",
            "--config",
            &cfg,
            "--eps",
            "0.0125",
            "--out",
            tmp.path().to_str().unwrap(),
        ])
        .spawn()
        .unwrap();
    let file = tmp.path().join("simulate.csv");
    let start = std::time::Instant::now();
    while start.elapsed().as_secs() < 60 {
        std::thread::sleep(std::time::Duration::from_millis(200));
        if fs::read_to_string(&file)
            .map(|s| s.lines().count() > 5)
            .unwrap_or(false)
        {
            break;
        }
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let text = fs::read_to_string(&file).unwrap();
    let (header, rows) = read_csv(&file).unwrap_or_else(|e| panic!("{e}: {text}"));
    assert!(rows.len() > 5 && rows.len() < 200_000);
    assert!(rows.iter().all(|r| r.len() == header.len()));
}
