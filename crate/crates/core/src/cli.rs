//! Command-line front end. Exit codes: 0 success, 1 check or contract
//! failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::circle::{CircleAction, FlowMode};
use crate::config::{RunConfig, VariantChoice};
use crate::error::{Error, Result};
use crate::experiments::{
    compare_variants, emit, order_sweep, DriftConfig, OutputFormat, ReportDocument, MIN_FIT_POINTS,
};
use crate::fixtures::{get_fixture, Fixture};
use crate::integrators::integrate_with;
use crate::invariants::{assemble, check_hypotheses, F2Variant, Options};
use crate::phase::{PhasePoint, PhaseSpace, SlowFastSystem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Tolerance used by `check`.
pub const CHECK_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(
    name = "adiabatic",
    version,
    about = "Adiabatic invariants of slow-fast Hamiltonian systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Refuse to construct invariants where the hypotheses fail.
    #[arg(long, global = true)]
    strict: bool,
    /// Second-order variant: ai3, ty3 or auto.
    #[arg(long, global = true)]
    variant: Option<VariantChoice>,
    /// Output format: csv, json or both.
    #[arg(long, global = true)]
    format: Option<OutputFormat>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the hypotheses at a point.
    Check {
        /// Point in block order y.., x.., p.., q..
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Option<Vec<f64>>,
    },
    /// Print J, F1, F2 and the truncated series at a point.
    Invariant {
        /// Point in block order y.., x.., p.., q..
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Option<Vec<f64>>,
        /// ε used for the truncated series.
        #[arg(long)]
        eps: Option<f64>,
        /// Highest order in the series (0, 1 or 2).
        #[arg(long)]
        order: Option<usize>,
    },
    /// Integrate one trajectory and write it with the series values.
    Simulate {
        /// Perturbation parameter; 0 runs the unperturbed flow.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Drift-order study over the ε grid.
    Drift {
        /// Comma-separated ε values (overrides the config grid).
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
}

/// Classify an error into an exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::HypothesisViolation(_)
        | Error::NoVariantPasses
        | Error::Numerical(_)
        | Error::Integration(_)
        | Error::MaxStepsExceeded { .. }
        | Error::StepSizeUnderflow { .. }
        | Error::PrecisionWarning { .. } => EXIT_FAIL,
        _ => EXIT_USAGE,
    }
}

/// Parse `args` (including the program name) and run. Human-readable output
/// goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let target: &mut (dyn Write + Send) = if code == EXIT_OK { out } else { err };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start worker pool: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(&cli, out, err)) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if cli.strict {
        cfg.strict = true;
    }
    if let Some(v) = cli.variant {
        cfg.variant = v;
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    cfg.validate_fixture()?;
    Ok(cfg)
}

fn dispatch(cli: &Cli, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<i32> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Check { point } => cmd_check(&cfg, point.as_deref(), out, err),
        Command::Invariant { point, eps, order } => {
            let order = order.unwrap_or(cfg.order);
            let eps = eps.or_else(|| cfg.eps.first().copied()).unwrap_or(0.0);
            cmd_invariant(&cfg, point.as_deref(), eps, order, out)
        }
        Command::Simulate { eps } => {
            let eps = eps.or_else(|| cfg.eps.first().copied()).unwrap_or(0.0);
            cmd_simulate(&cfg, eps, out)
        }
        Command::Drift { eps } => {
            if let Some(e) = eps {
                cfg.eps = e.clone();
            }
            cmd_drift(&cfg, out, err)
        }
    }
}

fn build(cfg: &RunConfig) -> Result<Fixture> {
    get_fixture(&cfg.fixture, &cfg.params)
}

fn action_for<'f>(fixture: &'f Fixture, cfg: &RunConfig) -> Result<CircleAction<'f, Fixture>> {
    let mode = if fixture.has_fast_flow() {
        FlowMode::Analytic
    } else {
        FlowMode::numeric()
    };
    CircleAction::with_config(PhaseSpace::new(fixture), mode, cfg.quadrature)
}

fn point_for(fixture: &Fixture, cfg: &RunConfig, point: Option<&[f64]>) -> Result<PhasePoint> {
    let coords = match point {
        Some(p) => p.to_vec(),
        None => cfg.initial_point()?,
    };
    let m = PhasePoint::from_coords(fixture.dims(), coords)?;
    fixture.domain().check(m.coords())?;
    Ok(m)
}

fn io<T>(r: std::io::Result<T>) -> Result<T> {
    r.map_err(Error::from)
}

/// `v` to 12 significant digits.
fn sig12(v: f64) -> String {
    format!("{v:.11e}")
}

fn resolve_variant(cfg: &RunConfig) -> Result<F2Variant> {
    match cfg.variant.forced() {
        Some(v) => Ok(v),
        None => compare_variants(&cfg.drift_config(F2Variant::Ai3)?, false)?.require_default(),
    }
}

fn cmd_check(
    cfg: &RunConfig,
    point: Option<&[f64]>,
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> Result<i32> {
    let fixture = build(cfg)?;
    let m = point_for(&fixture, cfg, point)?;
    let action = action_for(&fixture, cfg)?;
    let report = check_hypotheses(&action, &m, CHECK_TOL)?;
    io(writeln!(out, "fixture {}", fixture.name()))?;
    for (name, c) in report.items() {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        io(writeln!(
            out,
            "{name:<14} residual {:e} tolerance {:e} {verdict}",
            c.residual, c.tolerance
        ))?;
    }
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))?;
    io(writeln!(out, "{json}"))?;
    if matches!(cfg.format, OutputFormat::Json | OutputFormat::Both) {
        fs::create_dir_all(&cfg.out_dir)?;
        fs::write(cfg.out_dir.join("check.json"), format!("{json}\n"))?;
    }
    if report.all_pass() {
        Ok(EXIT_OK)
    } else {
        for name in report.failing() {
            io(writeln!(err, "hypothesis failed: {name}"))?;
        }
        Ok(EXIT_FAIL)
    }
}

fn cmd_invariant(
    cfg: &RunConfig,
    point: Option<&[f64]>,
    eps: f64,
    order: usize,
    out: &mut (dyn Write + Send),
) -> Result<i32> {
    if order > 2 {
        return Err(Error::UnsupportedOrder(order));
    }
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "eps must be finite and non-negative, got {eps}"
        )));
    }
    let fixture = build(cfg)?;
    let m = point_for(&fixture, cfg, point)?;
    let action = action_for(&fixture, cfg)?;
    let variant = if order >= 2 {
        resolve_variant(cfg)?
    } else {
        F2Variant::Ai3
    };
    let series = assemble(
        &action,
        order,
        variant,
        Options {
            strict: cfg.strict,
            ..Options::default()
        },
    )?;
    let terms = series.terms(&m)?;
    io(writeln!(out, "fixture {}", fixture.name()))?;
    io(writeln!(out, "order {order}"))?;
    io(writeln!(out, "eps {eps}"))?;
    if order >= 2 {
        io(writeln!(out, "variant {variant}"))?;
    }
    io(writeln!(out, "J {}", sig12(terms.j)))?;
    if let Some(f1) = terms.f1 {
        io(writeln!(out, "F1 {}", sig12(f1)))?;
    }
    if let Some(f2) = terms.f2 {
        io(writeln!(out, "F2 {}", sig12(f2)))?;
    }
    io(writeln!(out, "series {}", sig12(terms.evaluate(eps))))?;
    Ok(EXIT_OK)
}

fn simulate_header(fixture: &Fixture) -> String {
    let d = fixture.dims();
    let mut cols = vec!["t".to_string()];
    for (prefix, n) in [("y", d.r), ("x", d.r), ("p", d.k), ("q", d.k)] {
        cols.extend((1..=n).map(|i| format!("{prefix}{i}")));
    }
    cols.extend(["H", "F0", "F1s", "F2s"].map(String::from));
    cols.join(",")
}

fn cmd_simulate(cfg: &RunConfig, eps: f64, out: &mut (dyn Write + Send)) -> Result<i32> {
    if !eps.is_finite() || !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!(
            "eps must lie in [0, 1), got {eps}"
        )));
    }
    if cfg.samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples".into()));
    }
    cfg.integrator.validate()?;
    let fixture = build(cfg)?;
    let m0 = point_for(&fixture, cfg, None)?;
    let action = action_for(&fixture, cfg)?;
    let variant = resolve_variant(cfg)?;
    let series = assemble(
        &action,
        2,
        variant,
        Options {
            strict: cfg.strict,
            ..Options::default()
        },
    )?;
    let t_end = if eps > 0.0 {
        cfg.horizon / eps
    } else {
        cfg.horizon
    };
    let n = cfg.samples;
    let times: Vec<f64> = (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect();
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("simulate.csv");
    let mut file = BufWriter::new(fs::File::create(&path)?);
    io(writeln!(file, "{}", simulate_header(&fixture)))?;
    io(file.flush())?;
    let space = action.space();
    integrate_with(
        |x: &[f64], o: &mut [f64]| space.field_full_raw(x, eps, o),
        m0.coords(),
        t_end,
        &times,
        &cfg.integrator,
        |t, x| {
            let terms = series.terms_raw(x)?;
            let f1 = terms.j + eps * terms.f1.unwrap_or(0.0);
            let mut row = format!("{t}");
            for v in x {
                row.push_str(&format!(",{v}"));
            }
            row.push_str(&format!(
                ",{},{},{},{}\n",
                fixture.hamiltonian(x),
                terms.j,
                f1,
                terms.evaluate(eps)
            ));
            file.write_all(row.as_bytes())?;
            file.flush()?;
            Ok(())
        },
    )?;
    io(writeln!(out, "variant {variant}"))?;
    io(writeln!(out, "wrote {}", path.display()))?;
    Ok(EXIT_OK)
}

fn write_paths(out: &mut (dyn Write + Send), paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        io(writeln!(out, "wrote {}", p.display()))?;
    }
    Ok(())
}

fn cmd_drift(
    cfg: &RunConfig,
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> Result<i32> {
    let base = cfg.drift_config(F2Variant::Ai3)?;
    if base.eps_grid.len() < MIN_FIT_POINTS {
        return Err(Error::SlopeUndefined(format!(
            "{} eps values, need {MIN_FIT_POINTS}",
            base.eps_grid.len()
        )));
    }
    let comparison = compare_variants(&base, true)?;
    for e in &comparison.entries {
        let printed = e
            .printed_error
            .map_or("n/a".to_string(), |x| format!("{x:e}"));
        io(writeln!(
            out,
            "variant {} F2 {} printed error {printed} ty3 residual {:e} (factor one {:e}) {}",
            e.variant,
            sig12(e.f2),
            e.ty3_residual,
            e.ty3_residual_factor_one,
            if e.pass { "PASS" } else { "FAIL" }
        ))?;
    }
    let (variant, forced_fails) = match cfg.variant.forced() {
        Some(v) => (v, !comparison.entry(v).is_some_and(|e| e.pass)),
        None => match comparison.default {
            Some(v) => (v, false),
            None => {
                io(writeln!(err, "no F2 variant passes; falling back to ai3"))?;
                (F2Variant::Ai3, true)
            }
        },
    };
    let config = DriftConfig { variant, ..base };
    let report = order_sweep(&config)?;
    let doc = ReportDocument {
        drift: report,
        variants: Some(comparison),
    };
    let paths = emit(&doc, cfg.format, &cfg.out_dir, "drift")?;
    print_table(out, &doc)?;
    write_paths(out, &paths)?;
    let report = &doc.drift;
    for f in &report.contract.failures {
        io(writeln!(err, "contract: {f}"))?;
    }
    if forced_fails {
        io(writeln!(err, "variant {variant} fails adjudication"))?;
    }
    Ok(if report.contract.pass && !forced_fails {
        EXIT_OK
    } else {
        EXIT_FAIL
    })
}

fn print_table(out: &mut (dyn Write + Send), doc: &ReportDocument) -> Result<()> {
    let r = &doc.drift;
    io(writeln!(
        out,
        "fixture {} variant {}",
        r.config.fixture.name, r.config.variant
    ))?;
    io(writeln!(
        out,
        "{:>10} {:>6} {:>14} {:>14}",
        "eps", "order", "drift", "energy"
    ))?;
    for row in &r.rows {
        io(writeln!(
            out,
            "{:>10} {:>6} {:>14.6e} {:>14.6e}",
            row.eps, row.order, row.drift, row.energy_drift
        ))?;
    }
    for s in &r.slopes {
        let note = if s.excluded_largest_eps {
            " (largest eps excluded)"
        } else {
            ""
        };
        io(writeln!(
            out,
            "s{} = {:.4} over {} points{note}",
            s.order, s.slope, s.points
        ))?;
    }
    io(writeln!(
        out,
        "contract {}",
        if r.contract.pass { "PASS" } else { "FAIL" }
    ))?;
    Ok(())
}

/// Reads the simulate CSV back; used by tests.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Io(format!("{} is empty", path.display())))?
        .split(',')
        .map(String::from)
        .collect();
    let rows = lines
        .map(|l| {
            l.split(',')
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Io(format!("bad value '{v}'")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}
