//! Drift measurements along the full flow over `T = c/ε`, ε-sweeps with
//! log-log slope fits, and the side-by-side comparison of the two `F₂`
//! variants.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circle::{CircleAction, FlowMode, QuadratureConfig};
use crate::error::{Error, Result};
use crate::fit::{line_fit, LineFit};
use crate::fixtures::{get_fixture, Fixture, FixtureSpec};
use crate::integrators::{integrate_with, IntegratorConfig};
use crate::invariants::{assemble, Construction, F2Variant, Options};
use crate::phase::{PhasePoint, PhaseSpace, SlowFastSystem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub fixture: FixtureSpec,
    /// Initial state in block order `(y.., x.., p.., q..)`.
    pub initial: Vec<f64>,
    pub eps_grid: Vec<f64>,
    /// `T = horizon / ε`.
    pub horizon: f64,
    pub samples: usize,
    pub integrator: IntegratorConfig,
    pub quadrature: QuadratureConfig,
    pub orders: Vec<usize>,
    pub variant: F2Variant,
    pub strict: bool,
}

impl DriftConfig {
    /// Defaults for a fixture: its default point, the standard ε grid,
    /// `c = 1`, 512 samples, DOPRI5 at `rtol = 1e-11`.
    pub fn for_fixture(name: &str, params: BTreeMap<String, f64>) -> Result<Self> {
        let fixture = get_fixture(name, &params)?;
        Ok(DriftConfig {
            fixture: FixtureSpec {
                name: name.to_string(),
                params,
            },
            initial: fixture.default_point().into_coords(),
            eps_grid: fixture.eps_grid(),
            horizon: 1.0,
            samples: 512,
            integrator: IntegratorConfig::adaptive(1e-11, 1e-13),
            quadrature: QuadratureConfig::default(),
            orders: vec![0, 1, 2],
            variant: F2Variant::Ai3,
            strict: false,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.eps_grid.is_empty() {
            return bad("empty eps grid".into());
        }
        for (i, e) in self.eps_grid.iter().enumerate() {
            if !(*e > 0.0 && *e < 1.0) {
                return bad(format!("eps must lie in (0, 1), got {e}"));
            }
            if self.eps_grid[..i].contains(e) {
                return bad(format!("duplicate eps {e}"));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be > 0, got {}", self.horizon));
        }
        if self.samples < 2 {
            return bad("need at least 2 samples".into());
        }
        if self.orders.is_empty() {
            return bad("no invariant orders requested".into());
        }
        if let Some(o) = self.orders.iter().find(|o| **o > 2) {
            return Err(Error::UnsupportedOrder(*o));
        }
        self.integrator.validate()?;
        QuadratureConfig::new(self.quadrature.outer, self.quadrature.inner)?;
        Ok(())
    }

    /// ε values sorted descending.
    fn sorted_eps(&self) -> Vec<f64> {
        let mut e = self.eps_grid.clone();
        e.sort_by(|a, b| b.partial_cmp(a).expect("finite eps"));
        e
    }

    fn sorted_orders(&self) -> Vec<usize> {
        let mut o = self.orders.clone();
        o.sort_unstable();
        o.dedup();
        o
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub eps: f64,
    pub order: usize,
    pub drift: f64,
    pub horizon: f64,
    pub samples: usize,
    /// `max |H(x(t)) − H(x₀)|` along the same trajectory.
    pub energy_drift: f64,
    /// False when the energy drift reaches 10% of the invariant drift.
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub order: usize,
    pub slope: f64,
    pub intercept: f64,
    pub rms_residual: f64,
    pub points: usize,
    pub excluded_largest_eps: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractCheck {
    pub pass: bool,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub config: DriftConfig,
    pub rows: Vec<DriftRow>,
    pub slopes: Vec<SlopeFit>,
    pub contract: ContractCheck,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl DriftReport {
    pub fn drift(&self, eps: f64, order: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.eps == eps && r.order == order)
            .map(|r| r.drift)
    }

    pub fn slope(&self, order: usize) -> Option<&SlopeFit> {
        self.slopes.iter().find(|s| s.order == order)
    }
}

/// Per-trajectory result: drift for each requested order.
struct TrajectoryDrift {
    drifts: Vec<f64>,
    energy_drift: f64,
}

fn build_fixture(config: &DriftConfig) -> Result<Fixture> {
    get_fixture(&config.fixture.name, &config.fixture.params)
}

fn with_action<T>(
    fixture: &Fixture,
    config: &DriftConfig,
    f: impl FnOnce(&CircleAction<'_, Fixture>) -> Result<T>,
) -> Result<T> {
    let mode = if fixture.has_fast_flow() {
        FlowMode::Analytic
    } else {
        FlowMode::numeric()
    };
    let action = CircleAction::with_config(PhaseSpace::new(fixture), mode, config.quadrature)?;
    f(&action)
}

fn initial_point(fixture: &Fixture, config: &DriftConfig) -> Result<PhasePoint> {
    let m = PhasePoint::from_coords(fixture.dims(), config.initial.clone())?;
    fixture.domain().check(m.coords())?;
    Ok(m)
}

fn run_trajectory(config: &DriftConfig, eps: f64, orders: &[usize]) -> Result<TrajectoryDrift> {
    let fixture = build_fixture(config)?;
    let m0 = initial_point(&fixture, config)?;
    with_action(&fixture, config, |action| {
        let opts = Options {
            strict: config.strict,
            ..Options::default()
        };
        let top = orders.iter().copied().max().unwrap_or(0);
        let series = assemble(action, top, config.variant, opts)?;
        if config.strict {
            series.terms(&m0)?;
        }
        let t_end = config.horizon / eps;
        let n = config.samples;
        let times: Vec<f64> = (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect();
        let mut states = Vec::with_capacity(n);
        let space = action.space();
        integrate_with(
            |x: &[f64], out: &mut [f64]| space.field_full_raw(x, eps, out),
            m0.coords(),
            t_end,
            &times,
            &config.integrator,
            |_, x| {
                states.push(x.to_vec());
                Ok(())
            },
        )?;
        let terms = states
            .par_iter()
            .map(|x| series.terms_raw(x))
            .collect::<Result<Vec<_>>>()?;
        let h0 = fixture.hamiltonian(&states[0]);
        let energy_drift = states
            .iter()
            .map(|x| (fixture.hamiltonian(x) - h0).abs())
            .fold(0.0, f64::max);
        let drifts = orders
            .iter()
            .map(|&k| {
                let value = |t: &crate::invariants::SeriesTerms| {
                    let mut v = t.j;
                    if k >= 1 {
                        v += eps * t.f1.unwrap_or(0.0);
                    }
                    if k >= 2 {
                        v += 0.5 * eps * eps * t.f2.unwrap_or(0.0);
                    }
                    v
                };
                let v0 = value(&terms[0]);
                terms
                    .iter()
                    .map(|t| (value(t) - v0).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        Ok(TrajectoryDrift {
            drifts,
            energy_drift,
        })
    })
}

/// Drift of the order-`order` series over one trajectory at `eps`.
pub fn measure_drift(config: &DriftConfig, eps: f64, order: usize) -> Result<f64> {
    config.validate()?;
    if order > 2 {
        return Err(Error::UnsupportedOrder(order));
    }
    let t = run_trajectory(config, eps, &[order])?;
    let drift = t.drifts[0];
    if t.energy_drift >= 0.1 * drift {
        warn!("energy drift {:e} is not below 10% of invariant drift {:e} (eps = {eps}, order = {order})", t.energy_drift, drift);
    }
    Ok(drift)
}

/// Minimum number of ε values for a slope fit.
pub const MIN_FIT_POINTS: usize = 4;

/// Least-squares slope of `ln drift` against `ln ε`, dropping the largest ε
/// when it sits off the line through the others by more than three times
/// their RMS residual.
pub fn fit_slope(order: usize, eps: &[f64], drift: &[f64]) -> Result<SlopeFit> {
    let mut pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(drift)
        .filter(|(e, d)| **e > 0.0 && **d > 0.0)
        .map(|(e, d)| (e.ln(), d.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::SlopeUndefined(format!(
            "order {order}: {} usable points, need {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    pts.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite"));
    let full = line_fit(&pts).expect("distinct eps");
    let resid = |f: &LineFit, p: &(f64, f64)| (p.1 - f.slope * p.0 - f.intercept).abs();
    let mut excluded = false;
    let mut fit = full;
    if pts.len() > MIN_FIT_POINTS {
        // Leave-one-out: judge the largest ε against the fit of the others.
        let rest = &pts[1..];
        let rest_fit = line_fit(rest).expect("distinct eps");
        let largest = resid(&rest_fit, &pts[0]);
        let rms_rest = (rest
            .iter()
            .map(|p| resid(&rest_fit, p).powi(2))
            .sum::<f64>()
            / rest.len() as f64)
            .sqrt();
        if largest > 3.0 * rms_rest && largest > 1e-3 {
            excluded = true;
            fit = rest_fit;
            pts.remove(0);
        }
    }
    Ok(SlopeFit {
        order,
        slope: fit.slope,
        intercept: fit.intercept,
        rms_residual: fit.rms_residual,
        points: pts.len(),
        excluded_largest_eps: excluded,
    })
}

fn slope_window(order: usize) -> (f64, f64) {
    match order {
        0 => (0.7, 1.3),
        1 => (1.7, 2.3),
        _ => (1.7, f64::INFINITY),
    }
}

/// The slope contract, ordering at the three smallest ε and row validity.
pub fn check_contract(rows: &[DriftRow], slopes: &[SlopeFit]) -> ContractCheck {
    let mut failures = Vec::new();
    for s in slopes {
        let (lo, hi) = slope_window(s.order);
        if !(s.slope >= lo && s.slope <= hi) {
            failures.push(format!(
                "slope s{} = {:.4} outside [{lo}, {hi}]",
                s.order, s.slope
            ));
        }
    }
    let mut eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    eps.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    eps.dedup();
    let orders: Vec<usize> = {
        let mut o: Vec<usize> = rows.iter().map(|r| r.order).collect();
        o.sort_unstable();
        o.dedup();
        o
    };
    for e in eps.iter().take(3) {
        let d: Vec<f64> = orders
            .iter()
            .filter_map(|k| {
                rows.iter()
                    .find(|r| r.eps == *e && r.order == *k)
                    .map(|r| r.drift)
            })
            .collect();
        if d.windows(2).any(|w| !(w[1] < w[0])) {
            failures.push(format!(
                "drift not strictly decreasing in order at eps = {e}"
            ));
        }
    }
    for r in rows.iter().filter(|r| !r.valid) {
        failures.push(format!(
            "eps = {} order {}: energy drift {:e} not below 10% of drift {:e}",
            r.eps, r.order, r.energy_drift, r.drift
        ));
    }
    ContractCheck {
        pass: failures.is_empty(),
        failures,
    }
}

/// Full ε × order grid and slope fits. One trajectory per ε; cells are
/// computed in parallel and reported in (ε descending, order ascending)
/// order.
pub fn order_sweep(config: &DriftConfig) -> Result<DriftReport> {
    config.validate()?;
    if config.eps_grid.len() < MIN_FIT_POINTS {
        return Err(Error::SlopeUndefined(format!(
            "{} eps values, need {MIN_FIT_POINTS}",
            config.eps_grid.len()
        )));
    }
    let start = std::time::Instant::now();
    let eps = config.sorted_eps();
    let orders = config.sorted_orders();
    let per_eps = eps
        .par_iter()
        .map(|&e| run_trajectory(config, e, &orders))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(eps.len() * orders.len());
    for (e, traj) in eps.iter().zip(&per_eps) {
        for (k, d) in orders.iter().zip(&traj.drifts) {
            let valid = traj.energy_drift < 0.1 * d;
            if !valid {
                warn!(
                    "eps = {e}, order {k}: energy drift {:e} vs drift {d:e}",
                    traj.energy_drift
                );
            }
            rows.push(DriftRow {
                eps: *e,
                order: *k,
                drift: *d,
                horizon: config.horizon / e,
                samples: config.samples,
                energy_drift: traj.energy_drift,
                valid,
            });
        }
    }
    let slopes = orders
        .iter()
        .map(|&k| {
            let (es, ds): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.order == k)
                .map(|r| (r.eps, r.drift))
                .unzip();
            fit_slope(k, &es, &ds)
        })
        .collect::<Result<Vec<_>>>()?;
    let contract = check_contract(&rows, &slopes);
    Ok(DriftReport {
        config: config.clone(),
        rows,
        slopes,
        contract,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantEntry {
    pub variant: F2Variant,
    /// `F₂` at the reference point.
    pub f2: f64,
    /// Closed-form `F₂` at the reference point, when the fixture has one.
    pub printed: Option<f64>,
    pub printed_error: Option<f64>,
    /// `|L_Υ F₂ + (2/ω){H,F₁}₁|`.
    pub ty3_residual: f64,
    /// `|L_Υ F₂ + (1/ω){H,F₁}₁|`.
    pub ty3_residual_factor_one: f64,
    /// Order-2 drift per ε (descending), when measured.
    pub drift2: Vec<(f64, f64)>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub reference_point: Vec<f64>,
    pub tolerance: f64,
    pub entries: Vec<VariantEntry>,
    /// Set when exactly one variant passes, or when both pass and agree
    /// (uncoupled systems) in which case the first listed wins.
    pub default: Option<F2Variant>,
    pub indistinguishable: bool,
}

impl VariantComparison {
    pub fn entry(&self, v: F2Variant) -> Option<&VariantEntry> {
        self.entries.iter().find(|e| e.variant == v)
    }

    pub fn require_default(&self) -> Result<F2Variant> {
        self.default.ok_or(Error::NoVariantPasses)
    }
}

/// Tolerance on the printed-term match and on the TY3 residual.
pub const VARIANT_TOL: f64 = 1e-4;

/// Evaluate both `F₂` variants at the configured initial point and, when
/// `with_drift` is set, their order-2 drift over the ε grid.
pub fn compare_variants(config: &DriftConfig, with_drift: bool) -> Result<VariantComparison> {
    config.validate()?;
    let fixture = build_fixture(config)?;
    let m = initial_point(&fixture, config)?;
    let mut entries = with_action(&fixture, config, |action| {
        let c = Construction::with_options(
            action,
            Options {
                strict: config.strict,
                ..Options::default()
            },
        );
        F2Variant::ALL
            .iter()
            .map(|&v| {
                let f2 = c.f2(&m, v)?;
                let res = c.ty3_residuals(&m, v)?;
                let printed = fixture.closed_f2(m.coords());
                let printed_error = printed.map(|p| (p - f2).abs());
                let pass = res.normalized <= VARIANT_TOL
                    && printed_error.map_or(true, |e| e <= VARIANT_TOL);
                Ok(VariantEntry {
                    variant: v,
                    f2,
                    printed,
                    printed_error,
                    ty3_residual: res.normalized,
                    ty3_residual_factor_one: res.factor_one,
                    drift2: Vec::new(),
                    pass,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    if with_drift {
        for e in entries.iter_mut() {
            let cfg = DriftConfig {
                variant: e.variant,
                orders: vec![2],
                ..config.clone()
            };
            let eps = cfg.sorted_eps();
            let d = eps
                .par_iter()
                .map(|&x| run_trajectory(&cfg, x, &[2]).map(|t| (x, t.drifts[0])))
                .collect::<Result<Vec<_>>>()?;
            e.drift2 = d;
        }
    }
    let passing: Vec<F2Variant> = entries
        .iter()
        .filter(|e| e.pass)
        .map(|e| e.variant)
        .collect();
    let indistinguishable = passing.len() == entries.len()
        && entries
            .windows(2)
            .all(|w| (w[0].f2 - w[1].f2).abs() <= VARIANT_TOL);
    let default = match passing.len() {
        1 => Some(passing[0]),
        n if n > 1 && indistinguishable => Some(passing[0]),
        _ => None,
    };
    Ok(VariantComparison {
        reference_point: m.into_coords(),
        tolerance: VARIANT_TOL,
        entries,
        default,
        indistinguishable,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "both" => Ok(OutputFormat::Both),
            other => Err(Error::InvalidParameter(format!(
                "unknown output format '{other}'"
            ))),
        }
    }
}

pub const CSV_HEADER: &str = "eps,order,drift,horizon,samples";

pub fn report_csv(report: &DriftReport) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in &report.rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.eps, r.order, r.drift, r.horizon, r.samples
        ));
    }
    s
}

/// JSON document written next to the CSV table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub drift: DriftReport,
    pub variants: Option<VariantComparison>,
}

pub fn report_json(doc: &ReportDocument) -> Result<String> {
    serde_json::to_string_pretty(doc).map_err(|e| Error::Io(e.to_string()))
}

/// Write `<stem>.csv` and/or `<stem>.json` into `dir`; returns written paths.
pub fn emit(
    doc: &ReportDocument,
    format: OutputFormat,
    dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
        let p = dir.join(format!("{stem}.csv"));
        write_file(&p, report_csv(&doc.drift).as_bytes())?;
        written.push(p);
    }
    if matches!(format, OutputFormat::Json | OutputFormat::Both) {
        let p = dir.join(format!("{stem}.json"));
        let mut text = report_json(doc)?;
        text.push('\n');
        write_file(&p, text.as_bytes())?;
        written.push(p);
    }
    Ok(written)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}
