//! Hypothesis checks and the generic construction of the invariant series
//! `F = J + ε F₁ + ε²/2 F₂`.
//!
//! ```text
//! Θ   = 𝒮(d₁J)
//! K₁  = ½ Σ (Θ_p ∂H/∂q − Θ_q ∂H/∂p)
//! F₁  = −(1/ω) (𝒮({H,J}₁) + ⟨K₁⟩)
//! F₂  = −(2/ω) 𝒮({H,F₁}₁)            (Ai3)
//! F₂  =  (1/ω) 𝒮({H,F₁}₁)            (Ty3)
//! ```
//!
//! `Θ` at each outer orbit node is read off the outer samples (inner grid of
//! `N_inner` points spaced `N_outer/N_inner` apart). Slow gradients of `F₁`
//! use central differences.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::circle::CircleAction;
use crate::error::{ensure_finite, Error, Result};
use crate::phase::{
    canonical_pairing, central_gradient, Frequency, Hamiltonian, Momentum, Observable, PhasePoint,
    SlowFastSystem,
};
use crate::scalar::{seed, Dual};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F2Variant {
    Ai3,
    Ty3,
}

impl fmt::Display for F2Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            F2Variant::Ai3 => "ai3",
            F2Variant::Ty3 => "ty3",
        })
    }
}

impl FromStr for F2Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ai3" => Ok(F2Variant::Ai3),
            "ty3" => Ok(F2Variant::Ty3),
            other => Err(Error::InvalidParameter(format!(
                "unknown F2 variant '{other}'"
            ))),
        }
    }
}

impl F2Variant {
    pub const ALL: [F2Variant; 2] = [F2Variant::Ai3, F2Variant::Ty3];

    /// Multiplier of `𝒮({H,F₁}₁)/ω`.
    fn factor(self) -> f64 {
        match self {
            F2Variant::Ai3 => -2.0,
            F2Variant::Ty3 => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Options {
    /// Enforce the periodicity hypothesis before constructing `F₁`/`F₂`.
    pub strict: bool,
    /// Relative step for slow gradients of `F₁`.
    pub fd_step: f64,
    /// Step in `t` for `L_Υ` by central differences.
    pub lie_step: f64,
    pub periodicity_tol: f64,
    /// Threshold on the estimated finite-difference error of `F₂`.
    pub precision_tol: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            strict: false,
            fd_step: 1e-5,
            lie_step: 1e-4,
            periodicity_tol: 1e-8,
            precision_tol: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn new(residual: f64, tolerance: f64) -> Self {
        CheckResult {
            residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub periodicity: CheckResult,
    pub momentum_map: CheckResult,
    pub adiabatic: CheckResult,
    pub period_energy: CheckResult,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.items().iter().all(|(_, c)| c.pass)
    }

    pub fn items(&self) -> [(&'static str, CheckResult); 4] {
        [
            ("periodicity", self.periodicity),
            ("momentum_map", self.momentum_map),
            ("adiabatic", self.adiabatic),
            ("period_energy", self.period_energy),
        ]
    }

    pub fn failing(&self) -> Vec<&'static str> {
        self.items()
            .iter()
            .filter(|(_, c)| !c.pass)
            .map(|(n, _)| *n)
            .collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖d₀J − d₀H/ω‖` for the system's momentum map.
pub fn check_momentum_map<Sys: SlowFastSystem>(
    action: &CircleAction<'_, Sys>,
    m: &PhasePoint,
    tol: f64,
) -> Result<CheckResult> {
    check_momentum_map_with(action, &Momentum(action.system()), m, tol)
}

/// As [`check_momentum_map`] for an arbitrary candidate `J`.
pub fn check_momentum_map_with<Sys: SlowFastSystem, J: Observable>(
    action: &CircleAction<'_, Sys>,
    j: &J,
    m: &PhasePoint,
    tol: f64,
) -> Result<CheckResult> {
    let space = action.space();
    let sys = action.system();
    let dj = space.grad_fast(j, m)?;
    let dh = space.grad_fast(&Hamiltonian(sys), m)?;
    let om = ensure_finite(sys.frequency(m.coords()), "omega")?;
    let diff: Vec<f64> = dj.iter().zip(&dh).map(|(a, b)| a - b / om).collect();
    Ok(CheckResult::new(norm(&diff), tol))
}

/// `‖⟨d₁J⟩‖`.
pub fn check_adiabatic<Sys: SlowFastSystem>(
    action: &CircleAction<'_, Sys>,
    m: &PhasePoint,
    tol: f64,
) -> Result<CheckResult> {
    check_adiabatic_with(action, &Momentum(action.system()), m, tol)
}

pub fn check_adiabatic_with<Sys: SlowFastSystem, J: Observable>(
    action: &CircleAction<'_, Sys>,
    j: &J,
    m: &PhasePoint,
    tol: f64,
) -> Result<CheckResult> {
    let space = action.space();
    let range = action.system().dims().slow_range();
    let avg = action.average_slow_oneform(|x| space.grad_raw(j, x, range.clone()), m)?;
    Ok(CheckResult::new(norm(&avg), tol))
}

/// Largest 2×2 minor of `(d₀H, d₀ω)`; zero iff the fast gradients are parallel.
pub fn check_period_energy<Sys: SlowFastSystem>(
    action: &CircleAction<'_, Sys>,
    m: &PhasePoint,
    tol: f64,
) -> Result<CheckResult> {
    check_period_energy_with(action, &Frequency(action.system()), m, tol)
}

pub fn check_period_energy_with<Sys: SlowFastSystem, W: Observable>(
    action: &CircleAction<'_, Sys>,
    omega: &W,
    m: &PhasePoint,
    tol: f64,
) -> Result<CheckResult> {
    let space = action.space();
    let dh = space.grad_fast(&Hamiltonian(action.system()), m)?;
    let dw = space.grad_fast(omega, m)?;
    let mut worst = 0.0f64;
    for i in 0..dh.len() {
        for j in i + 1..dh.len() {
            worst = worst.max((dh[i] * dw[j] - dh[j] * dw[i]).abs());
        }
    }
    Ok(CheckResult::new(worst, tol))
}

/// All four hypotheses at `m` with one tolerance.
pub fn check_hypotheses<Sys: SlowFastSystem>(
    action: &CircleAction<'_, Sys>,
    m: &PhasePoint,
    tol: f64,
) -> Result<HypothesisReport> {
    let per = action.check_periodicity(m, tol)?;
    Ok(HypothesisReport {
        periodicity: CheckResult::new(per.residual, tol),
        momentum_map: check_momentum_map(action, m, tol)?,
        adiabatic: check_adiabatic(action, m, tol)?,
        period_energy: check_period_energy(action, m, tol)?,
    })
}

/// `J = (1/ω) ⟨(Fl^t)*η⟩(X_H^(0))` with `η = Σ y dx`, the pullback evaluated
/// through the tangent map of the flow.
pub fn momentum_from_action<Sys: SlowFastSystem>(
    action: &CircleAction<'_, Sys>,
    m: &PhasePoint,
) -> Result<f64> {
    let sys = action.system();
    sys.domain().check(m.coords())?;
    let d = sys.dims();
    let x = m.coords();
    let mut v = vec![0.0; x.len()];
    v[d.fast_range()].copy_from_slice(&action.space().field_fast(m)?);
    let weights = action.outer_weights();
    let mut samples = Vec::with_capacity(weights.len());
    for t in weights.nodes() {
        let val = match action.flow_generic(Dual::constant(t), &seed(x, &v)) {
            Some(img) => (0..d.r)
                .map(|i| img[d.y(i)].re * img[d.x(i)].eps)
                .sum::<f64>(),
            None => {
                let h = 1e-6 * x.iter().fold(1.0f64, |a, b| a.max(b.abs()));
                let plus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
                let minus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
                let base = action.flow_raw(t, x)?;
                let fp = action.flow_raw(t, &plus)?;
                let fm = action.flow_raw(t, &minus)?;
                (0..d.r)
                    .map(|i| base[d.y(i)] * (fp[d.x(i)] - fm[d.x(i)]) / (2.0 * h))
                    .sum::<f64>()
            }
        };
        samples.push(val);
    }
    let om = sys.frequency(x);
    ensure_finite(weights.average(&samples) / om, "J from action")
}

/// Generic construction of `Θ`, `K₁`, `F₁`, `F₂` over one circle action.
pub struct Construction<'c, 'a, Sys> {
    action: &'c CircleAction<'a, Sys>,
    options: Options,
}

/// Orbit data shared by `K₁` and `F₁` at one base point.
struct FirstOrder {
    s_bracket: f64,
    mean_k1: f64,
    k1_base: f64,
    theta_base: Vec<f64>,
}

impl<'c, 'a, Sys: SlowFastSystem> Construction<'c, 'a, Sys> {
    pub fn new(action: &'c CircleAction<'a, Sys>) -> Self {
        Construction {
            action,
            options: Options::default(),
        }
    }

    pub fn with_options(action: &'c CircleAction<'a, Sys>, options: Options) -> Self {
        Construction { action, options }
    }

    pub fn action(&self) -> &'c CircleAction<'a, Sys> {
        self.action
    }

    pub fn options(&self) -> Options {
        self.options
    }

    fn admit(&self, m: &PhasePoint) -> Result<()> {
        self.action.system().domain().check(m.coords())?;
        if self.options.strict {
            let p = self
                .action
                .check_periodicity(m, self.options.periodicity_tol)?;
            if !p.pass {
                return Err(Error::HypothesisViolation(format!(
                    "periodicity residual {:e} > {:e}",
                    p.residual, p.tolerance
                )));
            }
        }
        Ok(())
    }

    fn first_order(&self, x: &[f64]) -> Result<FirstOrder> {
        let action = self.action;
        let sys = action.system();
        let space = action.space();
        let d = sys.dims();
        let (k, slow) = (d.k, d.slow_range());
        let pts = action.orbit_raw(x)?;
        let n = pts.len();
        let inner = action.inner_weights();
        let stride = n / inner.len();
        let mut grad_h = Vec::with_capacity(n);
        let mut cols = vec![Vec::with_capacity(n); 2 * k];
        let mut brackets = Vec::with_capacity(n);
        for p in pts.iter() {
            let gh = space.grad_raw(&Hamiltonian(sys), p, slow.clone());
            let gj = space.grad_raw(&Momentum(sys), p, slow.clone());
            brackets.push(canonical_pairing(&gh, &gj, k));
            for (c, v) in cols.iter_mut().zip(&gj) {
                c.push(*v);
            }
            grad_h.push(gh);
        }
        let mut k1 = Vec::with_capacity(n);
        let mut theta_base = Vec::new();
        for (j, gh) in grad_h.iter().enumerate() {
            let theta: Vec<f64> = cols
                .iter()
                .map(|c| inner.integrate_strided(c, j, stride))
                .collect();
            k1.push(0.5 * canonical_pairing(&theta, gh, k));
            if j == 0 {
                theta_base = theta;
            }
        }
        let out = FirstOrder {
            s_bracket: action.outer_weights().integrate(&brackets),
            mean_k1: action.outer_weights().average(&k1),
            k1_base: k1[0],
            theta_base,
        };
        ensure_finite(out.s_bracket, "S({H,J}_1)")?;
        ensure_finite(out.mean_k1, "<K1>")?;
        Ok(out)
    }

    /// `Θ = 𝒮(d₁J)` at `m` on the inner grid.
    pub fn theta(&self, m: &PhasePoint) -> Result<Vec<f64>> {
        self.admit(m)?;
        Ok(self.first_order(m.coords())?.theta_base)
    }

    /// `K₁(m)`.
    pub fn k1(&self, m: &PhasePoint) -> Result<f64> {
        self.admit(m)?;
        Ok(self.first_order(m.coords())?.k1_base)
    }

    pub(crate) fn f1_raw(&self, x: &[f64]) -> Result<f64> {
        let fo = self.first_order(x)?;
        let om = self.action.system().frequency(x);
        ensure_finite(-(fo.s_bracket + fo.mean_k1) / om, "F1")
    }

    pub fn f1(&self, m: &PhasePoint) -> Result<f64> {
        self.admit(m)?;
        self.f1_raw(m.coords())
    }

    fn grad_slow_f1(&self, x: &[f64]) -> Result<Vec<f64>> {
        let range = self.action.system().dims().slow_range();
        let mut failure = None;
        let g = central_gradient(
            |v: &[f64]| match self.f1_raw(v) {
                Ok(f) => f,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            x,
            range,
            self.options.fd_step,
        );
        match failure {
            Some(e) => Err(e),
            None => Ok(g),
        }
    }

    /// `{H, F₁}₁` at a raw point.
    pub(crate) fn bracket_h_f1_raw(&self, x: &[f64]) -> Result<f64> {
        let sys = self.action.system();
        let d = sys.dims();
        let gh = self
            .action
            .space()
            .grad_raw(&Hamiltonian(sys), x, d.slow_range());
        let gf = self.grad_slow_f1(x)?;
        ensure_finite(canonical_pairing(&gh, &gf, d.k), "{H,F1}_1")
    }

    /// `𝒮({H,F₁}₁)/ω` and a rounding-noise estimate for it.
    fn s_bracket_h_f1(&self, x: &[f64]) -> Result<(f64, f64)> {
        let action = self.action;
        let sys = action.system();
        let d = sys.dims();
        let pts = action.orbit_raw(x)?;
        let mut b = Vec::with_capacity(pts.len());
        let mut noise = 0.0;
        let w = action.outer_weights().weights();
        for (p, wj) in pts.iter().zip(w) {
            let gh = action
                .space()
                .grad_raw(&Hamiltonian(sys), p, d.slow_range());
            let gf = self.grad_slow_f1(p)?;
            b.push(canonical_pairing(&gh, &gf, d.k));
            let f_scale = self.f1_raw(p)?.abs().max(1.0);
            let scale = p.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            let per_component = 1e3 * f64::EPSILON * f_scale / (self.options.fd_step * scale);
            noise += wj.abs() * gh.iter().map(|g| g.abs()).sum::<f64>() * per_component;
        }
        let om = sys.frequency(x);
        let s = ensure_finite(action.outer_weights().integrate(&b) / om, "S({H,F1}_1)")?;
        Ok((s, noise / om.abs()))
    }

    pub(crate) fn f2_raw(&self, x: &[f64], variant: F2Variant) -> Result<f64> {
        let (s, noise) = self.s_bracket_h_f1(x)?;
        let estimate = noise * variant.factor().abs();
        if estimate > self.options.precision_tol {
            return Err(Error::PrecisionWarning { estimate });
        }
        Ok(variant.factor() * s)
    }

    pub fn f2(&self, m: &PhasePoint, variant: F2Variant) -> Result<f64> {
        self.admit(m)?;
        self.f2_raw(m.coords(), variant)
    }

    /// Difference between `F₂` computed with the configured step and with
    /// twice that step; a practical bound on the finite-difference error.
    pub fn f2_step_sensitivity(&self, m: &PhasePoint, variant: F2Variant) -> Result<f64> {
        self.admit(m)?;
        let a = self.f2_raw(m.coords(), variant)?;
        let coarse = Construction {
            action: self.action,
            options: Options {
                fd_step: 2.0 * self.options.fd_step,
                ..self.options
            },
        };
        let b = coarse.f2_raw(m.coords(), variant)?;
        Ok((a - b).abs())
    }

    fn lie_t(&self, f: impl Fn(&[f64]) -> Result<f64>, x: &[f64]) -> Result<f64> {
        let h = self.options.lie_step;
        let plus = self.action.flow_raw(h, x)?;
        let minus = self.action.flow_raw(-h, x)?;
        Ok((f(&plus)? - f(&minus)?) / (2.0 * h))
    }

    /// `|L_Υ F₁ + (1/ω){H,J}₁|`.
    pub fn ty2_residual(&self, m: &PhasePoint) -> Result<f64> {
        self.admit(m)?;
        let x = m.coords();
        let sys = self.action.system();
        let lie = self.lie_t(|v| self.f1_raw(v), x)?;
        let hj = self
            .action
            .space()
            .bracket1_raw(&Hamiltonian(sys), &Momentum(sys), x);
        ensure_finite((lie + hj / sys.frequency(x)).abs(), "TY2 residual")
    }

    /// Second-order homological residuals of `F₂`:
    /// `|L_Υ F₂ + (2/ω){H,F₁}₁|` (consistent with the `ε²/2` normalisation)
    /// and `|L_Υ F₂ + (1/ω){H,F₁}₁|` (factor one).
    pub fn ty3_residuals(&self, m: &PhasePoint, variant: F2Variant) -> Result<Ty3Residuals> {
        self.admit(m)?;
        let x = m.coords();
        let lie = self.lie_t(|v| self.f2_raw(v, variant), x)?;
        let hf = self.bracket_h_f1_raw(x)? / self.action.system().frequency(x);
        Ok(Ty3Residuals {
            normalized: (lie + 2.0 * hf).abs(),
            factor_one: (lie + hf).abs(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ty3Residuals {
    pub normalized: f64,
    pub factor_one: f64,
}

/// Values of the three terms at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesTerms {
    pub j: f64,
    pub f1: Option<f64>,
    pub f2: Option<f64>,
}

impl SeriesTerms {
    pub fn evaluate(&self, eps: f64) -> f64 {
        self.j + eps * self.f1.unwrap_or(0.0) + 0.5 * eps * eps * self.f2.unwrap_or(0.0)
    }
}

type Memo = Mutex<HashMap<Vec<u64>, f64>>;
const MEMO_LIMIT: usize = 1 << 16;

/// `J + ε F₁ + ε²/2 F₂` truncated at `order`, with memoised `F₁`/`F₂`.
pub struct InvariantSeries<'c, 'a, Sys> {
    construction: Construction<'c, 'a, Sys>,
    order: usize,
    variant: F2Variant,
    f1_memo: Memo,
    f2_memo: Memo,
}

/// Series of the given order over `action`.
pub fn assemble<'c, 'a, Sys: SlowFastSystem>(
    action: &'c CircleAction<'a, Sys>,
    order: usize,
    variant: F2Variant,
    options: Options,
) -> Result<InvariantSeries<'c, 'a, Sys>> {
    if order > 2 {
        return Err(Error::UnsupportedOrder(order));
    }
    Ok(InvariantSeries {
        construction: Construction::with_options(action, options),
        order,
        variant,
        f1_memo: Mutex::new(HashMap::new()),
        f2_memo: Mutex::new(HashMap::new()),
    })
}

fn memoized(memo: &Memo, x: &[f64], f: impl FnOnce() -> Result<f64>) -> Result<f64> {
    let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
    if let Some(v) = memo.lock().expect("memo poisoned").get(&key) {
        return Ok(*v);
    }
    let v = f()?;
    let mut guard = memo.lock().expect("memo poisoned");
    if guard.len() >= MEMO_LIMIT {
        guard.clear();
    }
    guard.insert(key, v);
    Ok(v)
}

impl<'c, 'a, Sys: SlowFastSystem> InvariantSeries<'c, 'a, Sys> {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn variant(&self) -> F2Variant {
        self.variant
    }

    pub fn construction(&self) -> &Construction<'c, 'a, Sys> {
        &self.construction
    }

    /// Terms up to the series order, at a point that need not lie in the
    /// validity box (trajectories may leave it slightly).
    pub fn terms_raw(&self, x: &[f64]) -> Result<SeriesTerms> {
        let sys = self.construction.action.system();
        let j = ensure_finite(sys.momentum(x), "J")?;
        let f1 = if self.order >= 1 {
            Some(memoized(&self.f1_memo, x, || self.construction.f1_raw(x))?)
        } else {
            None
        };
        let f2 = if self.order >= 2 {
            Some(memoized(&self.f2_memo, x, || {
                self.construction.f2_raw(x, self.variant)
            })?)
        } else {
            None
        };
        Ok(SeriesTerms { j, f1, f2 })
    }

    pub fn terms(&self, m: &PhasePoint) -> Result<SeriesTerms> {
        self.construction.admit(m)?;
        self.terms_raw(m.coords())
    }

    pub fn evaluate(&self, m: &PhasePoint, eps: f64) -> Result<f64> {
        Ok(self.terms(m)?.evaluate(eps))
    }

    /// `L_{X_H} F` for the series at `ε`, gradient by central differences.
    pub fn lie_derivative(&self, m: &PhasePoint, eps: f64, step: f64) -> Result<f64> {
        self.construction.admit(m)?;
        let x = m.coords();
        let mut failure = None;
        let g = central_gradient(
            |v: &[f64]| match self.construction_terms(v) {
                Ok(t) => t.evaluate(eps),
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            x,
            0..x.len(),
            step,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let field = self.construction.action.space().field_full(m, eps)?;
        ensure_finite(g.iter().zip(&field).map(|(a, b)| a * b).sum(), "L_X F")
    }

    /// Unmemoised terms, used for finite-difference stencils.
    fn construction_terms(&self, x: &[f64]) -> Result<SeriesTerms> {
        let c = &self.construction;
        let j = c.action.system().momentum(x);
        let f1 = if self.order >= 1 {
            Some(c.f1_raw(x)?)
        } else {
            None
        };
        let f2 = if self.order >= 2 {
            Some(c.f2_raw(x, self.variant)?)
        } else {
            None
        };
        Ok(SeriesTerms { j, f1, f2 })
    }
}

/// `L_{X_H} F = dF · (X_H^(0) + ε X_H^(1))` for a dual-liftable `F`.
pub fn lie_derivative<Sys: SlowFastSystem, F: Observable>(
    action: &CircleAction<'_, Sys>,
    f: &F,
    m: &PhasePoint,
    eps: f64,
) -> Result<f64> {
    let space = action.space();
    let field = space.field_full(m, eps)?;
    ensure_finite(space.engine().directional(f, m.coords(), &field), "L_X F")
}
