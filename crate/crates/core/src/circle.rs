//! The circle action generated by `Υ = X_H^(0)/ω` and the two operators built
//! on it: the average `⟨f⟩` and the integrating operator `𝒮(f)`.
//!
//! Both are evaluated on `N` equispaced orbit samples `f(Fl^{2πj/N} m)`.
//! `⟨f⟩` is the mean; `𝒮(f)` is the discrete form of `Σ_{n≠0} f̂_n/(in)`,
//! which reduces to fixed real weights
//!
//! ```text
//! w_j = −(2/N) Σ_{n=1}^{N/2−1} sin(n t_j) / n
//! ```
//!
//! (the Nyquist mode has no odd part and drops out). Because the weights are
//! linear, the same code runs on dual numbers.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::integrators::{integrate, IntegratorConfig};
use crate::phase::{Observable, PhasePoint, PhaseSpace, SlowFastSystem};
use crate::scalar::Real;

/// How `Fl^t_Υ` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FlowMode {
    /// Closed-form fast flow supplied by the system.
    Analytic,
    /// Adaptive integration of `Υ` at the given relative tolerance.
    Numeric { rtol: f64 },
}

impl FlowMode {
    pub fn numeric() -> Self {
        FlowMode::Numeric { rtol: 1e-11 }
    }
}

/// Sample counts for the outer orbit and the inner (nested) orbit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub outer: usize,
    pub inner: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            outer: 64,
            inner: 32,
        }
    }
}

impl QuadratureConfig {
    /// Both counts must be powers of two `≥ 4`; `inner` must divide `outer`
    /// because inner samples are read off the outer orbit.
    pub fn new(outer: usize, inner: usize) -> Result<Self> {
        for (name, n) in [("outer", outer), ("inner", inner)] {
            if n < 4 || !n.is_power_of_two() {
                return Err(Error::InvalidParameter(format!(
                    "{name} node count must be a power of two >= 4, got {n}"
                )));
            }
        }
        if inner > outer {
            return Err(Error::InvalidParameter(format!(
                "inner node count {inner} exceeds outer {outer}"
            )));
        }
        Ok(QuadratureConfig { outer, inner })
    }
}

/// Weights of `⟨·⟩` and `𝒮` for `n` equispaced samples on `[0, 2π)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralWeights {
    n: usize,
    s: Vec<f64>,
}

impl SpectralWeights {
    pub fn new(n: usize) -> Self {
        let s = (0..n)
            .map(|j| {
                let t = TAU * j as f64 / n as f64;
                let sum: f64 = (1..n / 2).map(|k| (k as f64 * t).sin() / k as f64).sum();
                -2.0 * sum / n as f64
            })
            .collect();
        SpectralWeights { n, s }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |j| TAU * j as f64 / self.n as f64)
    }

    pub fn weights(&self) -> &[f64] {
        &self.s
    }

    pub fn average<S: Real>(&self, values: &[S]) -> S {
        let mut acc = S::zero();
        for v in values {
            acc += *v;
        }
        acc / self.n as f64
    }

    pub fn integrate<S: Real>(&self, values: &[S]) -> S {
        let mut acc = S::zero();
        for (v, w) in values.iter().zip(&self.s) {
            acc += *v * *w;
        }
        acc
    }

    /// `𝒮` at the orbit point with outer index `start`, reading this
    /// (coarser) grid out of outer samples spaced `stride` apart.
    pub fn integrate_strided(&self, outer: &[f64], start: usize, stride: usize) -> f64 {
        let len = outer.len();
        self.s
            .iter()
            .enumerate()
            .map(|(i, w)| w * outer[(start + i * stride) % len])
            .sum()
    }
}

/// Values of a scalar along one orbit, with the flowed points.
#[derive(Clone, Debug)]
pub struct OrbitSamples {
    pub base: Vec<f64>,
    pub points: Arc<Vec<Vec<f64>>>,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicityCheck {
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

type OrbitCache = Mutex<HashMap<Vec<u64>, Arc<Vec<Vec<f64>>>>>;

const CACHE_LIMIT: usize = 4096;

pub struct CircleAction<'a, Sys> {
    space: PhaseSpace<'a, Sys>,
    mode: FlowMode,
    quad: QuadratureConfig,
    outer: SpectralWeights,
    inner: SpectralWeights,
    cache: OrbitCache,
}

impl<'a, Sys: SlowFastSystem> CircleAction<'a, Sys> {
    /// Analytic flow when the system provides one, numeric otherwise;
    /// default quadrature.
    pub fn new(system: &'a Sys) -> Self {
        let mode = if system.has_fast_flow() {
            FlowMode::Analytic
        } else {
            FlowMode::numeric()
        };
        Self::build(PhaseSpace::new(system), mode, QuadratureConfig::default())
    }

    pub fn with_config(
        space: PhaseSpace<'a, Sys>,
        mode: FlowMode,
        quad: QuadratureConfig,
    ) -> Result<Self> {
        if mode == FlowMode::Analytic && !space.system().has_fast_flow() {
            return Err(Error::InvalidParameter(
                "system has no analytic fast flow".into(),
            ));
        }
        if let FlowMode::Numeric { rtol } = mode {
            if !(rtol > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "rtol must be > 0, got {rtol}"
                )));
            }
        }
        let quad = QuadratureConfig::new(quad.outer, quad.inner)?;
        Ok(Self::build(space, mode, quad))
    }

    fn build(space: PhaseSpace<'a, Sys>, mode: FlowMode, quad: QuadratureConfig) -> Self {
        CircleAction {
            space,
            mode,
            quad,
            outer: SpectralWeights::new(quad.outer),
            inner: SpectralWeights::new(quad.inner),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn space(&self) -> &PhaseSpace<'a, Sys> {
        &self.space
    }

    pub fn system(&self) -> &'a Sys {
        self.space.system()
    }

    pub fn mode(&self) -> FlowMode {
        self.mode
    }

    pub fn quadrature(&self) -> QuadratureConfig {
        self.quad
    }

    pub fn outer_weights(&self) -> &SpectralWeights {
        &self.outer
    }

    pub fn inner_weights(&self) -> &SpectralWeights {
        &self.inner
    }

    /// `Fl^t_Υ(m)`.
    pub fn flow(&self, t: f64, m: &PhasePoint) -> Result<PhasePoint> {
        self.system().domain().check(m.coords())?;
        let x = self.flow_raw(t, m.coords())?;
        PhasePoint::from_coords(m.dims(), x)
    }

    /// Analytic flow lifted to any scalar type; `None` in numeric mode.
    pub fn flow_generic<S: Real>(&self, t: S, x: &[S]) -> Option<Vec<S>> {
        if self.mode != FlowMode::Analytic {
            return None;
        }
        let sys = self.system();
        let tau = t / sys.frequency(x);
        sys.fast_flow(tau, x)
    }

    pub(crate) fn flow_raw(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        match self.mode {
            FlowMode::Analytic => {
                let y = self
                    .flow_generic(t, x)
                    .ok_or_else(|| Error::InvalidParameter("analytic flow unavailable".into()))?;
                for v in &y {
                    ensure_finite(*v, "Fl^t")?;
                }
                Ok(y)
            }
            FlowMode::Numeric { rtol } => {
                if t == 0.0 {
                    return Ok(x.to_vec());
                }
                let traj = integrate(
                    |s: &[f64], out: &mut [f64]| self.upsilon(s, out),
                    x,
                    t,
                    &[t],
                    &Self::numeric_config(rtol),
                )?;
                Ok(traj
                    .states
                    .into_iter()
                    .next()
                    .expect("one sample requested"))
            }
        }
    }

    fn numeric_config(rtol: f64) -> IntegratorConfig {
        IntegratorConfig::adaptive(rtol, rtol * 1e-2)
    }

    fn upsilon(&self, x: &[f64], out: &mut [f64]) {
        let d = self.system().dims();
        let omega = self.system().frequency(x);
        let v = self.space.field_fast_raw(x);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (o, vi) in out[d.fast_range()].iter_mut().zip(v) {
            *o = vi / omega;
        }
    }

    /// `Υ(m)` in full block layout (slow part zero).
    pub fn generator(&self, m: &PhasePoint) -> Result<Vec<f64>> {
        self.system().domain().check(m.coords())?;
        let mut out = vec![0.0; m.coords().len()];
        self.upsilon(m.coords(), &mut out);
        for v in &out {
            ensure_finite(*v, "Υ")?;
        }
        Ok(out)
    }

    /// Points `Fl^{2πj/N}(x)` for the outer grid.
    pub(crate) fn orbit_raw(&self, x: &[f64]) -> Result<Arc<Vec<Vec<f64>>>> {
        match self.mode {
            FlowMode::Analytic => {
                let pts = self
                    .outer
                    .nodes()
                    .map(|t| self.flow_raw(t, x))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Arc::new(pts))
            }
            FlowMode::Numeric { rtol } => {
                let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
                if let Some(hit) = self.cache.lock().expect("orbit cache poisoned").get(&key) {
                    return Ok(Arc::clone(hit));
                }
                let times: Vec<f64> = self.outer.nodes().collect();
                let traj = integrate(
                    |s: &[f64], out: &mut [f64]| self.upsilon(s, out),
                    x,
                    times[times.len() - 1],
                    &times,
                    &Self::numeric_config(rtol),
                )?;
                let pts = Arc::new(traj.states);
                let mut cache = self.cache.lock().expect("orbit cache poisoned");
                if cache.len() >= CACHE_LIMIT {
                    cache.clear();
                }
                cache.insert(key, Arc::clone(&pts));
                Ok(pts)
            }
        }
    }

    pub fn orbit<F: Observable>(&self, f: &F, m: &PhasePoint) -> Result<OrbitSamples> {
        self.system().domain().check(m.coords())?;
        let points = self.orbit_raw(m.coords())?;
        let values = points
            .iter()
            .map(|p| ensure_finite(f.eval(p.as_slice()), "orbit sample"))
            .collect::<Result<Vec<_>>>()?;
        Ok(OrbitSamples {
            base: m.coords().to_vec(),
            points,
            values,
        })
    }

    /// `‖Fl^{2π}(m) − m‖` against `tol`.
    pub fn check_periodicity(&self, m: &PhasePoint, tol: f64) -> Result<PeriodicityCheck> {
        self.system().domain().check(m.coords())?;
        let end = self.flow_raw(TAU, m.coords())?;
        let residual = norm_diff(&end, m.coords());
        Ok(PeriodicityCheck {
            residual,
            tolerance: tol,
            pass: residual <= tol,
        })
    }

    pub fn average_scalar<F: Observable>(&self, f: &F, m: &PhasePoint) -> Result<f64> {
        let o = self.orbit(f, m)?;
        ensure_finite(self.outer.average(&o.values), "<f>")
    }

    pub fn s_scalar<F: Observable>(&self, f: &F, m: &PhasePoint) -> Result<f64> {
        let o = self.orbit(f, m)?;
        ensure_finite(self.outer.integrate(&o.values), "S(f)")
    }

    /// `𝒮(g)`, the zero-mean solution of `L_Υ u = g − ⟨g⟩`.
    pub fn solve_homological<F: Observable>(&self, g: &F, m: &PhasePoint) -> Result<f64> {
        self.s_scalar(g, m)
    }

    /// Componentwise `⟨·⟩` of a slow-component 1-form given by its
    /// coefficient functions.
    pub fn average_slow_oneform<C>(&self, coeffs: C, m: &PhasePoint) -> Result<Vec<f64>>
    where
        C: Fn(&[f64]) -> Vec<f64>,
    {
        self.oneform_op(coeffs, m, |w, v| w.average(v))
    }

    /// Componentwise `𝒮` of a slow-component 1-form.
    pub fn s_slow_oneform<C>(&self, coeffs: C, m: &PhasePoint) -> Result<Vec<f64>>
    where
        C: Fn(&[f64]) -> Vec<f64>,
    {
        self.oneform_op(coeffs, m, |w, v| w.integrate(v))
    }

    fn oneform_op<C, Op>(&self, coeffs: C, m: &PhasePoint, op: Op) -> Result<Vec<f64>>
    where
        C: Fn(&[f64]) -> Vec<f64>,
        Op: Fn(&SpectralWeights, &[f64]) -> f64,
    {
        self.system().domain().check(m.coords())?;
        let k2 = self.system().dims().slow_len();
        let points = self.orbit_raw(m.coords())?;
        let mut columns = vec![Vec::with_capacity(points.len()); k2];
        for p in points.iter() {
            let c = coeffs(p);
            if c.len() != k2 {
                return Err(Error::InvalidParameter(format!(
                    "slow 1-form has {} components, expected {k2}",
                    c.len()
                )));
            }
            for (col, v) in columns.iter_mut().zip(c) {
                col.push(v);
            }
        }
        columns
            .iter()
            .map(|col| ensure_finite(op(&self.outer, col), "slow 1-form operator"))
            .collect()
    }

    /// `L_Υ f` at `x` by a central difference in `t`.
    pub fn lie_derivative_t<F: Fn(&[f64]) -> f64>(&self, f: F, x: &[f64], h: f64) -> Result<f64> {
        let plus = self.flow_raw(h, x)?;
        let minus = self.flow_raw(-h, x)?;
        ensure_finite((f(&plus) - f(&minus)) / (2.0 * h), "L_Υ f")
    }
}

pub(crate) fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(n: usize, f: impl Fn(f64) -> f64) -> (SpectralWeights, Vec<f64>) {
        let w = SpectralWeights::new(n);
        let v = w.nodes().map(f).collect();
        (w, v)
    }

    #[test]
    fn sine_profile_integrates_to_minus_one() {
        let (w, v) = profile(64, f64::sin);
        assert!((w.integrate(&v) + 1.0).abs() < 1e-13);
        assert!(w.average(&v).abs() < 1e-15);
    }

    #[test]
    fn cosine_and_constant_profiles() {
        let (w, v) = profile(64, f64::cos);
        assert!(w.integrate(&v).abs() < 1e-13);
        let (w, v) = profile(16, |_| 3.5);
        assert!(w.integrate(&v).abs() < 1e-13);
        assert!((w.average(&v) - 3.5).abs() < 1e-15);
    }

    #[test]
    fn trig_polynomials_match_kernel_integral() {
        // (1/2π)∫(t−π) e^{int} dt = 1/(in): sin(nt) -> -1/n, cos(nt) -> 0
        for n in 1..7 {
            let (w, v) = profile(16, |t| (n as f64 * t).sin() + 2.0 * (n as f64 * t).cos());
            assert!((w.integrate(&v) + 1.0 / n as f64).abs() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn strided_matches_direct() {
        let outer = SpectralWeights::new(64);
        let inner = SpectralWeights::new(16);
        let f = |t: f64| (t + 0.3).sin() * 2.0 + (2.0 * t).cos();
        let samples: Vec<f64> = outer.nodes().map(f).collect();
        for start in [0, 5, 63] {
            let shift = TAU * start as f64 / 64.0;
            let direct: Vec<f64> = inner.nodes().map(|t| f(t + shift)).collect();
            let a = inner.integrate(&direct);
            let b = inner.integrate_strided(&samples, start, 4);
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn quadrature_config_validation() {
        assert!(QuadratureConfig::new(64, 32).is_ok());
        assert!(QuadratureConfig::new(48, 16).is_err());
        assert!(QuadratureConfig::new(16, 32).is_err());
        assert!(QuadratureConfig::new(2, 2).is_err());
    }
}
