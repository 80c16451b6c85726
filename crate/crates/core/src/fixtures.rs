//! Built-in systems with known answers.
//!
//! * `elastic_pendulum`: `H = ½(p² + q²) + ½(y² + Ω²x² + γq²x)`, constant
//!   frequency `Ω`, with closed-form `J`, `F₁` and `F₂`.
//! * `charged_particle`: guiding-centre motion in a slowly contracting
//!   force-free field. Fast pair `(p₃, q₃)`, slow pair `(p₂, q₂)`; state
//!   layout `(p₃, q₃, p₂, q₂)`. Closed-form `J` and `J₁`.
//! * `harmonic_oscillator`: decoupled fast oscillator, `J = H_fast/ω₀`.
//! * `quadratic_benchmark`: the exponential `sl(2)` family.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::{Dims, Domain, PhasePoint, SlowFastSystem};
use crate::quadratic::{ExpBenchmark, QuadraticSystem};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct ElasticPendulum {
    pub big_omega: f64,
    pub gamma: f64,
    /// Multiplies the reported frequency only. `1` is the real system; any
    /// other value corrupts `ω` for negative tests.
    pub omega_scale: f64,
    domain: Domain,
}

impl ElasticPendulum {
    pub fn new(big_omega: f64, gamma: f64) -> Result<Self> {
        Self::with_omega_scale(big_omega, gamma, 1.0)
    }

    pub fn with_omega_scale(big_omega: f64, gamma: f64, omega_scale: f64) -> Result<Self> {
        if !(big_omega > 0.0 && big_omega.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Omega must be > 0, got {big_omega}"
            )));
        }
        if !gamma.is_finite() || !(omega_scale > 0.0) {
            return Err(Error::InvalidParameter(
                "gamma must be finite and omega_scale > 0".into(),
            ));
        }
        Ok(ElasticPendulum {
            big_omega,
            gamma,
            omega_scale,
            domain: Domain::new(vec![-1.5; 4], vec![1.5; 4]),
        })
    }

    /// Shifted fast coordinate `ξ = x + γq²/2Ω²`.
    fn xi<S: Real>(&self, x: S, q: S) -> S {
        x + q * q * (self.gamma / (2.0 * self.big_omega * self.big_omega))
    }

    /// `F₁ = γ p q y / Ω³`.
    pub fn f1_closed(&self, m: &[f64]) -> f64 {
        let (y, p, q) = (m[0], m[2], m[3]);
        self.gamma * p * q * y / self.big_omega.powi(3)
    }

    /// `F₂`, twice the printed `ε²/2` coefficient.
    pub fn f2_closed(&self, m: &[f64]) -> f64 {
        let (y, x, p, q) = (m[0], m[1], m[2], m[3]);
        let (om, g) = (self.big_omega, self.gamma);
        let om2 = om * om;
        let xi = self.xi(x, q);
        let bracket = g * q * q * xi * (x - 3.0 * g * q * q / (2.0 * om2))
            + 4.0 * (q * q - p * p) * xi
            - g / om2 * q * q * y * y;
        2.0 * g / (4.0 * om.powi(3)) * bracket
    }
}

impl SlowFastSystem for ElasticPendulum {
    fn dims(&self) -> Dims {
        Dims::new(1, 1)
    }

    fn hamiltonian<S: Real>(&self, m: &[S]) -> S {
        let (y, x, p, q) = (m[0], m[1], m[2], m[3]);
        let om2 = self.big_omega * self.big_omega;
        (p * p + q * q) * 0.5 + (y * y + x * x * om2 + q * q * x * self.gamma) * 0.5
    }

    fn frequency<S: Real>(&self, _m: &[S]) -> S {
        S::cst(self.big_omega * self.omega_scale)
    }

    fn momentum<S: Real>(&self, m: &[S]) -> S {
        let (y, x, q) = (m[0], m[1], m[3]);
        let xi = self.xi(x, q);
        xi * xi * (self.big_omega * 0.5) + y * y / (2.0 * self.big_omega)
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn has_fast_flow(&self) -> bool {
        true
    }

    /// Rotation about the shifted centre `x₀ = −γq²/2Ω²` by `Ωτ`.
    fn fast_flow<S: Real>(&self, tau: S, m: &[S]) -> Option<Vec<S>> {
        let (y, x, q) = (m[0], m[1], m[3]);
        let om = self.big_omega;
        let (s, c) = (tau * om).sin_cos();
        let xi = self.xi(x, q);
        let xi1 = xi * c + y * s / om;
        let y1 = y * c - xi * s * om;
        let shift = xi - x;
        Some(vec![y1, xi1 - shift, m[2], m[3]])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChargedParticle {
    pub b: f64,
    pub lambda: f64,
    /// See [`ElasticPendulum::omega_scale`].
    pub omega_scale: f64,
    domain: Domain,
}

impl ChargedParticle {
    pub fn new(b: f64, lambda: f64) -> Result<Self> {
        Self::with_omega_scale(b, lambda, 1.0)
    }

    pub fn with_omega_scale(b: f64, lambda: f64, omega_scale: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidParameter(format!("B must be > 0, got {b}")));
        }
        if !lambda.is_finite() || !(omega_scale > 0.0) {
            return Err(Error::InvalidParameter(
                "lambda must be finite and omega_scale > 0".into(),
            ));
        }
        Ok(ChargedParticle {
            b,
            lambda,
            omega_scale,
            // (p3, q3, p2, q2)
            domain: Domain::new(vec![-1.0, -1.0, -1.0, 0.5], vec![1.0, 1.0, 1.0, 2.0]),
        })
    }

    /// True gyro-frequency `√(B²q₂⁴ + λ²)/q₂²`.
    fn omega_true<S: Real>(&self, q2: S) -> S {
        let q4 = q2.powi(4);
        (q4 * (self.b * self.b) + self.lambda * self.lambda).sqrt() / (q2 * q2)
    }

    /// The closed-form first correction `J₁`.
    pub fn j1_closed(&self, m: &[f64]) -> f64 {
        let (p3, q3, p2, q2) = (m[0], m[1], m[2], m[3]);
        let (b, l) = (self.b, self.lambda);
        let w = self.omega_true(q2);
        let poly = p2 * p3 * q2.powi(9) * b.powi(4)
            + l * q2.powi(4) * (l * l * p3 * p3 - 2.0 * p2 * p2 * q2 * q2) * b * b
            + l.powi(3) * (q3 * q3 + (p2 * q2 + l * p3).powi(2));
        -q3 / (q2.powi(10) * w.powi(5)) * poly
    }

    /// `|J − v⊥²/(2|B|)|` where `|B| = ω` is the local field strength,
    /// `v⊥² = 2H − v∥²` and `v∥² = p₂²B²q₂⁴/(B²q₂⁴ + λ²)` is the parallel
    /// kinetic energy at the gyration centre.
    pub fn transverse_momentum_residual(&self, m: &[f64]) -> f64 {
        let (p2, q2) = (m[2], m[3]);
        let b2q4 = self.b * self.b * q2.powi(4);
        let v_par2 = p2 * p2 * b2q4 / (b2q4 + self.lambda * self.lambda);
        let v_perp2 = 2.0 * self.hamiltonian(m) - v_par2;
        (self.momentum(m) - v_perp2 / (2.0 * self.omega_true(q2))).abs()
    }
}

impl SlowFastSystem for ChargedParticle {
    fn dims(&self) -> Dims {
        Dims::new(1, 1)
    }

    fn hamiltonian<S: Real>(&self, m: &[S]) -> S {
        let (p3, q3, p2, q2) = (m[0], m[1], m[2], m[3]);
        let (b, l) = (self.b, self.lambda);
        let q22 = q2 * q2;
        (p2 * p2
            + p3 * p3 * (q22 * (b * b) + q22.recip() * (l * l))
            + p2 * p3 * (2.0 * l) / q2
            + q3 * q3 / q22)
            * 0.5
    }

    fn frequency<S: Real>(&self, m: &[S]) -> S {
        self.omega_true(m[3]) * self.omega_scale
    }

    fn momentum<S: Real>(&self, m: &[S]) -> S {
        let (p3, q3, p2, q2) = (m[0], m[1], m[2], m[3]);
        let w = self.omega_true(q2);
        let q22 = q2 * q2;
        let lead = w * q2 * p3 + p2 * self.lambda / (w * q22);
        (q3 * q3 / q22 + lead * lead) / (w * 2.0)
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn has_fast_flow(&self) -> bool {
        true
    }

    fn fast_flow<S: Real>(&self, tau: S, m: &[S]) -> Option<Vec<S>> {
        let (p3, q3, p2, q2) = (m[0], m[1], m[2], m[3]);
        let w = self.omega_true(q2);
        let (s, c) = (tau * w).sin_cos();
        let q22 = q2 * q2;
        let shift = p2 * self.lambda / (w * w * q22 * q2);
        let p3n = (p3 + shift) * c - q3 / (w * q22) * s - shift;
        let q3n = (w * q22 * p3 + p2 * self.lambda / (w * q2)) * s + q3 * c;
        Some(vec![p3n, q3n, p2, q2])
    }
}

/// `H = ½(y² + ω₀²x²) + ½(p² + q²)`: fast and slow parts decoupled.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicOscillator {
    pub omega0: f64,
    domain: Domain,
}

impl HarmonicOscillator {
    pub fn new(omega0: f64) -> Result<Self> {
        if !(omega0 > 0.0 && omega0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "omega0 must be > 0, got {omega0}"
            )));
        }
        Ok(HarmonicOscillator {
            omega0,
            domain: Domain::new(vec![-2.0; 4], vec![2.0; 4]),
        })
    }

    pub fn fast_energy<S: Real>(&self, m: &[S]) -> S {
        (m[0] * m[0] + m[1] * m[1] * (self.omega0 * self.omega0)) * 0.5
    }
}

impl SlowFastSystem for HarmonicOscillator {
    fn dims(&self) -> Dims {
        Dims::new(1, 1)
    }
    fn hamiltonian<S: Real>(&self, m: &[S]) -> S {
        self.fast_energy(m) + (m[2] * m[2] + m[3] * m[3]) * 0.5
    }
    fn frequency<S: Real>(&self, _m: &[S]) -> S {
        S::cst(self.omega0)
    }
    fn momentum<S: Real>(&self, m: &[S]) -> S {
        self.fast_energy(m) / self.omega0
    }
    fn domain(&self) -> &Domain {
        &self.domain
    }
    fn has_fast_flow(&self) -> bool {
        true
    }
    fn fast_flow<S: Real>(&self, tau: S, m: &[S]) -> Option<Vec<S>> {
        let w = self.omega0;
        let (s, c) = (tau * w).sin_cos();
        Some(vec![
            m[0] * c - m[1] * s * w,
            m[1] * c + m[0] * s / w,
            m[2],
            m[3],
        ])
    }
}

/// Any built-in fixture.
#[derive(Clone, Debug)]
pub enum Fixture {
    ElasticPendulum(ElasticPendulum),
    ChargedParticle(ChargedParticle),
    HarmonicOscillator(HarmonicOscillator),
    QuadraticBenchmark(QuadraticSystem<ExpBenchmark>),
}

macro_rules! delegate {
    ($self:ident, $s:ident => $e:expr) => {
        match $self {
            Fixture::ElasticPendulum($s) => $e,
            Fixture::ChargedParticle($s) => $e,
            Fixture::HarmonicOscillator($s) => $e,
            Fixture::QuadraticBenchmark($s) => $e,
        }
    };
}

impl SlowFastSystem for Fixture {
    fn dims(&self) -> Dims {
        delegate!(self, s => s.dims())
    }
    fn hamiltonian<S: Real>(&self, m: &[S]) -> S {
        delegate!(self, s => s.hamiltonian(m))
    }
    fn frequency<S: Real>(&self, m: &[S]) -> S {
        delegate!(self, s => s.frequency(m))
    }
    fn momentum<S: Real>(&self, m: &[S]) -> S {
        delegate!(self, s => s.momentum(m))
    }
    fn domain(&self) -> &Domain {
        delegate!(self, s => s.domain())
    }
    fn has_fast_flow(&self) -> bool {
        delegate!(self, s => s.has_fast_flow())
    }
    fn fast_flow<S: Real>(&self, tau: S, m: &[S]) -> Option<Vec<S>> {
        delegate!(self, s => s.fast_flow(tau, m))
    }
}

pub const FIXTURE_NAMES: [&str; 4] = [
    "elastic_pendulum",
    "charged_particle",
    "harmonic_oscillator",
    "quadratic_benchmark",
];

pub const DEFAULT_EPS_GRID: [f64; 5] = [0.2, 0.1, 0.05, 0.025, 0.0125];

/// Parameters accepted by each fixture, with defaults.
pub fn fixture_params(name: &str) -> Result<&'static [(&'static str, f64)]> {
    Ok(match name {
        "elastic_pendulum" => &[("Omega", 1.0), ("gamma", 0.1), ("omega_scale", 1.0)],
        "charged_particle" => &[("B", 1.0), ("lambda", 0.3), ("omega_scale", 1.0)],
        "harmonic_oscillator" => &[("omega0", 1.0)],
        "quadratic_benchmark" => &[],
        other => return Err(Error::NotFound(format!("fixture '{other}'"))),
    })
}

pub fn list_fixtures() -> Vec<&'static str> {
    FIXTURE_NAMES.to_vec()
}

/// Build a fixture by name. Unknown names give `NotFound`; unknown or
/// invalid parameters give `InvalidParameter`.
pub fn get_fixture(name: &str, params: &BTreeMap<String, f64>) -> Result<Fixture> {
    let allowed = fixture_params(name)?;
    for key in params.keys() {
        if !allowed.iter().any(|(k, _)| k == key) {
            return Err(Error::InvalidParameter(format!(
                "unknown parameter '{key}' for {name}"
            )));
        }
    }
    let get = |key: &str| {
        params.get(key).copied().unwrap_or_else(|| {
            allowed
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .unwrap_or(0.0)
        })
    };
    Ok(match name {
        "elastic_pendulum" => Fixture::ElasticPendulum(ElasticPendulum::with_omega_scale(
            get("Omega"),
            get("gamma"),
            get("omega_scale"),
        )?),
        "charged_particle" => Fixture::ChargedParticle(ChargedParticle::with_omega_scale(
            get("B"),
            get("lambda"),
            get("omega_scale"),
        )?),
        "harmonic_oscillator" => {
            Fixture::HarmonicOscillator(HarmonicOscillator::new(get("omega0"))?)
        }
        _ => Fixture::QuadraticBenchmark(QuadraticSystem::new(ExpBenchmark)?),
    })
}

impl Fixture {
    pub fn name(&self) -> &'static str {
        match self {
            Fixture::ElasticPendulum(_) => "elastic_pendulum",
            Fixture::ChargedParticle(_) => "charged_particle",
            Fixture::HarmonicOscillator(_) => "harmonic_oscillator",
            Fixture::QuadraticBenchmark(_) => "quadratic_benchmark",
        }
    }

    /// Default initial point, `(fast, slow)` in block order.
    pub fn default_point(&self) -> PhasePoint {
        let (fast, slow) = match self {
            Fixture::ElasticPendulum(_) => ([0.5, 0.0], [0.1, 1.0]),
            Fixture::ChargedParticle(_) => ([0.1, 0.3], [0.2, 1.0]),
            Fixture::HarmonicOscillator(_) => ([0.5, 0.0], [0.1, 0.2]),
            Fixture::QuadraticBenchmark(_) => ([1.0, 0.0], [0.0, 0.0]),
        };
        PhasePoint::new(self.dims(), &fast, &slow).expect("default point is valid")
    }

    pub fn eps_grid(&self) -> Vec<f64> {
        DEFAULT_EPS_GRID.to_vec()
    }

    /// Closed-form `F₁` where one is known.
    pub fn closed_f1(&self, m: &[f64]) -> Option<f64> {
        match self {
            Fixture::ElasticPendulum(p) => Some(p.f1_closed(m)),
            Fixture::ChargedParticle(c) => Some(c.j1_closed(m)),
            Fixture::HarmonicOscillator(_) | Fixture::QuadraticBenchmark(_) => Some(0.0),
        }
    }

    /// Closed-form `F₂` where one is known.
    pub fn closed_f2(&self, m: &[f64]) -> Option<f64> {
        match self {
            Fixture::ElasticPendulum(p) => Some(p.f2_closed(m)),
            Fixture::ChargedParticle(_) => None,
            Fixture::HarmonicOscillator(_) | Fixture::QuadraticBenchmark(_) => Some(0.0),
        }
    }
}

/// Parameter record used in reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub name: String,
    pub params: BTreeMap<String, f64>,
}

/// `|J − v⊥²/(2|B|)|` for the charged particle.
pub fn verify_transverse_momentum(fixture: &Fixture, m: &PhasePoint) -> Result<f64> {
    match fixture {
        Fixture::ChargedParticle(c) => {
            c.domain().check(m.coords())?;
            Ok(c.transverse_momentum_residual(m.coords()))
        }
        other => Err(Error::InvalidParameter(format!(
            "transverse momentum is defined for charged_particle, not {}",
            other.name()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::{Hamiltonian, Momentum, PhaseSpace};

    fn pend_point(p: f64, q: f64, y: f64, x: f64) -> PhasePoint {
        PhasePoint::new(Dims::new(1, 1), &[y, x], &[p, q]).unwrap()
    }

    #[test]
    fn pendulum_printed_values() {
        let f = ElasticPendulum::new(1.0, 2.0).unwrap();
        let m = pend_point(0.0, 1.0, 0.0, 0.0);
        assert!((f.momentum(m.coords()) - 0.5).abs() < 1e-15);
        let f = ElasticPendulum::new(1.0, 1.0).unwrap();
        let m = pend_point(1.0, 1.0, 1.0, 0.0);
        assert!((f.f1_closed(m.coords()) - 1.0).abs() < 1e-15);
        assert!((f.f2_closed(m.coords()) + 0.875).abs() < 1e-15);
    }

    #[test]
    fn pendulum_gradients_and_fields() {
        let f = ElasticPendulum::new(1.0, 2.0).unwrap();
        let space = PhaseSpace::new(&f);
        let m = pend_point(0.0, 1.0, 0.0, 0.0);
        assert_eq!(
            space.grad_fast(&Hamiltonian(&f), &m).unwrap(),
            vec![0.0, 1.0]
        );
        assert_eq!(
            space.grad_slow(&Hamiltonian(&f), &m).unwrap(),
            vec![0.0, 1.0]
        );
        let f = ElasticPendulum::new(1.0, 1.0).unwrap();
        let space = PhaseSpace::new(&f);
        assert_eq!(space.field_fast(&m).unwrap(), vec![-0.5, 0.0]);
        let m = pend_point(1.0, 1.0, 0.0, 0.0);
        assert_eq!(space.field_slow(&m).unwrap(), vec![-1.0, 1.0]);
        let full = space.field_full(&m, 0.1).unwrap();
        assert!((full[2] + 0.1).abs() < 1e-15 && (full[3] - 0.1).abs() < 1e-15);
        let m = pend_point(0.3, -0.7, 0.4, 0.9);
        assert!(
            space
                .bracket0(&Hamiltonian(&f), &Momentum(&f), &m)
                .unwrap()
                .abs()
                < 1e-14
        );
    }

    #[test]
    fn charged_particle_printed_values() {
        let c = ChargedParticle::new(1.0, 0.0).unwrap();
        let m = PhasePoint::new(Dims::new(1, 1), &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((c.frequency(m.coords()) - 1.0).abs() < 1e-15);
        assert!((c.momentum(m.coords()) - 0.5).abs() < 1e-15);
        assert_eq!(c.j1_closed(&[0.4, 0.0, 0.3, 1.2]), 0.0);
        let space = PhaseSpace::new(&c);
        let v = space.field_fast(&m).unwrap();
        assert!(v[0].abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
        let flowed = c
            .fast_flow(std::f64::consts::FRAC_PI_2, m.coords())
            .unwrap();
        assert!(flowed[0].abs() < 1e-15 && (flowed[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn registry() {
        let names = list_fixtures();
        assert!(names.contains(&"elastic_pendulum") && names.contains(&"charged_particle"));
        assert!(matches!(
            get_fixture("nope", &BTreeMap::new()),
            Err(Error::NotFound(_))
        ));
        let mut p = BTreeMap::new();
        p.insert("Omega".to_string(), 0.0);
        assert!(matches!(
            get_fixture("elastic_pendulum", &p),
            Err(Error::InvalidParameter(_))
        ));
        let mut p = BTreeMap::new();
        p.insert("bogus".to_string(), 1.0);
        assert!(matches!(
            get_fixture("charged_particle", &p),
            Err(Error::InvalidParameter(_))
        ));
        let f = get_fixture("charged_particle", &BTreeMap::new()).unwrap();
        assert_eq!(f.name(), "charged_particle");
    }

    #[test]
    fn charged_particle_domain_excludes_axis() {
        let c = get_fixture("charged_particle", &BTreeMap::new()).unwrap();
        let m = PhasePoint::new(Dims::new(1, 1), &[0.1, 0.3], &[0.2, 0.0]).unwrap();
        assert!(matches!(
            verify_transverse_momentum(&c, &m),
            Err(Error::Domain(_))
        ));
    }
}
