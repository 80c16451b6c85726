//! Phase-space data model, the fast and slow Poisson brackets, Hamiltonian
//! vector fields, and the differentiation engine behind every gradient.
//!
//! Coordinates are laid out in one flat block order used everywhere in the
//! crate:
//!
//! ```text
//! [ y_1 .. y_r | x_1 .. x_r | p_1 .. p_k | q_1 .. q_k ]
//!   0          r            2r           2r+k        2r+2k
//! ```
//!
//! The fast bracket pairs `(y_i, x_i)`, the slow bracket pairs `(p_i, q_i)`:
//!
//! ```text
//! {f,g}_0 = Σ f_y g_x − f_x g_y        {f,g}_1 = Σ f_p g_q − f_q g_p
//! ```
//!
//! and `X_H = X_H^(0) + ε X_H^(1)` with `ẏ = −H_x, ẋ = H_y, ṗ = −ε H_q, q̇ = ε H_p`.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::scalar::{seed_axis, Real};

/// Fast (`r`) and slow (`k`) degree-of-freedom counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub r: usize,
    pub k: usize,
}

impl Dims {
    pub const fn new(r: usize, k: usize) -> Self {
        Dims { r, k }
    }
    pub const fn fast_len(&self) -> usize {
        2 * self.r
    }
    pub const fn slow_len(&self) -> usize {
        2 * self.k
    }
    pub const fn total(&self) -> usize {
        2 * self.r + 2 * self.k
    }
    pub const fn y(&self, i: usize) -> usize {
        i
    }
    pub const fn x(&self, i: usize) -> usize {
        self.r + i
    }
    pub const fn p(&self, i: usize) -> usize {
        2 * self.r + i
    }
    pub const fn q(&self, i: usize) -> usize {
        2 * self.r + self.k + i
    }
    pub const fn fast_range(&self) -> Range<usize> {
        0..2 * self.r
    }
    pub const fn slow_range(&self) -> Range<usize> {
        2 * self.r..2 * self.r + 2 * self.k
    }
}

/// A validated state: finite coordinates in `(y, x, p, q)` block order.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    dims: Dims,
    coords: Vec<f64>,
}

impl PhasePoint {
    /// Build from the fast block `(y.., x..)` and the slow block `(p.., q..)`.
    pub fn new(dims: Dims, fast: &[f64], slow: &[f64]) -> Result<Self> {
        if fast.len() != dims.fast_len() || slow.len() != dims.slow_len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} fast and {} slow coordinates, got {} and {}",
                dims.fast_len(),
                dims.slow_len(),
                fast.len(),
                slow.len()
            )));
        }
        let mut coords = Vec::with_capacity(dims.total());
        coords.extend_from_slice(fast);
        coords.extend_from_slice(slow);
        Self::from_coords(dims, coords)
    }

    pub fn from_coords(dims: Dims, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != dims.total() {
            return Err(Error::InvalidParameter(format!(
                "expected {} coordinates, got {}",
                dims.total(),
                coords.len()
            )));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::Numerical(format!("non-finite coordinate {bad}")));
        }
        Ok(PhasePoint { dims, coords })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
    pub fn fast(&self) -> &[f64] {
        &self.coords[self.dims.fast_range()]
    }
    pub fn slow(&self) -> &[f64] {
        &self.coords[self.dims.slow_range()]
    }
    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

/// Axis-aligned validity box, one interval per coordinate in block order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Domain { lower, upper }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lower.len()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "{x:?} not in box {:?}..{:?}",
                self.lower, self.upper
            )))
        }
    }

    /// Uniform sample inside the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| {
                if hi > lo {
                    rng.gen_range(*lo..*hi)
                } else {
                    *lo
                }
            })
            .collect()
    }
}

/// A slow-fast Hamiltonian system on `ℝ^{2r} × ℝ^{2k}` with canonical brackets.
///
/// `frequency` is the frequency function ω of the periodic fast flow and
/// `momentum` the momentum map J with `d₀J = d₀H/ω`. `fast_flow`, when
/// provided, is the flow of `X_H^(0)` for time `tau` in closed form.
pub trait SlowFastSystem: Sync {
    fn dims(&self) -> Dims;
    fn hamiltonian<S: Real>(&self, m: &[S]) -> S;
    fn frequency<S: Real>(&self, m: &[S]) -> S;
    fn momentum<S: Real>(&self, m: &[S]) -> S;
    fn domain(&self) -> &Domain;

    fn has_fast_flow(&self) -> bool {
        false
    }
    fn fast_flow<S: Real>(&self, _tau: S, _m: &[S]) -> Option<Vec<S>> {
        None
    }
}

/// A scalar function of the state that can be evaluated on any [`Real`].
pub trait Observable: Sync {
    fn eval<S: Real>(&self, m: &[S]) -> S;
}

impl<T: Observable> Observable for &T {
    fn eval<S: Real>(&self, m: &[S]) -> S {
        (**self).eval(m)
    }
}

pub struct Hamiltonian<'a, Sys>(pub &'a Sys);
pub struct Frequency<'a, Sys>(pub &'a Sys);
pub struct Momentum<'a, Sys>(pub &'a Sys);

impl<Sys: SlowFastSystem> Observable for Hamiltonian<'_, Sys> {
    fn eval<S: Real>(&self, m: &[S]) -> S {
        self.0.hamiltonian(m)
    }
}

impl<Sys: SlowFastSystem> Observable for Frequency<'_, Sys> {
    fn eval<S: Real>(&self, m: &[S]) -> S {
        self.0.frequency(m)
    }
}

impl<Sys: SlowFastSystem> Observable for Momentum<'_, Sys> {
    fn eval<S: Real>(&self, m: &[S]) -> S {
        self.0.momentum(m)
    }
}

/// Sparse polynomial `Σ c · Π x_i^{e_i}` in the state coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    pub terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn new(terms: Vec<(f64, Vec<u32>)>) -> Self {
        Polynomial { terms }
    }

    pub fn constant(c: f64, n: usize) -> Self {
        Polynomial {
            terms: vec![(c, vec![0; n])],
        }
    }

    /// Single monomial `c · x_index^power`.
    pub fn monomial(c: f64, n: usize, index: usize, power: u32) -> Self {
        let mut e = vec![0; n];
        e[index] = power;
        Polynomial {
            terms: vec![(c, e)],
        }
    }

    pub fn product(&self, other: &Polynomial) -> Polynomial {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (a, ea) in &self.terms {
            for (b, eb) in &other.terms {
                terms.push((a * b, ea.iter().zip(eb).map(|(x, y)| x + y).collect()));
            }
        }
        Polynomial { terms }
    }
}

impl Observable for Polynomial {
    fn eval<S: Real>(&self, m: &[S]) -> S {
        let mut acc = S::zero();
        for (c, exps) in &self.terms {
            let mut t = S::cst(*c);
            for (x, &e) in m.iter().zip(exps) {
                if e > 0 {
                    t *= x.powi(e as i32);
                }
            }
            acc += t;
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiffMode {
    /// Forward-mode dual numbers, exact to rounding.
    Dual,
    /// Central finite differences with step `fd_step · max(1, |x_i|)`.
    CentralDifference,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffEngine {
    mode: DiffMode,
    fd_step: f64,
}

impl Default for DiffEngine {
    fn default() -> Self {
        Self::dual()
    }
}

impl DiffEngine {
    pub fn dual() -> Self {
        DiffEngine {
            mode: DiffMode::Dual,
            fd_step: default_fd_step(),
        }
    }

    /// Central differences; `None` selects `ε_mach^{1/3}`.
    pub fn central(fd_step: Option<f64>) -> Result<Self> {
        let fd_step = fd_step.unwrap_or_else(default_fd_step);
        if !(fd_step > 0.0 && fd_step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "fd_step must be > 0, got {fd_step}"
            )));
        }
        Ok(DiffEngine {
            mode: DiffMode::CentralDifference,
            fd_step,
        })
    }

    pub fn mode(&self) -> DiffMode {
        self.mode
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    /// Partial derivatives of `f` at `x` for the coordinates in `range`.
    pub fn gradient<F: Observable + ?Sized>(
        &self,
        f: &F,
        x: &[f64],
        range: Range<usize>,
    ) -> Vec<f64> {
        match self.mode {
            DiffMode::Dual => range.map(|i| f.eval(&seed_axis(x, i)).eps).collect(),
            DiffMode::CentralDifference => {
                central_gradient(|v: &[f64]| f.eval(v), x, range, self.fd_step)
            }
        }
    }

    /// Directional derivative `df(x)·v`.
    pub fn directional<F: Observable + ?Sized>(&self, f: &F, x: &[f64], v: &[f64]) -> f64 {
        match self.mode {
            DiffMode::Dual => f.eval(&crate::scalar::seed(x, v)).eps,
            DiffMode::CentralDifference => {
                let scale = x.iter().fold(1.0f64, |a, b| a.max(b.abs()));
                let h = self.fd_step * scale;
                let plus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
                let minus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
                (f.eval(&plus) - f.eval(&minus)) / (2.0 * h)
            }
        }
    }
}

pub(crate) fn default_fd_step() -> f64 {
    f64::EPSILON.cbrt()
}

/// Central-difference gradient for functions that cannot be dual-lifted.
pub fn central_gradient<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    range: Range<usize>,
    rel_step: f64,
) -> Vec<f64> {
    let mut work = x.to_vec();
    range
        .map(|i| {
            let h = rel_step * x[i].abs().max(1.0);
            work[i] = x[i] + h;
            let fp = f(&work);
            work[i] = x[i] - h;
            let fm = f(&work);
            work[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Pairing of two gradients restricted to one canonical block:
/// `Σ a_{first_i} b_{second_i} − a_{second_i} b_{first_i}` over `n` pairs.
pub(crate) fn canonical_pairing(a: &[f64], b: &[f64], n: usize) -> f64 {
    (0..n).map(|i| a[i] * b[n + i] - a[n + i] * b[i]).sum()
}

/// A system together with a differentiation engine: brackets and fields.
pub struct PhaseSpace<'a, Sys> {
    system: &'a Sys,
    engine: DiffEngine,
}

impl<'a, Sys: SlowFastSystem> PhaseSpace<'a, Sys> {
    pub fn new(system: &'a Sys) -> Self {
        PhaseSpace {
            system,
            engine: DiffEngine::dual(),
        }
    }

    pub fn with_engine(system: &'a Sys, engine: DiffEngine) -> Self {
        PhaseSpace { system, engine }
    }

    pub fn system(&self) -> &'a Sys {
        self.system
    }

    pub fn engine(&self) -> DiffEngine {
        self.engine
    }

    fn admit(&self, m: &PhasePoint) -> Result<()> {
        if m.dims() != self.system.dims() {
            return Err(Error::InvalidParameter(format!(
                "point dims {:?} do not match system dims {:?}",
                m.dims(),
                self.system.dims()
            )));
        }
        self.system.domain().check(m.coords())
    }

    fn finite_vec(v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
        for x in &v {
            ensure_finite(*x, what)?;
        }
        Ok(v)
    }

    /// `(∂f/∂y, ∂f/∂x)` at `m`.
    pub fn grad_fast<F: Observable>(&self, f: &F, m: &PhasePoint) -> Result<Vec<f64>> {
        self.admit(m)?;
        let d = self.system.dims();
        Self::finite_vec(self.engine.gradient(f, m.coords(), d.fast_range()), "d0 f")
    }

    /// `(∂f/∂p, ∂f/∂q)` at `m`.
    pub fn grad_slow<F: Observable>(&self, f: &F, m: &PhasePoint) -> Result<Vec<f64>> {
        self.admit(m)?;
        let d = self.system.dims();
        Self::finite_vec(self.engine.gradient(f, m.coords(), d.slow_range()), "d1 f")
    }

    pub fn bracket0<F: Observable, G: Observable>(
        &self,
        f: &F,
        g: &G,
        m: &PhasePoint,
    ) -> Result<f64> {
        self.admit(m)?;
        ensure_finite(self.bracket0_raw(f, g, m.coords()), "{f,g}_0")
    }

    pub fn bracket1<F: Observable, G: Observable>(
        &self,
        f: &F,
        g: &G,
        m: &PhasePoint,
    ) -> Result<f64> {
        self.admit(m)?;
        ensure_finite(self.bracket1_raw(f, g, m.coords()), "{f,g}_1")
    }

    /// `X_H^(0)` = `(−∂H/∂x, ∂H/∂y)`.
    pub fn field_fast(&self, m: &PhasePoint) -> Result<Vec<f64>> {
        self.admit(m)?;
        Self::finite_vec(self.field_fast_raw(m.coords()), "X_H^(0)")
    }

    /// `X_H^(1)` = `(−∂H/∂q, ∂H/∂p)`, without the ε factor.
    pub fn field_slow(&self, m: &PhasePoint) -> Result<Vec<f64>> {
        self.admit(m)?;
        Self::finite_vec(self.field_slow_raw(m.coords()), "X_H^(1)")
    }

    /// `X_H^(0) + ε X_H^(1)` in full block layout.
    pub fn field_full(&self, m: &PhasePoint, eps: f64) -> Result<Vec<f64>> {
        self.admit(m)?;
        let mut out = vec![0.0; m.coords().len()];
        self.field_full_raw(m.coords(), eps, &mut out);
        Self::finite_vec(out, "X_H")
    }

    pub(crate) fn grad_raw<F: Observable + ?Sized>(
        &self,
        f: &F,
        x: &[f64],
        range: Range<usize>,
    ) -> Vec<f64> {
        self.engine.gradient(f, x, range)
    }

    pub(crate) fn bracket0_raw<F: Observable, G: Observable>(
        &self,
        f: &F,
        g: &G,
        x: &[f64],
    ) -> f64 {
        let d = self.system.dims();
        let a = self.engine.gradient(f, x, d.fast_range());
        let b = self.engine.gradient(g, x, d.fast_range());
        canonical_pairing(&a, &b, d.r)
    }

    pub(crate) fn bracket1_raw<F: Observable, G: Observable>(
        &self,
        f: &F,
        g: &G,
        x: &[f64],
    ) -> f64 {
        let d = self.system.dims();
        let a = self.engine.gradient(f, x, d.slow_range());
        let b = self.engine.gradient(g, x, d.slow_range());
        canonical_pairing(&a, &b, d.k)
    }

    pub(crate) fn field_fast_raw(&self, x: &[f64]) -> Vec<f64> {
        let d = self.system.dims();
        let g = self
            .engine
            .gradient(&Hamiltonian(self.system), x, d.fast_range());
        hamiltonian_rotation(&g, d.r)
    }

    pub(crate) fn field_slow_raw(&self, x: &[f64]) -> Vec<f64> {
        let d = self.system.dims();
        let g = self
            .engine
            .gradient(&Hamiltonian(self.system), x, d.slow_range());
        hamiltonian_rotation(&g, d.k)
    }

    pub(crate) fn field_full_raw(&self, x: &[f64], eps: f64, out: &mut [f64]) {
        let d = self.system.dims();
        let g = self
            .engine
            .gradient(&Hamiltonian(self.system), x, 0..d.total());
        let (r, k) = (d.r, d.k);
        for i in 0..r {
            out[i] = -g[r + i];
            out[r + i] = g[i];
        }
        let o = 2 * r;
        for i in 0..k {
            out[o + i] = -eps * g[o + k + i];
            out[o + k + i] = eps * g[o + i];
        }
    }
}

/// Turn a block gradient `(∂/∂first, ∂/∂second)` into the canonical
/// velocity `(−∂/∂second, ∂/∂first)`.
fn hamiltonian_rotation(g: &[f64], n: usize) -> Vec<f64> {
    let mut v = vec![0.0; 2 * n];
    for i in 0..n {
        v[i] = -g[n + i];
        v[n + i] = g[i];
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal r=1, k=1 system for unit tests: H = a·y² + b·x·p + q.
    struct Toy;

    impl SlowFastSystem for Toy {
        fn dims(&self) -> Dims {
            Dims::new(1, 1)
        }
        fn hamiltonian<S: Real>(&self, m: &[S]) -> S {
            m[0] * m[0] * 0.5 + m[1] * m[2] * 2.0 + m[3]
        }
        fn frequency<S: Real>(&self, _m: &[S]) -> S {
            S::one()
        }
        fn momentum<S: Real>(&self, m: &[S]) -> S {
            m[0] * m[0]
        }
        fn domain(&self) -> &Domain {
            static D: std::sync::OnceLock<Domain> = std::sync::OnceLock::new();
            D.get_or_init(|| Domain::new(vec![-10.0; 4], vec![10.0; 4]))
        }
    }

    fn pt(c: [f64; 4]) -> PhasePoint {
        PhasePoint::from_coords(Dims::new(1, 1), c.to_vec()).unwrap()
    }

    #[test]
    fn block_offsets() {
        let d = Dims::new(2, 3);
        assert_eq!((d.y(1), d.x(0), d.p(0), d.q(2)), (1, 2, 4, 9));
        assert_eq!(d.total(), 10);
    }

    #[test]
    fn phase_point_rejects_bad_input() {
        let d = Dims::new(1, 1);
        assert!(PhasePoint::new(d, &[1.0], &[1.0, 2.0]).is_err());
        assert!(PhasePoint::new(d, &[1.0, f64::NAN], &[1.0, 2.0]).is_err());
        let p = PhasePoint::new(d, &[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(p.fast(), &[1.0, 2.0]);
        assert_eq!(p.slow(), &[3.0, 4.0]);
    }

    #[test]
    fn canonical_pair_brackets() {
        let space = PhaseSpace::new(&Toy);
        let y = Polynomial::monomial(1.0, 4, 0, 1);
        let x = Polynomial::monomial(1.0, 4, 1, 1);
        let p = Polynomial::monomial(1.0, 4, 2, 1);
        let q = Polynomial::monomial(1.0, 4, 3, 1);
        let m = pt([0.3, -0.2, 0.7, 1.1]);
        assert_eq!(space.bracket0(&y, &x, &m).unwrap(), 1.0);
        assert_eq!(space.bracket1(&p, &q, &m).unwrap(), 1.0);
        assert_eq!(space.bracket1(&y, &x, &m).unwrap(), 0.0);
        assert_eq!(space.bracket0(&y, &y, &m).unwrap(), 0.0);
    }

    #[test]
    fn polynomial_gradients() {
        let space = PhaseSpace::new(&Toy);
        // f = y^2 at y = 3 -> (6, 0)
        let f = Polynomial::monomial(1.0, 4, 0, 2);
        let m = pt([3.0, 0.0, 0.0, 0.0]);
        assert_eq!(space.grad_fast(&f, &m).unwrap(), vec![6.0, 0.0]);
        // f = p q at (p, q) = (2, 5) -> (5, 2)
        let f = Polynomial::new(vec![(1.0, vec![0, 0, 1, 1])]);
        let m = pt([0.0, 0.0, 2.0, 5.0]);
        assert_eq!(space.grad_slow(&f, &m).unwrap(), vec![5.0, 2.0]);
        let c = Polynomial::constant(4.0, 4);
        assert_eq!(space.grad_fast(&c, &m).unwrap(), vec![0.0, 0.0]);
        let fast_only = Polynomial::monomial(1.0, 4, 1, 3);
        assert_eq!(space.grad_slow(&fast_only, &m).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn domain_error_outside_box() {
        let space = PhaseSpace::new(&Toy);
        let m = pt([30.0, 0.0, 0.0, 0.0]);
        assert!(matches!(space.field_fast(&m), Err(Error::Domain(_))));
    }

    #[test]
    fn non_finite_derivative_is_numerical_error() {
        let space = PhaseSpace::new(&Toy);
        // sqrt has an infinite derivative at 0
        struct Root;
        impl Observable for Root {
            fn eval<S: Real>(&self, m: &[S]) -> S {
                m[0].sqrt()
            }
        }
        let m = pt([0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            space.grad_fast(&Root, &m),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn fields_and_epsilon_scaling() {
        let space = PhaseSpace::new(&Toy);
        let m = pt([1.0, 2.0, 3.0, 4.0]);
        // H_y = y = 1, H_x = 2p = 6, H_p = 2x = 4, H_q = 1
        assert_eq!(space.field_fast(&m).unwrap(), vec![-6.0, 1.0]);
        assert_eq!(space.field_slow(&m).unwrap(), vec![-1.0, 4.0]);
        assert_eq!(
            space.field_full(&m, 0.0).unwrap(),
            vec![-6.0, 1.0, 0.0, 0.0]
        );
        let full = space.field_full(&m, 0.1).unwrap();
        assert!((full[2] + 0.1).abs() < 1e-15 && (full[3] - 0.4).abs() < 1e-15);
        let one = space.field_full(&m, 1.0).unwrap();
        assert_eq!(&one[..2], &space.field_fast(&m).unwrap()[..]);
        assert_eq!(&one[2..], &space.field_slow(&m).unwrap()[..]);
    }

    #[test]
    fn central_engine_validates_step() {
        assert!(DiffEngine::central(Some(0.0)).is_err());
        assert!(DiffEngine::central(Some(-1.0)).is_err());
        let e = DiffEngine::central(None).unwrap();
        assert_eq!(e.mode(), DiffMode::CentralDifference);
        assert!((e.fd_step() - f64::EPSILON.cbrt()).abs() < 1e-18);
    }
}
