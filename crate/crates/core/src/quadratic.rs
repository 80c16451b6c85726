//! Hamiltonians quadratic in the fast pair, `H = h(w) + ω(w)·Q_A(z)`, with
//! `A(w) ∈ sl(2)` and `det A = 1`.
//!
//! `Q_S(z) = −½ (J S z)·z` with `J = [[0, −1], [1, 0]]` and `z = (y, x)`. The
//! fast field of `Q_S` is `ż = S z`, so the circle action is the linear flow
//! `cos t·I + sin t·A` and the momentum map is `J = Q_A`.

use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;

use crate::error::{Error, Result};
use crate::phase::{Dims, Domain, SlowFastSystem};
use crate::scalar::{seed_axis, Dual, Real};

/// Row-major 2×2 matrix `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2<S> {
    pub a: S,
    pub b: S,
    pub c: S,
    pub d: S,
}

impl<S: Real> Mat2<S> {
    pub fn new(a: S, b: S, c: S, d: S) -> Self {
        Mat2 { a, b, c, d }
    }

    /// Traceless matrix `[[a, b], [c, −a]]`.
    pub fn sl2(a: S, b: S, c: S) -> Self {
        Mat2 { a, b, c, d: -a }
    }

    pub fn identity() -> Self {
        Mat2::new(S::one(), S::zero(), S::zero(), S::one())
    }

    pub fn zero() -> Self {
        Mat2::new(S::zero(), S::zero(), S::zero(), S::zero())
    }

    /// The matrix `J` of the quadratic form.
    pub fn symplectic() -> Self {
        Mat2::new(S::zero(), -S::one(), S::one(), S::zero())
    }

    pub fn from_f64(m: &Mat2<f64>) -> Self {
        Mat2::new(S::cst(m.a), S::cst(m.b), S::cst(m.c), S::cst(m.d))
    }

    pub fn det(&self) -> S {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> S {
        self.a + self.d
    }

    pub fn scale(&self, s: S) -> Self {
        Mat2::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    pub fn apply(&self, z: [S; 2]) -> [S; 2] {
        [self.a * z[0] + self.b * z[1], self.c * z[0] + self.d * z[1]]
    }

    /// `[self, other] = self·other − other·self`.
    pub fn commutator(&self, other: &Self) -> Self {
        *self * *other - *other * *self
    }

    pub fn map<T>(&self, f: impl Fn(S) -> T) -> Mat2<T> {
        Mat2 {
            a: f(self.a),
            b: f(self.b),
            c: f(self.c),
            d: f(self.d),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        [
            self.a - other.a,
            self.b - other.b,
            self.c - other.c,
            self.d - other.d,
        ]
        .iter()
        .map(|v| v.value().abs())
        .fold(0.0, f64::max)
    }
}

impl<S: Real> Add for Mat2<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Mat2::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl<S: Real> Sub for Mat2<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Mat2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}

impl<S: Real> Neg for Mat2<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Mat2::new(-self.a, -self.b, -self.c, -self.d)
    }
}

impl<S: Real> Mul for Mat2<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Mat2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

/// `Q_S(z) = −½ (J S z)·z`.
pub fn q_form<S: Real>(s: &Mat2<S>, z: [S; 2]) -> S {
    let jsz = Mat2::symplectic().apply(s.apply(z));
    -(jsz[0] * z[0] + jsz[1] * z[1]) * 0.5
}

/// Matrix whose form is `⟨Q_S⟩`: `½(S − A S A)`.
pub fn avg_q<S: Real>(a: &Mat2<S>, s: &Mat2<S>) -> Mat2<S> {
    (*s - *a * *s * *a).scale(S::cst(0.5))
}

/// Matrix whose form is `𝒮(Q_S)`: `¼[A, S]`.
pub fn s_q<S: Real>(a: &Mat2<S>, s: &Mat2<S>) -> Mat2<S> {
    a.commutator(s).scale(S::cst(0.25))
}

/// `(cos t·I + sin t·A) z`.
pub fn linear_flow<S: Real>(a: &Mat2<S>, t: S, z: [S; 2]) -> [S; 2] {
    let (s, c) = t.sin_cos();
    let az = a.apply(z);
    [z[0] * c + az[0] * s, z[1] * c + az[1] * s]
}

/// Slow data of a quadratic system: `h`, `ω` and the `sl(2)` field `A`,
/// all over the slow block `w = (p.., q..)`.
pub trait QuadraticModel: Sync {
    fn slow_dofs(&self) -> usize;
    fn h<S: Real>(&self, w: &[S]) -> S;
    fn omega<S: Real>(&self, w: &[S]) -> S;
    /// Entries `(a, b, c)` of `A = [[a, b], [c, −a]]`.
    fn entries<S: Real>(&self, w: &[S]) -> (S, S, S);
    /// Box for the slow block, `(lower, upper)`.
    fn slow_box(&self) -> (Vec<f64>, Vec<f64>);

    fn matrix<S: Real>(&self, w: &[S]) -> Mat2<S> {
        let (a, b, c) = self.entries(w);
        Mat2::sl2(a, b, c)
    }
}

/// Which coefficient multiplies `Q̂(A)` inside the closed-form `F₁`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClosedFormReading {
    /// `M = (1/4ω)([A,B] + Q_A[A,C]) + ¼ Q̂`, the reading that agrees with
    /// the generic construction.
    Matched,
    /// `M = (1/4ω)([A,B] + Q_A[A,C]) − (ω/4) Q̂`, as displayed.
    AsPrinted,
}

const DET_TOL: f64 = 1e-8;
const DET_GRID_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct QuadraticSystem<M> {
    model: M,
    domain: Domain,
}

impl<M: QuadraticModel> QuadraticSystem<M> {
    /// Builds the system after checking `det A = 1` on a grid over the slow box.
    pub fn new(model: M) -> Result<Self> {
        let (lo, hi) = model.slow_box();
        if lo.len() != 2 * model.slow_dofs() || hi.len() != lo.len() {
            return Err(Error::InvalidParameter(
                "slow box has the wrong dimension".into(),
            ));
        }
        let worst = det_defect_on_grid(&model, &lo, &hi, 5);
        if worst > DET_GRID_TOL {
            return Err(Error::DegenerateFamily(worst));
        }
        let mut lower = vec![-1.5, -1.5];
        let mut upper = vec![1.5, 1.5];
        lower.extend(lo);
        upper.extend(hi);
        Ok(QuadraticSystem {
            model,
            domain: Domain::new(lower, upper),
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    fn split<'s, S: Real>(&self, m: &'s [S]) -> ([S; 2], &'s [S]) {
        ([m[0], m[1]], &m[2..])
    }

    /// `det A − 1` check at one slow point.
    pub fn check_unimodular(&self, w: &[f64]) -> Result<()> {
        let d = (self.model.matrix(w).det() - 1.0).abs();
        if d > DET_TOL {
            Err(Error::DegenerateFamily(d))
        } else {
            Ok(())
        }
    }

    /// Entrywise `{f, A}₁` for a scalar `f` of the slow block.
    pub fn slow_bracket_matrix<F, S>(&self, f: F, w: &[S]) -> Mat2<S>
    where
        F: Fn(&[Dual<S>]) -> Dual<S>,
        S: Real,
    {
        slow_bracket(&f, &|v: &[Dual<S>]| self.model.matrix(v), w)
    }

    /// `M(w, z)` of the closed form, `F₁ = −Q_M(z)`.
    pub fn m_matrix<S: Real>(&self, w: &[S], z: [S; 2], reading: ClosedFormReading) -> Mat2<S> {
        let k = self.model.slow_dofs();
        let a = self.model.matrix(w);
        let om = self.model.omega(w);
        let b = slow_bracket(
            &|v: &[Dual<S>]| self.model.h(v),
            &|v: &[Dual<S>]| self.model.matrix(v),
            w,
        );
        let c = slow_bracket(
            &|v: &[Dual<S>]| self.model.omega(v),
            &|v: &[Dual<S>]| self.model.matrix(v),
            w,
        );
        let qa = q_form(&a, z);
        let first = (a.commutator(&b) + a.commutator(&c).scale(qa)).scale(om.recip() * 0.25);
        let partial = |i: usize| self.model.matrix(&seed_axis(w, i)).map(|e| e.eps);
        let mut hat = Mat2::zero();
        for i in 0..k {
            let dp = partial(i);
            let dq = partial(k + i);
            hat = hat + dq.scale(q_form(&(a * dp), z)) - dp.scale(q_form(&(a * dq), z));
        }
        let coeff = match reading {
            ClosedFormReading::Matched => S::cst(0.25),
            ClosedFormReading::AsPrinted => -om * 0.25,
        };
        first + hat.scale(coeff)
    }

    /// Closed-form `F₁ = −Q_M(z)`.
    pub fn f1_closed(&self, m: &[f64], reading: ClosedFormReading) -> Result<f64> {
        let (z, w) = self.split(m);
        self.check_unimodular(w)?;
        Ok(-q_form(&self.m_matrix(w, z, reading), z))
    }

    /// Closed-form `F₂ = (1/2ω) Q_{[A, {h, M}₁]}`, with `z` held fixed in the
    /// slow bracket.
    pub fn f2_closed(&self, m: &[f64], reading: ClosedFormReading) -> Result<f64> {
        let (z, w) = self.split(m);
        self.check_unimodular(w)?;
        let hm = slow_bracket(
            &|v: &[Dual<f64>]| self.model.h(v),
            &|v: &[Dual<f64>]| {
                self.m_matrix(v, [Dual::constant(z[0]), Dual::constant(z[1])], reading)
            },
            w,
        );
        let a = self.model.matrix(w);
        let om = self.model.omega(w);
        Ok(q_form(&a.commutator(&hm), z) / (2.0 * om))
    }
}

/// Entrywise `{f, G}₁ = Σ ∂f/∂p ∂G/∂q − ∂f/∂q ∂G/∂p` by forward duals.
fn slow_bracket<S, F, G>(f: &F, g: &G, w: &[S]) -> Mat2<S>
where
    S: Real,
    F: Fn(&[Dual<S>]) -> Dual<S>,
    G: Fn(&[Dual<S>]) -> Mat2<Dual<S>>,
{
    let k = w.len() / 2;
    let df: Vec<S> = (0..2 * k).map(|i| f(&seed_axis(w, i)).eps).collect();
    let dg: Vec<Mat2<S>> = (0..2 * k)
        .map(|i| g(&seed_axis(w, i)).map(|e| e.eps))
        .collect();
    let mut out = Mat2::zero();
    for i in 0..k {
        out = out + dg[k + i].scale(df[i]) - dg[i].scale(df[k + i]);
    }
    out
}

fn det_defect_on_grid<M: QuadraticModel>(
    model: &M,
    lo: &[f64],
    hi: &[f64],
    per_axis: usize,
) -> f64 {
    let n = lo.len();
    let total = per_axis.pow(n as u32);
    let mut worst = 0.0f64;
    let mut w = vec![0.0; n];
    for idx in 0..total {
        let mut rem = idx;
        for i in 0..n {
            let j = rem % per_axis;
            rem /= per_axis;
            w[i] = lo[i] + (hi[i] - lo[i]) * j as f64 / (per_axis - 1) as f64;
        }
        worst = worst.max((model.matrix(&w).det() - 1.0).abs());
    }
    worst
}

impl<M: QuadraticModel> SlowFastSystem for QuadraticSystem<M> {
    fn dims(&self) -> Dims {
        Dims::new(1, self.model.slow_dofs())
    }

    fn hamiltonian<S: Real>(&self, m: &[S]) -> S {
        let (z, w) = self.split(m);
        self.model.h(w) + self.model.omega(w) * q_form(&self.model.matrix(w), z)
    }

    fn frequency<S: Real>(&self, m: &[S]) -> S {
        self.model.omega(&m[2..])
    }

    fn momentum<S: Real>(&self, m: &[S]) -> S {
        let (z, w) = self.split(m);
        q_form(&self.model.matrix(w), z)
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn has_fast_flow(&self) -> bool {
        true
    }

    fn fast_flow<S: Real>(&self, tau: S, m: &[S]) -> Option<Vec<S>> {
        let (z, w) = self.split(m);
        let theta = tau * self.model.omega(w);
        let z1 = linear_flow(&self.model.matrix(w), theta, z);
        let mut out = m.to_vec();
        out[0] = z1[0];
        out[1] = z1[1];
        Some(out)
    }
}

/// `A = [[0, e^p], [−e^{−p}, 0]]`, `h = ½p²`, `ω = 1`, one slow pair.
/// Here `J` depends on `p` only and `H` has no `q`, so `F₁ = F₂ = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExpBenchmark;

impl QuadraticModel for ExpBenchmark {
    fn slow_dofs(&self) -> usize {
        1
    }
    fn h<S: Real>(&self, w: &[S]) -> S {
        w[0] * w[0] * 0.5
    }
    fn omega<S: Real>(&self, _w: &[S]) -> S {
        S::one()
    }
    fn entries<S: Real>(&self, w: &[S]) -> (S, S, S) {
        (S::zero(), w[0].exp(), -(-w[0]).exp())
    }
    fn slow_box(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1.0, -1.0], vec![1.0, 1.0])
    }
}

/// `A = P J₀ P⁻¹` with `J₀ = [[0, 1], [−1, 0]]` and a unimodular `P(p, q)`.
/// Every slow derivative is non-zero, which exercises all terms of `F₁`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConjugatedRotation;

impl QuadraticModel for ConjugatedRotation {
    fn slow_dofs(&self) -> usize {
        1
    }
    fn h<S: Real>(&self, w: &[S]) -> S {
        let (p, q) = (w[0], w[1]);
        p * p * 0.5 + q * q * 0.5 + p * q * 0.2
    }
    fn omega<S: Real>(&self, w: &[S]) -> S {
        w[1] * w[1] * 0.25 + w[0] / 7.0 + 1.0
    }
    fn entries<S: Real>(&self, w: &[S]) -> (S, S, S) {
        let (p, q) = (w[0], w[1]);
        let sp = p.sin();
        let pm = Mat2::new(S::one(), sp * 0.5, q / 3.0, sp * q / 6.0 + 1.0);
        conjugate_rotation(pm)
    }
    fn slow_box(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1.0, -1.0], vec![1.0, 1.0])
    }
}

/// `A = P(q) J₀ P(q)⁻¹`, `h = κ p + ½q²`, constant `ω`. With `A` free of `p`,
/// `h` linear in `p` and `ω` constant, the displayed `F₂` is exact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShearedRotation {
    pub kappa: f64,
    pub omega: f64,
}

impl Default for ShearedRotation {
    fn default() -> Self {
        ShearedRotation {
            kappa: 0.7,
            omega: 1.3,
        }
    }
}

impl QuadraticModel for ShearedRotation {
    fn slow_dofs(&self) -> usize {
        1
    }
    fn h<S: Real>(&self, w: &[S]) -> S {
        w[0] * self.kappa + w[1] * w[1] * 0.5
    }
    fn omega<S: Real>(&self, _w: &[S]) -> S {
        S::cst(self.omega)
    }
    fn entries<S: Real>(&self, w: &[S]) -> (S, S, S) {
        let q = w[1];
        let e = (q / 3.0).exp();
        let pm = Mat2::new(e, q * 0.5, S::zero(), e.recip());
        conjugate_rotation(pm)
    }
    fn slow_box(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1.0, -1.0], vec![1.0, 1.0])
    }
}

/// Entries of `P J₀ P⁻¹` for unimodular `P`.
fn conjugate_rotation<S: Real>(pm: Mat2<S>) -> (S, S, S) {
    let inv = Mat2::new(pm.d, -pm.b, -pm.c, pm.a);
    let j0 = Mat2::new(S::zero(), S::one(), -S::one(), S::zero());
    let a = pm * j0 * inv;
    (a.a, a.b, a.c)
}

/// A model with `det A ≠ 1`, used to exercise the degeneracy check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledRotation(pub f64);

impl QuadraticModel for ScaledRotation {
    fn slow_dofs(&self) -> usize {
        1
    }
    fn h<S: Real>(&self, _w: &[S]) -> S {
        S::zero()
    }
    fn omega<S: Real>(&self, _w: &[S]) -> S {
        S::one()
    }
    fn entries<S: Real>(&self, _w: &[S]) -> (S, S, S) {
        (S::zero(), S::cst(self.0), S::cst(-self.0))
    }
    fn slow_box(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1.0, -1.0], vec![1.0, 1.0])
    }
}

/// Random `sl(2)` matrix with unit determinant: `P J₀ P⁻¹` for random `P`.
pub fn random_unimodular<R: Rng + ?Sized>(rng: &mut R) -> Mat2<f64> {
    let a: f64 = rng.gen_range(-1.0..1.0);
    let b: f64 = rng.gen_range(-1.0..1.0);
    let c: f64 = rng.gen_range(-1.0..1.0);
    // P = [[1 + a, b], [c, d]] with det P = 1
    let p11 = 1.5 + a;
    let d = (1.0 + b * c) / p11;
    let (x, y, z) = conjugate_rotation(Mat2::new(p11, b, c, d));
    Mat2::sl2(x, y, z)
}

/// Random traceless matrix with entries in `[-1, 1]`.
pub fn random_traceless<R: Rng + ?Sized>(rng: &mut R) -> Mat2<f64> {
    Mat2::sl2(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rot() -> Mat2<f64> {
        Mat2::sl2(0.0, 1.0, -1.0)
    }

    #[test]
    fn q_of_rotation() {
        // J A = [[1, 0], [0, 1]] for this A, so Q = −½(y² + x²)
        let q = q_form(&rot(), [0.6, -0.8]);
        assert!((q + 0.5).abs() < 1e-15);
        assert_eq!(q_form(&rot(), [0.0, 0.0]), 0.0);
        let s = Mat2::sl2(0.3, -0.2, 0.9);
        let z = [0.4, 1.1];
        assert!((q_form(&s.scale(2.0), z) - 2.0 * q_form(&s, z)).abs() < 1e-15);
    }

    #[test]
    fn averaging_identities_on_special_cases() {
        let a = rot();
        assert!(avg_q(&a, &a).max_abs_diff(&a) < 1e-15);
        assert!(s_q(&a, &a).max_abs_diff(&Mat2::zero()) < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_traceless(&mut rng);
        assert!(a.commutator(&s).trace().abs() < 1e-15);
    }

    #[test]
    fn linear_flow_rotation_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_unimodular(&mut rng);
        assert!((a.det() - 1.0).abs() < 1e-12);
        let z = [0.3, -0.7];
        let half = linear_flow(&a, std::f64::consts::PI, z);
        assert!((half[0] + z[0]).abs() < 1e-15 && (half[1] + z[1]).abs() < 1e-15);
        let quarter = linear_flow(&a, std::f64::consts::FRAC_PI_2, z);
        let az = a.apply(z);
        assert!((quarter[0] - az[0]).abs() < 1e-15 && (quarter[1] - az[1]).abs() < 1e-15);
        let full = linear_flow(&a, std::f64::consts::TAU, z);
        assert!(((full[0] - z[0]).powi(2) + (full[1] - z[1]).powi(2)).sqrt() < 1e-12);
    }

    #[test]
    fn degenerate_family_rejected() {
        assert!(matches!(
            QuadraticSystem::new(ScaledRotation(1.1)),
            Err(Error::DegenerateFamily(_))
        ));
        assert!(QuadraticSystem::new(ScaledRotation(1.0)).is_ok());
    }

    #[test]
    fn slow_bracket_matrix_cases() {
        let sys = QuadraticSystem::new(ShearedRotation::default()).unwrap();
        let w = [0.2, 0.5];
        // h constant -> zero
        let zero = sys.slow_bracket_matrix(|_v: &[Dual<f64>]| Dual::constant(2.0), &w);
        assert!(zero.max_abs_diff(&Mat2::zero()) < 1e-15);
        // h = p with A = A(q): {p, A}_1 = ∂A/∂q
        let b = sys.slow_bracket_matrix(|v: &[Dual<f64>]| v[0], &w);
        let dq = sys.model().matrix(&seed_axis(&w, 1)).map(|e| e.eps);
        assert!(b.max_abs_diff(&dq) < 1e-15);
        // A constant -> zero
        let c = QuadraticSystem::new(ScaledRotation(1.0)).unwrap();
        let z = c.slow_bracket_matrix(|v: &[Dual<f64>]| v[0] * v[1], &w);
        assert!(z.max_abs_diff(&Mat2::zero()) < 1e-15);
    }

    #[test]
    fn constant_data_gives_zero_closed_forms() {
        let sys = QuadraticSystem::new(ScaledRotation(1.0)).unwrap();
        let m = [0.4, -0.3, 0.2, 0.1];
        assert_eq!(sys.f1_closed(&m, ClosedFormReading::Matched).unwrap(), 0.0);
        assert_eq!(sys.f2_closed(&m, ClosedFormReading::Matched).unwrap(), 0.0);
    }

    #[test]
    fn hamiltonian_matches_definition() {
        let sys = QuadraticSystem::new(ConjugatedRotation).unwrap();
        let m = [0.4, -0.3, 0.2, 0.1];
        let w = [0.2, 0.1];
        let direct = sys.model().h(&w)
            + sys.model().omega(&w) * q_form(&sys.model().matrix(&w), [0.4, -0.3]);
        assert!((sys.hamiltonian(&m) - direct).abs() < 1e-12);
    }
}
