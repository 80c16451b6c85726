#![allow(dead_code)]

use adiabatic::fixtures::{ChargedParticle, ElasticPendulum, HarmonicOscillator};
use adiabatic::phase::{PhasePoint, Polynomial, SlowFastSystem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn pendulum() -> ElasticPendulum {
    ElasticPendulum::new(1.0, 0.1).unwrap()
}

pub fn charged() -> ChargedParticle {
    ChargedParticle::new(1.0, 0.3).unwrap()
}

pub fn oscillator() -> HarmonicOscillator {
    HarmonicOscillator::new(1.3).unwrap()
}

/// Pendulum point from `(p, q, y, x)`.
pub fn pend_point(p: f64, q: f64, y: f64, x: f64) -> PhasePoint {
    PhasePoint::from_coords(adiabatic::phase::Dims::new(1, 1), vec![y, x, p, q]).unwrap()
}

/// `n` uniform points in the system's domain box.
pub fn sample_points<S: SlowFastSystem>(sys: &S, n: usize, seed: u64) -> Vec<PhasePoint> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| PhasePoint::from_coords(sys.dims(), sys.domain().sample(&mut r)).unwrap())
        .collect()
}

/// Same as [`sample_points`] but shrunk towards the box centre by `frac`.
pub fn interior_points<S: SlowFastSystem>(
    sys: &S,
    n: usize,
    seed: u64,
    frac: f64,
) -> Vec<PhasePoint> {
    let d = sys.domain();
    sample_points(sys, n, seed)
        .into_iter()
        .map(|m| {
            let c: Vec<f64> = m
                .coords()
                .iter()
                .zip(d.lower.iter().zip(&d.upper))
                .map(|(v, (lo, hi))| {
                    let mid = 0.5 * (lo + hi);
                    mid + frac * (v - mid)
                })
                .collect();
            PhasePoint::from_coords(sys.dims(), c).unwrap()
        })
        .collect()
}

/// Fixed observables on a 4-dimensional state `(y, x, p, q)`.
pub fn observable_library() -> Vec<Polynomial> {
    let e = |v: [u32; 4]| v.to_vec();
    vec![
        Polynomial::new(vec![(1.0, e([1, 0, 0, 0]))]),
        Polynomial::new(vec![(1.0, e([0, 2, 0, 0])), (-0.5, e([1, 1, 0, 0]))]),
        Polynomial::new(vec![(0.7, e([1, 0, 1, 1])), (1.0, e([0, 1, 0, 0]))]),
        Polynomial::new(vec![(1.0, e([3, 0, 0, 0])), (0.3, e([0, 2, 0, 1]))]),
        Polynomial::new(vec![
            (1.0, e([2, 2, 0, 0])),
            (-1.0, e([0, 3, 1, 0])),
            (0.2, e([0, 0, 2, 0])),
        ]),
        Polynomial::new(vec![(2.0, e([1, 1, 1, 0])), (-0.4, e([0, 1, 0, 2]))]),
    ]
}

/// `∂P/∂x_i` of a polynomial.
pub fn derivative(p: &Polynomial, i: usize) -> Polynomial {
    let terms = p
        .terms
        .iter()
        .filter(|(_, e)| e[i] > 0)
        .map(|(c, e)| {
            let mut e2 = e.clone();
            e2[i] -= 1;
            (c * e[i] as f64, e2)
        })
        .collect();
    Polynomial::new(terms)
}

pub fn sum(a: &Polynomial, b: &Polynomial) -> Polynomial {
    let mut t = a.terms.clone();
    t.extend(b.terms.iter().cloned());
    Polynomial::new(t)
}

pub fn scale(a: &Polynomial, s: f64) -> Polynomial {
    Polynomial::new(a.terms.iter().map(|(c, e)| (c * s, e.clone())).collect())
}

/// Symbolic `{f, g}₀` for `r = k = 1` in the `(y, x, p, q)` layout.
pub fn bracket0_poly(f: &Polynomial, g: &Polynomial) -> Polynomial {
    sum(
        &derivative(f, 0).product(&derivative(g, 1)),
        &scale(&derivative(f, 1).product(&derivative(g, 0)), -1.0),
    )
}

/// Residuals of the three operator identities at `m`:
/// `|L_Υ 𝒮f − (f − ⟨f⟩)|`, `|⟨𝒮f⟩|` and `|⟨⟨f⟩⟩ − ⟨f⟩|`.
pub fn operator_residuals<S: SlowFastSystem, F: adiabatic::phase::Observable>(
    action: &adiabatic::circle::CircleAction<'_, S>,
    f: &F,
    m: &PhasePoint,
) -> [f64; 3] {
    let dims = m.dims();
    let at = |x: &[f64]| PhasePoint::from_coords(dims, x.to_vec()).unwrap();
    let avg = action.average_scalar(f, m).unwrap();
    let lie = action
        .lie_derivative_t(|x| action.s_scalar(f, &at(x)).unwrap(), m.coords(), 1e-4)
        .unwrap();
    let homological = (lie - (f.eval(m.coords()) - avg)).abs();
    let nodes: Vec<f64> = action.outer_weights().nodes().collect();
    let orbit: Vec<PhasePoint> = nodes.iter().map(|t| action.flow(*t, m).unwrap()).collect();
    let n = orbit.len() as f64;
    let avg_s = orbit
        .iter()
        .map(|p| action.s_scalar(f, p).unwrap())
        .sum::<f64>()
        / n;
    let avg_avg = orbit
        .iter()
        .map(|p| action.average_scalar(f, p).unwrap())
        .sum::<f64>()
        / n;
    [homological, avg_s.abs(), (avg_avg - avg).abs()]
}

/// `n` random domain points whose whole fast orbit stays in the domain
/// (rejection sampling), so operators can be evaluated along the orbit.
pub fn orbit_points<S: SlowFastSystem>(sys: &S, n: usize, seed: u64) -> Vec<PhasePoint> {
    let action = adiabatic::circle::CircleAction::new(sys);
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let m = PhasePoint::from_coords(sys.dims(), sys.domain().sample(&mut r)).unwrap();
        let inside = (0..128).all(|j| {
            let t = std::f64::consts::TAU * j as f64 / 128.0;
            action
                .flow(t, &m)
                .is_ok_and(|p| sys.domain().contains(p.coords()))
        });
        if inside {
            out.push(m);
        }
    }
    out
}

/// Max over 200 random `(A, S, z)` of the errors of `⟨Q_S⟩ = ½Q_{S−ASA}`
/// and `𝒮(Q_S) = ¼Q_{[A,S]}` against direct `N = 16` quadrature.
pub fn quadratic_identity_errors(cases: usize, seed: u64) -> (f64, f64) {
    use adiabatic::circle::SpectralWeights;
    use adiabatic::quadratic::{
        avg_q, linear_flow, q_form, random_traceless, random_unimodular, s_q,
    };
    use rand::Rng;
    let mut r = rng(seed);
    let w = SpectralWeights::new(16);
    let (mut e_avg, mut e_s) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let a = random_unimodular(&mut r);
        let s = random_traceless(&mut r);
        let z = [r.gen_range(-1.5..1.5), r.gen_range(-1.5..1.5)];
        let profile: Vec<f64> = w
            .nodes()
            .map(|t| q_form(&s, linear_flow(&a, t, z)))
            .collect();
        e_avg = e_avg.max((w.average(&profile) - q_form(&avg_q(&a, &s), z)).abs());
        e_s = e_s.max((w.integrate(&profile) - q_form(&s_q(&a, &s), z)).abs());
    }
    (e_avg, e_s)
}
