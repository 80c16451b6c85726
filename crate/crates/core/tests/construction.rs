use adiabatic::circle::CircleAction;
use adiabatic::fixtures::{ChargedParticle, ElasticPendulum};
use adiabatic::invariants::{Construction, F2Variant};
use adiabatic::phase::{Dims, PhasePoint};

fn pend_point(p: f64, q: f64, y: f64, x: f64) -> PhasePoint {
    PhasePoint::new(Dims::new(1, 1), &[y, x], &[p, q]).unwrap()
}

#[test]
fn pendulum_reference_point() {
    let sys = ElasticPendulum::new(1.0, 1.0).unwrap();
    let action = CircleAction::new(&sys);
    let c = Construction::new(&action);
    let m = pend_point(1.0, 1.0, 1.0, 0.0);
    let f1 = c.f1(&m).unwrap();
    let ai3 = c.f2(&m, F2Variant::Ai3).unwrap();
    let ty3 = c.f2(&m, F2Variant::Ty3).unwrap();
    println!("{f1} {ai3} {ty3}");
    assert!((f1 - 1.0).abs() < 1e-6);
    assert!((ai3 + 0.875).abs() < 1e-4);
}

#[test]
fn charged_reference_point() {
    let sys = ChargedParticle::new(1.0, 0.3).unwrap();
    let action = CircleAction::new(&sys);
    let c = Construction::new(&action);
    let m = PhasePoint::new(Dims::new(1, 1), &[0.1, 0.4], &[0.2, 1.0]).unwrap();
    let f1 = c.f1(&m).unwrap();
    println!("{f1} {}", sys.j1_closed(m.coords()));
    assert!((f1 - sys.j1_closed(m.coords())).abs() < 1e-6);
}
