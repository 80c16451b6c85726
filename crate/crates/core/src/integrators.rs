//! Explicit integrators for autonomous fields `ẋ = f(x)`: classical RK4 and
//! the Dormand–Prince 5(4) pair with its 4th-order dense output.
//!
//! Samples are produced on a caller-supplied time grid. In adaptive mode the
//! grid is filled by dense interpolation, so the output does not depend on
//! where the step controller happened to land.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{loglog_fit, LineFit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Rk4,
    Dopri5,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Step for `Rk4`; initial step hint for `Dopri5` (0 = automatic).
    pub dt: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::adaptive(1e-11, 1e-13)
    }
}

impl IntegratorConfig {
    pub fn adaptive(rtol: f64, atol: f64) -> Self {
        IntegratorConfig {
            method: Method::Dopri5,
            dt: 0.0,
            rtol,
            atol,
            max_steps: 10_000_000,
        }
    }

    pub fn fixed(dt: f64) -> Self {
        IntegratorConfig {
            method: Method::Rk4,
            dt,
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 10_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidParameter(format!(
                "{what} must be > 0, got {v}"
            )))
        };
        match self.method {
            Method::Rk4 if !(self.dt > 0.0 && self.dt.is_finite()) => return bad("dt", self.dt),
            Method::Dopri5 => {
                if !(self.rtol > 0.0) {
                    return bad("rtol", self.rtol);
                }
                if !(self.atol > 0.0) {
                    return bad("atol", self.atol);
                }
                if !(self.dt >= 0.0) {
                    return bad("dt", self.dt);
                }
            }
            _ => {}
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: IntegrationStats,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
}

/// One classical Runge–Kutta step.
pub fn step_rk4<F: Fn(&[f64], &mut [f64])>(field: &F, x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    field(x, &mut k1);
    axpy(&mut tmp, x, 0.5 * dt, &k1);
    field(&tmp, &mut k2);
    axpy(&mut tmp, x, 0.5 * dt, &k2);
    field(&tmp, &mut k3);
    axpy(&mut tmp, x, dt, &k3);
    field(&tmp, &mut k4);
    (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn axpy(out: &mut [f64], x: &[f64], a: f64, k: &[f64]) {
    for ((o, xi), ki) in out.iter_mut().zip(x).zip(k) {
        *o = xi + a * ki;
    }
}

/// Integrate from `t = 0` to `t_end` (either sign) and return the states at
/// `sample_times`, which must be monotone in the direction of travel and
/// lie between `0` and `t_end`.
pub fn integrate<F: Fn(&[f64], &mut [f64])>(
    field: F,
    x0: &[f64],
    t_end: f64,
    sample_times: &[f64],
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    let mut times = Vec::with_capacity(sample_times.len());
    let mut states = Vec::with_capacity(sample_times.len());
    let stats = integrate_with(field, x0, t_end, sample_times, config, |t, x| {
        times.push(t);
        states.push(x.to_vec());
        Ok(())
    })?;
    Ok(Trajectory {
        times,
        states,
        stats,
    })
}

/// Streaming form of [`integrate`]: `sink` is called once per sample in
/// order, and an error from it aborts the run.
pub fn integrate_with<F, C>(
    field: F,
    x0: &[f64],
    t_end: f64,
    sample_times: &[f64],
    config: &IntegratorConfig,
    mut sink: C,
) -> Result<IntegrationStats>
where
    F: Fn(&[f64], &mut [f64]),
    C: FnMut(f64, &[f64]) -> Result<()>,
{
    config.validate()?;
    if !t_end.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "t_end must be finite, got {t_end}"
        )));
    }
    let dir = if t_end < 0.0 { -1.0 } else { 1.0 };
    let mut prev = 0.0;
    for &s in sample_times {
        if !(s * dir >= prev * dir && s * dir <= t_end * dir) {
            return Err(Error::InvalidParameter(format!(
                "sample time {s} out of order or outside [0, {t_end}]"
            )));
        }
        prev = s;
    }
    match config.method {
        Method::Rk4 => fixed_rk4(&field, x0, sample_times, config, dir, &mut sink),
        Method::Dopri5 => dopri5(&field, x0, t_end, sample_times, config, dir, &mut sink),
    }
}

fn fixed_rk4<F, C>(
    field: &F,
    x0: &[f64],
    samples: &[f64],
    config: &IntegratorConfig,
    dir: f64,
    sink: &mut C,
) -> Result<IntegrationStats>
where
    F: Fn(&[f64], &mut [f64]),
    C: FnMut(f64, &[f64]) -> Result<()>,
{
    let mut t = 0.0;
    let mut x = x0.to_vec();
    let mut stats = IntegrationStats::default();
    for &ts in samples {
        while (ts - t) * dir > 0.0 {
            if stats.accepted >= config.max_steps {
                return Err(Error::MaxStepsExceeded { t });
            }
            let remaining = (ts - t).abs();
            // land exactly on the sample when within a hair of a full step
            let h = if remaining <= config.dt * (1.0 + 1e-12) {
                remaining
            } else {
                config.dt
            };
            x = step_rk4(field, &x, dir * h);
            t = if h == remaining { ts } else { t + dir * h };
            stats.accepted += 1;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integration(format!("non-finite state at t = {t}")));
            }
        }
        sink(ts, &x)?;
    }
    Ok(stats)
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

struct Stages {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y1: Vec<f64>,
    err: Vec<f64>,
}

impl Stages {
    fn new(n: usize) -> Self {
        Stages {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y1: vec![0.0; n],
            err: vec![0.0; n],
        }
    }

    /// Stages 2..7 from `k[0] = f(y)`; fills `y1`, `err` and `k[6] = f(y1)`.
    fn step<F: Fn(&[f64], &mut [f64])>(&mut self, field: &F, y: &[f64], h: f64) {
        let n = y.len();
        let Stages { k, tmp, y1, err } = self;
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k[0][i];
        }
        field(tmp, &mut k[1]);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
        }
        field(tmp, &mut k[2]);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        field(tmp, &mut k[3]);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        field(tmp, &mut k[4]);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k[0][i]
                    + A62 * k[1][i]
                    + A63 * k[2][i]
                    + A64 * k[3][i]
                    + A65 * k[4][i]);
        }
        field(tmp, &mut k[5]);
        for i in 0..n {
            y1[i] = y[i]
                + h * (A71 * k[0][i]
                    + A73 * k[2][i]
                    + A74 * k[3][i]
                    + A75 * k[4][i]
                    + A76 * k[5][i]);
        }
        field(y1, &mut k[6]);
        for i in 0..n {
            err[i] = h
                * (E1 * k[0][i]
                    + E3 * k[2][i]
                    + E4 * k[3][i]
                    + E5 * k[4][i]
                    + E6 * k[5][i]
                    + E7 * k[6][i]);
        }
    }
}

fn error_norm(y0: &[f64], y1: &[f64], err: &[f64], rtol: f64, atol: f64) -> f64 {
    let n = y0.len() as f64;
    let s: f64 = y0
        .iter()
        .zip(y1)
        .zip(err)
        .map(|((a, b), e)| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn initial_step<F: Fn(&[f64], &mut [f64])>(
    field: &F,
    y: &[f64],
    f0: &[f64],
    rtol: f64,
    atol: f64,
) -> f64 {
    let n = y.len() as f64;
    let sc: Vec<f64> = y.iter().map(|v| atol + rtol * v.abs()).collect();
    let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0
        .iter()
        .zip(&sc)
        .map(|(v, s)| (v / s).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; y.len()];
    field(&y1, &mut f1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(&sc)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

fn dopri5<F, C>(
    field: &F,
    x0: &[f64],
    t_end: f64,
    samples: &[f64],
    config: &IntegratorConfig,
    dir: f64,
    sink: &mut C,
) -> Result<IntegrationStats>
where
    F: Fn(&[f64], &mut [f64]),
    C: FnMut(f64, &[f64]) -> Result<()>,
{
    let n = x0.len();
    let (rtol, atol) = (config.rtol, config.atol);
    let mut st = Stages::new(n);
    let mut y = x0.to_vec();
    let mut t = 0.0;
    let mut stats = IntegrationStats::default();
    let mut next = 0;
    while next < samples.len() && samples[next] == 0.0 {
        sink(0.0, &y)?;
        next += 1;
    }
    if t_end == 0.0 {
        return Ok(stats);
    }
    field(&y, &mut st.k[0]);
    let span = t_end.abs();
    let mut h = if config.dt > 0.0 {
        config.dt
    } else {
        initial_step(field, &y, &st.k[0], rtol, atol)
    };
    h = h.min(span);
    let h_min = 16.0 * f64::EPSILON * span.max(1.0);
    let mut cont = vec![[0.0; 5]; n];
    let mut out = vec![0.0; n];
    let mut last_rejected = false;

    while (t_end - t) * dir > 0.0 {
        if stats.accepted + stats.rejected >= config.max_steps {
            return Err(Error::MaxStepsExceeded { t });
        }
        let remaining = (t_end - t).abs();
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        st.step(field, &y, dir * h);
        let err = error_norm(&y, &st.y1, &st.err, rtol, atol);
        if !err.is_finite() {
            h *= 0.2;
            stats.rejected += 1;
            if h < h_min {
                return Err(Error::StepSizeUnderflow { t });
            }
            continue;
        }
        if err > 1.0 {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            last_rejected = true;
            if h < h_min {
                return Err(Error::StepSizeUnderflow { t });
            }
            continue;
        }
        stats.accepted += 1;
        let hs = dir * h;
        let t_new = if last { t_end } else { t + hs };
        for i in 0..n {
            let dy = st.y1[i] - y[i];
            let bspl = hs * st.k[0][i] - dy;
            let k = &st.k;
            cont[i] = [
                y[i],
                dy,
                bspl,
                dy - hs * k[6][i] - bspl,
                hs * (D1 * k[0][i]
                    + D3 * k[2][i]
                    + D4 * k[3][i]
                    + D5 * k[4][i]
                    + D6 * k[5][i]
                    + D7 * k[6][i]),
            ];
        }
        while next < samples.len() && (samples[next] - t_new) * dir <= 0.0 {
            let ts = samples[next];
            if ts == t_new {
                out.copy_from_slice(&st.y1);
            } else {
                let th = (ts - t) / hs;
                let th1 = 1.0 - th;
                for (o, c) in out.iter_mut().zip(&cont) {
                    *o = c[0] + th * (c[1] + th1 * (c[2] + th * (c[3] + th1 * c[4])));
                }
            }
            sink(ts, &out)?;
            next += 1;
        }
        t = t_new;
        std::mem::swap(&mut y, &mut st.y1);
        let (k0, rest) = st.k.split_at_mut(1);
        k0[0].copy_from_slice(&rest[5]);
        let mut fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
        if last_rejected {
            fac = fac.min(1.0);
        }
        last_rejected = false;
        h *= fac;
        if h < h_min {
            return Err(Error::StepSizeUnderflow { t });
        }
    }
    Ok(stats)
}

/// Result of a fixed-step convergence study.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderFit {
    /// `None` when every error is at rounding level (nothing to fit).
    pub order: Option<f64>,
    pub fit: Option<LineFit>,
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
}

impl OrderFit {
    pub fn degenerate(&self) -> bool {
        self.order.is_none()
    }
}

/// Observed order of RK4 on `field` over `[0, t_end]`.
pub fn convergence_order<F: Fn(&[f64], &mut [f64])>(
    field: F,
    x0: &[f64],
    t_end: f64,
    dt_list: &[f64],
) -> Result<OrderFit> {
    convergence_order_with(|x, dt| step_rk4(&field, x, dt), x0, t_end, dt_list)
}

/// Observed order of an arbitrary one-step map `step(x, dt)`, measured
/// against a reference run at `min(dt)/16`.
pub fn convergence_order_with<S: Fn(&[f64], f64) -> Vec<f64>>(
    step: S,
    x0: &[f64],
    t_end: f64,
    dt_list: &[f64],
) -> Result<OrderFit> {
    if dt_list.len() < 2 || dt_list.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidParameter(
            "need at least two positive step sizes".into(),
        ));
    }
    let run = |dt: f64| {
        let n = (t_end / dt).round().max(1.0) as usize;
        let h = t_end / n as f64;
        (0..n).fold(x0.to_vec(), |x, _| step(&x, h))
    };
    let dt_min = dt_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let reference = run(dt_min / 16.0);
    let scale = reference.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let errors: Vec<f64> = dt_list
        .iter()
        .map(|&dt| {
            let x = run(dt);
            x.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let floor = 1e3 * f64::EPSILON * scale;
    let usable: Vec<(f64, f64)> = dt_list
        .iter()
        .zip(&errors)
        .filter(|(_, e)| **e > floor)
        .map(|(d, e)| (*d, *e))
        .collect();
    let fit = if usable.len() >= 2 {
        let (d, e): (Vec<f64>, Vec<f64>) = usable.into_iter().unzip();
        loglog_fit(&d, &e)
    } else {
        None
    };
    Ok(OrderFit {
        order: fit.map(|f| f.slope),
        fit,
        dts: dt_list.to_vec(),
        errors,
    })
}
