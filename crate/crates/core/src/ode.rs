//! Explicit Runge-Kutta integration of complex-valued systems with output at
//! prescribed times.
//!
//! [`dopri5`] is the Dormand-Prince 5(4) pair with Hairer's step-size control
//! and fourth-order continuous extension; [`rk4`] is the classical fixed-step
//! scheme, kept as a cross-check.

use std::ops::ControlFlow;

use crate::hilbert::C64;

/// Right-hand side `dy/dt = f(t, y)`.
pub trait System {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[C64], dy: &mut [C64]);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Output index at which the observer asked to stop.
    pub stopped_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum OdeError {
    StepTooSmall { t: f64, h: f64 },
    TooManySteps { t: f64 },
    NonFinite { t: f64 },
}

impl OdeError {
    pub fn time(&self) -> f64 {
        match *self {
            OdeError::StepTooSmall { t, .. } | OdeError::TooManySteps { t } | OdeError::NonFinite { t } => t,
        }
    }
}

impl std::fmt::Display for OdeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OdeError::StepTooSmall { h, .. } => write!(f, "step size {h:e} underflow"),
            OdeError::TooManySteps { .. } => write!(f, "step budget exhausted"),
            OdeError::NonFinite { .. } => write!(f, "non-finite state"),
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

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

const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// `out = y + h Σ coeffs[i] k[i]`
fn combine(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for (idx, o) in out.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (c, k) in terms {
            acc += k[idx] * *c;
        }
        *o = y[idx] + acc * h;
    }
}

fn scaled_rms(err: &[C64], y: &[C64], y_new: &[C64], tol: &Tolerances) -> f64 {
    let n = err.len().max(1) as f64;
    let sum: f64 = err
        .iter()
        .zip(y.iter().zip(y_new))
        .map(|(e, (a, b))| {
            let sk = tol.abs + tol.rel * a.norm().max(b.norm());
            (e.norm() / sk).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step<S: System>(sys: &S, t: f64, y: &[C64], f0: &[C64], tol: &Tolerances, t_span: f64) -> f64 {
    let sk: Vec<f64> = y.iter().map(|v| tol.abs + tol.rel * v.norm()).collect();
    let dnf: f64 = f0.iter().zip(&sk).map(|(f, s)| (f.norm() / s).powi(2)).sum();
    let dny: f64 = y.iter().zip(&sk).map(|(v, s)| (v.norm() / s).powi(2)).sum();
    let hmax = tol.max_step.min(t_span);
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
    h = h.min(hmax);
    let mut y1 = vec![C64::new(0.0, 0.0); y.len()];
    combine(&mut y1, y, h, &[(1.0, f0)]);
    let mut f1 = vec![C64::new(0.0, 0.0); y.len()];
    sys.rhs(t + h, &y1, &mut f1);
    let der2: f64 = f1
        .iter()
        .zip(f0)
        .zip(&sk)
        .map(|((a, b), s)| ((a - b).norm() / s).powi(2))
        .sum::<f64>()
        .sqrt()
        / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
    (100.0 * h).min(h1).min(hmax)
}

/// Adaptive Dormand-Prince 5(4) with dense output at `outputs`.
///
/// `y0` is the state at `outputs[0]`; `observe` receives every output (the
/// first one included) and may break to end the integration early.
pub fn dopri5<S, F>(sys: &S, y0: &[C64], outputs: &[f64], tol: &Tolerances, mut observe: F) -> Result<Stats, OdeError>
where
    S: System,
    F: FnMut(usize, f64, &[C64]) -> ControlFlow<()>,
{
    let mut stats = Stats::default();
    let Some(&t0) = outputs.first() else {
        return Ok(stats);
    };
    if observe(0, t0, y0).is_break() {
        stats.stopped_at = Some(0);
        return Ok(stats);
    }
    let t_end = *outputs.last().unwrap();
    let n = y0.len();
    let zero = C64::new(0.0, 0.0);
    let mut y = y0.to_vec();
    let mut y_new = vec![zero; n];
    let mut tmp = vec![zero; n];
    let mut k: [Vec<C64>; 7] = std::array::from_fn(|_| vec![zero; n]);
    let mut cont: [Vec<C64>; 5] = std::array::from_fn(|_| vec![zero; n]);
    let mut err_vec = vec![zero; n];

    let mut t = t0;
    sys.rhs(t, &y, &mut k[0]);
    stats.evaluations += 1;
    let mut h = initial_step(sys, t, &y, &k[0], tol, t_end - t0);
    stats.evaluations += 1;
    let mut fac_old: f64 = 1e-4;
    let mut rejected_last = false;
    let mut next = 1;
    let expo1 = 0.2 - BETA * 0.75;

    while next < outputs.len() {
        if stats.accepted + stats.rejected >= tol.max_steps {
            return Err(OdeError::TooManySteps { t });
        }
        h = h.min(tol.max_step);
        let last = t + h * 1.01 >= t_end;
        if last {
            h = t_end - t;
        }
        if h <= f64::EPSILON * t.abs().max(1.0) * 10.0 {
            return Err(OdeError::StepTooSmall { t, h });
        }

        let [k1, k2, k3, k4, k5, k6, k7] = &mut k;
        combine(&mut tmp, &y, h, &[(A21, k1)]);
        sys.rhs(t + C2 * h, &tmp, k2);
        combine(&mut tmp, &y, h, &[(A31, k1), (A32, k2)]);
        sys.rhs(t + C3 * h, &tmp, k3);
        combine(&mut tmp, &y, h, &[(A41, k1), (A42, k2), (A43, k3)]);
        sys.rhs(t + C4 * h, &tmp, k4);
        combine(&mut tmp, &y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
        sys.rhs(t + C5 * h, &tmp, k5);
        combine(&mut tmp, &y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]);
        sys.rhs(t + h, &tmp, k6);
        combine(&mut y_new, &y, h, &[(A71, k1), (A73, k3), (A74, k4), (A75, k5), (A76, k6)]);
        let t_new = if last { t_end } else { t + h };
        sys.rhs(t_new, &y_new, k7);
        stats.evaluations += 6;

        for (i, e) in err_vec.iter_mut().enumerate() {
            *e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
        }
        let err = scaled_rms(&err_vec, &y, &y_new, tol);
        if !err.is_finite() {
            return Err(OdeError::NonFinite { t });
        }

        let fac11 = err.powf(expo1);
        if err <= 1.0 {
            stats.accepted += 1;
            if outputs[next] <= t_new {
                for i in 0..n {
                    let dy = y_new[i] - y[i];
                    let bspl = k1[i] * h - dy;
                    cont[0][i] = y[i];
                    cont[1][i] = dy;
                    cont[2][i] = bspl;
                    cont[3][i] = dy - k7[i] * h - bspl;
                    cont[4][i] = (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7) * h;
                }
                while next < outputs.len() && outputs[next] <= t_new {
                    let theta = (outputs[next] - t) / h;
                    let theta1 = 1.0 - theta;
                    for i in 0..n {
                        tmp[i] = cont[0][i]
                            + (cont[1][i] + (cont[2][i] + (cont[3][i] + cont[4][i] * theta1) * theta) * theta1) * theta;
                    }
                    if next == outputs.len() - 1 && last {
                        tmp.copy_from_slice(&y_new);
                    }
                    if observe(next, outputs[next], &tmp).is_break() {
                        stats.stopped_at = Some(next);
                        return Ok(stats);
                    }
                    next += 1;
                }
            }
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            t = t_new;
            let fac = (fac11 / fac_old.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            fac_old = err.max(1e-4);
            let mut h_new = h / fac;
            if rejected_last {
                h_new = h_new.min(h);
            }
            rejected_last = false;
            h = h_new;
        } else {
            stats.rejected += 1;
            rejected_last = true;
            h /= (fac11 / SAFE).min(1.0 / FAC_MIN);
        }
    }
    Ok(stats)
}

/// Classical RK4 with at most `max_step` per step; every output time is hit exactly.
pub fn rk4<S, F>(sys: &S, y0: &[C64], outputs: &[f64], max_step: f64, mut observe: F) -> Result<Stats, OdeError>
where
    S: System,
    F: FnMut(usize, f64, &[C64]) -> ControlFlow<()>,
{
    let mut stats = Stats::default();
    let Some(&t0) = outputs.first() else {
        return Ok(stats);
    };
    if observe(0, t0, y0).is_break() {
        stats.stopped_at = Some(0);
        return Ok(stats);
    }
    let n = y0.len();
    let zero = C64::new(0.0, 0.0);
    let mut y = y0.to_vec();
    let mut tmp = vec![zero; n];
    let mut k: [Vec<C64>; 4] = std::array::from_fn(|_| vec![zero; n]);
    for idx in 1..outputs.len() {
        let (ta, tb) = (outputs[idx - 1], outputs[idx]);
        let sub = ((tb - ta) / max_step).ceil().max(1.0) as usize;
        let h = (tb - ta) / sub as f64;
        for s in 0..sub {
            let t = ta + s as f64 * h;
            let [k1, k2, k3, k4] = &mut k;
            sys.rhs(t, &y, k1);
            combine(&mut tmp, &y, 0.5 * h, &[(1.0, k1)]);
            sys.rhs(t + 0.5 * h, &tmp, k2);
            combine(&mut tmp, &y, 0.5 * h, &[(1.0, k2)]);
            sys.rhs(t + 0.5 * h, &tmp, k3);
            combine(&mut tmp, &y, h, &[(1.0, k3)]);
            sys.rhs(t + h, &tmp, k4);
            for i in 0..n {
                y[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
            }
            stats.evaluations += 4;
            stats.accepted += 1;
            if !y.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
                return Err(OdeError::NonFinite { t: t + h });
            }
        }
        if observe(idx, tb, &y).is_break() {
            stats.stopped_at = Some(idx);
            return Ok(stats);
        }
    }
    Ok(stats)
}
