//! Figures of merit: ergotropy, first dynamical maximum, transfer rate and power.

use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::evolve::Trajectory;
use crate::hilbert::{hermitian_eigenvalues, trace_product, DensityMatrix, Operator, C64};

/// Lowest admissible ergotropy before clamping to zero.
pub const ERGOTROPY_FLOOR: f64 = -1e-10;

/// `ℰ = Tr{ρH} - Σ_k r_k↓ ε_k↑`.
///
/// The passive-state energy pairs the largest populations with the lowest
/// levels, which stays well defined when `H` is degenerate.
pub fn ergotropy(rho: &DensityMatrix, h: &Operator) -> Result<f64> {
    if rho.dim() != h.dim() {
        return Err(Error::DimensionMismatch { expected: h.dim(), found: rho.dim() });
    }
    let levels = h.eigenvalues()?;
    ergotropy_with_levels(rho.matrix(), h.matrix(), &levels)
}

/// Same as [`ergotropy`] with the spectrum of `h` (ascending) supplied.
pub(crate) fn ergotropy_with_levels(rho: &DMatrix<C64>, h: &DMatrix<C64>, levels: &[f64]) -> Result<f64> {
    let energy = trace_product(h, rho).re;
    let mut pops = hermitian_eigenvalues(rho);
    pops.reverse();
    let passive: f64 = pops.iter().zip(levels).map(|(r, e)| r * e).sum();
    let value = energy - passive;
    if value < ERGOTROPY_FLOOR {
        return Err(Error::NegativeErgotropy(value));
    }
    Ok(value.max(0.0))
}

/// Closed-form holder ergotropy (units of `ħω_c`) of the resonant single-qubit
/// battery charged from one photon without loss: `1 - 2cos²(gt)` while
/// `gt ∈ [π/4, 3π/4]` modulo `π`, zero otherwise.
pub fn jc_ergotropy_analytic(g: f64, t: f64) -> f64 {
    let x = (g * t).rem_euclid(PI);
    if (FRAC_PI_4..=3.0 * FRAC_PI_4).contains(&x) {
        1.0 - 2.0 * (g * t).cos().powi(2)
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FirstMax {
    pub tau_bar: f64,
    pub value_bar: f64,
    pub found: bool,
    /// Sample index of the discrete maximum.
    pub index: usize,
}

impl FirstMax {
    fn missing(values: &[f64]) -> Self {
        Self { tau_bar: 0.0, value_bar: values.first().copied().unwrap_or(0.0), found: false, index: 0 }
    }
}

/// Earliest local maximum `values[k-1] < values[k] >= values[k+1]`, refined by
/// the parabola through the three samples around it.
pub fn first_maximum(times: &[f64], values: &[f64]) -> FirstMax {
    if times.len() != values.len() || values.len() < 3 {
        return FirstMax::missing(values);
    }
    let Some(k) = (1..values.len() - 1).find(|&k| values[k - 1] < values[k] && values[k] >= values[k + 1]) else {
        return FirstMax::missing(values);
    };
    let (h1, h2) = (times[k] - times[k - 1], times[k + 1] - times[k]);
    let s1 = (values[k] - values[k - 1]) / h1;
    let s2 = (values[k + 1] - values[k]) / h2;
    let curv = (s2 - s1) / (h1 + h2);
    let slope = s1 + curv * h1;
    let offset = if curv < 0.0 { (-slope / (2.0 * curv)).clamp(-h1, h2) } else { 0.0 };
    FirstMax {
        tau_bar: times[k] + offset,
        value_bar: values[k] + slope * offset + curv * offset * offset,
        found: true,
        index: k,
    }
}

/// Merit quantities at the first maximum of the holder energy.
///
/// Times are in units of `π/Ω_R` and energies in `ħω_c`, so `omega_bar` is
/// `2π/τ̄` in units of `Ω_R/π` and `p_bar` is in `ħω_c Ω_R/π`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeritValues {
    pub e_bar: f64,
    pub tau_bar: f64,
    pub omega_bar: f64,
    pub p_bar: f64,
    pub ergo_bar: f64,
    /// Recorded sample nearest to `tau_bar`.
    pub sample: usize,
}

impl MeritValues {
    pub fn new(e_bar: f64, tau_bar: f64, ergo_bar: f64, sample: usize) -> Self {
        Self { e_bar, tau_bar, omega_bar: 2.0 * PI / tau_bar, p_bar: e_bar / tau_bar, ergo_bar, sample }
    }

    /// `copies` independent batteries: extensive quantities scale, times do not.
    pub fn replicated(&self, copies: usize) -> Self {
        let n = copies as f64;
        Self { e_bar: self.e_bar * n, p_bar: self.p_bar * n, ergo_bar: self.ergo_bar * n, ..*self }
    }
}

pub fn merit_from_trajectory(traj: &Trajectory) -> Result<MeritValues> {
    let peak = first_maximum(&traj.times, &traj.e_h);
    if !peak.found {
        return Err(Error::NoMaximum);
    }
    let sample = nearest_sample(&traj.times, peak.tau_bar);
    Ok(MeritValues::new(peak.value_bar, peak.tau_bar, traj.ergotropy_h[sample], sample))
}

pub(crate) fn nearest_sample(times: &[f64], t: f64) -> usize {
    times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}
