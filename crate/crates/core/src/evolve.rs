//! Open-system time evolution of the battery with the dissipated heat
//! integrated alongside the state.
//!
//! The master equation is compiled into a sparse linear map acting only on the
//! density-matrix entries that can become nonzero. Since the Hamiltonian
//! conserves the total excitation number and the cavity jumps change it by
//! exactly one, an entry `ρ_ij` stays zero unless its excitation gap
//! `n_i - n_j` already occurs in the initial state. By default the equation is
//! solved in the frame rotating at `ω_c` per excitation, which removes the
//! fast carrier oscillation without changing any recorded quantity.

use std::collections::BTreeSet;
use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hilbert::{
    annihilation, embed_charger, fock_state, hermitian_eigenvalues, partial_trace_charger, BasisSpec,
    DensityMatrix, Operator, Physicality, C64,
};
use crate::merit::ergotropy_with_levels;
use crate::model::{hamiltonian, holder_only_hamiltonian, BatteryParams};
use crate::ode::{self, OdeError, Stats, System, Tolerances};

/// Diagnostics may exceed their bounds by this factor before integration stops.
pub const PHYSICALITY_SLACK: f64 = 10.0;

/// Largest Hilbert-space dimension accepted by [`vectorized_liouvillian`]
/// (the superoperator has `d⁴` entries).
pub const LIOUVILLIAN_DIM_LIMIT: usize = 48;

const ZERO: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);
const INACTIVE: u32 = u32::MAX;

/// Uniform sampling of `[0, t_max]`, in units of `π/Ω_R`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t_max: f64,
    samples: usize,
}

impl TimeGrid {
    pub const MIN_SAMPLES: usize = 100;

    pub fn new(t_max: f64, samples: usize) -> Result<Self> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidGrid(format!("t_max must be positive and finite, got {t_max}")));
        }
        if samples < Self::MIN_SAMPLES {
            return Err(Error::InvalidGrid(format!(
                "at least {} samples are required, got {samples}",
                Self::MIN_SAMPLES
            )));
        }
        Ok(Self { t_max, samples })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn step(&self) -> f64 {
        self.t_max / (self.samples - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let n = self.samples - 1;
        (0..=n).map(|k| if k == n { self.t_max } else { k as f64 * self.t_max / n as f64 }).collect()
    }
}

impl Default for TimeGrid {
    /// `[0, 3]` with spacing `10⁻³`, so `t = 1` is sample 1000.
    fn default() -> Self {
        Self { t_max: 3.0, samples: 3001 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Method {
    #[default]
    AdaptiveRK,
    FixedRK4,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Frame {
    /// Rotating at `ω_c` per excitation.
    #[default]
    Rotating,
    Lab,
}

/// Deliberate defects, used to check that the diagnostics catch them.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Wrong sign on the jump term `2cρc†` of the state equation.
    FlipJumpSign,
    /// Wrong sign on the heat current.
    FlipHeatSign,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on the step, in units of `π/Ω_R`; the fixed step for RK4.
    pub max_step: f64,
    pub max_steps: usize,
    pub method: Method,
    pub frame: Frame,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            max_step: 0.01,
            max_steps: 5_000_000,
            method: Method::AdaptiveRK,
            frame: Frame::Rotating,
            fault: None,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol), ("max_step", self.max_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParams("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Sampled observables; times in units of `π/Ω_R`, energies in `ħω_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub e_h: Vec<f64>,
    pub e_c: Vec<f64>,
    /// Heat released into the bath since `t = 0`.
    pub heat: Vec<f64>,
    pub ergotropy_h: Vec<f64>,
    pub trace_error: Vec<f64>,
    pub hermiticity_error: Vec<f64>,
    pub min_eigenvalue: Vec<f64>,
    /// Lab-frame state at the last recorded sample.
    pub final_state: DensityMatrix,
    /// `E_h + E_c` at `t = 0`.
    pub reference_energy: f64,
    pub stats: Stats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `|E_h + E_c + Q - E(0)|` at sample `k`.
    pub fn conservation_residual(&self, k: usize) -> f64 {
        (self.e_h[k] + self.e_c[k] + self.heat[k] - self.reference_energy).abs()
    }

    pub fn max_conservation_residual(&self) -> f64 {
        (0..self.len()).map(|k| self.conservation_residual(k)).fold(0.0, f64::max)
    }

    fn push(&mut self, t: f64, s: &Sample) {
        self.times.push(t);
        self.e_h.push(s.e_h);
        self.e_c.push(s.e_c);
        self.heat.push(s.heat);
        self.ergotropy_h.push(s.ergotropy);
        self.trace_error.push(s.physicality.trace_error);
        self.hermiticity_error.push(s.physicality.hermiticity_error);
        self.min_eigenvalue.push(s.physicality.min_eigenvalue);
    }
}

struct Sample {
    e_h: f64,
    e_c: f64,
    heat: f64,
    ergotropy: f64,
    physicality: Physicality,
}

/// Nonzero entries of a dense matrix by row and by column.
struct Sparse {
    rows: Vec<Vec<(usize, C64)>>,
    cols: Vec<Vec<(usize, C64)>>,
}

impl Sparse {
    fn new(m: &DMatrix<C64>) -> Self {
        let d = m.nrows();
        let mut rows = vec![Vec::new(); d];
        let mut cols = vec![Vec::new(); d];
        for j in 0..d {
            for i in 0..d {
                let v = m[(i, j)];
                if v != ZERO {
                    rows[i].push((j, v));
                    cols[j].push((i, v));
                }
            }
        }
        Self { rows, cols }
    }

    fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.iter().enumerate().flat_map(|(i, r)| r.iter().map(move |&(j, _)| (i, j)))
    }
}

fn merge(mut terms: Vec<(u32, C64)>) -> Vec<(u32, C64)> {
    terms.sort_unstable_by_key(|t| t.0);
    let mut out: Vec<(u32, C64)> = Vec::with_capacity(terms.len());
    for (q, v) in terms {
        match out.last_mut() {
            Some(last) if last.0 == q => last.1 += v,
            _ => out.push((q, v)),
        }
    }
    out.retain(|t| t.1 != ZERO);
    out
}

/// Master equation compiled for one parameter set, basis and initial state.
///
/// The state vector holds the active density-matrix entries followed by the
/// accumulated heat.
pub struct Generator {
    dim: usize,
    holder_dim: usize,
    frame_freq: f64,
    time_unit: f64,
    pairs: Vec<(u32, u32)>,
    lookup: Vec<u32>,
    gaps: Vec<f64>,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<C64>,
    heat: Vec<(u32, C64)>,
    heat_sign: f64,
    diagonal: Vec<u32>,
    charger_levels: Vec<f64>,
    holder_weights: Vec<f64>,
    partner: Vec<u32>,
    holder_h: DMatrix<C64>,
    holder_levels: Vec<f64>,
}

impl Generator {
    pub fn new(params: &BatteryParams, basis: &BasisSpec, rho0: &DensityMatrix, cfg: &IntegratorConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        let d = basis.dim();
        if rho0.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: rho0.dim() });
        }
        let dh = basis.holder_dim();
        let exc: Vec<i64> = basis.excitations().iter().map(|&e| e as i64).collect();
        let h_lab = hamiltonian(params, basis)?.into_matrix();
        let conserving = Sparse::new(&h_lab).entries().all(|(i, j)| exc[i] == exc[j]);
        let frame_freq = if conserving && cfg.frame == Frame::Rotating { params.omega_c } else { 0.0 };

        // Active entries: closed under the dynamics whenever H conserves excitations.
        let rho = rho0.matrix();
        let mut gaps_present = BTreeSet::from([0i64]);
        for j in 0..d {
            for i in 0..d {
                if rho[(i, j)] != ZERO {
                    gaps_present.insert(exc[i] - exc[j]);
                    gaps_present.insert(exc[j] - exc[i]);
                }
            }
        }
        let mut pairs = Vec::new();
        let mut lookup = vec![INACTIVE; d * d];
        for i in 0..d {
            for j in 0..d {
                if !conserving || gaps_present.contains(&(exc[i] - exc[j])) {
                    lookup[i * d + j] = pairs.len() as u32;
                    pairs.push((i as u32, j as u32));
                }
            }
        }
        let at = |k: usize, l: usize| -> u32 {
            let q = lookup[k * d + l];
            assert!(q != INACTIVE, "master equation leaves the active entry set");
            q
        };

        let mut h_eff = h_lab.clone();
        for i in 0..d {
            h_eff[(i, i)] -= C64::from(frame_freq * exc[i] as f64);
        }
        let h_eff = Sparse::new(&h_eff);

        let dc = basis.cavity_cutoff();
        let a = annihilation(dc)?;
        let mut channels = Vec::new();
        if params.kappa > 0.0 {
            channels.push((params.kappa * (params.n_th + 1.0), a.clone()));
            if params.n_th > 0.0 {
                channels.push((params.kappa * params.n_th, a.adjoint()));
            }
        }
        let jump_sign = if cfg.fault == Some(Fault::FlipJumpSign) { -1.0 } else { 1.0 };
        let mut jumps = Vec::new();
        for (gamma, c) in channels {
            let m = &c.adjoint() * &c;
            jumps.push((
                gamma,
                Sparse::new(embed_charger(&c, basis)?.matrix()),
                Sparse::new(embed_charger(&m, basis)?.matrix()),
            ));
        }

        let n_active = pairs.len();
        let mut offsets = Vec::with_capacity(n_active + 1);
        offsets.push(0);
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        let mut heat_acc = vec![ZERO; n_active];
        for &(i, j) in &pairs {
            let (i, j) = (i as usize, j as usize);
            let mut diss = Vec::new();
            for (gamma, c, m) in &jumps {
                let jump = C64::from(2.0 * gamma * jump_sign);
                for &(k, cik) in &c.rows[i] {
                    for &(l, cjl) in &c.rows[j] {
                        diss.push((at(k, l), jump * cik * cjl.conj()));
                    }
                }
                for &(k, mik) in &m.rows[i] {
                    diss.push((at(k, j), -*gamma * mik));
                }
                for &(k, mkj) in &m.cols[j] {
                    diss.push((at(i, k), -*gamma * mkj));
                }
            }
            let diss = merge(diss);
            let w = h_lab[(j, i)];
            if w != ZERO {
                for &(q, c) in &diss {
                    heat_acc[q as usize] += w * c;
                }
            }
            let mut row = diss;
            for &(k, hik) in &h_eff.rows[i] {
                row.push((at(k, j), -I * hik));
            }
            for &(k, hkj) in &h_eff.cols[j] {
                row.push((at(i, k), I * hkj));
            }
            for (q, v) in merge(row) {
                cols.push(q);
                vals.push(v);
            }
            offsets.push(cols.len());
        }
        let heat = heat_acc.into_iter().enumerate().filter(|t| t.1 != ZERO).map(|(q, w)| (q as u32, w)).collect();

        let holder_exc = basis.holder_excitations();
        let holder_h = holder_only_hamiltonian(params, basis);
        let holder_levels = holder_h.eigenvalues()?;
        Ok(Self {
            dim: d,
            holder_dim: dh,
            frame_freq,
            time_unit: params.time_unit(),
            gaps: pairs.iter().map(|&(i, j)| (exc[i as usize] - exc[j as usize]) as f64).collect(),
            partner: pairs.iter().map(|&(i, j)| lookup[j as usize * d + i as usize]).collect(),
            diagonal: (0..d).map(|i| lookup[i * d + i]).collect(),
            charger_levels: (0..d).map(|i| params.omega_c * (i / dh) as f64).collect(),
            holder_weights: (0..d).map(|i| params.omega_h * holder_exc[i % dh] as f64).collect(),
            pairs,
            lookup,
            offsets,
            cols,
            vals,
            heat,
            heat_sign: if cfg.fault == Some(Fault::FlipHeatSign) { 1.0 } else { -1.0 },
            holder_h: holder_h.into_matrix(),
            holder_levels,
        })
    }

    /// Number of density-matrix entries carried by the integrator.
    pub fn active_entries(&self) -> usize {
        self.pairs.len()
    }

    fn pack(&self, rho0: &DensityMatrix) -> Vec<C64> {
        let m = rho0.matrix();
        let mut y: Vec<C64> = self.pairs.iter().map(|&(i, j)| m[(i as usize, j as usize)]).collect();
        y.push(ZERO);
        y
    }

    /// Lab-frame density matrix from the integrator state at natural time `t`.
    fn unpack(&self, y: &[C64], t: f64) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let phase = self.frame_freq * self.gaps[p] * t;
            let v = if phase == 0.0 { y[p] } else { y[p] * C64::from_polar(1.0, -phase) };
            m[(i as usize, j as usize)] = v;
        }
        m
    }

    fn min_eigenvalue(&self, y: &[C64]) -> f64 {
        let edges = self
            .pairs
            .iter()
            .enumerate()
            .filter(|&(p, &(i, j))| i < j && (y[p] != ZERO || y[self.partner[p] as usize] != ZERO))
            .map(|(_, &(i, j))| (i as usize, j as usize));
        crate::hilbert::components(self.dim, edges)
            .into_iter()
            .map(|block| {
                if block.len() == 1 {
                    return y[self.diagonal[block[0]] as usize].re;
                }
                let sub = DMatrix::from_fn(block.len(), block.len(), |a, b| {
                    let q = self.lookup[block[a] * self.dim + block[b]];
                    if q == INACTIVE {
                        ZERO
                    } else {
                        y[q as usize]
                    }
                });
                hermitian_eigenvalues(&sub)[0]
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Holder reduced state; in the rotating frame it differs from the lab one
    /// by a holder-energy-diagonal unitary, which leaves the ergotropy unchanged.
    fn holder_state(&self, y: &[C64]) -> DMatrix<C64> {
        let dh = self.holder_dim;
        let mut out = DMatrix::zeros(dh, dh);
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let (i, j) = (i as usize, j as usize);
            if i / dh == j / dh {
                out[(i % dh, j % dh)] += y[p];
            }
        }
        out
    }

    fn sample(&self, y: &[C64]) -> Result<Sample> {
        let (mut e_h, mut e_c, mut trace) = (0.0, 0.0, ZERO);
        for (i, &p) in self.diagonal.iter().enumerate() {
            let v = y[p as usize];
            trace += v;
            e_h += self.holder_weights[i] * v.re;
            e_c += self.charger_levels[i] * v.re;
        }
        let hermiticity_error = (0..self.pairs.len())
            .map(|p| (y[p] - y[self.partner[p] as usize].conj()).norm())
            .fold(0.0, f64::max);
        let physicality = Physicality {
            trace_error: (trace - C64::from(1.0)).norm(),
            hermiticity_error,
            min_eigenvalue: self.min_eigenvalue(y),
        };
        let ergotropy = if physicality.violation(PHYSICALITY_SLACK).is_some() {
            f64::NAN
        } else {
            ergotropy_with_levels(&self.holder_state(y), &self.holder_h, &self.holder_levels)?
        };
        Ok(Sample { e_h, e_c, heat: y[self.pairs.len()].re, ergotropy, physicality })
    }

    /// Integrates from `times_units[0]` and hands every output to `observe`.
    fn solve<F>(&self, y0: &[C64], times_units: &[f64], cfg: &IntegratorConfig, observe: F) -> Result<Stats>
    where
        F: FnMut(usize, f64, &[C64]) -> ControlFlow<()>,
    {
        let outputs: Vec<f64> = times_units.iter().map(|t| t * self.time_unit).collect();
        let max_step = cfg.max_step * self.time_unit;
        let result = match cfg.method {
            Method::AdaptiveRK => {
                let tol = Tolerances { rel: cfg.rel_tol, abs: cfg.abs_tol, max_step, max_steps: cfg.max_steps };
                ode::dopri5(self, y0, &outputs, &tol, observe)
            }
            Method::FixedRK4 => ode::rk4(self, y0, &outputs, max_step, observe),
        };
        result.map_err(|e: OdeError| Error::StepFailure { t: e.time() / self.time_unit, reason: e.to_string() })
    }
}

impl System for Generator {
    fn dim(&self) -> usize {
        self.pairs.len() + 1
    }

    fn rhs(&self, _t: f64, y: &[C64], dy: &mut [C64]) {
        let n = self.pairs.len();
        for p in 0..n {
            let mut acc = ZERO;
            for idx in self.offsets[p]..self.offsets[p + 1] {
                acc += self.vals[idx] * y[self.cols[idx] as usize];
            }
            dy[p] = acc;
        }
        let mut q = ZERO;
        for &(idx, w) in &self.heat {
            q += w * y[idx as usize];
        }
        dy[n] = C64::from(self.heat_sign * q.re);
    }
}

/// Solves the master equation from `rho0` and records the observables on `grid`.
///
/// Stops with [`Error::Physicality`] (carrying the samples so far) once a
/// diagnostic exceeds [`PHYSICALITY_SLACK`] times its bound.
pub fn integrate(
    rho0: &DensityMatrix,
    params: &BatteryParams,
    basis: &BasisSpec,
    grid: &TimeGrid,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let gen = Generator::new(params, basis, rho0, cfg)?;
    let times = grid.times();
    let y0 = gen.pack(rho0);
    let n = times.len();
    let mut traj = Trajectory {
        times: Vec::with_capacity(n),
        e_h: Vec::with_capacity(n),
        e_c: Vec::with_capacity(n),
        heat: Vec::with_capacity(n),
        ergotropy_h: Vec::with_capacity(n),
        trace_error: Vec::with_capacity(n),
        hermiticity_error: Vec::with_capacity(n),
        min_eigenvalue: Vec::with_capacity(n),
        final_state: rho0.clone(),
        reference_energy: 0.0,
        stats: Stats::default(),
    };
    let mut last = y0.clone();
    let mut failure: Option<Error> = None;
    let mut violation: Option<String> = None;
    let stats = gen.solve(&y0, &times, cfg, |k, _, y| {
        last.copy_from_slice(y);
        match gen.sample(y) {
            Ok(s) => {
                traj.push(times[k], &s);
                violation = s.physicality.violation(PHYSICALITY_SLACK);
            }
            Err(e) => failure = Some(e),
        }
        if failure.is_some() || violation.is_some() {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    traj.stats = stats;
    traj.reference_energy = traj.e_h[0] + traj.e_c[0];
    let t_last = *traj.times.last().expect("initial sample recorded");
    traj.final_state = DensityMatrix::from_matrix_unchecked(gen.unpack(&last, t_last * gen.time_unit));
    if let Some(reason) = violation {
        return Err(Error::Physicality { t: t_last, reason, partial: Box::new(traj) });
    }
    Ok(traj)
}

/// Lab-frame states at `times` (units of `π/Ω_R`, ascending, non-negative).
pub fn states_at(
    rho0: &DensityMatrix,
    params: &BatteryParams,
    basis: &BasisSpec,
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<DMatrix<C64>>> {
    let mut states = Vec::with_capacity(times.len());
    visit_states(rho0, params, basis, times, cfg, |_, rho| states.push(rho))?;
    Ok(states)
}

/// Streams the lab-frame state at each of `times` to `visit`.
pub fn visit_states<F>(
    rho0: &DensityMatrix,
    params: &BatteryParams,
    basis: &BasisSpec,
    times: &[f64],
    cfg: &IntegratorConfig,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, DMatrix<C64>),
{
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid("times must be finite, non-negative and strictly increasing".into()));
    }
    let gen = Generator::new(params, basis, rho0, cfg)?;
    let shift = usize::from(times.first() != Some(&0.0));
    let mut outputs = Vec::with_capacity(times.len() + shift);
    if shift == 1 {
        outputs.push(0.0);
    }
    outputs.extend_from_slice(times);
    gen.solve(&gen.pack(rho0), &outputs, cfg, |k, t, y| {
        if k >= shift {
            visit(k - shift, gen.unpack(y, t));
        }
        ControlFlow::Continue(())
    })?;
    Ok(())
}

/// Discharge stage: the charger is reset to vacuum, the holder keeps the state
/// it reached at the end of `charged`.
pub fn continue_discharge(
    charged: &Trajectory,
    params: &BatteryParams,
    basis: &BasisSpec,
    grid: &TimeGrid,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let holder = partial_trace_charger(&charged.final_state, basis)?;
    let holder = DensityMatrix::new(holder.into_matrix())?;
    let vacuum = fock_state(basis.cavity_cutoff(), 0)?.projector();
    integrate(&vacuum.kron(&holder), params, basis, grid, cfg)
}

/// Column-stacking superoperator `L` with `vec(dρ/dt) = L vec(ρ)`, built
/// directly from Kronecker products in the lab frame.
pub fn vectorized_liouvillian(params: &BatteryParams, basis: &BasisSpec) -> Result<Operator> {
    let d = basis.dim();
    if d > LIOUVILLIAN_DIM_LIMIT {
        return Err(Error::DimensionGuard { dim: d, limit: LIOUVILLIAN_DIM_LIMIT });
    }
    let h = hamiltonian(params, basis)?.into_matrix();
    let id = DMatrix::<C64>::identity(d, d);
    let mut l = (id.kronecker(&h) - h.transpose().kronecker(&id)) * (-I);
    let a = embed_charger(&annihilation(basis.cavity_cutoff())?, basis)?.into_matrix();
    let ad = a.adjoint();
    let mut channels = vec![(params.kappa * (params.n_th + 1.0), a.clone(), ad.clone())];
    if params.n_th > 0.0 {
        channels.push((params.kappa * params.n_th, ad, a));
    }
    for (gamma, c, cd) in channels {
        let m = &cd * &c;
        // vec(AXB) = (Bᵀ ⊗ A) vec(X)
        let term = cd.transpose().kronecker(&c) * C64::from(2.0) - id.kronecker(&m) - m.transpose().kronecker(&id);
        l += term * C64::from(gamma);
    }
    Operator::from_matrix(l)
}

/// `exp(L t) vec(ρ0)` reshaped to a matrix; `t` in natural time units.
pub fn propagate_liouvillian(l: &Operator, rho0: &DensityMatrix, t: f64) -> Result<DMatrix<C64>> {
    let d = rho0.dim();
    if l.dim() != d * d {
        return Err(Error::DimensionMismatch { expected: d * d, found: l.dim() });
    }
    let v = DVector::from_column_slice(rho0.matrix().as_slice());
    let out = (l.matrix() * C64::from(t)).exp() * v;
    Ok(DMatrix::from_column_slice(d, d, out.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{coherent_state, holder_ground, thermal_state, trace_distance, StateVector};
    use crate::merit::jc_ergotropy_analytic;
    use crate::model::{auto_cutoff, initial_state, InitKind};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn short(t_max: f64, samples: usize) -> TimeGrid {
        TimeGrid::new(t_max, samples).unwrap()
    }

    #[test]
    fn grid_layout() {
        let g = TimeGrid::default();
        let t = g.times();
        assert_eq!(t.len(), 3001);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[1000], 1.0);
        assert_eq!(t[3000], 3.0);
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 99).is_err());
        assert!(TimeGrid::new(f64::NAN, 10).is_err());
    }

    #[test]
    fn single_photon_rabi_oscillation() {
        let basis = BasisSpec::dicke(1, 2).unwrap();
        let rho0 = initial_state(InitKind::Fock, 1, &basis).unwrap();
        let params = BatteryParams::resonant(0.0);
        let traj = integrate(&rho0, &params, &basis, &TimeGrid::default(), &IntegratorConfig::default()).unwrap();
        for k in 0..traj.len() {
            let t = traj.times[k] * params.time_unit();
            assert_abs_diff_eq!(traj.e_h[k], (params.g * t).sin().powi(2), epsilon = 1e-7);
            assert_abs_diff_eq!(traj.ergotropy_h[k], jc_ergotropy_analytic(params.g, t), epsilon = 1e-7);
            assert_eq!(traj.heat[k], 0.0);
        }
        assert_abs_diff_eq!(traj.e_h[1000], 1.0, epsilon = 1e-7);
        assert!(traj.max_conservation_residual() < 1e-8);
    }

    #[test]
    fn collective_rabi_frequency() {
        // One photon shared by N qubits oscillates at √N g.
        for n in [2usize, 3] {
            for basis in [BasisSpec::dicke(n, 2).unwrap(), BasisSpec::full(n, 2).unwrap()] {
                let rho0 = fock_state(2, 1).unwrap().projector().kron(&holder_ground(&basis));
                let params = BatteryParams::resonant(0.0);
                let grid = short(2.0, 401);
                let traj = integrate(&rho0, &params, &basis, &grid, &IntegratorConfig::default()).unwrap();
                for k in 0..traj.len() {
                    let t = traj.times[k] * params.time_unit();
                    let expected = ((n as f64).sqrt() * params.g * t).sin().powi(2);
                    assert_abs_diff_eq!(traj.e_h[k], expected, epsilon = 1e-7);
                }
            }
        }
    }

    fn superposition(basis: &BasisSpec) -> DensityMatrix {
        // Coherences across excitation sectors exercise the full entry set.
        let d = basis.dim();
        let mut amp = DVector::from_element(d, C64::new(0.0, 0.0));
        amp[basis.index(0, basis.holder_ground_index())] = C64::new(0.6, 0.0);
        amp[basis.index(1, basis.holder_ground_index())] = C64::new(0.0, 0.48);
        amp[basis.index(2, 0)] = C64::new(0.64, 0.0);
        StateVector::new(amp).unwrap().projector()
    }

    #[test]
    fn agrees_with_liouvillian_exponential() {
        let basis = BasisSpec::dicke(2, 4).unwrap();
        let mut params = BatteryParams::resonant(0.7 * 2e-3);
        params.n_th = 0.3;
        let cfg = IntegratorConfig { rel_tol: 1e-11, abs_tol: 1e-13, ..Default::default() };
        let l = vectorized_liouvillian(&params, &basis).unwrap();
        let times = [0.37, 1.0, 2.5];
        for rho0 in [superposition(&basis), initial_state(InitKind::Fock, 2, &BasisSpec::dicke(2, 4).unwrap()).unwrap()] {
            for frame in [Frame::Rotating, Frame::Lab] {
                let states = states_at(&rho0, &params, &basis, &times, &IntegratorConfig { frame, ..cfg }).unwrap();
                for (t, rho) in times.iter().zip(&states) {
                    let exact = propagate_liouvillian(&l, &rho0, t * params.time_unit()).unwrap();
                    let dist = trace_distance(rho, &exact).unwrap();
                    assert!(dist < 1e-8, "frame {frame:?}, t = {t}: trace distance {dist:e}");
                }
            }
        }
    }

    #[test]
    fn single_photon_liouvillian_oracle_at_default_tolerances() {
        let basis = BasisSpec::dicke(1, 3).unwrap();
        let rho0 = initial_state(InitKind::Fock, 1, &basis).unwrap();
        let times: Vec<f64> = (1..=10).map(|k| 0.3 * k as f64).collect();
        for kappa_over_rabi in [0.2, 0.5] {
            let params = BatteryParams::resonant(kappa_over_rabi * 2e-3);
            let l = vectorized_liouvillian(&params, &basis).unwrap();
            let states = states_at(&rho0, &params, &basis, &times, &IntegratorConfig::default()).unwrap();
            for (t, rho) in times.iter().zip(&states) {
                let exact = propagate_liouvillian(&l, &rho0, t * params.time_unit()).unwrap();
                assert!(trace_distance(rho, &exact).unwrap() < 1e-8);
            }
            let traj = integrate(&rho0, &params, &basis, &TimeGrid::default(), &IntegratorConfig::default()).unwrap();
            assert!(traj.max_conservation_residual() < 1e-6);
        }
    }

    #[test]
    fn vacuum_is_stationary() {
        let basis = BasisSpec::dicke(2, 3).unwrap();
        let l = vectorized_liouvillian(&BatteryParams::resonant(2e-3), &basis).unwrap();
        let vacuum = fock_state(3, 0).unwrap().projector().kron(&holder_ground(&basis));
        let v = DVector::from_column_slice(vacuum.matrix().as_slice());
        assert!((l.matrix() * v).camax() < 1e-15);
    }

    #[test]
    fn fock_states_use_excitation_diagonal_entries() {
        let basis = BasisSpec::dicke(3, 4).unwrap();
        let params = BatteryParams::resonant(1e-3);
        let cfg = IntegratorConfig::default();
        let fock = Generator::new(&params, &basis, &initial_state(InitKind::Fock, 3, &basis).unwrap(), &cfg).unwrap();
        let full = Generator::new(&params, &basis, &superposition(&basis), &cfg).unwrap();
        // excitation sectors 0..=6 have sizes 1, 2, 3, 4, 3, 2, 1
        assert_eq!(fock.active_entries(), 1 + 4 + 9 + 16 + 9 + 4 + 1);
        // the superposition spans excitation gaps up to 2
        let exc = basis.excitations();
        let within = |i: usize, j: usize| exc[i].abs_diff(exc[j]) <= 2;
        let expected = (0..basis.dim()).flat_map(|i| (0..basis.dim()).map(move |j| (i, j))).filter(|&(i, j)| within(i, j)).count();
        assert_eq!(full.active_entries(), expected);
        assert!(expected < basis.dim() * basis.dim());
    }

    #[test]
    fn rotating_and_lab_frames_agree() {
        let basis = BasisSpec::dicke(1, 15).unwrap();
        let charger = coherent_state(15, C64::from(1.0)).unwrap().projector();
        let rho0 = charger.kron(&holder_ground(&basis));
        let params = BatteryParams::resonant(2e-3);
        let grid = short(1.2, 121);
        let rot = integrate(&rho0, &params, &basis, &grid, &IntegratorConfig::default()).unwrap();
        let lab = integrate(&rho0, &params, &basis, &grid, &IntegratorConfig { frame: Frame::Lab, ..Default::default() })
            .unwrap();
        for k in 0..grid.samples() {
            assert_abs_diff_eq!(rot.e_h[k], lab.e_h[k], epsilon = 1e-7);
            assert_abs_diff_eq!(rot.heat[k], lab.heat[k], epsilon = 1e-7);
            assert_abs_diff_eq!(rot.ergotropy_h[k], lab.ergotropy_h[k], epsilon = 1e-7);
        }
        assert!(trace_distance(rot.final_state.matrix(), lab.final_state.matrix()).unwrap() < 1e-7);
    }

    #[test]
    fn energy_balance_and_heat_monotone_under_loss() {
        let basis = BasisSpec::dicke(2, 21).unwrap();
        let rho0 = initial_state(InitKind::Coherent, 2, &basis).unwrap();
        let params = BatteryParams::resonant(2e-3);
        let traj = integrate(&rho0, &params, &basis, &short(3.0, 601), &IntegratorConfig::default()).unwrap();
        assert_abs_diff_eq!(traj.reference_energy, 2.0, epsilon = 1e-8);
        assert!(traj.max_conservation_residual() < 1e-7);
        assert!(traj.heat.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(traj.heat.last().unwrap() > &0.5);
        assert!(traj.trace_error.iter().all(|&e| e < 1e-9));
        assert!(traj.min_eigenvalue.iter().all(|&e| e > -1e-8));
    }

    #[test]
    fn thermal_bath_heat_balance() {
        let basis = BasisSpec::dicke(2, 30).unwrap();
        let rho0 = thermal_state(30, 1.0).unwrap().kron(&holder_ground(&basis));
        let mut params = BatteryParams::resonant(1e-3);
        params.n_th = 0.5;
        let traj = integrate(&rho0, &params, &basis, &short(2.0, 201), &IntegratorConfig::default()).unwrap();
        assert!(traj.max_conservation_residual() < 1e-7);
    }

    #[test]
    fn tolerance_refinement_converges() {
        let basis = BasisSpec::dicke(3, 4).unwrap();
        let rho0 = initial_state(InitKind::Fock, 3, &basis).unwrap();
        let params = BatteryParams::resonant(1e-3);
        let grid = short(3.0, 301);
        let coarse = integrate(&rho0, &params, &basis, &grid, &IntegratorConfig::default()).unwrap();
        let base = IntegratorConfig::default();
        let fine_cfg = IntegratorConfig { rel_tol: base.rel_tol / 2.0, abs_tol: base.abs_tol / 2.0, ..base };
        let fine = integrate(&rho0, &params, &basis, &grid, &fine_cfg).unwrap();
        let worst = (0..grid.samples()).map(|k| (coarse.e_h[k] - fine.e_h[k]).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8 * 3.0, "{worst:e}");
        assert!(fine.stats.accepted > coarse.stats.accepted);
    }

    #[test]
    fn fixed_step_cross_check() {
        let basis = BasisSpec::dicke(2, 3).unwrap();
        let rho0 = initial_state(InitKind::Fock, 2, &basis).unwrap();
        let params = BatteryParams::resonant(2e-3);
        let grid = short(1.0, 101);
        let adaptive = integrate(&rho0, &params, &basis, &grid, &IntegratorConfig::default()).unwrap();
        let rk4_cfg = IntegratorConfig { method: Method::FixedRK4, max_step: 1e-3, ..Default::default() };
        let fixed = integrate(&rho0, &params, &basis, &grid, &rk4_cfg).unwrap();
        for k in 0..grid.samples() {
            assert_abs_diff_eq!(adaptive.e_h[k], fixed.e_h[k], epsilon = 1e-8);
            assert_abs_diff_eq!(adaptive.heat[k], fixed.heat[k], epsilon = 1e-8);
        }
    }

    #[test]
    fn injected_faults_are_detected() {
        let basis = BasisSpec::dicke(1, 3).unwrap();
        let rho0 = initial_state(InitKind::Fock, 1, &basis).unwrap();
        let params = BatteryParams::resonant(2e-3);
        let grid = short(2.0, 201);
        let jump = IntegratorConfig { fault: Some(Fault::FlipJumpSign), ..Default::default() };
        match integrate(&rho0, &params, &basis, &grid, &jump) {
            Err(Error::Physicality { partial, reason, .. }) => {
                assert!(reason.contains("trace"), "{reason}");
                assert!(partial.len() > 1 && partial.len() < grid.samples());
            }
            other => panic!("expected a physicality error, got {other:?}"),
        }
        let heat = IntegratorConfig { fault: Some(Fault::FlipHeatSign), ..Default::default() };
        let traj = integrate(&rho0, &params, &basis, &grid, &heat).unwrap();
        assert!(traj.max_conservation_residual() > 0.1);
    }

    #[test]
    fn lossless_discharge_returns_energy() {
        let basis = BasisSpec::dicke(1, 2).unwrap();
        let rho0 = initial_state(InitKind::Fock, 1, &basis).unwrap();
        let params = BatteryParams::resonant(0.0);
        let cfg = IntegratorConfig::default();
        let charged = integrate(&rho0, &params, &basis, &short(1.0, 101), &cfg).unwrap();
        assert_abs_diff_eq!(*charged.e_h.last().unwrap(), 1.0, epsilon = 1e-8);
        let out = continue_discharge(&charged, &params, &basis, &short(1.0, 101), &cfg).unwrap();
        assert_abs_diff_eq!(out.e_h[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(out.e_c[0], 0.0, epsilon = 1e-12);
        for k in 0..out.len() {
            let t = out.times[k] * params.time_unit();
            assert_abs_diff_eq!(out.e_h[k], (params.g * t).cos().powi(2), epsilon = 1e-7);
        }
    }

    #[test]
    fn storage_with_decoupled_charger_keeps_holder_energy() {
        let basis = BasisSpec::dicke(2, 3).unwrap();
        let rho0 = initial_state(InitKind::Fock, 2, &basis).unwrap();
        let charge = BatteryParams::resonant(0.0);
        let cfg = IntegratorConfig::default();
        let charged = integrate(&rho0, &charge, &basis, &short(0.5, 101), &cfg).unwrap();
        let stored_energy = *charged.e_h.last().unwrap();
        let storage = BatteryParams { lambda: 0.0, ..BatteryParams::resonant(2e-3) };
        let out = continue_discharge(&charged, &storage, &basis, &short(1.0, 101), &cfg).unwrap();
        assert!(out.e_h.iter().all(|e| (e - stored_energy).abs() < 1e-9));
        assert!(out.heat.iter().all(|&q| q.abs() < 1e-12));
    }

    #[test]
    fn liouvillian_guard_and_shape() {
        let big = BasisSpec::dicke(4, 10).unwrap();
        assert!(matches!(
            vectorized_liouvillian(&BatteryParams::default(), &big),
            Err(Error::DimensionGuard { dim: 50, .. })
        ));
        let basis = BasisSpec::dicke(1, 3).unwrap();
        let params = BatteryParams::resonant(1e-3);
        let l = vectorized_liouvillian(&params, &basis).unwrap();
        assert_eq!(l.dim(), 36);
        // trace preservation: vec(I)† L = 0
        let d = basis.dim();
        for col in 0..d * d {
            let s: C64 = (0..d).map(|i| l.matrix()[(i * d + i, col)]).sum();
            assert!(s.norm() < 1e-14);
        }
        let rho0 = initial_state(InitKind::Fock, 1, &basis).unwrap();
        let at_zero = propagate_liouvillian(&l, &rho0, 0.0).unwrap();
        assert!((at_zero - rho0.matrix()).camax() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let basis = BasisSpec::dicke(1, 3).unwrap();
        let rho0 = initial_state(InitKind::Fock, 1, &basis).unwrap();
        let params = BatteryParams::resonant(0.0);
        let bad_cfg = IntegratorConfig { rel_tol: 0.0, ..Default::default() };
        assert!(integrate(&rho0, &params, &basis, &TimeGrid::default(), &bad_cfg).is_err());
        let other = BasisSpec::dicke(2, 3).unwrap();
        assert!(matches!(
            integrate(&rho0, &params, &other, &TimeGrid::default(), &IntegratorConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        let tiny = IntegratorConfig { max_steps: 5, ..Default::default() };
        assert!(matches!(
            integrate(&rho0, &params, &basis, &TimeGrid::default(), &tiny),
            Err(Error::StepFailure { .. })
        ));
        assert!(states_at(&rho0, &params, &basis, &[0.5, 0.2], &IntegratorConfig::default()).is_err());
    }

    #[test]
    fn final_state_matches_states_at() {
        let basis = BasisSpec::dicke(2, 15).unwrap();
        let rho0 = initial_state(InitKind::Coherent, 2, &basis).unwrap();
        let params = BatteryParams::resonant(1e-3);
        let cfg = IntegratorConfig::default();
        let traj = integrate(&rho0, &params, &basis, &short(0.8, 101), &cfg).unwrap();
        let states = states_at(&rho0, &params, &basis, &[0.8], &cfg).unwrap();
        assert!(trace_distance(traj.final_state.matrix(), &states[0]).unwrap() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

        #[test]
        fn evolution_stays_physical_and_balanced(
            kappa in 0.0f64..4e-3,
            n_th in 0.0f64..1.0,
            kind in 0usize..3,
        ) {
            let kind = InitKind::ALL[kind];
            let basis = BasisSpec::dicke(2, auto_cutoff(kind, 2, n_th)).unwrap();
            let rho0 = initial_state(kind, 2, &basis).unwrap();
            let params = BatteryParams { n_th, ..BatteryParams::resonant(kappa) };
            let traj = integrate(&rho0, &params, &basis, &short(1.5, 151), &IntegratorConfig::default()).unwrap();
            prop_assert!(traj.max_conservation_residual() < 1e-7);
            prop_assert!(traj.trace_error.iter().all(|&e| e < 1e-9));
            prop_assert!(traj.hermiticity_error.iter().all(|&e| e < 1e-10));
            prop_assert!(traj.min_eigenvalue.iter().all(|&e| e > -1e-8));
            prop_assert!(traj.ergotropy_h.iter().zip(&traj.e_h).all(|(x, e)| *x >= 0.0 && *x <= e + 1e-9));
        }
    }
}
