//! Collective-versus-parallel comparisons, enhancement ratios and sweeps over
//! initial condition, battery size and cavity loss.
//!
//! The parallel battery is `N` independent copies of the one-qubit unit cell
//! charged from one mean photon, so its figures follow from a single unit-cell
//! run: energies, power and ergotropy scale with `N`, times do not.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evolve::{integrate, visit_states, TimeGrid, Trajectory, IntegratorConfig};
use crate::hilbert::{symmetrizer, trace_distance, BasisSpec, QubitRep, C64};
use crate::merit::{merit_from_trajectory, MeritValues};
use crate::model::{auto_cutoff, initial_state, BatteryParams, InitKind};

/// Environment variable overriding the number of sweep worker threads.
pub const WORKERS_ENV: &str = "TCBATTERY_WORKERS";

/// Parallel ergotropy below this magnitude leaves `Γ_ℰ` undefined.
pub const ERGO_RATIO_THRESHOLD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BasisPolicy {
    /// Symmetric (Dicke) subspace; exact for collective coupling from `|g…g⟩`.
    #[default]
    PreferDicke,
    ForceFull,
}

/// Unit in which cavity loss rates are given.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KappaUnit {
    /// Units of `Ω_R = 2g`.
    #[default]
    Rabi,
    /// Units of `g`.
    G,
}

impl KappaUnit {
    pub fn to_rabi(self, value: f64) -> f64 {
        match self {
            KappaUnit::Rabi => value,
            KappaUnit::G => value / 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KappaUnit::Rabi => "rabi",
            KappaUnit::G => "g",
        }
    }
}

impl FromStr for KappaUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rabi" => Ok(KappaUnit::Rabi),
            "g" => Ok(KappaUnit::G),
            other => Err(Error::InvalidParams(format!("unknown kappa unit '{other}' (expected rabi or g)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Cutoff {
    #[default]
    Auto,
    Fixed(usize),
}

/// Everything besides `(kind, N, κ)` that defines a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub g: f64,
    pub n_th: f64,
    pub basis_policy: BasisPolicy,
    pub cutoff: Cutoff,
    pub grid: TimeGrid,
    pub integrator: IntegratorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            g: 1e-3,
            n_th: 0.0,
            basis_policy: BasisPolicy::PreferDicke,
            cutoff: Cutoff::Auto,
            grid: TimeGrid::default(),
            integrator: IntegratorConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn params(&self, kappa_over_rabi: f64) -> BatteryParams {
        let mut p = BatteryParams::resonant(0.0).with_g(self.g);
        p.kappa = kappa_over_rabi * p.rabi_frequency();
        p.n_th = self.n_th;
        p
    }

    pub fn basis(&self, kind: InitKind, n: usize) -> Result<BasisSpec> {
        let cutoff = match self.cutoff {
            Cutoff::Auto => auto_cutoff(kind, n, self.n_th),
            Cutoff::Fixed(c) => c,
        };
        let rep = match self.basis_policy {
            BasisPolicy::PreferDicke => QubitRep::Dicke,
            BasisPolicy::ForceFull => QubitRep::Full,
        };
        BasisSpec::new(n, rep, cutoff)
    }
}

/// Charging run of `N` qubits from a charger holding `N` mean photons.
pub fn run_charging(kind: InitKind, n: usize, kappa_over_rabi: f64, cfg: &ExperimentConfig) -> Result<Trajectory> {
    let params = cfg.params(kappa_over_rabi);
    params.validate()?;
    let basis = cfg.basis(kind, n)?;
    let rho0 = initial_state(kind, n, &basis)?;
    integrate(&rho0, &params, &basis, &cfg.grid, &cfg.integrator)
}

/// Worst-case invariant deviations of one trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunDiagnostics {
    pub max_conservation_residual: f64,
    pub reference_energy: f64,
    pub max_trace_error: f64,
    pub max_hermiticity_error: f64,
    pub min_eigenvalue: f64,
    pub min_heat: f64,
    /// `max_k (ℰ_h[k] - E_h[k])`.
    pub max_ergotropy_excess: f64,
}

impl RunDiagnostics {
    pub fn of(traj: &Trajectory) -> Self {
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            max_conservation_residual: traj.max_conservation_residual(),
            reference_energy: traj.reference_energy,
            max_trace_error: max(&traj.trace_error),
            max_hermiticity_error: max(&traj.hermiticity_error),
            min_eigenvalue: min(&traj.min_eigenvalue),
            min_heat: min(&traj.heat),
            max_ergotropy_excess: traj.ergotropy_h.iter().zip(&traj.e_h).map(|(x, e)| x - e).fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Charged {
    merit: MeritValues,
    diagnostics: RunDiagnostics,
}

fn charge(kind: InitKind, n: usize, kappa_over_rabi: f64, cfg: &ExperimentConfig) -> Result<Charged> {
    let traj = run_charging(kind, n, kappa_over_rabi, cfg)?;
    Ok(Charged { merit: merit_from_trajectory(&traj)?, diagnostics: RunDiagnostics::of(&traj) })
}

/// Collective battery against `N` parallel unit cells at one grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComparisonReport {
    pub kind: InitKind,
    pub n: usize,
    pub kappa_over_rabi: f64,
    pub collective: MeritValues,
    pub unit_cell: MeritValues,
    pub parallel: MeritValues,
    pub gamma_e: f64,
    pub gamma_rate: f64,
    pub gamma_p: f64,
    /// `None` when the parallel ergotropy vanishes.
    pub gamma_ergo: Option<f64>,
    pub collective_diagnostics: RunDiagnostics,
    pub unit_diagnostics: RunDiagnostics,
}

impl ComparisonReport {
    fn new(kind: InitKind, n: usize, kappa_over_rabi: f64, collective: &Charged, unit: &Charged) -> Self {
        let c = collective.merit;
        let parallel = unit.merit.replicated(n);
        let gamma_ergo =
            (parallel.ergo_bar.abs() >= ERGO_RATIO_THRESHOLD).then(|| c.ergo_bar / parallel.ergo_bar);
        Self {
            kind,
            n,
            kappa_over_rabi,
            collective: c,
            unit_cell: unit.merit,
            parallel,
            gamma_e: c.e_bar / parallel.e_bar,
            gamma_rate: parallel.tau_bar / c.tau_bar,
            gamma_p: c.p_bar / parallel.p_bar,
            gamma_ergo,
            collective_diagnostics: collective.diagnostics,
            unit_diagnostics: unit.diagnostics,
        }
    }

    /// Collective power per holder cell.
    pub fn p_bar_per_cell(&self) -> f64 {
        self.collective.p_bar / self.n as f64
    }
}

pub fn run_point(kind: InitKind, n: usize, kappa_over_rabi: f64, cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    if n == 0 {
        return Err(Error::InvalidParams("N must be at least 1".into()));
    }
    let unit = charge(kind, 1, kappa_over_rabi, cfg)?;
    let collective = if n == 1 { unit } else { charge(kind, n, kappa_over_rabi, cfg)? };
    Ok(ComparisonReport::new(kind, n, kappa_over_rabi, &collective, &unit))
}

/// `κ = 0, 0.2, …, 2` in units of `Ω_R`.
pub fn default_kappas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 5.0).collect()
}

pub fn default_max_n(kind: InitKind) -> usize {
    match kind {
        InitKind::Fock => 10,
        InitKind::Coherent => 4,
        InitKind::Thermal => 6,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub init_kinds: Vec<InitKind>,
    pub n_values: Vec<usize>,
    pub kappa_values: Vec<f64>,
    pub kappa_unit: KappaUnit,
}

impl SweepGrid {
    /// Default grid of one initial condition: `N = 1..=N_max`, eleven loss rates.
    pub fn default_for(kind: InitKind) -> Self {
        Self {
            init_kinds: vec![kind],
            n_values: (1..=default_max_n(kind)).collect(),
            kappa_values: default_kappas(),
            kappa_unit: KappaUnit::Rabi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.init_kinds.is_empty() || self.n_values.is_empty() || self.kappa_values.is_empty() {
            return Err(Error::InvalidGrid("every sweep axis needs at least one value".into()));
        }
        if self.n_values.contains(&0) {
            return Err(Error::InvalidGrid("N values must be positive".into()));
        }
        if let Some(k) = self.kappa_values.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
            return Err(Error::InvalidGrid(format!("kappa values must be finite and >= 0, got {k}")));
        }
        Ok(())
    }

    /// Loss rates in units of `Ω_R`, sorted and deduplicated.
    pub fn kappas_over_rabi(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.kappa_values.iter().map(|&v| self.kappa_unit.to_rabi(v)).collect();
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    fn kinds(&self) -> Vec<InitKind> {
        InitKind::ALL.into_iter().filter(|k| self.init_kinds.contains(k)).collect()
    }

    fn ns(&self) -> Vec<usize> {
        let mut n = self.n_values.clone();
        n.sort_unstable();
        n.dedup();
        n
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointFailure {
    pub cause: &'static str,
    pub message: String,
}

impl From<&Error> for PointFailure {
    fn from(e: &Error) -> Self {
        Self { cause: e.cause(), message: e.to_string() }
    }
}

impl fmt::Display for PointFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.cause, self.message)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub kind: InitKind,
    pub n: usize,
    pub kappa_over_rabi: f64,
    pub outcome: std::result::Result<ComparisonReport, PointFailure>,
}

/// Runs `job` on the worker pool sized by [`WORKERS_ENV`], or rayon's default.
fn with_workers<T: Send>(job: impl FnOnce() -> T + Send) -> T {
    let requested = std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0);
    match requested.map(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build()) {
        Some(Ok(pool)) => pool.install(job),
        _ => job(),
    }
}

/// All points of `grid`, ordered by `(kind, N, κ)`. Failures are kept as rows.
pub fn run_sweep(grid: &SweepGrid, cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    let kinds = grid.kinds();
    let kappas = grid.kappas_over_rabi();
    let ns = grid.ns();
    let n_kappa = kappas.len();
    let unit_keys: Vec<(InitKind, usize)> =
        kinds.iter().flat_map(|&k| (0..n_kappa).map(move |i| (k, i))).collect();
    let points: Vec<(InitKind, usize, usize)> = kinds
        .iter()
        .flat_map(|&k| ns.iter().flat_map(move |&n| (0..n_kappa).map(move |i| (k, n, i))))
        .collect();
    let rows = with_workers(|| {
        let units: Vec<std::result::Result<Charged, PointFailure>> = unit_keys
            .par_iter()
            .map(|&(kind, i)| charge(kind, 1, kappas[i], cfg).map_err(|e| PointFailure::from(&e)))
            .collect();
        points
            .par_iter()
            .map(|&(kind, n, i)| {
                let slot = kinds.iter().position(|&k| k == kind).unwrap() * kappas.len() + i;
                let outcome = units[slot].clone().and_then(|unit| {
                    let collective = if n == 1 {
                        Ok(unit)
                    } else {
                        charge(kind, n, kappas[i], cfg).map_err(|e| PointFailure::from(&e))
                    };
                    collective.map(|c| ComparisonReport::new(kind, n, kappas[i], &c, &unit))
                });
                SweepRow { kind, n, kappa_over_rabi: kappas[i], outcome }
            })
            .collect()
    });
    Ok(rows)
}

/// Holder energy, holder ergotropy, charger energy and heat at a first maximum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyComponents {
    pub tau_bar: f64,
    pub e_h: f64,
    pub ergo_h: f64,
    pub e_c: f64,
    pub q: f64,
}

impl EnergyComponents {
    fn at(traj: &Trajectory, merit: &MeritValues, copies: f64) -> Self {
        let k = merit.sample;
        Self {
            tau_bar: merit.tau_bar,
            e_h: copies * traj.e_h[k],
            ergo_h: copies * traj.ergotropy_h[k],
            e_c: copies * traj.e_c[k],
            q: copies * traj.heat[k],
        }
    }

    /// `E_h + E_c + Q`.
    pub fn total(&self) -> f64 {
        self.e_h + self.e_c + self.q
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyDistribution {
    pub collective: EnergyComponents,
    pub parallel: EnergyComponents,
}

/// Where the `N ħω_c` initially in the charger sits at each battery's first maximum.
pub fn energy_distribution(kind: InitKind, n: usize, kappa_over_rabi: f64, cfg: &ExperimentConfig) -> Result<EnergyDistribution> {
    let unit = run_charging(kind, 1, kappa_over_rabi, cfg)?;
    let unit_merit = merit_from_trajectory(&unit)?;
    let collective = if n == 1 { unit.clone() } else { run_charging(kind, n, kappa_over_rabi, cfg)? };
    let merit = merit_from_trajectory(&collective)?;
    Ok(EnergyDistribution {
        collective: EnergyComponents::at(&collective, &merit, 1.0),
        parallel: EnergyComponents::at(&unit, &unit_merit, n as f64),
    })
}

/// Largest deviation between the Dicke and full-register runs of the same
/// battery: holder energy and holder-state trace distance (the Dicke state
/// embedded through the symmetrizer), over all grid samples.
pub fn dicke_full_equivalence(n: usize, kind: InitKind, kappa_over_rabi: f64, cfg: &ExperimentConfig) -> Result<f64> {
    if !(1..=3).contains(&n) {
        return Err(Error::InvalidParams(format!("the equivalence check supports 1 <= N <= 3, got {n}")));
    }
    let params = cfg.params(kappa_over_rabi);
    params.validate()?;
    let times = cfg.grid.times();
    let holder_states = |policy: BasisPolicy| -> Result<Vec<DMatrix<C64>>> {
        let basis = ExperimentConfig { basis_policy: policy, ..*cfg }.basis(kind, n)?;
        let rho0 = initial_state(kind, n, &basis)?;
        let dh = basis.holder_dim();
        let mut out = Vec::with_capacity(times.len());
        visit_states(&rho0, &params, &basis, &times, &cfg.integrator, |_, rho| {
            let mut h = DMatrix::zeros(dh, dh);
            for c in 0..basis.cavity_cutoff() {
                h += rho.view((c * dh, c * dh), (dh, dh));
            }
            out.push(h);
        })?;
        Ok(out)
    };
    let dicke = holder_states(BasisPolicy::PreferDicke)?;
    let full = holder_states(BasisPolicy::ForceFull)?;
    let s = symmetrizer(n)?;
    let full_exc = BasisSpec::full(n, 2)?.holder_excitations();
    let energy = |m: &DMatrix<C64>, exc: &[usize]| -> f64 { exc.iter().enumerate().map(|(i, &e)| e as f64 * m[(i, i)].re).sum() };
    let dicke_exc: Vec<usize> = (0..=n).collect();
    let mut worst = 0.0f64;
    for (d, f) in dicke.iter().zip(&full) {
        let embedded = &s * d * s.adjoint();
        worst = worst.max(trace_distance(&embedded, f)?);
        worst = worst.max((params.omega_h * (energy(d, &dicke_exc) - energy(f, &full_exc))).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quick() -> ExperimentConfig {
        ExperimentConfig { grid: TimeGrid::new(2.0, 401).unwrap(), ..Default::default() }
    }

    #[test]
    fn kappa_units() {
        assert_eq!(KappaUnit::G.to_rabi(4.0), 2.0);
        assert_eq!(KappaUnit::Rabi.to_rabi(0.4), 0.4);
        assert_eq!("G".parse::<KappaUnit>().unwrap(), KappaUnit::G);
        assert!("hz".parse::<KappaUnit>().is_err());
        let p = ExperimentConfig::default().params(1.0);
        assert_abs_diff_eq!(p.kappa, 2e-3, epsilon = 1e-18);
    }

    #[test]
    fn default_grids() {
        assert_eq!(default_kappas().len(), 11);
        assert_eq!(default_kappas()[3], 0.6);
        assert_eq!(default_kappas()[10], 2.0);
        assert_eq!(SweepGrid::default_for(InitKind::Fock).n_values.len(), 10);
        assert_eq!(SweepGrid::default_for(InitKind::Coherent).n_values, vec![1, 2, 3, 4]);
        assert_eq!(SweepGrid::default_for(InitKind::Thermal).n_values.len(), 6);
    }

    #[test]
    fn single_cell_ratios_are_exactly_one() {
        for kind in InitKind::ALL {
            let r = run_point(kind, 1, 0.4, &quick()).unwrap();
            assert_eq!(r.gamma_e, 1.0);
            assert_eq!(r.gamma_rate, 1.0);
            assert_eq!(r.gamma_p, 1.0);
            if let Some(g) = r.gamma_ergo {
                assert_eq!(g, 1.0);
            }
            assert_eq!(r.collective, r.unit_cell);
        }
    }

    #[test]
    fn parallel_quantities_scale_from_unit_cell() {
        let r = run_point(InitKind::Fock, 3, 0.6, &quick()).unwrap();
        assert_eq!(r.parallel.tau_bar, r.unit_cell.tau_bar);
        assert_eq!(r.parallel.omega_bar, r.unit_cell.omega_bar);
        assert_abs_diff_eq!(r.parallel.e_bar, 3.0 * r.unit_cell.e_bar, epsilon = 1e-15);
        assert_abs_diff_eq!(r.parallel.p_bar, 3.0 * r.unit_cell.p_bar, epsilon = 1e-15);
        assert_abs_diff_eq!(r.parallel.ergo_bar, 3.0 * r.unit_cell.ergo_bar, epsilon = 1e-15);
        assert_abs_diff_eq!(r.p_bar_per_cell() * 3.0, r.collective.p_bar, epsilon = 1e-15);
    }

    #[test]
    fn lossless_fock_collective_is_faster_but_not_fuller() {
        let r = run_point(InitKind::Fock, 4, 0.0, &ExperimentConfig::default()).unwrap();
        assert!(r.gamma_rate > 1.0);
        assert!(r.gamma_e <= 1.0);
        assert_abs_diff_eq!(r.unit_cell.tau_bar, 1.0, epsilon = 1e-6);
        let lossy = run_point(InitKind::Fock, 4, 1.0, &ExperimentConfig::default()).unwrap();
        assert!(lossy.gamma_e > 1.0);
        assert!(lossy.gamma_p > r.gamma_p);
    }

    #[test]
    fn energy_distribution_balances() {
        let cfg = quick();
        let lossless = energy_distribution(InitKind::Fock, 2, 0.0, &cfg).unwrap();
        assert_eq!(lossless.collective.q, 0.0);
        assert_eq!(lossless.parallel.q, 0.0);
        let lossy = energy_distribution(InitKind::Coherent, 2, 1.0, &cfg).unwrap();
        for c in [lossy.collective, lossy.parallel] {
            assert_abs_diff_eq!(c.total(), 2.0, epsilon = 2e-6);
            assert!(c.q > 0.0);
            assert!(c.ergo_h <= c.e_h + 1e-9);
        }
    }

    #[test]
    fn dicke_and_full_registers_agree() {
        let cfg = ExperimentConfig { grid: TimeGrid::new(3.0, 301).unwrap(), ..Default::default() };
        assert!(dicke_full_equivalence(1, InitKind::Fock, 0.5, &cfg).unwrap() < 1e-12);
        assert!(dicke_full_equivalence(2, InitKind::Fock, 0.5, &cfg).unwrap() < 1e-8);
        assert!(dicke_full_equivalence(4, InitKind::Fock, 0.5, &cfg).is_err());
    }

    #[test]
    fn sweep_orders_rows_and_keeps_failures() {
        let grid = SweepGrid {
            init_kinds: vec![InitKind::Coherent, InitKind::Fock],
            n_values: vec![2, 1],
            kappa_values: vec![2.0, 0.0],
            kappa_unit: KappaUnit::G,
        };
        let rows = run_sweep(&grid, &quick()).unwrap();
        let keys: Vec<(InitKind, usize, f64)> = rows.iter().map(|r| (r.kind, r.n, r.kappa_over_rabi)).collect();
        assert_eq!(
            keys,
            vec![
                (InitKind::Fock, 1, 0.0),
                (InitKind::Fock, 1, 1.0),
                (InitKind::Fock, 2, 0.0),
                (InitKind::Fock, 2, 1.0),
                (InitKind::Coherent, 1, 0.0),
                (InitKind::Coherent, 1, 1.0),
                (InitKind::Coherent, 2, 0.0),
                (InitKind::Coherent, 2, 1.0),
            ]
        );
        assert!(rows.iter().all(|r| r.outcome.is_ok()));
        let direct = run_point(InitKind::Fock, 2, 1.0, &quick()).unwrap();
        assert_eq!(rows[3].outcome.as_ref().unwrap(), &direct);

        let short = ExperimentConfig { grid: TimeGrid::new(0.5, 101).unwrap(), ..Default::default() };
        let rows = run_sweep(&SweepGrid { init_kinds: vec![InitKind::Fock], ..grid }, &short).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.outcome.as_ref().unwrap_err().cause == "no_maximum"));
    }

    #[test]
    fn invalid_sweeps_are_rejected() {
        let mut grid = SweepGrid::default_for(InitKind::Fock);
        grid.n_values = vec![0];
        assert!(run_sweep(&grid, &quick()).is_err());
        grid.n_values = vec![1];
        grid.kappa_values = vec![-1.0];
        assert!(run_sweep(&grid, &quick()).is_err());
    }
}
