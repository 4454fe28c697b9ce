//! Command-line front end: single charging runs, config-driven sweeps, the
//! built-in validation suite, and CSV serialization.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::Error;
use crate::evolve::{
    integrate, propagate_liouvillian, states_at, vectorized_liouvillian, Fault, IntegratorConfig, TimeGrid,
    Trajectory,
};
use crate::experiment::{
    default_kappas, default_max_n, dicke_full_equivalence, run_charging, run_sweep, BasisPolicy, Cutoff,
    ExperimentConfig, KappaUnit, SweepGrid, SweepRow,
};
use crate::hilbert::{fock_state, holder_ground, trace_distance, BasisSpec};
use crate::merit::{jc_ergotropy_analytic, merit_from_trajectory};
use crate::model::{initial_state, BatteryParams, InitKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PHYSICS: i32 = 3;

pub const TRAJECTORY_HEADER: &str =
    "t_pi_over_rabi,E_h,E_c,Q,ergotropy_h,conservation_residual,trace_error,min_eig";
pub const SUMMARY_HEADER: &str = "status,init,N,kappa_over_rabi,tau_bar,E_bar,Omega_bar,P_bar,P_bar_per_cell,ergo_bar,\
tau_bar_par,E_bar_par,P_bar_par,ergo_bar_par,gamma_E,gamma_rate,gamma_P,gamma_ergo,gamma_ergo_defined";

#[derive(Debug, Parser)]
#[command(name = "tcbattery", version, about = "Dissipative Tavis-Cummings quantum battery simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one charging run and write its trajectory CSV
    Run(RunArgs),
    /// Run every point of a TOML sweep config and write the summary CSV
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle checks; exit status 0 iff all pass
    Validate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    Fock,
    Coherent,
    Thermal,
}

impl From<InitArg> for InitKind {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Fock => InitKind::Fock,
            InitArg::Coherent => InitKind::Coherent,
            InitArg::Thermal => InitKind::Thermal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitArg {
    Rabi,
    G,
}

impl From<UnitArg> for KappaUnit {
    fn from(a: UnitArg) -> Self {
        match a {
            UnitArg::Rabi => KappaUnit::Rabi,
            UnitArg::G => KappaUnit::G,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisArg {
    Dicke,
    Full,
    /// Dicke subspace, which is exact for the supported initial states
    Auto,
}

impl From<BasisArg> for BasisPolicy {
    fn from(a: BasisArg) -> Self {
        match a {
            BasisArg::Dicke | BasisArg::Auto => BasisPolicy::PreferDicke,
            BasisArg::Full => BasisPolicy::ForceFull,
        }
    }
}

fn parse_cutoff(s: &str) -> Result<Cutoff, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Cutoff::Auto);
    }
    s.parse::<usize>().map(Cutoff::Fixed).map_err(|_| format!("expected 'auto' or a level count, got '{s}'"))
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub init: InitArg,
    /// Number of qubits; the charger starts with as many mean photons
    #[arg(long)]
    pub n: usize,
    /// Cavity loss rate; requires --kappa-unit when nonzero
    #[arg(long, default_value_t = 0.0)]
    pub kappa: f64,
    #[arg(long, value_enum)]
    pub kappa_unit: Option<UnitArg>,
    /// Coupling in units of the cavity frequency
    #[arg(long, default_value_t = 1e-3)]
    pub g: f64,
    #[arg(long, default_value_t = 0.0)]
    pub n_th: f64,
    #[arg(long, value_enum, default_value = "auto")]
    pub basis: BasisArg,
    /// Number of retained Fock levels, or 'auto'
    #[arg(long, default_value = "auto", value_parser = parse_cutoff)]
    pub cutoff: Cutoff,
    /// End time in units of pi/Omega_R
    #[arg(long, default_value_t = 3.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 3001)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 1e-11)]
    pub abs_tol: f64,
    /// Output file (standard output if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure of a CLI command, mapped onto the exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Physics(Error),
    Io(io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Physics(_) => EXIT_PHYSICS,
            CliError::Io(_) => EXIT_VALIDATION,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Physics(e) => write!(f, "error [{}]: {e}", e.cause()),
            CliError::Io(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn kappa_over_rabi(kappa: f64, unit: Option<KappaUnit>) -> Result<f64, CliError> {
    match unit {
        Some(u) => Ok(u.to_rabi(kappa)),
        None if kappa == 0.0 => Ok(0.0),
        None => Err(CliError::Usage("a nonzero kappa needs its unit (--kappa-unit rabi|g)".into())),
    }
}

fn integrator(rel_tol: f64, abs_tol: f64) -> Result<IntegratorConfig, CliError> {
    let cfg = IntegratorConfig { rel_tol, abs_tol, ..Default::default() };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

impl RunArgs {
    fn config(&self) -> Result<(f64, ExperimentConfig), CliError> {
        let kappa = kappa_over_rabi(self.kappa, self.kappa_unit.map(KappaUnit::from))?;
        let cfg = ExperimentConfig {
            g: self.g,
            n_th: self.n_th,
            basis_policy: self.basis.into(),
            cutoff: self.cutoff,
            grid: TimeGrid::new(self.t_max, self.samples).map_err(usage)?,
            integrator: integrator(self.rel_tol, self.abs_tol)?,
        };
        cfg.params(kappa).validate().map_err(usage)?;
        if self.n == 0 {
            return Err(CliError::Usage("--n must be at least 1".into()));
        }
        Ok((kappa, cfg))
    }
}

/// Sweep config document (TOML). Grid axes are arrays; every key is optional
/// except `init`, and `kappa_unit` is required whenever `kappa` is given.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub init: Vec<InitArg>,
    pub n: Option<Vec<usize>>,
    pub kappa: Option<Vec<f64>>,
    pub kappa_unit: Option<UnitArg>,
    pub g: Option<f64>,
    pub n_th: Option<f64>,
    pub basis: Option<BasisArg>,
    pub cutoff: Option<CutoffValue>,
    pub t_max: Option<f64>,
    pub samples: Option<usize>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum CutoffValue {
    Levels(usize),
    Word(String),
}

impl SweepConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid sweep config: {e}")))
    }

    /// One grid per initial condition (default `N` ranges differ by kind).
    pub fn resolve(&self) -> Result<(Vec<SweepGrid>, ExperimentConfig), CliError> {
        if self.init.is_empty() {
            return Err(CliError::Usage("'init' must list at least one initial condition".into()));
        }
        let (kappa_values, kappa_unit) = match (&self.kappa, self.kappa_unit) {
            (Some(k), Some(u)) => (k.clone(), u.into()),
            (Some(_), None) => return Err(CliError::Usage("'kappa' needs 'kappa_unit' (\"rabi\" or \"g\")".into())),
            (None, _) => (default_kappas(), KappaUnit::Rabi),
        };
        let cutoff = match &self.cutoff {
            None => Cutoff::Auto,
            Some(CutoffValue::Levels(c)) => Cutoff::Fixed(*c),
            Some(CutoffValue::Word(w)) => parse_cutoff(w).map_err(CliError::Usage)?,
        };
        let defaults = ExperimentConfig::default();
        let integ = integrator(
            self.rel_tol.unwrap_or(defaults.integrator.rel_tol),
            self.abs_tol.unwrap_or(defaults.integrator.abs_tol),
        )?;
        let cfg = ExperimentConfig {
            g: self.g.unwrap_or(defaults.g),
            n_th: self.n_th.unwrap_or(defaults.n_th),
            basis_policy: self.basis.map(BasisPolicy::from).unwrap_or_default(),
            cutoff,
            grid: TimeGrid::new(
                self.t_max.unwrap_or(defaults.grid.t_max()),
                self.samples.unwrap_or(defaults.grid.samples()),
            )
            .map_err(usage)?,
            integrator: integ,
        };
        cfg.params(0.0).validate().map_err(usage)?;
        let mut kinds: Vec<InitKind> = self.init.iter().map(|&a| a.into()).collect();
        kinds.sort_by_key(|k| InitKind::ALL.iter().position(|x| x == k));
        kinds.dedup();
        let grids: Vec<SweepGrid> = kinds
            .into_iter()
            .map(|kind| SweepGrid {
                init_kinds: vec![kind],
                n_values: self.n.clone().unwrap_or_else(|| (1..=default_max_n(kind)).collect()),
                kappa_values: kappa_values.clone(),
                kappa_unit,
            })
            .collect();
        for g in &grids {
            g.validate().map_err(usage)?;
        }
        Ok((grids, cfg))
    }
}

/// Fixed 12-significant-digit scientific notation.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.11e}")
}

pub fn write_trajectory_csv(w: &mut dyn Write, traj: &Trajectory) -> io::Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for k in 0..traj.len() {
        let fields = [
            traj.times[k],
            traj.e_h[k],
            traj.e_c[k],
            traj.heat[k],
            traj.ergotropy_h[k],
            traj.conservation_residual(k),
            traj.trace_error[k],
            traj.min_eigenvalue[k],
        ];
        let line: Vec<String> = fields.iter().map(|&x| fmt_num(x)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn summary_line(row: &SweepRow) -> String {
    let head = |status: &str| format!("{status},{},{},{}", row.kind, row.n, fmt_num(row.kappa_over_rabi));
    match &row.outcome {
        Err(f) => format!("{}{}", head(&format!("err:{}", f.cause)), ",".repeat(15)),
        Ok(r) => {
            let (c, p) = (&r.collective, &r.parallel);
            let mut fields: Vec<String> = [
                c.tau_bar,
                c.e_bar,
                c.omega_bar,
                c.p_bar,
                r.p_bar_per_cell(),
                c.ergo_bar,
                p.tau_bar,
                p.e_bar,
                p.p_bar,
                p.ergo_bar,
                r.gamma_e,
                r.gamma_rate,
                r.gamma_p,
            ]
            .iter()
            .map(|&x| fmt_num(x))
            .collect();
            fields.push(r.gamma_ergo.map(fmt_num).unwrap_or_default());
            fields.push(r.gamma_ergo.is_some().to_string());
            format!("{},{}", head("ok"), fields.join(","))
        }
    }
}

pub fn write_summary_csv(w: &mut dyn Write, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for row in rows {
        writeln!(w, "{}", summary_line(row))?;
    }
    Ok(())
}

fn emit(out: Option<&Path>, stdout: &mut dyn Write, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
    match out {
        Some(path) => {
            let mut file = io::BufWriter::new(fs::File::create(path)?);
            body(&mut file)?;
            file.flush()
        }
        None => body(stdout),
    }
}

pub fn cmd_run(args: &RunArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let (kappa, cfg) = args.config()?;
    let kind = InitKind::from(args.init);
    let traj = match run_charging(kind, args.n, kappa, &cfg) {
        Ok(t) => t,
        Err(Error::Physicality { t, reason, partial }) => {
            emit(args.out.as_deref(), stdout, |w| write_trajectory_csv(w, &partial))?;
            return Err(CliError::Physics(Error::Physicality { t, reason, partial }));
        }
        Err(e) => return Err(CliError::Physics(e)),
    };
    emit(args.out.as_deref(), stdout, |w| write_trajectory_csv(w, &traj))?;
    match merit_from_trajectory(&traj) {
        Ok(m) => writeln!(
            stderr,
            "first maximum: tau_bar={} E_bar={} Omega_bar={} P_bar={} ergo_bar={}",
            fmt_num(m.tau_bar),
            fmt_num(m.e_bar),
            fmt_num(m.omega_bar),
            fmt_num(m.p_bar),
            fmt_num(m.ergo_bar)
        )?,
        Err(e) => writeln!(stderr, "note: {e}")?,
    }
    writeln!(stderr, "max conservation residual: {}", fmt_num(traj.max_conservation_residual()))?;
    Ok(())
}

pub fn cmd_sweep(config: &Path, out: Option<&Path>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let text = fs::read_to_string(config)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", config.display())))?;
    let (grids, cfg) = SweepConfig::parse(&text)?.resolve()?;
    let mut rows = Vec::new();
    for grid in &grids {
        rows.extend(run_sweep(grid, &cfg).map_err(usage)?);
    }
    emit(out, stdout, |w| write_summary_csv(w, &rows))?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    writeln!(stderr, "{} points, {failed} failed", rows.len())?;
    Ok(())
}

/// Outcome of one validation check; `worst` and `bound` share units.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub worst: f64,
    pub bound: f64,
    pub note: String,
}

impl Check {
    fn measured(name: &'static str, worst: f64, bound: f64) -> Self {
        Self { name, passed: worst <= bound, worst, bound, note: String::new() }
    }

    fn failed(name: &'static str, bound: f64, e: &Error) -> Self {
        Self { name, passed: false, worst: f64::INFINITY, bound, note: format!("[{}] {e}", e.cause()) }
    }

    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let mut line = format!("{status} {:<26} worst={:.3e} bound={:.1e}", self.name, self.worst, self.bound);
        if !self.note.is_empty() {
            line.push_str("  ");
            line.push_str(&self.note);
        }
        line
    }
}

fn check_with(name: &'static str, bound: f64, measure: impl FnOnce() -> crate::Result<f64>) -> Check {
    match measure() {
        Ok(worst) => Check::measured(name, worst, bound),
        Err(e) => Check::failed(name, bound, &e),
    }
}

/// Oracle checks at desk scale. `fault` deliberately corrupts the integrator.
pub fn validation_suite(fault: Option<Fault>) -> Vec<Check> {
    let integ = IntegratorConfig { fault, ..Default::default() };
    let cfg = ExperimentConfig { integrator: integ, ..Default::default() };
    let lossless = BatteryParams::resonant(0.0);
    let mut checks = Vec::new();

    let single = || -> crate::Result<Trajectory> {
        let basis = BasisSpec::dicke(1, 2)?;
        integrate(&initial_state(InitKind::Fock, 1, &basis)?, &lossless, &basis, &TimeGrid::default(), &integ)
    };
    checks.push(check_with("single_qubit_rabi", 2e-6, || {
        let traj = single()?;
        let mut worst = 0.0f64;
        for k in (0..50).map(|i| i * 60) {
            let t = traj.times[k] * lossless.time_unit();
            worst = worst.max((traj.e_h[k] - (lossless.g * t).sin().powi(2)).abs());
            worst = worst.max((traj.ergotropy_h[k] - jc_ergotropy_analytic(lossless.g, t)).abs());
        }
        Ok(worst)
    }));
    checks.push(check_with("single_qubit_first_maximum", 1e-6, || {
        let m = merit_from_trajectory(&single()?)?;
        Ok([m.tau_bar - 1.0, m.e_bar - 1.0, m.ergo_bar - 1.0].iter().fold(0.0, |a: f64, x| a.max(x.abs())))
    }));
    checks.push(check_with("collective_rabi", 1e-6, || {
        let mut worst = 0.0f64;
        for n in [2usize, 4, 9] {
            let basis = BasisSpec::dicke(n, 2)?;
            let rho0 = fock_state(2, 1)?.projector().kron(&holder_ground(&basis));
            let traj = integrate(&rho0, &lossless, &basis, &TimeGrid::default(), &integ)?;
            let root = (n as f64).sqrt();
            for k in 0..traj.len() {
                let t = traj.times[k] * lossless.time_unit();
                worst = worst.max((traj.e_h[k] - (root * lossless.g * t).sin().powi(2)).abs());
            }
            worst = worst.max((merit_from_trajectory(&traj)?.tau_bar * root - 1.0).abs());
        }
        Ok(worst)
    }));
    checks.push(check_with("liouvillian_exponential", 1e-8, || {
        let basis = BasisSpec::dicke(1, 3)?;
        let rho0 = initial_state(InitKind::Fock, 1, &basis)?;
        let times: Vec<f64> = (1..=10).map(|k| 0.3 * k as f64).collect();
        let mut worst = 0.0f64;
        for kappa in [0.2, 1.0] {
            let params = cfg.params(kappa);
            let l = vectorized_liouvillian(&params, &basis)?;
            for (t, rho) in times.iter().zip(states_at(&rho0, &params, &basis, &times, &integ)?) {
                let exact = propagate_liouvillian(&l, &rho0, t * params.time_unit())?;
                worst = worst.max(trace_distance(&rho, &exact)?);
            }
        }
        Ok(worst)
    }));
    checks.push(check_with("dicke_full_equivalence", 1e-8, || {
        let coarse = ExperimentConfig { grid: TimeGrid::new(3.0, 301)?, ..cfg };
        let mut worst = 0.0f64;
        for n in [2, 3] {
            for kind in InitKind::ALL {
                for kappa in [0.0, 1.0] {
                    worst = worst.max(dicke_full_equivalence(n, kind, kappa, &coarse)?);
                }
            }
        }
        Ok(worst)
    }));

    // Conservation, heat sign and physicality share one set of runs.
    let mut runs = Vec::new();
    let mut failure = None;
    'outer: for kind in InitKind::ALL {
        for n in [1usize, 3] {
            for kappa in [0.0, 1.0] {
                match run_charging(kind, n, kappa, &cfg) {
                    Ok(t) => runs.push((n, t)),
                    Err(e) => {
                        failure = Some(e);
                        break 'outer;
                    }
                }
            }
        }
    }
    let per_n = |f: &dyn Fn(&Trajectory) -> f64| runs.iter().map(|(n, t)| f(t) / *n as f64).fold(0.0, f64::max);
    let physical = |name, bound, worst| match &failure {
        Some(e) => Check::failed(name, bound, e),
        None => Check::measured(name, worst, bound),
    };
    checks.push(physical("conservation", 1e-6, per_n(&|t| t.max_conservation_residual())));
    checks.push(physical("heat_nonnegative", 1e-9, per_n(&|t| t.heat.iter().fold(0.0, |a: f64, q| a.max(-q)))));
    let diag = |t: &Trajectory| {
        let trace = t.trace_error.iter().fold(0.0, |a: f64, x| a.max(*x)) / crate::hilbert::TRACE_TOL;
        let herm = t.hermiticity_error.iter().fold(0.0, |a: f64, x| a.max(*x)) / crate::hilbert::HERMITICITY_TOL;
        let eig = t.min_eigenvalue.iter().fold(0.0, |a: f64, x| a.max(-x)) / crate::hilbert::POSITIVITY_TOL;
        trace.max(herm).max(eig)
    };
    checks.push(physical("physicality", 1.0, runs.iter().map(|(_, t)| diag(t)).fold(0.0, f64::max)));
    checks
}

pub fn cmd_validate(stdout: &mut dyn Write) -> io::Result<bool> {
    let checks = validation_suite(None);
    for c in &checks {
        writeln!(stdout, "{}", c.line())?;
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        writeln!(stdout, "all {} checks passed", checks.len())?;
    } else {
        writeln!(stdout, "failed: {}", failed.join(", "))?;
    }
    Ok(failed.is_empty())
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{text}") } else { write!(stdout, "{text}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args, stdout, stderr),
        Command::Sweep { config, out } => cmd_sweep(config, out.as_deref(), stdout, stderr),
        Command::Validate => match cmd_validate(stdout) {
            Ok(true) => Ok(()),
            Ok(false) => return EXIT_VALIDATION,
            Err(e) => Err(CliError::Io(e)),
        },
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{ComparisonReport, PointFailure};

    fn run(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let mut full = vec!["tcbattery"];
        full.extend_from_slice(args);
        let code = main_with(full, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn number_format_has_twelve_significant_digits() {
        assert_eq!(fmt_num(1.0), "1.00000000000e0");
        assert_eq!(fmt_num(-2.5e-7), "-2.50000000000e-7");
        assert_eq!(fmt_num(0.0), "0.00000000000e0");
    }

    #[test]
    fn missing_n_is_a_usage_error() {
        let (code, _, err) = run(&["run", "--init", "fock"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--n"), "{err}");
        assert!(err.contains("Usage"), "{err}");
    }

    #[test]
    fn nonzero_kappa_requires_unit() {
        let (code, _, err) = run(&["run", "--init", "fock", "--n", "1", "--kappa", "0.5"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("kappa-unit"));
    }

    #[test]
    fn physics_errors_exit_with_cause() {
        // two Fock levels cannot hold a coherent state
        let (code, _, err) = run(&["run", "--init", "coherent", "--n", "4", "--cutoff", "3", "--samples", "100"]);
        assert_eq!(code, EXIT_PHYSICS);
        assert!(err.contains("[truncation]"), "{err}");
    }

    #[test]
    fn run_writes_trajectory() {
        let (code, out, err) = run(&["run", "--init", "fock", "--n", "1", "--kappa", "0", "--t-max", "3.0"]);
        assert_eq!(code, EXIT_OK, "{err}");
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], TRAJECTORY_HEADER);
        assert_eq!(lines.len(), 3002);
        let peak: Vec<f64> = lines[1001].split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(peak[0], 1.0);
        assert!((peak[1] - 1.0).abs() < 1e-7);
        assert!(err.contains("first maximum"));
    }

    #[test]
    fn sweep_config_schema() {
        let cfg = SweepConfig::parse("init = [\"fock\"]\nn = [1, 2]\nkappa = [0.0, 4.0]\nkappa_unit = \"g\"\ncutoff = \"auto\"")
            .unwrap();
        let (grids, exp) = cfg.resolve().unwrap();
        assert_eq!(grids.len(), 1);
        assert_eq!(grids[0].kappas_over_rabi(), vec![0.0, 2.0]);
        assert_eq!(exp.cutoff, Cutoff::Auto);

        let defaults = SweepConfig::parse("init = [\"thermal\", \"fock\"]").unwrap().resolve().unwrap().0;
        assert_eq!(defaults[0].init_kinds, vec![InitKind::Fock]);
        assert_eq!(defaults[0].n_values.len(), 10);
        assert_eq!(defaults[0].kappa_values.len(), 11);
        assert_eq!(defaults[1].n_values.len(), 6);

        assert!(SweepConfig::parse("init = [\"fock\"]\nkappa = [1.0]").unwrap().resolve().is_err());
        assert!(SweepConfig::parse("init = [\"fock\"]\nbogus = 1").is_err());
        assert!(SweepConfig::parse("init = [\"laser\"]").is_err());
        assert!(SweepConfig::parse("init = [\"fock\"]\ncutoff = \"many\"").unwrap().resolve().is_err());
        assert!(matches!(
            SweepConfig::parse("init = [\"fock\"]\ncutoff = 7").unwrap().resolve().unwrap().1.cutoff,
            Cutoff::Fixed(7)
        ));
    }

    #[test]
    fn failed_rows_keep_their_columns() {
        let row = SweepRow {
            kind: InitKind::Fock,
            n: 2,
            kappa_over_rabi: 0.2,
            outcome: Err(PointFailure { cause: "no_maximum", message: String::new() }),
        };
        let line = summary_line(&row);
        assert!(line.starts_with("err:no_maximum,fock,2,"));
        assert_eq!(line.split(',').count(), SUMMARY_HEADER.split(',').count());
    }

    #[test]
    fn summary_rows_are_consistent() {
        let report: ComparisonReport =
            crate::experiment::run_point(InitKind::Fock, 1, 0.4, &ExperimentConfig::default()).unwrap();
        let row = SweepRow { kind: InitKind::Fock, n: 1, kappa_over_rabi: 0.4, outcome: Ok(report) };
        let line = summary_line(&row);
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), SUMMARY_HEADER.split(',').count());
        assert_eq!(fields[0], "ok");
        let tau: f64 = fields[4].parse().unwrap();
        let omega: f64 = fields[6].parse().unwrap();
        assert!((tau * omega - 2.0 * std::f64::consts::PI).abs() < 1e-10);
        // unit cell at κ = 0.4 Ω_R has no ergotropy left at its maximum
        assert_eq!(fields[17], "");
        assert_eq!(fields[18], "false");
    }
}
