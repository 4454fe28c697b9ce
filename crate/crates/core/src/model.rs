//! Tavis-Cummings battery: Hamiltonian, cavity dissipator, master equation and
//! the charger initial conditions.
//!
//! Natural units: `ħ = 1` and energies in units of `ω_c` (which defaults to 1).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hilbert::{
    self, annihilation, coherent_state, embed_charger, embed_holder, fock_state, holder_excitation,
    holder_ground, holder_lowering, number_operator, tensor, thermal_state, BasisSpec, DensityMatrix,
    Operator, C64, TRUNCATION_BOUND,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatteryParams {
    pub omega_c: f64,
    pub omega_h: f64,
    /// Charger-holder coupling, in units of `ω_c`.
    pub g: f64,
    /// Dissipator coefficient; the charger loss rate is `κ_c = 2κ`.
    pub kappa: f64,
    pub n_th: f64,
    /// Interaction switch, 0 (storage) or 1 (charging / normal discharge).
    pub lambda: f64,
}

impl BatteryParams {
    /// Resonant charging configuration with `g = 10⁻³ ω_c` and a zero-temperature bath.
    pub fn resonant(kappa: f64) -> Self {
        Self { omega_c: 1.0, omega_h: 1.0, g: 1e-3, kappa, n_th: 0.0, lambda: 1.0 }
    }

    pub fn with_g(mut self, g: f64) -> Self {
        self.g = g;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("omega_c", self.omega_c),
            ("omega_h", self.omega_h),
            ("g", self.g),
            ("kappa", self.kappa),
            ("n_th", self.n_th),
        ];
        for (name, v) in checks {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.g == 0.0 {
            return Err(Error::InvalidParams("g must be positive (it sets the time unit)".into()));
        }
        if self.lambda != 0.0 && self.lambda != 1.0 {
            return Err(Error::InvalidParams(format!("lambda must be 0 or 1, got {}", self.lambda)));
        }
        Ok(())
    }

    /// `Ω_R = 2g`.
    pub fn rabi_frequency(&self) -> f64 {
        2.0 * self.g
    }

    /// Natural-time length of one plotting unit `π/Ω_R`.
    pub fn time_unit(&self) -> f64 {
        PI / self.rabi_frequency()
    }
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self::resonant(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InitKind {
    Fock,
    Coherent,
    Thermal,
}

impl InitKind {
    pub const ALL: [InitKind; 3] = [InitKind::Fock, InitKind::Coherent, InitKind::Thermal];

    pub fn name(self) -> &'static str {
        match self {
            InitKind::Fock => "fock",
            InitKind::Coherent => "coherent",
            InitKind::Thermal => "thermal",
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fock" => Ok(InitKind::Fock),
            "coherent" => Ok(InitKind::Coherent),
            "thermal" => Ok(InitKind::Thermal),
            other => Err(format!("unknown initial condition '{other}' (fock|coherent|thermal)")),
        }
    }
}

/// Mean-photon deficit tolerated when truncating a thermal distribution.
const THERMAL_MEAN_DEFICIT: f64 = 1e-9;

/// Number of retained Fock levels for a charger prepared with `mean_photons`.
///
/// Fock states at zero temperature never gain excitations, so `N + 1` levels
/// are exact. Coherent states use `max(⌈N + 6√N⌉ + 5, 15)`. Thermal tails
/// decay only geometrically; the cutoff grows from the coherent value until
/// the dropped population is below the truncation bound and the renormalized
/// mean is within `1e-9` of `N`.
pub fn auto_cutoff(kind: InitKind, mean_photons: usize, n_th: f64) -> usize {
    let n = mean_photons as f64;
    let wide = ((n + 6.0 * n.sqrt()).ceil() as usize + 5).max(15);
    match kind {
        InitKind::Fock if n_th == 0.0 => (mean_photons + 1).max(2),
        InitKind::Fock | InitKind::Coherent => wide,
        InitKind::Thermal => {
            let q = n / (n + 1.0);
            let mut d = wide;
            loop {
                let tail = q.powi(d as i32);
                let deficit = d as f64 * tail / (1.0 - tail);
                if tail < TRUNCATION_BOUND && deficit < THERMAL_MEAN_DEFICIT {
                    return d;
                }
                d += 1;
            }
        }
    }
}

/// Charger state with mean photon number `mean_photons` (coherent amplitude `√N`, real).
pub fn charger_state(kind: InitKind, mean_photons: usize, cutoff: usize) -> Result<DensityMatrix> {
    match kind {
        InitKind::Fock => Ok(fock_state(cutoff, mean_photons)?.projector()),
        InitKind::Coherent => {
            Ok(coherent_state(cutoff, C64::from((mean_photons as f64).sqrt()))?.projector())
        }
        InitKind::Thermal => thermal_state(cutoff, mean_photons as f64),
    }
}

/// Charger prepared with `N` mean photons, all qubits in `|g⟩`.
pub fn initial_state(kind: InitKind, n: usize, basis: &BasisSpec) -> Result<DensityMatrix> {
    if basis.n_qubits() != n {
        return Err(Error::InvalidBasis(format!(
            "basis has {} qubits but the initial state asks for {n}",
            basis.n_qubits()
        )));
    }
    let charger = charger_state(kind, n, basis.cavity_cutoff())?;
    Ok(charger.kron(&holder_ground(basis)))
}

/// `ω_c a†a ⊗ I`.
pub fn charger_hamiltonian(params: &BatteryParams, basis: &BasisSpec) -> Result<Operator> {
    let n = number_operator(basis.cavity_cutoff())?;
    Ok(embed_charger(&n, basis)?.scale(params.omega_c))
}

/// `ω_h Σ σ_i⁺σ_i⁻` on the holder space alone.
pub fn holder_only_hamiltonian(params: &BatteryParams, basis: &BasisSpec) -> Operator {
    holder_excitation(basis).scale(params.omega_h)
}

/// `I ⊗ ω_h Σ σ_i⁺σ_i⁻`.
pub fn holder_hamiltonian(params: &BatteryParams, basis: &BasisSpec) -> Result<Operator> {
    embed_holder(&holder_only_hamiltonian(params, basis), basis)
}

/// `Σ (a σ_i⁺ + a† σ_i⁻)` without the coupling constant.
pub fn interaction(basis: &BasisSpec) -> Result<Operator> {
    let a = annihilation(basis.cavity_cutoff())?;
    let lower = holder_lowering(basis)?;
    let absorb = tensor(&a, &lower.adjoint());
    Ok(&absorb + &absorb.adjoint())
}

/// `a†a ⊗ I + I ⊗ Σ σ_i⁺σ_i⁻`.
pub fn excitation_operator(basis: &BasisSpec) -> Result<Operator> {
    let photons = embed_charger(&number_operator(basis.cavity_cutoff())?, basis)?;
    let qubits = embed_holder(&holder_excitation(basis), basis)?;
    Ok(&photons + &qubits)
}

/// `ℋ_λ = ℋ_c + ℋ_h + λ g Σ (a σ_i⁺ + a† σ_i⁻)`.
pub fn hamiltonian(params: &BatteryParams, basis: &BasisSpec) -> Result<Operator> {
    params.validate()?;
    let free = &charger_hamiltonian(params, basis)? + &holder_hamiltonian(params, basis)?;
    Ok(&free + &interaction(basis)?.scale(params.lambda * params.g))
}

fn check_square(rho: &DMatrix<C64>, basis: &BasisSpec) -> Result<()> {
    if rho.nrows() != basis.dim() || rho.ncols() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), found: rho.nrows() });
    }
    Ok(())
}

/// Cavity dissipator applied to an arbitrary matrix.
pub fn dissipator(rho: &DMatrix<C64>, params: &BatteryParams, basis: &BasisSpec) -> Result<DMatrix<C64>> {
    check_square(rho, basis)?;
    let a = embed_charger(&annihilation(basis.cavity_cutoff())?, basis)?.into_matrix();
    let ad = a.adjoint();
    let ada = &ad * &a;
    let aad = &a * &ad;
    let loss = (&a * rho * &ad).scale(2.0) - &ada * rho - rho * &ada;
    let mut out = loss.scale(params.kappa * (params.n_th + 1.0));
    if params.n_th > 0.0 {
        let gain = (&ad * rho * &a).scale(2.0) - &aad * rho - rho * &aad;
        out += gain.scale(params.kappa * params.n_th);
    }
    Ok(out)
}

/// `𝔇_c[ρ]`.
pub fn lindblad_apply(rho: &DensityMatrix, params: &BatteryParams, basis: &BasisSpec) -> Result<DMatrix<C64>> {
    params.validate()?;
    dissipator(rho.matrix(), params, basis)
}

/// `-i[ℋ_λ, ρ] + 𝔇_c[ρ]`.
pub fn master_rhs(rho: &DensityMatrix, params: &BatteryParams, basis: &BasisSpec) -> Result<DMatrix<C64>> {
    let h = hamiltonian(params, basis)?;
    let rho = rho.matrix();
    check_square(rho, basis)?;
    let comm = h.matrix() * rho - rho * h.matrix();
    Ok(comm * C64::new(0.0, -1.0) + dissipator(rho, params, basis)?)
}

/// Total energy stored in the free charger and holder Hamiltonians.
pub fn free_energy(rho: &DensityMatrix, params: &BatteryParams, basis: &BasisSpec) -> Result<f64> {
    let ec = hilbert::expectation(&charger_hamiltonian(params, basis)?, rho)?;
    let eh = hilbert::expectation(&holder_hamiltonian(params, basis)?, rho)?;
    Ok(ec + eh)
}
