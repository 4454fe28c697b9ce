//! Operators and states on the composite charger ⊗ holder space.
//!
//! Composite basis ordering is charger first, then qubits in label order,
//! so the composite index of `|n⟩ ⊗ |h⟩` is `n * holder_dim + h`. Each qubit
//! uses the ordered basis `{|e⟩, |g⟩}` with `|e⟩` at index 0. In the full
//! tensor representation the holder index of a bit string `b_1 … b_N` is
//! `Σ b_i 2^(N-i)` (bit 0 = excited). In the Dicke representation the holder
//! index is the excitation count `k = m + N/2` of `|j = N/2, m⟩`.

use nalgebra::{Complex, DMatrix, DVector};
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

pub const STATE_NORM_TOL: f64 = 1e-12;
pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-8;
/// Largest admissible population outside the retained Fock levels.
pub const TRUNCATION_BOUND: f64 = 1e-8;

const MAX_FULL_QUBITS: usize = 16;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QubitRep {
    /// `2^N`-dimensional tensor product of qubits.
    Full,
    /// `(N+1)`-dimensional permutation-symmetric block.
    Dicke,
}

impl QubitRep {
    pub fn name(self) -> &'static str {
        match self {
            QubitRep::Full => "full",
            QubitRep::Dicke => "dicke",
        }
    }
}

/// Layout of the charger ⊗ holder space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BasisSpec {
    n_qubits: usize,
    qubit_rep: QubitRep,
    cavity_cutoff: usize,
}

impl BasisSpec {
    pub fn new(n_qubits: usize, qubit_rep: QubitRep, cavity_cutoff: usize) -> Result<Self> {
        if cavity_cutoff < 2 {
            return Err(Error::InvalidCutoff(cavity_cutoff));
        }
        if n_qubits == 0 {
            return Err(Error::InvalidBasis("at least one qubit is required".into()));
        }
        if qubit_rep == QubitRep::Full && n_qubits > MAX_FULL_QUBITS {
            return Err(Error::InvalidBasis(format!(
                "full representation limited to {MAX_FULL_QUBITS} qubits, got {n_qubits}"
            )));
        }
        Ok(Self { n_qubits, qubit_rep, cavity_cutoff })
    }

    pub fn full(n_qubits: usize, cavity_cutoff: usize) -> Result<Self> {
        Self::new(n_qubits, QubitRep::Full, cavity_cutoff)
    }

    pub fn dicke(n_qubits: usize, cavity_cutoff: usize) -> Result<Self> {
        Self::new(n_qubits, QubitRep::Dicke, cavity_cutoff)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn qubit_rep(&self) -> QubitRep {
        self.qubit_rep
    }

    pub fn cavity_cutoff(&self) -> usize {
        self.cavity_cutoff
    }

    pub fn holder_dim(&self) -> usize {
        match self.qubit_rep {
            QubitRep::Full => 1 << self.n_qubits,
            QubitRep::Dicke => self.n_qubits + 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.cavity_cutoff * self.holder_dim()
    }

    pub fn index(&self, photons: usize, holder: usize) -> usize {
        photons * self.holder_dim() + holder
    }

    /// Number of excited qubits for every holder basis state.
    pub fn holder_excitations(&self) -> Vec<usize> {
        match self.qubit_rep {
            QubitRep::Full => (0..self.holder_dim())
                .map(|h| self.n_qubits - (h as u32).count_ones() as usize)
                .collect(),
            QubitRep::Dicke => (0..=self.n_qubits).collect(),
        }
    }

    /// Total excitation number (photons + excited qubits) of every composite basis state.
    pub fn excitations(&self) -> Vec<usize> {
        let holder = self.holder_excitations();
        (0..self.cavity_cutoff)
            .flat_map(|n| holder.iter().map(move |k| n + k))
            .collect()
    }

    pub fn holder_ground_index(&self) -> usize {
        match self.qubit_rep {
            QubitRep::Full => self.holder_dim() - 1,
            QubitRep::Dicke => 0,
        }
    }
}

/// Square complex matrix acting on one of the spaces above.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator(DMatrix<C64>);

impl Operator {
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        Ok(Self(m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let d = values.len();
        Self(DMatrix::from_fn(d, d, |i, j| if i == j { C64::from(values[i]) } else { ZERO }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self(self.0.scale(factor))
    }

    /// `max |A - A†|`.
    pub fn hermiticity_error(&self) -> f64 {
        max_antihermitian(&self.0)
    }

    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self(&self.0 * &other.0 - &other.0 * &self.0))
    }

    pub fn apply(&self, psi: &StateVector) -> Result<DVector<C64>> {
        check_dim(self.dim(), psi.dim())?;
        Ok(&self.0 * &psi.0)
    }

    /// Eigenvalues in ascending order; the operator must be Hermitian.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let err = self.hermiticity_error();
        if err > HERMITICITY_TOL * self.0.camax().max(1.0) {
            return Err(Error::NotHermitian(err));
        }
        Ok(hermitian_eigenvalues(&self.0))
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator(&self.0 + &rhs.0)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator(&self.0 - &rhs.0)
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator(&self.0 * &rhs.0)
    }
}

/// Normalized pure state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(DVector<C64>);

impl StateVector {
    pub fn new(amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidBasis("empty state vector".into()));
        }
        let dev = (amplitudes.norm() - 1.0).abs();
        if dev > STATE_NORM_TOL {
            return Err(Error::NotNormalized(dev));
        }
        Ok(Self(amplitudes))
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::IndexOutOfRange { index, range: format!("0..{dim}") });
        }
        let mut v = DVector::zeros(dim);
        v[index] = ONE;
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn kron(&self, other: &StateVector) -> StateVector {
        StateVector(self.0.kronecker(&other.0))
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix(&self.0 * self.0.adjoint())
    }
}

/// Violations of the three density-matrix invariants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Physicality {
    pub trace_error: f64,
    pub hermiticity_error: f64,
    pub min_eigenvalue: f64,
}

impl Physicality {
    pub fn of(m: &DMatrix<C64>) -> Self {
        Self {
            trace_error: (m.trace() - ONE).norm(),
            hermiticity_error: max_antihermitian(m),
            min_eigenvalue: min_eigenvalue(m),
        }
    }

    /// `None` if every invariant holds at `slack` times its bound.
    pub fn violation(&self, slack: f64) -> Option<String> {
        if !(self.trace_error <= TRACE_TOL * slack) {
            return Some(format!("trace error {:e}", self.trace_error));
        }
        if !(self.hermiticity_error <= HERMITICITY_TOL * slack) {
            return Some(format!("hermiticity error {:e}", self.hermiticity_error));
        }
        if !(self.min_eigenvalue >= -POSITIVITY_TOL * slack) {
            return Some(format!("minimum eigenvalue {:e}", self.min_eigenvalue));
        }
        None
    }
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(DMatrix<C64>);

impl DensityMatrix {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        if let Some(reason) = Physicality::of(&m).violation(1.0) {
            return Err(Error::NotPhysical(reason));
        }
        Ok(Self(m))
    }

    /// Wraps integrator output without validation; diagnostics are reported separately.
    pub(crate) fn from_matrix_unchecked(m: DMatrix<C64>) -> Self {
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn physicality(&self) -> Physicality {
        Physicality::of(&self.0)
    }

    pub fn kron(&self, other: &DensityMatrix) -> DensityMatrix {
        DensityMatrix(self.0.kronecker(&other.0))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.0)
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn max_antihermitian(m: &DMatrix<C64>) -> f64 {
    let d = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..d {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues of the Hermitian part of `m`, ascending.
pub fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let h = (m + m.adjoint()).scale(0.5);
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Smallest eigenvalue of a Hermitian matrix.
///
/// The matrix is split into the connected components of its nonzero pattern
/// first; states evolved from excitation-diagonal initial conditions stay
/// block diagonal, which keeps this cheap at large cutoffs.
pub fn min_eigenvalue(m: &DMatrix<C64>) -> f64 {
    let d = m.nrows();
    let mut edges = Vec::new();
    for j in 0..d {
        for i in 0..j {
            if m[(i, j)] != ZERO || m[(j, i)] != ZERO {
                edges.push((i, j));
            }
        }
    }
    components(d, edges)
        .into_iter()
        .map(|block| {
            if block.len() == 1 {
                m[(block[0], block[0])].re
            } else {
                let sub = DMatrix::from_fn(block.len(), block.len(), |a, b| m[(block[a], block[b])]);
                hermitian_eigenvalues(&sub)[0]
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Connected components of an undirected graph on `0..n`, each sorted ascending.
pub(crate) fn components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    for x in 0..n {
        let r = find(&mut parent, x);
        groups[r].push(x);
    }
    groups.retain(|g| !g.is_empty());
    groups
}

/// `½ Σ |λ_k(A - B)|`.
pub fn trace_distance(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<f64> {
    check_dim(a.nrows(), b.nrows())?;
    Ok(0.5 * hermitian_eigenvalues(&(a - b)).iter().map(|x| x.abs()).sum::<f64>())
}

/// Bosonic annihilation operator on `cutoff` Fock levels.
pub fn annihilation(cutoff: usize) -> Result<Operator> {
    if cutoff < 2 {
        return Err(Error::InvalidCutoff(cutoff));
    }
    let mut m = DMatrix::zeros(cutoff, cutoff);
    for n in 1..cutoff {
        m[(n - 1, n)] = C64::from((n as f64).sqrt());
    }
    Ok(Operator(m))
}

pub fn creation(cutoff: usize) -> Result<Operator> {
    Ok(annihilation(cutoff)?.adjoint())
}

/// `a†a` on `cutoff` Fock levels.
pub fn number_operator(cutoff: usize) -> Result<Operator> {
    if cutoff < 2 {
        return Err(Error::InvalidCutoff(cutoff));
    }
    Ok(Operator::diagonal(&(0..cutoff).map(|n| n as f64).collect::<Vec<_>>()))
}

/// `σ_i⁻` on the holder space of a full-representation basis; `qubit` is 1-based.
pub fn qubit_lowering(qubit: usize, basis: &BasisSpec) -> Result<Operator> {
    if basis.qubit_rep() != QubitRep::Full {
        return Err(Error::WrongRepresentation { expected: "full" });
    }
    let n = basis.n_qubits();
    if qubit == 0 || qubit > n {
        return Err(Error::IndexOutOfRange { index: qubit, range: format!("1..={n}") });
    }
    let d = basis.holder_dim();
    let bit = 1usize << (n - qubit);
    let mut m = DMatrix::zeros(d, d);
    for h in (0..d).filter(|h| h & bit == 0) {
        m[(h | bit, h)] = ONE;
    }
    Ok(Operator(m))
}

/// Collective lowering `J⁻` on the symmetric block `|N/2, m⟩`.
pub fn collective_lowering(basis: &BasisSpec) -> Result<Operator> {
    if basis.qubit_rep() != QubitRep::Dicke {
        return Err(Error::WrongRepresentation { expected: "dicke" });
    }
    let n = basis.n_qubits();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    for k in 1..=n {
        // j(j+1) - m(m-1) with j = N/2, m = k - N/2
        m[(k - 1, k)] = C64::from(((k * (n - k + 1)) as f64).sqrt());
    }
    Ok(Operator(m))
}

/// `Σ σ_i⁻` in whichever representation the basis uses (holder space only).
pub fn holder_lowering(basis: &BasisSpec) -> Result<Operator> {
    match basis.qubit_rep() {
        QubitRep::Dicke => collective_lowering(basis),
        QubitRep::Full => {
            let mut total = Operator::zeros(basis.holder_dim());
            for i in 1..=basis.n_qubits() {
                total = &total + &qubit_lowering(i, basis)?;
            }
            Ok(total)
        }
    }
}

/// `Σ σ_i⁺σ_i⁻` (equivalently `J_z + N/2`) on the holder space.
pub fn holder_excitation(basis: &BasisSpec) -> Operator {
    let k: Vec<f64> = basis.holder_excitations().into_iter().map(|k| k as f64).collect();
    Operator::diagonal(&k)
}

/// Isometry `2^N × (N+1)` mapping Dicke state `k` to the normalized
/// uniform superposition of all bit strings with `k` excited qubits.
pub fn symmetrizer(n_qubits: usize) -> Result<DMatrix<C64>> {
    let full = BasisSpec::full(n_qubits, 2)?;
    let exc = full.holder_excitations();
    let mut counts = vec![0usize; n_qubits + 1];
    for &k in &exc {
        counts[k] += 1;
    }
    let mut s = DMatrix::zeros(full.holder_dim(), n_qubits + 1);
    for (h, &k) in exc.iter().enumerate() {
        s[(h, k)] = C64::from(1.0 / (counts[k] as f64).sqrt());
    }
    Ok(s)
}

/// Kronecker product `A ⊗ B`.
pub fn tensor(a: &Operator, b: &Operator) -> Operator {
    Operator(a.0.kronecker(&b.0))
}

/// `A ⊗ I_holder`.
pub fn embed_charger(op: &Operator, basis: &BasisSpec) -> Result<Operator> {
    check_dim(basis.cavity_cutoff(), op.dim())?;
    Ok(tensor(op, &Operator::identity(basis.holder_dim())))
}

/// `I_charger ⊗ B`.
pub fn embed_holder(op: &Operator, basis: &BasisSpec) -> Result<Operator> {
    check_dim(basis.holder_dim(), op.dim())?;
    Ok(tensor(&Operator::identity(basis.cavity_cutoff()), op))
}

pub fn fock_state(cutoff: usize, photons: usize) -> Result<StateVector> {
    if cutoff < 2 {
        return Err(Error::InvalidCutoff(cutoff));
    }
    StateVector::basis(cutoff, photons)
}

/// `P(Poisson(mean) >= cutoff)`, summed directly so small tails keep full precision.
pub fn poisson_tail(mean: f64, cutoff: usize) -> f64 {
    if mean == 0.0 {
        return if cutoff == 0 { 1.0 } else { 0.0 };
    }
    let mut term = (-mean).exp();
    for n in 1..=cutoff {
        term *= mean / n as f64;
    }
    let mut tail = 0.0;
    let mut n = cutoff;
    loop {
        tail += term;
        n += 1;
        term *= mean / n as f64;
        if (n as f64 > mean && term < tail * 1e-17) || term == 0.0 || n > cutoff + 100_000 {
            break;
        }
    }
    tail
}

/// Coherent state `|α⟩` truncated to `cutoff` levels and renormalized.
pub fn coherent_state(cutoff: usize, alpha: C64) -> Result<StateVector> {
    if cutoff < 2 {
        return Err(Error::InvalidCutoff(cutoff));
    }
    let mean = alpha.norm_sqr();
    let tail = poisson_tail(mean, cutoff);
    if tail >= TRUNCATION_BOUND {
        return Err(Error::Truncation { cutoff, tail, bound: TRUNCATION_BOUND });
    }
    let mut amps = DVector::zeros(cutoff);
    amps[0] = C64::from((-mean / 2.0).exp());
    for n in 1..cutoff {
        amps[n] = amps[n - 1] * alpha / (n as f64).sqrt();
    }
    let norm = amps.norm();
    StateVector::new(amps.unscale(norm))
}

/// Thermal (geometric) photon distribution with mean `nbar`, truncated and renormalized.
pub fn thermal_state(cutoff: usize, nbar: f64) -> Result<DensityMatrix> {
    if cutoff < 2 {
        return Err(Error::InvalidCutoff(cutoff));
    }
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(Error::InvalidParams(format!("mean occupancy must be >= 0, got {nbar}")));
    }
    let ratio = nbar / (nbar + 1.0);
    let tail = ratio.powi(cutoff as i32);
    if tail >= TRUNCATION_BOUND {
        return Err(Error::Truncation { cutoff, tail, bound: TRUNCATION_BOUND });
    }
    let mut p = vec![1.0; cutoff];
    for n in 1..cutoff {
        p[n] = p[n - 1] * ratio;
    }
    let total: f64 = p.iter().sum();
    let p: Vec<f64> = p.into_iter().map(|x| x / total).collect();
    Ok(DensityMatrix(Operator::diagonal(&p).0))
}

/// All qubits in `|g⟩`.
pub fn holder_ground(basis: &BasisSpec) -> DensityMatrix {
    StateVector::basis(basis.holder_dim(), basis.holder_ground_index())
        .expect("ground index inside holder space")
        .projector()
}

/// `Tr_c ρ`: the holder reduced state.
pub fn partial_trace_charger(rho: &DensityMatrix, basis: &BasisSpec) -> Result<DensityMatrix> {
    check_dim(basis.dim(), rho.dim())?;
    let dh = basis.holder_dim();
    let mut out = DMatrix::zeros(dh, dh);
    for n in 0..basis.cavity_cutoff() {
        out += rho.0.view((n * dh, n * dh), (dh, dh));
    }
    Ok(DensityMatrix(out))
}

/// `Tr_h ρ`: the charger reduced state.
pub fn partial_trace_holder(rho: &DensityMatrix, basis: &BasisSpec) -> Result<DensityMatrix> {
    check_dim(basis.dim(), rho.dim())?;
    let (dc, dh) = (basis.cavity_cutoff(), basis.holder_dim());
    let out = DMatrix::from_fn(dc, dc, |n, m| (0..dh).map(|h| rho.0[(n * dh + h, m * dh + h)]).sum());
    Ok(DensityMatrix(out))
}

/// `Tr{op ρ}` for Hermitian `op`.
pub fn expectation(op: &Operator, rho: &DensityMatrix) -> Result<f64> {
    check_dim(op.dim(), rho.dim())?;
    let herm = op.hermiticity_error();
    if herm > HERMITICITY_TOL * op.0.camax().max(1.0) {
        return Err(Error::NotHermitian(herm));
    }
    let value = trace_product(&op.0, &rho.0);
    if value.im.abs() > 1e-8 * value.re.abs().max(1.0) {
        return Err(Error::ImaginaryResidue(value.im));
    }
    Ok(value.re)
}

/// `Tr{A B}` without forming the product.
pub(crate) fn trace_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    let d = a.nrows();
    let mut acc = ZERO;
    for i in 0..d {
        for j in 0..d {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_matrix(dim: usize, seed: u64) -> DMatrix<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(dim, dim, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    /// Full-rank random state `G G† / Tr`.
    pub fn random_density(dim: usize, seed: u64) -> DensityMatrix {
        let g = random_matrix(dim, seed);
        let rho = &g * g.adjoint();
        let tr = rho.trace();
        DensityMatrix::new(rho.unscale(tr.re)).unwrap()
    }

    pub fn random_hermitian(dim: usize, seed: u64) -> Operator {
        let g = random_matrix(dim, seed);
        Operator::from_matrix((&g + g.adjoint()).scale(0.5)).unwrap()
    }
}
