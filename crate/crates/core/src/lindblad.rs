//! Rotating-frame Hamiltonian, jump operators, effective non-Hermitian
//! Hamiltonian and the vectorized Liouvillian.
//!
//! All inputs are ordinary frequencies in MHz; every rate and coupling is
//! multiplied by 2π when an operator is assembled, so the resulting
//! operators are angular frequencies in rad/µs and times are in µs.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{
    annihilation, atomic_op, build_space, tensor_product_capped, DimensionCaps, Level, SpaceDescriptor,
    SparseOperator, C64,
};

/// MHz (ordinary frequency) to rad/µs.
pub fn angular(mhz: f64) -> f64 {
    2.0 * PI * mhz
}

/// One three-level atom. Frequencies in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomParams {
    /// |g⟩ ↔ |e⟩ transition frequency.
    pub nu_eg: f64,
    /// |e⟩ ↔ |f⟩ transition frequency.
    pub nu_fe: f64,
    /// |g⟩ ↔ |e⟩ coupling to the cavity (sign allowed).
    pub g1: f64,
    /// |e⟩ ↔ |f⟩ coupling to the cavity.
    pub g2: f64,
}

impl AtomParams {
    /// Atom with `g2 = √2·g1` (sign inherited from `g1`).
    pub fn transmon_like(nu_eg: f64, e_c: f64, g1: f64) -> Self {
        AtomParams { nu_eg, nu_fe: nu_eg - e_c, g1, g2: SQRT_2 * g1 }
    }
}

/// Physical parameters of one simulation instance. Frequencies in MHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Drive frequency ν.
    pub drive_freq: f64,
    /// Cavity frequency ν_c.
    pub cavity_freq: f64,
    pub atoms: Vec<AtomParams>,
    /// Drive amplitude η.
    pub eta: f64,
    /// Cavity field decay rate κ (half width; the FWHM is 2κ).
    pub kappa: f64,
    /// Population decay γ∥ (used for both e→g and f→e).
    pub gamma_par: f64,
    /// Dephasing γ⊥.
    pub gamma_perp: f64,
    /// Fock truncation.
    pub n_max: usize,
}

impl SystemParams {
    /// Parameters with γ⊥ = κ and γ∥ = 0.1·κ.
    pub fn with_default_dissipation(
        drive_freq: f64,
        cavity_freq: f64,
        atoms: Vec<AtomParams>,
        eta: f64,
        kappa: f64,
        n_max: usize,
    ) -> Self {
        SystemParams {
            drive_freq,
            cavity_freq,
            atoms,
            eta,
            kappa,
            gamma_par: 0.1 * kappa,
            gamma_perp: kappa,
            n_max,
        }
    }

    /// κ from a measured full width at half maximum `2κ`.
    pub fn kappa_from_fwhm(fwhm: f64) -> f64 {
        0.5 * fwhm
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Δc = ν − ν_c.
    pub fn delta_c(&self) -> f64 {
        self.drive_freq - self.cavity_freq
    }

    /// Δ1 = ν − ν_eg for atom `k`.
    pub fn delta_1(&self, k: usize) -> f64 {
        self.drive_freq - self.atoms[k].nu_eg
    }

    /// Δ2 = ν − ν_fe for atom `k`.
    pub fn delta_2(&self, k: usize) -> f64 {
        self.drive_freq - self.atoms[k].nu_fe
    }

    /// Empty-cavity steady photon number (η/κ)².
    pub fn empty_cavity_photons(&self) -> f64 {
        (self.eta / self.kappa).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.drive_freq, self.cavity_freq, self.eta, self.kappa, self.gamma_par, self.gamma_perp]
            .iter()
            .chain(self.atoms.iter().flat_map(|a| [a.nu_eg, a.nu_fe, a.g1, a.g2].into_iter()).collect::<Vec<_>>().iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("all parameters must be finite".into()));
        }
        if self.kappa <= 0.0 {
            return Err(Error::InvalidParams(format!("kappa must be positive, got {}", self.kappa)));
        }
        if self.gamma_par < 0.0 || self.gamma_perp < 0.0 {
            return Err(Error::InvalidParams(format!(
                "dissipation rates must be non-negative (gamma_par = {}, gamma_perp = {})",
                self.gamma_par, self.gamma_perp
            )));
        }
        if self.eta < 0.0 {
            return Err(Error::InvalidParams(format!("eta must be non-negative, got {}", self.eta)));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<SpaceDescriptor> {
        build_space(self.n_max, self.n_atoms())
    }

    pub fn space_with_caps(&self, caps: DimensionCaps) -> Result<SpaceDescriptor> {
        SpaceDescriptor::with_caps(self.n_max, self.n_atoms(), caps)
    }
}

fn check_space(params: &SystemParams, space: &SpaceDescriptor) -> Result<()> {
    if space.n_atoms() != params.n_atoms() {
        return Err(Error::DimensionMismatch { expected: params.n_atoms(), found: space.n_atoms() });
    }
    if space.n_max() != params.n_max {
        return Err(Error::DimensionMismatch { expected: params.n_max, found: space.n_max() });
    }
    Ok(())
}

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// H/ħ in rad/µs:
/// Σ_k [Δ1 |g⟩⟨g| − Δ2 |f⟩⟨f|] − Δc a†a + η(a + a†)
/// + Σ_k [g1 (a†|g⟩⟨e| + h.c.) + g2 (a†|e⟩⟨f| + h.c.)].
pub fn build_hamiltonian(params: &SystemParams, space: &SpaceDescriptor) -> Result<SparseOperator> {
    params.validate()?;
    check_space(params, space)?;
    let dim = space.dim();
    let a = annihilation(space);
    let ad = a.adjoint();

    let mut trip: Vec<(usize, usize, C64)> = Vec::new();
    // Diagonal part evaluated per basis state.
    let dc = angular(params.delta_c());
    for i in 0..dim {
        let mut d = -dc * space.photon_number(i) as f64;
        for k in 0..space.n_atoms() {
            match space.atom_level(i, k) {
                Level::G => d += angular(params.delta_1(k)),
                Level::F => d -= angular(params.delta_2(k)),
                Level::E => {}
            }
        }
        trip.push((i, i, real(d)));
    }
    let mut h = SparseOperator::from_triplets(dim, trip)?;

    let eta = angular(params.eta);
    if eta != 0.0 {
        h = h.add(&a, real(eta)).add(&ad, real(eta));
    }
    for (k, atom) in params.atoms.iter().enumerate() {
        if atom.g1 != 0.0 {
            let lower = ad.matmul(&atomic_op(space, k, Level::G, Level::E)?);
            h = h.add(&lower, real(angular(atom.g1))).add(&lower.adjoint(), real(angular(atom.g1)));
        }
        if atom.g2 != 0.0 {
            let lower = ad.matmul(&atomic_op(space, k, Level::E, Level::F)?);
            h = h.add(&lower, real(angular(atom.g2))).add(&lower.adjoint(), real(angular(atom.g2)));
        }
    }
    h.mark_hermitian(1e-12)
}

/// Dissipation channel attached to a jump operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    CavityLoss,
    /// |e⟩ → |g⟩ on atom k.
    DecayEg(usize),
    /// |f⟩ → |e⟩ on atom k.
    DecayFe(usize),
    /// Projector dephasing onto `level` of atom k.
    Dephasing(usize, Level),
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::CavityLoss => write!(f, "cavity"),
            Channel::DecayEg(k) => write!(f, "decay_eg[{k}]"),
            Channel::DecayFe(k) => write!(f, "decay_fe[{k}]"),
            Channel::Dephasing(k, l) => write!(f, "dephase_{}[{k}]", l.symbol()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct JumpOperator {
    pub channel: Channel,
    pub op: SparseOperator,
    pub op_dag: SparseOperator,
    /// L†L, cached for jump-probability evaluation.
    pub op_dag_op: SparseOperator,
}

/// Hamiltonian, jump operators and effective Hamiltonian of one instance.
#[derive(Debug, Clone)]
pub struct LindbladSet {
    pub space: SpaceDescriptor,
    pub hamiltonian: SparseOperator,
    pub jumps: Vec<JumpOperator>,
    /// H − (i/2) Σ_k L_k†L_k.
    pub h_eff: SparseOperator,
    h_eff_dag: SparseOperator,
}

/// Assembles the Hamiltonian and the zero-temperature jump operators:
/// `√(2κ)·a`, per atom `√(2γ∥)|g⟩⟨e|`, `√(2γ∥)|e⟩⟨f|` and `√(8γ⊥)|i⟩⟨i|`
/// for i ∈ {g, e, f}. Channels with zero rate are omitted.
pub fn build_jump_ops(params: &SystemParams, space: &SpaceDescriptor) -> Result<LindbladSet> {
    let hamiltonian = build_hamiltonian(params, space)?;
    let mut jumps = Vec::new();
    let mut push = |channel: Channel, op: SparseOperator| {
        let op_dag = op.adjoint();
        let op_dag_op = op_dag.matmul(&op);
        jumps.push(JumpOperator { channel, op, op_dag, op_dag_op });
    };
    push(Channel::CavityLoss, annihilation(space).scale_real((2.0 * angular(params.kappa)).sqrt()));
    if params.gamma_par > 0.0 {
        let amp = (2.0 * angular(params.gamma_par)).sqrt();
        for k in 0..space.n_atoms() {
            push(Channel::DecayEg(k), atomic_op(space, k, Level::G, Level::E)?.scale_real(amp));
            push(Channel::DecayFe(k), atomic_op(space, k, Level::E, Level::F)?.scale_real(amp));
        }
    }
    if params.gamma_perp > 0.0 {
        let amp = (8.0 * angular(params.gamma_perp)).sqrt();
        for k in 0..space.n_atoms() {
            for l in Level::ALL {
                push(Channel::Dephasing(k, l), atomic_op(space, k, l, l)?.scale_real(amp));
            }
        }
    }
    let mut h_eff = hamiltonian.clone();
    for j in &jumps {
        h_eff = h_eff.add(&j.op_dag_op, C64::new(0.0, -0.5));
    }
    let h_eff_dag = h_eff.adjoint();
    Ok(LindbladSet { space: space.clone(), hamiltonian, jumps, h_eff, h_eff_dag })
}

impl LindbladSet {
    pub fn from_params(params: &SystemParams) -> Result<Self> {
        build_jump_ops(params, &params.space()?)
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Σ_k L_k†L_k.
    pub fn total_decay(&self) -> SparseOperator {
        self.jumps
            .iter()
            .fold(SparseOperator::zeros(self.dim()), |acc, j| acc.add(&j.op_dag_op, C64::new(1.0, 0.0)))
    }

    /// `out = L(ρ) = −i(H_eff ρ − ρ H_eff†) + Σ_k L_k ρ L_k†`.
    pub fn apply_dense(&self, rho: &DMatrix<C64>, out: &mut DMatrix<C64>, scratch: &mut DenseScratch) {
        let d = self.dim();
        scratch.ensure(d);
        let DenseScratch { a: tmp, b: tmp2 } = scratch;
        // H_eff ρ
        self.h_eff.left_mul_dense(rho, tmp);
        self.h_eff_dag.right_mul_dense(rho, tmp2);
        let mi = C64::new(0.0, -1.0);
        for j in 0..d {
            for i in 0..d {
                out[(i, j)] = mi * (tmp[(i, j)] - tmp2[(i, j)]);
            }
        }
        for jump in &self.jumps {
            // L ρ L†
            jump.op.left_mul_dense(rho, tmp);
            jump.op_dag.right_mul_dense(tmp, tmp2);
            *out += &*tmp2;
        }
    }
}

/// Reusable dense work buffers for Liouvillian application.
#[derive(Debug, Default, Clone)]
pub struct DenseScratch {
    a: DMatrix<C64>,
    b: DMatrix<C64>,
}

impl DenseScratch {
    fn ensure(&mut self, d: usize) {
        if self.a.nrows() != d {
            self.a = DMatrix::zeros(d, d);
            self.b = DMatrix::zeros(d, d);
        }
    }
}

/// Vectorized Liouvillian acting on column-stacked `vec(ρ)`
/// (`vec(ρ)[i + j·d] = ρ_ij`).
#[derive(Debug, Clone)]
pub struct Superoperator {
    hilbert_dim: usize,
    matrix: SparseOperator,
}

/// Builds the Liouvillian `ρ → −i[H,ρ] + Σ_k (L_k ρ L_k† − ½{L_k†L_k, ρ})`
/// as a sparse `d² × d²` matrix. `d²` is bounded by the vector cap.
pub fn build_liouvillian(lset: &LindbladSet) -> Result<Superoperator> {
    let d = lset.dim();
    let cap = lset.space.caps().max_vector_dim;
    let d2 = d.saturating_mul(d);
    if d2 > cap {
        return Err(Error::DimensionCap { what: "Liouvillian", dim: d2, cap });
    }
    let id = SparseOperator::identity(d);
    let transpose = |m: &SparseOperator| {
        SparseOperator::from_triplets(m.dim(), m.triplets().map(|(r, c, v)| (c, r, v))).expect("in range")
    };
    let conj = |m: &SparseOperator| {
        SparseOperator::from_triplets(m.dim(), m.triplets().map(|(r, c, v)| (r, c, v.conj()))).expect("in range")
    };
    // vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)
    let heff = &lset.h_eff;
    let heff_dag = heff.adjoint();
    let mi = C64::new(0.0, -1.0);
    // −i H_eff ρ + i ρ H_eff†
    let mut m = tensor_product_capped(&id, heff, cap)?.scale(mi);
    m = m.add(&tensor_product_capped(&transpose(&heff_dag), &id, cap)?, C64::new(0.0, 1.0));
    for j in &lset.jumps {
        m = m.add(&tensor_product_capped(&conj(&j.op), &j.op, cap)?, C64::new(1.0, 0.0));
    }
    Ok(Superoperator { hilbert_dim: d, matrix: m })
}

impl Superoperator {
    pub fn hilbert_dim(&self) -> usize {
        self.hilbert_dim
    }

    pub fn matrix(&self) -> &SparseOperator {
        &self.matrix
    }

    /// `L(ρ)` via the vectorized representation.
    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let d = self.hilbert_dim;
        // nalgebra storage is column-major, which is exactly vec(ρ).
        let y = self.matrix.apply(rho.as_slice());
        DMatrix::from_column_slice(d, d, &y)
    }
}

/// Evaluates the generator on a density matrix.
pub trait Generator: Sync {
    fn hilbert_dim(&self) -> usize;
    fn apply_into(&self, rho: &DMatrix<C64>, out: &mut DMatrix<C64>, scratch: &mut DenseScratch);
}

impl Generator for LindbladSet {
    fn hilbert_dim(&self) -> usize {
        self.dim()
    }
    fn apply_into(&self, rho: &DMatrix<C64>, out: &mut DMatrix<C64>, scratch: &mut DenseScratch) {
        self.apply_dense(rho, out, scratch)
    }
}

impl Generator for Superoperator {
    fn hilbert_dim(&self) -> usize {
        self.hilbert_dim
    }
    fn apply_into(&self, rho: &DMatrix<C64>, out: &mut DMatrix<C64>, _scratch: &mut DenseScratch) {
        self.matrix.apply_into(rho.as_slice(), out.as_mut_slice());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{excitation_operator, number};
    use approx::assert_relative_eq;

    fn resonant(n_max: usize, atoms: Vec<AtomParams>, eta: f64) -> SystemParams {
        SystemParams {
            drive_freq: 7000.0,
            cavity_freq: 7000.0,
            atoms,
            eta,
            kappa: 0.235,
            gamma_par: 0.0235,
            gamma_perp: 0.235,
            n_max,
        }
    }

    #[test]
    fn zero_hamiltonian() {
        let p = resonant(4, vec![AtomParams { nu_eg: 7000.0, nu_fe: 7000.0, g1: 0.0, g2: 0.0 }], 0.0);
        let h = build_hamiltonian(&p, &p.space().unwrap()).unwrap();
        assert_eq!(h.nnz(), 0);
    }

    #[test]
    fn single_excitation_doublet() {
        let g1 = 55.4;
        let p = resonant(6, vec![AtomParams { nu_eg: 7000.0, nu_fe: 6641.0, g1, g2: 0.0 }], 0.0);
        let s = p.space().unwrap();
        let h = build_hamiltonian(&p, &s).unwrap();
        let basis = [s.index(1, &[Level::G]).unwrap(), s.index(0, &[Level::E]).unwrap()];
        let block = h.dense_block(&basis);
        let eig = block.symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert_relative_eq!(ev[0], -angular(g1), max_relative = 1e-12);
        assert_relative_eq!(ev[1], angular(g1), max_relative = 1e-12);
    }

    #[test]
    fn two_excitation_block_matrix_elements() {
        let (g1, g2, e_c) = (55.4, 55.4 * SQRT_2, 359.0);
        // Δ1 = Δc = 0 and ν − ν_fe = E_C, so the |f⟩ diagonal is −E_C.
        let p = resonant(6, vec![AtomParams { nu_eg: 7000.0, nu_fe: 7000.0 - e_c, g1, g2 }], 0.0);
        let s = p.space().unwrap();
        let h = build_hamiltonian(&p, &s).unwrap();
        let basis = [
            s.index(2, &[Level::G]).unwrap(),
            s.index(1, &[Level::E]).unwrap(),
            s.index(0, &[Level::F]).unwrap(),
        ];
        let block = h.dense_block(&basis);
        let want = [
            [0.0, SQRT_2 * angular(g1), 0.0],
            [SQRT_2 * angular(g1), 0.0, angular(g2)],
            [0.0, angular(g2), -angular(e_c)],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(block[(i, j)].re, want[i][j], epsilon = 1e-9);
                assert_eq!(block[(i, j)].im, 0.0);
            }
        }
    }

    #[test]
    fn channel_counts() {
        let atoms = vec![AtomParams::transmon_like(7000.0, 359.0, 55.4); 2];
        let mut p = resonant(4, atoms, 1.0);
        let l = LindbladSet::from_params(&p).unwrap();
        assert_eq!(l.jumps.len(), 1 + 2 * 2 + 3 * 2);
        p.gamma_par = 0.0;
        p.gamma_perp = 0.0;
        let l = LindbladSet::from_params(&p).unwrap();
        assert_eq!(l.jumps.len(), 1);
        assert_eq!(l.jumps[0].channel, Channel::CavityLoss);
        p.gamma_par = -1.0;
        assert!(LindbladSet::from_params(&p).is_err());
    }

    #[test]
    fn kappa_from_linewidth() {
        assert_relative_eq!(SystemParams::kappa_from_fwhm(0.47), 0.235, epsilon = 1e-15);
    }

    #[test]
    fn dephasing_operators_sum_to_scaled_identity() {
        let p = resonant(3, vec![AtomParams::transmon_like(7000.0, 359.0, 55.4)], 0.0);
        let l = LindbladSet::from_params(&p).unwrap();
        let sum = l
            .jumps
            .iter()
            .filter(|j| matches!(j.channel, Channel::Dephasing(0, _)))
            .fold(SparseOperator::zeros(l.dim()), |acc, j| acc.add(&j.op_dag_op, real(1.0)));
        let want = SparseOperator::identity(l.dim()).scale_real(8.0 * angular(p.gamma_perp));
        assert!(sum.add(&want, real(-1.0)).max_abs() < 1e-12);
    }

    #[test]
    fn undriven_hamiltonian_conserves_excitations() {
        let atoms = vec![
            AtomParams::transmon_like(7000.0, 459.0, -52.7),
            AtomParams::transmon_like(7003.0, 359.0, 55.4),
        ];
        let p = resonant(7, atoms, 0.0);
        let s = p.space().unwrap();
        let h = build_hamiltonian(&p, &s).unwrap();
        let n = excitation_operator(&s);
        let comm = h.commutator(&n);
        assert!(comm.max_abs() <= 1e-10 * h.max_abs() * n.max_abs());
    }

    #[test]
    fn superoperator_matches_direct_application() {
        let p = resonant(3, vec![AtomParams::transmon_like(7000.0, 359.0, 5.0)], 0.4);
        let l = LindbladSet::from_params(&p).unwrap();
        let sup = build_liouvillian(&l).unwrap();
        let d = l.dim();
        let rho = DMatrix::from_fn(d, d, |i, j| C64::new((i + 2 * j) as f64 * 0.01, (i as f64 - j as f64) * 0.02));
        let mut direct = DMatrix::zeros(d, d);
        l.apply_dense(&rho, &mut direct, &mut DenseScratch::default());
        let vec = sup.apply(&rho);
        assert!((direct - vec).camax() < 1e-9);
    }

    #[test]
    fn dark_ground_state_is_fixed_point() {
        let p = resonant(4, vec![AtomParams::transmon_like(7000.0, 359.0, 5.0)], 0.0);
        let l = LindbladSet::from_params(&p).unwrap();
        let d = l.dim();
        let mut rho = DMatrix::zeros(d, d);
        rho[(0, 0)] = real(1.0);
        let out = build_liouvillian(&l).unwrap().apply(&rho);
        assert!(out.camax() < 1e-12);
    }

    #[test]
    fn maximally_mixed_trace_preserved() {
        let mut p = resonant(5, vec![], 0.0);
        p.gamma_par = 0.0;
        p.gamma_perp = 0.0;
        let l = LindbladSet::from_params(&p).unwrap();
        assert_eq!(l.hamiltonian.nnz(), 0);
        let d = l.dim();
        let rho = DMatrix::from_diagonal_element(d, d, real(1.0 / d as f64));
        let out = build_liouvillian(&l).unwrap().apply(&rho);
        assert!(out.trace().norm() < 1e-12);
        // photon loss drains the diagonal
        assert!(out[(d - 1, d - 1)].re < 0.0);
        let _ = number(&l.space);
    }
}
