//! Time evolution by quantum-jump trajectories and by the dense master
//! equation, steady-state extraction and the undriven dressed spectrum.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindblad::{angular, build_hamiltonian, Channel, DenseScratch, Generator, LindbladSet, SystemParams};
use crate::ode::{Dopri5, Tolerances};
use crate::operators::{
    annihilation, excitation_operator, level_population, norm_sqr, number, Level, SpaceDescriptor, SparseOperator,
    C64,
};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Named operator whose expectation value is recorded along a run.
#[derive(Debug, Clone)]
pub struct Observable {
    pub name: String,
    pub op: SparseOperator,
}

impl Observable {
    pub fn new(name: impl Into<String>, op: SparseOperator) -> Self {
        Observable { name: name.into(), op }
    }
}

/// `a`, `n = a†a`, and the summed atomic populations `pop_e`, `pop_f`.
pub fn standard_observables(space: &SpaceDescriptor) -> Vec<Observable> {
    let mut obs = vec![Observable::new("a", annihilation(space)), Observable::new("n", number(space))];
    if space.n_atoms() > 0 {
        obs.push(Observable::new("pop_e", level_population(space, Level::E)));
        obs.push(Observable::new("pop_f", level_population(space, Level::F)));
    }
    obs
}

/// Indices of basis states in the top 20% of Fock levels.
pub fn top_band_indices(space: &SpaceDescriptor) -> Vec<usize> {
    let band = (space.n_max() as f64 * 0.2).ceil() as usize;
    let first = space.n_max() - band.max(1);
    (0..space.dim()).filter(|&i| space.photon_number(i) >= first).collect()
}

/// Truncation guard: a warning when the photon distribution reaches into
/// the top of the Fock space.
pub fn truncation_warning(mean_n: f64, var_n: f64, n_max: usize) -> Option<String> {
    let reach = mean_n + 5.0 * var_n.max(0.0).sqrt();
    (reach > 0.8 * n_max as f64).then(|| {
        format!("<n> + 5 sd = {reach:.2} exceeds 0.8 n_max = {:.1}; truncation may bias results", 0.8 * n_max as f64)
    })
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::Empty("time grid"));
    }
    if t_grid[0] < 0.0 || !t_grid.iter().all(|t| t.is_finite()) {
        return Err(Error::InvalidInput("time grid must be finite and non-negative".into()));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("time grid must be strictly increasing".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Quantum-jump trajectories

/// Settings of a single trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McwfOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Relative precision of the located jump times.
    pub jump_rtol: f64,
    /// Population allowed in the top 20% of Fock levels at any sample.
    pub truncation_threshold: f64,
    pub keep_final_state: bool,
}

impl Default for McwfOptions {
    fn default() -> Self {
        McwfOptions { rtol: 1e-8, atol: 1e-10, jump_rtol: 1e-6, truncation_threshold: 1e-3, keep_final_state: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    /// Index into `LindbladSet::jumps`.
    pub index: usize,
    pub channel: Channel,
}

/// Output of [`mcwf_evolve`]. `values[k][i]` is observable `k` at `times[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    pub values: Vec<Vec<C64>>,
    pub jumps: Vec<JumpEvent>,
    pub seed: u64,
    pub final_state: Option<Vec<C64>>,
    /// Largest top-band population seen at any sample.
    pub max_top_population: f64,
}

impl TrajectoryRecord {
    pub fn series(&self, name: &str) -> Option<&[C64]> {
        self.names.iter().position(|n| n == name).map(|k| self.values[k].as_slice())
    }

    pub fn real_series(&self, name: &str) -> Option<Vec<f64>> {
        self.series(name).map(|s| s.iter().map(|z| z.re).collect())
    }
}

/// Summary returned by [`mcwf_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    pub jumps: Vec<JumpEvent>,
    pub final_state: Vec<C64>,
    pub max_top_population: f64,
    pub steps: usize,
}

/// Core quantum-jump loop. `observer(i, t, psi)` is called at every grid time
/// with the normalized state. Between jumps the unnormalized state evolves
/// under `H_eff`; a jump fires when its squared norm falls to a uniformly
/// drawn threshold, located by bisection on the dense output.
pub fn mcwf_run<F>(
    lset: &LindbladSet,
    psi0: &[C64],
    t_grid: &[f64],
    seed: u64,
    opts: &McwfOptions,
    mut observer: F,
) -> Result<TrajectoryOutcome>
where
    F: FnMut(usize, f64, &[C64]),
{
    let d = lset.dim();
    if psi0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: psi0.len() });
    }
    check_grid(t_grid)?;
    let n0 = norm_sqr(psi0);
    if (n0 - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("initial state not normalized (norm² = {n0})")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = top_band_indices(&lset.space);
    let mut max_top: f64 = 0.0;
    let mut normalized = vec![ZERO; d];
    let mut scratch = vec![ZERO; d];

    let mut emit = |i: usize, t: f64, psi: &[C64], normalized: &mut Vec<C64>| -> Result<()> {
        let nrm = norm_sqr(psi);
        let s = 1.0 / nrm.sqrt();
        for (o, p) in normalized.iter_mut().zip(psi) {
            *o = p * s;
        }
        let pop: f64 = top.iter().map(|&k| normalized[k].norm_sqr()).sum();
        max_top = max_top.max(pop);
        if pop > opts.truncation_threshold {
            return Err(Error::TruncationBreach { time: t, population: pop, threshold: opts.truncation_threshold });
        }
        observer(i, t, normalized);
        Ok(())
    };

    let h_eff = &lset.h_eff;
    let mi = C64::new(0.0, -1.0);
    let mut rhs = |y: &[C64], dy: &mut [C64]| h_eff.apply_scaled_into(mi, y, dy);
    let tol = Tolerances { rtol: opts.rtol, atol: opts.atol, ..Default::default() };

    let t_end = *t_grid.last().unwrap();
    let mut stepper = Dopri5::new(t_grid[0], psi0, tol);
    emit(0, t_grid[0], psi0, &mut normalized)?;
    let mut next = 1;
    let mut threshold = 1.0 - rng.random::<f64>();
    let mut jumps = Vec::new();
    let mut interp = vec![ZERO; d];

    while next < t_grid.len() {
        stepper.step(&mut rhs, t_end)?;
        let end_norm = norm_sqr(stepper.y());
        if !end_norm.is_finite() {
            return Err(Error::Integration(format!("non-finite state at t = {}", stepper.t())));
        }
        if end_norm > threshold {
            while next < t_grid.len() && t_grid[next] <= stepper.t() {
                stepper.interpolate(t_grid[next], &mut interp);
                emit(next, t_grid[next], &interp, &mut normalized)?;
                next += 1;
            }
            continue;
        }

        // Jump inside [t_prev, t]: bisect on the interpolated norm.
        let (mut lo, mut hi) = (stepper.t_prev(), stepper.t());
        let span = hi - lo;
        while hi - lo > opts.jump_rtol * span.max(f64::MIN_POSITIVE) {
            let mid = 0.5 * (lo + hi);
            stepper.interpolate(mid, &mut interp);
            if norm_sqr(&interp) > threshold {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let tj = hi;
        while next < t_grid.len() && t_grid[next] <= tj {
            stepper.interpolate(t_grid[next], &mut interp);
            emit(next, t_grid[next], &interp, &mut normalized)?;
            next += 1;
        }
        stepper.interpolate(tj, &mut interp);
        let pre_norm = norm_sqr(&interp);
        if pre_norm < 1e-280 {
            return Err(Error::NormUnderflow { time: tj });
        }

        let weights: Vec<f64> = lset.jumps.iter().map(|j| j.op_dag_op.sandwich(&interp).re.max(0.0)).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Integration(format!("jump with zero total rate at t = {tj}")));
        }
        let pick = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = weights.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            acc += w;
            if pick < acc {
                chosen = k;
                break;
            }
        }
        let jump = &lset.jumps[chosen];
        jump.op.apply_into(&interp, &mut scratch);
        let s = 1.0 / norm_sqr(&scratch).sqrt();
        scratch.iter_mut().for_each(|z| *z *= s);
        jumps.push(JumpEvent { time: tj, index: chosen, channel: jump.channel });
        stepper.reset(tj, &scratch);
        threshold = 1.0 - rng.random::<f64>();
    }

    let mut final_state = stepper.y().to_vec();
    let s = 1.0 / norm_sqr(&final_state).sqrt();
    final_state.iter_mut().for_each(|z| *z *= s);
    Ok(TrajectoryOutcome { jumps, final_state, max_top_population: max_top, steps: stepper.steps() })
}

/// One quantum-jump trajectory with expectation values of `observables`
/// recorded at every grid time.
pub fn mcwf_evolve(
    lset: &LindbladSet,
    psi0: &[C64],
    t_grid: &[f64],
    observables: &[Observable],
    seed: u64,
    opts: &McwfOptions,
) -> Result<TrajectoryRecord> {
    for o in observables {
        if o.op.dim() != lset.dim() {
            return Err(Error::DimensionMismatch { expected: lset.dim(), found: o.op.dim() });
        }
    }
    let mut values = vec![vec![ZERO; t_grid.len()]; observables.len()];
    let outcome = mcwf_run(lset, psi0, t_grid, seed, opts, |i, _t, psi| {
        for (k, o) in observables.iter().enumerate() {
            values[k][i] = o.op.sandwich(psi);
        }
    })?;
    Ok(TrajectoryRecord {
        times: t_grid.to_vec(),
        names: observables.iter().map(|o| o.name.clone()).collect(),
        values,
        jumps: outcome.jumps,
        seed,
        final_state: opts.keep_final_state.then_some(outcome.final_state),
        max_top_population: outcome.max_top_population,
    })
}

/// Runs one trajectory per seed in parallel; results keep the seed order.
pub fn mcwf_ensemble(
    lset: &LindbladSet,
    psi0: &[C64],
    t_grid: &[f64],
    observables: &[Observable],
    seeds: &[u64],
    opts: &McwfOptions,
) -> Vec<Result<TrajectoryRecord>> {
    seeds.par_iter().map(|&s| mcwf_evolve(lset, psi0, t_grid, observables, s, opts)).collect()
}

/// Ensemble mean and standard error of one observable (real part) at every
/// grid time.
pub fn ensemble_stats(records: &[TrajectoryRecord], name: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = records.first().ok_or(Error::Empty("trajectory ensemble"))?;
    let m = first.times.len();
    let n = records.len() as f64;
    let mut mean = vec![0.0; m];
    let mut sq = vec![0.0; m];
    for r in records {
        let s = r.series(name).ok_or_else(|| Error::InvalidInput(format!("no observable '{name}'")))?;
        for i in 0..m {
            mean[i] += s[i].re;
            sq[i] += s[i].re * s[i].re;
        }
    }
    let mut se = vec![0.0; m];
    for i in 0..m {
        mean[i] /= n;
        let var = if n > 1.0 { (sq[i] / n - mean[i] * mean[i]).max(0.0) * n / (n - 1.0) } else { 0.0 };
        se[i] = (var / n).sqrt();
    }
    Ok((mean, se))
}

// ---------------------------------------------------------------------------
// Dense master equation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub keep_states: bool,
}

impl Default for MeOptions {
    fn default() -> Self {
        MeOptions { rtol: 1e-9, atol: 1e-11, keep_states: false }
    }
}

/// Density-matrix trajectory from [`me_evolve`].
#[derive(Debug, Clone)]
pub struct DensityTrajectory {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    pub values: Vec<Vec<C64>>,
    pub states: Vec<DMatrix<C64>>,
    pub final_state: DMatrix<C64>,
}

impl DensityTrajectory {
    pub fn series(&self, name: &str) -> Option<&[C64]> {
        self.names.iter().position(|n| n == name).map(|k| self.values[k].as_slice())
    }
}

fn check_density(rho: &DMatrix<C64>, d: usize) -> Result<()> {
    if rho.nrows() != d || rho.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, found: rho.nrows() });
    }
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
        return Err(Error::InvalidInput(format!("density matrix trace {tr} is not 1")));
    }
    let herm = (rho - rho.adjoint()).camax();
    if herm > 1e-10 {
        return Err(Error::InvalidInput(format!("density matrix not Hermitian (deviation {herm:.2e})")));
    }
    Ok(())
}

/// Integrates `ρ̇ = L(ρ)` with the adaptive stepper and records
/// `Tr(O ρ)` at every grid time.
pub fn me_evolve<G: Generator + ?Sized>(
    generator: &G,
    rho0: &DMatrix<C64>,
    t_grid: &[f64],
    observables: &[Observable],
    opts: &MeOptions,
) -> Result<DensityTrajectory> {
    let d = generator.hilbert_dim();
    check_density(rho0, d)?;
    check_grid(t_grid)?;
    let mut rho_buf = DMatrix::<C64>::zeros(d, d);
    let mut out_buf = DMatrix::<C64>::zeros(d, d);
    let mut scratch = DenseScratch::default();
    let mut rhs = |y: &[C64], dy: &mut [C64]| {
        rho_buf.as_mut_slice().copy_from_slice(y);
        generator.apply_into(&rho_buf, &mut out_buf, &mut scratch);
        dy.copy_from_slice(out_buf.as_slice());
    };
    let tol = Tolerances { rtol: opts.rtol, atol: opts.atol, ..Default::default() };
    let mut stepper = Dopri5::new(t_grid[0], rho0.as_slice(), tol);
    let t_end = *t_grid.last().unwrap();

    let mut values = vec![Vec::with_capacity(t_grid.len()); observables.len()];
    let mut states = Vec::new();
    let mut record = |rho: &DMatrix<C64>| {
        for (k, o) in observables.iter().enumerate() {
            values[k].push(o.op.expectation_dm(rho));
        }
        if opts.keep_states {
            states.push(rho.clone());
        }
    };
    record(rho0);
    let mut next = 1;
    let mut interp = vec![ZERO; d * d];
    while next < t_grid.len() {
        stepper.step(&mut rhs, t_end)?;
        while next < t_grid.len() && t_grid[next] <= stepper.t() {
            stepper.interpolate(t_grid[next], &mut interp);
            record(&DMatrix::from_column_slice(d, d, &interp));
            next += 1;
        }
    }
    let final_state = DMatrix::from_column_slice(d, d, stepper.y());
    let tr = final_state.trace();
    if (tr.re - 1.0).abs() > 1e-8 {
        return Err(Error::Integration(format!("trace drifted to {tr}")));
    }
    Ok(DensityTrajectory {
        times: t_grid.to_vec(),
        names: observables.iter().map(|o| o.name.clone()).collect(),
        values,
        states,
        final_state,
    })
}

/// `|ψ⟩⟨ψ|`.
pub fn pure_density(psi: &[C64]) -> DMatrix<C64> {
    let v = nalgebra::DVector::from_column_slice(psi);
    &v * v.adjoint()
}

/// Trace norm of a Hermitian matrix.
pub fn trace_norm(m: &DMatrix<C64>) -> f64 {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    h.symmetric_eigenvalues().iter().map(|x| x.abs()).sum()
}

/// Trace distance `½‖ρ − σ‖₁`.
pub fn trace_distance(rho: &DMatrix<C64>, sigma: &DMatrix<C64>) -> f64 {
    0.5 * trace_norm(&(rho - sigma))
}

// ---------------------------------------------------------------------------
// Steady state

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyMethod {
    /// Long-time integration until the residual is small.
    Evolve,
    /// Dense null-space solve with the trace constraint.
    Direct,
    /// Both, cross-checked in trace distance.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyOptions {
    pub method: SteadyMethod,
    /// Convergence when `‖L ρ‖₁ < tol_factor · κ` (angular).
    pub tol_factor: f64,
    /// Integration chunk between residual checks, in units of 1/κ.
    pub chunk_kappa: f64,
    /// Give up after this time, in units of 1/κ.
    pub max_time_kappa: f64,
    /// Largest allowed trace distance between the two methods.
    pub agreement: f64,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        SteadyOptions { method: SteadyMethod::Evolve, tol_factor: 1e-8, chunk_kappa: 5.0, max_time_kappa: 5000.0, agreement: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub rho: DMatrix<C64>,
    pub method: SteadyMethod,
    /// `‖L ρ‖₁` in rad/µs.
    pub residual: f64,
    /// Integration time used by the evolve path (µs).
    pub time: Option<f64>,
    /// Trace distance between the two methods when both ran.
    pub disagreement: Option<f64>,
}

fn residual(lset: &LindbladSet, rho: &DMatrix<C64>) -> f64 {
    let d = lset.dim();
    let mut out = DMatrix::zeros(d, d);
    lset.apply_dense(rho, &mut out, &mut DenseScratch::default());
    trace_norm(&out)
}

fn steady_evolve(lset: &LindbladSet, kappa: f64, opts: &SteadyOptions) -> Result<(DMatrix<C64>, f64, f64)> {
    let tol = opts.tol_factor * kappa;
    let mut rho = pure_density(&lset.space.ground_state());
    let chunk = opts.chunk_kappa / kappa;
    let me = MeOptions { rtol: 1e-10, atol: 1e-13, keep_states: false };
    let mut t = 0.0;
    loop {
        let res = residual(lset, &rho);
        if res < tol {
            return Ok((rho, res, t));
        }
        if t >= opts.max_time_kappa / kappa {
            return Err(Error::NonConvergence(format!(
                "steady state residual {res:.3e} above {tol:.3e} after t = {t:.3} us"
            )));
        }
        let traj = me_evolve(lset, &rho, &[0.0, chunk], &[], &me)?;
        rho = traj.final_state;
        // Remove the accumulated trace and Hermiticity drift.
        rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
        let tr = rho.trace();
        rho /= tr;
        t += chunk;
    }
}

fn steady_direct(lset: &LindbladSet) -> Result<DMatrix<C64>> {
    let d = lset.dim();
    let n = d * d;
    let cap = lset.space.caps().max_dense_dim;
    if n > cap {
        return Err(Error::DimensionCap { what: "dense Liouvillian", dim: n, cap });
    }
    let sup = crate::lindblad::build_liouvillian(lset)?;
    let mut m = sup.matrix().to_dense();
    // Replace the first row by the trace functional.
    let mut rhs = nalgebra::DVector::<C64>::zeros(n);
    for c in 0..n {
        m[(0, c)] = ZERO;
    }
    for i in 0..d {
        m[(0, i + i * d)] = C64::new(1.0, 0.0);
    }
    rhs[0] = C64::new(1.0, 0.0);
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonConvergence("singular Liouvillian system (steady state not unique)".into()))?;
    let rho = DMatrix::from_column_slice(d, d, sol.as_slice());
    Ok((&rho + rho.adjoint()) * C64::new(0.5, 0.0))
}

/// Steady state of the master equation.
pub fn steady_state(lset: &LindbladSet, kappa_mhz: f64, opts: &SteadyOptions) -> Result<SteadyState> {
    let kappa = angular(kappa_mhz);
    if kappa <= 0.0 {
        return Err(Error::InvalidParams("kappa must be positive".into()));
    }
    match opts.method {
        SteadyMethod::Evolve => {
            let (rho, res, t) = steady_evolve(lset, kappa, opts)?;
            Ok(SteadyState { rho, method: opts.method, residual: res, time: Some(t), disagreement: None })
        }
        SteadyMethod::Direct => {
            let rho = steady_direct(lset)?;
            let res = residual(lset, &rho);
            Ok(SteadyState { rho, method: opts.method, residual: res, time: None, disagreement: None })
        }
        SteadyMethod::Both => {
            let (rho, res, t) = steady_evolve(lset, kappa, opts)?;
            let direct = steady_direct(lset)?;
            let dist = trace_distance(&rho, &direct);
            if dist > opts.agreement {
                return Err(Error::NonConvergence(format!(
                    "steady-state methods disagree: trace distance {dist:.3e}"
                )));
            }
            Ok(SteadyState { rho, method: opts.method, residual: res, time: Some(t), disagreement: Some(dist) })
        }
    }
}

// ---------------------------------------------------------------------------
// Dressed spectrum

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Frame rotating at the drive frequency.
    Rotating,
    /// Lab frame: rotating-frame energy plus `n · ν`.
    Lab,
}

/// One eigenstate of the undriven Hamiltonian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DressedLevel {
    /// Excitation manifold `n`.
    pub manifold: usize,
    pub label: String,
    /// Eigenvalue in MHz.
    pub energy: f64,
    pub frame: Frame,
    /// Basis label of the largest component and its weight.
    pub dominant: String,
    pub dominant_weight: f64,
    /// `⟨N_exc⟩` of the eigenvector.
    pub n_exc: f64,
    /// Summed f population of the eigenvector.
    pub f_population: f64,
    /// True for the f-dominant member of the manifold (the quasi-harmonic ladder).
    pub ladder: bool,
    /// Ladder mismatch `E(n+1) − E(n) − ν` in MHz, set on ladder levels.
    pub delta: Option<f64>,
    /// Normalized eigenvector in the full basis.
    #[serde(skip)]
    pub state: Vec<C64>,
}

fn manifold_labels(size: usize) -> Vec<String> {
    match size {
        1 => vec!["0".into()],
        2 => vec!["-".into(), "+".into()],
        3 => vec!["-".into(), "0".into(), "+".into()],
        _ => {
            let mut v = vec!["-".to_string()];
            v.extend((1..size - 1).map(|k| format!("0/{k}")));
            v.push("+".into());
            v
        }
    }
}

/// Eigenstates of the undriven, dissipation-free Hamiltonian for manifolds
/// `0..=max_manifold`, which must be complete within the truncation
/// (`max_manifold < n_max`). Levels are sorted by manifold, then energy.
pub fn eigenspectrum(
    params: &SystemParams,
    space: &SpaceDescriptor,
    max_manifold: usize,
    frame: Frame,
) -> Result<Vec<DressedLevel>> {
    if max_manifold >= space.n_max() {
        return Err(Error::InvalidInput(format!(
            "manifold {max_manifold} is not complete for n_max = {}",
            space.n_max()
        )));
    }
    let mut undriven = params.clone();
    undriven.eta = 0.0;
    let h = build_hamiltonian(&undriven, space)?;
    let f_pop = level_population(space, Level::F);
    let n_exc = excitation_operator(space);
    let cap = space.caps().max_dense_dim;
    let two_pi = 2.0 * PI;

    let rot_energy = |l: &DressedLevel| match frame {
        Frame::Rotating => l.energy,
        Frame::Lab => l.energy - l.manifold as f64 * params.drive_freq,
    };
    let mut levels = Vec::new();
    let mut ladder_energy: Vec<Option<f64>> = Vec::new();
    for m in 0..=max_manifold {
        let basis: Vec<usize> = (0..space.dim()).filter(|&i| space.excitation_number(i) == m).collect();
        if basis.len() > cap {
            return Err(Error::DimensionCap { what: "manifold block", dim: basis.len(), cap });
        }
        let block = h.dense_block(&basis);
        let eig = block.symmetric_eigen();
        let mut order: Vec<usize> = (0..basis.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let labels = manifold_labels(basis.len());
        let start = levels.len();
        for (rank, &k) in order.iter().enumerate() {
            let v = eig.eigenvectors.column(k);
            let mut full = vec![ZERO; space.dim()];
            for (j, &b) in basis.iter().enumerate() {
                full[b] = v[j];
            }
            let (dom_j, dom_w) = v
                .iter()
                .enumerate()
                .map(|(j, z)| (j, z.norm_sqr()))
                .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            let rot = eig.eigenvalues[k] / two_pi;
            let energy = match frame {
                Frame::Rotating => rot,
                Frame::Lab => rot + m as f64 * params.drive_freq,
            };
            levels.push(DressedLevel {
                manifold: m,
                label: labels[rank].clone(),
                energy,
                frame,
                dominant: space.label(basis[dom_j]),
                dominant_weight: dom_w,
                n_exc: n_exc.sandwich(&full).re,
                f_population: f_pop.sandwich(&full).re,
                ladder: false,
                delta: None,
                state: full,
            });
        }
        // Ladder member: largest f population; the single level when atoms are absent.
        let ladder = if space.n_atoms() == 0 {
            Some(start)
        } else {
            (start..levels.len())
                .filter(|&i| levels[i].f_population > 1e-12)
                .max_by(|&a, &b| levels[a].f_population.total_cmp(&levels[b].f_population))
        };
        ladder_energy.push(ladder.map(|i| {
            levels[i].ladder = true;
            rot_energy(&levels[i])
        }));
    }
    for m in 0..max_manifold {
        if let (Some(e0), Some(e1)) = (ladder_energy[m], ladder_energy[m + 1]) {
            if let Some(l) = levels.iter_mut().find(|l| l.manifold == m && l.ladder) {
                l.delta = Some(e1 - e0);
            }
        }
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{build_jump_ops, AtomParams};
    use crate::operators::build_space;

    fn cavity_params(eta: f64, kappa: f64, n_max: usize) -> SystemParams {
        SystemParams {
            drive_freq: 7000.0,
            cavity_freq: 7000.0,
            atoms: vec![],
            eta,
            kappa,
            gamma_par: 0.0,
            gamma_perp: 0.0,
            n_max,
        }
    }

    #[test]
    fn dark_state_never_jumps() {
        let mut p = cavity_params(0.0, 1.0, 4);
        p.atoms.push(AtomParams::transmon_like(7000.0, 300.0, 40.0));
        p.gamma_par = 0.1;
        p.gamma_perp = 1.0;
        let lset = LindbladSet::from_params(&p).unwrap();
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let obs = standard_observables(&lset.space);
        let rec = mcwf_evolve(&lset, &lset.space.ground_state(), &grid, &obs, 7, &McwfOptions::default()).unwrap();
        // Dephasing of |g⟩ does fire but leaves the state unchanged.
        assert!(rec.jumps.iter().all(|j| matches!(j.channel, Channel::Dephasing(0, Level::G))));
        for s in rec.series("n").unwrap() {
            assert!(s.norm() < 1e-14);
        }
    }

    #[test]
    fn seed_determinism() {
        let p = cavity_params(1.0, 1.0, 8);
        let lset = LindbladSet::from_params(&p).unwrap();
        let grid: Vec<f64> = (0..40).map(|i| i as f64 * 0.05).collect();
        let obs = standard_observables(&lset.space);
        let psi = lset.space.basis_state(3, &[]).unwrap();
        let a = mcwf_evolve(&lset, &psi, &grid, &obs, 11, &McwfOptions::default()).unwrap();
        let b = mcwf_evolve(&lset, &psi, &grid, &obs, 11, &McwfOptions::default()).unwrap();
        assert_eq!(a, b);
        let c = mcwf_evolve(&lset, &psi, &grid, &obs, 12, &McwfOptions::default()).unwrap();
        assert_ne!(a.jumps, c.jumps);
    }

    #[test]
    fn driven_cavity_field_matches_linear_solution() {
        let (eta, kappa) = (0.5, 1.0);
        let p = cavity_params(eta, kappa, 12);
        let lset = build_jump_ops(&p, &p.space().unwrap()).unwrap();
        let rho0 = pure_density(&lset.space.ground_state());
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.05).collect();
        let obs = standard_observables(&lset.space);
        let tr = me_evolve(&lset, &rho0, &grid, &obs, &MeOptions::default()).unwrap();
        let (ea, ka) = (angular(eta), angular(kappa));
        for (t, a) in grid.iter().zip(tr.series("a").unwrap()) {
            let exact = C64::new(0.0, -(ea / ka) * (1.0 - (-ka * t).exp()));
            assert!((a - exact).norm() < 1e-6, "t={t}: {a} vs {exact}");
        }
    }

    #[test]
    fn steady_methods_agree_on_small_instance() {
        let mut p = cavity_params(0.3, 1.0, 5);
        p.atoms.push(AtomParams::transmon_like(7000.0, 30.0, 5.0));
        p.gamma_par = 0.1;
        p.gamma_perp = 1.0;
        let lset = LindbladSet::from_params(&p).unwrap();
        let ss = steady_state(&lset, 1.0, &SteadyOptions { method: SteadyMethod::Both, ..Default::default() }).unwrap();
        assert!(ss.disagreement.unwrap() < 1e-6);
        assert!(ss.residual < 1e-7 * angular(1.0));
    }

    #[test]
    fn zero_atom_spectrum_is_harmonic() {
        let p = cavity_params(0.0, 1.0, 6);
        let space = build_space(6, 0).unwrap();
        let levels = eigenspectrum(&p, &space, 5, Frame::Rotating).unwrap();
        assert_eq!(levels.len(), 6);
        for l in &levels[..5] {
            assert_eq!(l.delta, Some(0.0));
        }
    }

    #[test]
    fn truncation_guard() {
        assert!(truncation_warning(30.0, 30.0, 80).is_none());
        assert!(truncation_warning(60.0, 30.0, 80).is_some());
    }
}
