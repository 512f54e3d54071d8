//! Randomized structural checks, one function per invariant. Each runs a
//! deterministic proptest runner and returns the failure text, so the same
//! checks serve the property tests and the acceptance summary.

#![allow(dead_code)]

use blockade_core::analysis::{
    add_amplifier_noise, husimi_q, intensity_histogram, partial_trace_cavity, telegraph_stats, GridSpec, Sampling,
};
use blockade_core::lindblad::{angular, build_liouvillian, AtomParams, Channel, DenseScratch, LindbladSet, SystemParams};
use blockade_core::ode::{Dopri5, Tolerances};
use blockade_core::operators::{
    annihilation, atomic_op, build_space, creation, excitation_operator, tensor_product, Level, SparseOperator, C64,
};
use blockade_core::solvers::{
    eigenspectrum, mcwf_evolve, me_evolve, pure_density, standard_observables, steady_state, trace_norm,
    truncation_warning, Frame, McwfOptions, MeOptions, SteadyMethod, SteadyOptions, TrajectoryRecord,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub const CASES: u32 = 100;

type Check = Result<(), TestCaseError>;

fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Check) -> Result<(), String> {
    let config = Config { cases: CASES, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

// ---------------------------------------------------------------------------
// strategies

fn space_dims() -> impl Strategy<Value = (usize, usize)> {
    (2usize..=6, 0usize..=2)
}

fn atom() -> impl Strategy<Value = AtomParams> {
    (-30.0..30.0f64, -300.0..-50.0f64, -20.0..20.0f64, -30.0..30.0f64).prop_map(|(d1, ec, g1, g2)| AtomParams {
        nu_eg: 7000.0 + d1,
        nu_fe: 7000.0 + d1 + ec,
        g1,
        g2,
    })
}

/// Small driven, dissipative instance. `strong` bounds couplings so that
/// dense master-equation runs stay cheap.
fn params(max_nmax: usize, max_atoms: usize, strong: bool) -> impl Strategy<Value = SystemParams> {
    let scale = if strong { 1.0 } else { 0.1 };
    (
        2usize..=max_nmax,
        proptest::collection::vec(atom(), 0..=max_atoms),
        -5.0..5.0f64,
        0.0..3.0f64,
        0.1..2.0f64,
        0.0..0.5f64,
        0.0..1.0f64,
    )
        .prop_map(move |(n_max, atoms, dd, eta, kappa, gpar, gperp)| {
            let atoms = atoms
                .into_iter()
                .map(|a| AtomParams {
                    nu_eg: 7000.0 + (a.nu_eg - 7000.0) * scale,
                    nu_fe: 7000.0 + (a.nu_fe - 7000.0) * scale,
                    g1: a.g1 * scale,
                    g2: a.g2 * scale,
                })
                .collect();
            SystemParams {
                drive_freq: 7000.0 + dd * scale,
                cavity_freq: 7000.0,
                atoms,
                eta: eta * scale.sqrt(),
                kappa,
                gamma_par: gpar,
                gamma_perp: gperp,
                n_max,
            }
        })
}

fn hermitian(d: usize) -> impl Strategy<Value = DMatrix<C64>> {
    proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), d * d).prop_map(move |v| {
        let m = DMatrix::from_iterator(d, d, v.into_iter().map(|(a, b)| c(a, b)));
        (&m + m.adjoint()) * c(0.5, 0.0)
    })
}

/// Random density matrix `G G† / Tr`.
fn density(d: usize) -> impl Strategy<Value = DMatrix<C64>> {
    proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), d * d).prop_map(move |v| {
        let g = DMatrix::from_iterator(d, d, v.into_iter().map(|(a, b)| c(a, b)));
        let r = &g * g.adjoint();
        let tr = r.trace();
        r / tr
    })
}

fn with_density(max_nmax: usize, max_atoms: usize) -> impl Strategy<Value = (SystemParams, DMatrix<C64>)> {
    params(max_nmax, max_atoms, true).prop_flat_map(|p| {
        let d = p.n_max * 3usize.pow(p.atoms.len() as u32);
        (Just(p), density(d))
    })
}

fn integer_sparse(max_dim: usize) -> impl Strategy<Value = SparseOperator> {
    (1usize..=max_dim).prop_flat_map(|d| {
        proptest::collection::vec((0..d, 0..d, -3i32..=3, -3i32..=3), 0..=2 * d).prop_map(move |t| {
            SparseOperator::from_triplets(d, t.into_iter().map(|(r, k, a, b)| (r, k, c(a as f64, b as f64)))).unwrap()
        })
    })
}

fn dense_max(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// operators

pub fn ladder_adjoint() -> Result<(), String> {
    run(space_dims(), |(n, k)| {
        let s = build_space(n, k).unwrap();
        let a = annihilation(&s).to_dense();
        let ad = creation(&s).to_dense();
        ensure(ad == a.adjoint(), || format!("a† is not the adjoint of a (n_max {n}, {k} atoms)"))
    })
}

pub fn canonical_commutator() -> Result<(), String> {
    run(space_dims(), |(n, k)| {
        let s = build_space(n, k).unwrap();
        let a = annihilation(&s);
        let comm = a.matmul(&creation(&s)).add(&creation(&s).matmul(&a), c(-1.0, 0.0)).to_dense();
        for i in 0..s.dim() {
            for j in 0..s.dim() {
                if s.photon_number(i) + 1 < n && s.photon_number(j) + 1 < n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    ensure((comm[(i, j)] - c(want, 0.0)).norm() <= 1e-12, || format!("[a,a†]({i},{j}) = {}", comm[(i, j)]))?;
                }
            }
        }
        Ok(())
    })
}

pub fn projectors_complete() -> Result<(), String> {
    run((2usize..=4, 1usize..=3), |(n, k)| {
        let s = build_space(n, k).unwrap();
        for atom in 0..k {
            let mut sum = SparseOperator::zeros(s.dim());
            for l in [Level::G, Level::E, Level::F] {
                sum = sum.add(&atomic_op(&s, atom, l, l).unwrap(), c(1.0, 0.0));
            }
            ensure(sum.to_dense() == DMatrix::identity(s.dim(), s.dim()), || format!("projectors of atom {atom} do not sum to I"))?;
        }
        Ok(())
    })
}

pub fn tensor_associative() -> Result<(), String> {
    run((integer_sparse(3), integer_sparse(3), integer_sparse(3)), |(a, b, cc)| {
        let left = tensor_product(&tensor_product(&a, &b).unwrap(), &cc).unwrap();
        let right = tensor_product(&a, &tensor_product(&b, &cc).unwrap()).unwrap();
        ensure(left.to_dense() == right.to_dense(), || "(A⊗B)⊗C differs from A⊗(B⊗C)".into())
    })
}

pub fn index_round_trip() -> Result<(), String> {
    run((2usize..=8, 0usize..=4), |(n, k)| {
        let s = build_space(n, k).unwrap();
        for i in 0..s.dim() {
            let (m, levels) = s.decompose(i).unwrap();
            ensure(s.index(m, &levels).unwrap() == i, || format!("index {i} does not round-trip"))?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// lindblad

pub fn hamiltonian_hermitian() -> Result<(), String> {
    run(params(8, 3, true), |p| {
        let l = LindbladSet::from_params(&p).unwrap();
        let h = &l.hamiltonian;
        ensure(h.hermiticity_deviation() <= 1e-12 * h.max_abs().max(1.0), || {
            format!("H − H† = {:e}", h.hermiticity_deviation())
        })
    })
}

pub fn excitation_conserved() -> Result<(), String> {
    run(params(8, 3, true), |mut p| {
        p.eta = 0.0;
        let l = LindbladSet::from_params(&p).unwrap();
        let n = excitation_operator(&l.space);
        let comm = l.hamiltonian.commutator(&n);
        let bound = 1e-10 * l.hamiltonian.max_abs().max(1.0) * n.max_abs().max(1.0);
        ensure(comm.max_abs() <= bound, || format!("[H, N_exc] = {:e}", comm.max_abs()))
    })
}

/// The three projector jumps of one atom sum to `8γ⊥ (Σ_i P_i ρ P_i − ρ)`.
pub fn dephasing_projector_form() -> Result<(), String> {
    run(with_density(4, 2), |(p, rho)| {
        let l = LindbladSet::from_params(&p).unwrap();
        let d = l.dim();
        for k in 0..p.atoms.len() {
            let mut lhs = DMatrix::<C64>::zeros(d, d);
            for j in l.jumps.iter().filter(|j| matches!(j.channel, Channel::Dephasing(a, _) if a == k)) {
                let op = j.op.to_dense();
                let ldl = j.op_dag_op.to_dense();
                lhs += &op * &rho * op.adjoint() - (&ldl * &rho + &rho * &ldl) * c(0.5, 0.0);
            }
            let mut rhs = -rho.clone();
            for lv in [Level::G, Level::E, Level::F] {
                let proj = atomic_op(&l.space, k, lv, lv).unwrap().to_dense();
                rhs += &proj * &rho * &proj;
            }
            rhs *= c(8.0 * angular(p.gamma_perp), 0.0);
            if p.gamma_perp == 0.0 {
                continue;
            }
            let err = dense_max(&(lhs - &rhs));
            ensure(err <= 1e-10 * dense_max(&rhs).max(1.0), || format!("dephasing forms differ by {err:e}"))?;
        }
        Ok(())
    })
}

pub fn liouvillian_traceless_hermitian() -> Result<(), String> {
    let strategy = params(5, 2, true).prop_flat_map(|p| {
        let d = p.n_max * 3usize.pow(p.atoms.len() as u32);
        (Just(p), hermitian(d))
    });
    run(strategy, |(p, rho)| {
        let l = LindbladSet::from_params(&p).unwrap();
        let d = l.dim();
        let mut out = DMatrix::zeros(d, d);
        l.apply_dense(&rho, &mut out, &mut DenseScratch::default());
        let scale = dense_max(&out).max(1.0);
        let tr = out.trace().norm();
        let herm = dense_max(&(&out - out.adjoint()));
        ensure(tr <= 1e-12 * scale * d as f64, || format!("Tr L(ρ) = {tr:e}"))?;
        ensure(herm <= 1e-12 * scale, || format!("L(ρ) − L(ρ)† = {herm:e}"))?;
        if d * d <= 1600 {
            let sup = build_liouvillian(&l).unwrap();
            let diff = dense_max(&(sup.apply(&rho) - &out));
            ensure(diff <= 1e-10 * scale, || format!("superoperator and direct action differ by {diff:e}"))?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// solvers

/// Between jumps the state follows `−i H_eff`; its squared norm never grows.
pub fn norm_non_increasing() -> Result<(), String> {
    let strategy = params(5, 2, false).prop_flat_map(|p| {
        let d = p.n_max * 3usize.pow(p.atoms.len() as u32);
        (Just(p), proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), d))
    });
    run(strategy, |(p, v)| {
        let l = LindbladSet::from_params(&p).unwrap();
        let psi: Vec<C64> = v.into_iter().map(|(a, b)| c(a, b)).collect();
        let mi = c(0.0, -1.0);
        let mut rhs = |y: &[C64], dy: &mut [C64]| l.h_eff.apply_scaled_into(mi, y, dy);
        let mut ode = Dopri5::new(0.0, &psi, Tolerances { rtol: 1e-10, atol: 1e-12, ..Default::default() });
        let t_end = 1.0 / angular(p.kappa);
        let mut last = psi.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let floor = 1e-12 * last;
        for i in 1..=20 {
            let t = t_end * i as f64 / 20.0;
            while ode.t() < t {
                ode.step(&mut rhs, t).map_err(|e| TestCaseError::fail(e.to_string()))?;
            }
            let now = ode.y().iter().map(|z| z.norm_sqr()).sum::<f64>();
            ensure(now <= last * (1.0 + 1e-9) + floor, || format!("norm grew from {last} to {now} at t = {t}"))?;
            last = now;
        }
        Ok(())
    })
}

pub fn me_hermitian_positive() -> Result<(), String> {
    run(params(3, 1, false), |p| {
        let l = LindbladSet::from_params(&p).unwrap();
        let rho0 = pure_density(&l.space.ground_state());
        let t_end = 0.5 / angular(p.kappa);
        let grid: Vec<f64> = (0..=10).map(|i| t_end * i as f64 / 10.0).collect();
        let opts = MeOptions { keep_states: true, ..Default::default() };
        let tr = me_evolve(&l, &rho0, &grid, &[], &opts).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for (t, rho) in grid.iter().zip(&tr.states) {
            let herm = dense_max(&(rho - rho.adjoint()));
            ensure(herm <= 1e-10, || format!("ρ − ρ† = {herm:e} at t = {t}"))?;
            let min = rho.clone().symmetric_eigen().eigenvalues.min();
            ensure(min >= -1e-8, || format!("eigenvalue {min:e} at t = {t}"))?;
        }
        Ok(())
    })
}

pub fn steady_fixed_point() -> Result<(), String> {
    run(params(5, 1, true), |p| {
        let l = LindbladSet::from_params(&p).unwrap();
        let opts = SteadyOptions { method: SteadyMethod::Direct, ..Default::default() };
        let ss = steady_state(&l, p.kappa, &opts).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let d = l.dim();
        let mut out = DMatrix::zeros(d, d);
        l.apply_dense(&ss.rho, &mut out, &mut DenseScratch::default());
        let res = trace_norm(&out);
        let tol = opts.tol_factor * angular(p.kappa);
        ensure(res <= 10.0 * tol, || format!("‖L ρ_ss‖₁ = {res:e} > {:e}", 10.0 * tol))
    })
}

pub fn eigenvectors_orthonormal() -> Result<(), String> {
    run(params(6, 3, true), |p| {
        let s = p.space().unwrap();
        let levels = eigenspectrum(&p, &s, (p.n_max - 1).min(3), Frame::Rotating).unwrap();
        for (i, a) in levels.iter().enumerate() {
            ensure(a.energy.is_finite(), || "non-finite eigenvalue".into())?;
            for b in &levels[i..] {
                let dot: C64 = a.state.iter().zip(&b.state).map(|(x, y)| x.conj() * y).sum();
                let want = if std::ptr::eq(a, b) { 1.0 } else { 0.0 };
                ensure((dot - c(want, 0.0)).norm() <= 1e-10, || format!("⟨{}|{}⟩ = {dot}", a.label, b.label))?;
            }
        }
        Ok(())
    })
}

pub fn truncation_guard() -> Result<(), String> {
    run((0.0..100.0f64, 0.0..400.0f64, 2usize..200), |(mean, var, n_max)| {
        let fires = mean + 5.0 * var.sqrt() > 0.8 * n_max as f64;
        ensure(truncation_warning(mean, var, n_max).is_some() == fires, || {
            format!("guard wrong for mean {mean}, var {var}, n_max {n_max}")
        })
    })
}

pub fn seed_determinism() -> Result<(), String> {
    run((params(4, 1, false), any::<u64>()), |(p, seed)| {
        let l = LindbladSet::from_params(&p).unwrap();
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5 / angular(p.kappa)).collect();
        let obs = standard_observables(&l.space);
        let psi = l.space.ground_state();
        let o = McwfOptions { truncation_threshold: 1.0, ..Default::default() };
        let a = mcwf_evolve(&l, &psi, &grid, &obs, seed, &o).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let b = mcwf_evolve(&l, &psi, &grid, &obs, seed, &o).map_err(|e| TestCaseError::fail(e.to_string()))?;
        ensure(a == b, || "records differ for the same seed".into())
    })
}

// ---------------------------------------------------------------------------
// analysis

fn coherent_rho(beta: C64, n: usize) -> DMatrix<C64> {
    let mut v = vec![c(0.0, 0.0); n];
    let mut amp = c((-0.5 * beta.norm_sqr()).exp(), 0.0);
    for (k, slot) in v.iter_mut().enumerate() {
        *slot = amp;
        amp = amp * beta / ((k + 1) as f64).sqrt();
    }
    let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= norm);
    pure_density(&v)
}

pub fn q_nonnegative_normalized() -> Result<(), String> {
    let coherent = (-1.5..1.5f64, -1.5..1.5f64).prop_map(|(x, p)| coherent_rho(c(x, p), 25));
    let mixed = (1usize..=4).prop_flat_map(density);
    run(prop_oneof![coherent, mixed], |rho| {
        let q = husimi_q(&rho, &GridSpec::square(7.0, 141)).map_err(|e| TestCaseError::fail(e.to_string()))?;
        ensure(q.warnings.iter().all(|w| !w.contains("negative")), || format!("{:?}", q.warnings))?;
        ensure(q.values.iter().all(|v| v.is_finite() && *v >= 0.0), || "Q has negative or non-finite entries".into())?;
        ensure((0.98..=1.0 + 1e-9).contains(&q.mass), || format!("grid mass {}", q.mass))
    })
}

pub fn amplifier_preserves_mass() -> Result<(), String> {
    run((-1.0..1.0f64, -1.0..1.0f64, 0.0..30.0f64), |(x, p, n_add)| {
        let q = husimi_q(&coherent_rho(c(x, p), 20), &GridSpec::square(6.0, 61)).unwrap();
        let out = add_amplifier_noise(&q, n_add).unwrap();
        ensure((out.mass - q.mass).abs() <= 1e-6, || format!("mass {} → {}", q.mass, out.mass))?;
        let wide = 6.0 * (0.5 * n_add).sqrt() > 12.0;
        ensure(!wide || !out.warnings.is_empty(), || "boundary loss not reported".into())
    })
}

pub fn telegraph_reconstructs() -> Result<(), String> {
    // Every run outlasts the debounce window, including the final one.
    let strategy = (1usize..=4).prop_flat_map(|debounce| {
        (proptest::collection::vec(debounce + 1..40, 2..30), any::<bool>(), Just(debounce))
    });
    run(strategy, |(runs, first_bright, debounce)| {
        let dt = 0.01;
        let mut values = Vec::new();
        let mut bright = first_bright;
        for r in &runs {
            values.extend(std::iter::repeat_n(if bright { 10.0 } else { 0.5 }, *r));
            bright = !bright;
        }
        let times: Vec<f64> = (0..values.len()).map(|i| i as f64 * dt).collect();
        let min_dwell = debounce as f64 * dt;
        if (values.len() - 1) as f64 * dt < 10.0 * min_dwell {
            return Ok(());
        }
        let stats = telegraph_stats(&times, &values, 5.0, min_dwell).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let raw: Vec<bool> = values.iter().map(|&v| v > 5.0).collect();
        ensure(stats.classify(&times) == raw, || "segments do not reproduce the classification".into())?;
        ensure(stats.switches == runs.len() - 1, || format!("{} switches for {} runs", stats.switches, runs.len()))
    })
}

pub fn partial_trace_keeps_trace() -> Result<(), String> {
    let strategy = (2usize..=5, 0usize..=2).prop_flat_map(|(n, k)| {
        let d = n * 3usize.pow(k as u32);
        (Just((n, k)), proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), d * d))
    });
    run(strategy, |((n, k), v)| {
        let s = build_space(n, k).unwrap();
        let d = s.dim();
        let rho = DMatrix::from_iterator(d, d, v.into_iter().map(|(a, b)| c(a, b)));
        let red = partial_trace_cavity(&rho, &s).unwrap();
        let diff = (red.trace() - rho.trace()).norm();
        ensure(diff <= 1e-12 * (d as f64), || format!("traces differ by {diff:e}"))
    })
}

pub fn histogram_counts_every_sample() -> Result<(), String> {
    let strategy = (
        proptest::collection::vec(proptest::collection::vec(-5.0..45.0f64, 5..50), 1..5),
        1usize..2000,
        any::<u64>(),
    );
    run(strategy, |(series, samples, seed)| {
        let records: Vec<TrajectoryRecord> = series
            .iter()
            .map(|s| TrajectoryRecord {
                times: (0..s.len()).map(|i| i as f64).collect(),
                names: vec!["n".into()],
                values: vec![s.iter().map(|&x| c(x, 0.0)).collect()],
                jumps: vec![],
                seed: 0,
                final_state: None,
                max_top_population: 0.0,
            })
            .collect();
        let sampling = Sampling { burn_in: 0.0, samples, seed };
        let edges: Vec<f64> = (0..=20).map(|i| 2.0 * i as f64).collect();
        if let Ok(h) = intensity_histogram(&records, "n", &sampling, edges.clone()) {
            ensure(h.total == h.counts.iter().sum::<u64>(), || "total is not the sum of counts".into())?;
            ensure(h.total + h.rejected == samples as u64, || format!("{} + {} != {samples}", h.total, h.rejected))?;
        }
        // In-range data: every draw is counted.
        let clipped: Vec<TrajectoryRecord> = records
            .into_iter()
            .map(|mut r| {
                r.values[0].iter_mut().for_each(|z| *z = c(z.re.clamp(0.0, 40.0), 0.0));
                r
            })
            .collect();
        let h = intensity_histogram(&clipped, "n", &sampling, edges).unwrap();
        ensure(h.total == samples as u64, || format!("total {} for {samples} draws", h.total))
    })
}

pub type Invariant = fn() -> Result<(), String>;

/// Every invariant with its name, grouped by module.
pub fn all() -> Vec<(&'static str, Invariant)> {
    vec![
        ("operators: a and a† adjoint", ladder_adjoint),
        ("operators: [a, a†] = I below the top level", canonical_commutator),
        ("operators: projectors sum to I", projectors_complete),
        ("operators: tensor product associative", tensor_associative),
        ("operators: basis index round trip", index_round_trip),
        ("lindblad: H Hermitian", hamiltonian_hermitian),
        ("lindblad: [H, N_exc] = 0 without drive", excitation_conserved),
        ("lindblad: dephasing equals projector form", dephasing_projector_form),
        ("lindblad: L(ρ) traceless and Hermitian", liouvillian_traceless_hermitian),
        ("solvers: norm non-increasing between jumps", norm_non_increasing),
        ("solvers: master equation Hermitian and positive", me_hermitian_positive),
        ("solvers: steady state is a fixed point", steady_fixed_point),
        ("solvers: dressed states orthonormal", eigenvectors_orthonormal),
        ("solvers: truncation guard", truncation_guard),
        ("solvers: seed determinism", seed_determinism),
        ("analysis: Q non-negative and normalized", q_nonnegative_normalized),
        ("analysis: amplifier noise preserves mass", amplifier_preserves_mass),
        ("analysis: telegraph segments reproduce classification", telegraph_reconstructs),
        ("analysis: partial trace keeps the trace", partial_trace_keeps_trace),
        ("analysis: histogram counts every sample", histogram_counts_every_sample),
    ]
}
