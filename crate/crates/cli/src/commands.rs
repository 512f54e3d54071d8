//! One function per subcommand. Each resolves its run settings, computes,
//! writes its tables and returns the manifest skeleton.

use std::path::Path;
use std::time::Instant;

use blockade_core::analysis::{
    add_amplifier_noise, husimi_q, partial_trace_cavity, scatter_q, QGrid,
};
use blockade_core::experiments::{locate_critical_eta, run_sweep, run_telegraph, split_seed, SweepAxis};
use blockade_core::lindblad::{angular, LindbladSet};
use blockade_core::operators::{SpaceDescriptor, C64};
use blockade_core::solvers::{
    eigenspectrum, ensemble_stats, mcwf_ensemble, mcwf_run, me_evolve, pure_density, standard_observables,
    steady_state, truncation_warning, Frame, McwfOptions, MeOptions, SteadyMethod, SteadyOptions,
    TrajectoryRecord,
};
use blockade_core::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::config::{Config, CriticalSearch, EvolveMethod, QSource, RunCfg};
use crate::output::{f, Manifest, OutDir, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Spectrum,
    Evolve,
    Steady,
    Qfunc,
    Sweep,
    Telegraph,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Evolve => "evolve",
            Command::Steady => "steady",
            Command::Qfunc => "qfunc",
            Command::Sweep => "sweep",
            Command::Telegraph => "telegraph",
        }
    }
}

/// Everything a command needs besides the config.
pub struct Invocation<'a> {
    pub command: Command,
    pub config: Config,
    pub preset: Option<String>,
    pub seed: u64,
    pub out: &'a Path,
}

struct Report {
    run: RunCfg,
    warnings: Vec<String>,
    notes: Vec<String>,
}

pub fn execute(inv: Invocation<'_>) -> Result<std::path::PathBuf> {
    let start = Instant::now();
    let mut out = OutDir::create(inv.out)?;
    let cfg = &inv.config;
    let report = match inv.command {
        Command::Spectrum => spectrum(cfg, &mut out)?,
        Command::Evolve => evolve(cfg, inv.seed, &mut out)?,
        Command::Steady => steady(cfg, &mut out)?,
        Command::Qfunc => qfunc(cfg, inv.seed, &mut out)?,
        Command::Sweep => sweep(cfg, inv.seed, &mut out)?,
        Command::Telegraph => telegraph(cfg, inv.seed, &mut out)?,
    };
    let mut run = report.run;
    run.seed = Some(inv.seed);
    let resolved = cfg.resolved(run)?;
    let mcwf = resolved.mcwf_options();
    let manifest = Manifest {
        tool: "blockade",
        version: env!("CARGO_PKG_VERSION"),
        command: inv.command.name().to_string(),
        preset: inv.preset,
        seed: inv.seed,
        quadrature_convention: "alpha = X + iP; vacuum variance 1/2 per quadrature",
        units: "frequencies MHz (nu = omega / 2 pi), times us",
        config: resolved,
        tolerances: Tolerances { rtol: mcwf.rtol, atol: mcwf.atol, truncation_threshold: mcwf.truncation_threshold },
        truncation_warnings: report.warnings,
        notes: report.notes,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs: Vec::new(),
    };
    out.finish(manifest)
}

fn report(run: RunCfg) -> Report {
    Report { run, warnings: Vec::new(), notes: Vec::new() }
}

fn fill_tolerances(cfg: &Config, run: &mut RunCfg) {
    let o = cfg.mcwf_options();
    run.rtol = Some(o.rtol);
    run.atol = Some(o.atol);
    run.truncation_threshold = Some(o.truncation_threshold);
}

// ---------------------------------------------------------------------------

fn spectrum(cfg: &Config, out: &mut OutDir) -> Result<Report> {
    let p = cfg.system_params()?;
    let space = p.space()?;
    let mut run = cfg.run.clone();
    let max_manifold = *run.max_manifold.get_or_insert(4.min(p.n_max - 1));
    let frame = *run.frame.get_or_insert(Frame::Rotating);
    let levels = eigenspectrum(&p, &space, max_manifold, frame)?;
    let rows: Vec<Vec<String>> = levels
        .iter()
        .map(|l| {
            vec![
                l.manifold.to_string(),
                l.label.clone(),
                f(l.energy),
                l.delta.map(f).unwrap_or_default(),
                l.dominant.clone(),
                f(l.dominant_weight),
                f(l.n_exc),
                f(l.f_population),
                l.ladder.to_string(),
            ]
        })
        .collect();
    out.csv(
        "levels.csv",
        "levels",
        &["manifold", "label", "energy_mhz", "delta_mhz", "dominant", "dominant_weight", "n_exc", "f_population", "ladder"],
        &rows,
    )?;
    Ok(report(run))
}

// ---------------------------------------------------------------------------

fn time_grid(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(t_end > 0.0 && dt > 0.0 && dt <= t_end) {
        return Err(Error::InvalidInput(format!("need 0 < dt <= t_end (t_end = {t_end}, dt = {dt})")));
    }
    let n = (t_end / dt).round() as usize;
    Ok((0..=n).map(|i| t_end * i as f64 / n as f64).collect())
}

fn obs_header(names: &[String]) -> Vec<String> {
    let mut h = Vec::new();
    for n in names {
        if n == "a" {
            h.push("re_a".to_string());
            h.push("im_a".to_string());
        } else {
            h.push(n.clone());
        }
    }
    h
}

fn obs_cells(names: &[String], values: &[Vec<C64>], i: usize, row: &mut Vec<String>) {
    for (k, n) in names.iter().enumerate() {
        let v = values[k][i];
        row.push(f(v.re));
        if n == "a" {
            row.push(f(v.im));
        }
    }
}

fn evolve(cfg: &Config, seed: u64, out: &mut OutDir) -> Result<Report> {
    let p = cfg.system_params()?;
    let lset = LindbladSet::from_params(&p)?;
    let mut run = cfg.run.clone();
    fill_tolerances(cfg, &mut run);
    let ka = angular(p.kappa);
    let method = *run.method.get_or_insert(EvolveMethod::Mcwf);
    let t_end = *run.t_end.get_or_insert(20.0 / ka);
    let dt = *run.dt.get_or_insert(t_end / 200.0);
    let grid = time_grid(t_end, dt)?;
    let obs = standard_observables(&lset.space);
    let names: Vec<String> = obs.iter().map(|o| o.name.clone()).collect();
    let mut rep;
    match method {
        EvolveMethod::Me => {
            run.trajectories = None;
            let rho0 = pure_density(&lset.space.ground_state());
            let opts = MeOptions { rtol: run.rtol.unwrap(), atol: run.atol.unwrap(), keep_states: false };
            let traj = me_evolve(&lset, &rho0, &grid, &obs, &opts)?;
            let rows: Vec<Vec<String>> = (0..grid.len())
                .map(|i| {
                    let mut row = vec![f(grid[i])];
                    obs_cells(&names, &traj.values, i, &mut row);
                    row
                })
                .collect();
            let mut header = vec!["time_us".to_string()];
            header.extend(obs_header(&names));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out.csv("trajectory.csv", "density_trajectory", &header, &rows)?;
            rep = report(run);
        }
        EvolveMethod::Mcwf => {
            let n_traj = *run.trajectories.get_or_insert(1);
            if n_traj == 0 {
                return Err(Error::InvalidInput("run.trajectories must be at least 1".into()));
            }
            let opts = cfg.mcwf_options();
            let psi0 = lset.space.ground_state();
            let seeds: Vec<u64> = (0..n_traj).map(|t| split_seed(seed, 0, t as u32)).collect();
            let records = mcwf_ensemble(&lset, &psi0, &grid, &obs, &seeds, &opts)
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let mut rows = Vec::new();
            let mut jump_rows = Vec::new();
            for (t, r) in records.iter().enumerate() {
                for (i, &time) in grid.iter().enumerate() {
                    let mut row = vec![t.to_string(), f(time)];
                    obs_cells(&names, &r.values, i, &mut row);
                    rows.push(row);
                }
                for j in &r.jumps {
                    jump_rows.push(vec![t.to_string(), f(j.time), j.channel.to_string()]);
                }
            }
            let mut header = vec!["trajectory".to_string(), "time_us".to_string()];
            header.extend(obs_header(&names));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out.csv("trajectory.csv", "mcwf_trajectory", &header, &rows)?;
            out.csv("jumps.csv", "jumps", &["trajectory", "time_us", "channel"], &jump_rows)?;
            if n_traj > 1 {
                let mut cols = Vec::new();
                let mut header = vec!["time_us".to_string()];
                for n in names.iter().filter(|n| *n != "a") {
                    cols.push(ensemble_stats(&records, n)?);
                    header.push(format!("{n}_mean"));
                    header.push(format!("{n}_sem"));
                }
                let rows: Vec<Vec<String>> = (0..grid.len())
                    .map(|i| {
                        let mut row = vec![f(grid[i])];
                        for (m, s) in &cols {
                            row.push(f(m[i]));
                            row.push(f(s[i]));
                        }
                        row
                    })
                    .collect();
                let header: Vec<&str> = header.iter().map(String::as_str).collect();
                out.csv("ensemble.csv", "ensemble", &header, &rows)?;
            }
            rep = report(run);
            rep.warnings.extend(record_warning(&records, 0.0, p.n_max));
        }
    }
    Ok(rep)
}

fn record_warning(records: &[TrajectoryRecord], from: f64, n_max: usize) -> Option<String> {
    let (mut s, mut s2, mut m) = (0.0, 0.0, 0usize);
    for r in records {
        for (t, v) in r.times.iter().zip(r.series("n")?) {
            if *t >= from {
                s += v.re;
                s2 += v.re * v.re;
                m += 1;
            }
        }
    }
    let mean = s / m.max(1) as f64;
    truncation_warning(mean, s2 / m.max(1) as f64 - mean * mean, n_max)
}

// ---------------------------------------------------------------------------

fn photon_moments(rho_cav: &DMatrix<C64>) -> (f64, f64) {
    let (mut m1, mut m2) = (0.0, 0.0);
    for n in 0..rho_cav.nrows() {
        let pn = rho_cav[(n, n)].re;
        m1 += n as f64 * pn;
        m2 += (n * n) as f64 * pn;
    }
    (m1, m2 - m1 * m1)
}

fn steady(cfg: &Config, out: &mut OutDir) -> Result<Report> {
    let p = cfg.system_params()?;
    let lset = LindbladSet::from_params(&p)?;
    let mut run = cfg.run.clone();
    let method = *run.steady_method.get_or_insert(SteadyMethod::Evolve);
    let ss = steady_state(&lset, p.kappa, &SteadyOptions { method, ..Default::default() })?;
    let rho_cav = partial_trace_cavity(&ss.rho, &lset.space)?;
    let (mean, var) = photon_moments(&rho_cav);
    let mut rows = vec![vec!["method".to_string(), format!("{:?}", ss.method).to_lowercase()]];
    for o in standard_observables(&lset.space) {
        let v = o.op.expectation_dm(&ss.rho);
        if o.name == "a" {
            rows.push(vec!["re_a".into(), f(v.re)]);
            rows.push(vec!["im_a".into(), f(v.im)]);
        } else {
            rows.push(vec![o.name.clone(), f(v.re)]);
        }
    }
    rows.push(vec!["var_n".into(), f(var)]);
    rows.push(vec!["residual".into(), f(ss.residual)]);
    if let Some(t) = ss.time {
        rows.push(vec!["settle_time_us".into(), f(t)]);
    }
    if let Some(d) = ss.disagreement {
        rows.push(vec!["disagreement".into(), f(d)]);
    }
    out.csv("steady.csv", "steady", &["quantity", "value"], &rows)?;
    let dist: Vec<Vec<String>> =
        (0..rho_cav.nrows()).map(|n| vec![n.to_string(), f(rho_cav[(n, n)].re)]).collect();
    out.csv("photon_distribution.csv", "photon_distribution", &["n", "probability"], &dist)?;
    let mut rep = report(run);
    rep.warnings.extend(truncation_warning(mean, var, p.n_max));
    Ok(rep)
}

// ---------------------------------------------------------------------------

fn write_q(out: &mut OutDir, name: &str, q: &QGrid, notes: &mut Vec<String>) -> Result<()> {
    let rows: Vec<Vec<String>> = q.triples().map(|(x, p, v)| vec![f(x), f(p), f(v)]).collect();
    out.csv(name, "q_grid", &["x", "p", "q"], &rows)?;
    notes.extend(q.warnings.iter().map(|w| format!("{name}: {w}")));
    Ok(())
}

fn qfunc(cfg: &Config, seed: u64, out: &mut OutDir) -> Result<Report> {
    let mut run = cfg.run.clone();
    let source = *run.q_source.get_or_insert(QSource::Steady);
    let grid = cfg.q_grid();
    run.q_half_width = Some(grid.x_max);
    run.q_points = Some(grid.nx);
    let n_add = *run.n_add.get_or_insert(0.0);
    let mut rep = report(run);
    let rho_cav = match source {
        QSource::Steady => {
            let p = cfg.system_params()?;
            let lset = LindbladSet::from_params(&p)?;
            let method = *rep.run.steady_method.get_or_insert(SteadyMethod::Evolve);
            let ss = steady_state(&lset, p.kappa, &SteadyOptions { method, ..Default::default() })?;
            let rho_cav = partial_trace_cavity(&ss.rho, &lset.space)?;
            let (mean, var) = photon_moments(&rho_cav);
            rep.warnings.extend(truncation_warning(mean, var, p.n_max));
            rho_cav
        }
        QSource::Trajectories => {
            fill_tolerances(cfg, &mut rep.run);
            let (rho_cav, amplitudes) = trajectory_field(cfg, seed, &mut rep)?;
            let q = scatter_q(&amplitudes, &grid)?;
            write_q(out, "q_scatter.csv", &q, &mut rep.notes)?;
            if n_add > 0.0 {
                write_q(out, "q_scatter_amplified.csv", &add_amplifier_noise(&q, n_add)?, &mut rep.notes)?;
            }
            rho_cav
        }
    };
    let q = husimi_q(&rho_cav, &grid)?;
    write_q(out, "q_rho.csv", &q, &mut rep.notes)?;
    if n_add > 0.0 {
        write_q(out, "q_rho_amplified.csv", &add_amplifier_noise(&q, n_add)?, &mut rep.notes)?;
    }
    Ok(rep)
}

/// Trajectory-averaged reduced cavity state and the sampled field
/// amplitudes ⟨a⟩ after burn-in, at the configured drive or at the located
/// critical drive.
fn trajectory_field(cfg: &Config, seed: u64, rep: &mut Report) -> Result<(DMatrix<C64>, Vec<C64>)> {
    let mut spec = cfg.sweep_spec(seed)?;
    let mut params = spec.base.clone();
    if let Some(CriticalSearch { lo, hi, iterations }) = rep.run.critical_search {
        spec.axis = SweepAxis::Eta;
        let (eta, b) = locate_critical_eta(&spec, lo, hi, iterations)?;
        rep.notes.push(format!(
            "critical drive located at eta = {eta} MHz (eta/kappa = {}), w_bright = {}",
            eta / params.kappa,
            b.w_bright
        ));
        params.eta = eta;
    }
    let lset = LindbladSet::from_params(&params)?;
    let space: &SpaceDescriptor = &lset.space;
    let nc = space.n_max();
    let na = space.atomic_dim();
    let grid = spec.time_grid();
    let a_op = blockade_core::operators::annihilation(space);
    let opts: McwfOptions = spec.mcwf;
    let psi0 = space.ground_state();
    let mut rho = DMatrix::<C64>::zeros(nc, nc);
    let mut amplitudes = Vec::new();
    let mut count = 0usize;
    for t in 0..spec.trajectories {
        let s = split_seed(seed, 0, t as u32);
        mcwf_run(&lset, &psi0, &grid, s, &opts, |_, time, psi| {
            if time < spec.burn_in {
                return;
            }
            for m in 0..nc {
                for n in 0..nc {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..na {
                        acc += psi[m * na + k] * psi[n * na + k].conj();
                    }
                    rho[(m, n)] += acc;
                }
            }
            amplitudes.push(a_op.sandwich(psi));
            count += 1;
        })?;
    }
    if count == 0 {
        return Err(Error::Empty("post-burn-in samples"));
    }
    rho /= Complex64::new(count as f64, 0.0);
    let (mean, var) = photon_moments(&rho);
    rep.warnings.extend(truncation_warning(mean, var, params.n_max));
    let stride = amplitudes.len().div_ceil(spec.samples.max(1));
    let amplitudes = amplitudes.into_iter().step_by(stride.max(1)).collect();
    Ok((rho, amplitudes))
}

// ---------------------------------------------------------------------------

fn sweep(cfg: &Config, seed: u64, out: &mut OutDir) -> Result<Report> {
    let mut run = cfg.run.clone();
    fill_tolerances(cfg, &mut run);
    let spec = cfg.sweep_spec(seed)?;
    let result = run_sweep(&spec)?;
    let mut rows = Vec::new();
    let mut rep = report(run);
    for pt in &result.points {
        let b = pt.bimodality.as_ref();
        let ml: Vec<String> = pt.most_likely.iter().map(|x| f(*x)).collect();
        rows.push(vec![
            pt.index.to_string(),
            f(pt.value),
            ml.join(";"),
            b.map(|b| f(b.w_dark)).unwrap_or_default(),
            b.map(|b| f(b.w_bright)).unwrap_or_default(),
            b.and_then(|b| b.split).map(f).unwrap_or_default(),
            b.map(|b| b.unimodal.to_string()).unwrap_or_default(),
            if pt.error.is_none() { f(pt.mean_n) } else { String::new() },
            if pt.error.is_none() { f(pt.var_n) } else { String::new() },
            pt.jumps.to_string(),
            pt.error.clone().unwrap_or_default(),
        ]);
        if let Some(h) = &pt.histogram {
            let probs = h.probabilities();
            let hrows: Vec<Vec<String>> = (0..h.bins())
                .map(|i| {
                    vec![f(h.edges[i]), f(h.edges[i + 1]), h.counts[i].to_string(), f(probs[i])]
                })
                .collect();
            out.csv(&format!("hist_point_{:02}.csv", pt.index), "histogram", &["lo", "hi", "count", "probability"], &hrows)?;
            rep.notes.push(format!("point {}: {} samples out of range", pt.index, h.rejected));
        }
        if let Some(e) = &pt.error {
            rep.notes.push(format!("point {} aborted: {e}", pt.index));
        }
        if let Some(w) = &pt.truncation_warning {
            rep.warnings.push(format!("point {}: {w}", pt.index));
        }
    }
    out.csv(
        "summary.csv",
        "sweep_summary",
        &["point", "value", "most_likely", "w_dark", "w_bright", "split", "unimodal", "mean_n", "var_n", "jumps", "error"],
        &rows,
    )?;
    Ok(rep)
}

// ---------------------------------------------------------------------------

fn telegraph(cfg: &Config, seed: u64, out: &mut OutDir) -> Result<Report> {
    let mut run = cfg.run.clone();
    fill_tolerances(cfg, &mut run);
    let spec = cfg.sweep_spec(seed)?;
    let min_dwell = *run.min_dwell.get_or_insert(10.0 * spec.sample_dt);
    let points = run_telegraph(&spec, min_dwell)?;
    let mut dwell = Vec::new();
    let mut summary = Vec::new();
    let mut records = Vec::new();
    let mut rep = report(run);
    let opt = |x: Option<f64>| x.map(f).unwrap_or_default();
    for (i, pt) in points.iter().enumerate() {
        summary.push(vec![
            i.to_string(),
            f(pt.value),
            f(spec.params_at_point(i).eta),
            f(pt.threshold),
            opt(pt.mean_dark),
            opt(pt.mean_bright),
            opt(pt.mean_dwell),
            pt.switches.to_string(),
        ]);
        for (t, s) in pt.per_trajectory.iter().enumerate() {
            for seg in &s.segments {
                dwell.push(vec![
                    i.to_string(),
                    t.to_string(),
                    f(seg.start),
                    f(seg.end),
                    f(seg.duration()),
                    if seg.bright { "bright" } else { "dark" }.to_string(),
                    seg.censored.to_string(),
                ]);
            }
        }
        for (t, r) in pt.records.iter().enumerate() {
            let n = r.real_series("n").unwrap_or_default();
            for (time, v) in r.times.iter().zip(n) {
                records.push(vec![i.to_string(), t.to_string(), f(*time), f(v)]);
            }
        }
        let n_max = spec.params_at_point(i).n_max;
        if let Some(w) = record_warning(&pt.records, spec.burn_in, n_max) {
            rep.warnings.push(format!("point {i}: {w}"));
        }
    }
    out.csv(
        "telegraph_summary.csv",
        "telegraph_summary",
        &["point", "value", "eta_mhz", "threshold", "mean_dark_us", "mean_bright_us", "mean_dwell_us", "switches"],
        &summary,
    )?;
    out.csv(
        "dwell.csv",
        "dwell_segments",
        &["point", "trajectory", "start_us", "end_us", "duration_us", "phase", "censored"],
        &dwell,
    )?;
    out.csv("records.csv", "telegraph_records", &["point", "trajectory", "time_us", "n"], &records)?;
    Ok(rep)
}
