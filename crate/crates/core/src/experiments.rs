//! Sweep orchestration and scenario presets with deterministic seeding.

use std::f64::consts::SQRT_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    bimodality_weights, default_threshold, intensity_histogram, most_likely_output, telegraph_stats, Bimodality,
    DwellStats, Histogram, Sampling,
};
use crate::error::{Error, Result};
use crate::lindblad::{angular, AtomParams, LindbladSet, SystemParams};
use crate::solvers::{mcwf_evolve, standard_observables, truncation_warning, McwfOptions, TrajectoryRecord};

/// splitmix64 finalizer; a bijection on u64.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trajectory `traj` at sweep point `point`. For a fixed master seed
/// the map is injective over `point, traj < 2³²`.
pub fn split_seed(master: u64, point: u32, traj: u32) -> u64 {
    let key = ((point as u64) << 32) | traj as u64;
    mix64(key ^ mix64(master))
}

/// Parameter varied along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// g2 of every atom, MHz.
    G2,
    /// Drive amplitude η, MHz.
    Eta,
    /// Drive frequency ν, MHz.
    DriveFreq,
    /// Number of identical atoms, copies of the first atom of the base.
    NAtoms,
}

/// Uniform intensity binning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Binning {
    pub fn histogram(&self) -> Result<Histogram> {
        Histogram::uniform(self.lo, self.hi, self.bins)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: SystemParams,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub trajectories: usize,
    pub master_seed: u64,
    /// Discarded initial interval (µs).
    pub burn_in: f64,
    /// Length of each trajectory (µs).
    pub duration: f64,
    /// Spacing of the recorded samples (µs).
    pub sample_dt: f64,
    /// Instants drawn per point for the histogram.
    pub samples: usize,
    pub binning: Binning,
    /// Dark/bright split in photons; the histogram valley when absent.
    pub split: Option<f64>,
    /// Drive amplitude per grid point (MHz), overriding `base.eta`. Lets an
    /// atom-number sweep put each point at its own bistable drive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_eta: Option<Vec<f64>>,
    pub mcwf: McwfOptions,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.values.is_empty() {
            return Err(Error::InvalidInput("sweep grid is empty".into()));
        }
        if self.values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("sweep grid must be strictly increasing".into()));
        }
        if self.trajectories == 0 {
            return Err(Error::InvalidInput("at least one trajectory per point is required".into()));
        }
        if !(self.sample_dt > 0.0) || !(self.duration > self.burn_in) || self.burn_in < 0.0 {
            return Err(Error::InvalidInput("need sample_dt > 0 and duration > burn_in >= 0".into()));
        }
        if let Some(etas) = &self.point_eta {
            if self.axis == SweepAxis::Eta {
                return Err(Error::InvalidInput("point_eta conflicts with an eta sweep".into()));
            }
            if etas.len() != self.values.len() || etas.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
                return Err(Error::InvalidInput("point_eta needs one finite non-negative drive per grid value".into()));
            }
        }
        if self.axis == SweepAxis::NAtoms {
            if self.base.atoms.is_empty() {
                return Err(Error::InvalidInput("an atom-number sweep needs a template atom".into()));
            }
            if self.values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
                return Err(Error::InvalidInput("atom numbers must be non-negative integers".into()));
            }
        }
        Ok(())
    }

    /// Parameters at grid point `index`, including any per-point drive.
    pub fn params_at_point(&self, index: usize) -> SystemParams {
        let mut p = self.params_at(self.values[index]);
        if let Some(etas) = &self.point_eta {
            p.eta = etas[index];
        }
        p
    }

    /// Parameters at one grid value.
    pub fn params_at(&self, value: f64) -> SystemParams {
        let mut p = self.base.clone();
        match self.axis {
            SweepAxis::G2 => p.atoms.iter_mut().for_each(|a| a.g2 = value),
            SweepAxis::Eta => p.eta = value,
            SweepAxis::DriveFreq => p.drive_freq = value,
            SweepAxis::NAtoms => {
                let template = self.base.atoms[0];
                p.atoms = vec![template; value as usize];
            }
        }
        p
    }

    pub fn time_grid(&self) -> Vec<f64> {
        let n = (self.duration / self.sample_dt).round() as usize;
        (0..=n).map(|i| i as f64 * self.sample_dt).collect()
    }

    /// Seed of the histogram sampler at a point.
    pub fn sampler_seed(&self, point: usize) -> u64 {
        split_seed(self.master_seed, point as u32, u32::MAX)
    }
}

/// Result at one sweep point. `error` holds the diagnostic of an aborted point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub index: usize,
    pub value: f64,
    pub histogram: Option<Histogram>,
    pub most_likely: Vec<f64>,
    pub bimodality: Option<Bimodality>,
    /// Time-averaged ⟨n⟩ after burn-in and its variance over samples.
    pub mean_n: f64,
    pub var_n: f64,
    pub jumps: usize,
    pub truncation_warning: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub points: Vec<PointResult>,
}

fn summarize(spec: &SweepSpec, index: usize, records: &[TrajectoryRecord]) -> Result<PointResult> {
    let sampling = Sampling { burn_in: spec.burn_in, samples: spec.samples, seed: spec.sampler_seed(index) };
    let hist = intensity_histogram(records, "n", &sampling, spec.binning.histogram()?.edges)?;
    let most_likely = most_likely_output(&hist)?;
    let bim = bimodality_weights(&hist, spec.split)?;
    let (mut s, mut s2, mut m) = (0.0, 0.0, 0usize);
    for r in records {
        for (t, v) in r.times.iter().zip(r.series("n").unwrap()) {
            if *t >= spec.burn_in {
                s += v.re;
                s2 += v.re * v.re;
                m += 1;
            }
        }
    }
    let mean = s / m.max(1) as f64;
    let var = (s2 / m.max(1) as f64 - mean * mean).max(0.0);
    Ok(PointResult {
        index,
        value: spec.values[index],
        histogram: Some(hist),
        most_likely,
        bimodality: Some(bim),
        mean_n: mean,
        var_n: var,
        jumps: records.iter().map(|r| r.jumps.len()).sum(),
        truncation_warning: truncation_warning(mean, var, spec.base.n_max),
        error: None,
    })
}

fn failed_point(spec: &SweepSpec, index: usize, err: &Error) -> PointResult {
    PointResult {
        index,
        value: spec.values[index],
        histogram: None,
        most_likely: Vec::new(),
        bimodality: None,
        mean_n: f64::NAN,
        var_n: f64::NAN,
        jumps: 0,
        truncation_warning: None,
        error: Some(err.to_string()),
    }
}

/// Runs every trajectory of every point. Work items are scheduled on the
/// rayon pool and reassembled by index, so results do not depend on the
/// number of workers. A failing point is reported, not propagated.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let grid = spec.time_grid();
    let sets: Vec<Result<LindbladSet>> =
        (0..spec.values.len()).map(|p| LindbladSet::from_params(&spec.params_at_point(p))).collect();
    let items: Vec<(usize, usize)> =
        (0..spec.values.len()).flat_map(|p| (0..spec.trajectories).map(move |t| (p, t))).collect();
    let runs: Vec<Result<TrajectoryRecord>> = items
        .par_iter()
        .map(|&(p, t)| {
            let lset = sets[p].as_ref().map_err(Clone::clone)?;
            let obs = standard_observables(&lset.space);
            let seed = split_seed(spec.master_seed, p as u32, t as u32);
            mcwf_evolve(lset, &lset.space.ground_state(), &grid, &obs, seed, &spec.mcwf)
        })
        .collect();

    let mut runs = runs.into_iter();
    let mut points = Vec::with_capacity(spec.values.len());
    for p in 0..spec.values.len() {
        let chunk: Vec<Result<TrajectoryRecord>> = runs.by_ref().take(spec.trajectories).collect();
        let records: Result<Vec<TrajectoryRecord>> = chunk.into_iter().collect();
        let point = records.and_then(|r| summarize(spec, p, &r)).unwrap_or_else(|e| failed_point(spec, p, &e));
        points.push(point);
    }
    Ok(SweepResult { spec: spec.clone(), points })
}

/// Runs a single point of a sweep at an arbitrary axis value, at the base drive.
pub fn run_point(spec: &SweepSpec, value: f64, index: usize) -> Result<PointResult> {
    let mut one = spec.clone();
    one.values = vec![value];
    one.point_eta = None;
    let mut res = run_sweep(&SweepSpec { master_seed: split_seed(spec.master_seed, index as u32, u32::MAX - 1), ..one })?;
    let point = res.points.remove(0);
    match &point.error {
        Some(e) => Err(Error::NonConvergence(format!("point at {value}: {e}"))),
        None => Ok(point),
    }
}

/// Bisects the drive amplitude for `w_bright = 1/2` between `lo` and `hi`
/// (MHz). Returns the last midpoint and its weights.
pub fn locate_critical_eta(spec: &SweepSpec, lo: f64, hi: f64, iterations: usize) -> Result<(f64, Bimodality)> {
    if spec.axis != SweepAxis::Eta {
        return Err(Error::InvalidInput("critical-drive search needs an eta sweep".into()));
    }
    let (mut lo, mut hi) = (lo, hi);
    let mut best = None;
    for it in 0..iterations.max(1) {
        let mid = 0.5 * (lo + hi);
        let point = run_point(spec, mid, it)?;
        let b = point.bimodality.expect("successful point has weights");
        if b.w_bright < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
        best = Some((mid, b));
    }
    Ok(best.unwrap())
}

// ---------------------------------------------------------------------------
// Telegraph runs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelegraphPoint {
    pub value: f64,
    /// Threshold used on ⟨n⟩.
    pub threshold: f64,
    pub per_trajectory: Vec<DwellStats>,
    /// Means pooled over all dwell intervals of all trajectories.
    pub mean_dark: Option<f64>,
    pub mean_bright: Option<f64>,
    /// Mean over all dwell intervals of both phases: the switching time.
    pub mean_dwell: Option<f64>,
    pub switches: usize,
    pub records: Vec<TrajectoryRecord>,
}

/// Long trajectories at each sweep value and their dwell statistics on ⟨n⟩.
/// The threshold is the histogram midpoint between the two modes, or the
/// spec's split, or half the empty-cavity photon number as a last resort.
/// `min_dwell` is in µs.
pub fn run_telegraph(spec: &SweepSpec, min_dwell: f64) -> Result<Vec<TelegraphPoint>> {
    spec.validate()?;
    let grid = spec.time_grid();
    let mut out = Vec::new();
    for (p, &v) in spec.values.iter().enumerate() {
        let params = spec.params_at_point(p);
        let lset = LindbladSet::from_params(&params)?;
        let obs = standard_observables(&lset.space);
        let seeds: Vec<u64> = (0..spec.trajectories).map(|t| split_seed(spec.master_seed, p as u32, t as u32)).collect();
        let records: Vec<TrajectoryRecord> = seeds
            .par_iter()
            .map(|&s| mcwf_evolve(&lset, &lset.space.ground_state(), &grid, &obs, s, &spec.mcwf))
            .collect::<Result<_>>()?;
        let sampling = Sampling { burn_in: spec.burn_in, samples: spec.samples, seed: spec.sampler_seed(p) };
        let hist = intensity_histogram(&records, "n", &sampling, spec.binning.histogram()?.edges)?;
        let threshold = spec
            .split
            .or_else(|| default_threshold(&hist))
            .unwrap_or(0.5 * params.empty_cavity_photons());
        let mut stats = Vec::new();
        for r in &records {
            let start = r.times.partition_point(|&t| t < spec.burn_in);
            let n = r.real_series("n").unwrap();
            stats.push(telegraph_stats(&r.times[start..], &n[start..], threshold, min_dwell)?);
        }
        let pool = |f: fn(&DwellStats) -> &Vec<f64>| {
            let all: Vec<f64> = stats.iter().flat_map(|s| f(s).iter().copied()).collect();
            (!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64)
        };
        out.push(TelegraphPoint {
            value: v,
            threshold,
            mean_dark: pool(|s| &s.dark_dwells),
            mean_bright: pool(|s| &s.bright_dwells),
            mean_dwell: {
                let all: Vec<f64> = stats.iter().flat_map(|s| s.dark_dwells.iter().chain(&s.bright_dwells).copied()).collect();
                (!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64)
            },
            switches: stats.iter().map(|s| s.switches).sum(),
            per_trajectory: stats,
            records,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Presets

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 7] = [
    "fig3a_scaled",
    "fig3c_scaled_1atom",
    "fig3c_scaled_2atom",
    "fig3c_scaled_3atom",
    "fig4_qfunc_scaled",
    "fig4_telegraph_scaled",
    "paper_exact",
];

/// Measured device values (MHz).
pub mod device {
    pub const CAVITY_FREQ: f64 = 7024.0;
    pub const FWHM: f64 = 0.47;
    pub const G1: [f64; 3] = [-52.7, 55.4, 55.8];
    pub const E_C: [f64; 3] = [459.0, 359.0, 358.0];
    /// Empty-cavity photon number of the simulated histogram scan.
    pub const BRIGHT_PHOTONS: f64 = 700.0;
}

/// Desk-scale ratios shared by the scaled presets.
pub mod scaled {
    /// κ in MHz; the device linewidth.
    pub const KAPPA: f64 = 0.235;
    /// g1/κ.
    pub const G1_OVER_KAPPA: f64 = 20.0;
    /// Δ2/g1.
    pub const DELTA2_OVER_G1: f64 = 2.0;
    /// η/κ of the g2 scan.
    pub const ETA_OVER_KAPPA: f64 = 5.0;
    pub const N_MAX: usize = 80;
    /// Drive at which three atoms switch between the branches.
    pub const TELEGRAPH_ETA_OVER_KAPPA_3: f64 = 6.5;
}

/// A named sweep with its provenance notes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub spec: SweepSpec,
    pub notes: Vec<String>,
}

fn scaled_base(n_atoms: usize) -> SystemParams {
    use scaled::*;
    let g1 = G1_OVER_KAPPA * KAPPA;
    let nu = device::CAVITY_FREQ;
    let atom = AtomParams { nu_eg: nu, nu_fe: nu - DELTA2_OVER_G1 * g1, g1, g2: SQRT_2 * g1 };
    SystemParams::with_default_dissipation(nu, nu, vec![atom; n_atoms], ETA_OVER_KAPPA * KAPPA, KAPPA, N_MAX)
}

fn scaled_spec(base: SystemParams, axis: SweepAxis, values: Vec<f64>) -> SweepSpec {
    let inv_kappa = 1.0 / angular(base.kappa);
    SweepSpec {
        base,
        axis,
        values,
        trajectories: 24,
        master_seed: 20_170_404,
        burn_in: 10.0 * inv_kappa,
        duration: 150.0 * inv_kappa,
        sample_dt: 0.25 * inv_kappa,
        samples: 20_000,
        binning: Binning { lo: 0.0, hi: 60.0, bins: 30 },
        split: None,
        point_eta: None,
        mcwf: McwfOptions { rtol: 1e-6, atol: 1e-8, ..Default::default() },
    }
}

/// Preset sweep by name.
pub fn preset(name: &str) -> Result<Preset> {
    use scaled::*;
    let k = KAPPA;
    let g1 = G1_OVER_KAPPA * k;
    let eta_axis = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..n).map(|i| k * (lo + (hi - lo) * i as f64 / (n - 1) as f64)).collect()
    };
    let scaled_note = format!(
        "desk scale: g1/kappa = {G1_OVER_KAPPA}, Delta2/g1 = {DELTA2_OVER_G1}, gamma_perp = kappa, gamma_par = 0.1 kappa"
    );
    let p = match name {
        "fig3a_scaled" => Preset {
            name: name.into(),
            spec: scaled_spec(
                scaled_base(1),
                SweepAxis::G2,
                [0.1, 0.4, 0.7, 1.0, 1.2, SQRT_2].iter().map(|r| r * g1).collect(),
            ),
            notes: vec![scaled_note, "g2 scan at fixed eta; (eta/kappa)^2 is the empty-cavity photon number".into()],
        },
        "fig3c_scaled_1atom" | "fig3c_scaled_2atom" | "fig3c_scaled_3atom" => {
            let n = match name {
                "fig3c_scaled_1atom" => 1,
                "fig3c_scaled_2atom" => 2,
                _ => 3,
            };
            let mut base = scaled_base(n);
            base.n_max = if n == 1 { 100 } else { 90 };
            let values = if n == 1 {
                [3.0, 4.0, 5.0, 5.5, 5.75, 6.0, 6.25, 6.5].iter().map(|r| r * k).collect()
            } else {
                eta_axis(4.0, 7.5, 8)
            };
            let mut spec = scaled_spec(base, SweepAxis::Eta, values);
            spec.trajectories = if n == 1 { 24 } else { 8 };
            Preset {
                name: name.into(),
                spec,
                notes: vec![scaled_note, format!("{n} identical atom(s); drive-power scan")],
            }
        }
        "fig4_qfunc_scaled" => {
            let spec = scaled_spec(scaled_base(1), SweepAxis::Eta, eta_axis(4.0, 6.5, 2));
            Preset {
                name: name.into(),
                spec,
                notes: vec![
                    scaled_note,
                    "the critical eta is located by bisection between the two grid values at run time".into(),
                ],
            }
        }
        "fig4_telegraph_scaled" => {
            let mut spec = scaled_spec(scaled_base(1), SweepAxis::NAtoms, vec![1.0, 3.0]);
            // Each atom number at its own bistable drive.
            spec.point_eta = Some(vec![ETA_OVER_KAPPA * k, TELEGRAPH_ETA_OVER_KAPPA_3 * k]);
            spec.trajectories = 3;
            spec.duration = 500.0 / angular(k);
            Preset {
                name: name.into(),
                spec,
                notes: vec![
                    scaled_note,
                    format!(
                        "long trajectories for dwell-time statistics, 1 vs 3 atoms at eta/kappa = {ETA_OVER_KAPPA} and {TELEGRAPH_ETA_OVER_KAPPA_3}"
                    ),
                ],
            }
        }
        "paper_exact" => {
            let kappa = SystemParams::kappa_from_fwhm(device::FWHM);
            let nu = device::CAVITY_FREQ;
            let atom = AtomParams::transmon_like(nu, device::E_C[1], device::G1[1]);
            let eta = device::BRIGHT_PHOTONS.sqrt() * kappa;
            let base = SystemParams::with_default_dissipation(nu, nu, vec![atom], eta, kappa, 1000);
            let mut spec = scaled_spec(base, SweepAxis::G2, vec![0.1 * atom.g1, atom.g1, atom.g2]);
            spec.binning = Binning { lo: 0.0, hi: 1000.0, bins: 50 };
            spec.trajectories = 200;
            spec.mcwf.rtol = 1e-8;
            spec.mcwf.atol = 1e-10;
            Preset {
                name: name.into(),
                spec,
                notes: vec![
                    "device values verbatim (atom 2, Delta1 = Delta_c = 0)".into(),
                    "WARNING: needs n_max around 1000 (dimension 3000) and very long runtimes".into(),
                ],
            }
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(p)
}
