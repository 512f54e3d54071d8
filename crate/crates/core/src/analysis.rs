//! Observables built from solver output: intensity histograms, Husimi Q
//! functions with amplifier noise, partial traces, telegraph dwell times and
//! bimodality weights.
//!
//! Phase-space convention: `α = X + iP`. The vacuum Q function is
//! `e^{−(X²+P²)}/π`, with variance 1/2 per quadrature, and `∫Q dX dP = 1`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{SpaceDescriptor, C64};
use crate::solvers::TrajectoryRecord;

// ---------------------------------------------------------------------------
// Histograms

/// Binned samples. Bins are half-open `[e_i, e_{i+1})` except the last,
/// which also contains its upper edge. Samples outside the edges are not
/// binned and are counted in `rejected`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
    pub rejected: u64,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidInput("a histogram needs at least two edges".into()));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidInput("histogram edges must be finite and strictly increasing".into()));
        }
        let n = edges.len() - 1;
        Ok(Histogram { edges, counts: vec![0; n], total: 0, rejected: 0 })
    }

    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::InvalidInput(format!("bad uniform binning [{lo}, {hi}) x {bins}")));
        }
        let w = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * w).collect();
        edges.push(hi);
        Histogram::new(edges)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_of(&self, x: f64) -> Option<usize> {
        let last = *self.edges.last().unwrap();
        if !(x >= self.edges[0] && x <= last) {
            return None;
        }
        if x == last {
            return Some(self.bins() - 1);
        }
        Some(self.edges.partition_point(|&e| e <= x) - 1)
    }

    pub fn add(&mut self, x: f64) {
        match self.bin_of(x) {
            Some(i) => {
                self.counts[i] += 1;
                self.total += 1;
            }
            None => self.rejected += 1,
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Fraction of binned samples per bin.
    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// Probability density (integrates to 1 over the binned range).
    pub fn density(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().zip(self.edges.windows(2)).map(|(&c, w)| c as f64 / (t * (w[1] - w[0]))).collect()
    }
}

/// How instants are drawn from trajectory records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    /// Samples earlier than this (µs) are discarded.
    pub burn_in: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Sampling {
    /// Default burn-in `10/κ` in µs for κ given in MHz.
    pub fn default_burn_in(kappa_mhz: f64) -> f64 {
        10.0 / (2.0 * PI * kappa_mhz)
    }
}

/// Histogram of the real part of `observable` at instants drawn uniformly
/// from the post-burn-in samples of all records.
pub fn intensity_histogram(
    records: &[TrajectoryRecord],
    observable: &str,
    sampling: &Sampling,
    edges: Vec<f64>,
) -> Result<Histogram> {
    let mut pool: Vec<(usize, usize)> = Vec::new();
    let mut series = Vec::with_capacity(records.len());
    for (r, rec) in records.iter().enumerate() {
        let s = rec
            .series(observable)
            .ok_or_else(|| Error::InvalidInput(format!("records have no observable '{observable}'")))?;
        series.push(s);
        pool.extend(rec.times.iter().enumerate().filter(|(_, &t)| t >= sampling.burn_in).map(|(i, _)| (r, i)));
    }
    if pool.is_empty() || sampling.samples == 0 {
        return Err(Error::Empty("post-burn-in samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut hist = Histogram::new(edges)?;
    for _ in 0..sampling.samples {
        let (r, i) = pool[rng.random_range(0..pool.len())];
        hist.add(series[r][i].re);
    }
    if hist.total == 0 {
        return Err(Error::InvalidInput("all samples fall outside the histogram range".into()));
    }
    Ok(hist)
}

/// Bin centers of the global mode; ties are all reported.
pub fn most_likely_output(hist: &Histogram) -> Result<Vec<f64>> {
    if hist.total == 0 {
        return Err(Error::Empty("histogram"));
    }
    // Compare densities so unequal bin widths are handled.
    let dens = hist.density();
    let max = dens.iter().cloned().fold(f64::MIN, f64::max);
    let centers = hist.centers();
    Ok(dens.iter().zip(centers).filter(|(d, _)| **d == max).map(|(_, c)| c).collect())
}

// ---------------------------------------------------------------------------
// Bimodality

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bimodality {
    pub w_dark: f64,
    pub w_bright: f64,
    /// Split used; `None` for a unimodal histogram without a given split.
    pub split: Option<f64>,
    pub unimodal: bool,
}

fn smoothed(counts: &[u64]) -> Vec<f64> {
    let n = counts.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            counts[lo..=hi].iter().sum::<u64>() as f64 / (hi - lo + 1) as f64
        })
        .collect()
}

/// The two dominant modes and the valley between them, as bin indices.
/// A secondary peak counts only if the valley drops below 3/4 of the lower
/// peak (after three-bin smoothing).
pub fn find_modes(hist: &Histogram) -> Option<(usize, usize, usize)> {
    let s = smoothed(&hist.counts);
    let n = s.len();
    if n < 3 {
        return None;
    }
    let main = (0..n).max_by(|&a, &b| s[a].total_cmp(&s[b]).then(b.cmp(&a)))?;
    let mut best: Option<(usize, usize, f64)> = None;
    for p in 0..n {
        if p == main || s[p] <= 0.0 {
            continue;
        }
        let left = p == 0 || s[p] >= s[p - 1];
        let right = p == n - 1 || s[p] >= s[p + 1];
        if !(left && right) {
            continue;
        }
        let (a, b) = if p < main { (p, main) } else { (main, p) };
        let valley = (a..=b).min_by(|&x, &y| s[x].total_cmp(&s[y]))?;
        if s[valley] > 0.75 * s[p] {
            continue;
        }
        let prominence = s[p] - s[valley];
        if best.is_none_or(|(_, _, bp)| prominence > bp) {
            best = Some((p, valley, prominence));
        }
    }
    best.map(|(p, valley, _)| (main.min(p), valley, main.max(p)))
}

/// Mass below and above `split`. Without a split, the valley between the
/// two dominant modes is used; a unimodal histogram then reports all mass
/// on the side of its mode (dark when the mode lies in the lowest tenth of
/// the range) and sets `unimodal`.
pub fn bimodality_weights(hist: &Histogram, split: Option<f64>) -> Result<Bimodality> {
    if hist.total == 0 {
        return Err(Error::Empty("histogram"));
    }
    let centers = hist.centers();
    let total = hist.total as f64;
    let modes = find_modes(hist);
    let split = match (split, modes) {
        (Some(s), _) => Some(s),
        (None, Some((_, valley, _))) => Some(centers[valley]),
        (None, None) => None,
    };
    match split {
        Some(s) => {
            let dark: u64 = hist.counts.iter().zip(&centers).filter(|(_, &c)| c <= s).map(|(n, _)| n).sum();
            let w_dark = dark as f64 / total;
            Ok(Bimodality { w_dark, w_bright: 1.0 - w_dark, split: Some(s), unimodal: modes.is_none() })
        }
        None => {
            let mode = most_likely_output(hist)?[0];
            let lo = hist.edges[0];
            let hi = *hist.edges.last().unwrap();
            let dark = mode <= lo + 0.1 * (hi - lo);
            let w_dark = if dark { 1.0 } else { 0.0 };
            Ok(Bimodality { w_dark, w_bright: 1.0 - w_dark, split: None, unimodal: true })
        }
    }
}

// ---------------------------------------------------------------------------
// Cavity state and Husimi Q

/// Reduced cavity density matrix, tracing out every atom.
pub fn partial_trace_cavity(rho: &DMatrix<C64>, space: &SpaceDescriptor) -> Result<DMatrix<C64>> {
    let d = space.dim();
    if rho.nrows() != d || rho.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, found: rho.nrows() });
    }
    let na = space.atomic_dim();
    let nm = space.n_max();
    Ok(DMatrix::from_fn(nm, nm, |n, m| (0..na).map(|a| rho[(n * na + a, m * na + a)]).sum()))
}

/// Rectangular phase-space grid, inclusive of both ends on each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub np: usize,
}

impl GridSpec {
    pub fn square(half_width: f64, n: usize) -> Self {
        GridSpec { x_min: -half_width, x_max: half_width, nx: n, p_min: -half_width, p_max: half_width, np: n }
    }

    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.np < 2 || !(self.x_max > self.x_min) || !(self.p_max > self.p_min) {
            return Err(Error::InvalidInput("phase-space grid needs at least 2 points and positive extent".into()));
        }
        Ok(())
    }
}

/// Q function sampled on a grid; `values[ip * nx + ix]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QGrid {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub values: Vec<f64>,
    pub dx: f64,
    pub dp: f64,
    /// `Σ Q ΔX ΔP`.
    pub mass: f64,
    pub warnings: Vec<String>,
}

impl QGrid {
    fn empty(spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let x = GridSpec::axis(spec.x_min, spec.x_max, spec.nx);
        let p = GridSpec::axis(spec.p_min, spec.p_max, spec.np);
        let dx = x[1] - x[0];
        let dp = p[1] - p[0];
        Ok(QGrid { values: vec![0.0; x.len() * p.len()], x, p, dx, dp, mass: 0.0, warnings: Vec::new() })
    }

    pub fn at(&self, ix: usize, ip: usize) -> f64 {
        self.values[ip * self.x.len() + ix]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::MIN, f64::max)
    }

    fn finish(&mut self) {
        self.mass = self.values.iter().sum::<f64>() * self.dx * self.dp;
        if self.mass < 0.98 {
            self.warnings.push(format!("grid captures only {:.4} of the Q-function mass", self.mass));
        }
    }

    /// Iterator over `(X, P, Q)` triples, X fastest.
    pub fn triples(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let nx = self.x.len();
        self.values.iter().enumerate().map(move |(k, &q)| (self.x[k % nx], self.p[k / nx], q))
    }
}

/// `⟨n|α⟩ = e^{−|α|²/2} αⁿ/√n!` for `n < len`, by recursion.
pub fn coherent_coefficients(alpha: C64, len: usize, out: &mut Vec<C64>) {
    out.clear();
    let mut c = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 0..len {
        if n > 0 {
            c = c * alpha / (n as f64).sqrt();
        }
        out.push(c);
    }
}

/// `Q(α) = ⟨α|ρ|α⟩/π` on the grid, with `α = X + iP`. The overlaps use the
/// exact Fock amplitudes of the untruncated coherent state.
pub fn husimi_q(rho_cav: &DMatrix<C64>, spec: &GridSpec) -> Result<QGrid> {
    let n = rho_cav.nrows();
    if rho_cav.ncols() != n || n == 0 {
        return Err(Error::InvalidInput("cavity density matrix must be square".into()));
    }
    let tr = rho_cav.trace();
    if (tr.re - 1.0).abs() > 1e-6 || tr.im.abs() > 1e-6 {
        return Err(Error::InvalidInput(format!("cavity density matrix has trace {tr}")));
    }
    let mut q = QGrid::empty(spec)?;
    let nx = q.x.len();
    let mut c = Vec::with_capacity(n);
    let mut tmp = vec![C64::new(0.0, 0.0); n];
    let mut min_raw: f64 = 0.0;
    for ip in 0..q.p.len() {
        for ix in 0..nx {
            coherent_coefficients(C64::new(q.x[ix], q.p[ip]), n, &mut c);
            // ρ c, then c† (ρ c)
            for (r, t) in tmp.iter_mut().enumerate() {
                *t = (0..n).map(|k| rho_cav[(r, k)] * c[k]).sum();
            }
            let v: C64 = c.iter().zip(&tmp).map(|(a, b)| a.conj() * b).sum();
            let val = v.re / PI;
            min_raw = min_raw.min(val);
            q.values[ip * nx + ix] = val.max(0.0);
        }
    }
    if min_raw < -1e-12 {
        q.warnings.push(format!("negative Q value {min_raw:.3e} clipped; input may not be positive"));
    }
    q.finish();
    Ok(q)
}

/// Q function of a mixture of coherent states centred on the given field
/// amplitudes: a Gaussian kernel density with the vacuum width.
pub fn scatter_q(amplitudes: &[C64], spec: &GridSpec) -> Result<QGrid> {
    if amplitudes.is_empty() {
        return Err(Error::Empty("field samples"));
    }
    let mut q = QGrid::empty(spec)?;
    let nx = q.x.len();
    let w = 1.0 / (PI * amplitudes.len() as f64);
    for ip in 0..q.p.len() {
        for ix in 0..nx {
            let z = C64::new(q.x[ix], q.p[ip]);
            q.values[ip * nx + ix] = w * amplitudes.iter().map(|a| (-(z - a).norm_sqr()).exp()).sum::<f64>();
        }
    }
    q.finish();
    Ok(q)
}

fn gaussian_kernel(var: f64, step: f64) -> Vec<f64> {
    let half = ((5.0 * var.sqrt()) / step).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let x = (i as f64 - half as f64) * step;
            (-x * x / (2.0 * var)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn convolve_axis(values: &[f64], nx: usize, np: usize, kernel: &[f64], along_x: bool) -> Vec<f64> {
    let half = kernel.len() / 2;
    let mut out = vec![0.0; values.len()];
    let (len, lines) = if along_x { (nx, np) } else { (np, nx) };
    for line in 0..lines {
        let idx = |i: usize| if along_x { line * nx + i } else { i * nx + line };
        for i in 0..len {
            let mut s = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let j = i as isize + k as isize - half as isize;
                if j >= 0 && (j as usize) < len {
                    s += w * values[idx(j as usize)];
                }
            }
            out[idx(i)] = s;
        }
    }
    out
}

/// Convolves with an isotropic Gaussian of per-quadrature variance
/// `n_add/2`, the classical added noise of a phase-insensitive amplifier.
/// The result is rescaled to the input mass; mass lost at the grid boundary
/// is reported in `warnings`.
pub fn add_amplifier_noise(q: &QGrid, n_add: f64) -> Result<QGrid> {
    if !(n_add >= 0.0) || !n_add.is_finite() {
        return Err(Error::InvalidInput(format!("added noise must be non-negative, got {n_add}")));
    }
    if n_add == 0.0 {
        return Ok(q.clone());
    }
    let var = 0.5 * n_add;
    let (nx, np) = (q.x.len(), q.p.len());
    let mut out = q.clone();
    let kx = gaussian_kernel(var, q.dx);
    let kp = gaussian_kernel(var, q.dp);
    let conv = convolve_axis(&q.values, nx, np, &kx, true);
    out.values = convolve_axis(&conv, nx, np, &kp, false);
    let before = q.values.iter().sum::<f64>();
    let after = out.values.iter().sum::<f64>();
    let sd = var.sqrt();
    let extent = (q.x[nx - 1] - q.x[0]).min(q.p[np - 1] - q.p[0]);
    if 6.0 * sd > extent {
        out.warnings.push(format!("noise kernel (sd {sd:.3}) is wide compared with the grid extent {extent:.3}"));
    }
    if before > 0.0 {
        let lost = 1.0 - after / before;
        if lost > 1e-6 {
            out.warnings.push(format!("convolution lost {lost:.3e} of the mass at the grid boundary"));
        }
        if after > 0.0 {
            let s = before / after;
            out.values.iter_mut().for_each(|v| *v *= s);
        }
    }
    out.mass = out.values.iter().sum::<f64>() * out.dx * out.dp;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Telegraph statistics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub bright: bool,
    /// Touches the start or end of the record.
    pub censored: bool,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Dwell-time statistics in the time unit of the input record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellStats {
    pub threshold: f64,
    pub min_dwell: f64,
    pub segments: Vec<Segment>,
    pub dark_dwells: Vec<f64>,
    pub bright_dwells: Vec<f64>,
    pub mean_dark: Option<f64>,
    pub mean_bright: Option<f64>,
    pub switches: usize,
}

impl DwellStats {
    /// Classification of each sample time implied by the segments.
    pub fn classify(&self, times: &[f64]) -> Vec<bool> {
        let mut k = 0;
        times
            .iter()
            .map(|&t| {
                while k + 1 < self.segments.len() && t >= self.segments[k + 1].start {
                    k += 1;
                }
                self.segments[k].bright
            })
            .collect()
    }
}

/// Splits a two-level record into dark (`≤ threshold`) and bright segments.
/// An excursion to the other class becomes a switch only if it lasts at
/// least `min_dwell`; the switch is then placed at its first sample.
/// Means use interior segments and fall back to the censored edge segments
/// for a phase that has no interior segment.
pub fn telegraph_stats(times: &[f64], values: &[f64], threshold: f64, min_dwell: f64) -> Result<DwellStats> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), found: values.len() });
    }
    if times.len() < 2 {
        return Err(Error::Empty("telegraph record"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("record times must be strictly increasing".into()));
    }
    let spacing = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if min_dwell < spacing * (1.0 - 1e-9) {
        return Err(Error::InvalidInput(format!("min_dwell {min_dwell} is below the sample spacing {spacing}")));
    }
    let t0 = times[0];
    let t_end = *times.last().unwrap();
    if t_end - t0 < 10.0 * min_dwell {
        return Err(Error::InvalidInput(format!(
            "record length {} is shorter than 10 min_dwell",
            t_end - t0
        )));
    }
    let class: Vec<bool> = values.iter().map(|&v| v > threshold).collect();
    // Runs of equal raw class: (first index, one past last index).
    let mut runs = Vec::new();
    let mut s = 0;
    for i in 1..=class.len() {
        if i == class.len() || class[i] != class[s] {
            runs.push((s, i));
            s = i;
        }
    }
    let run_duration = |a: usize, b: usize| if b < times.len() { times[b] - times[a] } else { t_end - times[a] };

    let mut starts: Vec<(usize, bool)> = vec![(0, class[0])];
    let mut state = class[0];
    for &(a, b) in &runs[1..] {
        if class[a] != state && run_duration(a, b) >= min_dwell {
            state = class[a];
            starts.push((a, state));
        }
    }
    let mut segments = Vec::with_capacity(starts.len());
    for (k, &(a, bright)) in starts.iter().enumerate() {
        let end = starts.get(k + 1).map(|&(b, _)| times[b]).unwrap_or(t_end);
        segments.push(Segment { start: times[a], end, bright, censored: k == 0 || k + 1 == starts.len() });
    }
    let collect = |bright: bool, interior: bool| -> Vec<f64> {
        segments.iter().filter(|s| s.bright == bright && s.censored != interior).map(Segment::duration).collect()
    };
    let pick = |bright: bool| {
        let v = collect(bright, true);
        if v.is_empty() {
            collect(bright, false)
        } else {
            v
        }
    };
    let dark_dwells = pick(false);
    let bright_dwells = pick(true);
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(DwellStats {
        threshold,
        min_dwell,
        switches: segments.len() - 1,
        mean_dark: mean(&dark_dwells),
        mean_bright: mean(&bright_dwells),
        dark_dwells,
        bright_dwells,
        segments,
    })
}

/// Midpoint between the two dominant histogram modes.
pub fn default_threshold(hist: &Histogram) -> Option<f64> {
    let c = hist.centers();
    find_modes(hist).map(|(a, _, b)| 0.5 * (c[a] + c[b]))
}
