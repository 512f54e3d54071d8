//! JSON run configuration: parsing, defaults and resolution into core types.
//!
//! Sections: `space`, `params`, `dissipation`, `drive`, `run`. Frequencies
//! are ordinary frequencies in MHz and times are in µs. Unknown keys are
//! rejected.

use std::f64::consts::SQRT_2;

use blockade_core::analysis::GridSpec;
use blockade_core::experiments::{preset, Binning, SweepAxis, SweepSpec};
use blockade_core::lindblad::{AtomParams, SystemParams};
use blockade_core::operators::transmon_derive;
use blockade_core::solvers::{Frame, McwfOptions, SteadyMethod};
use blockade_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub space: SpaceCfg,
    pub params: ParamsCfg,
    pub dissipation: DissipationCfg,
    #[serde(default)]
    pub drive: DriveCfg,
    #[serde(default)]
    pub run: RunCfg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceCfg {
    pub n_max: usize,
    /// Must match the number of atoms when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_atoms: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsCfg {
    pub cavity_freq: f64,
    #[serde(default)]
    pub atoms: Vec<AtomCfg>,
}

/// One atom. Either `nu_eg` directly or the transmon pair `e_c`, `e_j`;
/// `nu_fe` defaults to `nu_eg − e_c` and `g2` to `√2·g1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomCfg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_eg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_fe: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_j: Option<f64>,
    pub g1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipationCfg {
    /// Field decay κ (half width).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Measured linewidth 2κ, alternative to `kappa`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_fwhm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_par: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_perp: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveCfg {
    /// Drive frequency; the cavity frequency when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq: Option<f64>,
    #[serde(default)]
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolveMethod {
    Mcwf,
    Me,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QSource {
    /// Q of the steady-state reduced density matrix.
    Steady,
    /// Q of the trajectory-averaged reduced density matrix plus the
    /// kernel density of the sampled field amplitudes.
    Trajectories,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCfg {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub trajectories: usize,
    pub burn_in: f64,
    pub duration: f64,
    pub sample_dt: f64,
    pub samples: usize,
    pub bins: Binning,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<f64>,
    /// Drive amplitude per grid value (MHz).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_eta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalSearch {
    /// Drive amplitude bracket (MHz).
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
}

/// Workflow settings. Every field has a default; the resolved form written
/// to the manifest has all of them filled in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunCfg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_threshold: Option<f64>,

    // evolve
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<EvolveMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<usize>,

    // steady
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_method: Option<SteadyMethod>,

    // spectrum
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_manifold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<Frame>,

    // qfunc
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_source: Option<QSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_add: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critical_search: Option<CriticalSearch>,

    // sweep / telegraph / trajectory-based qfunc
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_dwell: Option<f64>,
}

/// Parses a config document; errors carry the line and column.
pub fn parse(text: &str) -> Result<Config> {
    serde_json::from_str(text).map_err(|e| {
        Error::InvalidInput(format!("config line {}, column {}: {e}", e.line(), e.column()))
    })
}

impl Config {
    /// Config carrying a preset's parameters and sweep settings.
    pub fn from_preset(name: &str) -> Result<Config> {
        let p = preset(name)?;
        let mut cfg = Config::from_params(&p.spec.base);
        cfg.run.seed = Some(p.spec.master_seed);
        cfg.run.rtol = Some(p.spec.mcwf.rtol);
        cfg.run.atol = Some(p.spec.mcwf.atol);
        cfg.run.truncation_threshold = Some(p.spec.mcwf.truncation_threshold);
        cfg.run.sweep = Some(SweepCfg {
            axis: p.spec.axis,
            values: p.spec.values.clone(),
            trajectories: p.spec.trajectories,
            burn_in: p.spec.burn_in,
            duration: p.spec.duration,
            sample_dt: p.spec.sample_dt,
            samples: p.spec.samples,
            bins: p.spec.binning,
            split: p.spec.split,
            point_eta: p.spec.point_eta.clone(),
        });
        if name == "fig4_qfunc_scaled" {
            let (lo, hi) = (p.spec.values[0], *p.spec.values.last().unwrap());
            cfg.run.critical_search = Some(CriticalSearch { lo, hi, iterations: 5 });
            cfg.run.q_source = Some(QSource::Trajectories);
        }
        Ok(cfg)
    }

    pub fn from_params(p: &SystemParams) -> Config {
        Config {
            space: SpaceCfg { n_max: p.n_max, n_atoms: Some(p.n_atoms()) },
            params: ParamsCfg {
                cavity_freq: p.cavity_freq,
                atoms: p
                    .atoms
                    .iter()
                    .map(|a| AtomCfg {
                        nu_eg: Some(a.nu_eg),
                        nu_fe: Some(a.nu_fe),
                        e_c: None,
                        e_j: None,
                        g1: a.g1,
                        g2: Some(a.g2),
                    })
                    .collect(),
            },
            dissipation: DissipationCfg {
                kappa: Some(p.kappa),
                kappa_fwhm: None,
                gamma_par: Some(p.gamma_par),
                gamma_perp: Some(p.gamma_perp),
            },
            drive: DriveCfg { freq: Some(p.drive_freq), eta: p.eta },
            run: RunCfg::default(),
        }
    }

    /// Physical parameters with every default applied.
    pub fn system_params(&self) -> Result<SystemParams> {
        if let Some(n) = self.space.n_atoms {
            if n != self.params.atoms.len() {
                return Err(Error::InvalidInput(format!(
                    "space.n_atoms = {n} but params.atoms lists {} atom(s)",
                    self.params.atoms.len()
                )));
            }
        }
        let kappa = match (self.dissipation.kappa, self.dissipation.kappa_fwhm) {
            (Some(k), None) => k,
            (None, Some(w)) => SystemParams::kappa_from_fwhm(w),
            (Some(_), Some(_)) => {
                return Err(Error::InvalidInput("dissipation: give either kappa or kappa_fwhm, not both".into()))
            }
            (None, None) => return Err(Error::InvalidInput("dissipation: kappa (or kappa_fwhm) is required".into())),
        };
        let mut atoms = Vec::with_capacity(self.params.atoms.len());
        for (k, a) in self.params.atoms.iter().enumerate() {
            let nu_eg = match (a.nu_eg, a.e_j) {
                (Some(v), None) => v,
                (None, Some(ej)) => {
                    let ec = a.e_c.ok_or_else(|| {
                        Error::InvalidInput(format!("params.atoms[{k}]: e_j needs e_c"))
                    })?;
                    transmon_derive(ec, ej)?.nu_eg
                }
                (Some(_), Some(_)) => {
                    return Err(Error::InvalidInput(format!("params.atoms[{k}]: give nu_eg or e_j, not both")))
                }
                (None, None) => return Err(Error::InvalidInput(format!("params.atoms[{k}]: nu_eg is required"))),
            };
            let nu_fe = match (a.nu_fe, a.e_c) {
                (Some(v), _) => v,
                (None, Some(ec)) => nu_eg - ec,
                (None, None) => {
                    return Err(Error::InvalidInput(format!("params.atoms[{k}]: nu_fe or e_c is required")))
                }
            };
            atoms.push(AtomParams { nu_eg, nu_fe, g1: a.g1, g2: a.g2.unwrap_or(SQRT_2 * a.g1) });
        }
        let p = SystemParams {
            drive_freq: self.drive.freq.unwrap_or(self.params.cavity_freq),
            cavity_freq: self.params.cavity_freq,
            atoms,
            eta: self.drive.eta,
            kappa,
            gamma_par: self.dissipation.gamma_par.unwrap_or(0.1 * kappa),
            gamma_perp: self.dissipation.gamma_perp.unwrap_or(kappa),
            n_max: self.space.n_max,
        };
        p.validate()?;
        p.space()?;
        Ok(p)
    }

    pub fn mcwf_options(&self) -> McwfOptions {
        let d = McwfOptions::default();
        McwfOptions {
            rtol: self.run.rtol.unwrap_or(d.rtol),
            atol: self.run.atol.unwrap_or(d.atol),
            truncation_threshold: self.run.truncation_threshold.unwrap_or(d.truncation_threshold),
            ..d
        }
    }

    pub fn q_grid(&self) -> GridSpec {
        GridSpec::square(self.run.q_half_width.unwrap_or(6.0), self.run.q_points.unwrap_or(121))
    }

    /// Sweep spec from `run.sweep`, or a default single-point sweep at the
    /// configured drive for trajectory workflows.
    pub fn sweep_spec(&self, seed: u64) -> Result<SweepSpec> {
        let base = self.system_params()?;
        let s = self.run.sweep.clone().ok_or_else(|| Error::InvalidInput("run.sweep section is required".into()))?;
        let spec = SweepSpec {
            base,
            axis: s.axis,
            values: s.values,
            trajectories: s.trajectories,
            master_seed: seed,
            burn_in: s.burn_in,
            duration: s.duration,
            sample_dt: s.sample_dt,
            samples: s.samples,
            binning: s.bins,
            split: s.split,
            point_eta: s.point_eta,
            mcwf: self.mcwf_options(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Copy of this config with the physical sections rewritten in resolved
    /// form (explicit frequencies, rates and couplings).
    pub fn resolved(&self, run: RunCfg) -> Result<Config> {
        let p = self.system_params()?;
        let mut cfg = Config::from_params(&p);
        cfg.run = run;
        Ok(cfg)
    }
}
