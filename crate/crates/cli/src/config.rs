//! Resolved command settings: profile defaults, then the optional JSON
//! configuration file, then explicit flags, later layers winning.

use std::path::Path;

use serde::{Deserialize, Serialize};

use icdeep_core::em::{BasisConfig, EmConfig, FitOptions};
use icdeep_core::inference::ProfileConfig;
use icdeep_core::net::NetConfig;
use icdeep_core::simulate::SimConfig;
use icdeep_core::{Error, KnotPlacement, Result};

/// Named default bundles: `desk` is sized for a laptop run, `paper` mirrors
/// the publication-scale protocol (200 replicates, per-replicate tuning).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

/// Simulation settings (one dataset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub case: usize,
    pub n: usize,
    pub r: f64,
    pub seed: u64,
    /// Baseline hazard slope; defaults to the per-case benchmark value.
    pub slope: Option<f64>,
    pub gap_mean: f64,
    pub study_length: f64,
    /// Scale on the nonlinear effect (0 gives a purely linear truth).
    pub phi_scale: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            case: 1,
            n: 500,
            r: 0.0,
            seed: 0,
            slope: None,
            gap_mean: 0.5,
            study_length: 8.0,
            phi_scale: 1.0,
        }
    }
}

impl SimSettings {
    pub fn sim_config(&self) -> Result<SimConfig> {
        let mut cfg = SimConfig::for_case(self.case, self.n, self.r, self.seed)?;
        if let Some(s) = self.slope {
            cfg.lambda_slope = s;
        }
        cfg.gap_mean = self.gap_mean;
        cfg.study_length = self.study_length;
        cfg.phi_scale = self.phi_scale;
        Ok(cfg)
    }
}

/// Model and estimation settings for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    pub r: f64,
    pub degree: usize,
    pub interior_knots: usize,
    pub placement: KnotPlacement,
    /// Number of hidden layers (each `neurons` wide).
    pub hidden_layers: usize,
    pub neurons: usize,
    pub l1: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub quad_order: usize,
    /// Fit the linear-effects baseline `φ ≡ 0` instead of the network.
    pub freeze_phi: bool,
    /// Grid-search layers/l1/learning-rate by validation log-likelihood.
    pub tune: bool,
    /// Skip the profile-likelihood standard errors.
    pub no_se: bool,
    pub profile_max_iters: usize,
    pub h_multiplier: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            r: 0.0,
            degree: 3,
            interior_knots: 3,
            placement: KnotPlacement::Quantile,
            hidden_layers: 2,
            neurons: 50,
            l1: 0.01,
            learning_rate: 1e-4,
            batch_size: 50,
            epochs: 20,
            dropout: 0.1,
            seed: 0,
            max_iters: 200,
            tol: 1e-3,
            quad_order: 30,
            freeze_phi: false,
            tune: false,
            no_se: false,
            profile_max_iters: 50,
            h_multiplier: 1.0,
        }
    }
}

impl FitSettings {
    /// Core fit options for covariate dimension `d`.
    pub fn fit_options(&self, input_dim: usize) -> FitOptions {
        let net = if self.freeze_phi {
            None
        } else {
            let hidden = vec![self.neurons; self.hidden_layers];
            let mut cfg = NetConfig::new(input_dim, &hidden);
            cfg.l1_penalty = self.l1;
            cfg.learning_rate = self.learning_rate;
            cfg.batch_size = self.batch_size;
            cfg.epochs_per_em_step = self.epochs;
            cfg.dropout_rate = self.dropout;
            cfg.seed = self.seed;
            Some(cfg)
        };
        FitOptions {
            r: self.r,
            basis: BasisConfig {
                degree: self.degree,
                n_interior: self.interior_knots,
                placement: self.placement,
            },
            em: EmConfig {
                max_iters: self.max_iters,
                tol: self.tol,
                quad_order: self.quad_order,
                net,
                max_step_halvings: 10,
            },
        }
    }

    pub fn profile_config(&self) -> ProfileConfig {
        ProfileConfig { h_multiplier: self.h_multiplier, max_iters: self.profile_max_iters }
    }
}

/// Replicate-study settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySettings {
    pub replicates: usize,
    pub seed: u64,
    /// Also compute the integrated Brier score per replicate.
    pub with_ibs: bool,
}

impl Default for StudySettings {
    fn default() -> Self {
        StudySettings { replicates: 50, seed: 0, with_ibs: true }
    }
}

/// Transformation-grid selection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectSettings {
    pub r_start: f64,
    pub r_stop: f64,
    pub r_step: f64,
    pub criterion: SelectCriterion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SelectCriterion {
    /// Argmax of the validation log-likelihood (default).
    Loglik,
    /// Argmin of the validation integrated Brier score.
    Ibs,
}

impl Default for SelectSettings {
    fn default() -> Self {
        SelectSettings { r_start: 0.0, r_stop: 5.0, r_step: 0.1, criterion: SelectCriterion::Loglik }
    }
}

impl SelectSettings {
    /// Expands the inclusive grid, robust to the usual float-step drift.
    pub fn grid(&self) -> Result<Vec<f64>> {
        if !(self.r_step > 0.0) || self.r_stop < self.r_start || self.r_start < 0.0 {
            return Err(Error::Config(format!(
                "invalid r grid: start {}, stop {}, step {}",
                self.r_start, self.r_stop, self.r_step
            )));
        }
        let count = ((self.r_stop - self.r_start) / self.r_step + 0.5).floor() as usize + 1;
        Ok((0..count).map(|k| self.r_start + k as f64 * self.r_step).collect())
    }
}

/// On-disk configuration file: one optional section per command.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub simulate: Option<SimSettings>,
    pub fit: Option<FitSettings>,
    pub replicate: Option<StudySettings>,
    pub select_r: Option<SelectSettings>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config file: {e}")))
    }
}

/// Profile-level defaults applied before file and flag overrides.
pub fn profiled_fit(profile: Profile) -> FitSettings {
    let mut s = FitSettings::default();
    if profile == Profile::Paper {
        s.tune = true;
    }
    s
}

pub fn profiled_study(profile: Profile) -> StudySettings {
    let mut s = StudySettings::default();
    if profile == Profile::Paper {
        s.replicates = 200;
    }
    s
}

/// Flag-override helper: `Some` replaces the current value.
pub fn ov<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}
