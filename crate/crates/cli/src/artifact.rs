//! Self-describing fit artifact: parameters, diagnostics, covariance, and
//! a configuration echo sufficient to reproduce the fit. JSON with exact
//! float round-tripping, written atomically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use icdeep_core::inference::CovarianceResult;
use icdeep_core::{Error, FitResult, ModelParams, Result};

use crate::config::FitSettings;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitArtifact {
    pub version: u32,
    pub r: f64,
    pub seed: u64,
    pub params: ModelParams,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub n_iters: usize,
    pub floored_terms: usize,
    pub covariance: Option<CovarianceResult>,
    /// Settings the fit actually ran with (after tuning, if any).
    pub settings: FitSettings,
    /// Number of rows of the dataset used for fitting (taken from the
    /// front of the file).
    pub n_fit_rows: usize,
}

impl FitArtifact {
    pub fn from_fit(
        fit: &FitResult,
        settings: &FitSettings,
        covariance: Option<CovarianceResult>,
        n_fit_rows: usize,
    ) -> Self {
        FitArtifact {
            version: ARTIFACT_VERSION,
            r: settings.r,
            seed: settings.seed,
            params: fit.params.clone(),
            loglik_trace: fit.loglik_trace.clone(),
            converged: fit.converged,
            n_iters: fit.n_iters,
            floored_terms: fit.floored_terms,
            covariance,
            settings: settings.clone(),
            n_fit_rows,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("artifact serialization failed: {e}")))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json.as_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let artifact: FitArtifact =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("bad artifact file: {e}")))?;
        if artifact.version != ARTIFACT_VERSION {
            return Err(Error::Data(format!(
                "unsupported artifact version {} (expected {ARTIFACT_VERSION})",
                artifact.version
            )));
        }
        Ok(artifact)
    }
}
