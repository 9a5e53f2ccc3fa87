//! Implementations of the CLI subcommands.

use std::path::Path;

use rayon::prelude::*;

use icdeep_core::dataset::{read_dataset, read_truth, write_dataset, write_truth};
use icdeep_core::em::fit;
use icdeep_core::inference::covariance;
use icdeep_core::metrics::{integrated_brier, relative_error};
use icdeep_core::simulate::{generate, observations};
use icdeep_core::{Error, FitResult, Observation, Result};

use crate::artifact::FitArtifact;
use crate::config::{FitSettings, SelectCriterion, SelectSettings, SimSettings};

/// Writes a simulated dataset (and optional truth sidecar) to CSV.
pub fn cmd_simulate(sim: &SimSettings, out: &Path, truth_out: Option<&Path>) -> Result<()> {
    let cfg = sim.sim_config()?;
    let data = generate(&cfg)?;
    write_dataset(out, &observations(&data.records))?;
    if let Some(tp) = truth_out {
        write_truth(tp, &data.records)?;
    }
    Ok(())
}

/// Positional protocol split: first 64% training, next 16% validation,
/// remaining 20% test.
pub fn protocol_split(n: usize) -> (usize, usize) {
    ((n * 64) / 100, (n * 16) / 100)
}

/// The validation-likelihood tuning grid: hidden layers in {2, 3},
/// l1 in {0.01, 0.05}, learning rate in {1e-4, 3e-4}.
fn tuning_grid(base: &FitSettings) -> Vec<FitSettings> {
    let mut grid = Vec::new();
    for &layers in &[2usize, 3] {
        for &l1 in &[0.01, 0.05] {
            for &lr in &[1e-4, 3e-4] {
                let mut s = base.clone();
                s.hidden_layers = layers;
                s.l1 = l1;
                s.learning_rate = lr;
                s.tune = false;
                grid.push(s);
            }
        }
    }
    grid
}

fn fit_once(train: &[Observation], settings: &FitSettings) -> Result<FitResult> {
    let d = train.first().map(|o| o.w().len()).unwrap_or(0);
    fit(train, &settings.fit_options(d))
}

/// Fits the model to a dataset and writes the artifact.
///
/// Without `--tune` the whole file is the fitting sample. With `--tune`
/// the positional protocol split applies: the grid is fit on the training
/// block, scored by validation log-likelihood, and the winning settings
/// are kept.
pub fn cmd_fit(data_path: &Path, settings: &FitSettings, out: &Path) -> Result<FitArtifact> {
    let data = read_dataset(data_path)?;
    let (chosen, fitted, n_fit) = if settings.tune {
        let (n_train, n_val) = protocol_split(data.len());
        if n_val == 0 {
            return Err(Error::Data("dataset too small for a validation split".into()));
        }
        let train = &data[..n_train];
        let val = &data[n_train..n_train + n_val];
        let candidates = tuning_grid(settings);
        let results: Vec<Result<(FitSettings, FitResult, f64)>> = candidates
            .into_par_iter()
            .map(|s| {
                let fitted = fit_once(train, &s)?;
                let val_ll = fitted.params.loglik(val);
                Ok((s, fitted, val_ll))
            })
            .collect();
        let mut best: Option<(FitSettings, FitResult, f64)> = None;
        let mut errors = Vec::new();
        for r in results {
            match r {
                Ok(cand) => {
                    if best.as_ref().is_none_or(|b| cand.2 > b.2) {
                        best = Some(cand);
                    }
                }
                Err(e) => errors.push(e.to_string()),
            }
        }
        let (s, fitted, _) = best.ok_or_else(|| {
            Error::Numerical(format!("every tuning candidate failed: {}", errors.join("; ")))
        })?;
        (s, fitted, n_train)
    } else {
        let fitted = fit_once(&data, settings)?;
        (settings.clone(), fitted, data.len())
    };

    let cov = if chosen.no_se {
        None
    } else {
        let d = data[0].w().len();
        let opts = chosen.fit_options(d);
        Some(covariance(&data[..n_fit], &fitted, &opts, &chosen.profile_config())?)
    };
    let artifact = FitArtifact::from_fit(&fitted, &chosen, cov, n_fit);
    artifact.save(out)?;
    Ok(artifact)
}

/// Evaluates `Ŝ(t | x, w)` for every subject on a time grid and writes
/// `subject,t,s_hat` rows.
pub fn cmd_predict(artifact_path: &Path, data_path: &Path, times: &[f64], out: &Path) -> Result<()> {
    let artifact = FitArtifact::load(artifact_path)?;
    let data = read_dataset(data_path)?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["subject", "t", "s_hat"]).map_err(Error::from)?;
    for (i, obs) in data.iter().enumerate() {
        for &t in times {
            let s = artifact.params.survival(obs, t);
            wtr.write_record([i.to_string(), format!("{t}"), format!("{s}")]).map_err(Error::from)?;
        }
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    let tmp = out.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, out)?;
    Ok(())
}

/// Evaluation scope for `cmd_evaluate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    /// The positional test block (last 20%), matching the protocol.
    Test,
    /// Every row of the dataset.
    All,
}

/// Optional description of the generating model, needed only for the
/// survival MSE (which compares against the true survival function).
#[derive(Debug, Clone)]
pub struct TrueModel {
    pub r: f64,
    pub beta: Vec<f64>,
    pub slope: f64,
}

/// Computes metrics for a saved fit against a dataset with truth sidecar.
/// Returns `(re_phi, mse_surv, ibs)`; `mse_surv` is `None` without a
/// generating-model description.
pub fn cmd_evaluate(
    artifact_path: &Path,
    data_path: &Path,
    truth_path: &Path,
    split: EvalSplit,
    true_model: Option<&TrueModel>,
    out: Option<&Path>,
) -> Result<(f64, Option<f64>, f64)> {
    let artifact = FitArtifact::load(artifact_path)?;
    let data = read_dataset(data_path)?;
    let truth = read_truth(truth_path)?;
    if truth.len() != data.len() {
        return Err(Error::Data(format!(
            "truth sidecar has {} rows but the dataset has {}",
            truth.len(),
            data.len()
        )));
    }
    let start = match split {
        EvalSplit::All => 0,
        EvalSplit::Test => {
            let (n_train, n_val) = protocol_split(data.len());
            n_train + n_val
        }
    };
    let eval_obs = &data[start..];
    let eval_truth = &truth[start..];
    if eval_obs.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }

    let phi_hat: Vec<f64> = eval_obs.iter().map(|o| artifact.params.phi(o.w())).collect();
    let phi_true: Vec<f64> = eval_truth.iter().map(|(_, p)| *p).collect();
    let re_phi = relative_error(&phi_hat, &phi_true)?;

    let s_hat = |i: usize, t: f64| artifact.params.survival(&eval_obs[i], t);
    let mse = match true_model {
        Some(tm) => {
            let fam = icdeep_core::TransformationFamily::new(tm.r)?;
            let t_true: Vec<f64> = eval_truth.iter().map(|(t, _)| *t).collect();
            let lin: Vec<f64> = eval_obs
                .iter()
                .zip(eval_truth)
                .map(|(o, (_, phi))| {
                    tm.beta.iter().zip(o.x()).map(|(b, x)| b * x).sum::<f64>() + phi
                })
                .collect();
            let s_true = |i: usize, t: f64| fam.survival_factor(tm.slope * t * lin[i].exp());
            Some(icdeep_core::metrics::mse_survival(&s_hat, s_true, &t_true, 100))
        }
        None => None,
    };
    let ibs = integrated_brier(&s_hat, eval_obs, 200)?;

    if let Some(path) = out {
        let mut text = String::from("metric,value\n");
        text.push_str(&format!("re_phi,{re_phi}\n"));
        if let Some(m) = mse {
            text.push_str(&format!("mse_surv,{m}\n"));
        }
        text.push_str(&format!("ibs,{ibs}\n"));
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text.as_bytes())?;
        std::fs::rename(&tmp, path)?;
    }
    Ok((re_phi, mse, ibs))
}

/// Per-grid-point outcome of the transformation search.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub r: f64,
    pub val_loglik: f64,
    pub val_ibs: f64,
    pub converged: bool,
    pub error: Option<String>,
}

/// Fits every `r` on the grid (training block), scores each on the
/// validation block, and selects per the criterion with ties broken toward
/// smaller `r`. Returns the chosen `r` and the full table.
pub fn cmd_select_r(
    data_path: &Path,
    settings: &FitSettings,
    select: &SelectSettings,
    out: Option<&Path>,
) -> Result<(f64, Vec<GridPoint>)> {
    let data = read_dataset(data_path)?;
    let (n_train, n_val) = protocol_split(data.len());
    if n_val == 0 {
        return Err(Error::Data("dataset too small for a validation split".into()));
    }
    let train = &data[..n_train];
    let val = &data[n_train..n_train + n_val];
    let grid = select.grid()?;
    let table: Vec<GridPoint> = grid
        .par_iter()
        .map(|&r| {
            let mut s = settings.clone();
            s.r = r;
            match fit_once(train, &s) {
                Ok(fitted) => {
                    let val_loglik = fitted.params.loglik(val);
                    let s_hat = |i: usize, t: f64| fitted.params.survival(&val[i], t);
                    match integrated_brier(s_hat, val, 200) {
                        Ok(val_ibs) => GridPoint {
                            r,
                            val_loglik,
                            val_ibs,
                            converged: fitted.converged,
                            error: None,
                        },
                        Err(e) => GridPoint {
                            r,
                            val_loglik,
                            val_ibs: f64::NAN,
                            converged: fitted.converged,
                            error: Some(e.to_string()),
                        },
                    }
                }
                Err(e) => GridPoint {
                    r,
                    val_loglik: f64::NAN,
                    val_ibs: f64::NAN,
                    converged: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let mut chosen: Option<&GridPoint> = None;
    for point in table.iter().filter(|p| p.error.is_none()) {
        let better = match (select.criterion, chosen) {
            (_, None) => true,
            (SelectCriterion::Loglik, Some(best)) => point.val_loglik > best.val_loglik,
            (SelectCriterion::Ibs, Some(best)) => point.val_ibs < best.val_ibs,
        };
        if better {
            chosen = Some(point);
        }
    }
    let chosen = chosen.ok_or_else(|| Error::Numerical("every grid fit failed".into()))?;

    if let Some(path) = out {
        let mut text = String::from("r,val_loglik,val_ibs,converged,status\n");
        for p in &table {
            let status = p.error.as_deref().unwrap_or("ok");
            let ll = if p.val_loglik.is_nan() { String::new() } else { format!("{}", p.val_loglik) };
            let ib = if p.val_ibs.is_nan() { String::new() } else { format!("{}", p.val_ibs) };
            text.push_str(&format!("{},{},{},{},{}\n", p.r, ll, ib, u8::from(p.converged), status));
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text.as_bytes())?;
        std::fs::rename(&tmp, path)?;
    }
    Ok((chosen.r, table))
}
