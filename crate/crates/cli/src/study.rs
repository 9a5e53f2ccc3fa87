//! Replicate Monte-Carlo studies: simulate, fit on the training split,
//! standard errors by profile likelihood, metrics on the test split, and
//! the aggregate Bias/SSE/SEE/CP95/RE/MSE summary.

use rayon::prelude::*;
use serde::Serialize;

use icdeep_core::em::fit;
use icdeep_core::inference::covariance;
use icdeep_core::metrics::{integrated_brier, mse_survival, relative_error};
use icdeep_core::simulate::{generate, observations, SimRecord};
use icdeep_core::transform::TransformationFamily;
use icdeep_core::{Error, FitResult, Result};

use crate::config::{FitSettings, SimSettings, StudySettings};

/// splitmix64 step for deriving independent per-replicate seeds.
fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyConfig {
    pub sim: SimSettings,
    pub fit: FitSettings,
    pub study: StudySettings,
}

/// Outcome of one replicate; `error` is set when the fit aborted.
#[derive(Debug, Clone)]
pub struct ReplicateRow {
    pub index: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub covered: Vec<bool>,
    pub converged: bool,
    pub iters: usize,
    pub loglik: f64,
    pub re_phi: f64,
    pub mse_surv: f64,
    pub ibs: f64,
}

#[derive(Debug, Clone)]
pub struct StudyAggregate {
    pub n_ok: usize,
    pub n_failed: usize,
    pub beta_mean: Vec<f64>,
    pub bias: Vec<f64>,
    pub sse: Vec<f64>,
    pub see: Vec<f64>,
    pub cp95: Vec<f64>,
    pub re_mean: f64,
    pub mse_mean: f64,
    pub ibs_mean: f64,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub rows: Vec<ReplicateRow>,
    pub aggregate: StudyAggregate,
}

fn run_replicate(cfg: &StudyConfig, index: usize) -> Result<ReplicateRow> {
    let rep_seed = derive_seed(cfg.study.seed, index as u64);
    let mut sim = cfg.sim.clone();
    sim.seed = derive_seed(rep_seed, 1);
    let sim_cfg = sim.sim_config()?;
    let out = generate(&sim_cfg)?;

    let train = observations(out.train());
    let mut settings = cfg.fit.clone();
    settings.seed = derive_seed(rep_seed, 2);
    let opts = settings.fit_options(sim_cfg.dim_w());
    let fitted: FitResult = fit(&train, &opts)?;

    let (se, covered) = if settings.no_se {
        (vec![f64::NAN; 2], vec![false; 2])
    } else {
        let cov = covariance(&train, &fitted, &opts, &settings.profile_config())?;
        let covered = (0..2)
            .map(|j| {
                let half = 1.96 * cov.se[j];
                (fitted.params.beta[j] - half..=fitted.params.beta[j] + half).contains(&sim_cfg.beta_true[j])
            })
            .collect();
        (cov.se, covered)
    };

    let test = out.test();
    let (re_phi, mse_surv, ibs) = test_metrics(&fitted, &sim_cfg, test, cfg.study.with_ibs)?;

    Ok(ReplicateRow {
        index,
        seed: rep_seed,
        error: None,
        beta: fitted.params.beta.clone(),
        se,
        covered,
        converged: fitted.converged,
        iters: fitted.n_iters,
        loglik: fitted.final_loglik(),
        re_phi,
        mse_surv,
        ibs,
    })
}

fn test_metrics(
    fitted: &FitResult,
    sim_cfg: &icdeep_core::SimConfig,
    test: &[SimRecord],
    with_ibs: bool,
) -> Result<(f64, f64, f64)> {
    let test_obs = observations(test);
    let phi_hat: Vec<f64> = test_obs.iter().map(|o| fitted.params.phi(o.w())).collect();
    let phi_true: Vec<f64> = test.iter().map(|r| r.phi_true).collect();
    let re_phi = relative_error(&phi_hat, &phi_true)?;

    let fam_true = TransformationFamily::new(sim_cfg.r_true)?;
    let lin_true: Vec<f64> = test
        .iter()
        .map(|r| {
            let o = &r.observation;
            sim_cfg.beta_true.iter().zip(o.x()).map(|(b, x)| b * x).sum::<f64>() + r.phi_true
        })
        .collect();
    let t_true: Vec<f64> = test.iter().map(|r| r.t_true).collect();
    let s_true =
        |i: usize, t: f64| fam_true.survival_factor(sim_cfg.lambda_slope * t * lin_true[i].exp());
    let s_hat = |i: usize, t: f64| fitted.params.survival(&test_obs[i], t);
    let mse_surv = mse_survival(&s_hat, s_true, &t_true, 100);
    let ibs = if with_ibs { integrated_brier(&s_hat, &test_obs, 200)? } else { f64::NAN };
    Ok((re_phi, mse_surv, ibs))
}

/// Runs the whole study with replicate-level parallelism. Failed
/// replicates are recorded and excluded from the aggregate.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    if cfg.study.replicates < 2 {
        return Err(Error::Config("a replicate study needs at least 2 replicates".into()));
    }
    let rows: Vec<ReplicateRow> = (0..cfg.study.replicates)
        .into_par_iter()
        .map(|i| {
            run_replicate(cfg, i).unwrap_or_else(|e| ReplicateRow {
                index: i,
                seed: derive_seed(cfg.study.seed, i as u64),
                error: Some(e.to_string()),
                beta: vec![f64::NAN; 2],
                se: vec![f64::NAN; 2],
                covered: vec![false; 2],
                converged: false,
                iters: 0,
                loglik: f64::NAN,
                re_phi: f64::NAN,
                mse_surv: f64::NAN,
                ibs: f64::NAN,
            })
        })
        .collect();
    let beta_true = cfg.sim.sim_config()?.beta_true;
    let aggregate = aggregate(&beta_true, &rows);
    Ok(StudyReport { config: cfg.clone(), rows, aggregate })
}

fn aggregate(beta_true: &[f64], rows: &[ReplicateRow]) -> StudyAggregate {
    let ok: Vec<&ReplicateRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let n_ok = ok.len();
    let n = n_ok.max(1) as f64;
    let p = beta_true.len();
    let mut beta_mean = vec![0.0; p];
    let mut see = vec![0.0; p];
    let mut cp95 = vec![0.0; p];
    for row in &ok {
        for j in 0..p {
            beta_mean[j] += row.beta[j] / n;
            see[j] += row.se[j] / n;
            cp95[j] += f64::from(row.covered[j]) / n;
        }
    }
    let mut sse = vec![0.0; p];
    if n_ok > 1 {
        for j in 0..p {
            let var: f64 =
                ok.iter().map(|r| (r.beta[j] - beta_mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
            sse[j] = var.sqrt();
        }
    }
    let bias: Vec<f64> = (0..p).map(|j| beta_mean[j] - beta_true[j]).collect();
    let mean_of = |f: &dyn Fn(&ReplicateRow) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n;
    StudyAggregate {
        n_ok,
        n_failed: rows.len() - n_ok,
        beta_mean,
        bias,
        sse,
        see,
        cp95,
        re_mean: mean_of(&|r| r.re_phi),
        mse_mean: mean_of(&|r| r.mse_surv),
        ibs_mean: mean_of(&|r| r.ibs),
    }
}
