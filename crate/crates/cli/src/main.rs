//! `icdeep`: simulate, fit, predict, evaluate, replicate, select-r.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use icdeep_cli::commands::{self, EvalSplit, TrueModel};
use icdeep_cli::config::{
    ov, profiled_fit, profiled_study, ConfigFile, FitSettings, Profile, SelectCriterion,
    SimSettings, StudySettings,
};
use icdeep_cli::report::write_report;
use icdeep_cli::study::{run_study, StudyConfig};
use icdeep_cli::exit_code;
use icdeep_core::{Error, KnotPlacement, Result};

#[derive(Parser)]
#[command(
    name = "icdeep",
    version,
    about = "Deep partially linear transformation models for interval-censored failure times"
)]
struct Cli {
    /// JSON configuration file; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Default bundle: `desk` for laptop-scale runs, `paper` for the
    /// publication-scale protocol.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    profile: Profile,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a benchmark dataset (CSV plus optional truth sidecar).
    Simulate(SimArgs),
    /// Fit the model to a dataset CSV and save a fit artifact.
    Fit(FitArgs),
    /// Tabulate fitted survival curves on a time grid.
    Predict(PredictArgs),
    /// Compute metrics for a saved fit against a dataset with truth.
    Evaluate(EvalArgs),
    /// Run a replicate Monte-Carlo study and write the report CSV.
    Replicate(ReplicateArgs),
    /// Fit a grid of transformation parameters and pick the best.
    SelectR(SelectArgs),
}

#[derive(Args, Clone)]
struct SimArgs {
    #[arg(long)]
    case: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// True transformation parameter of the generating model.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Baseline hazard slope (defaults to the per-case benchmark value).
    #[arg(long)]
    slope: Option<f64>,
    #[arg(long)]
    gap_mean: Option<f64>,
    #[arg(long)]
    study_length: Option<f64>,
    /// Scale on the nonlinear effect; 0 gives a purely linear truth.
    #[arg(long)]
    phi_scale: Option<f64>,
    /// Output dataset CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional truth sidecar CSV (`t_true,phi_true`).
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

impl SimArgs {
    fn apply(&self, s: &mut SimSettings) {
        ov(&mut s.case, self.case);
        ov(&mut s.n, self.n);
        ov(&mut s.r, self.r);
        ov(&mut s.seed, self.seed);
        if self.slope.is_some() {
            s.slope = self.slope;
        }
        ov(&mut s.gap_mean, self.gap_mean);
        ov(&mut s.study_length, self.study_length);
        ov(&mut s.phi_scale, self.phi_scale);
    }
}

#[derive(Args, Clone)]
struct FitFlags {
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    interior_knots: Option<usize>,
    /// Interior-knot placement: quantile or uniform.
    #[arg(long)]
    placement: Option<String>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    neurons: Option<usize>,
    #[arg(long)]
    l1: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    quad_order: Option<usize>,
    /// Fit the linear-effects baseline (φ ≡ 0).
    #[arg(long)]
    freeze_phi: bool,
    /// Grid-search layers/l1/learning rate by validation log-likelihood.
    #[arg(long)]
    tune: bool,
    /// Skip profile-likelihood standard errors.
    #[arg(long)]
    no_se: bool,
    #[arg(long)]
    profile_max_iters: Option<usize>,
    #[arg(long)]
    h_multiplier: Option<f64>,
}

impl FitFlags {
    fn apply(&self, s: &mut FitSettings) -> Result<()> {
        ov(&mut s.degree, self.degree);
        ov(&mut s.interior_knots, self.interior_knots);
        if let Some(p) = &self.placement {
            s.placement = match p.as_str() {
                "quantile" => KnotPlacement::Quantile,
                "uniform" => KnotPlacement::Uniform,
                other => return Err(Error::Config(format!("unknown placement '{other}'"))),
            };
        }
        ov(&mut s.hidden_layers, self.hidden_layers);
        ov(&mut s.neurons, self.neurons);
        ov(&mut s.l1, self.l1);
        ov(&mut s.learning_rate, self.learning_rate);
        ov(&mut s.batch_size, self.batch_size);
        ov(&mut s.epochs, self.epochs);
        ov(&mut s.dropout, self.dropout);
        ov(&mut s.seed, self.seed);
        ov(&mut s.max_iters, self.max_iters);
        ov(&mut s.tol, self.tol);
        ov(&mut s.quad_order, self.quad_order);
        if self.freeze_phi {
            s.freeze_phi = true;
        }
        if self.tune {
            s.tune = true;
        }
        if self.no_se {
            s.no_se = true;
        }
        ov(&mut s.profile_max_iters, self.profile_max_iters);
        ov(&mut s.h_multiplier, self.h_multiplier);
        Ok(())
    }
}

#[derive(Args, Clone)]
struct FitArgs {
    /// Input dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output artifact path (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Transformation parameter of the fitted model.
    #[arg(long)]
    r: Option<f64>,
    #[command(flatten)]
    fit: FitFlags,
}

#[derive(Args, Clone)]
struct PredictArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Time grid: either `start:stop:count` or a comma-separated list.
    #[arg(long, default_value = "0:8:81")]
    times: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct EvalArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Truth sidecar CSV written by `simulate`.
    #[arg(long)]
    truth: PathBuf,
    /// Rows to evaluate: the positional test block or every row.
    #[arg(long, value_enum, default_value = "test")]
    split: EvalSplit,
    /// Generating-model r (enables the survival MSE).
    #[arg(long)]
    true_r: Option<f64>,
    /// Generating-model linear coefficients, comma separated.
    #[arg(long, default_value = "0.5,-0.5")]
    true_beta: String,
    /// Generating-model baseline hazard slope.
    #[arg(long)]
    true_slope: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ReplicateArgs {
    #[command(flatten)]
    sim: SimArgs2,
    #[command(flatten)]
    fit: FitFlags,
    /// Number of replicates.
    #[arg(long)]
    replicates: Option<usize>,
    /// Master seed; per-replicate seeds are derived from it.
    #[arg(long)]
    master_seed: Option<u64>,
    /// Transformation parameter for the fitted model (defaults to the
    /// generating value).
    #[arg(long)]
    fit_r: Option<f64>,
    /// Skip the integrated Brier score.
    #[arg(long)]
    no_ibs: bool,
    /// Output report CSV.
    #[arg(long)]
    out: PathBuf,
}

/// Simulation flags without output paths (for `replicate`).
#[derive(Args, Clone)]
struct SimArgs2 {
    #[arg(long)]
    case: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// True transformation parameter of the generating model.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    slope: Option<f64>,
    #[arg(long)]
    gap_mean: Option<f64>,
    #[arg(long)]
    study_length: Option<f64>,
    #[arg(long)]
    phi_scale: Option<f64>,
}

impl SimArgs2 {
    fn apply(&self, s: &mut SimSettings) {
        ov(&mut s.case, self.case);
        ov(&mut s.n, self.n);
        ov(&mut s.r, self.r);
        if self.slope.is_some() {
            s.slope = self.slope;
        }
        ov(&mut s.gap_mean, self.gap_mean);
        ov(&mut s.study_length, self.study_length);
        ov(&mut s.phi_scale, self.phi_scale);
    }
}

#[derive(Args, Clone)]
struct SelectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    r_start: Option<f64>,
    #[arg(long)]
    r_stop: Option<f64>,
    #[arg(long)]
    r_step: Option<f64>,
    /// Selection criterion over the validation block.
    #[arg(long, value_enum)]
    criterion: Option<SelectCriterion>,
    #[command(flatten)]
    fit: FitFlags,
    /// Per-r table CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_times(spec: &str) -> Result<Vec<f64>> {
    if let Some((range, count)) = spec.rsplit_once(':').and_then(|(head, c)| {
        head.split_once(':').map(|(a, b)| ((a.to_string(), b.to_string()), c.to_string()))
    }) {
        let start: f64 = range.0.parse().map_err(|_| Error::Config(format!("bad times spec '{spec}'")))?;
        let stop: f64 = range.1.parse().map_err(|_| Error::Config(format!("bad times spec '{spec}'")))?;
        let count: usize = count.parse().map_err(|_| Error::Config(format!("bad times spec '{spec}'")))?;
        if count < 2 || stop <= start {
            return Err(Error::Config(format!("bad times spec '{spec}'")));
        }
        return Ok((0..count).map(|i| start + (stop - start) * i as f64 / (count - 1) as f64).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad time '{s}'"))))
        .collect()
}

fn parse_beta(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad coefficient '{s}'"))))
        .collect()
}

fn run(cli: Cli) -> Result<u8> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match cli.cmd {
        Cmd::Simulate(args) => {
            let mut sim = file.simulate.clone().unwrap_or_default();
            args.apply(&mut sim);
            commands::cmd_simulate(&sim, &args.out, args.truth_out.as_deref())?;
            Ok(0)
        }
        Cmd::Fit(args) => {
            let mut settings = file.fit.clone().unwrap_or_else(|| profiled_fit(cli.profile));
            args.fit.apply(&mut settings)?;
            ov(&mut settings.r, args.r);
            let artifact = commands::cmd_fit(&args.data, &settings, &args.out)?;
            println!(
                "fit: r = {}, loglik = {:.6}, iterations = {}, converged = {}",
                artifact.r,
                artifact.loglik_trace.last().unwrap(),
                artifact.n_iters,
                artifact.converged
            );
            if let Some(cov) = &artifact.covariance {
                for (j, (b, se)) in artifact.params.beta.iter().zip(&cov.se).enumerate() {
                    println!("beta{} = {b:+.6} (se {se:.6})", j + 1);
                }
            }
            if !artifact.converged {
                return Err(Error::Numerical(format!(
                    "EM did not converge within {} iterations (final loglik {:.6})",
                    artifact.settings.max_iters,
                    artifact.loglik_trace.last().unwrap()
                )));
            }
            Ok(0)
        }
        Cmd::Predict(args) => {
            let times = parse_times(&args.times)?;
            commands::cmd_predict(&args.artifact, &args.data, &times, &args.out)?;
            Ok(0)
        }
        Cmd::Evaluate(args) => {
            let true_model = match (args.true_r, args.true_slope) {
                (Some(r), Some(slope)) => Some(TrueModel { r, beta: parse_beta(&args.true_beta)?, slope }),
                (None, None) => None,
                _ => {
                    return Err(Error::Config(
                        "the survival MSE needs both --true-r and --true-slope".into(),
                    ))
                }
            };
            let (re, mse, ibs) = commands::cmd_evaluate(
                &args.artifact,
                &args.data,
                &args.truth,
                args.split,
                true_model.as_ref(),
                args.out.as_deref(),
            )?;
            println!("re_phi = {re:.6}");
            if let Some(m) = mse {
                println!("mse_surv = {m:.6} (x100: {:.4})", 100.0 * m);
            }
            println!("ibs = {ibs:.6}");
            Ok(0)
        }
        Cmd::Replicate(args) => {
            let mut sim = file.simulate.clone().unwrap_or_default();
            args.sim.apply(&mut sim);
            let mut fit_settings = file.fit.clone().unwrap_or_else(|| profiled_fit(cli.profile));
            args.fit.apply(&mut fit_settings)?;
            fit_settings.r = args.fit_r.unwrap_or(sim.r);
            let mut study: StudySettings =
                file.replicate.clone().unwrap_or_else(|| profiled_study(cli.profile));
            ov(&mut study.replicates, args.replicates);
            ov(&mut study.seed, args.master_seed);
            if args.no_ibs {
                study.with_ibs = false;
            }
            let cfg = StudyConfig { sim, fit: fit_settings, study };
            let report = run_study(&cfg)?;
            write_report(&report, &args.out)?;
            let agg = &report.aggregate;
            println!(
                "replicates: {} ok, {} failed; bias = ({:+.4}, {:+.4}); SSE = ({:.4}, {:.4}); SEE = ({:.4}, {:.4}); CP95 = ({:.3}, {:.3})",
                agg.n_ok, agg.n_failed, agg.bias[0], agg.bias[1], agg.sse[0], agg.sse[1], agg.see[0], agg.see[1], agg.cp95[0], agg.cp95[1]
            );
            println!(
                "RE = {:.4}; MSE = {:.6} (x100: {:.4}); IBS = {:.4}",
                agg.re_mean,
                agg.mse_mean,
                100.0 * agg.mse_mean,
                agg.ibs_mean
            );
            let fail_frac = agg.n_failed as f64 / report.rows.len() as f64;
            if fail_frac > 0.10 {
                eprintln!("error: {:.0}% of replicates failed", 100.0 * fail_frac);
                return Ok(3);
            }
            Ok(0)
        }
        Cmd::SelectR(args) => {
            let mut settings = file.fit.clone().unwrap_or_else(|| profiled_fit(cli.profile));
            args.fit.apply(&mut settings)?;
            let mut select = file.select_r.clone().unwrap_or_default();
            ov(&mut select.r_start, args.r_start);
            ov(&mut select.r_stop, args.r_stop);
            ov(&mut select.r_step, args.r_step);
            ov(&mut select.criterion, args.criterion);
            let (chosen, table) = commands::cmd_select_r(&args.data, &settings, &select, args.out.as_deref())?;
            for p in &table {
                match &p.error {
                    None => println!("r = {:.3}: val loglik = {:.6}, val IBS = {:.6}", p.r, p.val_loglik, p.val_ibs),
                    Some(e) => println!("r = {:.3}: failed ({e})", p.r),
                }
            }
            println!("selected r = {chosen}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
