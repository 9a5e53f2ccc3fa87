//! Replicate-report CSV: a config-echo comment header, one row per
//! replicate, and a final aggregate row. Deterministic bytes for fixed
//! inputs (floats in shortest round-trip form, no timestamps).

use std::fmt::Write as _;
use std::path::Path;

use icdeep_core::{Error, Result};

use crate::study::StudyReport;

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

/// Renders the report; `write_report` puts it on disk atomically.
pub fn render_report(report: &StudyReport) -> Result<String> {
    let mut out = String::new();
    let echo = serde_json::to_string(&report.config)
        .map_err(|e| Error::Data(format!("config echo failed: {e}")))?;
    out.push_str("# icdeep replicate report\n");
    let _ = writeln!(out, "# config: {echo}");
    out.push_str(
        "row,seed,status,beta1,beta2,se1,se2,cover1,cover2,converged,iters,loglik,re_phi,mse_surv,ibs,bias1,bias2,sse1,sse2\n",
    );
    for row in &report.rows {
        let status = if row.error.is_none() { "ok" } else { "failed" };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},,,,",
            row.index,
            row.seed,
            status,
            num(row.beta[0]),
            num(row.beta[1]),
            num(row.se[0]),
            num(row.se[1]),
            u8::from(row.covered[0]),
            u8::from(row.covered[1]),
            u8::from(row.converged),
            row.iters,
            num(row.loglik),
            num(row.re_phi),
            num(row.mse_surv),
            num(row.ibs),
        );
    }
    let agg = &report.aggregate;
    let _ = writeln!(
        out,
        "aggregate,{},{},{},{},{},{},{},{},,,,{},{},{},{},{},{},{}",
        report.config.study.seed,
        if agg.n_failed == 0 { "ok".to_string() } else { format!("failed={}", agg.n_failed) },
        num(agg.beta_mean[0]),
        num(agg.beta_mean[1]),
        num(agg.see[0]),
        num(agg.see[1]),
        num(agg.cp95[0]),
        num(agg.cp95[1]),
        num(agg.re_mean),
        num(agg.mse_mean),
        num(agg.ibs_mean),
        num(agg.bias[0]),
        num(agg.bias[1]),
        num(agg.sse[0]),
        num(agg.sse[1]),
    );
    Ok(out)
}

pub fn write_report(report: &StudyReport, path: &Path) -> Result<()> {
    let text = render_report(report)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text.as_bytes())?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
