//! CSV export. Floats carry 9 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::analysis::{CostReport, SpectrumReport};
use crate::error::Result;

/// `v` in scientific notation with 9 significant digits.
pub fn float(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn spectrum_csv(report: &SpectrumReport) -> String {
    let mut out = String::from("bin,freq_lo,freq_hi,freq_mean,points,log_amplitude,delta_log_amplitude\n");
    for (i, b) in report.bins.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{}",
            float(b.freq_lo),
            float(b.freq_hi),
            float(b.freq_mean),
            b.points,
            float(b.log_amplitude),
            float(b.delta)
        );
    }
    out
}

/// Breakdown rows followed by a `total` row.
pub fn cost_csv(report: &CostReport) -> String {
    let mut out = String::from("path,params,flops\n");
    for r in &report.rows {
        let _ = writeln!(out, "{},{},{}", r.path, r.params, r.flops);
    }
    let _ = writeln!(out, "total,{},{}", report.total_params(), report.total_flops());
    out
}

/// One `step,loss` row per training step.
pub fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, &l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{i},{}", float(l));
    }
    out
}

pub fn write_file(contents: &str, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

pub fn write_spectrum_csv(report: &SpectrumReport, path: impl AsRef<Path>) -> Result<()> {
    write_file(&spectrum_csv(report), path)
}

pub fn write_cost_csv(report: &CostReport, path: impl AsRef<Path>) -> Result<()> {
    write_file(&cost_csv(report), path)
}
