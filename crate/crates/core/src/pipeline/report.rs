//! Report formatting: aligned text tables plus per-epoch CSVs for external
//! plotting.

use std::fmt::Write as _;
use std::path::Path;

use crate::pipeline::eval::ErrorReport;
use crate::pipeline::PipelineError;

/// Renders one row per combination, columns matching the evaluation report.
pub fn format_report_table(reports: &[ErrorReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "Estimation", "Median(m)", "STD(m)", "Max(m)", "RMS E(m)", "RMS N(m)", "RMS U(m)"
    );
    let _ = writeln!(out, "{}", "-".repeat(78));
    for r in reports {
        let _ = writeln!(
            out,
            "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            r.label,
            fmt_metric(r.horizontal_median),
            fmt_metric(r.horizontal_std),
            fmt_metric(r.horizontal_max),
            fmt_metric(r.rms_east),
            fmt_metric(r.rms_north),
            fmt_metric(r.rms_up)
        );
    }
    out
}

fn fmt_metric(v: f64) -> String {
    if v >= 1000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

/// Per-epoch error trace with 3-sigma bounds, ready for plotting.
pub fn write_error_epochs_csv(path: &Path, report: &ErrorReport) -> Result<(), PipelineError> {
    let mut out = String::from("t,err_n,err_e,err_u,sigma3_n,sigma3_e,sigma3_u\n");
    for e in &report.epochs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.time, e.north, e.east, e.up, e.sigma3_north, e.sigma3_east, e.sigma3_up
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One-line-per-combo summary CSV.
pub fn write_summary_csv(path: &Path, reports: &[ErrorReport]) -> Result<(), PipelineError> {
    let mut out = String::from("combo,median_m,std_m,max_m,rms_east_m,rms_north_m,rms_up_m\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.label,
            r.horizontal_median,
            r.horizontal_std,
            r.horizontal_max,
            r.rms_east,
            r.rms_north,
            r.rms_up
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
