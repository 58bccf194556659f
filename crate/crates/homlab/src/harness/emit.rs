//! Report emitters: JSON, CSV and a gnuplot-ready data file. All outputs are
//! byte-stable for identical reports.

use super::sweep::SweepReport;
use crate::error::HomlabError;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    Json,
    Gnuplot,
}

impl EmitFormat {
    pub fn parse_list(s: &str) -> Result<Vec<EmitFormat>, HomlabError> {
        s.split(',')
            .map(|t| match t.trim() {
                "csv" => Ok(EmitFormat::Csv),
                "json" => Ok(EmitFormat::Json),
                "gnuplot" => Ok(EmitFormat::Gnuplot),
                other => Err(HomlabError::Config(format!("unknown format {other:?}"))),
            })
            .collect()
    }
}

/// Per-scale table. Columns are documented in the README.
pub fn report_csv(report: &SweepReport) -> String {
    let modes = report.rows.first().map(|r| r.pairings.len()).unwrap_or(0);
    let mut head = String::from("epsilon,n_holes,n_vertices,e_l2_meas,rel_e_meas,e_l2_ana,rel_e_ana");
    for m in 0..modes {
        head.push_str(&format!(",p{}", m + 1));
    }
    head.push_str(",mu_interior_dev,z_minus_w_h1,removed_area,sandwich_excess,energy_residual\n");
    let mut out = head;
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            r.epsilon, r.n_holes, r.n_vertices, r.e_l2_meas, r.rel_e_meas, r.e_l2_ana, r.rel_e_ana
        ));
        for p in &r.pairings {
            out.push_str(&format!(",{p}"));
        }
        out.push_str(&format!(
            ",{},{},{},{},{}\n",
            r.mu_interior_dev, r.z_minus_w_h1, r.removed_area, r.sandwich_excess, r.energy_residual
        ));
    }
    out
}

pub fn report_json(report: &SweepReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

/// Whitespace-separated columns `eps e_l2 p1 p2 p3 mu_deviation z_minus_w`,
/// plottable without preprocessing.
pub fn report_gnuplot(report: &SweepReport) -> String {
    let mut out = String::from("# eps e_l2 p1 p2 p3 mu_deviation z_minus_w\n");
    for r in &report.rows {
        let mut p = [0.0f64; 3];
        for (i, v) in r.pairings.iter().take(3).enumerate() {
            p[i] = *v;
        }
        out.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            r.epsilon, r.e_l2_meas, p[0], p[1], p[2], r.mu_interior_dev, r.z_minus_w_h1
        ));
    }
    out
}

/// Write the requested formats into `out_dir` as `report.{csv,json,dat}`.
pub fn emit(
    report: &SweepReport,
    formats: &[EmitFormat],
    out_dir: &Path,
) -> Result<Vec<std::path::PathBuf>, HomlabError> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for f in formats {
        let (name, content) = match f {
            EmitFormat::Csv => ("report.csv", report_csv(report)),
            EmitFormat::Json => ("report.json", report_json(report)),
            EmitFormat::Gnuplot => ("report.dat", report_gnuplot(report)),
        };
        let path = out_dir.join(name);
        std::fs::write(&path, content)?;
        written.push(path);
    }
    Ok(written)
}
