//! Report emission: atomic file writes, plot-ready CSV with a schema file
//! beside every table, and a Markdown digest.

use anyhow::{Context, Result};
use serde::Serialize;
use smallnoise::experiments::{
    CrossRow, FddTable, FellerDiagnostics, ProbeRow, ProblemCheck, SelectionReport, TightnessBlock,
};
use smallnoise::fd::SweepSummary;
use std::fs;
use std::path::Path;

/// Temp-file-plus-rename so a crashed run never leaves a torn report.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Shortest round-trip decimal; the same bytes on every run and worker count.
fn num(x: f64) -> String {
    format!("{x}")
}

fn flag(b: bool) -> String {
    b.to_string()
}

pub struct Column {
    pub name: &'static str,
    pub kind: &'static str,
    pub meaning: &'static str,
}

fn col(name: &'static str, kind: &'static str, meaning: &'static str) -> Column {
    Column { name, kind, meaning }
}

pub struct CsvDoc {
    pub file: &'static str,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<String>>,
}

impl CsvDoc {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self.columns.iter().map(|c| c.name).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            debug_assert_eq!(row.len(), self.columns.len());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn schema(&self) -> serde_json::Value {
        serde_json::json!({
            "file": self.file,
            "delimiter": ",",
            "columns": self.columns.iter().map(|c| serde_json::json!({
                "name": c.name,
                "type": c.kind,
                "meaning": c.meaning,
            })).collect::<Vec<_>>(),
        })
    }

    /// Writes `<file>` and `<stem>.schema.json` next to it.
    pub fn emit(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(self.file), self.render().as_bytes())?;
        let stem = self.file.trim_end_matches(".csv");
        let mut schema = serde_json::to_string_pretty(&self.schema())?;
        schema.push('\n');
        write_atomic(&dir.join(format!("{stem}.schema.json")), schema.as_bytes())
    }
}

fn coord_columns(dim: usize) -> Vec<Column> {
    // reports are one-dimensional today; keep the header stable if that grows
    let names = ["x0", "x1", "x2"];
    (0..dim)
        .map(|d| col(names[d], "float", "probe coordinate"))
        .collect()
}

pub fn probes_csv(rows: &[ProbeRow]) -> CsvDoc {
    let dim = rows.first().map_or(1, |r| r.x.len());
    let mut columns = coord_columns(dim);
    columns.push(col("t", "float", "probe time"));
    columns.push(col(
        "u_selected",
        "float",
        "scheme solution at the finest perturbation level",
    ));
    CsvDoc {
        file: "probes.csv",
        columns,
        rows: rows
            .iter()
            .map(|r| {
                let mut row: Vec<String> = r.x.iter().map(|&v| num(v)).collect();
                row.push(num(r.t));
                row.push(num(r.u_selected));
                row
            })
            .collect(),
    }
}

pub fn cauchy_csv(summary: &SweepSummary) -> CsvDoc {
    let mut rows = Vec::new();
    for i in 0..summary.eps.len() {
        for j in (i + 1)..summary.eps.len() {
            rows.push(vec![
                num(summary.eps[i]),
                num(summary.eps[j]),
                num(summary.cauchy[i][j]),
            ]);
        }
    }
    CsvDoc {
        file: "cauchy.csv",
        columns: vec![
            col("eps_coarse", "float", "larger perturbation level"),
            col("eps_fine", "float", "smaller perturbation level"),
            col(
                "window_sup_diff",
                "float",
                "sup over the reporting window of the two solutions' gap",
            ),
        ],
        rows,
    }
}

pub fn tightness_csv(blocks: &[TightnessBlock]) -> CsvDoc {
    let mut rows = Vec::new();
    for b in blocks {
        for r in &b.report.rows {
            rows.push(vec![
                num(b.eps),
                num(r.s),
                num(r.t),
                num(r.estimate),
                num(r.std_error),
                num(r.bound),
                flag(r.pass),
            ]);
        }
    }
    CsvDoc {
        file: "tightness.csv",
        columns: vec![
            col("eps", "float", "perturbation level"),
            col("s", "float", "earlier time of the increment"),
            col("t", "float", "later time of the increment"),
            col("estimate", "float", "Monte Carlo fourth-moment estimate"),
            col("std_error", "float", "standard error of the estimate"),
            col("bound", "float", "a-priori moment bound"),
            col("pass", "bool", "estimate below bound within 5 std errors"),
        ],
        rows,
    }
}

pub fn feller_csv(d: &FellerDiagnostics) -> CsvDoc {
    CsvDoc {
        file: "feller.csv",
        columns: vec![
            col("eps", "float", "perturbation level"),
            col("t", "float", "probe time"),
            col(
                "straddle",
                "float",
                "|u(x*+d) - u(x*-d)| at the fixed straddle halfwidth",
            ),
            col(
                "window_modulus",
                "float",
                "largest adjacent-node increment inside the window",
            ),
        ],
        rows: d
            .rows
            .iter()
            .map(|r| vec![num(r.eps), num(r.t), num(r.straddle), num(r.window_modulus)])
            .collect(),
    }
}

pub fn cross_csv(rows: &[CrossRow]) -> CsvDoc {
    let dim = rows.first().map_or(1, |r| r.x.len());
    let mut columns = coord_columns(dim);
    columns.push(col("t", "float", "probe time"));
    columns.push(col("fd_value", "float", "grid solution"));
    columns.push(col("mc_value", "float", "Monte Carlo estimate"));
    columns.push(col("mc_std_error", "float", "standard error of the estimate"));
    columns.push(col("pass", "bool", "routes agree within tolerance"));
    CsvDoc {
        file: "cross.csv",
        columns,
        rows: rows
            .iter()
            .map(|r| {
                let mut row: Vec<String> = r.x.iter().map(|&v| num(v)).collect();
                row.push(num(r.t));
                row.push(num(r.fd_value));
                row.push(num(r.mc_value));
                row.push(num(r.mc_std_error));
                row.push(flag(r.pass));
                row
            })
            .collect(),
    }
}

pub fn fdd_csv(table: &FddTable) -> CsvDoc {
    let rows = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let band = if i == 0 {
                "na".to_string()
            } else {
                flag(table.within_band[i - 1])
            };
            vec![num(r.eps), num(r.estimate), num(r.std_error), band]
        })
        .collect();
    CsvDoc {
        file: "fdd.csv",
        columns: vec![
            col("eps", "float", "perturbation level"),
            col("estimate", "float", "three-time product-payoff estimate"),
            col("std_error", "float", "standard error of the estimate"),
            col(
                "band_with_prev",
                "string",
                "difference to the previous level inside the combined 3-sigma band (na on the first row)",
            ),
        ],
        rows,
    }
}

fn md_flag(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn selection_markdown(report: &SelectionReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("# Selection run: {}\n\n", report.problem));
    out.push_str(&format!(
        "eps schedule: {:?}; seed {}; {} MC paths; grid h = {}, dt = {}, horizon {}\n\n",
        report.eps_schedule,
        report.provenance.seed,
        report.provenance.n_paths,
        report.provenance.grid.h,
        report.provenance.grid.dt,
        report.provenance.grid.t_final,
    ));
    out.push_str("| diagnostic | outcome |\n|---|---|\n");
    out.push_str(&format!(
        "| moment bound holds at every level | {} |\n",
        md_flag(report.flags.tightness_pass)
    ));
    out.push_str(&format!(
        "| eps-Cauchy gaps shrinking | {} |\n",
        md_flag(report.flags.cauchy_converging)
    ));
    out.push_str(&format!(
        "| limit-jump flag | {} |\n",
        md_flag(report.flags.feller_flag)
    ));
    out.push_str(&format!(
        "| three-time laws settled | {} |\n",
        md_flag(report.flags.fdd_converged)
    ));
    out.push_str(&format!(
        "| MC and grid routes agree | {} |\n\n",
        md_flag(report.flags.cross_check_pass)
    ));
    out.push_str(&format!(
        "Successive window gaps down the schedule: {:?} (error bar {}).\n\n",
        report.cauchy.successive, report.cauchy.error_bar
    ));
    if report.feller.flagged {
        out.push_str(&format!(
            "Jump detector: {}\n\n",
            report.feller.flag_detail.trim_end()
        ));
    }
    out.push_str(
        "Tables: probes.csv, cauchy.csv, tightness.csv, feller.csv, cross.csv, fdd.csv \
         (schemas beside each).\n",
    );
    out
}

pub fn check_markdown(check: &ProblemCheck) -> String {
    let mut out = String::new();
    out.push_str(&format!("# Assumption check: {}\n\n", check.tag));
    out.push_str("| check | outcome |\n|---|---|\n");
    out.push_str(&format!(
        "| exponent slack | {} |\n",
        md_flag(check.exponents.pass)
    ));
    out.push_str(&format!(
        "| drift Hoelder bound | {} |\n",
        md_flag(check.holder.pass)
    ));
    out.push_str(&format!(
        "| degeneracy envelopes | {} |\n",
        md_flag(check.degeneracy.iter().all(|d| d.pass))
    ));
    out.push_str(&format!(
        "| perturbation family | {} |\n",
        md_flag(check.perturbation.pass)
    ));
    out.push_str(&format!("| overall | {} |\n", md_flag(check.pass)));
    out.push_str(&format!("| waiver | {} |\n\n", md_flag(check.waiver)));
    for note in &check.notes {
        out.push_str(&format!("- {note}\n"));
    }
    out
}
