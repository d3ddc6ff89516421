//! Report files: `report.json`, `report.csv`, `coverage_curve.csv`,
//! `trials.ndjson`, and the merged coverage table.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::audit::{CoverageReport, TrialRecord};
use crate::error::{Error, Result};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const CURVE_CSV: &str = "coverage_curve.csv";
pub const TRIALS_NDJSON: &str = "trials.ndjson";

pub const CSV_HEADER: &str = "target_coverage,observed_coverage,ell_hat,wilson_low,wilson_high";
pub const CURVE_HEADER: &str = "target_coverage,observed_coverage,wilson_low,wilson_high";

/// Target coverages of the comparison table, as α values.
pub const TABLE_ALPHAS: [f64; 7] = [0.2, 0.15, 0.1, 0.05, 0.025, 0.01, 0.001];
const TABLE_TARGETS: [&str; 7] = ["80%", "85%", "90%", "95%", "97.5%", "99%", "99.9%"];

/// Canonical JSON: pretty-printed, trailing newline.
pub fn report_to_json(report: &CoverageReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn report_from_json(text: &str) -> Result<CoverageReport> {
    let report: CoverageReport = serde_json::from_str(text)?;
    if report.schema_version != crate::audit::SCHEMA_VERSION {
        return Err(Error::invalid(format!(
            "unsupported report schema version {}",
            report.schema_version
        )));
    }
    Ok(report)
}

pub fn read_report(path: &Path) -> Result<CoverageReport> {
    report_from_json(&fs::read_to_string(path)?)
}

/// One row per α in grid order.
pub fn report_csv(report: &CoverageReport) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.target_coverage, r.observed_coverage, r.ell_hat, r.wilson_low, r.wilson_high
        );
    }
    s
}

/// Observed vs target coverage, increasing in target.
pub fn coverage_curve_csv(report: &CoverageReport) -> String {
    let mut rows: Vec<_> = report.rows.iter().collect();
    rows.sort_by(|a, b| a.target_coverage.total_cmp(&b.target_coverage));
    let mut s = format!("{CURVE_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.target_coverage, r.observed_coverage, r.wilson_low, r.wilson_high);
    }
    s
}

pub fn trials_ndjson(trials: &[TrialRecord]) -> Result<String> {
    let mut s = String::new();
    for t in trials {
        s.push_str(&serde_json::to_string(t)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

/// Write all four report files into `dir`, creating it if needed.
pub fn write_bundle(report: &CoverageReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_file(&dir.join(REPORT_JSON), &report_to_json(report)?)?;
    write_file(&dir.join(REPORT_CSV), &report_csv(report))?;
    write_file(&dir.join(CURVE_CSV), &coverage_curve_csv(report))?;
    write_file(&dir.join(TRIALS_NDJSON), &trials_ndjson(&report.trials)?)?;
    Ok(())
}

/// A report plus the mean chain time per image, if known.
#[derive(Debug, Clone)]
pub struct TableEntry {
    pub report: CoverageReport,
    pub minutes_per_image: Option<f64>,
}

impl TableEntry {
    /// Load `report.json` and, when present, the sibling `trials.ndjson`
    /// for timing.
    pub fn load(path: &Path) -> Result<Self> {
        let report = read_report(path)?;
        let trials_path = path.with_file_name(TRIALS_NDJSON);
        let minutes_per_image = if trials_path.exists() {
            let trials: Vec<TrialRecord> = read_trials(&trials_path)?
                .into_iter()
                .filter(|t| t.error.is_none())
                .collect();
            (!trials.is_empty())
                .then(|| trials.iter().map(|t| t.wall_ms).sum::<f64>() / trials.len() as f64 / 60_000.0)
        } else {
            None
        };
        Ok(Self {
            report,
            minutes_per_image,
        })
    }
}

pub const TABLE_WARNING: &str =
    "# WARNING: reports were produced under different observation models; rows are not directly comparable";

fn table_header() -> String {
    format!("method,{},PSNR (dB),time (min)", TABLE_TARGETS.join(","))
}

/// One table row: observed coverage in percent at each target, PSNR mean ±
/// std, minutes per image. Levels missing from the report stay blank.
pub fn table_row(entry: &TableEntry) -> String {
    let r = &entry.report;
    let mut cells = vec![r.name.replace(',', " ")];
    for alpha in TABLE_ALPHAS {
        cells.push(
            r.row(alpha)
                .map(|row| format!("{:.1}%", 100.0 * row.observed_coverage))
                .unwrap_or_default(),
        );
    }
    cells.push(match (r.psnr_mean, r.psnr_std) {
        (Some(m), Some(s)) => format!("{m:.1} ± {s:.1}"),
        (Some(m), None) => format!("{m:.1}"),
        _ => String::new(),
    });
    cells.push(entry.minutes_per_image.map(|t| format!("{t:.1}")).unwrap_or_default());
    cells.join(",")
}

/// Merged comparison table in CSV form.
pub fn merge_table(entries: &[TableEntry]) -> Result<String> {
    if entries.is_empty() {
        return Err(Error::invalid("table needs at least one report"));
    }
    let mut s = String::new();
    let first = &entries[0].report.provenance.observation;
    if entries.iter().any(|e| &e.report.provenance.observation != first) {
        s.push_str(TABLE_WARNING);
        s.push('\n');
    }
    s.push_str(&table_header());
    s.push('\n');
    for e in entries {
        s.push_str(&table_row(e));
        s.push('\n');
    }
    Ok(s)
}
