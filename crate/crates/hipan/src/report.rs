//! Diagnostics report files and plot-ready TSVs.

use std::fmt::Write as _;
use std::path::Path;

use hipan_core::metrics::DiagnosticsReport;
use hipan_core::padic::ultrametric_distance;
use hipan_core::{EncodedDataset, TreeSpec};

use crate::error::CliResult;
use crate::formats::{write_json, write_text};

/// JSON schema the report document conforms to.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

/// Distance matrices are only written up to this many leaves.
pub const DISTANCE_MATRIX_LIMIT: usize = 200;

pub fn entropy_tsv(r: &DiagnosticsReport) -> String {
    let mut s = String::from("depth\tdigit_entropy_bits\tball_entropy_bits\n");
    for (k, (h, b)) in r
        .entropy_profile
        .iter()
        .zip(&r.ball_entropy_profile)
        .enumerate()
    {
        let _ = writeln!(s, "{k}\t{h}\t{b}");
    }
    s
}

pub fn box_count_tsv(r: &DiagnosticsReport) -> String {
    let mut s = String::from("k\tcount\tlog_inv_eps\tlog_count\tused\n");
    for pt in &r.fractal.points {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            pt.k, pt.count, pt.log_inv_eps, pt.log_count, pt.used
        );
    }
    s
}

pub fn reliability_tsv(r: &DiagnosticsReport) -> String {
    let mut s = String::from("lo\thi\tcount\tmean_confidence\taccuracy\n");
    for b in &r.calibration.bins {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            b.lo, b.hi, b.count, b.mean_confidence, b.accuracy
        );
    }
    s
}

/// Pairwise code distances with leaf names as header row and column.
pub fn distance_matrix_tsv(tree: &TreeSpec, data: &EncodedDataset) -> String {
    let mut s = String::from("leaf");
    for r in &data.records {
        s.push('\t');
        s.push_str(tree.name(r.leaf));
    }
    s.push('\n');
    for a in &data.records {
        s.push_str(tree.name(a.leaf));
        for b in &data.records {
            let d = ultrametric_distance(&a.code, &b.code).unwrap_or(f64::NAN);
            let _ = write!(s, "\t{d}");
        }
        s.push('\n');
    }
    s
}

/// Writes `report.json` and the TSVs into `dir`.
pub fn write_report(
    dir: &Path,
    report: &DiagnosticsReport,
    tree: &TreeSpec,
    data: &EncodedDataset,
) -> CliResult<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    let json = dir.join("report.json");
    write_json(&json, report)?;
    written.push(json);
    for (name, text) in [
        ("entropy.tsv", entropy_tsv(report)),
        ("box_counts.tsv", box_count_tsv(report)),
        ("reliability.tsv", reliability_tsv(report)),
    ] {
        let path = dir.join(name);
        write_text(&path, &text)?;
        written.push(path);
    }
    if data.len() <= DISTANCE_MATRIX_LIMIT {
        let path = dir.join("distances.tsv");
        write_text(&path, &distance_matrix_tsv(tree, data))?;
        written.push(path);
    }
    Ok(written)
}
