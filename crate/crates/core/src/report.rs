//! Report persistence: JSON plus CSV and gnuplot `.dat` curves.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::succinctness::{KSweepRow, SuccinctnessReport};

pub const REPORT_JSON: &str = "report.json";
pub const SUCCINCTNESS_CSV: &str = "succinctness.csv";
pub const SUCCINCTNESS_DAT: &str = "succinctness.dat";
pub const ROTATION_CSV: &str = "rotation_error.csv";
pub const ROTATION_DAT: &str = "rotation_error.dat";
pub const TRANSLATION_CSV: &str = "translation_error.csv";
pub const TRANSLATION_DAT: &str = "translation_error.dat";

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn table(header: [&str; 2], rows: impl Iterator<Item = (String, f64)>, dat: bool) -> String {
    let mut out = String::new();
    if dat {
        writeln!(out, "# {} {}", header[0], header[1]).unwrap();
    } else {
        writeln!(out, "{},{}", header[0], header[1]).unwrap();
    }
    let sep = if dat { ' ' } else { ',' };
    for (x, y) in rows {
        writeln!(out, "{x}{sep}{y}").unwrap();
    }
    out
}

/// Writes every report file into `dir`, creating it if needed. Returns the
/// written paths.
pub fn write_report(report: &SuccinctnessReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Parse(e.to_string()))?;
    let mut written = vec![write(dir.join(REPORT_JSON), &json)?];
    let curve = || report.curve.iter().enumerate().map(|(n, &s)| (n.to_string(), s));
    written.push(write(dir.join(SUCCINCTNESS_CSV), &table(["n", "s"], curve(), false))?);
    written.push(write(dir.join(SUCCINCTNESS_DAT), &table(["n", "s"], curve(), true))?);
    for (csv, dat, name, data) in [
        (ROTATION_CSV, ROTATION_DAT, "e_rot_deg", &report.rot_curve),
        (TRANSLATION_CSV, TRANSLATION_DAT, "e_trans_m", &report.trans_curve),
    ] {
        let rows = || data.iter().map(|&(e, f)| (e.to_string(), f));
        written.push(write(dir.join(csv), &table([name, "fraction"], rows(), false))?);
        written.push(write(dir.join(dat), &table([name, "fraction"], rows(), true))?);
    }
    Ok(written)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<SuccinctnessReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// `k, auc, auc_rot, auc_trans` rows.
pub fn write_k_sweep(rows: &[KSweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("k,auc,auc_rot,auc_trans\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.k, r.auc, r.auc_rot, r.auc_trans).unwrap();
    }
    write(path.as_ref().to_path_buf(), &out).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::succinctness::{auc, build_report, EvalParams, PairResult, PairSample};

    fn sample_report() -> SuccinctnessReport {
        let params = EvalParams { n_max: 50, l: 3, curve_samples: 10, ..EvalParams::default() };
        let sample = PairSample { pairs: vec![(0, 1), (1, 2), (2, 0)], candidates: 3, short: false };
        let results = [
            PairResult { n_k: Some(12), e_rot: Some(0.123456789), e_trans: Some(0.1 + 0.2) },
            PairResult::ABSENT,
            PairResult { n_k: Some(40), e_rot: Some(1.5), e_trans: Some(1e-7) },
        ];
        build_report("harris", &params, &sample, &results).unwrap()
    }

    #[test]
    fn json_round_trip_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let report = sample_report();
        let files = write_report(&report, dir.path()).unwrap();
        assert_eq!(files.len(), 7);
        let back = read_report(dir.path().join(REPORT_JSON)).unwrap();
        assert_eq!(back, report);
        let csv = fs::read_to_string(dir.path().join(SUCCINCTNESS_CSV)).unwrap();
        assert_eq!(csv.lines().count(), 1 + report.params.n_max + 1);
        let recomputed = auc(&back.results(), back.params.n_max).unwrap();
        assert!((recomputed - back.auc).abs() < 1e-9);
        let dat = fs::read_to_string(dir.path().join(ROTATION_DAT)).unwrap();
        assert!(dat.starts_with("# e_rot_deg fraction"));
        assert_eq!(dat.lines().count(), 1 + 11);
    }

    #[test]
    fn unwritable_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        assert!(write_report(&sample_report(), blocker.join("sub")).is_err());
    }
}
