//! CSV writing and the run-directory table builder.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Artifact names shared by the CLI and [`make_report`].
pub mod files {
    pub const POPS_REPORT: &str = "pops_report.csv";
    pub const SWEEP_MBGP: &str = "sweep_mbgp.csv";
    pub const SWEEP_KDBP: &str = "sweep_kdbp.csv";
    pub const TABLE_POPS: &str = "table_pops.csv";
    pub const TABLE_BASELINES: &str = "table_baselines.csv";
    pub const SUMMARY: &str = "summary.txt";
}

/// Writes `header` then `rows` as CSV, creating parent directories.
pub fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Header and records of a CSV file.
pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportFiles {
    pub written: Vec<PathBuf>,
    /// Expected artifacts that were absent and therefore skipped.
    pub missing: Vec<String>,
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Format(format!("{} has no `{name}` column", path.display())))
}

/// Builds the compression and baseline tables plus a plain-text summary from
/// whatever artifacts `run_dir` contains.
pub fn make_report(run_dir: &Path) -> Result<ReportFiles> {
    if !run_dir.is_dir() {
        return Err(Error::io(
            run_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found"),
        ));
    }
    let mut out = ReportFiles::default();
    let mut summary = String::new();

    let pops_path = run_dir.join(files::POPS_REPORT);
    if pops_path.is_file() {
        let (header, rows) = read_rows(&pops_path)?;
        let cols = ["iteration", "nonzero_params", "pct_of_initial", "avg_score"];
        let idx = cols
            .iter()
            .map(|c| column(&header, c, &pops_path))
            .collect::<Result<Vec<_>>>()?;
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
            .collect();
        let path = run_dir.join(files::TABLE_POPS);
        write_rows(&path, &cols, table.clone())?;
        out.written.push(path);
        let _ = writeln!(
            summary,
            "PoPS compression ({} iterations)",
            table.len().saturating_sub(1)
        );
        for r in &table {
            let _ = writeln!(
                summary,
                "  iteration {:>2}: {:>8} weights ({:>7}%), score {}",
                r[0], r[1], r[2], r[3]
            );
        }
    } else {
        out.missing.push(files::POPS_REPORT.to_string());
    }

    // Baseline sweeps merged on the nonzero count.
    let mut merged: BTreeMap<usize, (String, Vec<Option<String>>)> = BTreeMap::new();
    let mut score_cols = Vec::new();
    for (k, name) in [files::SWEEP_MBGP, files::SWEEP_KDBP].into_iter().enumerate() {
        let path = run_dir.join(name);
        if !path.is_file() {
            out.missing.push(name.to_string());
            continue;
        }
        let (header, rows) = read_rows(&path)?;
        let nz = column(&header, "nonzero_params", &path)?;
        let pct = column(&header, "pct_of_initial", &path)?;
        let score_name = if k == 0 { "avg_score_mbgp" } else { "avg_score_kdbp" };
        let score = column(&header, score_name, &path)?;
        score_cols.push((k, score_name));
        for r in rows {
            let count: usize = r[nz]
                .parse()
                .map_err(|_| Error::Format(format!("{}: bad nonzero count `{}`", path.display(), r[nz])))?;
            let entry = merged
                .entry(count)
                .or_insert_with(|| (r[pct].clone(), vec![None, None]));
            entry.1[k] = Some(r[score].clone());
        }
    }
    if !score_cols.is_empty() {
        let mut header = vec!["nonzero_params", "pct_of_initial"];
        header.extend(score_cols.iter().map(|(_, n)| *n));
        let table: Vec<Vec<String>> = merged
            .iter()
            .rev()
            .map(|(count, (pct, scores))| {
                let mut row = vec![count.to_string(), pct.clone()];
                row.extend(score_cols.iter().map(|(k, _)| scores[*k].clone().unwrap_or_default()));
                row
            })
            .collect();
        let path = run_dir.join(files::TABLE_BASELINES);
        write_rows(&path, &header, table.clone())?;
        out.written.push(path);
        let _ = writeln!(summary, "Baseline sweep ({})", header[2..].join(", "));
        for r in &table {
            let _ = writeln!(summary, "  {:>8} weights ({:>7}%): {}", r[0], r[1], r[2..].join(" / "));
        }
    }

    if !out.missing.is_empty() {
        let _ = writeln!(summary, "Skipped (not found): {}", out.missing.join(", "));
    }
    let path = run_dir.join(files::SUMMARY);
    fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;
    out.written.push(path);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn roundtrip_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/a.csv");
        write_rows(&p, &["x", "y"], vec![strings(&["1", "2"]), strings(&["3", ""])]).unwrap();
        let (h, rows) = read_rows(&p).unwrap();
        assert_eq!(h, strings(&["x", "y"]));
        assert_eq!(rows, vec![strings(&["1", "2"]), strings(&["3", ""])]);
    }

    #[test]
    fn pops_table_and_missing_baselines() {
        let dir = tempfile::tempdir().unwrap();
        write_rows(
            &dir.path().join(files::POPS_REPORT),
            &["iteration", "nonzero_params", "pct_of_initial", "avg_score"],
            vec![
                strings(&["0", "1000", "100.0000", "200"]),
                strings(&["1", "50", "5.0000", "199"]),
            ],
        )
        .unwrap();
        let out = make_report(dir.path()).unwrap();
        assert_eq!(out.missing, strings(&[files::SWEEP_MBGP, files::SWEEP_KDBP]));
        let (h, rows) = read_rows(&dir.path().join(files::TABLE_POPS)).unwrap();
        assert_eq!(
            h,
            strings(&["iteration", "nonzero_params", "pct_of_initial", "avg_score"])
        );
        assert_eq!(rows[0][2], "100.0000");
        let summary = fs::read_to_string(dir.path().join(files::SUMMARY)).unwrap();
        assert!(summary.contains("Skipped"));
    }

    #[test]
    fn baselines_merge_into_two_score_table() {
        let dir = tempfile::tempdir().unwrap();
        write_rows(
            &dir.path().join(files::SWEEP_MBGP),
            &["nonzero_params", "pct_of_initial", "avg_score_mbgp"],
            vec![strings(&["100", "100.0000", "200"]), strings(&["50", "50.0000", "150"])],
        )
        .unwrap();
        write_rows(
            &dir.path().join(files::SWEEP_KDBP),
            &["nonzero_params", "pct_of_initial", "avg_score_kdbp"],
            vec![strings(&["100", "100.0000", "199"]), strings(&["50", "50.0000", "180"])],
        )
        .unwrap();
        make_report(dir.path()).unwrap();
        let (h, rows) = read_rows(&dir.path().join(files::TABLE_BASELINES)).unwrap();
        assert_eq!(
            h,
            strings(&["nonzero_params", "pct_of_initial", "avg_score_mbgp", "avg_score_kdbp"])
        );
        assert_eq!(
            rows,
            vec![
                strings(&["100", "100.0000", "200", "199"]),
                strings(&["50", "50.0000", "150", "180"])
            ]
        );
    }

    #[test]
    fn missing_directory_is_an_error() {
        assert!(make_report(Path::new("/nonexistent/run")).is_err());
    }
}
