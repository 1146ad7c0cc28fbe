//! Text summary of every recognized CSV in an output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sublsvi::maxip::{rho_theory, RhoRegime};

use crate::error::CliError;
use crate::records::{read_table, Table, LSVI_SCHEMA, SWEEP_SCHEMA, UCB_SCHEMA};

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::runtime(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

fn lsvi_section(out: &mut String, rows: &[Vec<String>]) {
    let mut by_mode: BTreeMap<&str, Vec<&Vec<String>>> = BTreeMap::new();
    for r in rows {
        by_mode.entry(r[1].as_str()).or_default().push(r);
    }
    let _ = writeln!(out, "LSVI");
    let _ = writeln!(
        out,
        "  {:<20} {:>6} {:>8} {:>14} {:>12} {:>10} {:>12}",
        "mode", "runs", "n", "suboptimality", "probes", "fallbacks", "ms/update"
    );
    for (mode, rs) in by_mode {
        let col = |i: usize| rs.iter().map(|r| num(&r[i])).collect::<Vec<_>>();
        let _ = writeln!(
            out,
            "  {:<20} {:>6} {:>8.0} {:>14.6} {:>12.2} {:>10.0} {:>12.4}",
            mode,
            rs.len(),
            mean(&col(2)),
            mean(&col(5)),
            mean(&col(6)),
            col(7).iter().sum::<f64>(),
            mean(&col(8)),
        );
    }
}

fn ucb_section(out: &mut String, rows: &[Vec<String>]) {
    // variant -> seed -> rows
    let mut by_variant: BTreeMap<&str, BTreeMap<&str, Vec<&Vec<String>>>> = BTreeMap::new();
    for r in rows {
        by_variant.entry(r[1].as_str()).or_default().entry(r[0].as_str()).or_default().push(r);
    }
    let _ = writeln!(out, "LSVI-UCB");
    let _ = writeln!(
        out,
        "  {:<16} {:>6} {:>8} {:>12} {:>10} {:>12} {:>10} {:>10}",
        "variant", "seeds", "K", "regret", "regret/K", "probes", "fallbacks", "switches"
    );
    for (variant, seeds) in by_variant {
        let (mut regret, mut k, mut probes, mut fallbacks, mut switches) = (vec![], vec![], 0.0, 0.0, 0.0f64);
        for rs in seeds.values() {
            let last = rs.iter().max_by(|a, b| num(&a[2]).total_cmp(&num(&b[2]))).expect("non-empty");
            regret.push(num(&last[4]));
            k.push(num(&last[2]));
            probes += rs.iter().map(|r| num(&r[5])).sum::<f64>();
            fallbacks += rs.iter().map(|r| num(&r[6])).sum::<f64>();
            switches = switches.max(num(&last[7]));
        }
        let (reg, kk) = (mean(&regret), mean(&k));
        let _ = writeln!(
            out,
            "  {:<16} {:>6} {:>8.0} {:>12.4} {:>10.4} {:>12.0} {:>10.0} {:>10.0}",
            variant,
            seeds.len(),
            kk,
            reg,
            reg / kk,
            probes,
            fallbacks,
            switches
        );
    }
}

fn sweep_section(out: &mut String, rows: &[Vec<String>]) {
    let _ = writeln!(out, "Sweep");
    let _ = writeln!(
        out,
        "  {:<20} {:>8} {:>6} {:>12} {:>12} {:>14} {:>10}",
        "mode", "A", "seeds", "probes", "ms/update", "suboptimality", "fallbacks"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "  {:<20} {:>8} {:>6} {:>12.2} {:>12.4} {:>14.6} {:>10}",
            r[0],
            r[1],
            r[2],
            num(&r[5]),
            num(&r[6]),
            num(&r[7]),
            r[8]
        );
    }

    let mut modes: Vec<&Vec<String>> = Vec::new();
    for r in rows {
        if !modes.iter().any(|m| m[0] == r[0]) {
            modes.push(r);
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "  {:<20} {:<30} {:<14} {:<26} {:>12} {:>10}",
        "algorithm", "preprocess", "regret", "value iteration cost", "probe slope", "ms slope"
    );
    for r in modes {
        let (c, tau) = (num(&r[3]), num(&r[4]));
        let (pre, cost) = if r[0] == "exact" {
            ("none".to_string(), "O(dA) per state".to_string())
        } else if c.is_finite() && tau.is_finite() {
            let ar = rho_theory(c, tau, RhoRegime::Ar15);
            let alrw = rho_theory(c, tau, RhoRegime::Alrw17);
            (
                format!("A^(1+{ar:.3}) / A^(1+o(1))"),
                format!("A^{ar:.3} / A^{alrw:.3} per state"),
            )
        } else {
            ("n/a".to_string(), "n/a".to_string())
        };
        let _ = writeln!(
            out,
            "  {:<20} {:<30} {:<14} {:<26} {:>12.3} {:>10.3}",
            r[0],
            pre,
            "see run files",
            cost,
            num(&r[9]),
            num(&r[10])
        );
    }
}

/// Builds the report for `dir`. Fails when no recognized file is present.
pub fn report(dir: &Path) -> Result<String, CliError> {
    let mut grouped: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    let mut corrupt = Vec::new();
    for path in csv_files(dir)? {
        let Some(Table { schema, rows, corrupt: bad }) = read_table(&path)? else {
            continue;
        };
        if bad > 0 {
            corrupt.push((path, bad));
        }
        grouped.entry(schema).or_default().extend(rows);
    }
    if grouped.values().all(Vec::is_empty) {
        return Err(CliError::runtime(format!("no result files found in {}", dir.display())));
    }

    let mut out = String::new();
    if let Some(rows) = grouped.get(LSVI_SCHEMA).filter(|r| !r.is_empty()) {
        lsvi_section(&mut out, rows);
        out.push('\n');
    }
    if let Some(rows) = grouped.get(UCB_SCHEMA).filter(|r| !r.is_empty()) {
        ucb_section(&mut out, rows);
        out.push('\n');
    }
    if let Some(rows) = grouped.get(SWEEP_SCHEMA).filter(|r| !r.is_empty()) {
        sweep_section(&mut out, rows);
        out.push('\n');
    }
    if !corrupt.is_empty() {
        let total: usize = corrupt.iter().map(|(_, n)| n).sum();
        let _ = writeln!(out, "skipped {total} corrupt row(s):");
        for (path, n) in corrupt {
            let _ = writeln!(out, "  {}: {n}", path.display());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{write_table, LSVI_HEADER};

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(report(dir.path()).is_err());
    }

    #[test]
    fn counts_corrupt_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lsvi-exact-seed1.csv");
        let row: Vec<String> = ["1", "exact", "10", "0.9", "0.5", "0.01", "3", "0", "0"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        write_table(&path, LSVI_SCHEMA, LSVI_HEADER, &[row]).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("2,exact,bad\n");
        fs::write(&path, text).unwrap();
        let r = report(dir.path()).unwrap();
        assert!(r.contains("LSVI"));
        assert!(r.contains("skipped 1 corrupt row(s)"));
    }
}
