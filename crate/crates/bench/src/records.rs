//! Versioned CSV artifacts. Every file starts with a `#schema=<name>/<version>`
//! line followed by a fixed header row.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::CliError;

pub const LSVI_SCHEMA: &str = "lsvi/1";
pub const UCB_SCHEMA: &str = "ucb/1";
pub const SWEEP_SCHEMA: &str = "sweep/1";
pub const SWEEP_CELLS_SCHEMA: &str = "sweep-cells/1";

pub const LSVI_HEADER: &[&str] = &[
    "seed",
    "mode",
    "n",
    "c",
    "eps_target",
    "suboptimality",
    "probes_mean",
    "fallback_count",
    "wall_ms_value_update",
];

pub const UCB_HEADER: &[&str] = &[
    "seed",
    "variant",
    "k",
    "episode_gap",
    "cum_regret",
    "probes",
    "fallbacks",
    "switches",
    "wall_ms",
];

pub const SWEEP_HEADER: &[&str] = &[
    "mode",
    "A",
    "seeds",
    "c",
    "tau",
    "probes_mean",
    "wall_ms_mean",
    "suboptimality_mean",
    "fallbacks_total",
    "probe_slope",
    "wall_slope",
];

pub const SWEEP_CELLS_HEADER: &[&str] = &[
    "A",
    "seed",
    "mode",
    "probes_mean",
    "fallback_count",
    "suboptimality",
    "wall_ms_value_update",
];

/// Header for a known schema name.
pub fn header_for(schema: &str) -> Option<&'static [&'static str]> {
    match schema {
        LSVI_SCHEMA => Some(LSVI_HEADER),
        UCB_SCHEMA => Some(UCB_HEADER),
        SWEEP_SCHEMA => Some(SWEEP_HEADER),
        SWEEP_CELLS_SCHEMA => Some(SWEEP_CELLS_HEADER),
        _ => None,
    }
}

pub fn write_table(path: &Path, schema: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut out = Vec::new();
    writeln!(out, "#schema={schema}")?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Rows of one file, split into well-formed records and a count of corrupt
/// ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: String,
    pub rows: Vec<Vec<String>>,
    pub corrupt: usize,
}

/// Reads a file written by [`write_table`]. Returns `None` for files without
/// a recognized schema line or with a header that does not match it. A row
/// is corrupt when its field count differs from the header or any numeric
/// column fails to parse.
pub fn read_table(path: &Path) -> Result<Option<Table>, CliError> {
    let text = fs::read_to_string(path)?;
    let Some((first, rest)) = text.split_once('\n') else {
        return Ok(None);
    };
    let Some(schema) = first.trim().strip_prefix("#schema=") else {
        return Ok(None);
    };
    let Some(header) = header_for(schema) else {
        return Ok(None);
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(rest.as_bytes());
    let found: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Ok(None);
    }
    let mut rows = Vec::new();
    let mut corrupt = 0;
    for rec in reader.records() {
        match rec {
            Ok(r) if r.len() == header.len() && numeric_fields_ok(schema, &r) => {
                rows.push(r.iter().map(str::to_string).collect())
            }
            _ => corrupt += 1,
        }
    }
    Ok(Some(Table {
        schema: schema.to_string(),
        rows,
        corrupt,
    }))
}

/// Text columns per schema; everything else must parse as a number
/// (`nan` allowed).
fn numeric_fields_ok(schema: &str, rec: &csv::StringRecord) -> bool {
    let text_col = match schema {
        LSVI_SCHEMA | UCB_SCHEMA => 1,
        SWEEP_SCHEMA => 0,
        SWEEP_CELLS_SCHEMA => 2,
        _ => usize::MAX,
    };
    rec.iter()
        .enumerate()
        .all(|(i, f)| i == text_col || f.parse::<f64>().is_ok())
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "nan".into()
    }
}
