//! Action-count sweep: exact versus sublinear LSVI on paired instances.

use std::sync::Mutex;
use std::thread;

use sublsvi::lsvi::{self, LsviMode};
use sublsvi::mdp::generate_linear_mdp;

use crate::commands::lsvi_config;
use crate::config::{Algorithm, RunConfig};
use crate::error::{CliError, ConfigError};
use crate::records::{
    fmt_f64, write_table, SWEEP_CELLS_HEADER, SWEEP_CELLS_SCHEMA, SWEEP_HEADER, SWEEP_SCHEMA,
};

/// One (A, seed, mode) run.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub num_actions: usize,
    pub seed: u64,
    pub mode: LsviMode,
    pub c: f64,
    pub tau: Option<f64>,
    pub probes_mean: f64,
    pub fallbacks: usize,
    pub suboptimality: f64,
    pub wall_ms: f64,
}

/// Per-(mode, A) aggregate with the mode's log-log slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: LsviMode,
    pub num_actions: usize,
    pub seeds: usize,
    pub c: f64,
    pub tau: f64,
    pub probes_mean: f64,
    pub wall_ms_mean: f64,
    pub suboptimality_mean: f64,
    pub fallbacks_total: usize,
    pub probe_slope: f64,
    pub wall_slope: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<Cell>,
    pub rows: Vec<SweepRow>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `i`-th instance at action count `a`.
pub fn cell_seed(master: u64, a: usize, i: usize) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(a as u64)) ^ i as u64)
}

/// Least-squares slope of `ln y` against `ln x`. NaN when fewer than two
/// usable points.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

fn thread_count() -> usize {
    std::env::var("SUBLSVI_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .or_else(|| thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
}

fn check(cfg: &RunConfig) -> Result<LsviMode, CliError> {
    if cfg.algorithm != Algorithm::Lsvi {
        return Err(ConfigError::Value {
            key: "algorithm".into(),
            line: 0,
            reason: "sweep supports algorithm = lsvi only".into(),
        }
        .into());
    }
    if cfg.a_list.len() < 3 || cfg.a_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ConfigError::Value {
            key: "A_list".into(),
            line: 0,
            reason: "need at least three strictly increasing action counts".into(),
        }
        .into());
    }
    Ok(match cfg.lsvi_mode() {
        Some(LsviMode::Exact) | None => LsviMode::Sublinear,
        Some(m) => m,
    })
}

fn run_cell(cfg: &RunConfig, a: usize, i: usize, fast: LsviMode) -> Result<Vec<Cell>, CliError> {
    let seed = cell_seed(cfg.seed, a, i);
    let inst = generate_linear_mdp(seed, cfg.num_states, a, cfg.dim, cfg.horizon)?;
    let mut out = Vec::with_capacity(2);
    for mode in [LsviMode::Exact, fast] {
        let mut local = cfg.clone();
        local.seed = seed;
        let lc = lsvi_config(&local, &inst, mode)?;
        let rep = lsvi::run_lsvi(&inst, &lc, seed)?;
        let st = &rep.pass.stats;
        out.push(Cell {
            num_actions: a,
            seed,
            mode,
            c: lc.index.c,
            tau: st.tau,
            probes_mean: st.probes_mean(),
            fallbacks: st.fallbacks,
            suboptimality: rep.suboptimality,
            wall_ms: if cfg.record_wall_clock { st.wall_ms_per_value_update() } else { 0.0 },
        });
    }
    Ok(out)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn aggregate(cfg: &RunConfig, cells: &[Cell], fast: LsviMode) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for mode in [LsviMode::Exact, fast] {
        let mut block: Vec<SweepRow> = cfg
            .a_list
            .iter()
            .map(|&a| {
                let cs: Vec<&Cell> = cells.iter().filter(|c| c.mode == mode && c.num_actions == a).collect();
                SweepRow {
                    mode,
                    num_actions: a,
                    seeds: cs.len(),
                    c: mean(cs.iter().map(|c| c.c)),
                    tau: mean(cs.iter().filter_map(|c| c.tau)),
                    probes_mean: mean(cs.iter().map(|c| c.probes_mean)),
                    wall_ms_mean: mean(cs.iter().map(|c| c.wall_ms)),
                    suboptimality_mean: mean(cs.iter().map(|c| c.suboptimality)),
                    fallbacks_total: cs.iter().map(|c| c.fallbacks).sum(),
                    probe_slope: f64::NAN,
                    wall_slope: f64::NAN,
                }
            })
            .collect();
        let xs: Vec<f64> = block.iter().map(|r| r.num_actions as f64).collect();
        let ps: Vec<f64> = block.iter().map(|r| r.probes_mean).collect();
        let ws: Vec<f64> = block.iter().map(|r| r.wall_ms_mean).collect();
        let (ps, ws) = (log_log_slope(&xs, &ps), log_log_slope(&xs, &ws));
        for r in &mut block {
            r.probe_slope = ps;
            r.wall_slope = ws;
        }
        rows.extend(block);
    }
    rows
}

/// Runs the sweep without writing anything.
pub fn compute(cfg: &RunConfig) -> Result<SweepResult, CliError> {
    let fast = check(cfg)?;
    let jobs: Vec<(usize, usize)> = cfg
        .a_list
        .iter()
        .flat_map(|&a| (0..cfg.seeds).map(move |i| (a, i)))
        .collect();
    let next = Mutex::new(0usize);
    let results = Mutex::new(Vec::new());
    let threads = thread_count().min(jobs.len()).max(1);
    thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let j = {
                    let mut g = next.lock().unwrap();
                    let j = *g;
                    *g += 1;
                    j
                };
                let Some(&(a, i)) = jobs.get(j) else { break };
                let r = run_cell(cfg, a, i, fast);
                results.lock().unwrap().push((j, r));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(j, _)| *j);
    let mut cells = Vec::new();
    for (_, r) in results {
        cells.extend(r?);
    }
    let rows = aggregate(cfg, &cells, fast);
    Ok(SweepResult { cells, rows })
}

/// Runs the sweep and writes `sweep.csv` and `sweep-cells.csv` into `cfg.dir`.
pub fn sweep(cfg: &RunConfig) -> Result<SweepResult, CliError> {
    let res = compute(cfg)?;
    let rows: Vec<Vec<String>> = res
        .rows
        .iter()
        .map(|r| {
            vec![
                r.mode.as_str().to_string(),
                r.num_actions.to_string(),
                r.seeds.to_string(),
                fmt_f64(r.c),
                fmt_f64(r.tau),
                fmt_f64(r.probes_mean),
                fmt_f64(r.wall_ms_mean),
                fmt_f64(r.suboptimality_mean),
                r.fallbacks_total.to_string(),
                fmt_f64(r.probe_slope),
                fmt_f64(r.wall_slope),
            ]
        })
        .collect();
    write_table(&cfg.dir.join("sweep.csv"), SWEEP_SCHEMA, SWEEP_HEADER, &rows)?;
    let cells: Vec<Vec<String>> = res
        .cells
        .iter()
        .map(|c| {
            vec![
                c.num_actions.to_string(),
                c.seed.to_string(),
                c.mode.as_str().to_string(),
                fmt_f64(c.probes_mean),
                c.fallbacks.to_string(),
                fmt_f64(c.suboptimality),
                fmt_f64(c.wall_ms),
            ]
        })
        .collect();
    write_table(&cfg.dir.join("sweep-cells.csv"), SWEEP_CELLS_SCHEMA, SWEEP_CELLS_HEADER, &cells)?;
    Ok(res)
}
