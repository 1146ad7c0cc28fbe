//! `generate` and `run` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use sublsvi::lsvi::{self, IndexSettings, LsviConfig, LsviMode};
use sublsvi::mdp::{generate_linear_mdp, validate, Instance};
use sublsvi::ucb::{self, UcbConfig};

use crate::config::{RunConfig, Variant};
use crate::error::{CliError, ConfigError};
use crate::records::{fmt_f64, write_table, LSVI_HEADER, LSVI_SCHEMA, UCB_HEADER, UCB_SCHEMA};

fn instance_file_name(cfg: &RunConfig) -> String {
    format!(
        "mdp-S{}-A{}-d{}-H{}-seed{}.bin",
        cfg.num_states, cfg.num_actions, cfg.dim, cfg.horizon, cfg.seed
    )
}

fn check_valid(inst: &Instance) -> Result<(), CliError> {
    let report = validate(inst);
    if report.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = report.iter().map(|v| format!("  {v}")).collect();
    Err(CliError::runtime(format!("MDP failed validation:\n{}", lines.join("\n"))))
}

fn generate_instance(cfg: &RunConfig) -> Result<Instance, CliError> {
    generate_linear_mdp(cfg.seed, cfg.num_states, cfg.num_actions, cfg.dim, cfg.horizon).map_err(|e| {
        ConfigError::Value {
            key: "S/A/d/H".into(),
            line: 0,
            reason: e.to_string(),
        }
        .into()
    })
}

/// Generates, validates and writes an instance into `cfg.dir`.
pub fn generate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let inst = generate_instance(cfg)?;
    check_valid(&inst)?;
    fs::create_dir_all(&cfg.dir)?;
    let path = cfg.dir.join(instance_file_name(cfg));
    fs::write(&path, inst.to_bytes())?;
    Ok(path)
}

pub fn load_instance(path: &Path) -> Result<Instance, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::runtime(format!("cannot read MDP file {}: {e}", path.display())))?;
    let inst = Instance::from_bytes(&bytes)?;
    check_valid(&inst)?;
    Ok(inst)
}

/// The configured instance: loaded from `mdp_file` when set, generated
/// otherwise.
pub fn instance_for(cfg: &RunConfig) -> Result<Instance, CliError> {
    match &cfg.mdp_file {
        Some(path) => load_instance(path),
        None => {
            let inst = generate_instance(cfg)?;
            check_valid(&inst)?;
            Ok(inst)
        }
    }
}

/// LSVI parameters: `n` defaults to the sample count for `epsilon`, `c` to
/// `1 − C₀·L·√(ι/n)`.
pub fn lsvi_config(cfg: &RunConfig, inst: &Instance, mode: LsviMode) -> Result<LsviConfig, CliError> {
    let mdp = &inst.mdp;
    let iota = lsvi::log_factor(mdp.horizon(), mdp.dim(), cfg.p)?;
    let n = match cfg.n {
        Some(n) => n,
        None => lsvi::required_sample_count(cfg.epsilon, inst.span.span_bound, mdp.horizon(), iota, cfg.c0)?,
    };
    let c = match cfg.c {
        Some(c) => c,
        None => {
            let c = lsvi::approximation_for_samples(cfg.c0, inst.span.span_bound, iota, n);
            if !(c > 0.0 && c < 1.0) {
                return Err(ConfigError::Value {
                    key: "c".into(),
                    line: 0,
                    reason: format!("derived c = {c} for n = {n} is outside (0, 1); set c or increase n"),
                }
                .into());
            }
            c
        }
    };
    let index = IndexSettings {
        c,
        tau: cfg.tau,
        lsh: cfg.lsh,
        policy: cfg.probe_policy,
        quantization: cfg.lambda_quant.map(|l| (l, cfg.delta)),
        seed: cfg.seed,
    };
    Ok(LsviConfig {
        n,
        epsilon: cfg.epsilon,
        iota,
        mode,
        index,
    })
}

pub fn ucb_config(cfg: &RunConfig, variant: ucb::UcbVariant) -> UcbConfig {
    UcbConfig {
        episodes: cfg.episodes,
        lambda_reg: cfg.lambda_reg,
        c_beta: cfg.c_beta,
        p: cfg.p,
        c: cfg.c,
        tau: cfg.tau,
        lsh: cfg.lsh,
        policy: cfg.probe_policy,
        variant,
        index_seed: cfg.seed,
    }
}

fn wall(cfg: &RunConfig, v: f64) -> String {
    if cfg.record_wall_clock {
        fmt_f64(v)
    } else {
        "0".into()
    }
}

/// Runs the configured variant once per seed, writing one CSV per seed.
/// Returns one summary line per seed.
pub fn run(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let inst = instance_for(cfg)?;
    let mut summary = Vec::new();
    for seed in cfg.run_seeds() {
        match cfg.variant {
            Variant::Lsvi(_) => {
                let mode = cfg.lsvi_mode().expect("LSVI variant");
                let lc = lsvi_config(cfg, &inst, mode)?;
                let rep = lsvi::run_lsvi(&inst, &lc, seed)?;
                let st = &rep.pass.stats;
                let row = vec![
                    seed.to_string(),
                    mode.as_str().to_string(),
                    lc.n.to_string(),
                    fmt_f64(lc.index.c),
                    fmt_f64(lc.epsilon),
                    fmt_f64(rep.suboptimality),
                    fmt_f64(st.probes_mean()),
                    st.fallbacks.to_string(),
                    wall(cfg, st.wall_ms_per_value_update()),
                ];
                let path = cfg.dir.join(format!("lsvi-{}-seed{seed}.csv", mode.as_str()));
                write_table(&path, LSVI_SCHEMA, LSVI_HEADER, &[row])?;
                let mut line = format!(
                    "lsvi {} seed={seed} n={} c={:.6} suboptimality={:.6} probes={} fallbacks={}",
                    mode.as_str(),
                    lc.n,
                    lc.index.c,
                    rep.suboptimality,
                    st.probes,
                    st.fallbacks
                );
                if let Some(tau) = st.tau {
                    line += &format!(" tau={tau:.6}");
                }
                if let Some(k) = st.kappa {
                    line += &format!(" kappa={k}");
                }
                summary.push(line);
            }
            Variant::Ucb(v) => {
                let uc = ucb_config(cfg, v);
                let records = ucb::run_experiment(&inst, &uc, seed)?;
                let rows: Vec<Vec<String>> = records
                    .iter()
                    .map(|r| {
                        vec![
                            seed.to_string(),
                            v.as_str().to_string(),
                            r.k.to_string(),
                            fmt_f64(r.gap),
                            fmt_f64(r.cum_regret),
                            r.probes.to_string(),
                            r.fallbacks.to_string(),
                            r.switches.to_string(),
                            wall(cfg, r.wall_ms),
                        ]
                    })
                    .collect();
                let path = cfg.dir.join(format!("ucb-{}-seed{seed}.csv", v.as_str()));
                write_table(&path, UCB_SCHEMA, UCB_HEADER, &rows)?;
                let last = records.last().expect("at least one episode");
                let probes: usize = records.iter().map(|r| r.probes).sum();
                let fallbacks: usize = records.iter().map(|r| r.fallbacks).sum();
                summary.push(format!(
                    "ucb {} seed={seed} K={} regret={:.6} probes={probes} fallbacks={fallbacks} switches={}",
                    v.as_str(),
                    uc.episodes,
                    last.cum_regret,
                    last.switches
                ));
            }
        }
    }
    Ok(summary)
}
