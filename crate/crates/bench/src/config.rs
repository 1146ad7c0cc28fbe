//! Plain-text `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Unknown keys and malformed values are rejected with the offending line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sublsvi::lsh::LshConfig;
use sublsvi::lsvi::LsviMode;
use sublsvi::maxip::ProbePolicy;
use sublsvi::ucb::UcbVariant;

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Lsvi,
    Ucb,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Lsvi => "lsvi",
            Algorithm::Ucb => "ucb",
        }
    }
}

/// Algorithm variant, already checked against [`Algorithm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Lsvi(LsviMode),
    Ucb(UcbVariant),
}

impl Variant {
    pub fn parse(algorithm: Algorithm, name: &str) -> Result<Self, ConfigError> {
        let res = match algorithm {
            Algorithm::Lsvi => name.parse::<LsviMode>().map(Variant::Lsvi),
            Algorithm::Ucb => name.parse::<UcbVariant>().map(Variant::Ucb),
        };
        res.map_err(|e| ConfigError::Value {
            key: "variant".into(),
            line: 0,
            reason: format!("{e} for algorithm = {}", algorithm.as_str()),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Lsvi(m) => m.as_str(),
            Variant::Ucb(v) => v.as_str(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // mdp
    pub num_states: usize,
    pub num_actions: usize,
    pub dim: usize,
    pub horizon: usize,
    pub seed: u64,
    pub mdp_file: Option<PathBuf>,
    // algo
    pub algorithm: Algorithm,
    pub variant: Variant,
    pub episodes: usize,
    pub n: Option<usize>,
    pub epsilon: f64,
    pub c0: f64,
    pub p: f64,
    pub c: Option<f64>,
    pub tau: Option<f64>,
    pub c_beta: f64,
    pub lambda_reg: f64,
    pub lambda_quant: Option<f64>,
    pub delta: f64,
    pub lsh: Option<LshConfig>,
    pub probe_policy: ProbePolicy,
    // sweep
    pub a_list: Vec<usize>,
    pub seeds: usize,
    // output
    pub dir: PathBuf,
    pub record_wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            num_states: 20,
            num_actions: 100,
            dim: 8,
            horizon: 5,
            seed: 0,
            mdp_file: None,
            algorithm: Algorithm::Lsvi,
            variant: Variant::Lsvi(LsviMode::Exact),
            episodes: 100,
            n: None,
            epsilon: 0.5,
            c0: 1.0,
            p: 0.1,
            c: None,
            tau: None,
            c_beta: 100.0,
            lambda_reg: 1.0,
            lambda_quant: None,
            delta: 0.05,
            lsh: None,
            probe_policy: ProbePolicy::BestOfUnion,
            a_list: Vec::new(),
            seeds: 1,
            dir: PathBuf::from("out"),
            record_wall_clock: true,
        }
    }
}

/// Every accepted key, in documentation order.
pub const KNOWN_KEYS: &[&str] = &[
    "S",
    "A",
    "d",
    "H",
    "seed",
    "mdp_file",
    "algorithm",
    "variant",
    "K",
    "n",
    "epsilon",
    "C0",
    "p",
    "c",
    "tau",
    "c_beta",
    "lambda_reg",
    "lambda_quant",
    "delta",
    "lsh_bits",
    "lsh_tables",
    "lsh_repetitions",
    "probe_policy",
    "A_list",
    "seeds",
    "dir",
    "format",
    "record_wall_clock",
];

fn parse_value<T: FromStr>(key: &str, line: usize, raw: &str, expected: &str) -> Result<T, ConfigError> {
    raw.parse::<T>().map_err(|_| ConfigError::Value {
        key: key.into(),
        line,
        reason: format!("`{raw}` is not {expected}"),
    })
}

fn in_open_unit(key: &str, line: usize, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(ConfigError::Value {
            key: key.into(),
            line,
            reason: format!("{v} must lie strictly between 0 and 1"),
        })
    }
}

fn positive_f64(key: &str, line: usize, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::Value {
            key: key.into(),
            line,
            reason: format!("{v} must be positive"),
        })
    }
}

fn positive_usize(key: &str, line: usize, raw: &str) -> Result<usize, ConfigError> {
    let v: usize = parse_value(key, line, raw, "a non-negative integer")?;
    if v == 0 {
        return Err(ConfigError::Value {
            key: key.into(),
            line,
            reason: "must be at least 1".into(),
        });
    }
    Ok(v)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut variant_raw: Option<(String, usize)> = None;
        let (mut bits, mut tables, mut reps) = (None, None, None);
        let mut seen: Vec<&str> = Vec::new();

        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw_line.to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let known = KNOWN_KEYS.iter().find(|k| **k == key).ok_or_else(|| ConfigError::UnknownKey {
                key: key.into(),
                line,
            })?;
            if seen.contains(known) {
                return Err(ConfigError::Value {
                    key: key.into(),
                    line,
                    reason: "set more than once".into(),
                });
            }
            seen.push(known);

            match key {
                "S" => cfg.num_states = positive_usize(key, line, value)?,
                "A" => cfg.num_actions = positive_usize(key, line, value)?,
                "d" => cfg.dim = positive_usize(key, line, value)?,
                "H" => cfg.horizon = positive_usize(key, line, value)?,
                "seed" => cfg.seed = parse_value(key, line, value, "a non-negative integer")?,
                "mdp_file" => cfg.mdp_file = Some(PathBuf::from(value)),
                "algorithm" => {
                    cfg.algorithm = match value {
                        "lsvi" => Algorithm::Lsvi,
                        "ucb" => Algorithm::Ucb,
                        other => {
                            return Err(ConfigError::Value {
                                key: key.into(),
                                line,
                                reason: format!("`{other}` is not one of lsvi, ucb"),
                            })
                        }
                    }
                }
                "variant" => variant_raw = Some((value.to_string(), line)),
                "K" => cfg.episodes = positive_usize(key, line, value)?,
                "n" => cfg.n = Some(positive_usize(key, line, value)?),
                "epsilon" => cfg.epsilon = positive_f64(key, line, parse_value(key, line, value, "a number")?)?,
                "C0" => cfg.c0 = positive_f64(key, line, parse_value(key, line, value, "a number")?)?,
                "p" => cfg.p = in_open_unit(key, line, parse_value(key, line, value, "a number")?)?,
                "c" => cfg.c = Some(in_open_unit(key, line, parse_value(key, line, value, "a number")?)?),
                "tau" => cfg.tau = Some(in_open_unit(key, line, parse_value(key, line, value, "a number")?)?),
                "c_beta" => {
                    let v: f64 = parse_value(key, line, value, "a number")?;
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            line,
                            reason: format!("{v} must be nonnegative"),
                        });
                    }
                    cfg.c_beta = v;
                }
                "lambda_reg" => cfg.lambda_reg = positive_f64(key, line, parse_value(key, line, value, "a number")?)?,
                "lambda_quant" => {
                    cfg.lambda_quant = Some(in_open_unit(key, line, parse_value(key, line, value, "a number")?)?)
                }
                "delta" => cfg.delta = in_open_unit(key, line, parse_value(key, line, value, "a number")?)?,
                "lsh_bits" => bits = Some((positive_usize(key, line, value)?, line)),
                "lsh_tables" => tables = Some((positive_usize(key, line, value)?, line)),
                "lsh_repetitions" => reps = Some((positive_usize(key, line, value)?, line)),
                "probe_policy" => {
                    cfg.probe_policy = match value {
                        "best_of_union" => ProbePolicy::BestOfUnion,
                        "first_hit" => ProbePolicy::FirstHit,
                        other => {
                            return Err(ConfigError::Value {
                                key: key.into(),
                                line,
                                reason: format!("`{other}` is not one of best_of_union, first_hit"),
                            })
                        }
                    }
                }
                "A_list" => {
                    cfg.a_list = value
                        .split(',')
                        .map(|v| positive_usize(key, line, v.trim()))
                        .collect::<Result<_, _>>()?
                }
                "seeds" => cfg.seeds = positive_usize(key, line, value)?,
                "dir" => cfg.dir = PathBuf::from(value),
                "format" => {
                    if value != "csv" {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            line,
                            reason: format!("`{value}` is not supported; only csv"),
                        });
                    }
                }
                "record_wall_clock" => {
                    cfg.record_wall_clock = parse_value(key, line, value, "true or false")?;
                }
                _ => unreachable!("key list and match arms agree"),
            }
        }

        cfg.variant = match variant_raw {
            Some((name, line)) => Variant::parse(cfg.algorithm, &name).map_err(|e| match e {
                ConfigError::Value { key, reason, .. } => ConfigError::Value { key, line, reason },
                other => other,
            })?,
            None => match cfg.algorithm {
                Algorithm::Lsvi => Variant::Lsvi(LsviMode::Exact),
                Algorithm::Ucb => Variant::Ucb(UcbVariant::MatrixNorm),
            },
        };

        cfg.lsh = match (bits, tables) {
            (None, None) => {
                if let Some((_, line)) = reps {
                    return Err(ConfigError::Value {
                        key: "lsh_repetitions".into(),
                        line,
                        reason: "needs lsh_bits and lsh_tables".into(),
                    });
                }
                None
            }
            (Some((b, line)), Some((t, _))) => {
                let r = reps.map_or(1, |(r, _)| r);
                Some(LshConfig::new(b, t, r, 0).map_err(|e| ConfigError::Value {
                    key: "lsh_bits".into(),
                    line,
                    reason: e.to_string(),
                })?)
            }
            (Some((_, line)), None) | (None, Some((_, line))) => {
                return Err(ConfigError::Value {
                    key: if bits.is_some() { "lsh_tables".into() } else { "lsh_bits".into() },
                    line,
                    reason: "lsh_bits and lsh_tables must be given together".into(),
                })
            }
        };

        if cfg.variant == Variant::Lsvi(LsviMode::SublinearAdaptive) && cfg.lambda_quant.is_none() {
            return Err(ConfigError::Value {
                key: "lambda_quant".into(),
                line: 0,
                reason: "variant sublinear_adaptive needs lambda_quant".into(),
            });
        }
        Ok(cfg)
    }

    /// Effective LSVI mode: `sublinear` with `lambda_quant` set engages the
    /// adaptive wrapper.
    pub fn lsvi_mode(&self) -> Option<LsviMode> {
        match self.variant {
            Variant::Lsvi(LsviMode::Sublinear) if self.lambda_quant.is_some() => Some(LsviMode::SublinearAdaptive),
            Variant::Lsvi(m) => Some(m),
            Variant::Ucb(_) => None,
        }
    }

    /// Seeds `seed, seed + 1, …` for `seeds` runs.
    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }
}
