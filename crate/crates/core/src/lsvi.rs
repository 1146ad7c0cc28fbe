//! Least-squares value iteration from span-column samples, with exact or
//! LSH-backed value updates.
//!
//! Each step `h` (backward from `H − 1`) fits
//! `ŵ_h = Λ⁺ Σ φ(s_j, a_j)·(r_h(s_j, a_j) + V̂_{h+1}(s′))` with `Λ = n·ΦΦᵀ`,
//! then sets `V̂_h(s) = max_{a ∈ A_core} ⟨ŵ_h, φ(s,a)⟩`. The sublinear modes
//! answer that maximum with one Max-IP index per core state, falling back to
//! a full scan when the index reports a failure.

use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptive::{kappa, AdaptiveMaxIpIndex, QuantizationSpec};
use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, mat_vec, norm, numerical_rank};
use crate::lsh::{derive_table_params, LshConfig};
use crate::maxip::{MaxIpIndex, MaxIpParams, Outcome, ProbePolicy};
use crate::mdp::{optimal_values, policy_value, sample_transition, CoreSets, Instance, LinearMdp, Policy, SpanMatrix, RANK_TOL};

/// Singular-value cutoff for the pseudo-inverse of `Λ`.
pub const PINV_CUTOFF: f64 = 1e-10;
/// Exact value updates used to calibrate `τ` before any index is built.
pub const CALIBRATION_QUERIES: usize = 32;
/// `τ` is set to this fraction of the smallest calibrated optimum.
pub const CALIBRATION_FACTOR: f64 = 0.9;
/// `D_x` is this multiple of the running maximum of `‖ŵ_h‖`.
pub const QUERY_BOUND_SLACK: f64 = 1.1;
/// Calibrated `τ` is clamped into this range so that index parameters stay
/// valid even on degenerate calibration batches.
const TAU_RANGE: (f64, f64) = (1e-3, 0.99);
/// Seed stride between per-state indices.
const STATE_SEED_STRIDE: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsviMode {
    Exact,
    Sublinear,
    SublinearAdaptive,
}

impl LsviMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LsviMode::Exact => "exact",
            LsviMode::Sublinear => "sublinear",
            LsviMode::SublinearAdaptive => "sublinear_adaptive",
        }
    }
}

impl FromStr for LsviMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(LsviMode::Exact),
            "sublinear" => Ok(LsviMode::Sublinear),
            "sublinear_adaptive" => Ok(LsviMode::SublinearAdaptive),
            other => Err(invalid(
                "mode",
                format!("unknown LSVI mode `{other}` (expected exact, sublinear or sublinear_adaptive)"),
            )),
        }
    }
}

/// Per-state index settings shared by the sublinear modes.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSettings {
    /// Max-IP approximation factor.
    pub c: f64,
    /// Promise threshold on the normalized score `⟨ŵ, φ⟩ / D_x`. `None`
    /// calibrates it from the first [`CALIBRATION_QUERIES`] value updates.
    pub tau: Option<f64>,
    /// Explicit table shape; `None` derives it from `(c, τ)` and `|A_core|`.
    /// The seed field is ignored.
    pub lsh: Option<LshConfig>,
    pub policy: ProbePolicy,
    /// Quantization width `λ` and failure probability `δ` for the adaptive
    /// wrapper.
    pub quantization: Option<(f64, f64)>,
    pub seed: u64,
}

impl IndexSettings {
    pub fn new(c: f64, seed: u64) -> Self {
        Self {
            c,
            tau: None,
            lsh: None,
            policy: ProbePolicy::default(),
            quantization: None,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsviConfig {
    /// Samples per span column.
    pub n: usize,
    pub epsilon: f64,
    pub iota: f64,
    pub mode: LsviMode,
    pub index: IndexSettings,
}

/// `n = ⌈C₀²·ε⁻²·L²·H⁴·ι⌉`.
pub fn required_sample_count(epsilon: f64, span_bound: f64, horizon: usize, iota: f64, c0: f64) -> Result<usize> {
    for (name, v) in [("epsilon", epsilon), ("L", span_bound), ("iota", iota), ("C0", c0)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(name, format!("must be positive, got {v}")));
        }
    }
    if horizon == 0 {
        return Err(invalid("H", "must be positive"));
    }
    let h = horizon as f64;
    let n = (c0 * c0 * span_bound * span_bound * h.powi(4) * iota / (epsilon * epsilon)).ceil();
    if n > usize::MAX as f64 {
        return Err(invalid("epsilon", "sample count overflows"));
    }
    Ok(n as usize)
}

/// `c = 1 − C₀·L·√(ι/n)`.
pub fn approximation_for_samples(c0: f64, span_bound: f64, iota: f64, n: usize) -> f64 {
    1.0 - c0 * span_bound * (iota / n as f64).sqrt()
}

/// `ι = ln(H·d/p)`.
pub fn log_factor(horizon: usize, dim: usize, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("p", format!("must lie in (0, 1), got {p}")));
    }
    Ok((horizon as f64 * dim as f64 / p).ln())
}

/// One simulator call: span column `column` queried at its step, landing in
/// `next`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub column: usize,
    pub next: usize,
}

/// `steps[h]` holds `M·n` samples, column-major: all `n` draws for column 0
/// first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    pub n: usize,
    pub steps: Vec<Vec<Sample>>,
}

impl SampleSet {
    pub fn total(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }
}

/// Queries every span column `n` times at every step.
pub fn collect_samples<R: Rng + ?Sized>(mdp: &LinearMdp, span: &SpanMatrix, n: usize, rng: &mut R) -> Result<SampleSet> {
    if n == 0 {
        return Err(invalid("n", "need at least one sample per column"));
    }
    let mut steps = Vec::with_capacity(mdp.horizon());
    for h in 0..mdp.horizon() {
        let mut d_h = Vec::with_capacity(span.len() * n);
        for (column, &(s, a)) in span.pairs.iter().enumerate() {
            for _ in 0..n {
                let next = sample_transition(mdp, s, a, h, rng)?;
                d_h.push(Sample { column, next });
            }
        }
        steps.push(d_h);
    }
    Ok(SampleSet { n, steps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaPair {
    pub lambda: DMatrix<f64>,
    /// Pseudo-inverse, equal to the inverse when `M = d`.
    pub inverse: DMatrix<f64>,
}

/// `Λ = n·ΦΦᵀ` and its inverse on the span's column space.
pub fn compute_lambda(mdp: &LinearMdp, span: &SpanMatrix, n: usize) -> Result<LambdaPair> {
    if n == 0 {
        return Err(invalid("n", "need at least one sample per column"));
    }
    let phi = span.matrix(mdp);
    let rank = numerical_rank(&phi, RANK_TOL);
    if rank < span.len() {
        return Err(Error::RankDeficient {
            rank,
            expected: span.len(),
        });
    }
    let lambda = (&phi * phi.transpose()) * n as f64;
    let inverse = lambda
        .clone()
        .pseudo_inverse(PINV_CUTOFF)
        .map_err(|e| invalid("lambda", e.to_string()))?;
    Ok(LambdaPair { lambda, inverse })
}

#[derive(Debug, Clone)]
enum Backend {
    Plain(MaxIpIndex),
    Adaptive(AdaptiveMaxIpIndex),
}

impl Backend {
    fn set_query_bound(&mut self, d_x: f64) -> Result<()> {
        match self {
            Backend::Plain(i) => i.set_query_bound(d_x),
            Backend::Adaptive(i) => i.set_query_bound(d_x),
        }
    }

    fn query(&self, x: &[f64]) -> Result<crate::maxip::MaxIpResult> {
        match self {
            Backend::Plain(i) => i.query(x),
            Backend::Adaptive(i) => i.query(x),
        }
    }
}

/// Answer to one value update `max_{a ∈ A_core} ⟨w, φ(s,a)⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueAnswer {
    pub value: f64,
    pub action: usize,
    /// Stored points scored, including any fallback scan.
    pub probes: usize,
    pub fallback: bool,
    /// Whether the answer came from a plain scan (calibration or exact mode).
    pub scanned: bool,
}

/// One Max-IP index per core state over `{φ(s,a) : a ∈ A_core}`.
///
/// Indices are built on the first query that needs them: immediately when
/// `τ` is given, otherwise after [`CALIBRATION_QUERIES`] exact answers have
/// fixed `τ = 0.9 × (smallest normalized optimum)`.
#[derive(Debug, Clone)]
pub struct StateIndices {
    settings: IndexSettings,
    core_actions: Vec<usize>,
    /// Position of each state in `features`, `None` for non-core states.
    slot: Vec<Option<usize>>,
    features: Vec<Vec<Vec<f64>>>,
    tau: Option<f64>,
    calibration: Vec<f64>,
    backends: Vec<Backend>,
    kappa: Option<usize>,
    build_nanos: u128,
}

impl StateIndices {
    pub fn new(mdp: &LinearMdp, core: &CoreSets, settings: IndexSettings) -> Result<Self> {
        if !(settings.c > 0.0 && settings.c < 1.0) {
            return Err(invalid("c", format!("must lie in (0, 1), got {}", settings.c)));
        }
        if core.core_actions.is_empty() {
            return Err(Error::EmptyDataSet);
        }
        let mut slot = vec![None; mdp.num_states()];
        let mut features = Vec::with_capacity(core.core_states.len());
        for (i, &s) in core.core_states.iter().enumerate() {
            slot[s] = Some(i);
            features.push(core.core_actions.iter().map(|&a| mdp.feature(s, a).to_vec()).collect());
        }
        Ok(Self {
            tau: settings.tau,
            settings,
            core_actions: core.core_actions.clone(),
            slot,
            features,
            calibration: Vec::new(),
            backends: Vec::new(),
            kappa: None,
            build_nanos: 0,
        })
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn kappa(&self) -> Option<usize> {
        self.kappa
    }

    pub fn is_built(&self) -> bool {
        !self.backends.is_empty()
    }

    /// Time spent building indices so far.
    pub fn build_nanos(&self) -> u128 {
        self.build_nanos
    }

    fn build(&mut self, tau: f64, d_x: f64) -> Result<()> {
        let start = Instant::now();
        let n = self.core_actions.len();
        let params = MaxIpParams::new(self.settings.c, tau, d_x)?;
        let config_for = |seed: u64| -> Result<LshConfig> {
            match self.settings.lsh {
                Some(cfg) => Ok(cfg.with_seed(seed)),
                None => {
                    let (r, cbar) = params.ann_radius();
                    derive_table_params(n, cbar, r, seed)
                }
            }
        };
        let mut backends = Vec::with_capacity(self.features.len());
        for (i, ys) in self.features.iter().enumerate() {
            let seed = self.settings.seed.wrapping_add((i as u64 + 1).wrapping_mul(STATE_SEED_STRIDE));
            let config = config_for(seed)?;
            let backend = match self.settings.quantization {
                None => Backend::Plain(MaxIpIndex::build(ys, params, config)?.with_policy(self.settings.policy)),
                Some((lambda, delta)) => {
                    let dim = ys[0].len();
                    let spec = QuantizationSpec::new(lambda, dim, d_x, delta)?;
                    let count = kappa(n, dim, d_x, lambda, delta)?;
                    self.kappa = Some(count);
                    Backend::Adaptive(
                        AdaptiveMaxIpIndex::build_with_replicas(ys, params, config, spec, count)?
                            .with_policy(self.settings.policy),
                    )
                }
            };
            backends.push(backend);
        }
        self.tau = Some(tau);
        self.backends = backends;
        self.build_nanos += start.elapsed().as_nanos();
        Ok(())
    }

    fn scan(&self, slot: usize, w: &[f64]) -> ValueAnswer {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, f) in self.features[slot].iter().enumerate() {
            let v = dot(w, f);
            if v > best.1 {
                best = (i, v);
            }
        }
        ValueAnswer {
            value: best.1,
            action: self.core_actions[best.0],
            probes: self.features[slot].len(),
            fallback: false,
            scanned: true,
        }
    }

    /// Answers `max_{a ∈ A_core} ⟨w, φ(s,a)⟩` for `‖w‖ ≤ d_x`.
    pub fn value(&mut self, state: usize, w: &[f64], d_x: f64) -> Result<ValueAnswer> {
        let slot = self
            .slot
            .get(state)
            .copied()
            .flatten()
            .ok_or(Error::MissingIndex { state })?;
        if !self.is_built() {
            match self.tau {
                Some(tau) => self.build(tau, d_x)?,
                None => {
                    let ans = self.scan(slot, w);
                    self.calibration.push(ans.value / d_x);
                    if self.calibration.len() >= CALIBRATION_QUERIES {
                        let min = self.calibration.iter().copied().fold(f64::INFINITY, f64::min);
                        let tau = (CALIBRATION_FACTOR * min).clamp(TAU_RANGE.0, TAU_RANGE.1);
                        self.build(tau, d_x)?;
                    }
                    return Ok(ans);
                }
            }
        }
        let backend = &mut self.backends[slot];
        backend.set_query_bound(d_x)?;
        let res = backend.query(w)?;
        match res.outcome {
            Outcome::Candidate { id, inner_product } => Ok(ValueAnswer {
                value: inner_product,
                action: self.core_actions[id],
                probes: res.probe_stats.candidates,
                fallback: false,
                scanned: false,
            }),
            Outcome::Fail => {
                let mut ans = self.scan(slot, w);
                ans.probes += res.probe_stats.candidates;
                ans.fallback = true;
                ans.scanned = false;
                Ok(ans)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LsviStats {
    pub value_updates: usize,
    /// Stored features scored across all value updates.
    pub probes: usize,
    pub fallbacks: usize,
    /// Value updates answered by an index (including those that fell back).
    pub index_queries: usize,
    pub tau: Option<f64>,
    pub kappa: Option<usize>,
    /// Query time only; index construction is in `build_nanos`.
    pub value_update_nanos: u128,
    pub build_nanos: u128,
}

impl LsviStats {
    pub fn probes_mean(&self) -> f64 {
        if self.value_updates == 0 {
            0.0
        } else {
            self.probes as f64 / self.value_updates as f64
        }
    }

    pub fn wall_ms_per_value_update(&self) -> f64 {
        if self.value_updates == 0 {
            0.0
        } else {
            self.value_update_nanos as f64 / 1e6 / self.value_updates as f64
        }
    }
}

/// Result of one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass {
    /// `ŵ_h` for `h < H`.
    pub weights: Vec<Vec<f64>>,
    /// `V̂_h(s)` for `h ≤ H`, with `V̂_H = 0`.
    pub values: Vec<Vec<f64>>,
    /// `D_x` used at each step.
    pub query_bounds: Vec<f64>,
    pub stats: LsviStats,
}

/// Runs the backward regression. `indices` is required in the sublinear
/// modes and ignored in exact mode.
pub fn backward_pass(
    mdp: &LinearMdp,
    core: &CoreSets,
    span: &SpanMatrix,
    samples: &SampleSet,
    lambda: &LambdaPair,
    mode: LsviMode,
    mut indices: Option<&mut StateIndices>,
) -> Result<BackwardPass> {
    let (ns, hz, d) = (mdp.num_states(), mdp.horizon(), mdp.dim());
    if samples.steps.len() != hz {
        return Err(invalid("samples", format!("expected {hz} steps, got {}", samples.steps.len())));
    }
    if mode != LsviMode::Exact && indices.is_none() {
        return Err(Error::MissingIndex {
            state: core.core_states.first().copied().unwrap_or(0),
        });
    }
    let mut weights = vec![vec![0.0; d]; hz];
    let mut values = vec![vec![0.0; ns]; hz + 1];
    let mut query_bounds = vec![0.0; hz];
    let mut stats = LsviStats::default();
    let mut max_weight_norm: f64 = 0.0;

    for h in (0..hz).rev() {
        // Σ φ_j (r_j + V̂_{h+1}(s′)) grouped by column.
        let mut column_targets = vec![0.0; span.len()];
        for smp in &samples.steps[h] {
            column_targets[smp.column] += values[h + 1][smp.next];
        }
        let mut rhs = vec![0.0; d];
        for (j, &(s, a)) in span.pairs.iter().enumerate() {
            let target = column_targets[j] + samples.n as f64 * mdp.reward(h, s, a);
            for (r, f) in rhs.iter_mut().zip(mdp.feature(s, a)) {
                *r += f * target;
            }
        }
        let w = mat_vec(&lambda.inverse, &rhs);
        max_weight_norm = max_weight_norm.max(norm(&w));
        let d_x = if max_weight_norm > 0.0 {
            QUERY_BOUND_SLACK * max_weight_norm
        } else {
            1.0
        };
        query_bounds[h] = d_x;

        let start = Instant::now();
        let built_before = indices.as_deref().map_or(0, |i| i.build_nanos());
        let mut row = vec![0.0; ns];
        for (s, slot) in row.iter_mut().enumerate() {
            let ans = match (mode, indices.as_deref_mut()) {
                (LsviMode::Exact, _) | (_, None) => exact_value(mdp, core, s, &w),
                (_, Some(idx)) => idx.value(s, &w, d_x)?,
            };
            stats.value_updates += 1;
            stats.probes += ans.probes;
            if !ans.scanned {
                stats.index_queries += 1;
            }
            if ans.fallback {
                stats.fallbacks += 1;
            }
            *slot = ans.value;
        }
        values[h] = row;
        let built = indices.as_deref().map_or(0, |i| i.build_nanos()) - built_before;
        stats.value_update_nanos += start.elapsed().as_nanos().saturating_sub(built);
        stats.build_nanos += built;
        weights[h] = w;
    }
    if let Some(idx) = indices {
        stats.tau = idx.tau();
        stats.kappa = idx.kappa();
    }
    Ok(BackwardPass {
        weights,
        values,
        query_bounds,
        stats,
    })
}

fn exact_value(mdp: &LinearMdp, core: &CoreSets, s: usize, w: &[f64]) -> ValueAnswer {
    let mut best = (0, f64::NEG_INFINITY);
    for &a in &core.core_actions {
        let v = dot(w, mdp.feature(s, a));
        if v > best.1 {
            best = (a, v);
        }
    }
    ValueAnswer {
        value: best.1,
        action: best.0,
        probes: core.core_actions.len(),
        fallback: false,
        scanned: true,
    }
}

/// `π̂_h(s) = argmax_a ⟨ŵ_h, φ(s,a)⟩` over all actions, ties to the smallest
/// action id.
pub fn greedy_policy(mdp: &LinearMdp, weights: &[Vec<f64>]) -> Policy {
    Policy::from_fn(weights.len(), mdp.num_states(), |h, s| {
        let mut best = (0, f64::NEG_INFINITY);
        for a in 0..mdp.num_actions() {
            let v = dot(&weights[h], mdp.feature(s, a));
            if v > best.1 {
                best = (a, v);
            }
        }
        best.0
    })
}

/// `V*_0(s) − V^π_0(s)`.
pub fn evaluate_suboptimality(mdp: &LinearMdp, policy: &Policy, initial_state: usize) -> Result<f64> {
    if initial_state >= mdp.num_states() {
        return Err(Error::OutOfRange {
            what: "state",
            value: initial_state,
            limit: mdp.num_states(),
        });
    }
    let star = optimal_values(mdp);
    let pi = policy_value(mdp, policy)?;
    Ok(star.v(0, initial_state) - pi.v(0, initial_state))
}

/// Outcome of a full LSVI run.
#[derive(Debug, Clone, PartialEq)]
pub struct LsviReport {
    pub pass: BackwardPass,
    pub policy: Policy,
    /// `max_s (V*_0(s) − V^π̂_0(s))`.
    pub suboptimality: f64,
    pub simulator_calls: usize,
}

/// Collects samples with a generator seeded from `seed`, runs the backward
/// pass and evaluates the greedy policy against the exact optimum.
///
/// Sampling draws from its own stream, so every mode sees the same samples
/// for the same seed.
pub fn run_lsvi(inst: &Instance, config: &LsviConfig, seed: u64) -> Result<LsviReport> {
    let mdp = &inst.mdp;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = collect_samples(mdp, &inst.span, config.n, &mut rng)?;
    let lambda = compute_lambda(mdp, &inst.span, config.n)?;
    let mut indices = match config.mode {
        LsviMode::Exact => None,
        LsviMode::Sublinear | LsviMode::SublinearAdaptive => {
            let mut settings = config.index.clone();
            settings.seed ^= seed.rotate_left(17);
            if config.mode == LsviMode::Sublinear {
                settings.quantization = None;
            } else if settings.quantization.is_none() {
                return Err(invalid("lambda_quant", "sublinear_adaptive mode needs a quantization width"));
            }
            Some(StateIndices::new(mdp, &inst.core, settings)?)
        }
    };
    let pass = backward_pass(mdp, &inst.core, &inst.span, &samples, &lambda, config.mode, indices.as_mut())?;
    let policy = greedy_policy(mdp, &pass.weights);
    let star = optimal_values(mdp);
    let pi = policy_value(mdp, &policy)?;
    let suboptimality = (0..mdp.num_states())
        .map(|s| star.v(0, s) - pi.v(0, s))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LsviReport {
        pass,
        policy,
        suboptimality,
        simulator_calls: samples.total(),
    })
}
