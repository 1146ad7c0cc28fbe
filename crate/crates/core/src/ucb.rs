//! Optimistic least-squares value iteration (LSVI-UCB) and its variants.
//!
//! Every episode plans backward with ridge regressions
//! `w_h = Λ_h⁻¹ Σ_τ φ_τ (r_τ + V_{h+1}(s′_τ))`, `Λ_h = λI + Σ_τ φ_τ φ_τᵀ`,
//! then acts greedily on one of:
//!
//! * `exact`: `Q = min{wᵀφ + β‖φ‖_{Λ⁻¹}, H}`;
//! * `matrix_norm`: `Q = min{‖φ‖_M, H}` with `M = 2β²Λ⁻¹ + 2wwᵀ`, by scan;
//! * `sublinear`: the same `Q`, maximized through per-state MatNorm indices;
//! * `switch_limited`: `sublinear`, but the acting policy is only replaced
//!   once some `det Λ_h` has doubled since the last replacement.
//!
//! Regressions are evaluated through per-step aggregates
//! `Σ φ_τ r_τ` and `Σ_{τ: s′_τ = s′} φ_τ`, which give the same weights as
//! summing over every past episode.

use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, identity_residual, mat_vec, norm, quad_form, spd_inverse};
use crate::lsh::{derive_table_params, LshConfig};
use crate::lsvi::{CALIBRATION_FACTOR, CALIBRATION_QUERIES};
use crate::maxip::{MaxIpParams, ProbePolicy};
use crate::matnorm::{mat_norm, MatNormIndex, MatNormOutcome, PsdQuery};
use crate::mdp::{optimal_values, policy_value, sample_transition, Instance, LinearMdp, Policy, ValueTables};

/// Sherman–Morrison updates between residual checks.
pub const RESIDUAL_CHECK_INTERVAL: usize = 64;
/// Largest tolerated `‖ΛΛ⁻¹ − I‖_F` before a full re-inversion.
pub const RESIDUAL_TOL: f64 = 1e-6;
const TAU_RANGE: (f64, f64) = (1e-3, 0.99);
const STATE_SEED_STRIDE: u64 = 0xA076_1D64_78BD_642F;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcbVariant {
    Exact,
    MatrixNorm,
    Sublinear,
    SwitchLimited,
}

impl UcbVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            UcbVariant::Exact => "exact",
            UcbVariant::MatrixNorm => "matrix_norm",
            UcbVariant::Sublinear => "sublinear",
            UcbVariant::SwitchLimited => "switch_limited",
        }
    }

    fn uses_index(&self) -> bool {
        matches!(self, UcbVariant::Sublinear | UcbVariant::SwitchLimited)
    }
}

impl FromStr for UcbVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(UcbVariant::Exact),
            "matrix_norm" => Ok(UcbVariant::MatrixNorm),
            "sublinear" => Ok(UcbVariant::Sublinear),
            "switch_limited" => Ok(UcbVariant::SwitchLimited),
            other => Err(invalid(
                "variant",
                format!("unknown UCB variant `{other}` (expected exact, matrix_norm, sublinear or switch_limited)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UcbConfig {
    pub episodes: usize,
    pub lambda_reg: f64,
    pub c_beta: f64,
    /// Failure probability in `ι = ln(2dT/p)`.
    pub p: f64,
    /// MatNorm approximation; `None` means `1 − 1/√K`.
    pub c: Option<f64>,
    /// MatNorm promise threshold; `None` calibrates it.
    pub tau: Option<f64>,
    pub lsh: Option<LshConfig>,
    pub policy: ProbePolicy,
    pub variant: UcbVariant,
    pub index_seed: u64,
}

impl UcbConfig {
    pub fn new(variant: UcbVariant, episodes: usize) -> Self {
        Self {
            episodes,
            lambda_reg: 1.0,
            c_beta: 100.0,
            p: 0.1,
            c: None,
            tau: None,
            lsh: None,
            policy: ProbePolicy::default(),
            variant,
            index_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(invalid("K", "need at least one episode"));
        }
        if !(self.lambda_reg > 0.0 && self.lambda_reg.is_finite()) {
            return Err(invalid("lambda_reg", format!("must be positive, got {}", self.lambda_reg)));
        }
        if !(self.c_beta >= 0.0 && self.c_beta.is_finite()) {
            return Err(invalid("c_beta", format!("must be nonnegative, got {}", self.c_beta)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(invalid("p", format!("must lie in (0, 1), got {}", self.p)));
        }
        let c = self.approximation();
        if !(c > 0.0 && c < 1.0) {
            return Err(invalid("c", format!("must lie in (0, 1), got {c}")));
        }
        Ok(())
    }

    pub fn approximation(&self) -> f64 {
        self.c.unwrap_or_else(|| 1.0 - 1.0 / (self.episodes as f64).sqrt())
    }
}

/// `β = C_β·d·H·√ι`.
pub fn beta(c_beta: f64, dim: usize, horizon: usize, iota: f64) -> f64 {
    c_beta * dim as f64 * horizon as f64 * iota.sqrt()
}

/// `ι = ln(2dT/p)` with `T = K·H`.
pub fn log_factor(dim: usize, total_steps: usize, p: f64) -> f64 {
    (2.0 * dim as f64 * total_steps as f64 / p).ln()
}

/// `min{wᵀφ + β·√(φᵀΛ⁻¹φ), H}`.
pub fn ucb_q_exact(w: &[f64], phi: &[f64], beta: f64, lambda_inv: &DMatrix<f64>, horizon: f64) -> Result<f64> {
    if w.len() != phi.len() || lambda_inv.nrows() != phi.len() || lambda_inv.ncols() != phi.len() {
        return Err(Error::DimensionMismatch {
            expected: phi.len(),
            got: if w.len() != phi.len() { w.len() } else { lambda_inv.nrows() },
        });
    }
    let bonus = quad_form(lambda_inv, phi).max(0.0).sqrt();
    Ok((dot(w, phi) + beta * bonus).min(horizon))
}

/// `2β²Λ⁻¹ + 2wwᵀ`, validated as PSD.
pub fn query_matrix(beta: f64, lambda_inv: &DMatrix<f64>, w: &[f64]) -> Result<PsdQuery> {
    let d = w.len();
    let mut m = lambda_inv * (2.0 * beta * beta);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] += 2.0 * w[i] * w[j];
        }
    }
    // Λ⁻¹ is symmetric only up to rounding.
    let sym = (&m + m.transpose()) * 0.5;
    PsdQuery::new(sym)
}

/// `min{‖φ‖_M, H}`.
pub fn ucb_q_matnorm(phi: &[f64], m_query: &PsdQuery, horizon: f64) -> Result<f64> {
    Ok(mat_norm(phi, m_query)?.min(horizon))
}

/// Regularized design matrix and its inverse, maintained by rank-one updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub lambda: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    since_check: usize,
    reinversions: usize,
}

impl Design {
    pub fn new(dim: usize, reg: f64) -> Self {
        Self {
            lambda: DMatrix::identity(dim, dim) * reg,
            inverse: DMatrix::identity(dim, dim) / reg,
            since_check: 0,
            reinversions: 0,
        }
    }

    pub fn reinversions(&self) -> usize {
        self.reinversions
    }

    /// `Λ ← Λ + φφᵀ` with a Sherman–Morrison update of `Λ⁻¹`. Every
    /// [`RESIDUAL_CHECK_INTERVAL`] updates the residual `‖ΛΛ⁻¹ − I‖_F` is
    /// checked and `Λ⁻¹` recomputed from scratch if it exceeds
    /// [`RESIDUAL_TOL`].
    pub fn update(&mut self, phi: &[f64]) -> Result<()> {
        let d = phi.len();
        if d != self.lambda.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.lambda.nrows(),
                got: d,
            });
        }
        if phi.iter().all(|&v| v == 0.0) {
            return Ok(());
        }
        let u = mat_vec(&self.inverse, phi);
        let denom = 1.0 + dot(phi, &u);
        assert!(denom > 0.0, "1 + φᵀΛ⁻¹φ = {denom} for a positive definite Λ");
        for i in 0..d {
            for j in 0..d {
                self.lambda[(i, j)] += phi[i] * phi[j];
                self.inverse[(i, j)] -= u[i] * u[j] / denom;
            }
        }
        self.since_check += 1;
        if self.since_check >= RESIDUAL_CHECK_INTERVAL {
            self.since_check = 0;
            if identity_residual(&self.lambda, &self.inverse) > RESIDUAL_TOL {
                self.reinvert()?;
            }
        }
        Ok(())
    }

    pub fn reinvert(&mut self) -> Result<()> {
        self.inverse = spd_inverse(&self.lambda).ok_or_else(|| Error::NotPsd {
            reason: "design matrix lost positive definiteness".into(),
        })?;
        self.reinversions += 1;
        Ok(())
    }

    pub fn log_det(&self) -> f64 {
        match self.lambda.clone().cholesky() {
            Some(ch) => 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
            None => f64::NEG_INFINITY,
        }
    }
}

/// Per-state MatNorm indices with the same calibrate-then-build schedule as
/// the LSVI indices.
#[derive(Debug, Clone)]
struct MatNormIndices {
    c: f64,
    tau: Option<f64>,
    lsh: Option<LshConfig>,
    policy: ProbePolicy,
    seed: u64,
    features: Vec<Vec<Vec<f64>>>,
    lift_scales: Vec<f64>,
    calibration: Vec<f64>,
    indices: Vec<MatNormIndex>,
}

impl MatNormIndices {
    fn new(mdp: &LinearMdp, config: &UcbConfig, seed: u64) -> Self {
        let features: Vec<Vec<Vec<f64>>> = (0..mdp.num_states()).map(|s| mdp.state_features(s)).collect();
        let lift_scales = features
            .iter()
            .map(|ys| {
                let m = ys.iter().map(|y| dot(y, y)).fold(0.0, f64::max);
                if m > 0.0 {
                    m
                } else {
                    1.0
                }
            })
            .collect();
        Self {
            c: config.approximation(),
            tau: config.tau,
            lsh: config.lsh,
            policy: config.policy,
            seed,
            features,
            lift_scales,
            calibration: Vec::new(),
            indices: Vec::new(),
        }
    }

    fn build(&mut self, tau: f64) -> Result<()> {
        let n = self.features[0].len();
        let inner = MaxIpParams::new(self.c * self.c, tau * tau, 1.0)?;
        let (r, cbar) = inner.ann_radius();
        let mut indices = Vec::with_capacity(self.features.len());
        for (s, ys) in self.features.iter().enumerate() {
            let seed = self.seed.wrapping_add((s as u64 + 1).wrapping_mul(STATE_SEED_STRIDE));
            let config = match self.lsh {
                Some(cfg) => cfg.with_seed(seed),
                None => derive_table_params(n, cbar, r, seed)?,
            };
            indices.push(MatNormIndex::build(ys, self.c, tau, config)?.with_policy(self.policy));
        }
        self.tau = Some(tau);
        self.indices = indices;
        Ok(())
    }
}

/// Answer to `max_a min{‖φ(s,a)‖_M, H}` or the exact-variant maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Choice {
    action: usize,
    value: f64,
    probes: usize,
    fallback: bool,
}

fn scan_matnorm(features: &[Vec<f64>], m: &PsdQuery, horizon: f64) -> Result<Choice> {
    let mut best = (0, f64::NEG_INFINITY);
    for (a, f) in features.iter().enumerate() {
        let q = ucb_q_matnorm(f, m, horizon)?;
        if q > best.1 {
            best = (a, q);
        }
    }
    Ok(Choice {
        action: best.0,
        value: best.1,
        probes: features.len(),
        fallback: false,
    })
}

/// One episode's accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// 1-based episode number.
    pub k: usize,
    pub initial_state: usize,
    /// `V*_0(s₁) − V^{π_k}_0(s₁)`.
    pub gap: f64,
    pub cum_regret: f64,
    /// Features scored while planning this episode.
    pub probes: usize,
    pub fallbacks: usize,
    /// Cumulative policy replacements (switch-limited variant only).
    pub switches: usize,
    pub wall_ms: f64,
    /// Largest `‖w_h‖ / (2H√(dk/λ))` over steps; at most one when the weight
    /// bound holds.
    pub weight_ratio: f64,
}

/// Online learner state. Drive it with [`UcbLearner::run_episode`].
#[derive(Debug, Clone)]
pub struct UcbLearner<'a> {
    mdp: &'a LinearMdp,
    config: UcbConfig,
    beta: f64,
    iota: f64,
    designs: Vec<Design>,
    /// `Σ φ_τ r_τ` per step.
    reward_sums: Vec<Vec<f64>>,
    /// `Σ_{τ: s′_τ = s′} φ_τ` per step, at `s′·d`.
    next_sums: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    /// Planned `Q_h(s,a)` at `(h·S + s)·A + a`; only the chosen action's
    /// entry is filled in the index-backed variants.
    q: Vec<f64>,
    values: Vec<Vec<f64>>,
    policy: Policy,
    override_policy: Option<Policy>,
    indices: Option<MatNormIndices>,
    episodes_done: usize,
    switches: usize,
    log_det_at_switch: Vec<f64>,
    switch_pending: bool,
    optimal: ValueTables,
}

impl<'a> UcbLearner<'a> {
    pub fn new(mdp: &'a LinearMdp, config: UcbConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (ns, na, d, hz) = (mdp.num_states(), mdp.num_actions(), mdp.dim(), mdp.horizon());
        let iota = log_factor(d, config.episodes * hz, config.p);
        let beta = beta(config.c_beta, d, hz, iota);
        let designs = vec![Design::new(d, config.lambda_reg); hz];
        let log_det_at_switch = designs.iter().map(Design::log_det).collect();
        let indices = config
            .variant
            .uses_index()
            .then(|| MatNormIndices::new(mdp, &config, config.index_seed ^ seed.rotate_left(29)));
        Ok(Self {
            mdp,
            beta,
            iota,
            designs,
            reward_sums: vec![vec![0.0; d]; hz],
            next_sums: vec![vec![0.0; ns * d]; hz],
            weights: vec![vec![0.0; d]; hz],
            q: vec![0.0; hz * ns * na],
            values: vec![vec![0.0; ns]; hz + 1],
            policy: Policy::from_fn(hz, ns, |_, _| 0),
            override_policy: None,
            indices,
            episodes_done: 0,
            switches: 0,
            log_det_at_switch,
            switch_pending: true,
            optimal: optimal_values(mdp),
            config,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn iota(&self) -> f64 {
        self.iota
    }

    pub fn designs(&self) -> &[Design] {
        &self.designs
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn switches(&self) -> usize {
        self.switches
    }

    pub fn tau(&self) -> Option<f64> {
        self.indices.as_ref().and_then(|i| i.tau)
    }

    /// Planned `Q_h(s,a)`. For the index-backed variants only the chosen
    /// action carries a value; other entries are NaN.
    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        let (ns, na) = (self.mdp.num_states(), self.mdp.num_actions());
        self.q[(h * ns + s) * na + a]
    }

    /// Forces the executed actions, e.g. to inject an oracle policy.
    pub fn set_policy_override(&mut self, policy: Option<Policy>) {
        self.override_policy = policy;
    }

    /// Backward planning pass with the current data. Returns probes and
    /// fallbacks.
    pub fn plan(&mut self) -> Result<(usize, usize)> {
        let mdp = self.mdp;
        let (ns, na, d, hz) = (mdp.num_states(), mdp.num_actions(), mdp.dim(), mdp.horizon());
        let horizon = hz as f64;
        let mut probes = 0;
        let mut fallbacks = 0;
        let mut actions = vec![0; hz * ns];
        for h in (0..hz).rev() {
            let mut rhs = self.reward_sums[h].clone();
            for (next, &v) in self.values[h + 1].iter().enumerate() {
                if v != 0.0 {
                    for (r, f) in rhs.iter_mut().zip(&self.next_sums[h][next * d..(next + 1) * d]) {
                        *r += f * v;
                    }
                }
            }
            let w = mat_vec(&self.designs[h].inverse, &rhs);
            let m_query = match self.config.variant {
                UcbVariant::Exact => None,
                _ => Some(query_matrix(self.beta, &self.designs[h].inverse, &w)?),
            };
            for s in 0..ns {
                let row = (h * ns + s) * na;
                let choice = match self.config.variant {
                    UcbVariant::Exact => {
                        let mut best = (0, f64::NEG_INFINITY);
                        for a in 0..na {
                            let q = ucb_q_exact(&w, mdp.feature(s, a), self.beta, &self.designs[h].inverse, horizon)?;
                            self.q[row + a] = q;
                            if q > best.1 {
                                best = (a, q);
                            }
                        }
                        Choice {
                            action: best.0,
                            value: best.1,
                            probes: na,
                            fallback: false,
                        }
                    }
                    UcbVariant::MatrixNorm => {
                        let m = m_query.as_ref().expect("matrix built for this variant");
                        let mut best = (0, f64::NEG_INFINITY);
                        for a in 0..na {
                            let q = ucb_q_matnorm(mdp.feature(s, a), m, horizon)?;
                            self.q[row + a] = q;
                            if q > best.1 {
                                best = (a, q);
                            }
                        }
                        Choice {
                            action: best.0,
                            value: best.1,
                            probes: na,
                            fallback: false,
                        }
                    }
                    UcbVariant::Sublinear | UcbVariant::SwitchLimited => {
                        let m = m_query.as_ref().expect("matrix built for this variant");
                        let choice = self.indexed_choice(s, m, horizon)?;
                        self.q[row..row + na].iter_mut().for_each(|v| *v = f64::NAN);
                        self.q[row + choice.action] = choice.value;
                        choice
                    }
                };
                probes += choice.probes;
                if choice.fallback {
                    fallbacks += 1;
                }
                actions[h * ns + s] = choice.action;
                self.values[h][s] = choice.value;
            }
            self.weights[h] = w;
        }
        self.policy = Policy::new(hz, ns, actions)?;
        Ok((probes, fallbacks))
    }

    fn indexed_choice(&mut self, s: usize, m: &PsdQuery, horizon: f64) -> Result<Choice> {
        let idx = self.indices.as_mut().expect("index-backed variant");
        if idx.indices.is_empty() {
            match idx.tau {
                Some(tau) => idx.build(tau)?,
                None => {
                    let features = &idx.features[s];
                    let choice = scan_matnorm(features, m, horizon)?;
                    let frob = m.frobenius_bound();
                    if frob > 0.0 {
                        // Best normalized score ‖φ‖_M / √(‖M‖_F · max ‖φ‖²).
                        let best = features.iter().map(|f| quad_form(m.matrix(), f)).fold(0.0, f64::max);
                        idx.calibration.push((best.max(0.0) / (frob * idx.lift_scales[s])).sqrt());
                    }
                    if idx.calibration.len() >= CALIBRATION_QUERIES {
                        let min = idx.calibration.iter().copied().fold(f64::INFINITY, f64::min);
                        idx.build((CALIBRATION_FACTOR * min).clamp(TAU_RANGE.0, TAU_RANGE.1))?;
                    }
                    return Ok(choice);
                }
            }
        }
        let res = idx.indices[s].query(m)?;
        match res.outcome {
            MatNormOutcome::Candidate { id, norm } => Ok(Choice {
                action: id,
                value: norm.min(horizon),
                probes: res.probe_stats.candidates,
                fallback: false,
            }),
            MatNormOutcome::Fail => {
                let mut choice = scan_matnorm(&idx.features[s], m, horizon)?;
                choice.probes += res.probe_stats.candidates;
                choice.fallback = true;
                Ok(choice)
            }
        }
    }

    /// Plans (unless the switch-limited variant keeps its policy), executes
    /// one episode from a uniformly drawn initial state and records the
    /// executed policy's gap.
    pub fn run_episode<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<EpisodeRecord> {
        let mdp = self.mdp;
        let (ns, d, hz) = (mdp.num_states(), mdp.dim(), mdp.horizon());
        let start = Instant::now();
        let replan = self.config.variant != UcbVariant::SwitchLimited || self.switch_pending;
        let (probes, fallbacks) = if replan { self.plan()? } else { (0, 0) };
        if replan && self.config.variant == UcbVariant::SwitchLimited {
            if self.episodes_done > 0 {
                self.switches += 1;
            }
            self.log_det_at_switch = self.designs.iter().map(Design::log_det).collect();
            self.switch_pending = false;
        }
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;

        let k = self.episodes_done + 1;
        let bound = 2.0 * hz as f64 * (d as f64 * k as f64 / self.config.lambda_reg).sqrt();
        let weight_ratio = self.weights.iter().map(|w| norm(w) / bound).fold(0.0, f64::max);

        let acting = self.override_policy.as_ref().unwrap_or(&self.policy).clone();
        let s1 = rng.random_range(0..ns);
        let pi = policy_value(mdp, &acting)?;
        let gap = self.optimal.v(0, s1) - pi.v(0, s1);

        let mut s = s1;
        for h in 0..hz {
            let a = acting.action(h, s);
            let next = sample_transition(mdp, s, a, h, rng)?;
            let phi = mdp.feature(s, a);
            let r = mdp.reward(h, s, a);
            for (acc, f) in self.reward_sums[h].iter_mut().zip(phi) {
                *acc += f * r;
            }
            for (acc, f) in self.next_sums[h][next * d..(next + 1) * d].iter_mut().zip(phi) {
                *acc += f;
            }
            self.designs[h].update(phi)?;
            s = next;
        }
        self.episodes_done = k;

        if self.config.variant == UcbVariant::SwitchLimited {
            let doubled = self
                .designs
                .iter()
                .zip(&self.log_det_at_switch)
                .any(|(dsg, &reference)| dsg.log_det() >= reference + std::f64::consts::LN_2);
            self.switch_pending = doubled;
        }

        Ok(EpisodeRecord {
            k,
            initial_state: s1,
            gap,
            cum_regret: 0.0,
            probes,
            fallbacks,
            switches: self.switches,
            wall_ms,
            weight_ratio,
        })
    }
}

/// `⌈d·H·log₂(1 + K/λ)⌉`.
pub fn switch_bound(dim: usize, horizon: usize, episodes: usize, lambda_reg: f64) -> usize {
    (dim as f64 * horizon as f64 * (1.0 + episodes as f64 / lambda_reg).log2()).ceil() as usize
}

/// Runs `K` episodes with environment randomness drawn from `seed`.
/// Variants share the environment stream, so they see the same initial
/// states and transition draws wherever their actions agree.
pub fn run_experiment(inst: &Instance, config: &UcbConfig, seed: u64) -> Result<Vec<EpisodeRecord>> {
    let mut learner = UcbLearner::new(&inst.mdp, config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(config.episodes);
    let mut cum = 0.0;
    for _ in 0..config.episodes {
        let mut rec = learner.run_episode(&mut rng)?;
        cum += rec.gap.max(0.0);
        rec.cum_regret = cum;
        records.push(rec);
    }
    Ok(records)
}
