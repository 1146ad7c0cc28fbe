//! Finite episodic linear MDPs: generation, validation, simulation, exact
//! dynamic programming and a flat binary file format.
//!
//! Steps are 0-based throughout: `h = 0` is the first step of an episode and
//! `V_H ≡ 0`.
//!
//! The generator draws every feature on the probability simplex of `R^d`.
//! Transitions are `P_h[s′|s,a] = ⟨φ(s,a), μ_h(s′)⟩` where column `j` of `μ_h`
//! is a probability distribution over next states, so every row is a convex
//! mixture of `d` distributions. Rewards are `⟨φ(s,a), θ_h⟩` with
//! `θ_h = shift + scale·u`, `u ∈ [0,1]^d`, which keeps them in
//! `[shift, shift + scale]`.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm, numerical_rank};

pub const REWARD_MIN: f64 = 0.55;
pub const REWARD_MAX: f64 = 1.0;
/// Tolerance for probability and reward range checks.
pub const PROB_TOL: f64 = 1e-9;
/// Singular-value cutoff for span rank checks.
pub const RANK_TOL: f64 = 1e-8;
/// Dirichlet concentration of each next-state distribution. Below one, so
/// rows are peaked and actions matter.
const TRANSITION_CONCENTRATION: f64 = 0.3;

const MAGIC: &str = "sublsvi-mdp";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    dim: usize,
    /// `φ(s,a)` at `(s·A + a)·d`.
    phi: Vec<f64>,
    /// `μ_h(s′)` at `(h·S + s′)·d`.
    mu: Vec<f64>,
    /// `θ_h` at `h·d`.
    theta: Vec<f64>,
    reward_shift: f64,
    reward_scale: f64,
}

impl LinearMdp {
    /// Assembles an MDP from raw row-major tables. Only shapes are checked
    /// here; use [`validate`] for the model invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        num_states: usize,
        num_actions: usize,
        dim: usize,
        horizon: usize,
        phi: Vec<f64>,
        mu: Vec<f64>,
        theta: Vec<f64>,
        reward_shift: f64,
        reward_scale: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || dim == 0 || horizon == 0 {
            return Err(invalid("shape", "S, A, d and H must all be positive"));
        }
        let check = |what: &'static str, got: usize, expected: usize| {
            if got == expected {
                Ok(())
            } else {
                Err(invalid(what, format!("expected {expected} entries, got {got}")))
            }
        };
        check("phi", phi.len(), num_states * num_actions * dim)?;
        check("mu", mu.len(), horizon * num_states * dim)?;
        check("theta", theta.len(), horizon * dim)?;
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            dim,
            phi,
            mu,
            theta,
            reward_shift,
            reward_scale,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn reward_shift(&self) -> f64 {
        self.reward_shift
    }

    pub fn reward_scale(&self) -> f64 {
        self.reward_scale
    }

    pub fn feature(&self, s: usize, a: usize) -> &[f64] {
        let off = (s * self.num_actions + a) * self.dim;
        &self.phi[off..off + self.dim]
    }

    /// Features of every action at state `s`, in action order.
    pub fn state_features(&self, s: usize) -> Vec<Vec<f64>> {
        (0..self.num_actions).map(|a| self.feature(s, a).to_vec()).collect()
    }

    pub fn mu(&self, h: usize, next: usize) -> &[f64] {
        let off = (h * self.num_states + next) * self.dim;
        &self.mu[off..off + self.dim]
    }

    pub fn mu_mut(&mut self, h: usize, next: usize) -> &mut [f64] {
        let off = (h * self.num_states + next) * self.dim;
        &mut self.mu[off..off + self.dim]
    }

    pub fn theta(&self, h: usize) -> &[f64] {
        &self.theta[h * self.dim..(h + 1) * self.dim]
    }

    pub fn theta_mut(&mut self, h: usize) -> &mut [f64] {
        &mut self.theta[h * self.dim..(h + 1) * self.dim]
    }

    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        dot(self.feature(s, a), self.theta(h))
    }

    /// The exact row `P_h[·|s,a]`.
    pub fn transition_probs(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        let f = self.feature(s, a);
        (0..self.num_states).map(|n| dot(f, self.mu(h, n))).collect()
    }

    /// `Σ_{s′} μ_h(s′)·v(s′)`, so that `E[v(s′)|s,a] = ⟨φ(s,a), result⟩`.
    pub fn mu_times(&self, h: usize, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (next, &vn) in v.iter().enumerate() {
            if vn != 0.0 {
                for (o, m) in out.iter_mut().zip(self.mu(h, next)) {
                    *o += m * vn;
                }
            }
        }
        out
    }

    fn check_indices(&self, h: usize, s: usize, a: usize) -> Result<()> {
        if h >= self.horizon {
            return Err(Error::OutOfRange {
                what: "step",
                value: h,
                limit: self.horizon,
            });
        }
        if s >= self.num_states {
            return Err(Error::OutOfRange {
                what: "state",
                value: s,
                limit: self.num_states,
            });
        }
        if a >= self.num_actions {
            return Err(Error::OutOfRange {
                what: "action",
                value: a,
                limit: self.num_actions,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreSets {
    pub core_states: Vec<usize>,
    pub core_actions: Vec<usize>,
}

impl CoreSets {
    pub fn full(mdp: &LinearMdp) -> Self {
        Self {
            core_states: (0..mdp.num_states()).collect(),
            core_actions: (0..mdp.num_actions()).collect(),
        }
    }
}

/// State-action pairs whose features span every feature, with the measured
/// bound `L ≥ max ‖Φ⁺φ(s,a)‖₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanMatrix {
    pub pairs: Vec<(usize, usize)>,
    pub span_bound: f64,
}

impl SpanMatrix {
    /// Builds the span over `pairs` and measures `L` on the full grid.
    pub fn measured(mdp: &LinearMdp, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut span = Self { pairs, span_bound: 0.0 };
        span.span_bound = span.coefficient_bound(mdp)?;
        Ok(span)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `d × M` matrix with the span features as columns.
    pub fn matrix(&self, mdp: &LinearMdp) -> DMatrix<f64> {
        let d = mdp.dim();
        DMatrix::from_fn(d, self.pairs.len(), |i, j| {
            let (s, a) = self.pairs[j];
            mdp.feature(s, a)[i]
        })
    }

    pub fn rank(&self, mdp: &LinearMdp) -> usize {
        numerical_rank(&self.matrix(mdp), RANK_TOL)
    }

    /// `max_{s,a} ‖Φ⁺φ(s,a)‖₁` over the full grid.
    pub fn coefficient_bound(&self, mdp: &LinearMdp) -> Result<f64> {
        let pinv = self.pseudo_inverse(mdp)?;
        let mut worst: f64 = 0.0;
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let f = mdp.feature(s, a);
                let l1: f64 = (0..pinv.nrows())
                    .map(|i| (0..pinv.ncols()).map(|j| pinv[(i, j)] * f[j]).sum::<f64>().abs())
                    .sum();
                worst = worst.max(l1);
            }
        }
        Ok(worst)
    }

    fn pseudo_inverse(&self, mdp: &LinearMdp) -> Result<DMatrix<f64>> {
        if self.pairs.is_empty() {
            return Err(invalid("span", "no span columns"));
        }
        self.matrix(mdp)
            .pseudo_inverse(RANK_TOL)
            .map_err(|e| invalid("span", e.to_string()))
    }
}

/// A generated or loaded instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub mdp: LinearMdp,
    pub core: CoreSets,
    pub span: SpanMatrix,
    pub seed: u64,
}

fn dirichlet<R: Rng>(rng: &mut R, alpha: f64, len: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    loop {
        let mut v: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
        let total: f64 = v.iter().sum();
        if total > 0.0 && total.is_finite() {
            v.iter_mut().for_each(|x| *x /= total);
            return v;
        }
    }
}

/// Draws a random linear MDP with simplex features.
///
/// The span columns are the pairs `(j mod S, j)` for `j < d`, whose features
/// are set to the simplex vertices `e_j`; so `Φ = I`, `M = d` and `L = 1`.
/// Core sets are the full state and action sets.
pub fn generate_linear_mdp(
    seed: u64,
    num_states: usize,
    num_actions: usize,
    dim: usize,
    horizon: usize,
) -> Result<Instance> {
    if num_states < 2 {
        return Err(invalid("S", format!("need at least 2 states, got {num_states}")));
    }
    if num_actions < 2 {
        return Err(invalid("A", format!("need at least 2 actions, got {num_actions}")));
    }
    if dim < 2 {
        return Err(invalid("d", format!("need at least 2 feature dimensions, got {dim}")));
    }
    if num_actions < dim {
        return Err(invalid("A", format!("need A >= d for the span columns, got A = {num_actions}, d = {dim}")));
    }
    if horizon == 0 {
        return Err(invalid("H", "horizon must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut phi = Vec::with_capacity(num_states * num_actions * dim);
    for _ in 0..num_states * num_actions {
        phi.extend(dirichlet(&mut rng, 1.0, dim));
    }
    let mut pairs = Vec::with_capacity(dim);
    for j in 0..dim {
        let (s, a) = (j % num_states, j);
        let off = (s * num_actions + a) * dim;
        phi[off..off + dim].iter_mut().enumerate().for_each(|(i, v)| *v = if i == j { 1.0 } else { 0.0 });
        pairs.push((s, a));
    }

    let mut mu = vec![0.0; horizon * num_states * dim];
    for h in 0..horizon {
        for j in 0..dim {
            let column = dirichlet(&mut rng, TRANSITION_CONCENTRATION, num_states);
            for (next, p) in column.into_iter().enumerate() {
                mu[(h * num_states + next) * dim + j] = p;
            }
        }
    }

    let shift = REWARD_MIN;
    let scale = REWARD_MAX - REWARD_MIN;
    let theta: Vec<f64> = (0..horizon * dim).map(|_| shift + scale * rng.random::<f64>()).collect();

    let mdp = LinearMdp::from_parts(num_states, num_actions, dim, horizon, phi, mu, theta, shift, scale)?;
    let core = CoreSets::full(&mdp);
    let span = SpanMatrix::measured(&mdp, pairs)?;
    Ok(Instance { mdp, core, span, seed })
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub invariant: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.invariant, self.detail)
    }
}

/// Checks every model invariant exhaustively. An empty report means valid.
/// At most one violation is reported per invariant, naming the first
/// offending entry.
pub fn validate(inst: &Instance) -> Vec<Violation> {
    let mdp = &inst.mdp;
    let (ns, na, d, hz) = (mdp.num_states, mdp.num_actions, mdp.dim, mdp.horizon);
    let mut report = Vec::new();
    let mut flag = |invariant: &'static str, detail: String| {
        if !report.iter().any(|v: &Violation| v.invariant == invariant) {
            report.push(Violation { invariant, detail });
        }
    };

    for s in 0..ns {
        for a in 0..na {
            let n = norm(mdp.feature(s, a));
            if n > 1.0 + PROB_TOL || !n.is_finite() {
                flag("feature-norm", format!("‖φ({s},{a})‖ = {n} > 1"));
            }
        }
    }

    for h in 0..hz {
        for s in 0..ns {
            for a in 0..na {
                let probs = mdp.transition_probs(h, s, a);
                if let Some((next, p)) = probs
                    .iter()
                    .enumerate()
                    .find(|(_, &p)| !(-PROB_TOL..=1.0 + PROB_TOL).contains(&p))
                {
                    flag("transition-range", format!("P_{h}[{next}|{s},{a}] = {p}"));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > PROB_TOL {
                    flag("transition-sum", format!("Σ P_{h}[·|{s},{a}] = {total}"));
                }
                let r = mdp.reward(h, s, a);
                if !(REWARD_MIN - PROB_TOL..=REWARD_MAX + PROB_TOL).contains(&r) {
                    flag("reward-range", format!("r_{h}({s},{a}) = {r} outside [{REWARD_MIN}, {REWARD_MAX}]"));
                }
            }
        }
        let sqrt_d = (d as f64).sqrt();
        let total_variation: Vec<f64> = (0..d)
            .map(|j| (0..ns).map(|next| mdp.mu(h, next)[j].abs()).sum())
            .collect();
        let mu_norm = norm(&total_variation);
        if mu_norm > sqrt_d + PROB_TOL {
            flag("measure-norm", format!("‖|μ_{h}|(S)‖ = {mu_norm} > √d"));
        }
        let theta_norm = norm(mdp.theta(h));
        if theta_norm > sqrt_d + PROB_TOL {
            flag("reward-vector-norm", format!("‖θ_{h}‖ = {theta_norm} > √d"));
        }
    }

    let core = &inst.core;
    if let Some(&s) = core.core_states.iter().find(|&&s| s >= ns) {
        flag("core-index", format!("core state {s} out of range"));
    }
    if let Some(&a) = core.core_actions.iter().find(|&&a| a >= na) {
        flag("core-index", format!("core action {a} out of range"));
    }
    if core.core_actions.len() < d {
        flag(
            "core-size",
            format!("A_core = {} < d = {d}", core.core_actions.len()),
        );
    }
    if !core_hull_certified(inst) {
        flag(
            "core-hull",
            "features of S×A are not certified to lie in the convex hull of the core features".into(),
        );
    }

    let span = &inst.span;
    if let Some(&(s, a)) = span.pairs.iter().find(|&&(s, a)| s >= ns || a >= na) {
        flag("span-index", format!("span pair ({s},{a}) out of range"));
        return report;
    }
    if span.pairs.is_empty() || span.pairs.len() > d {
        flag("span-size", format!("M = {} must lie in [1, d = {d}]", span.pairs.len()));
        return report;
    }
    let rank = span.rank(mdp);
    if rank != span.pairs.len() {
        flag("span-rank", format!("numerical rank {rank} != M = {}", span.pairs.len()));
    }
    match span.pseudo_inverse(mdp) {
        Ok(pinv) => {
            let phi_mat = span.matrix(mdp);
            'grid: for s in 0..ns {
                for a in 0..na {
                    let f = mdp.feature(s, a);
                    let coef: Vec<f64> = (0..pinv.nrows())
                        .map(|i| (0..d).map(|j| pinv[(i, j)] * f[j]).sum())
                        .collect();
                    let l1: f64 = coef.iter().map(|c| c.abs()).sum();
                    if l1 > span.span_bound + PROB_TOL {
                        flag("span-bound", format!("‖Φ⁺φ({s},{a})‖₁ = {l1} > L = {}", span.span_bound));
                    }
                    let resid: f64 = (0..d)
                        .map(|i| {
                            let rec: f64 = (0..coef.len()).map(|j| phi_mat[(i, j)] * coef[j]).sum();
                            (rec - f[i]).powi(2)
                        })
                        .sum::<f64>()
                        .sqrt();
                    if resid > RANK_TOL {
                        flag("span-coverage", format!("φ({s},{a}) lies {resid} outside the span"));
                        break 'grid;
                    }
                }
            }
        }
        Err(e) => flag("span-rank", e.to_string()),
    }
    report
}

/// The convex-hull property is certified either when the core sets are the
/// full sets, or when every feature lies on the simplex and every simplex
/// vertex appears among the core features.
fn core_hull_certified(inst: &Instance) -> bool {
    let mdp = &inst.mdp;
    let core = &inst.core;
    let full_states = (0..mdp.num_states).all(|s| core.core_states.contains(&s));
    let full_actions = (0..mdp.num_actions).all(|a| core.core_actions.contains(&a));
    if full_states && full_actions {
        return true;
    }
    let d = mdp.dim;
    let on_simplex = (0..mdp.num_states).all(|s| {
        (0..mdp.num_actions).all(|a| {
            let f = mdp.feature(s, a);
            f.iter().all(|&v| v >= -PROB_TOL) && (f.iter().sum::<f64>() - 1.0).abs() <= PROB_TOL
        })
    });
    let has_vertices = (0..d).all(|j| {
        core.core_states.iter().any(|&s| {
            core.core_actions.iter().any(|&a| {
                s < mdp.num_states
                    && a < mdp.num_actions
                    && mdp
                        .feature(s, a)
                        .iter()
                        .enumerate()
                        .all(|(i, &v)| (v - if i == j { 1.0 } else { 0.0 }).abs() <= PROB_TOL)
            })
        })
    });
    on_simplex && has_vertices
}

/// Draws `s′ ~ P_h[·|s,a]` by inverse CDF on the exact row.
pub fn sample_transition<R: Rng + ?Sized>(mdp: &LinearMdp, s: usize, a: usize, h: usize, rng: &mut R) -> Result<usize> {
    mdp.check_indices(h, s, a)?;
    let u: f64 = rng.random();
    let f = mdp.feature(s, a);
    let mut acc = 0.0;
    let mut last_positive = 0;
    for next in 0..mdp.num_states {
        let p = dot(f, mdp.mu(h, next));
        if p > 0.0 {
            acc += p;
            last_positive = next;
            if u < acc {
                return Ok(next);
            }
        }
    }
    // Rounding left the cumulative sum just below one.
    Ok(last_positive)
}

/// Deterministic non-stationary policy, `action(h, s)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    num_states: usize,
    actions: Vec<usize>,
}

impl Policy {
    pub fn new(horizon: usize, num_states: usize, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != horizon * num_states {
            return Err(invalid("policy", format!("expected {} entries, got {}", horizon * num_states, actions.len())));
        }
        Ok(Self { num_states, actions })
    }

    pub fn from_fn(horizon: usize, num_states: usize, f: impl Fn(usize, usize) -> usize) -> Self {
        let actions = (0..horizon).flat_map(|h| (0..num_states).map(move |s| (h, s))).map(|(h, s)| f(h, s)).collect();
        Self { num_states, actions }
    }

    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h * self.num_states + s]
    }

    pub fn horizon(&self) -> usize {
        self.actions.len() / self.num_states.max(1)
    }
}

/// `V_h(s)` for `h ∈ 0..=H` (with `V_H = 0`) and `Q_h(s,a)` for `h < H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    num_states: usize,
    num_actions: usize,
    v: Vec<f64>,
    q: Vec<f64>,
}

impl ValueTables {
    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.v[h * self.num_states + s]
    }

    pub fn v_step(&self, h: usize) -> &[f64] {
        &self.v[h * self.num_states..(h + 1) * self.num_states]
    }

    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[(h * self.num_states + s) * self.num_actions + a]
    }

    /// Greedy policy on `Q`, ties to the smallest action id.
    pub fn greedy_policy(&self) -> Policy {
        let horizon = self.q.len() / (self.num_states * self.num_actions);
        Policy::from_fn(horizon, self.num_states, |h, s| {
            let mut best = 0;
            for a in 1..self.num_actions {
                if self.q(h, s, a) > self.q(h, s, best) {
                    best = a;
                }
            }
            best
        })
    }
}

fn backward_dp(mdp: &LinearMdp, mut pick: impl FnMut(usize, usize, &[f64]) -> f64) -> ValueTables {
    let (ns, na, hz) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut v = vec![0.0; (hz + 1) * ns];
    let mut q = vec![0.0; hz * ns * na];
    for h in (0..hz).rev() {
        let next = v[(h + 1) * ns..(h + 2) * ns].to_vec();
        let mut target = mdp.mu_times(h, &next);
        target.iter_mut().zip(mdp.theta(h)).for_each(|(t, th)| *t += th);
        for s in 0..ns {
            let row = &mut q[(h * ns + s) * na..(h * ns + s + 1) * na];
            for (a, qa) in row.iter_mut().enumerate() {
                *qa = dot(mdp.feature(s, a), &target);
            }
            v[h * ns + s] = pick(h, s, row);
        }
    }
    ValueTables {
        num_states: ns,
        num_actions: na,
        v,
        q,
    }
}

/// `V*` and `Q*` by exact backward induction.
pub fn optimal_values(mdp: &LinearMdp) -> ValueTables {
    backward_dp(mdp, |_, _, row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// `V^π` and `Q^π` by exact backward induction.
pub fn policy_value(mdp: &LinearMdp, policy: &Policy) -> Result<ValueTables> {
    if policy.num_states != mdp.num_states || policy.horizon() != mdp.horizon {
        return Err(invalid("policy", "shape does not match the MDP"));
    }
    if let Some(&a) = policy.actions.iter().find(|&&a| a >= mdp.num_actions) {
        return Err(Error::OutOfRange {
            what: "action",
            value: a,
            limit: mdp.num_actions,
        });
    }
    Ok(backward_dp(mdp, |h, s, row| row[policy.action(h, s)]))
}

impl Instance {
    /// Serializes to the flat format: one ASCII header line
    /// `sublsvi-mdp,1,S,A,d,H,seed,M,S_core,A_core` followed by little-endian
    /// binary `shift: f64, scale: f64, L: f64, span pairs: M×(u32,u32),
    /// core states: u32*, core actions: u32*, φ: S·A·d f64, μ: H·S·d f64,
    /// θ: H·d f64`, all tables row-major in the in-memory order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.mdp;
        let mut out = Vec::new();
        writeln!(
            out,
            "{MAGIC},{FORMAT_VERSION},{},{},{},{},{},{},{},{}",
            m.num_states,
            m.num_actions,
            m.dim,
            m.horizon,
            self.seed,
            self.span.pairs.len(),
            self.core.core_states.len(),
            self.core.core_actions.len()
        )
        .expect("write to Vec");
        out.extend(m.reward_shift.to_le_bytes());
        out.extend(m.reward_scale.to_le_bytes());
        out.extend(self.span.span_bound.to_le_bytes());
        for &(s, a) in &self.span.pairs {
            out.extend((s as u32).to_le_bytes());
            out.extend((a as u32).to_le_bytes());
        }
        for &s in &self.core.core_states {
            out.extend((s as u32).to_le_bytes());
        }
        for &a in &self.core.core_actions {
            out.extend((a as u32).to_le_bytes());
        }
        for table in [&m.phi, &m.mu, &m.theta] {
            for v in table.iter() {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Format("header is not ASCII".into()))?;
        let fields: Vec<&str> = header.split(',').collect();
        if fields.len() != 10 || fields[0] != MAGIC {
            return Err(Error::Format(format!("unrecognized header `{header}`")));
        }
        let num = |i: usize| -> Result<u64> {
            fields[i]
                .parse::<u64>()
                .map_err(|_| Error::Format(format!("header field {i} `{}` is not an integer", fields[i])))
        };
        if num(1)? != FORMAT_VERSION as u64 {
            return Err(Error::Format(format!("unsupported version {}", fields[1])));
        }
        let (ns, na, d, hz) = (num(2)? as usize, num(3)? as usize, num(4)? as usize, num(5)? as usize);
        let seed = num(6)?;
        let (m, sc, ac) = (num(7)? as usize, num(8)? as usize, num(9)? as usize);

        let mut cur = Reader { buf: &bytes[nl + 1..] };
        let shift = cur.f64()?;
        let scale = cur.f64()?;
        let span_bound = cur.f64()?;
        let pairs = (0..m).map(|_| Ok((cur.u32()? as usize, cur.u32()? as usize))).collect::<Result<Vec<_>>>()?;
        let core_states = (0..sc).map(|_| Ok(cur.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let core_actions = (0..ac).map(|_| Ok(cur.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let phi = cur.f64s(ns * na * d)?;
        let mu = cur.f64s(hz * ns * d)?;
        let theta = cur.f64s(hz * d)?;
        if !cur.buf.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", cur.buf.len())));
        }
        let mdp = LinearMdp::from_parts(ns, na, d, hz, phi, mu, theta, shift, scale)?;
        Ok(Self {
            mdp,
            core: CoreSets {
                core_states,
                core_actions,
            },
            span: SpanMatrix { pairs, span_bound },
            seed,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.buf.len() < N {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take::<8>()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take::<4>()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.buf.len() / 8 < n {
            return Err(Error::Format("unexpected end of file".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}
