//! (c, τ)-approximate maximum inner product search.
//!
//! Data vectors `y` (with `‖y‖ ≤ 1`) and queries `x` (with `‖x‖ ≤ D_x`) are
//! mapped onto the unit sphere by an asymmetric pair of transforms,
//!
//! ```text
//! P(y) = [y, √(1 − ‖y‖²), 0]
//! Q(x) = [0.8·x/D_x, 0, √(1 − 0.64·‖x‖²/D_x²)]
//! ```
//!
//! so that `⟨Q(x), P(y)⟩ = 0.8·⟨x, y⟩/D_x ≤ 0.8` and the argmax is preserved.
//! On the sphere, inner product `t` and distance `‖a − b‖² = 2 − 2t` are
//! interchangeable, which turns the search into a (c̄, r)-ANN query.
//!
//! The promise threshold `τ` and the approximation `c` are expressed on the
//! normalized score `⟨x, y⟩/D_x`.

use std::ops::ControlFlow;

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm};
use crate::lsh::{AnnIndex, LshConfig, ProbeStats, SphericalPoint};

/// Scaling applied to the query side so that transformed similarities stay
/// at or below 0.8.
pub const QUERY_SCALE: f64 = 0.8;
const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxIpParams {
    pub c: f64,
    pub tau: f64,
    pub d_x: f64,
}

impl MaxIpParams {
    pub fn new(c: f64, tau: f64, d_x: f64) -> Result<Self> {
        let p = Self { c, tau, d_x };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(invalid("c", format!("must lie in (0, 1), got {}", self.c)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(invalid("tau", format!("must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.d_x > 0.0 && self.d_x.is_finite()) {
            return Err(invalid("d_x", format!("must be positive, got {}", self.d_x)));
        }
        Ok(())
    }

    /// Whether `(c, τ)` lies in the range where the reference exponents are
    /// provably below one.
    pub fn in_sublinear_range(&self) -> bool {
        (0.5..1.0).contains(&self.c) && (0.5..=0.8).contains(&self.tau)
    }

    /// Promise threshold after the 0.8 query scaling.
    pub fn transformed_tau(&self) -> f64 {
        QUERY_SCALE * self.tau
    }

    /// ANN radius `r` and approximation `c̄` equivalent to this Max-IP
    /// instance on the sphere: `r² = 2 − 2τ'`, `c̄² = (1 − cτ')/(1 − τ')`.
    pub fn ann_radius(&self) -> (f64, f64) {
        let t = self.transformed_tau();
        let r = (2.0 - 2.0 * t).sqrt();
        let cbar = ((1.0 - self.c * t) / (1.0 - t)).sqrt();
        (r, cbar)
    }
}

/// Which of the two published exponent formulas to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoRegime {
    /// `n^{1+ρ}` preprocessing, `ρ = (1−τ)/(1−2cτ+τ)`.
    Ar15,
    /// `n^{1+o(1)}` preprocessing, `ρ = 2u² − u⁴` with `u = (1−τ)/(1−cτ)`.
    Alrw17,
}

/// Reference query exponent `f(c, τ)`. The additive `o(1)` term is dropped.
pub fn rho_theory(c: f64, tau: f64, regime: RhoRegime) -> f64 {
    match regime {
        RhoRegime::Ar15 => (1.0 - tau) / (1.0 - 2.0 * c * tau + tau),
        RhoRegime::Alrw17 => {
            let u = (1.0 - tau) / (1.0 - c * tau);
            let u2 = u * u;
            2.0 * u2 - u2 * u2
        }
    }
}

/// Upper bound on the exponent for `c ∈ [0.5, 1)`, `τ ∈ [0.5, 1)` with
/// `γ = 1 − c`: `1 − γ/2` or `1 − γ²/4`. The `O(1/√log n)` term is dropped.
pub fn rho_upper_bound(c: f64, tau: f64, regime: RhoRegime) -> Result<f64> {
    if !(0.5..1.0).contains(&c) {
        return Err(invalid("c", format!("bound holds for c in [0.5, 1), got {c}")));
    }
    if !(0.5..1.0).contains(&tau) {
        return Err(invalid("tau", format!("bound holds for tau in [0.5, 1), got {tau}")));
    }
    let gamma = 1.0 - c;
    Ok(match regime {
        RhoRegime::Ar15 => 1.0 - gamma / 2.0,
        RhoRegime::Alrw17 => 1.0 - gamma * gamma / 4.0,
    })
}

/// `P(y) = [y, √(1 − ‖y‖²), 0]`.
pub fn transform_data_point(y: &[f64]) -> Result<SphericalPoint> {
    transform_data_indexed(y, 0)
}

fn transform_data_indexed(y: &[f64], index: usize) -> Result<SphericalPoint> {
    let n = norm(y);
    if !n.is_finite() || n > 1.0 + NORM_SLACK {
        return Err(Error::DataNormTooLarge { index, norm: n });
    }
    let mut out = Vec::with_capacity(y.len() + 2);
    out.extend_from_slice(y);
    out.push((1.0 - n * n).max(0.0).sqrt());
    out.push(0.0);
    Ok(SphericalPoint::from_unit(out))
}

/// `Q(x) = [0.8·x/D_x, 0, √(1 − 0.64·‖x‖²/D_x²)]`.
pub fn transform_query(x: &[f64], d_x: f64) -> Result<SphericalPoint> {
    let n = norm(x);
    if !n.is_finite() || n > d_x * (1.0 + NORM_SLACK) {
        return Err(Error::QueryNormExceedsBound { norm: n, bound: d_x });
    }
    let s = QUERY_SCALE / d_x;
    let mut out: Vec<f64> = x.iter().map(|v| v * s).collect();
    let scaled = QUERY_SCALE * n / d_x;
    out.push(0.0);
    out.push((1.0 - scaled * scaled).max(0.0).sqrt());
    Ok(SphericalPoint::from_unit(out))
}

/// Exact linear-scan Max-IP. Ties resolve to the smallest id.
pub fn brute_force_maxip(x: &[f64], ys: &[Vec<f64>]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, y) in ys.iter().enumerate() {
        if y.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        let v = dot(x, y);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.ok_or(Error::EmptyDataSet)
}

/// How a query walks the colliding candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbePolicy {
    /// Score every distinct colliding point and return the best one. Aims
    /// at `⟨x, z⟩ ≥ c·Max-IP(x, Y)`.
    #[default]
    BestOfUnion,
    /// Stop at the first colliding point whose normalized score reaches
    /// `c·τ`, exactly the ANN reduction.
    FirstHit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Candidate { id: usize, inner_product: f64 },
    Fail,
}

impl Outcome {
    pub fn candidate(&self) -> Option<(usize, f64)> {
        match *self {
            Outcome::Candidate { id, inner_product } => Some((id, inner_product)),
            Outcome::Fail => None,
        }
    }
}

/// Query answer. `inner_product` is recomputed against the original,
/// untransformed data vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxIpResult {
    pub outcome: Outcome,
    pub probe_stats: ProbeStats,
}

/// LSH-backed (c, τ)-Max-IP structure over data vectors in the unit ball.
#[derive(Debug, Clone)]
pub struct MaxIpIndex {
    params: MaxIpParams,
    policy: ProbePolicy,
    ann: AnnIndex,
    originals: Vec<Vec<f64>>,
}

impl MaxIpIndex {
    pub fn build(ys: &[Vec<f64>], params: MaxIpParams, config: LshConfig) -> Result<Self> {
        params.validate()?;
        if ys.is_empty() {
            return Err(Error::EmptyDataSet);
        }
        let dim = ys[0].len();
        let mut transformed = Vec::with_capacity(ys.len());
        for (i, y) in ys.iter().enumerate() {
            if y.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: y.len(),
                });
            }
            transformed.push(transform_data_indexed(y, i)?);
        }
        let (r, cbar) = params.ann_radius();
        let ann = AnnIndex::build(&transformed, cbar, r, config)?;
        Ok(Self {
            params,
            policy: ProbePolicy::default(),
            ann,
            originals: ys.to_vec(),
        })
    }

    pub fn with_policy(mut self, policy: ProbePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn params(&self) -> &MaxIpParams {
        &self.params
    }

    /// Changes the query norm bound `D_x`. The stored data transform does not
    /// depend on it, so no rebuild is needed.
    pub fn set_query_bound(&mut self, d_x: f64) -> Result<()> {
        let params = MaxIpParams::new(self.params.c, self.params.tau, d_x)?;
        self.params = params;
        Ok(())
    }

    pub fn policy(&self) -> ProbePolicy {
        self.policy
    }

    pub fn ann(&self) -> &AnnIndex {
        &self.ann
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.originals[0].len()
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.originals
    }

    pub fn query(&self, x: &[f64]) -> Result<MaxIpResult> {
        self.query_with(x, self.policy)
    }

    pub fn query_with(&self, x: &[f64], policy: ProbePolicy) -> Result<MaxIpResult> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let q = transform_query(x, self.params.d_x)?;
        let accept = self.params.c * self.params.tau * self.params.d_x;
        match policy {
            ProbePolicy::FirstHit => {
                let (hit, probe_stats) = self.ann.query(&q)?;
                let outcome = match hit {
                    Some((id, _)) => Outcome::Candidate {
                        id,
                        inner_product: dot(x, &self.originals[id]),
                    },
                    None => Outcome::Fail,
                };
                Ok(MaxIpResult { outcome, probe_stats })
            }
            ProbePolicy::BestOfUnion => {
                let mut best: Option<(usize, f64)> = None;
                let probe_stats = self.ann.for_each_candidate(&q, |id| {
                    let v = dot(x, &self.originals[id]);
                    let better = match best {
                        None => true,
                        Some((bid, bv)) => v > bv || (v == bv && id < bid),
                    };
                    if better {
                        best = Some((id, v));
                    }
                    ControlFlow::Continue(())
                })?;
                let outcome = match best {
                    Some((id, v)) if v >= accept - 1e-12 => Outcome::Candidate { id, inner_product: v },
                    _ => Outcome::Fail,
                };
                Ok(MaxIpResult { outcome, probe_stats })
            }
        }
    }
}
