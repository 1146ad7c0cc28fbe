//! Max-IP under adaptively chosen queries.
//!
//! A query is first snapped to the lattice `(λ/d)·ℤ^d`, then offered to `κ`
//! independently seeded replicas in order until one succeeds. Snapping moves
//! every inner product with a data vector in the unit ball by at most
//! `‖q − q̂‖₂ ≤ λ/(2√d) ≤ λ`, so a success yields
//! `⟨q, z⟩ ≥ c·Max-IP(q, Y) − λ`.

use crate::error::{invalid, Error, Result};
use crate::linalg::dot;
use crate::lsh::{LshConfig, ProbeStats};
use crate::maxip::{MaxIpIndex, MaxIpParams, MaxIpResult, Outcome, ProbePolicy};

/// Seed stride between replicas.
const REPLICA_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationSpec {
    pub lambda: f64,
    pub dim: usize,
    pub cell: f64,
    pub diameter: f64,
    pub delta: f64,
}

impl QuantizationSpec {
    pub fn new(lambda: f64, dim: usize, diameter: f64, delta: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(invalid("lambda", format!("must lie in (0, 1), got {lambda}")));
        }
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if !(diameter > 0.0 && diameter.is_finite()) {
            return Err(invalid("diameter", format!("must be positive, got {diameter}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid("delta", format!("must lie in (0, 1), got {delta}")));
        }
        Ok(Self {
            lambda,
            dim,
            cell: lambda / dim as f64,
            diameter,
            delta,
        })
    }
}

/// Replica count `κ = ⌈d · ln(n·d·D_X / (λ·δ))⌉`, at least 1. Natural log.
pub fn kappa(n: usize, d: usize, diameter: f64, lambda: f64, delta: f64) -> Result<usize> {
    if n == 0 || d == 0 {
        return Err(invalid("n", "n and d must be positive"));
    }
    if !(diameter > 0.0 && lambda > 0.0) {
        return Err(invalid("lambda", "D_X and lambda must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    let arg = n as f64 * d as f64 * diameter / (lambda * delta);
    let k = (d as f64 * arg.ln()).ceil();
    Ok(if k.is_finite() && k >= 1.0 { k as usize } else { 1 })
}

/// Rounds every coordinate to the nearest multiple of `λ/d`; exact halves
/// round toward −∞.
pub fn quantize_query(q: &[f64], spec: &QuantizationSpec) -> Vec<f64> {
    q.iter()
        .map(|&v| {
            let steps = (v / spec.cell - 0.5).ceil();
            let snapped = steps * spec.cell;
            if snapped == 0.0 {
                0.0
            } else {
                snapped
            }
        })
        .collect()
}

/// `κ` independently seeded Max-IP replicas behind a quantizing front end.
#[derive(Debug, Clone)]
pub struct AdaptiveMaxIpIndex {
    spec: QuantizationSpec,
    replicas: Vec<MaxIpIndex>,
}

impl AdaptiveMaxIpIndex {
    /// Builds `kappa(n, d, D_X, λ, δ)` replicas. Each replica accepts queries
    /// up to `D_x + λ/(2√d)` in norm, the worst-case growth from snapping.
    pub fn build(ys: &[Vec<f64>], params: MaxIpParams, config: LshConfig, spec: QuantizationSpec) -> Result<Self> {
        if ys.is_empty() {
            return Err(Error::EmptyDataSet);
        }
        if ys[0].len() != spec.dim {
            return Err(Error::DimensionMismatch {
                expected: spec.dim,
                got: ys[0].len(),
            });
        }
        let count = kappa(ys.len(), spec.dim, spec.diameter, spec.lambda, spec.delta)?;
        Self::build_with_replicas(ys, params, config, spec, count)
    }

    /// Same as [`build`](Self::build) with an explicit replica count.
    pub fn build_with_replicas(
        ys: &[Vec<f64>],
        params: MaxIpParams,
        config: LshConfig,
        spec: QuantizationSpec,
        count: usize,
    ) -> Result<Self> {
        if count == 0 {
            return Err(invalid("replicas", "must be at least 1"));
        }
        let slack = spec.lambda / (2.0 * (spec.dim as f64).sqrt());
        let replica_params = MaxIpParams::new(params.c, params.tau, params.d_x + slack)?;
        let replicas = (0..count as u64)
            .map(|i| {
                let seed = config.seed.wrapping_add(i.wrapping_mul(REPLICA_SEED_STRIDE));
                MaxIpIndex::build(ys, replica_params, config.with_seed(seed))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, replicas })
    }

    pub fn with_policy(mut self, policy: ProbePolicy) -> Self {
        self.replicas = self.replicas.into_iter().map(|r| r.with_policy(policy)).collect();
        self
    }

    /// Sets the query norm bound on every replica, adding the snapping slack.
    pub fn set_query_bound(&mut self, d_x: f64) -> Result<()> {
        let slack = self.spec.lambda / (2.0 * (self.spec.dim as f64).sqrt());
        for r in &mut self.replicas {
            r.set_query_bound(d_x + slack)?;
        }
        Ok(())
    }

    pub fn spec(&self) -> &QuantizationSpec {
        &self.spec
    }

    pub fn replicas(&self) -> &[MaxIpIndex] {
        &self.replicas
    }

    pub fn kappa(&self) -> usize {
        self.replicas.len()
    }

    pub fn len(&self) -> usize {
        self.replicas[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas[0].is_empty()
    }

    /// Answers `q` through the replicas in id order. The reported inner
    /// product is against the unquantized `q`. Probe counts accumulate over
    /// every replica consulted.
    pub fn query(&self, q: &[f64]) -> Result<MaxIpResult> {
        let snapped = quantize_query(q, &self.spec);
        let mut probe_stats = ProbeStats::default();
        for replica in &self.replicas {
            let res = replica.query(&snapped)?;
            probe_stats.merge(res.probe_stats);
            if let Outcome::Candidate { id, .. } = res.outcome {
                return Ok(MaxIpResult {
                    outcome: Outcome::Candidate {
                        id,
                        inner_product: dot(q, &replica.data()[id]),
                    },
                    probe_stats,
                });
            }
        }
        Ok(MaxIpResult {
            outcome: Outcome::Fail,
            probe_stats,
        })
    }
}
