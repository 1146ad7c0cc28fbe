//! (c, τ)-maximum matrix-norm search, `max_y ‖y‖_x = √(yᵀ x y)` for a PSD
//! query matrix `x`.
//!
//! `‖y‖_x² = ⟨vec(x), vec(yyᵀ)⟩`, so the search is a Max-IP instance over the
//! lifted data `vec(yyᵀ)` with parameters `(c², τ²)`: a lifted inner product
//! within `c²` of the best is a matrix norm within `c` of the best.
//!
//! Lifts are divided by the largest lift norm over the data set and queries
//! by their Frobenius norm, so both sides satisfy the Max-IP preconditions.
//! Promise thresholds refer to the normalized score
//! `√(‖y‖_x² / (‖x‖_F · max_y ‖y‖²))`.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, quad_form};
use crate::lsh::{LshConfig, ProbeStats};
use crate::maxip::{MaxIpIndex, MaxIpParams, Outcome, ProbePolicy};

pub const PSD_TOL: f64 = 1e-9;

/// Symmetric positive semidefinite query matrix with its Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdQuery {
    matrix: DMatrix<f64>,
    frobenius_bound: f64,
}

impl PsdQuery {
    /// Validates symmetry and PSD-ness. Tolerances scale with the matrix
    /// magnitude (`1e-9 · max(1, ‖x‖_F)`).
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::NotPsd {
                reason: format!("matrix is {}x{}", matrix.nrows(), matrix.ncols()),
            });
        }
        let frob = matrix.norm();
        if !frob.is_finite() {
            return Err(Error::NotPsd {
                reason: "non-finite entries".into(),
            });
        }
        let tol = PSD_TOL * frob.max(1.0);
        let asym = (&matrix - matrix.transpose()).abs().max();
        if asym > tol {
            return Err(Error::NotPsd {
                reason: format!("asymmetry {asym:e}"),
            });
        }
        let min_eig = matrix.clone().symmetric_eigenvalues().min();
        if min_eig < -tol {
            return Err(Error::NotPsd {
                reason: format!("eigenvalue {min_eig:e} < 0"),
            });
        }
        Ok(Self {
            matrix,
            frobenius_bound: frob,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn frobenius_bound(&self) -> f64 {
        self.frobenius_bound
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Row-major `vec(x)`.
    pub fn vectorized(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                out.push(self.matrix[(i, j)]);
            }
        }
        out
    }
}

/// `‖y‖_x = √(yᵀ x y)`; tiny negative round-off is clamped to zero.
pub fn mat_norm(y: &[f64], x: &PsdQuery) -> Result<f64> {
    if y.len() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.len(),
        });
    }
    let q = quad_form(x.matrix(), y);
    Ok(if (-1e-12..0.0).contains(&q) { 0.0 } else { q.max(0.0).sqrt() })
}

/// Row-major `vec(yyᵀ)`.
pub fn lift_data(y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len() * y.len());
    for a in y {
        for b in y {
            out.push(a * b);
        }
    }
    out
}

/// Exact `max_y ‖y‖_x`; ties resolve to the smallest id.
pub fn brute_force_matnorm(x: &PsdQuery, ys: &[Vec<f64>]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, y) in ys.iter().enumerate() {
        let v = mat_norm(y, x)?;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.ok_or(Error::EmptyDataSet)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatNormOutcome {
    Candidate { id: usize, norm: f64 },
    Fail,
}

impl MatNormOutcome {
    pub fn candidate(&self) -> Option<(usize, f64)> {
        match *self {
            MatNormOutcome::Candidate { id, norm } => Some((id, norm)),
            MatNormOutcome::Fail => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatNormResult {
    pub outcome: MatNormOutcome,
    pub probe_stats: ProbeStats,
}

/// Max-IP index over normalized lifts `vec(yyᵀ) / max_y ‖y‖²`.
#[derive(Debug, Clone)]
pub struct MatNormIndex {
    inner: MaxIpIndex,
    originals: Vec<Vec<f64>>,
    lift_scale: f64,
    c: f64,
    tau: f64,
}

impl MatNormIndex {
    pub fn build(ys: &[Vec<f64>], c: f64, tau: f64, config: LshConfig) -> Result<Self> {
        if ys.is_empty() {
            return Err(Error::EmptyDataSet);
        }
        if !(c > 0.0 && c < 1.0) {
            return Err(invalid("c", format!("must lie in (0, 1), got {c}")));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(invalid("tau", format!("must lie in (0, 1), got {tau}")));
        }
        let dim = ys[0].len();
        let mut lifts = Vec::with_capacity(ys.len());
        for y in ys {
            if y.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: y.len(),
                });
            }
            lifts.push(lift_data(y));
        }
        // ‖vec(yyᵀ)‖ = ‖y‖².
        let max_lift = ys.iter().map(|y| dot(y, y)).fold(0.0, f64::max);
        let lift_scale = if max_lift > 0.0 { max_lift } else { 1.0 };
        for l in &mut lifts {
            l.iter_mut().for_each(|v| *v /= lift_scale);
        }
        let params = MaxIpParams::new(c * c, tau * tau, 1.0)?;
        let inner = MaxIpIndex::build(&lifts, params, config)?;
        Ok(Self {
            inner,
            originals: ys.to_vec(),
            lift_scale,
            c,
            tau,
        })
    }

    pub fn with_policy(mut self, policy: ProbePolicy) -> Self {
        self.inner = self.inner.with_policy(policy);
        self
    }

    pub fn inner(&self) -> &MaxIpIndex {
        &self.inner
    }

    pub fn lift_scale(&self) -> f64 {
        self.lift_scale
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.originals
    }

    pub fn query(&self, x: &PsdQuery) -> Result<MatNormResult> {
        let d = self.originals[0].len();
        if x.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.dim(),
            });
        }
        let frob = x.frobenius_bound();
        if frob == 0.0 {
            // Every norm is zero.
            return Ok(MatNormResult {
                outcome: MatNormOutcome::Candidate { id: 0, norm: 0.0 },
                probe_stats: ProbeStats::default(),
            });
        }
        let q: Vec<f64> = x.vectorized().into_iter().map(|v| v / frob).collect();
        let res = self.inner.query(&q)?;
        let outcome = match res.outcome {
            Outcome::Candidate { id, .. } => MatNormOutcome::Candidate {
                id,
                norm: mat_norm(&self.originals[id], x)?,
            },
            Outcome::Fail => MatNormOutcome::Fail,
        };
        Ok(MatNormResult {
            outcome,
            probe_stats: res.probe_stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> PsdQuery {
        PsdQuery::new(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(v))).unwrap()
    }

    #[test]
    fn mat_norm_examples() {
        assert_eq!(mat_norm(&[1.0, 0.0], &diag(&[1.0, 1.0])).unwrap(), 1.0);
        assert_eq!(mat_norm(&[0.3, -2.0], &diag(&[0.0, 0.0])).unwrap(), 0.0);
        let v = mat_norm(&[1.0, 1.0], &diag(&[4.0, 9.0])).unwrap();
        assert!((v - 13f64.sqrt()).abs() < 1e-15);
        assert!(mat_norm(&[1.0], &diag(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn lift_examples() {
        assert_eq!(lift_data(&[1.0, 0.0]), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(lift_data(&[1.0, 1.0]), vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(lift_data(&[1.0, 2.0]), vec![1.0, 2.0, 2.0, 4.0]);
    }

    #[test]
    fn non_psd_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(PsdQuery::new(m), Err(Error::NotPsd { .. })));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(PsdQuery::new(m), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn brute_force_examples() {
        let ys = vec![vec![0.5, 0.0], vec![0.0, 1.0]];
        assert_eq!(brute_force_matnorm(&diag(&[1.0, 1.0]), &ys).unwrap(), (1, 1.0));
        assert_eq!(brute_force_matnorm(&diag(&[1.0, 0.0]), &ys).unwrap(), (0, 0.5));
        assert_eq!(brute_force_matnorm(&diag(&[1.0, 0.0]), &[]), Err(Error::EmptyDataSet));
    }

    #[test]
    fn squared_parameters_inside() {
        let ys = vec![vec![1.0, 0.0]];
        let idx = MatNormIndex::build(&ys, 0.9, 0.8, LshConfig::new(2, 1, 1, 0).unwrap()).unwrap();
        assert!((idx.inner().params().c - 0.81).abs() < 1e-15);
        assert!((idx.inner().params().tau - 0.64).abs() < 1e-15);
    }

    #[test]
    fn single_vector_is_returned() {
        let ys = vec![vec![1.0, 0.0]];
        let idx = MatNormIndex::build(&ys, 0.9, 0.5, LshConfig::new(2, 2, 1, 0).unwrap()).unwrap();
        let res = idx.query(&diag(&[1.0, 0.5])).unwrap();
        assert_eq!(res.outcome.candidate(), Some((0, 1.0)));
    }

    #[test]
    fn planted_direction_is_returned() {
        let v = [0.6, 0.8, 0.0];
        let ys = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0], v.to_vec(), vec![0.0, 1.0, 0.0]];
        let m = DMatrix::from_fn(3, 3, |i, j| v[i] * v[j]);
        let idx = MatNormIndex::build(&ys, 0.9, 0.5, LshConfig::new(3, 4, 1, 2).unwrap()).unwrap();
        let res = idx.query(&PsdQuery::new(m).unwrap()).unwrap();
        let (id, n) = res.outcome.candidate().unwrap();
        assert_eq!(id, 2);
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_basis_ties_return_a_basis_vector() {
        let d = 4;
        let ys: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let s = 1.0 / (d as f64).sqrt();
        let x = PsdQuery::new(DMatrix::identity(d, d) * s).unwrap();
        let idx = MatNormIndex::build(&ys, 0.8, 0.4, LshConfig::new(2, 4, 1, 9).unwrap()).unwrap();
        let (_, n) = idx.query(&x).unwrap().outcome.candidate().unwrap();
        assert!((n - s.sqrt()).abs() < 1e-12);
    }
}
