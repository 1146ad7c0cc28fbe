//! Hyperplane (sign-of-random-projection) LSH on the unit sphere.
//!
//! Each table concatenates `k` sign bits of Gaussian projections into a key.
//! Two unit vectors at Euclidean distance `x` collide on a single bit with
//! probability `1 − θ(x)/π`, where `θ(x) = 2·arcsin(x/2)` is their angle, so the
//! family is `(r, c̄·r, p1, p2)`-sensitive with `p1 = 1 − θ(r)/π` and
//! `p2 = 1 − θ(c̄·r)/π`.
//!
//! Tables are stored as sorted `(key, id)` columns; a bucket lookup is a
//! binary search. Query keys are computed lazily, one table at a time, so a
//! query that stops early never pays for the tables it does not touch.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};
use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::linalg::{ceil_tol, dot, norm};

/// Accepted deviation from unit norm.
pub const UNIT_NORM_TOL: f64 = 1e-9;
/// Inputs this close to the sphere are silently renormalized.
pub const RENORMALIZE_TOL: f64 = 1e-6;
/// Keys are packed into a `u32`.
pub const MAX_BITS_PER_TABLE: usize = 32;
/// Target per-query failure probability used when choosing repetitions.
pub const TARGET_FAILURE: f64 = 0.1;

/// A point on the unit sphere `S^{d-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalPoint {
    coords: Vec<f64>,
}

impl SphericalPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        Self::validated(coords, 0)
    }

    /// Validates a batch, reporting the offending row index on failure.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Vec<Self>> {
        rows.iter()
            .enumerate()
            .map(|(i, row)| Self::validated(row.clone(), i))
            .collect()
    }

    fn validated(mut coords: Vec<f64>, index: usize) -> Result<Self> {
        let n = norm(&coords);
        let gap = (n - 1.0).abs();
        if !n.is_finite() || gap > RENORMALIZE_TOL {
            return Err(Error::NotUnitNorm { index, norm: n });
        }
        if gap > UNIT_NORM_TOL {
            coords.iter_mut().for_each(|c| *c /= n);
        }
        Ok(Self { coords })
    }

    pub(crate) fn from_unit(coords: Vec<f64>) -> Self {
        debug_assert!((norm(&coords) - 1.0).abs() <= 1e-6);
        Self { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

/// Shape of the LSH structure: `repetitions` independent groups of
/// `num_tables` tables, each keyed by `bits_per_table` hyperplanes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LshConfig {
    pub bits_per_table: usize,
    pub num_tables: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl LshConfig {
    pub fn new(bits_per_table: usize, num_tables: usize, repetitions: usize, seed: u64) -> Result<Self> {
        let config = Self {
            bits_per_table,
            num_tables,
            repetitions,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits_per_table == 0 || self.bits_per_table > MAX_BITS_PER_TABLE {
            return Err(invalid(
                "bits_per_table",
                format!("must be in 1..={MAX_BITS_PER_TABLE}, got {}", self.bits_per_table),
            ));
        }
        if self.num_tables == 0 {
            return Err(invalid("num_tables", "must be at least 1"));
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "must be at least 1"));
        }
        Ok(())
    }

    /// Total number of hash tables, `num_tables · repetitions`.
    pub fn total_tables(&self) -> usize {
        self.num_tables * self.repetitions
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Angle between two unit vectors at Euclidean distance `distance`.
pub fn angle_at_distance(distance: f64) -> f64 {
    2.0 * (distance / 2.0).clamp(-1.0, 1.0).asin()
}

/// Single-bit collision probability of the hyperplane family.
pub fn hyperplane_collision_probability(distance: f64) -> f64 {
    1.0 - angle_at_distance(distance) / PI
}

/// Chooses `k`, `L` and the repetition count for `n` points at radius `r`
/// and approximation `cbar`.
///
/// `k = ⌈ln n / ln(1/p2)⌉` (at least 1), `L = ⌈n^ρ⌉` with
/// `ρ = ln(1/p1)/ln(1/p2)`, and the repetitions are the fewest that push the
/// chance of missing a point at distance `r` below [`TARGET_FAILURE`].
pub fn derive_table_params(n: usize, cbar: f64, r: f64, seed: u64) -> Result<LshConfig> {
    if n == 0 {
        return Err(invalid("n", "data set size must be at least 1"));
    }
    if cbar.is_nan() || cbar <= 1.0 {
        return Err(invalid("cbar", format!("must exceed 1, got {cbar}")));
    }
    if !(r > 0.0 && r < 2.0) {
        return Err(invalid("r", format!("must lie in (0, 2), got {r}")));
    }
    if cbar * r >= 2.0 {
        return Err(invalid(
            "cbar",
            format!("far radius c̄·r = {} is not < 2, undefined on the sphere", cbar * r),
        ));
    }
    let p1 = hyperplane_collision_probability(r);
    let p2 = hyperplane_collision_probability(cbar * r);
    let ln_n = (n as f64).ln();
    let k = (ceil_tol(ln_n / (1.0 / p2).ln()) as usize).max(1);
    if k > MAX_BITS_PER_TABLE {
        return Err(invalid(
            "n",
            format!("requires {k} bits per table, more than {MAX_BITS_PER_TABLE}"),
        ));
    }
    let rho = (1.0 / p1).ln() / (1.0 / p2).ln();
    let tables = (ceil_tol((n as f64).powf(rho)) as usize).clamp(1, n);
    let hit = p1.powi(k as i32);
    let repetitions = if hit >= 1.0 {
        1
    } else {
        let per_group_miss = (tables as f64) * (1.0 - hit).ln();
        (ceil_tol(TARGET_FAILURE.ln() / per_group_miss) as usize).max(1)
    };
    LshConfig::new(k, tables, repetitions, seed)
}

/// Per-query cost counters. `candidates` is the number of distinct stored
/// points whose distance (or score) was evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProbeStats {
    pub candidates: usize,
    pub tables_probed: usize,
}

impl ProbeStats {
    pub fn merge(&mut self, other: ProbeStats) {
        self.candidates += other.candidates;
        self.tables_probed += other.tables_probed;
    }
}

#[derive(Debug, Clone)]
struct HashTable {
    /// `bits × dim` row-major Gaussian directions.
    planes: Vec<f64>,
    keys: Vec<u32>,
    ids: Vec<u32>,
}

impl HashTable {
    fn key(&self, dim: usize, x: &[f64]) -> u32 {
        self.planes
            .chunks_exact(dim)
            .enumerate()
            .fold(0u32, |key, (bit, plane)| {
                if dot(plane, x) >= 0.0 {
                    key | (1 << bit)
                } else {
                    key
                }
            })
    }

    fn bucket(&self, key: u32) -> &[u32] {
        let lo = self.keys.partition_point(|&k| k < key);
        let hi = self.keys.partition_point(|&k| k <= key);
        &self.ids[lo..hi]
    }
}

/// Immutable (c̄, r)-ANN index over unit vectors.
#[derive(Debug, Clone)]
pub struct AnnIndex {
    config: LshConfig,
    radius: f64,
    approx: f64,
    dim: usize,
    points: Vec<f64>,
    len: usize,
    tables: Vec<HashTable>,
}

impl AnnIndex {
    pub fn build(points: &[SphericalPoint], cbar: f64, r: f64, config: LshConfig) -> Result<Self> {
        config.validate()?;
        if points.is_empty() {
            return Err(Error::EmptyDataSet);
        }
        if cbar.is_nan() || cbar <= 1.0 {
            return Err(invalid("cbar", format!("must exceed 1, got {cbar}")));
        }
        if !(r > 0.0 && r < 2.0) {
            return Err(invalid("r", format!("must lie in (0, 2), got {r}")));
        }
        if points.len() > u32::MAX as usize {
            return Err(invalid("points", "at most u32::MAX points"));
        }
        let dim = points[0].dim();
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.dim(),
                });
            }
            flat.extend_from_slice(p.coords());
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = config.bits_per_table;
        let mut tables = Vec::with_capacity(config.total_tables());
        let mut scratch: Vec<(u32, u32)> = Vec::with_capacity(points.len());
        for _ in 0..config.total_tables() {
            let planes: Vec<f64> = (0..k * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut table = HashTable {
                planes,
                keys: Vec::new(),
                ids: Vec::new(),
            };
            scratch.clear();
            scratch.extend(
                flat.chunks_exact(dim)
                    .enumerate()
                    .map(|(id, p)| (table.key(dim, p), id as u32)),
            );
            scratch.sort_unstable();
            table.keys = scratch.iter().map(|&(key, _)| key).collect();
            table.ids = scratch.iter().map(|&(_, id)| id).collect();
            tables.push(table);
        }

        Ok(Self {
            config,
            radius: r,
            approx: cbar,
            dim,
            points: flat,
            len: points.len(),
            tables,
        })
    }

    pub fn config(&self) -> &LshConfig {
        &self.config
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn approx(&self) -> f64 {
        self.approx
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn point(&self, id: usize) -> &[f64] {
        &self.points[id * self.dim..(id + 1) * self.dim]
    }

    /// Number of `(key, id)` entries over all tables; equals
    /// `total_tables · len` because every point lands in exactly one bucket
    /// per table.
    pub fn total_entries(&self) -> usize {
        self.tables.iter().map(|t| t.ids.len()).sum()
    }

    /// Ids stored in the bucket `q` falls into in table `table`.
    pub fn bucket_of(&self, table: usize, q: &SphericalPoint) -> &[u32] {
        let t = &self.tables[table];
        t.bucket(t.key(self.dim, q.coords()))
    }

    /// Digest of every table's hyperplanes and bucket layout.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for t in &self.tables {
            for p in &t.planes {
                p.to_bits().hash(&mut h);
            }
            t.keys.hash(&mut h);
            t.ids.hash(&mut h);
        }
        h.finish()
    }

    /// Visits the distinct points colliding with `q`, table by table in
    /// index order and by ascending id within a bucket. The visitor can stop
    /// the scan early by returning `ControlFlow::Break`.
    pub fn for_each_candidate<F>(&self, q: &SphericalPoint, mut visit: F) -> Result<ProbeStats>
    where
        F: FnMut(usize) -> ControlFlow<()>,
    {
        self.check_query(q)?;
        let mut stats = ProbeStats::default();
        let mut seen: HashSet<u32> = HashSet::new();
        for table in &self.tables {
            stats.tables_probed += 1;
            let key = table.key(self.dim, q.coords());
            for &id in table.bucket(key) {
                if !seen.insert(id) {
                    continue;
                }
                stats.candidates += 1;
                if visit(id as usize).is_break() {
                    return Ok(stats);
                }
            }
        }
        Ok(stats)
    }

    /// Returns the first colliding point within `c̄·r` of `q`, or `None`
    /// ("fail") when no examined candidate qualifies.
    pub fn query(&self, q: &SphericalPoint) -> Result<(Option<(usize, f64)>, ProbeStats)> {
        let far = self.approx * self.radius;
        let mut found = None;
        let stats = self.for_each_candidate(q, |id| {
            let dist = euclidean(self.point(id), q.coords());
            if dist <= far + 1e-12 {
                found = Some((id, dist));
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })?;
        Ok((found, stats))
    }

    fn check_query(&self, q: &SphericalPoint) -> Result<()> {
        if q.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: q.dim(),
            });
        }
        Ok(())
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
