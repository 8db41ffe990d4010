//! Mergeable residual-heavy-hitter sketches.
//!
//! Two flavors share one interface (`init`, `process`, `merge`, `est`):
//!
//! * [`ProjectionSketch`], a CountSketch over signed values. Its error bound is
//!   on squared frequencies (`q = 2`).
//! * [`CounterSketch`], a Space-Saving summary over non-negative values with an
//!   `ℓ1` error bound (`q = 1`). It is deterministic and ignores `δ`.
//!
//! Sized from `(k, ψ, δ, n)`, both provide
//! `max_x |est(x) - ν_x|^q ≤ (ψ/k) ‖tail_k(ν)‖_q^q`, the projection sketch with
//! probability at least `1 - δ`.
//!
//! Projection cells hold signed fixed-point sums with
//! [`FIXED_POINT_FRAC_BITS`] fractional bits. Integer addition makes the table
//! exactly linear: merging shard sketches in any order gives the same bits as a
//! single sketch over the concatenated stream.
//!
//! # Wire format
//!
//! [`RhhSketch::to_bytes`] writes a little-endian blob:
//!
//! ```text
//! magic "WRHH" | version u16 (=1) | flavor u8 (0 projection, 1 counter) | 0u8
//! k u64 | psi f64 | delta f64 | n u64 | seed u64
//! c_rows f64 | c_width f64 | c_counters f64
//! rows_override u64 | width_override u64 | capacity_override u64   (0 = none)
//! projection: rows u32 | width u32 | rows*width cells as i128, row-major
//! counter:    capacity u64 | total f64 | len u64 | len * (key u64, count f64, error f64)
//! ```
//!
//! Counter entries are written in ascending key order.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::data::SeedRand;
use crate::error::{Error, Result};
use crate::util::{lower_median, TotalF64};

pub const FIXED_POINT_FRAC_BITS: u32 = 48;
const FIXED_SCALE: f64 = (1u64 << FIXED_POINT_FRAC_BITS) as f64;
/// Largest accepted update magnitude; keeps a single scaled update below 2^126.
pub const MAX_UPDATE_MAGNITUDE: f64 = 3.022_314_549_036_573e23; // 2^78

const MAGIC: &[u8; 4] = b"WRHH";
const FORMAT_VERSION: u16 = 1;

pub const DEFAULT_C_ROWS: f64 = 4.0;
pub const DEFAULT_C_WIDTH: f64 = 6.0;
pub const DEFAULT_C_COUNTERS: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    /// CountSketch, `ℓ2`, signed values.
    Projection,
    /// Space-Saving counters, `ℓ1`, non-negative values.
    Counter,
}

impl Flavor {
    /// The norm exponent of the flavor's error guarantee.
    pub fn q(self) -> u8 {
        match self {
            Flavor::Projection => 2,
            Flavor::Counter => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhhConfig {
    pub flavor: Flavor,
    pub k: usize,
    pub psi: f64,
    pub delta: f64,
    /// Size of the key domain `[n]`.
    pub n: u64,
    pub seed: u64,
    pub c_rows: f64,
    pub c_width: f64,
    pub c_counters: f64,
    pub rows_override: Option<usize>,
    pub width_override: Option<usize>,
    pub capacity_override: Option<usize>,
}

impl RhhConfig {
    pub fn new(flavor: Flavor, k: usize, psi: f64, delta: f64, n: u64, seed: u64) -> Self {
        RhhConfig {
            flavor,
            k,
            psi,
            delta,
            n,
            seed,
            c_rows: DEFAULT_C_ROWS,
            c_width: DEFAULT_C_WIDTH,
            c_counters: DEFAULT_C_COUNTERS,
            rows_override: None,
            width_override: None,
            capacity_override: None,
        }
    }

    /// Fixes the projection table shape instead of deriving it from `(k, ψ, δ, n)`.
    pub fn with_projection_shape(mut self, rows: usize, width: usize) -> Self {
        self.rows_override = Some(rows);
        self.width_override = Some(width);
        self
    }

    pub fn with_counter_capacity(mut self, capacity: usize) -> Self {
        self.capacity_override = Some(capacity);
        self
    }

    pub fn q(&self) -> u8 {
        self.flavor.q()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.psi > 0.0 && self.psi <= 1.0) {
            return Err(Error::Config(format!("psi must be in (0, 1], got {}", self.psi)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        if self.n == 0 {
            return Err(Error::Config("key domain size n must be positive".into()));
        }
        for (name, c) in [
            ("c_rows", self.c_rows),
            ("c_width", self.c_width),
            ("c_counters", self.c_counters),
        ] {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if [self.rows_override, self.width_override, self.capacity_override].contains(&Some(0)) {
            return Err(Error::Config("explicit sketch dimensions must be positive".into()));
        }
        Ok(())
    }

    /// `⌈C_r ln(n/δ)⌉` rows.
    pub fn rows(&self) -> usize {
        self.rows_override.unwrap_or_else(|| {
            ((self.c_rows * (self.n as f64 / self.delta).ln()).ceil() as usize).max(1)
        })
    }

    /// `⌈C_w k/ψ⌉` buckets per row.
    pub fn width(&self) -> usize {
        self.width_override
            .unwrap_or_else(|| ((self.c_width * self.k as f64 / self.psi).ceil() as usize).max(1))
    }

    /// `⌈C_c k/ψ⌉` counters.
    pub fn capacity(&self) -> usize {
        self.capacity_override.unwrap_or_else(|| {
            ((self.c_counters * self.k as f64 / self.psi).ceil() as usize).max(1)
        })
    }
}

/// Anything that answers point queries for keys in `[n]`.
pub trait PointEstimator {
    fn estimate(&self, key: u64) -> f64;
}

impl PointEstimator for HashMap<u64, f64> {
    fn estimate(&self, key: u64) -> f64 {
        self.get(&key).copied().unwrap_or(0.0)
    }
}

/// CountSketch with fixed-point cells.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSketch {
    cfg: RhhConfig,
    rows: usize,
    width: usize,
    row_seeds: Vec<u64>,
    table: Vec<i128>,
}

impl ProjectionSketch {
    pub fn new(cfg: RhhConfig) -> Result<Self> {
        cfg.validate()?;
        let rows = cfg.rows();
        let width = cfg.width();
        let row_seeds = SeedRand::new(cfg.seed).row_seeds(rows);
        Ok(ProjectionSketch {
            rows,
            width,
            row_seeds,
            table: vec![0; rows * width],
            cfg,
        })
    }

    pub fn config(&self) -> &RhhConfig {
        &self.cfg
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row_seeds(&self) -> &[u64] {
        &self.row_seeds
    }

    /// Raw fixed-point cells, row-major.
    pub fn cells(&self) -> &[i128] {
        &self.table
    }

    #[inline]
    fn locate(&self, row: usize, key: u64) -> (usize, i128) {
        let h = xxh3_64_with_seed(&key.to_le_bytes(), self.row_seeds[row]);
        let bucket = ((h as u128 * self.width as u128) >> 64) as usize;
        let sign = if h & 1 == 1 { 1 } else { -1 };
        (row * self.width + bucket, sign)
    }

    pub fn process(&mut self, key: u64, value: f64) -> Result<()> {
        let fixed = to_fixed(value)?;
        if fixed == 0 {
            return Ok(());
        }
        for row in 0..self.rows {
            let (idx, sign) = self.locate(row, key);
            match self.table[idx].checked_add(sign * fixed) {
                Some(v) => self.table[idx] = v,
                None => {
                    for undo in 0..row {
                        let (i, s) = self.locate(undo, key);
                        self.table[i] -= s * fixed;
                    }
                    return Err(Error::RejectedUpdate("projection cell overflow".into()));
                }
            }
        }
        Ok(())
    }

    /// Median over rows of the signed bucket values (lower middle for even rows).
    pub fn est(&self, key: u64) -> f64 {
        let mut vals: Vec<i128> = (0..self.rows)
            .map(|row| {
                let (idx, sign) = self.locate(row, key);
                sign * self.table[idx]
            })
            .collect();
        from_fixed(lower_median(&mut vals))
    }

    pub fn merge(&mut self, other: &ProjectionSketch) -> Result<()> {
        if self.cfg != other.cfg {
            return Err(Error::Merge("projection sketches differ in configuration or seed".into()));
        }
        let mut merged = self.table.clone();
        for (a, b) in merged.iter_mut().zip(&other.table) {
            *a = a
                .checked_add(*b)
                .ok_or_else(|| Error::Merge("projection cell overflow".into()))?;
        }
        self.table = merged;
        Ok(())
    }

    /// Median over rows of the row's sum of squared cells, an estimate of `‖ν‖₂²`.
    pub fn second_moment(&self) -> f64 {
        let mut per_row: Vec<TotalF64> = self
            .table
            .chunks(self.width)
            .map(|row| TotalF64(row.iter().map(|c| from_fixed(*c).powi(2)).sum()))
            .collect();
        lower_median(&mut per_row).0
    }
}

fn to_fixed(value: f64) -> Result<i128> {
    if !value.is_finite() {
        return Err(Error::RejectedUpdate(format!("non-finite value {value}")));
    }
    if value.abs() >= MAX_UPDATE_MAGNITUDE {
        return Err(Error::RejectedUpdate(format!(
            "value {value} exceeds the fixed-point range"
        )));
    }
    Ok((value * FIXED_SCALE).round() as i128)
}

fn from_fixed(c: i128) -> f64 {
    c as f64 / FIXED_SCALE
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Counter {
    count: f64,
    error: f64,
}

/// Space-Saving counters with per-key overestimation bounds.
#[derive(Clone, Debug)]
pub struct CounterSketch {
    cfg: RhhConfig,
    capacity: usize,
    counters: HashMap<u64, Counter>,
    // ascending by count then key: the first entry is the eviction victim
    by_count: BTreeSet<(TotalF64, u64)>,
    total: f64,
}

impl PartialEq for CounterSketch {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg && self.counters == other.counters && self.total == other.total
    }
}

impl CounterSketch {
    pub fn new(cfg: RhhConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(CounterSketch {
            capacity: cfg.capacity(),
            counters: HashMap::new(),
            by_count: BTreeSet::new(),
            total: 0.0,
            cfg,
        })
    }

    pub fn config(&self) -> &RhhConfig {
        &self.cfg
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.counters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counters.is_empty()
    }

    /// Sum of all processed values.
    pub fn total(&self) -> f64 {
        self.total
    }

    fn min_count(&self) -> f64 {
        if self.counters.len() < self.capacity {
            0.0
        } else {
            self.by_count.first().map_or(0.0, |(c, _)| c.0)
        }
    }

    fn set(&mut self, key: u64, c: Counter) {
        if let Some(old) = self.counters.insert(key, c) {
            self.by_count.remove(&(TotalF64(old.count), key));
        }
        self.by_count.insert((TotalF64(c.count), key));
    }

    pub fn process(&mut self, key: u64, value: f64) -> Result<()> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::RejectedUpdate(format!(
                "counter sketch takes non-negative values, got {value}"
            )));
        }
        if value == 0.0 {
            return Ok(());
        }
        self.total += value;
        if let Some(c) = self.counters.get(&key).copied() {
            self.set(
                key,
                Counter {
                    count: c.count + value,
                    error: c.error,
                },
            );
        } else if self.counters.len() < self.capacity {
            self.set(key, Counter { count: value, error: 0.0 });
        } else {
            let (min, victim) = self.by_count.pop_first().expect("full sketch has entries");
            self.counters.remove(&victim);
            self.set(
                key,
                Counter {
                    count: min.0 + value,
                    error: min.0,
                },
            );
        }
        Ok(())
    }

    /// Stored count, or 0 for keys without a counter.
    pub fn est(&self, key: u64) -> f64 {
        self.counters.get(&key).map_or(0.0, |c| c.count)
    }

    /// Recorded overestimation bound for a stored key.
    pub fn error_bound(&self, key: u64) -> Option<f64> {
        self.counters.get(&key).map(|c| c.error)
    }

    pub fn stored_keys(&self) -> impl Iterator<Item = u64> + '_ {
        self.counters.keys().copied()
    }

    /// Union of counters. A key missing from a full side is charged that side's
    /// minimum count in both its count and its error bound; the result keeps the
    /// `capacity` largest counts.
    pub fn merge(&mut self, other: &CounterSketch) -> Result<()> {
        if self.cfg != other.cfg {
            return Err(Error::Merge("counter sketches differ in configuration".into()));
        }
        let (min_a, min_b) = (self.min_count(), other.min_count());
        let mut union: Vec<(u64, Counter)> = Vec::with_capacity(self.len() + other.len());
        for (&key, a) in &self.counters {
            let b = other.counters.get(&key);
            union.push((
                key,
                Counter {
                    count: a.count + b.map_or(min_b, |b| b.count),
                    error: a.error + b.map_or(min_b, |b| b.error),
                },
            ));
        }
        for (&key, b) in &other.counters {
            if !self.counters.contains_key(&key) {
                union.push((
                    key,
                    Counter {
                        count: min_a + b.count,
                        error: min_a + b.error,
                    },
                ));
            }
        }
        union.sort_by(|x, y| y.1.count.total_cmp(&x.1.count).then(x.0.cmp(&y.0)));
        union.truncate(self.capacity);
        self.counters.clear();
        self.by_count.clear();
        for (key, c) in union {
            self.set(key, c);
        }
        self.total += other.total;
        Ok(())
    }
}

/// Either sketch flavor behind one interface.
#[derive(Clone, Debug, PartialEq)]
pub enum RhhSketch {
    Projection(ProjectionSketch),
    Counter(CounterSketch),
}

impl RhhSketch {
    pub fn init(cfg: RhhConfig) -> Result<Self> {
        Ok(match cfg.flavor {
            Flavor::Projection => RhhSketch::Projection(ProjectionSketch::new(cfg)?),
            Flavor::Counter => RhhSketch::Counter(CounterSketch::new(cfg)?),
        })
    }

    pub fn config(&self) -> &RhhConfig {
        match self {
            RhhSketch::Projection(s) => s.config(),
            RhhSketch::Counter(s) => s.config(),
        }
    }

    pub fn process(&mut self, key: u64, value: f64) -> Result<()> {
        match self {
            RhhSketch::Projection(s) => s.process(key, value),
            RhhSketch::Counter(s) => s.process(key, value),
        }
    }

    pub fn merge(&mut self, other: &RhhSketch) -> Result<()> {
        match (self, other) {
            (RhhSketch::Projection(a), RhhSketch::Projection(b)) => a.merge(b),
            (RhhSketch::Counter(a), RhhSketch::Counter(b)) => a.merge(b),
            _ => Err(Error::Merge("sketch flavors differ".into())),
        }
    }

    pub fn est(&self, key: u64) -> f64 {
        match self {
            RhhSketch::Projection(s) => s.est(key),
            RhhSketch::Counter(s) => s.est(key),
        }
    }

    /// Memory in 8-byte words (projection cells count double).
    pub fn size_words(&self) -> usize {
        match self {
            RhhSketch::Projection(s) => 2 * s.rows * s.width,
            RhhSketch::Counter(s) => 3 * s.capacity,
        }
    }

    /// Whether the input may lack `(k, ψ)` residual heavy hitters.
    ///
    /// The `k` largest estimates over `candidates` (and, for counters, every
    /// stored key) are compared against `(ψ/k)` times the estimated tail norm.
    /// Fewer than `k` non-zero estimates also counts as failure.
    pub fn failure_test(&self, k: usize, candidates: &[u64]) -> bool {
        let q = i32::from(self.config().q());
        let mut ests: Vec<f64> = match self {
            RhhSketch::Projection(s) => candidates.iter().map(|&c| s.est(c).abs()).collect(),
            RhhSketch::Counter(s) => {
                let mut keys: Vec<u64> = s.stored_keys().chain(candidates.iter().copied()).collect();
                keys.sort_unstable();
                keys.dedup();
                keys.into_iter().map(|c| s.est(c)).collect()
            }
        };
        ests.retain(|e| *e > 0.0);
        if k == 0 || ests.len() < k {
            return true;
        }
        ests.sort_unstable_by(|a, b| b.total_cmp(a));
        let total = match self {
            RhhSketch::Projection(s) => s.second_moment(),
            RhhSketch::Counter(s) => s.total(),
        };
        let head: f64 = ests[..k].iter().map(|e| e.powi(q)).sum();
        let tail = (total - head).max(0.0);
        ests[k - 1].powi(q) < self.config().psi / k as f64 * tail
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.config();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(match cfg.flavor {
            Flavor::Projection => 0,
            Flavor::Counter => 1,
        });
        out.push(0);
        out.extend_from_slice(&(cfg.k as u64).to_le_bytes());
        out.extend_from_slice(&cfg.psi.to_le_bytes());
        out.extend_from_slice(&cfg.delta.to_le_bytes());
        out.extend_from_slice(&cfg.n.to_le_bytes());
        out.extend_from_slice(&cfg.seed.to_le_bytes());
        out.extend_from_slice(&cfg.c_rows.to_le_bytes());
        out.extend_from_slice(&cfg.c_width.to_le_bytes());
        out.extend_from_slice(&cfg.c_counters.to_le_bytes());
        for o in [cfg.rows_override, cfg.width_override, cfg.capacity_override] {
            out.extend_from_slice(&(o.unwrap_or(0) as u64).to_le_bytes());
        }
        match self {
            RhhSketch::Projection(s) => {
                out.extend_from_slice(&(s.rows as u32).to_le_bytes());
                out.extend_from_slice(&(s.width as u32).to_le_bytes());
                for c in &s.table {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            RhhSketch::Counter(s) => {
                out.extend_from_slice(&(s.capacity as u64).to_le_bytes());
                out.extend_from_slice(&s.total.to_le_bytes());
                out.extend_from_slice(&(s.counters.len() as u64).to_le_bytes());
                let mut keys: Vec<&u64> = s.counters.keys().collect();
                keys.sort_unstable();
                for key in keys {
                    let c = s.counters[key];
                    out.extend_from_slice(&key.to_le_bytes());
                    out.extend_from_slice(&c.count.to_le_bytes());
                    out.extend_from_slice(&c.error.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not an rhh sketch blob".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported sketch version {version}")));
        }
        let flavor = match r.take(2)?[0] {
            0 => Flavor::Projection,
            1 => Flavor::Counter,
            f => return Err(Error::Format(format!("unknown flavor tag {f}"))),
        };
        let k = r.u64()? as usize;
        let psi = r.f64()?;
        let delta = r.f64()?;
        let n = r.u64()?;
        let seed = r.u64()?;
        let mut cfg = RhhConfig::new(flavor, k, psi, delta, n, seed);
        cfg.c_rows = r.f64()?;
        cfg.c_width = r.f64()?;
        cfg.c_counters = r.f64()?;
        let opt = |v: u64| (v != 0).then_some(v as usize);
        cfg.rows_override = opt(r.u64()?);
        cfg.width_override = opt(r.u64()?);
        cfg.capacity_override = opt(r.u64()?);
        let sketch = match flavor {
            Flavor::Projection => {
                let mut s = ProjectionSketch::new(cfg)?;
                let rows = u32::from_le_bytes(r.array()?) as usize;
                let width = u32::from_le_bytes(r.array()?) as usize;
                if rows != s.rows || width != s.width {
                    return Err(Error::Format("table shape does not match header".into()));
                }
                for c in s.table.iter_mut() {
                    *c = i128::from_le_bytes(r.array()?);
                }
                RhhSketch::Projection(s)
            }
            Flavor::Counter => {
                let mut s = CounterSketch::new(cfg)?;
                if r.u64()? as usize != s.capacity {
                    return Err(Error::Format("capacity does not match header".into()));
                }
                let total = r.f64()?;
                let len = r.u64()? as usize;
                if len > s.capacity {
                    return Err(Error::Format("more counters than capacity".into()));
                }
                for _ in 0..len {
                    let key = r.u64()?;
                    let count = r.f64()?;
                    let error = r.f64()?;
                    s.set(key, Counter { count, error });
                }
                s.total = total;
                RhhSketch::Counter(s)
            }
        };
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after sketch".into()));
        }
        Ok(sketch)
    }
}

impl PointEstimator for RhhSketch {
    fn estimate(&self, key: u64) -> f64 {
        self.est(key)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format("truncated sketch blob".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn proj_cfg(k: usize, psi: f64) -> RhhConfig {
        RhhConfig::new(Flavor::Projection, k, psi, 0.01, 1 << 14, 42)
    }

    #[test]
    fn init_errors_and_sizes() {
        assert!(RhhSketch::init(proj_cfg(0, 0.5)).is_err());
        assert!(RhhSketch::init(proj_cfg(10, 0.0)).is_err());
        assert!(RhhSketch::init(proj_cfg(10, -1.0)).is_err());
        let cfg = proj_cfg(100, 0.25);
        assert!(cfg.width() >= 400);
        let a = ProjectionSketch::new(cfg.clone()).unwrap();
        let b = ProjectionSketch::new(cfg).unwrap();
        assert_eq!(a.row_seeds(), b.row_seeds());
        assert_eq!(a.est(12345), 0.0);
    }

    #[test]
    fn projection_single_key_is_exact() {
        let mut s = ProjectionSketch::new(proj_cfg(4, 0.5)).unwrap();
        s.process(9, 3.0).unwrap();
        s.process(9, 4.0).unwrap();
        assert_eq!(s.est(9), 7.0);
        s.process(9, -7.0).unwrap();
        assert_eq!(s.est(9), 0.0);
    }

    #[test]
    fn even_rows_take_lower_middle() {
        let cfg = proj_cfg(1, 1.0).with_projection_shape(2, 1);
        let mut s = ProjectionSketch::new(cfg).unwrap();
        // width 1: both keys share every bucket
        s.process(1, 5.0).unwrap();
        s.process(2, 3.0).unwrap();
        let (_, s1a) = s.locate(0, 1);
        let (_, s1b) = s.locate(1, 1);
        let (_, s2a) = s.locate(0, 2);
        let (_, s2b) = s.locate(1, 2);
        let row0 = s1a * (s1a * 5 + s2a * 3);
        let row1 = s1b * (s1b * 5 + s2b * 3);
        assert_eq!(s.est(1), row0.min(row1) as f64);
    }

    #[test]
    fn counter_under_capacity_is_exact() {
        let cfg = RhhConfig::new(Flavor::Counter, 2, 1.0, 0.5, 100, 0).with_counter_capacity(8);
        let mut s = CounterSketch::new(cfg).unwrap();
        for (k, v) in [(1, 5.0), (2, 3.0), (3, 1.0), (4, 2.5), (5, 7.0), (1, 1.0)] {
            s.process(k, v).unwrap();
        }
        assert_eq!(s.est(1), 6.0);
        assert_eq!(s.est(5), 7.0);
        assert_eq!(s.est(99), 0.0);
        assert!(s.process(3, -1.0).is_err());
    }

    #[test]
    fn counter_eviction_inherits_minimum() {
        let cfg = RhhConfig::new(Flavor::Counter, 1, 1.0, 0.5, 100, 0).with_counter_capacity(2);
        let mut s = CounterSketch::new(cfg).unwrap();
        s.process(1, 5.0).unwrap();
        s.process(2, 1.0).unwrap();
        s.process(3, 2.0).unwrap();
        assert_eq!(s.est(2), 0.0);
        assert_eq!(s.est(3), 3.0);
        assert_eq!(s.error_bound(3), Some(1.0));
    }

    #[test]
    fn merge_rejects_mismatch() {
        let mut a = RhhSketch::init(proj_cfg(4, 0.5)).unwrap();
        let mut other = proj_cfg(4, 0.5);
        other.seed = 7;
        let b = RhhSketch::init(other).unwrap();
        assert!(matches!(a.merge(&b), Err(Error::Merge(_))));
        let c = RhhSketch::init(RhhConfig::new(Flavor::Counter, 4, 0.5, 0.01, 1 << 14, 42)).unwrap();
        assert!(a.merge(&c).is_err());
    }

    #[test]
    fn failure_test_basics() {
        let empty = RhhSketch::init(proj_cfg(4, 0.5)).unwrap();
        assert!(empty.failure_test(1, &[1, 2, 3]));

        let mut s = RhhSketch::init(proj_cfg(1, 0.5)).unwrap();
        s.process(1, 1000.0).unwrap();
        for key in 2..50 {
            s.process(key, 1.0).unwrap();
        }
        let cands: Vec<u64> = (1..50).collect();
        assert!(!s.failure_test(1, &cands));
    }

    #[test]
    fn blob_round_trip_and_corruption() {
        let mut p = RhhSketch::init(proj_cfg(3, 0.5)).unwrap();
        let cfg = RhhConfig::new(Flavor::Counter, 2, 0.5, 0.1, 10, 1).with_counter_capacity(3);
        let mut c = RhhSketch::init(cfg).unwrap();
        for key in 0..10u64 {
            p.process(key, key as f64 - 4.5).unwrap();
            c.process(key, key as f64 + 0.25).unwrap();
        }
        for s in [p, c] {
            let bytes = s.to_bytes();
            assert_eq!(RhhSketch::from_bytes(&bytes).unwrap(), s);
            assert!(RhhSketch::from_bytes(&bytes[..bytes.len() - 1]).is_err());
            let mut bad = bytes.clone();
            bad[0] = b'X';
            assert!(RhhSketch::from_bytes(&bad).is_err());
        }
    }
}
