//! The two WORp pipelines.
//!
//! Two-pass: pass 1 sketches the transformed stream; pass 2 replays the
//! stream and collects exact frequencies for the keys whose pass-1 estimates
//! rank in the top `B(k+1)`. The output holds exact `ν_x` and an exact `τ`.
//!
//! One-pass: a single sketch plus a bounded candidate set. The output holds
//! estimated frequencies `ν'_x` recovered from the sketch.
//!
//! Both pipelines shard: per-shard state merges into the state a single
//! machine would have built.

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::Calibration;
use crate::data::{FrequencyVector, Key, RDist};
use crate::error::{Error, Result};
use crate::io::ElementSource;
use crate::rhh::{Flavor, RhhConfig, RhhSketch};
use crate::sample::{sort_by_rank, SampleEntry, SampleMode, WorSample};
use crate::transform::{KeyMap, TransformConfig};
use crate::util::TotalF64;

/// Sketch dimensions: derived from `(k, ψ, δ, n)` or fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SketchShape {
    Derived,
    Projection { rows: usize, width: usize },
    /// Projection sketch with this width and the derived row count.
    Width { width: usize },
    Counters { capacity: usize },
}

/// Pass-2 admission rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Admission {
    /// Keep the top `B(k+1)` keys by pass-1 estimate.
    Plain,
    /// Beyond the top `k+1`, keep only keys whose estimate is at least half the
    /// `(k+1)`-st stored estimate.
    HalfGate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorpConfig {
    pub k: usize,
    pub p: f64,
    pub flavor: Flavor,
    /// One-pass accuracy, in `(0, 1/3]`.
    pub epsilon: f64,
    /// `Ψ_{n,k+1,q/p}` from calibration.
    pub psi: f64,
    pub delta: f64,
    /// Collection constant; the pass-2 structure holds `B(k+1)` keys.
    pub b: usize,
    /// Sketch key-domain size.
    pub n: u64,
    /// Transform seed.
    pub seed: u64,
    /// Sketch hash seed.
    pub sketch_seed: u64,
    pub dist: RDist,
    pub key_map: KeyMap,
    pub shape: SketchShape,
    pub admission: Admission,
}

impl WorpConfig {
    pub fn new(k: usize, p: f64, flavor: Flavor, psi: f64, b: usize, n: u64, seed: u64) -> Self {
        WorpConfig {
            k,
            p,
            flavor,
            epsilon: 1.0 / 3.0,
            psi,
            delta: 0.01,
            b,
            n,
            seed,
            sketch_seed: crate::data::splitmix64(seed ^ 0x5ce7),
            dist: RDist::Exp1,
            key_map: KeyMap::Integer,
            shape: SketchShape::Derived,
            admission: Admission::Plain,
        }
    }

    /// Reads `Ψ`, `δ` and `B` from a calibration computed for `(n, k+1, q/p)`.
    pub fn from_calibration(k: usize, p: f64, flavor: Flavor, cal: &Calibration, n: u64, seed: u64) -> Result<Self> {
        let rho = f64::from(flavor.q()) / p;
        if cal.k != k + 1 {
            return Err(Error::Config(format!(
                "calibration is for k={} but a size-{k} sample needs k+1={}",
                cal.k,
                k + 1
            )));
        }
        if (cal.rho - rho).abs() > 1e-12 {
            return Err(Error::Config(format!("calibration rho {} does not match q/p = {rho}", cal.rho)));
        }
        if (cal.n as u64) < n {
            return Err(Error::Config(format!(
                "calibration is for n={} but the input has {n} keys",
                cal.n
            )));
        }
        let mut cfg = WorpConfig::new(k, p, flavor, cal.psi, cal.b, n, seed);
        cfg.delta = cal.delta;
        cfg.dist = cal.dist;
        Ok(cfg)
    }

    pub fn q(&self) -> u8 {
        self.flavor.q()
    }

    pub fn transform(&self) -> TransformConfig {
        TransformConfig {
            p: self.p,
            dist: self.dist,
            seed: self.seed,
            key_map: self.key_map,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.b < 1 {
            return Err(Error::Config("B must be at least 1".into()));
        }
        self.transform().validate()
    }

    fn rhh(&self, psi: f64) -> RhhConfig {
        let cfg = RhhConfig::new(self.flavor, self.k + 1, psi.min(1.0), self.delta, self.n, self.sketch_seed);
        match self.shape {
            SketchShape::Derived => cfg,
            SketchShape::Projection { rows, width } => cfg.with_projection_shape(rows, width),
            SketchShape::Width { width } => {
                let rows = cfg.rows();
                cfg.with_projection_shape(rows, width)
            }
            SketchShape::Counters { capacity } => cfg.with_counter_capacity(capacity),
        }
    }

    /// Pass-1 sketch with `ψ = Ψ / 3^q`.
    pub fn two_pass_rhh(&self) -> RhhConfig {
        self.rhh(self.psi / 3f64.powi(i32::from(self.q())))
    }

    /// One-pass sketch with `ψ = ε^q Ψ`.
    pub fn one_pass_rhh(&self) -> RhhConfig {
        self.rhh(self.epsilon.powi(i32::from(self.q())) * self.psi)
    }

    pub fn collect_capacity(&self) -> usize {
        self.b * (self.k + 1)
    }
}

/// Sketches the transformed stream.
pub fn pass_one<S: ElementSource + ?Sized>(source: &S, cfg: &WorpConfig, rhh: RhhConfig) -> Result<RhhSketch> {
    cfg.validate()?;
    let t = cfg.transform();
    let mut sketch = RhhSketch::init(rhh)?;
    source.try_for_each(&mut |e| {
        let out = t.transform_element(e)?;
        sketch.process(out.key, out.value)
    })?;
    Ok(sketch)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Slot {
    priority: f64,
    acc: f64,
}

type Rank = (TotalF64, Reverse<Key>);

/// The pass-2 collection structure: up to `capacity` keys with frozen
/// pass-1 priorities and exact frequency accumulators.
#[derive(Clone, Debug)]
pub struct CollectT {
    capacity: usize,
    k: usize,
    admission: Admission,
    stored: HashMap<Key, Slot>,
    // ascending rank: the first element is the next eviction
    order: BTreeSet<Rank>,
    kth: f64,
    rejected: u64,
}

impl CollectT {
    pub fn new(capacity: usize, k: usize, admission: Admission) -> Self {
        CollectT {
            capacity: capacity.max(k + 1),
            k,
            admission,
            stored: HashMap::new(),
            order: BTreeSet::new(),
            kth: 0.0,
            rejected: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    /// Number of keys turned away or evicted so far.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn contains(&self, key: &Key) -> bool {
        self.stored.contains_key(key)
    }

    /// Accumulated exact frequency of a stored key.
    pub fn frequency(&self, key: &Key) -> Option<f64> {
        self.stored.get(key).map(|s| s.acc)
    }

    pub fn stored_keys(&self) -> impl Iterator<Item = &Key> + '_ {
        self.stored.keys()
    }

    /// Smallest stored priority.
    pub fn min_priority(&self) -> Option<f64> {
        self.order.first().map(|r| r.0 .0)
    }

    fn gate(&self) -> f64 {
        match self.admission {
            Admission::HalfGate if self.stored.len() > self.k => 0.5 * self.kth,
            _ => f64::NEG_INFINITY,
        }
    }

    fn refresh(&mut self) {
        while self.stored.len() > self.capacity {
            self.evict_first();
        }
        self.kth = self
            .order
            .iter()
            .rev()
            .nth(self.k)
            .map_or(0.0, |r| r.0 .0);
        let gate = self.gate();
        while self.min_priority().is_some_and(|p| p < gate) {
            self.evict_first();
        }
    }

    fn evict_first(&mut self) {
        if let Some((_, Reverse(key))) = self.order.pop_first() {
            self.stored.remove(&key);
            self.rejected += 1;
        }
    }

    /// Accumulates `value` for a stored key, or decides admission for a new key
    /// with pass-1 priority `priority` (the estimate's magnitude).
    pub fn process(&mut self, key: &Key, value: f64, priority: f64) {
        if let Some(slot) = self.stored.get_mut(key) {
            slot.acc += value;
            return;
        }
        let rank: Rank = (TotalF64(priority), Reverse(key.clone()));
        let full = self.stored.len() >= self.capacity;
        if (full && self.order.first().is_some_and(|lowest| rank <= *lowest)) || priority < self.gate() {
            self.rejected += 1;
            return;
        }
        self.stored.insert(key.clone(), Slot { priority, acc: value });
        self.order.insert(rank);
        if full || self.admission == Admission::HalfGate {
            self.refresh();
        } else if self.stored.len() == self.k + 1 {
            self.kth = self.min_priority().unwrap_or(0.0);
        }
    }

    /// Priority union: shared keys sum their accumulators, then the result is
    /// truncated and gated as a single structure would be.
    pub fn merge(&mut self, other: &CollectT) -> Result<()> {
        if self.capacity != other.capacity || self.k != other.k || self.admission != other.admission {
            return Err(Error::Merge("collection structures differ in shape".into()));
        }
        for (key, slot) in &other.stored {
            match self.stored.get_mut(key) {
                Some(mine) => {
                    if mine.priority != slot.priority {
                        return Err(Error::Merge(format!("key {key} has different priorities")));
                    }
                    mine.acc += slot.acc;
                }
                None => {
                    self.stored.insert(key.clone(), *slot);
                    self.order.insert((TotalF64(slot.priority), Reverse(key.clone())));
                }
            }
        }
        self.rejected += other.rejected;
        self.refresh();
        Ok(())
    }

    fn ranked(&self, t: &TransformConfig) -> Vec<SampleEntry> {
        let mut entries: Vec<SampleEntry> = self
            .stored
            .iter()
            .filter(|(_, s)| s.acc != 0.0)
            .map(|(key, s)| SampleEntry {
                key: key.clone(),
                frequency: s.acc,
                transformed: t.transform_value(key, s.acc),
            })
            .collect();
        sort_by_rank(&mut entries);
        entries
    }

    /// The top `k` stored keys by exact `|ν*|`, `τ` the `(k+1)`-st.
    pub fn extract(&self, t: &TransformConfig) -> WorSample {
        let mut ranked = self.ranked(t);
        let k = self.k;
        if ranked.len() <= k {
            let mut s = WorSample::new(ranked, 0.0, SampleMode::Exact2Pass, t, k);
            s.underfull = self.rejected == 0;
            s.failure = self.rejected != 0;
            return s;
        }
        let tau = ranked[k].transformed.abs();
        ranked.truncate(k);
        WorSample::new(ranked, tau, SampleMode::Exact2Pass, t, k)
    }

    /// A larger sample from the same structure. Keeps the top `k+1` keys by
    /// exact `|ν*|` and every stored key with `|ν*| ≥ L + |ν*_(k+1)|/3`, `L` the
    /// smallest stored priority; the smallest retained `|ν*|` becomes `τ`
    /// and its key is dropped. Falls back to [`extract`](Self::extract) when
    /// the structure holds too few keys.
    pub fn extended_sample(&self, t: &TransformConfig) -> WorSample {
        let ranked = self.ranked(t);
        let k = self.k;
        if ranked.len() <= k {
            return self.extract(t);
        }
        let cut = if self.rejected == 0 {
            ranked.len()
        } else {
            let l = self.min_priority().unwrap_or(0.0);
            let bar = l + ranked[k].transformed.abs() / 3.0;
            let extra = ranked[k + 1..]
                .iter()
                .take_while(|e| e.transformed.abs() >= bar)
                .count();
            k + 1 + extra
        };
        let mut q = ranked;
        q.truncate(cut);
        let last = q.pop().expect("at least k+1 entries");
        let kp = q.len();
        WorSample::new(q, last.transformed.abs(), SampleMode::Exact2Pass, t, kp)
    }
}

/// Replays the stream against a frozen pass-1 sketch.
pub fn pass_two<S: ElementSource + ?Sized>(source: &S, cfg: &WorpConfig, sketch: &RhhSketch) -> Result<CollectT> {
    let t = cfg.transform();
    let mut coll = CollectT::new(cfg.collect_capacity(), cfg.k, cfg.admission);
    let mut cache: HashMap<Key, f64> = HashMap::new();
    source.try_for_each(&mut |e| {
        if coll.contains(&e.key) {
            coll.process(&e.key, e.value, 0.0);
            return Ok(());
        }
        let priority = match cache.get(&e.key) {
            Some(p) => *p,
            None => {
                let p = sketch.est(t.key_map.map(&e.key, t.seed)?).abs();
                cache.insert(e.key.clone(), p);
                p
            }
        };
        coll.process(&e.key, e.value, priority);
        Ok(())
    })?;
    Ok(coll)
}

fn check_failure(sketch: &RhhSketch, coll_keys: Vec<&Key>, cfg: &WorpConfig) -> Result<bool> {
    let t = cfg.transform();
    let mapped = coll_keys
        .into_iter()
        .map(|k| t.key_map.map(k, t.seed))
        .collect::<Result<Vec<u64>>>()?;
    Ok(sketch.failure_test(cfg.k + 1, &mapped))
}

/// Full state of a two-pass run.
#[derive(Clone, Debug)]
pub struct TwoPassRun {
    pub sketch: RhhSketch,
    pub collect: CollectT,
    pub failure: bool,
}

impl TwoPassRun {
    pub fn sample(&self, cfg: &WorpConfig) -> WorSample {
        let mut s = self.collect.extract(&cfg.transform());
        s.failure |= self.failure;
        s
    }

    pub fn extended_sample(&self, cfg: &WorpConfig) -> WorSample {
        if self.failure {
            return self.sample(cfg);
        }
        self.collect.extended_sample(&cfg.transform())
    }
}

pub fn two_pass_run<S: ElementSource + ?Sized>(source: &S, cfg: &WorpConfig) -> Result<TwoPassRun> {
    let sketch = pass_one(source, cfg, cfg.two_pass_rhh())?;
    let collect = pass_two(source, cfg, &sketch)?;
    let failure = collect.len() > cfg.k && check_failure(&sketch, collect.stored_keys().collect(), cfg)?;
    Ok(TwoPassRun {
        sketch,
        collect,
        failure,
    })
}

/// Exact p-ppswor sample of size `k` in two passes over `source`.
pub fn two_pass_sample<S: ElementSource + ?Sized>(source: &S, cfg: &WorpConfig) -> Result<WorSample> {
    Ok(two_pass_run(source, cfg)?.sample(cfg))
}

/// Two-pass run over shards: pass-1 sketches and pass-2 structures are built
/// per shard in parallel and merged in shard order.
pub fn two_pass_sharded<S: ElementSource + Sync>(shards: &[S], cfg: &WorpConfig) -> Result<TwoPassRun> {
    let rhh = cfg.two_pass_rhh();
    let sketches = shards
        .par_iter()
        .map(|s| pass_one(s, cfg, rhh.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut sketch = RhhSketch::init(rhh)?;
    for s in &sketches {
        sketch.merge(s)?;
    }
    let colls = shards
        .par_iter()
        .map(|s| pass_two(s, cfg, &sketch))
        .collect::<Result<Vec<_>>>()?;
    let mut collect = CollectT::new(cfg.collect_capacity(), cfg.k, cfg.admission);
    for c in &colls {
        collect.merge(c)?;
    }
    let failure = collect.len() > cfg.k && check_failure(&sketch, collect.stored_keys().collect(), cfg)?;
    Ok(TwoPassRun {
        sketch,
        collect,
        failure,
    })
}

/// One-pass candidate keys, ranked by their estimate at last update.
#[derive(Clone, Debug)]
pub struct Candidates {
    capacity: usize,
    keys: HashMap<Key, (u64, f64)>,
    order: BTreeSet<Rank>,
    evicted: u64,
}

impl Candidates {
    pub fn new(capacity: usize) -> Self {
        Candidates {
            capacity,
            keys: HashMap::new(),
            order: BTreeSet::new(),
            evicted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn observe(&mut self, key: &Key, mapped: u64, est: f64) {
        let rank: Rank = (TotalF64(est.abs()), Reverse(key.clone()));
        if let Some((_, old)) = self.keys.get_mut(key) {
            self.order.remove(&(TotalF64(*old), Reverse(key.clone())));
            *old = est.abs();
            self.order.insert(rank);
            return;
        }
        if self.keys.len() >= self.capacity {
            if self.order.first().is_some_and(|lowest| rank <= *lowest) {
                self.evicted += 1;
                return;
            }
            let (_, Reverse(victim)) = self.order.pop_first().expect("full");
            self.keys.remove(&victim);
            self.evicted += 1;
        }
        self.keys.insert(key.clone(), (mapped, est.abs()));
        self.order.insert(rank);
    }

    /// Key union; ranks are refreshed at [`finalize`].
    pub fn merge(&mut self, other: &Candidates) {
        for (key, &(mapped, est)) in &other.keys {
            if !self.keys.contains_key(key) {
                self.keys.insert(key.clone(), (mapped, est));
                self.order.insert((TotalF64(est), Reverse(key.clone())));
            }
        }
        self.evicted += other.evicted;
    }
}

/// Re-estimates every candidate against the final sketch and keeps the top `k`.
pub fn finalize(sketch: &RhhSketch, cands: &Candidates, cfg: &WorpConfig) -> WorSample {
    let t = cfg.transform();
    let mut ranked: Vec<SampleEntry> = cands
        .keys
        .iter()
        .map(|(key, &(mapped, _))| {
            let est = sketch.est(mapped);
            SampleEntry {
                key: key.clone(),
                frequency: t.invert_estimate(est, key),
                transformed: est,
            }
        })
        .filter(|e| e.transformed != 0.0)
        .collect();
    sort_by_rank(&mut ranked);
    let k = cfg.k;
    let mut keys: Vec<u64> = cands.keys.values().map(|v| v.0).collect();
    keys.sort_unstable();
    keys.dedup();
    let failure = sketch.failure_test(k + 1, &keys);
    if ranked.len() <= k {
        let mut s = WorSample::new(ranked, 0.0, SampleMode::Approx1Pass, &t, k);
        s.underfull = cands.evicted == 0;
        s.failure = cands.evicted != 0;
        return s;
    }
    let tau = ranked[k].transformed.abs();
    ranked.truncate(k);
    let mut s = WorSample::new(ranked, tau, SampleMode::Approx1Pass, &t, k);
    s.failure = failure;
    s
}

fn one_pass_state<S: ElementSource + ?Sized>(source: &S, cfg: &WorpConfig) -> Result<(RhhSketch, Candidates)> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon <= 1.0 / 3.0 + 1e-12) {
        return Err(Error::Config(format!("epsilon must be in (0, 1/3], got {}", cfg.epsilon)));
    }
    cfg.validate()?;
    let t = cfg.transform();
    let mut sketch = RhhSketch::init(cfg.one_pass_rhh())?;
    let mut cands = Candidates::new(cfg.collect_capacity());
    source.try_for_each(&mut |e| {
        let out = t.transform_element(e)?;
        sketch.process(out.key, out.value)?;
        cands.observe(&e.key, out.key, sketch.est(out.key));
        Ok(())
    })?;
    Ok((sketch, cands))
}

/// Approximate p-ppswor sample in one pass over `source`.
pub fn one_pass_sample<S: ElementSource + ?Sized>(source: &S, cfg: &WorpConfig) -> Result<WorSample> {
    let (sketch, cands) = one_pass_state(source, cfg)?;
    Ok(finalize(&sketch, &cands, cfg))
}

pub fn one_pass_sharded<S: ElementSource + Sync>(shards: &[S], cfg: &WorpConfig) -> Result<WorSample> {
    let states = shards
        .par_iter()
        .map(|s| one_pass_state(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut sketch = RhhSketch::init(cfg.one_pass_rhh())?;
    let mut cands = Candidates::new(cfg.collect_capacity());
    for (s, c) in &states {
        sketch.merge(s)?;
        cands.merge(c);
    }
    Ok(finalize(&sketch, &cands, cfg))
}

/// Whether every key of `v` has `|est(x) - ν*_x| ≤ |ν*_(k+1)|/3` under `sketch`.
pub fn third_error_event(sketch: &RhhSketch, v: &FrequencyVector, cfg: &WorpConfig) -> Result<bool> {
    let t = cfg.transform();
    let star = t.transform_vector(v);
    let mut mags: Vec<f64> = star.iter().map(|(_, x)| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let bound = mags.get(cfg.k).copied().unwrap_or(0.0) / 3.0;
    for (key, x) in star.iter() {
        let est = sketch.est(t.key_map.map(key, t.seed)?);
        if (est - x).abs() > bound {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Element;
    use crate::transform::exact_bottomk_sample;

    fn stream(n: u64) -> Vec<Element> {
        (1..=n)
            .map(|i| Element::new(i, 1000.0 / (i * i) as f64).unwrap())
            .collect()
    }

    fn big_cfg(k: usize, p: f64) -> WorpConfig {
        let mut cfg = WorpConfig::new(k, p, Flavor::Projection, 1.0, 3, 1024, 5);
        cfg.shape = SketchShape::Projection { rows: 9, width: 4096 };
        cfg
    }

    #[test]
    fn tiny_input_matches_oracle() {
        let s = stream(10);
        let cfg = big_cfg(3, 1.0);
        let got = two_pass_sample(&s, &cfg).unwrap();
        let v = FrequencyVector::aggregate(&s).unwrap();
        let want = exact_bottomk_sample(&v, 3, &cfg.transform()).unwrap();
        assert_eq!(got.entries, want.entries);
        assert_eq!(got.tau, want.tau);
    }

    #[test]
    fn underfull_returns_everything() {
        let s = stream(3);
        let got = two_pass_sample(&s, &big_cfg(5, 1.0)).unwrap();
        assert!(got.underfull);
        assert_eq!(got.len(), 3);
        assert_eq!(got.tau, 0.0);
        let one = one_pass_sample(&s, &big_cfg(5, 1.0)).unwrap();
        assert!(one.underfull);
    }

    #[test]
    fn collect_gate_rejects_low_keys() {
        let mut t = CollectT::new(2, 1, Admission::Plain);
        t.process(&Key::from("a"), 1.0, 10.0);
        t.process(&Key::from("b"), 1.0, 8.0);
        t.process(&Key::from("c"), 1.0, 5.0);
        assert!(!t.contains(&Key::from("c")));
        t.process(&Key::from("a"), 2.0, 0.0);
        assert_eq!(t.frequency(&Key::from("a")), Some(3.0));
        assert_eq!(t.rejected(), 1);
    }

    #[test]
    fn half_gate_prunes() {
        let mut t = CollectT::new(10, 1, Admission::HalfGate);
        for (k, p) in [("a", 10.0), ("b", 9.0), ("c", 4.0), ("d", 6.0), ("e", 3.0)] {
            t.process(&Key::from(k), 1.0, p);
        }
        let kept: BTreeSet<String> = t.stored_keys().map(|k| k.to_string()).collect();
        assert_eq!(kept, ["a", "b", "d"].iter().map(|s| s.to_string()).collect());
    }

    #[test]
    fn one_pass_exact_regime_matches_two_pass() {
        let s = stream(50);
        let cfg = big_cfg(5, 2.0);
        let a = two_pass_sample(&s, &cfg).unwrap();
        let b = one_pass_sample(&s, &cfg).unwrap();
        assert_eq!(a.keys(), b.keys());
        assert!((a.tau - b.tau).abs() <= 1e-9 * a.tau);
    }

    #[test]
    fn extended_sample_is_at_least_k() {
        let s = stream(200);
        let cfg = big_cfg(10, 1.0);
        let run = two_pass_run(&s, &cfg).unwrap();
        let ext = run.extended_sample(&cfg);
        assert!(ext.len() >= 10);
        let base = run.sample(&cfg);
        assert!(base.keys().is_subset(&ext.keys()));
    }
}
