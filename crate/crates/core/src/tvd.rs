//! A one-pass without-replacement sampler built from independent single-key
//! `ℓp` samplers and a heavy-hitter sketch.
//!
//! Samplers are consulted in order. When sampler `i` returns a key not yet in
//! the output, the key is added and the update `x ← x - R(x)` is fed to every
//! later sampler, which removes (most of) that key's mass. The run fails when
//! the samplers run out before `k` distinct keys are found.

use std::collections::{BTreeSet, HashMap};

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::data::{splitmix64, FrequencyVector, Key};
use crate::error::{Error, Result};
use crate::io::ElementSource;
use crate::rhh::RhhSketch;
use crate::transform::KeyMap;

/// A single-key sampler with output distribution close to `|x_i|^p / ‖x‖_p^p`.
pub trait SingleSampler {
    fn process(&mut self, key: &Key, delta: f64);
    /// The sampled key, or `None` for FAIL.
    fn finalize(&mut self) -> Option<Key>;
}

/// Point estimates used for the subtraction step.
pub trait KeyEstimator {
    fn estimate_key(&self, key: &Key) -> f64;
}

impl KeyEstimator for FrequencyVector {
    fn estimate_key(&self, key: &Key) -> f64 {
        self.get(key)
    }
}

/// An rHH sketch over mapped keys.
pub struct SketchEstimator<'a> {
    pub sketch: &'a RhhSketch,
    pub key_map: KeyMap,
    pub seed: u64,
}

impl KeyEstimator for SketchEstimator<'_> {
    fn estimate_key(&self, key: &Key) -> f64 {
        self.key_map
            .map(key, self.seed)
            .map_or(0.0, |k| self.sketch.est(k))
    }
}

/// Draws a key with probability exactly `|ν_x|^p / ‖ν‖_p^p`.
pub fn oracle_single_sample<G: Rng + ?Sized>(v: &FrequencyVector, p: f64, rng: &mut G) -> Result<Key> {
    let weights: Vec<(&Key, f64)> = v.iter().map(|(k, x)| (k, x.abs().powf(p))).collect();
    pick_weighted(&weights, rng).ok_or_else(|| Error::Domain("zero frequency vector".into()))
}

fn pick_weighted<'a, G: Rng + ?Sized>(weights: &[(&'a Key, f64)], rng: &mut G) -> Option<Key> {
    let total: f64 = weights.iter().map(|w| w.1).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights {
        if u < *w {
            return Some((*k).clone());
        }
        u -= w;
    }
    weights.iter().rev().find(|w| w.1 > 0.0).map(|w| w.0.clone())
}

/// Exact sampler over the aggregated vector (test stand-in for a sketch-based
/// perfect sampler).
#[derive(Clone, Debug)]
pub struct OracleSampler {
    p: f64,
    agg: HashMap<Key, f64>,
    rng: SmallRng,
}

impl OracleSampler {
    pub fn new(p: f64, seed: u64) -> Self {
        OracleSampler {
            p,
            agg: HashMap::new(),
            rng: SmallRng::seed_from_u64(seed),
        }
    }
}

fn sorted_weights(agg: &HashMap<Key, f64>, p: f64) -> Vec<(&Key, f64)> {
    let mut w: Vec<(&Key, f64)> = agg.iter().map(|(k, x)| (k, x.abs().powf(p))).collect();
    // HashMap order is random per process; sort for reproducible draws
    w.sort_by(|a, b| a.0.cmp(b.0));
    w
}

impl SingleSampler for OracleSampler {
    fn process(&mut self, key: &Key, delta: f64) {
        *self.agg.entry(key.clone()).or_insert(0.0) += delta;
    }

    fn finalize(&mut self) -> Option<Key> {
        let w = sorted_weights(&self.agg, self.p);
        pick_weighted(&w, &mut self.rng)
    }
}

/// Rejection sampler over a stored aggregate: propose uniformly, accept with
/// probability `|ν_x|^p / max_y |ν_y|^p`.
#[derive(Clone, Debug)]
pub struct RejectionSampler {
    p: f64,
    agg: HashMap<Key, f64>,
    rng: SmallRng,
    max_proposals: usize,
}

impl RejectionSampler {
    pub fn new(p: f64, seed: u64) -> Self {
        RejectionSampler {
            p,
            agg: HashMap::new(),
            rng: SmallRng::seed_from_u64(seed),
            max_proposals: 100_000,
        }
    }
}

impl SingleSampler for RejectionSampler {
    fn process(&mut self, key: &Key, delta: f64) {
        *self.agg.entry(key.clone()).or_insert(0.0) += delta;
    }

    fn finalize(&mut self) -> Option<Key> {
        let w = sorted_weights(&self.agg, self.p);
        let max = w.iter().map(|x| x.1).fold(0.0, f64::max);
        if !(max > 0.0) {
            return None;
        }
        for _ in 0..self.max_proposals {
            let (k, wx) = w[self.rng.random_range(0..w.len())];
            if self.rng.random::<f64>() * max < wx {
                return Some(k.clone());
            }
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TvdConfig {
    pub k: usize,
    pub p: f64,
    pub n: usize,
    /// Number of single samplers.
    pub r: usize,
    /// Largest accepted element magnitude.
    pub max_magnitude: f64,
}

impl TvdConfig {
    /// `r = 8k` samplers.
    pub fn reduced(k: usize, p: f64, n: usize) -> Self {
        TvdConfig {
            k,
            p,
            n,
            r: 8 * k,
            max_magnitude: 9_007_199_254_740_992.0,
        }
    }

    /// `r = ⌈C k log₂ n⌉` samplers.
    pub fn full(k: usize, p: f64, n: usize, c: f64) -> Self {
        let r = (c * k as f64 * (n.max(2) as f64).log2()).ceil() as usize;
        TvdConfig {
            r: r.max(k),
            ..Self::reduced(k, p, n)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.r < self.k {
            return Err(Error::Config(format!("need 1 <= k <= r, got k={}, r={}", self.k, self.r)));
        }
        if !(self.max_magnitude.is_finite() && self.max_magnitude > 0.0) {
            return Err(Error::Config("magnitude bound must be finite and positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TvdOutcome {
    /// The `k` distinct keys in discovery order, or `None` for FAIL.
    pub keys: Option<Vec<Key>>,
    /// Samplers consulted.
    pub trials: usize,
}

/// Feeds `stream` to every sampler, then runs the discovery loop.
pub fn tvd_sample<S: ElementSource + ?Sized>(
    stream: &S,
    cfg: &TvdConfig,
    samplers: &mut [Box<dyn SingleSampler + Send>],
    r_est: &dyn KeyEstimator,
) -> Result<TvdOutcome> {
    cfg.validate()?;
    if samplers.len() != cfg.r {
        return Err(Error::Config(format!(
            "expected {} samplers, got {}",
            cfg.r,
            samplers.len()
        )));
    }
    stream.try_for_each(&mut |e| {
        if e.value.abs() > cfg.max_magnitude {
            return Err(Error::RejectedElement(format!(
                "value {} exceeds the magnitude bound",
                e.value
            )));
        }
        samplers.iter_mut().for_each(|s| s.process(&e.key, e.value));
        Ok(())
    })?;
    let mut found: Vec<Key> = Vec::with_capacity(cfg.k);
    let mut seen: BTreeSet<Key> = BTreeSet::new();
    for i in 0..samplers.len() {
        let Some(key) = samplers[i].finalize() else {
            continue;
        };
        if seen.insert(key.clone()) {
            let delta = -r_est.estimate_key(&key);
            samplers[i + 1..].iter_mut().for_each(|s| s.process(&key, delta));
            found.push(key);
            if found.len() == cfg.k {
                return Ok(TvdOutcome {
                    keys: Some(found),
                    trials: i + 1,
                });
            }
        }
    }
    Ok(TvdOutcome {
        keys: None,
        trials: samplers.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Oracle,
    Rejection,
}

/// `cfg.r` independent samplers seeded from `seed`.
pub fn make_samplers(kind: SamplerKind, cfg: &TvdConfig, seed: u64) -> Vec<Box<dyn SingleSampler + Send>> {
    (0..cfg.r as u64)
        .map(|i| {
            let s = splitmix64(seed ^ splitmix64(i + 1));
            match kind {
                SamplerKind::Oracle => Box::new(OracleSampler::new(cfg.p, s)) as Box<dyn SingleSampler + Send>,
                SamplerKind::Rejection => Box::new(RejectionSampler::new(cfg.p, s)),
            }
        })
        .collect()
}

/// Probability of every `k`-subset under successive weighted sampling without
/// replacement with weights `|ν_x|^p`. Subsets are sorted index lists into
/// `v`'s key order.
pub fn exact_wor_set_probabilities(v: &FrequencyVector, p: f64, k: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    let w: Vec<f64> = v.iter().map(|(_, x)| x.abs().powf(p)).collect();
    let n = w.len();
    if k == 0 || k > n || k > 20 {
        return Err(Error::Domain(format!("cannot enumerate {k}-subsets of {n} keys")));
    }
    let total: f64 = w.iter().sum();
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    let mut f = vec![0.0; 1 << k];
    loop {
        // f[mask]: probability that the first |mask| draws are exactly `mask`, in any order
        f[0] = 1.0;
        for mask in 1usize..(1 << k) {
            let mut acc = 0.0;
            let mut rest_w = 0.0;
            for (b, &i) in idx.iter().enumerate() {
                if mask & (1 << b) != 0 {
                    rest_w += w[i];
                }
            }
            for (b, &i) in idx.iter().enumerate() {
                if mask & (1 << b) != 0 {
                    let prev = mask ^ (1 << b);
                    let removed = rest_w - w[i];
                    acc += f[prev] * w[i] / (total - removed);
                }
            }
            f[mask] = acc;
        }
        out.push((idx.clone(), f[(1 << k) - 1]));
        // next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return Ok(out);
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Half the `ℓ1` distance between an empirical distribution over key sets and
/// the exact one. Sets missing from `exact` count with probability 0.
pub fn total_variation(
    counts: &HashMap<BTreeSet<Key>, usize>,
    v: &FrequencyVector,
    exact: &[(Vec<usize>, f64)],
) -> f64 {
    let runs: usize = counts.values().sum();
    let keys: Vec<&Key> = v.keys().collect();
    let mut remaining = counts.clone();
    let mut tv = 0.0;
    for (idx, pr) in exact {
        let set: BTreeSet<Key> = idx.iter().map(|&i| keys[i].clone()).collect();
        let c = remaining.remove(&set).unwrap_or(0);
        tv += (c as f64 / runs as f64 - pr).abs();
    }
    tv += remaining.values().map(|c| *c as f64 / runs as f64).sum::<f64>();
    tv / 2.0
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialStats {
    pub runs: usize,
    pub failures: usize,
    pub mean_trials: f64,
    pub max_trials: usize,
    /// `2k + 3·sqrt(2k)`: mean of a sum of `k` geometric(1/2) variables plus slack.
    pub threshold: f64,
    pub within_threshold: bool,
}

/// Summarizes trials-to-completion over successful runs.
pub fn trial_count_monitor(outcomes: &[TvdOutcome], k: usize) -> TrialStats {
    let ok: Vec<usize> = outcomes
        .iter()
        .filter(|o| o.keys.is_some())
        .map(|o| o.trials)
        .collect();
    let mean_trials = if ok.is_empty() {
        f64::NAN
    } else {
        ok.iter().sum::<usize>() as f64 / ok.len() as f64
    };
    let threshold = 2.0 * k as f64 + 3.0 * (2.0 * k as f64).sqrt();
    TrialStats {
        runs: outcomes.len(),
        failures: outcomes.len() - ok.len(),
        mean_trials,
        max_trials: ok.iter().copied().max().unwrap_or(0),
        threshold,
        within_threshold: mean_trials <= threshold,
    }
}
