//! Monte Carlo calibration of the sketch parameter `Ψ` and the collection
//! constant `B`, plus the Erlang tail bounds they rest on.
//!
//! `R_{n,k,ρ}` is `Σ_{i=k+1..n} (S_k / S_i)^ρ` where `S_i` is the `i`-th prefix
//! sum of i.i.d. Exp(1) draws. `Ψ_{n,k,ρ}(δ)` is `k` divided by the empirical
//! `(1-δ)`-quantile of `R`: with probability `1-δ` the transformed input has
//! `(k, Ψ)` residual heavy hitters.
//!
//! Draws are grouped into fixed-size chunks, each with its own generator
//! seeded from `(seed, chunk)`, so results do not depend on the thread count.

use std::fs;
use std::path::{Path, PathBuf};

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{splitmix64, FrequencyVector, RDist};
use crate::error::{Error, Result};
use crate::transform::TransformConfig;
use crate::util::quantile_sorted;

pub const CALIBRATION_VERSION: u32 = 1;
pub const MAX_B: usize = 63;
const CHUNK: usize = 1024;
const BOOTSTRAP_RESAMPLES: usize = 200;

/// Default trial count: `max(10^5, 1000/δ)`.
pub fn default_trials(delta: f64) -> usize {
    (1000.0 / delta).ceil().max(1e5) as usize
}

fn chunk_rng(seed: u64, stream: u64, chunk: usize) -> SmallRng {
    SmallRng::seed_from_u64(splitmix64(seed ^ splitmix64(stream) ^ splitmix64(chunk as u64 + 1)))
}

/// Runs `draw` `trials` times in parallel with deterministic per-chunk generators.
pub(crate) fn par_draws<T, F>(trials: usize, seed: u64, stream: u64, draw: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut SmallRng) -> T + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = chunk_rng(seed, stream, c);
            let len = CHUNK.min(trials - c * CHUNK);
            (0..len).map(|_| draw(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

#[inline]
fn pow_rho(x: f64, rho: f64) -> f64 {
    if rho == 1.0 {
        x
    } else if rho == 2.0 {
        x * x
    } else {
        x.powf(rho)
    }
}

/// One draw of `R_{n,k,ρ}`.
pub fn sample_r<G: Rng + ?Sized>(n: usize, k: usize, rho: f64, rng: &mut G) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::Domain(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    let mut s = 0.0;
    for _ in 0..k {
        let z: f64 = rng.sample(Exp1);
        s += z;
    }
    let sk = s;
    let mut acc = 0.0;
    for _ in k..n {
        let z: f64 = rng.sample(Exp1);
        s += z;
        acc += pow_rho(sk / s, rho);
    }
    Ok(acc)
}

/// One draw of `G' = (S_{k1} / S_{k2})^ρ`.
pub fn sample_g_prime<G: Rng + ?Sized>(rho: f64, k1: usize, k2: usize, rng: &mut G) -> Result<f64> {
    if k1 == 0 || k1 >= k2 {
        return Err(Error::Domain(format!("need 1 <= k1 < k2, got k1={k1}, k2={k2}")));
    }
    let mut s = 0.0;
    for _ in 0..k1 {
        let z: f64 = rng.sample(Exp1);
        s += z;
    }
    let s1 = s;
    for _ in k1..k2 {
        let z: f64 = rng.sample(Exp1);
        s += z;
    }
    Ok(pow_rho(s1 / s, rho))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailSide {
    Upper,
    Lower,
}

/// Closed-form bounds on `Pr[X ≥ εℓ]` (upper, `ε ≥ 1`) and `Pr[X ≤ εℓ]`
/// (lower, `ε ≤ 1`) for `X ~ Erlang[ℓ, 1]`.
pub fn erlang_tail(l: u32, eps: f64, side: TailSide) -> Result<f64> {
    if l == 0 || !(eps > 0.0) {
        return Err(Error::Domain(format!("need l >= 1 and eps > 0, got l={l}, eps={eps}")));
    }
    let rate = eps - 1.0 - eps.ln();
    match side {
        TailSide::Upper if eps >= 1.0 => {
            Ok(((-(l as f64) * rate).exp() / eps).min((1.0 - eps).exp()))
        }
        TailSide::Lower if eps <= 1.0 => Ok((-(l as f64) * rate).exp()),
        _ => Err(Error::Domain(format!("eps={eps} is on the wrong side for {side:?}"))),
    }
}

/// Threshold `t` with `Pr[R_{n,k,ρ} ≥ t] ≤ 3e^{-k}`, from a dyadic split of the
/// tail indices with Erlang bounds on each block.
pub fn r_tail_threshold(n: usize, k: usize, rho: f64) -> f64 {
    let hmax = ((n as f64 / k as f64).log2().ceil() as i32).max(1);
    let mut sum = 2.0;
    for h in 2..=hmax {
        let two_h = 2f64.powi(h);
        sum += two_h * pow_rho(3.2 / (3.2 + 0.15 * (two_h - 2.0)), rho);
    }
    k as f64 * sum
}

/// Smallest `B ∈ [2, 63]` with `Pr[(S_{k+1}/S_{B(k+1)}) > 1/3] ≤ δ`, from `trials` draws.
///
/// The comparison `G' > (1/3)^ρ` is the same event for every `ρ`.
pub fn choose_b(k: usize, delta: f64, trials: usize, seed: u64) -> usize {
    let k1 = k + 1;
    let mut firsts: Vec<f64> = par_draws(trials, seed, 0xb, |rng| {
        let mut s = 0.0;
        for _ in 0..k1 {
            let z: f64 = rng.sample(Exp1);
            s += z;
        }
        let s1 = s;
        for b in 2..=MAX_B {
            for _ in 0..k1 {
                let z: f64 = rng.sample(Exp1);
                s += z;
            }
            if s1 / s <= 1.0 / 3.0 {
                return b as f64;
            }
        }
        (MAX_B + 1) as f64
    });
    firsts.sort_unstable_by(f64::total_cmp);
    (quantile_sorted(&firsts, 1.0 - delta) as usize).clamp(2, MAX_B)
}

/// A calibration record consumed by the sampling pipelines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub version: u32,
    pub n: usize,
    pub k: usize,
    pub rho: f64,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
    /// Empirical `(1-δ)`-quantile of `R`.
    pub quantile: f64,
    pub psi: f64,
    /// Bootstrap 95% interval for `Ψ`.
    pub psi_ci: (f64, f64),
    pub implied_c: f64,
    pub implied_c_ci: (f64, f64),
    pub b: usize,
    pub dist: RDist,
    /// Set for priority sampling, where `Ψ` reuses the ppswor procedure.
    pub experimental: bool,
}

/// `C` such that `Ψ = 1/(C ln(n/k))` for `ρ = 1` and `Ψ = max(ρ-1, 1/ln(n/k))/C` for `ρ > 1`.
pub fn implied_c(psi: f64, n: usize, k: usize, rho: f64) -> f64 {
    let ln = (n as f64 / k as f64).ln();
    if rho == 1.0 {
        1.0 / (psi * ln)
    } else {
        (rho - 1.0).max(1.0 / ln) / psi
    }
}

pub fn estimate_psi(n: usize, k: usize, rho: f64, delta: f64, trials: usize, seed: u64) -> Result<Calibration> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Calibration(format!("delta must be in (0, 1), got {delta}")));
    }
    if !(rho >= 1.0) {
        return Err(Error::Calibration(format!("rho must be at least 1, got {rho}")));
    }
    let min_trials = (100.0 / delta).ceil() as usize;
    if trials < min_trials {
        return Err(Error::Calibration(format!(
            "{trials} trials cannot resolve the {delta} tail; need at least {min_trials}"
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::Domain(format!("need 1 <= k < n, got k={k}, n={n}")));
    }
    let mut draws = par_draws(trials, seed, 0xa, |rng| {
        sample_r(n, k, rho, rng).expect("k <= n checked")
    });
    draws.sort_unstable_by(f64::total_cmp);
    let z = quantile_sorted(&draws, 1.0 - delta);
    let psi = (k as f64 / z).min(1.0);

    let mut boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|b| {
            let mut rng = chunk_rng(seed, 0xc, b);
            let mut idx: Vec<usize> = (0..trials).map(|_| rng.random_range(0..trials)).collect();
            let rank = ((1.0 - delta) * trials as f64).ceil().clamp(1.0, trials as f64) as usize - 1;
            let (_, q, _) = idx.select_nth_unstable(rank);
            (k as f64 / draws[*q]).min(1.0)
        })
        .collect();
    boot.sort_unstable_by(f64::total_cmp);
    let psi_ci = (quantile_sorted(&boot, 0.025), quantile_sorted(&boot, 0.975));

    Ok(Calibration {
        version: CALIBRATION_VERSION,
        n,
        k,
        rho,
        delta,
        trials,
        seed,
        quantile: z,
        psi,
        psi_ci,
        implied_c: implied_c(psi, n, k, rho),
        implied_c_ci: (implied_c(psi_ci.1, n, k, rho), implied_c(psi_ci.0, n, k, rho)),
        b: choose_b(k.saturating_sub(1), delta, trials.min(20_000).max(min_trials), seed),
        dist: RDist::Exp1,
        experimental: false,
    })
}

impl Calibration {
    /// Marks a record as used for priority sampling.
    pub fn for_dist(mut self, dist: RDist) -> Self {
        self.dist = dist;
        self.experimental = dist == RDist::Uniform01;
        self
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cal: Calibration = serde_json::from_str(&fs::read_to_string(path)?)?;
        if cal.version != CALIBRATION_VERSION {
            return Err(Error::Format(format!("calibration version {} not supported", cal.version)));
        }
        Ok(cal)
    }
}

/// Calibration records stored as JSON files under one directory.
#[derive(Clone, Debug)]
pub struct CalibrationCache {
    dir: PathBuf,
}

impl CalibrationCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CalibrationCache { dir: dir.into() }
    }

    pub fn path_for(&self, n: usize, k: usize, rho: f64, delta: f64, trials: usize, seed: u64) -> PathBuf {
        self.dir.join(format!(
            "cal-v{CALIBRATION_VERSION}-n{n}-k{k}-rho{rho}-delta{delta}-t{trials}-s{seed}.json"
        ))
    }

    pub fn get_or_compute(
        &self,
        n: usize,
        k: usize,
        rho: f64,
        delta: f64,
        trials: usize,
        seed: u64,
    ) -> Result<Calibration> {
        let path = self.path_for(n, k, rho, delta, trials, seed);
        if let Ok(cal) = Calibration::load(&path) {
            return Ok(cal);
        }
        let cal = estimate_psi(n, k, rho, delta, trials, seed)?;
        fs::create_dir_all(&self.dir)?;
        cal.save(&path)?;
        Ok(cal)
    }
}

/// One-sided comparison of the empirical CDFs of `F` and `R` on a grid.
#[derive(Clone, Debug, Serialize)]
pub struct DominationReport {
    /// `(t, CDF_F(t), CDF_R(t))`.
    pub grid: Vec<(f64, f64, f64)>,
    /// `max_t (CDF_R(t) - CDF_F(t))`, floored at 0.
    pub max_violation: f64,
    /// `max_t |CDF_R(t) - CDF_F(t)|`.
    pub max_gap: f64,
}

/// The ratio `‖tail_k(w*)‖_q^q / |w*_(k)|^q` of a transformed vector.
pub fn tail_ratio(w: &FrequencyVector, k: usize, q: f64) -> f64 {
    let mut mags: Vec<f64> = w.iter().map(|(_, x)| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    if k == 0 || mags.len() <= k {
        return 0.0;
    }
    let kth = pow_rho(mags[k - 1], q);
    mags[k..].iter().rev().map(|m| pow_rho(*m, q)).sum::<f64>() / kth
}

/// Draws `F` under fresh transform seeds and `R_{|v|,k,q/p}`, then compares
/// their CDFs at `grid_points` quantiles of the pooled draws.
pub fn empirical_domination_check(
    v: &FrequencyVector,
    p: f64,
    q: f64,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<DominationReport> {
    if v.is_empty() {
        return Err(Error::DegenerateInput("empty frequency vector".into()));
    }
    let n = v.len();
    if k == 0 || k > n {
        return Err(Error::Domain(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    let rho = q / p;
    let entries: Vec<(crate::data::Key, f64)> = v.iter().map(|(key, x)| (key.clone(), x)).collect();
    let mut f: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let cfg = TransformConfig::new(p, splitmix64(seed ^ splitmix64(t as u64)));
            let mut mags: Vec<f64> = entries
                .iter()
                .map(|(key, x)| pow_rho(cfg.transform_value(key, *x).abs(), q))
                .collect();
            mags.sort_unstable_by(|a, b| b.total_cmp(a));
            if mags.len() <= k {
                0.0
            } else {
                mags[k..].iter().rev().sum::<f64>() / mags[k - 1]
            }
        })
        .collect();
    let mut r = par_draws(trials, seed, 0xd, |rng| sample_r(n, k, rho, rng).expect("k <= n"));
    f.sort_unstable_by(f64::total_cmp);
    r.sort_unstable_by(f64::total_cmp);

    let mut pooled: Vec<f64> = f.iter().chain(&r).copied().collect();
    pooled.sort_unstable_by(f64::total_cmp);
    let grid_points = 200;
    let cdf = |xs: &[f64], t: f64| xs.partition_point(|x| *x <= t) as f64 / xs.len() as f64;
    let mut grid = Vec::with_capacity(grid_points);
    let (mut max_violation, mut max_gap) = (0.0f64, 0.0f64);
    for i in 1..=grid_points {
        let t = quantile_sorted(&pooled, i as f64 / (grid_points + 1) as f64);
        let (cf, cr) = (cdf(&f, t), cdf(&r, t));
        max_violation = max_violation.max(cr - cf);
        max_gap = max_gap.max((cr - cf).abs());
        grid.push((t, cf, cr));
    }
    Ok(DominationReport {
        grid,
        max_violation,
        max_gap,
    })
}
