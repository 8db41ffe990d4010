//! Inverse-probability estimates from without-replacement samples, and the
//! Monte Carlo diagnostics used to check them.
//!
//! A sampled key `x` contributes `f(ν_x) L_x / Pr[x ∈ S | τ]`, every other key
//! contributes 0. For ppswor, `Pr[x ∈ S | τ] = 1 - exp(-(|ν_x|/τ)^p)`; for
//! priority sampling it is `min(1, (|ν_x|/τ)^p)`.
//!
//! NRMSE is `sqrt(mean((est - truth)^2)) / |truth|` over runs.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::data::{FreqFn, FrequencyVector, Key, RDist, StatisticSpec};
use crate::error::{Error, Result};
use crate::sample::{SampleMode, WorSample};
use crate::util::mean_var;

/// Probability that a key with frequency `nu` clears threshold `tau`.
pub fn inclusion_prob(nu: f64, tau: f64, p: f64, dist: RDist) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::DegenerateThreshold(tau));
    }
    let x = (nu.abs() / tau).powf(p);
    Ok(match dist {
        RDist::Exp1 => -(-x).exp_m1(),
        RDist::Uniform01 => x.min(1.0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    /// Per-key contributions; keys outside the sample are absent (contribute 0).
    pub contributions: BTreeMap<Key, f64>,
    /// Whether the sample was produced in the mode the caller expected.
    pub mode_matched: bool,
}

impl Estimate {
    pub fn contribution(&self, key: &Key) -> f64 {
        self.contributions.get(key).copied().unwrap_or(0.0)
    }
}

/// `Σ_{x∈S} f(ν_x) L_x / Pr[x ∈ S | τ]`. Underfull samples hold every key and
/// return the exact sum.
pub fn estimate_statistic(s: &WorSample, spec: &StatisticSpec) -> Result<Estimate> {
    let mut contributions = BTreeMap::new();
    let mut value = 0.0;
    for e in &s.entries {
        let fx = spec.f.eval(e.frequency);
        if !fx.is_finite() {
            return Err(Error::Evaluation(format!(
                "f({}) = {fx} for key {}",
                e.frequency, e.key
            )));
        }
        let prob = if s.underfull {
            1.0
        } else {
            inclusion_prob(e.frequency, s.tau, s.p, s.dist)?
        };
        let c = fx * spec.coefficient(&e.key) / prob;
        if !c.is_finite() {
            return Err(Error::Evaluation(format!("contribution of key {} is {c}", e.key)));
        }
        value += c;
        contributions.insert(e.key.clone(), c);
    }
    Ok(Estimate {
        value,
        contributions,
        mode_matched: true,
    })
}

/// As [`estimate_statistic`], flagging whether `s` came from `expected` mode.
pub fn estimate_statistic_for(s: &WorSample, spec: &StatisticSpec, expected: SampleMode) -> Result<Estimate> {
    let mut est = estimate_statistic(s, spec)?;
    est.mode_matched = s.mode == expected;
    Ok(est)
}

/// `sqrt(mean((est - truth)^2)) / |truth|`.
pub fn nrmse(estimates: &[f64], truth: f64) -> f64 {
    let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / estimates.len() as f64;
    mse.sqrt() / truth.abs()
}

/// Per-key estimates over many runs: `values[run][key_index]`.
#[derive(Clone, Debug)]
pub struct KeyRunMatrix {
    pub keys: Vec<Key>,
    pub values: Vec<Vec<f64>>,
}

impl KeyRunMatrix {
    pub fn from_estimates(keys: Vec<Key>, runs: &[Estimate]) -> Self {
        let values = runs
            .iter()
            .map(|e| keys.iter().map(|k| e.contribution(k)).collect())
            .collect();
        KeyRunMatrix { keys, values }
    }

    pub fn runs(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[i]).collect()
    }

    fn index(&self, key: &Key) -> Result<usize> {
        self.keys
            .iter()
            .position(|k| k == key)
            .ok_or_else(|| Error::Domain(format!("key {key} not tracked")))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KeyVariance {
    pub key: Key,
    pub weight: f64,
    pub empirical_var: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct VarianceReport {
    pub per_key: Vec<KeyVariance>,
    pub total_var: f64,
    pub total_bound: f64,
    pub all_hold: bool,
    /// `‖tail_k(w)‖₁`, never above `‖w‖₁`.
    pub tail_norm: f64,
    /// Smallest `c` with `Var[ŵ_x] ≤ (c/k) w_x ‖tail_k(w)‖₁` for every key.
    pub fitted_tail_c: f64,
    /// Smallest `c` with `Σ Var ≤ c ‖tail_k(w)‖₁² / k`.
    pub fitted_sum_c: f64,
    /// Largest `c` with `Var[ŵ_x] ≤ exp(-c k w_x / ‖tail_k(w)‖₁) w_x²` over keys
    /// with `Var[ŵ_x] < w_x²`; infinite when there are none.
    pub fitted_exp_c: f64,
}

/// Checks `Var[ŵ_x] ≤ w_x ‖w‖₁ / (k-1)` per key and `Σ Var ≤ ‖w‖₁² / (k-1)`,
/// with `w_x = |ν_x|^p` and estimates of `f = |ν|^p` in `m`. A bound holds if
/// the empirical variance is at most `bound · (1 + slack)`.
pub fn variance_bound_check(m: &KeyRunMatrix, v: &FrequencyVector, p: f64, k: usize, slack: f64) -> Result<VarianceReport> {
    if k < 2 {
        return Err(Error::Domain("the variance bound needs k >= 2".into()));
    }
    let total_w = v.norm_pow(p);
    let mut per_key = Vec::with_capacity(m.keys.len());
    let mut total_var = 0.0;
    for (i, key) in m.keys.iter().enumerate() {
        let w = v.get(key).abs().powf(p);
        let (_, var) = mean_var(&m.column(i));
        let bound = w * total_w / (k - 1) as f64;
        total_var += var;
        per_key.push(KeyVariance {
            key: key.clone(),
            weight: w,
            empirical_var: var,
            bound,
            holds: var <= bound * (1.0 + slack),
        });
    }
    let total_bound = total_w * total_w / (k - 1) as f64;
    let tail = v.tail_norm(k, p);
    let kf = k as f64;
    let mut fitted_tail_c: f64 = 0.0;
    let mut fitted_exp_c = f64::INFINITY;
    for r in &per_key {
        if r.empirical_var <= 0.0 || r.weight <= 0.0 {
            continue;
        }
        fitted_tail_c = fitted_tail_c.max(if tail > 0.0 { r.empirical_var * kf / (r.weight * tail) } else { f64::INFINITY });
        if tail > 0.0 && r.empirical_var < r.weight * r.weight {
            let c = -(r.empirical_var / (r.weight * r.weight)).ln() * tail / (kf * r.weight);
            fitted_exp_c = fitted_exp_c.min(c);
        }
    }
    let fitted_sum_c = if total_var <= 0.0 {
        0.0
    } else if tail > 0.0 {
        total_var * kf / (tail * tail)
    } else {
        f64::INFINITY
    };
    let all_hold = per_key.iter().all(|r| r.holds) && total_var <= total_bound * (1.0 + slack);
    Ok(VarianceReport {
        per_key,
        total_var,
        total_bound,
        all_hold,
        tail_norm: tail,
        fitted_tail_c,
        fitted_sum_c,
        fitted_exp_c,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CovarianceReport {
    pub covariance: f64,
    pub standard_error: f64,
    /// `covariance ≤ 3 · standard_error`.
    pub non_positive: bool,
}

/// One-sided check that the estimates of two distinct keys are not positively correlated.
pub fn covariance_sign_check(m: &KeyRunMatrix, x1: &Key, x2: &Key) -> Result<CovarianceReport> {
    if x1 == x2 {
        return Err(Error::Domain("covariance check needs two distinct keys".into()));
    }
    let (a, b) = (m.column(m.index(x1)?), m.column(m.index(x2)?));
    let (ma, _) = mean_var(&a);
    let (mb, _) = mean_var(&b);
    let products: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let (mean_prod, var_prod) = mean_var(&products);
    let r = products.len() as f64;
    let covariance = mean_prod * r / (r - 1.0);
    let standard_error = (var_prod / r).sqrt();
    Ok(CovarianceReport {
        covariance,
        standard_error,
        non_positive: covariance <= 3.0 * standard_error,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BiasRow {
    pub key: Key,
    pub truth: f64,
    pub mean_approx: f64,
    pub mean_exact: f64,
    /// `|mean_approx - truth| / truth`.
    pub bias_ratio: f64,
    pub mse_approx: f64,
    pub var_exact: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BiasReport {
    pub rows: Vec<BiasRow>,
    pub epsilon: f64,
    pub max_bias_ratio: f64,
}

/// Per-key bias and MSE of one-pass estimates against paired exact samples.
pub fn bias_mse_report(
    approx: &[WorSample],
    exact: &[WorSample],
    spec: &StatisticSpec,
    keys: &[Key],
    v: &FrequencyVector,
    epsilon: f64,
) -> Result<BiasReport> {
    if approx.len() != exact.len() || approx.is_empty() {
        return Err(Error::Domain("bias report needs equal, non-empty run lists".into()));
    }
    let est_a = approx
        .iter()
        .map(|s| estimate_statistic(s, spec))
        .collect::<Result<Vec<_>>>()?;
    let est_e = exact
        .iter()
        .map(|s| estimate_statistic(s, spec))
        .collect::<Result<Vec<_>>>()?;
    let ma = KeyRunMatrix::from_estimates(keys.to_vec(), &est_a);
    let me = KeyRunMatrix::from_estimates(keys.to_vec(), &est_e);
    let mut rows = Vec::with_capacity(keys.len());
    for (i, key) in keys.iter().enumerate() {
        let truth = spec.f.eval(v.get(key)) * spec.coefficient(key);
        let a = ma.column(i);
        let (mean_approx, _) = mean_var(&a);
        let (mean_exact, var_exact) = mean_var(&me.column(i));
        let mse_approx = a.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / a.len() as f64;
        rows.push(BiasRow {
            key: key.clone(),
            truth,
            mean_approx,
            mean_exact,
            bias_ratio: (mean_approx - truth).abs() / truth.abs(),
            mse_approx,
            var_exact,
        });
    }
    let max_bias_ratio = rows.iter().map(|r| r.bias_ratio).fold(0.0, f64::max);
    Ok(BiasReport {
        rows,
        epsilon,
        max_bias_ratio,
    })
}

/// Smallest `c` with `|f((1+e)w) - f(w)| ≤ c e f(w)` over `e ∈ (0, eps_max]` and
/// the given positive `w`, evaluated on a grid of `e`.
pub fn smoothness_constant(f: &FreqFn, eps_max: f64, ws: &[f64]) -> f64 {
    let steps = 200;
    let mut c = 0.0f64;
    for &w in ws {
        let fw = f.eval(w);
        if fw <= 0.0 {
            continue;
        }
        for i in 1..=steps {
            let e = eps_max * i as f64 / steps as f64;
            c = c.max((f.eval((1.0 + e) * w) - fw).abs() / (e * fw));
        }
    }
    c
}

/// Per-key estimates averaged over runs, keyed for quick lookup.
pub fn mean_contributions(runs: &[Estimate]) -> HashMap<Key, f64> {
    let mut sums: HashMap<Key, f64> = HashMap::new();
    for e in runs {
        for (k, c) in &e.contributions {
            *sums.entry(k.clone()).or_insert(0.0) += c;
        }
    }
    let r = runs.len() as f64;
    sums.values_mut().for_each(|s| *s /= r);
    sums
}
