use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::rngs::SmallRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Gamma};

use worp::bench::{gen_zipf, run_scenario, shard, signed_updates, Pipeline, Scenario, REFERENCE_NRMSE};
use worp::calibration::{default_trials, empirical_domination_check, erlang_tail, TailSide};
use worp::data::splitmix64;
use worp::estimate::{bias_mse_report, KeyRunMatrix};
use worp::sampler::{third_error_event, two_pass_run, two_pass_sharded};
use worp::tvd::{exact_wor_set_probabilities, make_samplers, total_variation, tvd_sample, SamplerKind, TvdConfig};
use worp::{
    estimate_psi, estimate_statistic, exact_bottomk_sample, one_pass_sample, Calibration, Flavor, FreqFn,
    FrequencyVector, Key, RhhConfig, RhhSketch, SampleMode, SketchShape, StatisticSpec, TransformConfig, WorpConfig,
};

const DELTA: f64 = 0.01;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let mut err = std::io::stderr().lock();
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(err, "{verdict} criterion {n:>2} ({name}) [{:.1}s] {detail}", elapsed.as_secs_f64());
}

fn note(line: &str) {
    let _ = writeln!(std::io::stderr().lock(), "    {line}");
}

fn calibration(n: usize, k: usize, rho: f64) -> Calibration {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize, u64), Calibration>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (n, k, rho.to_bits());
    if let Some(c) = cache.lock().unwrap().get(&key) {
        return c.clone();
    }
    let c = estimate_psi(n, k, rho, DELTA, default_trials(DELTA), 20_240_601).unwrap();
    cache.lock().unwrap().insert(key, c.clone());
    c
}

fn desk_cfg(k: usize, p: f64, cal: &Calibration, n: usize, seed: u64) -> WorpConfig {
    let mut cfg = WorpConfig::from_calibration(k, p, Flavor::Projection, cal, n as u64, seed).unwrap();
    cfg.shape = SketchShape::Width { width: 31 * k };
    cfg
}

#[test]
fn criterion_01_calibration_constants() {
    let _g = serial();
    let t0 = Instant::now();
    let mut pass = true;
    for rho in [1.0, 2.0] {
        for (k, limit, strict) in [(10usize, 2.0, true), (100, 1.4, false), (1000, 1.1, false)] {
            let c = estimate_psi(10_000, k, rho, DELTA, 100_000, 7).unwrap();
            let upper = c.implied_c_ci.1;
            let ok = if strict { upper < limit } else { upper <= limit };
            pass &= ok;
            note(&format!(
                "rho={rho} k={k}: psi={:.4} impliedC={:.4} CI upper {:.4} vs {limit} {}",
                c.psi,
                c.implied_c,
                upper,
                if ok { "ok" } else { "exceeds" }
            ));
        }
    }
    let elapsed = t0.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    report(1, "calibration constants", pass, elapsed, "");
    assert!(pass);
}

#[test]
fn criterion_02_rhh_contract() {
    let _g = serial();
    let t0 = Instant::now();
    let (n, k, psi, seeds) = (10_000usize, 100usize, 0.25, 200u64);
    let limit = DELTA + 2.0 * (DELTA / seeds as f64).sqrt();
    let mut pass = true;
    for flavor in [Flavor::Projection, Flavor::Counter] {
        let q = f64::from(flavor.q());
        for alpha in [1.0, 2.0] {
            let v = gen_zipf(alpha, n, 1.0);
            let mut violations = 0;
            for seed in 0..seeds {
                let t = TransformConfig::new(1.0, splitmix64(seed));
                let star = t.transform_vector(&v);
                let cfg = RhhConfig::new(flavor, k, psi, DELTA, n as u64, splitmix64(seed ^ 0xabc));
                let mut s = RhhSketch::init(cfg).unwrap();
                for (key, x) in star.iter() {
                    s.process(key.as_u64().unwrap(), x).unwrap();
                }
                let worst = star
                    .iter()
                    .map(|(key, x)| (s.est(key.as_u64().unwrap()) - x).abs())
                    .fold(0.0, f64::max);
                let bound = psi / k as f64 * star.tail_norm(k, q);
                violations += usize::from(worst.powf(q) > bound);
            }
            let rate = violations as f64 / seeds as f64;
            pass &= rate <= limit;
            note(&format!("{flavor:?} Zipf[{alpha}]: violation rate {rate} (limit {limit:.4})"));
        }
    }
    report(2, "rHH contract", pass, t0.elapsed(), "");
    assert!(pass);
}

#[test]
fn criterion_03_two_pass_exactness() {
    let _g = serial();
    let (n, k) = (10_000usize, 100usize);
    let cals: Vec<(f64, Calibration)> = [1.0, 2.0].iter().map(|&p| (p, calibration(n, k + 1, 2.0 / p))).collect();
    let t0 = Instant::now();
    let v = gen_zipf(2.0, n, 1.0);
    let elems = v.to_elements();
    let mut pass = true;
    for (p, cal) in &cals {
        let (mut matches, mut events, mut event_mismatch) = (0, 0, 0);
        for run in 0..100u64 {
            let cfg = desk_cfg(k, *p, cal, n, splitmix64(run + 1));
            let r = two_pass_run(&elems, &cfg).unwrap();
            let got = r.sample(&cfg);
            let want = exact_bottomk_sample(&v, k, &cfg.transform()).unwrap();
            let same_set = got.keys() == want.keys();
            matches += usize::from(same_set);
            if third_error_event(&r.sketch, &v, &cfg).unwrap() {
                events += 1;
                let exact = same_set && got.tau == want.tau && got.entries == want.entries;
                event_mismatch += usize::from(!exact);
            }
        }
        pass &= matches >= 99 && event_mismatch == 0;
        note(&format!(
            "p={p} B={}: oracle match {matches}/100, error event {events}/100, mismatches under event {event_mismatch}",
            cal.b
        ));
    }
    let elapsed = t0.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    report(3, "two-pass exactness", pass, elapsed, "");
    assert!(pass);
}

#[test]
fn criterion_04_estimator_unbiasedness() {
    let _g = serial();
    let (n, k, p, runs) = (1000usize, 50usize, 1.0, 1000u64);
    let cal = calibration(n, k + 1, 2.0 / p);
    let t0 = Instant::now();
    let v = gen_zipf(1.0, n, 1.0);
    let elems = v.to_elements();
    let spec = StatisticSpec::new(FreqFn::Identity);
    let truth = spec.exact(&v);
    let mut ests = Vec::with_capacity(runs as usize);
    let mut modes_ok = true;
    for run in 0..runs {
        let cfg = WorpConfig::from_calibration(k, p, Flavor::Projection, &cal, n as u64, splitmix64(run + 1)).unwrap();
        let s = two_pass_run(&elems, &cfg).unwrap().sample(&cfg);
        modes_ok &= s.mode == SampleMode::Exact2Pass && !s.failure;
        ests.push(estimate_statistic(&s, &spec).unwrap());
    }
    let values: Vec<f64> = ests.iter().map(|e| e.value).collect();
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let se = (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0) / r).sqrt();
    let unbiased = (mean - truth).abs() <= 3.0 * se;
    note(&format!("mean {mean:.6} truth {truth:.6} SE {se:.6}"));

    // per-key Var ≤ w_x ‖w‖₁/(k-1), each with 3 standard errors of the sample variance
    let keys: Vec<Key> = v.keys().cloned().collect();
    let m = KeyRunMatrix::from_estimates(keys.clone(), &ests);
    let total_w = v.norm_pow(p);
    let mut var_fail = 0;
    for (i, key) in keys.iter().enumerate() {
        let col = m.column(i);
        let mu = col.iter().sum::<f64>() / r;
        let var = col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (r - 1.0);
        let m4 = col.iter().map(|x| (x - mu).powi(4)).sum::<f64>() / r;
        let se_var = ((m4 - var * var).max(0.0) / r).sqrt();
        let bound = v.get(key).abs().powf(p) * total_w / (k - 1) as f64;
        var_fail += usize::from(var > bound + 3.0 * se_var);
    }
    note(&format!("per-key variance bound violations: {var_fail}/{}", keys.len()));
    let pass = unbiased && modes_ok && var_fail == 0;
    report(4, "estimator unbiasedness", pass, t0.elapsed(), "");
    assert!(pass);
}

#[test]
fn criterion_05_nrmse_table() {
    let _g = serial();
    let cals: Vec<Calibration> = REFERENCE_NRMSE.iter().map(|row| calibration(10_000, 101, 2.0 / row.p)).collect();
    let t0 = Instant::now();
    let pipelines = [Pipeline::PerfectWr, Pipeline::PerfectWor, Pipeline::Worp1, Pipeline::Worp2];
    let mut pass = true;
    for (row, cal) in REFERENCE_NRMSE.iter().zip(&cals) {
        let sc = Scenario::desk(row.alpha, row.p, vec![row.stat()]);
        let res = run_scenario(&sc, cal).unwrap();
        let label = row.stat().label();
        let mut line = format!("l{} Zipf[{}] nu^{}:", row.p, row.alpha, row.moment);
        for pl in pipelines {
            let got = res.nrmse_of(pl, &label).unwrap();
            let want = row.value(pl).unwrap();
            let ratio = got / want;
            let ok = (0.2..=5.0).contains(&ratio);
            pass &= ok;
            line.push_str(&format!(" {}={got:.3e} (ref {want:.2e}, x{ratio:.2}{})", pl.name(), if ok { "" } else { " out" }));
        }
        let wor = res.nrmse_of(Pipeline::PerfectWor, &label).unwrap();
        let wr = res.nrmse_of(Pipeline::PerfectWr, &label).unwrap();
        pass &= wor < wr;
        if wor >= wr {
            line.push_str(" WOR not below WR");
        }
        note(&line);
    }
    let elapsed = t0.elapsed();
    pass &= elapsed < Duration::from_secs(900);
    report(5, "NRMSE table", pass, elapsed, "");
    assert!(pass);
}

#[test]
fn criterion_06_one_pass_quality() {
    let _g = serial();
    let (n, k, p, runs) = (10_000usize, 100usize, 1.0, 200u64);
    let eps = 1.0 / 3.0;
    let cal = calibration(n, k + 1, 2.0 / p);
    let t0 = Instant::now();
    let v = gen_zipf(2.0, n, 1.0);
    let elems = v.to_elements();
    let (mut approx, mut exact) = (Vec::new(), Vec::new());
    for run in 0..runs {
        let mut cfg = WorpConfig::from_calibration(k, p, Flavor::Projection, &cal, n as u64, splitmix64(run + 1)).unwrap();
        cfg.epsilon = eps;
        approx.push(one_pass_sample(&elems, &cfg).unwrap());
        exact.push(exact_bottomk_sample(&v, k, &cfg.transform()).unwrap());
    }
    let keys = v.top_k_order(10);
    let f = FreqFn::Power(2.0);
    let rep = bias_mse_report(&approx, &exact, &StatisticSpec::new(f.clone()), &keys, &v, eps).unwrap();
    let bias_ok = rep.max_bias_ratio <= 1.5 * eps;
    let mse_ok = rep.rows.iter().all(|r| r.mse_approx <= 2.0 * r.var_exact + f.eval(v.get(&r.key)).powi(2));
    note(&format!("max bias ratio {:.3e} (limit {:.3})", rep.max_bias_ratio, 1.5 * eps));
    for r in rep.rows.iter().take(3) {
        note(&format!("key {}: mse {:.3e} var_exact {:.3e} f^2 {:.3e}", r.key, r.mse_approx, r.var_exact, r.truth * r.truth));
    }
    let pass = bias_ok && mse_ok;
    report(6, "one-pass quality", pass, t0.elapsed(), "");
    assert!(pass);
}

#[test]
fn criterion_07_tvd_sampler() {
    let _g = serial();
    let t0 = Instant::now();
    let (n, k, runs) = (20usize, 5usize, 100_000usize);
    let v = gen_zipf(2.0, n, 1.0);
    let elems = v.to_elements();
    let mut pass = true;
    for p in [1.0, 2.0] {
        let exact = exact_wor_set_probabilities(&v, p, k).unwrap();
        let cfg = TvdConfig::reduced(k, p, n);
        let mut counts: HashMap<BTreeSet<Key>, usize> = HashMap::new();
        let mut failures = 0;
        for run in 0..runs {
            let mut samplers = make_samplers(SamplerKind::Oracle, &cfg, splitmix64(run as u64 ^ p.to_bits()));
            match tvd_sample(&elems, &cfg, &mut samplers, &v).unwrap().keys {
                Some(ks) => *counts.entry(ks.into_iter().collect()).or_insert(0) += 1,
                None => failures += 1,
            }
        }
        let tv = total_variation(&counts, &v, &exact);
        pass &= tv <= 0.05;
        note(&format!("p={p}: {} sets enumerated, TV {tv:.4}, FAIL outcomes {failures}", exact.len()));
    }
    let elapsed = t0.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    report(7, "TVD sampler", pass, elapsed, "");
    assert!(pass);
}

#[test]
fn criterion_08_domination() {
    let _g = serial();
    let t0 = Instant::now();
    let (n, k) = (1000u64, 10u64);
    let families = [
        ("uniform", FrequencyVector::from_pairs((1..=n).map(|i| (i, 1.0)))),
        ("single-heavy", FrequencyVector::from_pairs((1..=n).map(|i| (i, if i == 1 { 1000.0 } else { 1.0 })))),
        ("k-equal-heavy", FrequencyVector::from_pairs((1..=n).map(|i| (i, if i <= k { 1000.0 } else { 1.0 })))),
    ];
    let mut pass = true;
    for (name, v) in &families {
        let rep = empirical_domination_check(v, 1.0, 2.0, k as usize, 100_000, 3).unwrap();
        pass &= rep.max_violation < 0.02;
        note(&format!("{name}: max violation {:.4}, max gap {:.4}", rep.max_violation, rep.max_gap));
    }
    report(8, "domination", pass, t0.elapsed(), "");
    assert!(pass);
}

#[test]
fn criterion_09_composability() {
    let _g = serial();
    let (n, k) = (10_000usize, 100usize);
    let cal = calibration(n, k + 1, 2.0);
    let t0 = Instant::now();
    let v = gen_zipf(1.0, n, 10_000.0);
    let v: FrequencyVector = v.iter().map(|(key, x)| (key.clone(), x.round())).collect();
    let (mut state_eq, mut set_eq) = (0, 0);
    for run in 0..100u64 {
        let mut rng = SmallRng::seed_from_u64(run);
        let elems = signed_updates(&v, 3, &mut rng).unwrap();
        let shards = shard(&elems, 8, &mut rng);
        let cfg = desk_cfg(k, 1.0, &cal, n, splitmix64(run + 1));
        let single = two_pass_run(&elems, &cfg).unwrap();
        let multi = two_pass_sharded(&shards, &cfg).unwrap();
        state_eq += usize::from(single.sketch.to_bytes() == multi.sketch.to_bytes());
        set_eq += usize::from(single.sample(&cfg).keys() == multi.sample(&cfg).keys());
    }
    note(&format!("bit-exact sketch state {state_eq}/100, equal sample sets {set_eq}/100"));
    let pass = state_eq == 100 && set_eq == 100;
    report(9, "composability", pass, t0.elapsed(), "");
    assert!(pass);
}

#[test]
fn criterion_10_erlang_bounds() {
    let _g = serial();
    let t0 = Instant::now();
    let draws = 1_000_000;
    let mut pass = true;
    for l in [10u32, 100] {
        let gamma = Gamma::new(f64::from(l), 1.0).unwrap();
        let mut rng = SmallRng::seed_from_u64(u64::from(l));
        let xs: Vec<f64> = (0..draws).map(|_| gamma.sample(&mut rng)).collect();
        for eps in [0.1, 0.5, 2.0, 3.2] {
            let cut = eps * f64::from(l);
            let (side, hits) = if eps < 1.0 {
                (TailSide::Lower, xs.iter().filter(|x| **x <= cut).count())
            } else {
                (TailSide::Upper, xs.iter().filter(|x| **x >= cut).count())
            };
            let freq = hits as f64 / draws as f64;
            let bound = erlang_tail(l, eps, side).unwrap();
            pass &= bound >= freq;
            note(&format!("l={l} eps={eps}: MC {freq:.3e}, bound {bound:.3e}"));
        }
    }
    report(10, "Erlang bounds", pass, t0.elapsed(), "");
    assert!(pass);
}
