//! Synthetic inputs, the with-replacement baseline and the end-to-end
//! experiment runner.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::Calibration;
use crate::data::{splitmix64, Element, FreqFn, FrequencyVector, Key, StatisticSpec};
use crate::error::{Error, Result};
use crate::estimate::{estimate_statistic, inclusion_prob, nrmse};
use crate::io::read_elements;
use crate::rhh::Flavor;
use crate::sample::WorSample;
use crate::sampler::{one_pass_sample, third_error_event, two_pass_run, SketchShape, WorpConfig};
use crate::transform::{exact_bottomk_sample, KeyMap};
use crate::tvd::{make_samplers, tvd_sample, SamplerKind, TvdConfig};

/// `ν_i = scale · i^{-α}` for keys `"1".."n"`.
pub fn gen_zipf(alpha: f64, n: usize, scale: f64) -> FrequencyVector {
    FrequencyVector::from_pairs((1..=n as u64).map(|i| (Key::from(i), scale * (i as f64).powf(-alpha))))
}

pub fn gen_uniform(n: usize, value: f64) -> FrequencyVector {
    gen_zipf(0.0, n, value)
}

/// Assigns each element to one of `w` shards uniformly at random.
pub fn shard<G: Rng + ?Sized>(elements: &[Element], w: usize, rng: &mut G) -> Vec<Vec<Element>> {
    let mut out = vec![Vec::new(); w];
    for e in elements {
        out[rng.random_range(0..w)].push(e.clone());
    }
    out
}

/// Rewrites each integral frequency as `parts` signed integer updates with the
/// same sum, in shuffled order.
pub fn signed_updates<G: Rng + ?Sized>(v: &FrequencyVector, parts: usize, rng: &mut G) -> Result<Vec<Element>> {
    let mut out = Vec::new();
    for (key, nu) in v.iter() {
        if nu.fract() != 0.0 || nu.abs() > 1e12 {
            return Err(Error::Domain(format!("frequency {nu} of key {key} is not a small integer")));
        }
        let mut rest = nu as i64;
        for _ in 1..parts {
            let d: i64 = rng.random_range(-1000..=1000);
            out.push(Element::new(key.clone(), d as f64)?);
            rest -= d;
        }
        out.push(Element::new(key.clone(), rest as f64)?);
    }
    for i in (1..out.len()).rev() {
        out.swap(i, rng.random_range(0..=i));
    }
    Ok(out)
}

/// `k` independent draws with `Pr[x] ∝ |ν_x|^p`.
#[derive(Clone, Debug, PartialEq)]
pub struct WrSample {
    pub draws: Vec<Key>,
    /// Number of distinct keys drawn.
    pub effective_size: usize,
    /// `Pr[x]` of each drawn key.
    pub probs: BTreeMap<Key, f64>,
}

pub fn perfect_wr_sample<G: Rng + ?Sized>(v: &FrequencyVector, k: usize, p: f64, rng: &mut G) -> Result<WrSample> {
    let keys: Vec<&Key> = v.keys().collect();
    let mut cum = Vec::with_capacity(keys.len());
    let mut total = 0.0;
    for (_, x) in v.iter() {
        total += x.abs().powf(p);
        cum.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateInput("zero frequency vector".into()));
    }
    let mut draws = Vec::with_capacity(k);
    let mut probs = BTreeMap::new();
    for _ in 0..k {
        let u = rng.random::<f64>() * total;
        let i = cum.partition_point(|c| *c <= u).min(keys.len() - 1);
        let key = keys[i].clone();
        probs.insert(key.clone(), v.get(&key).abs().powf(p) / total);
        draws.push(key);
    }
    let effective_size = draws.iter().collect::<BTreeSet<_>>().len();
    Ok(WrSample {
        draws,
        effective_size,
        probs,
    })
}

/// Inverse-probability estimate over the distinct keys drawn:
/// `Σ_x f(ν_x) L_x / (1 - (1 - Pr[x])^k)`.
pub fn wr_estimate(s: &WrSample, v: &FrequencyVector, spec: &StatisticSpec) -> f64 {
    let k = s.draws.len() as i32;
    s.probs
        .iter()
        .map(|(x, pr)| spec.f.eval(v.get(x)) * spec.coefficient(x) / wr_inclusion(*pr, k))
        .sum()
}

/// Probability that a key with per-draw probability `pr` appears in `k` draws.
pub fn wr_inclusion(pr: f64, k: i32) -> f64 {
    -((-pr).ln_1p() * f64::from(k)).exp_m1()
}

/// Hansen–Hurwitz estimate `(1/k) Σ_draws f(ν_x) L_x / Pr[x]`.
pub fn wr_estimate_hh(s: &WrSample, v: &FrequencyVector, spec: &StatisticSpec) -> f64 {
    let k = s.draws.len() as f64;
    s.draws
        .iter()
        .map(|x| spec.f.eval(v.get(x)) * spec.coefficient(x) / s.probs[x])
        .sum::<f64>()
        / k
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    PerfectWr,
    PerfectWor,
    Worp1,
    Worp2,
    Tvd,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::PerfectWr => "perfectWR",
            Pipeline::PerfectWor => "perfectWOR",
            Pipeline::Worp1 => "worp1",
            Pipeline::Worp2 => "worp2",
            Pipeline::Tvd => "tvd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "perfectwr" | "wr" => Ok(Pipeline::PerfectWr),
            "perfectwor" | "wor" => Ok(Pipeline::PerfectWor),
            "worp1" | "1pass" => Ok(Pipeline::Worp1),
            "worp2" | "2pass" => Ok(Pipeline::Worp2),
            "tvd" => Ok(Pipeline::Tvd),
            _ => Err(Error::Config(format!("unknown pipeline {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSpec {
    Zipf { alpha: f64 },
    Uniform,
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub input: InputSpec,
    pub n: usize,
    pub k: usize,
    pub p: f64,
    pub flavor: Flavor,
    pub epsilon: f64,
    pub runs: usize,
    pub seed_base: u64,
    pub pipelines: Vec<Pipeline>,
    pub stats: Vec<FreqFn>,
    pub shape: SketchShape,
}

impl Scenario {
    /// `n = 10^4`, `k = 100`, 100 runs, CountSketch of width `31k`.
    pub fn desk(alpha: f64, p: f64, stats: Vec<FreqFn>) -> Self {
        Scenario {
            input: InputSpec::Zipf { alpha },
            n: 10_000,
            k: 100,
            p,
            flavor: Flavor::Projection,
            epsilon: 1.0 / 3.0,
            runs: 100,
            seed_base: 1,
            pipelines: vec![Pipeline::PerfectWr, Pipeline::PerfectWor, Pipeline::Worp1, Pipeline::Worp2],
            stats,
            shape: SketchShape::Width { width: 3100 },
        }
    }

    /// `n = 10^3`, `k = 30`, 50 runs.
    pub fn small(alpha: f64, p: f64, stats: Vec<FreqFn>) -> Self {
        Scenario {
            n: 1000,
            k: 30,
            runs: 50,
            shape: SketchShape::Width { width: 930 },
            ..Scenario::desk(alpha, p, stats)
        }
    }

    pub fn rho(&self) -> f64 {
        f64::from(self.flavor.q()) / self.p
    }

    pub fn frequencies(&self) -> Result<FrequencyVector> {
        match &self.input {
            InputSpec::Zipf { alpha } => Ok(gen_zipf(*alpha, self.n, 1.0)),
            InputSpec::Uniform => Ok(gen_uniform(self.n, 1.0)),
            InputSpec::File(path) => FrequencyVector::aggregate(&read_elements(path)?),
        }
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        splitmix64(self.seed_base.wrapping_add(run as u64))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NrmseRow {
    pub pipeline: Pipeline,
    pub statistic: String,
    pub truth: f64,
    pub nrmse: f64,
    pub runs: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunEvents {
    pub run: usize,
    pub worp2_matches_oracle: Option<bool>,
    pub third_error_event: Option<bool>,
    pub worp2_failure: Option<bool>,
    pub worp1_failure: Option<bool>,
    pub worp1_overlap: Option<usize>,
    pub tvd_trials: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ScenarioResult {
    pub nrmse: Vec<NrmseRow>,
    /// `estimates[(pipeline, statistic)][run]`.
    #[serde(skip)]
    pub estimates: BTreeMap<(Pipeline, String), Vec<f64>>,
    pub effective_size: Vec<(Pipeline, usize, usize)>,
    /// `(pipeline, estimated rank, frequency)` for run 0; `None` is the truth.
    pub rank_frequency: Vec<(Option<Pipeline>, f64, f64)>,
    pub events: Vec<RunEvents>,
    pub sketch_words: usize,
    /// Wall-clock seconds per pipeline, summed over runs. Not part of the CSVs.
    pub timing: BTreeMap<Pipeline, f64>,
}

struct RunOutput {
    samples: BTreeMap<Pipeline, Option<RunSample>>,
    events: RunEvents,
    timing: BTreeMap<Pipeline, f64>,
}

enum RunSample {
    Wor(WorSample),
    Wr(WrSample),
    Keys(Vec<Key>),
}

fn worp_config(sc: &Scenario, cal: &Calibration, seed: u64, key_map: KeyMap) -> WorpConfig {
    let mut cfg = WorpConfig::new(sc.k, sc.p, sc.flavor, cal.psi, cal.b, cal.n as u64, seed);
    cfg.delta = cal.delta;
    cfg.epsilon = sc.epsilon;
    cfg.shape = sc.shape;
    cfg.key_map = key_map;
    cfg
}

fn run_once(sc: &Scenario, cal: &Calibration, v: &FrequencyVector, elems: &[Element], key_map: KeyMap, run: usize) -> Result<RunOutput> {
    let seed = sc.run_seed(run);
    let cfg = worp_config(sc, cal, seed, key_map);
    let tcfg = cfg.transform();
    let mut samples = BTreeMap::new();
    let mut timing = BTreeMap::new();
    let mut events = RunEvents {
        run,
        worp2_matches_oracle: None,
        third_error_event: None,
        worp2_failure: None,
        worp1_failure: None,
        worp1_overlap: None,
        tvd_trials: None,
    };
    let oracle = exact_bottomk_sample(v, sc.k, &tcfg).ok();
    for &pl in &sc.pipelines {
        let t0 = Instant::now();
        let s = match pl {
            Pipeline::PerfectWr => {
                let mut rng = SmallRng::seed_from_u64(splitmix64(seed ^ 0x77));
                Some(RunSample::Wr(perfect_wr_sample(v, sc.k, sc.p, &mut rng)?))
            }
            Pipeline::PerfectWor => oracle.clone().map(RunSample::Wor),
            Pipeline::Worp2 => {
                let r = two_pass_run(elems, &cfg)?;
                let s = r.sample(&cfg);
                events.worp2_failure = Some(s.failure);
                events.third_error_event = Some(third_error_event(&r.sketch, v, &cfg)?);
                events.worp2_matches_oracle = oracle.as_ref().map(|o| o.keys() == s.keys());
                Some(RunSample::Wor(s))
            }
            Pipeline::Worp1 => {
                let s = one_pass_sample(elems, &cfg)?;
                events.worp1_failure = Some(s.failure);
                events.worp1_overlap = oracle.as_ref().map(|o| o.keys().intersection(&s.keys()).count());
                Some(RunSample::Wor(s))
            }
            Pipeline::Tvd => {
                let tc = TvdConfig::reduced(sc.k, sc.p, v.len());
                let mut samplers = make_samplers(SamplerKind::Oracle, &tc, seed);
                let out = tvd_sample(elems, &tc, &mut samplers, v)?;
                events.tvd_trials = Some(out.trials);
                out.keys.map(RunSample::Keys)
            }
        };
        *timing.entry(pl).or_insert(0.0) += t0.elapsed().as_secs_f64();
        samples.insert(pl, s);
    }
    Ok(RunOutput {
        samples,
        events,
        timing,
    })
}

/// Estimated rank of each sampled key: the summed inverse inclusion
/// probabilities of sampled keys with frequency at least as large.
fn rank_curve(points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let mut pts = points;
    pts.sort_by(|a, b| b.0.abs().total_cmp(&a.0.abs()));
    let mut acc = 0.0;
    pts.into_iter()
        .map(|(freq, inv)| {
            acc += inv;
            (acc, freq)
        })
        .collect()
}

pub fn run_scenario(sc: &Scenario, cal: &Calibration) -> Result<ScenarioResult> {
    if sc.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let v = sc.frequencies()?;
    let elems = v.to_elements();
    let key_map = KeyMap::detect(v.keys());
    let outs = (0..sc.runs)
        .into_par_iter()
        .map(|run| run_once(sc, cal, &v, &elems, key_map, run))
        .collect::<Result<Vec<_>>>()?;

    let mut res = ScenarioResult {
        sketch_words: {
            let cfg = worp_config(sc, cal, 0, key_map);
            crate::rhh::RhhSketch::init(cfg.two_pass_rhh())?.size_words()
        },
        ..Default::default()
    };
    for (run, out) in outs.iter().enumerate() {
        for (&pl, s) in &out.samples {
            let size = match s {
                Some(RunSample::Wr(w)) => w.effective_size,
                Some(RunSample::Wor(w)) => w.len(),
                Some(RunSample::Keys(k)) => k.len(),
                None => 0,
            };
            res.effective_size.push((pl, run, size));
        }
        for (pl, t) in &out.timing {
            *res.timing.entry(*pl).or_insert(0.0) += t;
        }
        res.events.push(out.events.clone());
    }

    for f in &sc.stats {
        let spec = StatisticSpec::new(f.clone());
        let truth = spec.exact(&v);
        for &pl in &sc.pipelines {
            if pl == Pipeline::Tvd {
                continue;
            }
            let mut ests = Vec::with_capacity(sc.runs);
            let mut failures = 0;
            for out in &outs {
                match &out.samples[&pl] {
                    Some(RunSample::Wor(s)) => {
                        failures += usize::from(s.failure);
                        ests.push(estimate_statistic(s, &spec)?.value);
                    }
                    Some(RunSample::Wr(s)) => ests.push(wr_estimate(s, &v, &spec)),
                    _ => failures += 1,
                }
            }
            res.nrmse.push(NrmseRow {
                pipeline: pl,
                statistic: f.label(),
                truth,
                nrmse: nrmse(&ests, truth),
                runs: ests.len(),
                failures,
            });
            res.estimates.insert((pl, f.label()), ests);
        }
    }

    let top = v.top_k_order(v.len());
    for (i, key) in top.iter().enumerate() {
        res.rank_frequency.push((None, (i + 1) as f64, v.get(key)));
    }
    if let Some(first) = outs.first() {
        for (&pl, s) in &first.samples {
            let pts: Vec<(f64, f64)> = match s {
                Some(RunSample::Wor(w)) => w
                    .entries
                    .iter()
                    .map(|e| {
                        let pr = if w.underfull { Ok(1.0) } else { inclusion_prob(e.frequency, w.tau, w.p, w.dist) };
                        pr.map(|pr| (e.frequency, 1.0 / pr))
                    })
                    .collect::<Result<_>>()?,
                Some(RunSample::Wr(w)) => w
                    .probs
                    .iter()
                    .map(|(key, pr)| (v.get(key), 1.0 / wr_inclusion(*pr, sc.k as i32)))
                    .collect(),
                _ => continue,
            };
            for (rank, freq) in rank_curve(pts) {
                res.rank_frequency.push((Some(pl), rank, freq));
            }
        }
    }
    Ok(res)
}

impl ScenarioResult {
    pub fn nrmse_of(&self, pl: Pipeline, stat: &str) -> Option<f64> {
        self.nrmse
            .iter()
            .find(|r| r.pipeline == pl && r.statistic == stat)
            .map(|r| r.nrmse)
    }

    pub fn nrmse_csv(&self) -> String {
        let mut s = String::from("pipeline,statistic,truth,nrmse,runs,failures\n");
        for r in &self.nrmse {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.pipeline.name(), r.statistic, r.truth, r.nrmse, r.runs, r.failures);
        }
        s
    }

    pub fn effective_size_csv(&self) -> String {
        let mut s = String::from("pipeline,run,effective_size\n");
        for (pl, run, size) in &self.effective_size {
            let _ = writeln!(s, "{},{run},{size}", pl.name());
        }
        s
    }

    pub fn rank_frequency_csv(&self) -> String {
        let mut s = String::from("pipeline,rank,frequency\n");
        for (pl, rank, freq) in &self.rank_frequency {
            let _ = writeln!(s, "{},{rank},{freq}", pl.map_or("truth", |p| p.name()));
        }
        s
    }

    pub fn events_csv(&self) -> String {
        fn o<T: ToString>(x: &Option<T>) -> String {
            x.as_ref().map_or(String::new(), |v| v.to_string())
        }
        let mut s = String::from(
            "run,worp2_matches_oracle,third_error_event,worp2_failure,worp1_failure,worp1_overlap,tvd_trials\n",
        );
        for e in &self.events {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                e.run,
                o(&e.worp2_matches_oracle),
                o(&e.third_error_event),
                o(&e.worp2_failure),
                o(&e.worp1_failure),
                o(&e.worp1_overlap),
                o(&e.tvd_trials)
            );
        }
        s
    }

    /// Writes the deterministic CSVs and a separate `timing.json`.
    pub fn write(&self, dir: &Path, prefix: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{prefix}nrmse.csv")), self.nrmse_csv())?;
        fs::write(dir.join(format!("{prefix}effective_size.csv")), self.effective_size_csv())?;
        fs::write(dir.join(format!("{prefix}rank_frequency.csv")), self.rank_frequency_csv())?;
        fs::write(dir.join(format!("{prefix}events.csv")), self.events_csv())?;
        let timing = serde_json::json!({
            "seconds": self.timing.iter().map(|(k, v)| (k.name(), *v)).collect::<BTreeMap<_, _>>(),
            "sketch_words": self.sketch_words,
        });
        fs::write(dir.join(format!("{prefix}timing.json")), serde_json::to_string_pretty(&timing)?)?;
        Ok(())
    }
}

/// A reference NRMSE row: `ℓp` sampling of a Zipf input, statistic `Σ ν^moment`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceRow {
    pub p: f64,
    pub alpha: f64,
    pub moment: f64,
    pub perfect_wr: f64,
    pub perfect_wor: f64,
    pub worp1: f64,
    pub worp2: f64,
}

/// Reference NRMSE values at `n = 10^4`, `k = 100`, 100 runs.
pub const REFERENCE_NRMSE: [ReferenceRow; 5] = [
    ReferenceRow { p: 2.0, alpha: 2.0, moment: 3.0, perfect_wr: 1.16e-04, perfect_wor: 2.09e-11, worp1: 1.06e-03, worp2: 2.08e-11 },
    ReferenceRow { p: 2.0, alpha: 2.0, moment: 2.0, perfect_wr: 7.96e-05, perfect_wor: 1.26e-07, worp1: 1.14e-02, worp2: 1.25e-07 },
    ReferenceRow { p: 1.0, alpha: 2.0, moment: 1.0, perfect_wr: 9.51e-03, perfect_wor: 1.60e-03, worp1: 2.79e-02, worp2: 1.60e-03 },
    ReferenceRow { p: 1.0, alpha: 1.0, moment: 3.0, perfect_wr: 3.59e-01, perfect_wor: 5.73e-03, worp1: 5.14e-03, worp2: 5.72e-03 },
    ReferenceRow { p: 1.0, alpha: 2.0, moment: 3.0, perfect_wr: 3.45e-04, perfect_wor: 7.34e-10, worp1: 5.11e-05, worp2: 7.38e-10 },
];

impl ReferenceRow {
    pub fn stat(&self) -> FreqFn {
        FreqFn::Power(self.moment)
    }

    pub fn value(&self, pl: Pipeline) -> Option<f64> {
        match pl {
            Pipeline::PerfectWr => Some(self.perfect_wr),
            Pipeline::PerfectWor => Some(self.perfect_wor),
            Pipeline::Worp1 => Some(self.worp1),
            Pipeline::Worp2 => Some(self.worp2),
            Pipeline::Tvd => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zipf_examples() {
        let u = gen_zipf(0.0, 5, 2.0);
        assert!(u.iter().all(|(_, x)| x == 2.0));
        let z = gen_zipf(1.0, 3, 1.0);
        assert_eq!(z.get(&Key::from(2u64)), 0.5);
        assert!((z.get(&Key::from(3u64)) - 1.0 / 3.0).abs() < 1e-15);
        let h: f64 = (1..=10_000).rev().map(|i| 1.0 / i as f64).sum();
        assert!((gen_zipf(1.0, 10_000, 1.0).norm_pow(1.0) - h).abs() < 1e-10);
        assert!((h - 9.7876).abs() < 1e-4);
    }

    #[test]
    fn wr_single_key() {
        let v = FrequencyVector::from_pairs([("x", 3.0)]);
        let mut rng = SmallRng::seed_from_u64(0);
        let s = perfect_wr_sample(&v, 50, 2.0, &mut rng).unwrap();
        assert_eq!(s.effective_size, 1);
        let spec = StatisticSpec::new(FreqFn::Power(2.0));
        assert_eq!(wr_estimate(&s, &v, &spec), 9.0);
        assert_eq!(wr_estimate_hh(&s, &v, &spec), 9.0);
    }

    #[test]
    fn signed_updates_preserve_sums() {
        let v = FrequencyVector::from_pairs([("a", 7.0), ("b", -3.0)]);
        let mut rng = SmallRng::seed_from_u64(1);
        let s = signed_updates(&v, 5, &mut rng).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(FrequencyVector::aggregate_exact(&s).unwrap(), v);
    }

    #[test]
    fn pipeline_names_parse() {
        for pl in [Pipeline::PerfectWr, Pipeline::PerfectWor, Pipeline::Worp1, Pipeline::Worp2, Pipeline::Tvd] {
            assert_eq!(Pipeline::parse(pl.name()).unwrap(), pl);
        }
    }
}
