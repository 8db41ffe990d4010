use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::rngs::SmallRng;
use rand::SeedableRng;
use rayon::prelude::*;

use worp::bench::{self, gen_zipf, signed_updates, Pipeline, Scenario, REFERENCE_NRMSE};
use worp::calibration::{default_trials, CalibrationCache};
use worp::data::splitmix64;
use worp::estimate::{estimate_statistic, inclusion_prob};
use worp::io::{read_elements, write_elements};
use worp::sampler::{one_pass_sample, two_pass_run};
use worp::tvd::{exact_wor_set_probabilities, make_samplers, total_variation, trial_count_monitor, tvd_sample, SamplerKind, TvdConfig};
use worp::{
    Admission, Calibration, ElementFile, ElementSource, Flavor, FreqFn, FrequencyVector, Key, KeyMap, RDist,
    Result, SketchShape, StatisticSpec, WorSample, WorpConfig,
};

#[derive(Parser)]
#[command(name = "worp", version, about = "Without-replacement lp sampling over data streams")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for outputs given as relative paths, and the calibration cache.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Zipf,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum RDistArg {
    Ppswor,
    Priority,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Oracle,
    Rejection,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Small,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic element file.
    Generate {
        #[arg(long, value_enum, default_value = "zipf")]
        dist: Dist,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Split each (integer-rounded) frequency into this many signed updates.
        #[arg(long)]
        updates: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate Ψ and B by Monte Carlo and write the calibration record.
    Calibrate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a WORp sample from an element file.
    Sample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        passes: u8,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        /// 2: CountSketch (signed values); 1: counters (non-negative values).
        #[arg(long, default_value_t = 2)]
        q: u8,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        epsilon: f64,
        /// Calibration for (n, k+1, q/p); computed and cached when absent.
        #[arg(long)]
        cal: Option<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        #[arg(long, value_enum, default_value = "ppswor")]
        r_dist: RDistArg,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        capacity: Option<usize>,
        /// Override the collection constant B.
        #[arg(long)]
        b: Option<usize>,
        /// Use the half-estimate admission gate in pass 2.
        #[arg(long)]
        half_gate: bool,
        /// Return the extended two-pass sample.
        #[arg(long)]
        extended: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a sum statistic from a sample.
    Estimate {
        #[arg(long)]
        sample: PathBuf,
        /// `sum`, or `p<e>` for Σ|ν|^e.
        #[arg(long, default_value = "sum")]
        stat: String,
        #[arg(long)]
        out: PathBuf,
        /// Per-key CSV of contributions.
        #[arg(long)]
        per_key: Option<PathBuf>,
    },
    /// Run the sampler-orchestration WOR sampler repeatedly and write the
    /// empirical distribution of sampled key sets.
    TvdSample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, value_enum, default_value = "oracle")]
        mode: ModeArg,
        #[arg(long, default_value_t = 10_000)]
        runs: usize,
        /// Use C·k·log2(n) samplers instead of 8k.
        #[arg(long)]
        full_c: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reproduce the NRMSE table and related curves on Zipf inputs.
    Bench {
        #[arg(long, value_enum, default_value = "small")]
        preset: Preset,
        #[arg(long)]
        runs: Option<usize>,
        /// Comma-separated pipelines (perfectWR, perfectWOR, worp1, worp2, tvd).
        #[arg(long)]
        pipelines: Option<String>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        #[arg(long)]
        cal_trials: Option<usize>,
    },
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("worp: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("worp: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let dir = cli.out_dir.clone();
    fs::create_dir_all(&dir)?;
    match cli.cmd {
        Cmd::Generate { dist, alpha, n, scale, updates, out } => {
            let v = match dist {
                Dist::Zipf => gen_zipf(alpha, n, scale),
                Dist::Uniform => bench::gen_uniform(n, scale),
            };
            let elems = match updates {
                Some(parts) => {
                    let rounded: FrequencyVector = v.iter().map(|(k, x)| (k.clone(), x.round())).collect();
                    signed_updates(&rounded, parts.max(1), &mut SmallRng::seed_from_u64(cli.seed))?
                }
                None => v.to_elements(),
            };
            write_elements(resolve(&dir, &out), &elems)?;
        }
        Cmd::Calibrate { n, k, rho, delta, trials, out } => {
            let cal = worp::estimate_psi(n, k, rho, delta, trials.unwrap_or_else(|| default_trials(delta)), cli.seed)?;
            cal.save(resolve(&dir, &out))?;
            println!(
                "psi={} implied_c={} ci=({}, {}) B={}",
                cal.psi, cal.implied_c, cal.implied_c_ci.0, cal.implied_c_ci.1, cal.b
            );
        }
        Cmd::Sample {
            input,
            passes,
            k,
            p,
            q,
            epsilon,
            cal,
            delta,
            r_dist,
            rows,
            width,
            capacity,
            b,
            half_gate,
            extended,
            out,
        } => {
            let src = ElementFile::new(&input);
            let mut keys: HashSet<Key> = HashSet::new();
            src.try_for_each(&mut |e| {
                keys.insert(e.key.clone());
                Ok(())
            })?;
            let mut sorted: Vec<Key> = keys.into_iter().collect();
            sorted.sort();
            let key_map = KeyMap::detect(&sorted);
            let n = match key_map {
                KeyMap::Integer => sorted.len(),
                KeyMap::Hashed { n } => n as usize,
            }
            .max(k + 2);
            let flavor = match q {
                1 => Flavor::Counter,
                2 => Flavor::Projection,
                _ => return Err(worp::Error::Config(format!("q must be 1 or 2, got {q}"))),
            };
            let dist = match r_dist {
                RDistArg::Ppswor => RDist::Exp1,
                RDistArg::Priority => RDist::Uniform01,
            };
            let rho = f64::from(q) / p;
            let cal = match cal {
                Some(path) => Calibration::load(path)?,
                None => CalibrationCache::new(dir.join("calibration")).get_or_compute(
                    n,
                    k + 1,
                    rho,
                    delta,
                    default_trials(delta),
                    cli.seed,
                )?,
            }
            .for_dist(dist);
            let mut cfg = WorpConfig::from_calibration(k, p, flavor, &cal, n as u64, cli.seed)?;
            cfg.epsilon = epsilon;
            cfg.key_map = key_map;
            if let Some(b) = b {
                cfg.b = b;
            }
            cfg.shape = match (rows, width, capacity) {
                (Some(r), Some(w), _) => SketchShape::Projection { rows: r, width: w },
                (None, Some(w), None) => SketchShape::Width { width: w },
                (_, _, Some(c)) => SketchShape::Counters { capacity: c },
                (None, None, None) => SketchShape::Derived,
                _ => return Err(worp::Error::Config("give both --rows and --width".into())),
            };
            if half_gate {
                cfg.admission = Admission::HalfGate;
            }
            let sample = match passes {
                1 => one_pass_sample(&src, &cfg)?,
                2 => {
                    let r = two_pass_run(&src, &cfg)?;
                    if extended {
                        r.extended_sample(&cfg)
                    } else {
                        r.sample(&cfg)
                    }
                }
                _ => return Err(worp::Error::Config(format!("passes must be 1 or 2, got {passes}"))),
            };
            sample.save(resolve(&dir, &out))?;
            println!(
                "{} entries, tau={}, failure={}, underfull={}",
                sample.len(),
                sample.tau,
                sample.failure,
                sample.underfull
            );
        }
        Cmd::Estimate { sample, stat, out, per_key } => {
            let s = WorSample::load(sample)?;
            let spec = StatisticSpec::new(FreqFn::parse(&stat)?);
            let est = estimate_statistic(&s, &spec)?;
            let json = serde_json::json!({
                "statistic": spec.f.label(),
                "value": est.value,
                "mode": s.mode,
                "sample_size": s.len(),
                "tau": s.tau,
                "failure": s.failure,
            });
            fs::write(resolve(&dir, &out), serde_json::to_string_pretty(&json)?)?;
            if let Some(path) = per_key {
                let mut csv = String::from("key,frequency,inclusion_prob,contribution\n");
                for e in &s.entries {
                    let pr = if s.underfull { 1.0 } else { inclusion_prob(e.frequency, s.tau, s.p, s.dist)? };
                    let _ = writeln!(csv, "{},{},{},{}", csv_field(&e.key.to_string()), e.frequency, pr, est.contribution(&e.key));
                }
                fs::write(resolve(&dir, &path), csv)?;
            }
            println!("{}", est.value);
        }
        Cmd::TvdSample { input, k, p, mode, runs, full_c, out } => {
            let elems = read_elements(&input)?;
            let v = FrequencyVector::aggregate(&elems)?;
            let cfg = match full_c {
                Some(c) => TvdConfig::full(k, p, v.len(), c),
                None => TvdConfig::reduced(k, p, v.len()),
            };
            let kind = match mode {
                ModeArg::Oracle => SamplerKind::Oracle,
                ModeArg::Rejection => SamplerKind::Rejection,
            };
            let outcomes = (0..runs)
                .into_par_iter()
                .map(|run| {
                    let mut samplers = make_samplers(kind, &cfg, splitmix64(cli.seed ^ splitmix64(run as u64)));
                    tvd_sample(&elems, &cfg, &mut samplers, &v)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut counts: HashMap<BTreeSet<Key>, usize> = HashMap::new();
            for o in &outcomes {
                if let Some(keys) = &o.keys {
                    *counts.entry(keys.iter().cloned().collect()).or_insert(0) += 1;
                }
            }
            let exact = exact_wor_set_probabilities(&v, p, k).ok().filter(|e| e.len() <= 1_000_000);
            let mut rows: Vec<(String, usize, Option<f64>)> = Vec::new();
            let key_list: Vec<&Key> = v.keys().collect();
            match &exact {
                Some(ex) => {
                    for (idx, pr) in ex {
                        let set: BTreeSet<Key> = idx.iter().map(|&i| key_list[i].clone()).collect();
                        rows.push((join_set(&set), counts.get(&set).copied().unwrap_or(0), Some(*pr)));
                    }
                }
                None => {
                    let mut sets: Vec<_> = counts.iter().collect();
                    sets.sort();
                    rows.extend(sets.into_iter().map(|(s, c)| (join_set(s), *c, None)));
                }
            }
            let ok: usize = counts.values().sum();
            let mut csv = String::from("set,count,empirical,exact\n");
            for (set, c, pr) in rows {
                let emp = if ok > 0 { c as f64 / ok as f64 } else { 0.0 };
                let _ = writeln!(csv, "{},{c},{emp},{}", csv_field(&set), pr.map_or(String::new(), |p| p.to_string()));
            }
            fs::write(resolve(&dir, &out), csv)?;
            let stats = trial_count_monitor(&outcomes, k);
            print!("runs={} failures={} mean_trials={}", stats.runs, stats.failures, stats.mean_trials);
            if let (Some(ex), true) = (&exact, ok > 0) {
                print!(" tv={}", total_variation(&counts, &v, ex));
            }
            println!();
        }
        Cmd::Bench { preset, runs, pipelines, rows, width, delta, cal_trials } => {
            let cache = CalibrationCache::new(dir.join("calibration"));
            for (i, row) in REFERENCE_NRMSE.iter().enumerate() {
                let stats = vec![row.stat()];
                let mut sc = match preset {
                    Preset::Full => Scenario::desk(row.alpha, row.p, stats),
                    Preset::Small => Scenario::small(row.alpha, row.p, stats),
                };
                sc.seed_base = cli.seed;
                if let Some(r) = runs {
                    sc.runs = r;
                }
                if let Some(list) = &pipelines {
                    sc.pipelines = list.split(',').map(|s| Pipeline::parse(s.trim())).collect::<Result<_>>()?;
                }
                match (rows, width) {
                    (Some(r), Some(w)) => sc.shape = SketchShape::Projection { rows: r, width: w },
                    (None, Some(w)) => sc.shape = SketchShape::Width { width: w },
                    _ => {}
                }
                let cal = cache.get_or_compute(
                    sc.n,
                    sc.k + 1,
                    sc.rho(),
                    delta,
                    cal_trials.unwrap_or_else(|| default_trials(delta)),
                    cli.seed,
                )?;
                let res = bench::run_scenario(&sc, &cal)?;
                let prefix = format!("l{}_zipf{}_nu{}_", row.p, row.alpha, row.moment);
                res.write(&dir, &prefix)?;
                println!("row {}: l{} Zipf[{}] nu^{}", i + 1, row.p, row.alpha, row.moment);
                for r in &res.nrmse {
                    let reference = row.value(r.pipeline).map_or(String::new(), |x| format!(" (reference {x:.2e})"));
                    println!("  {:<11} nrmse {:.3e}{reference}", r.pipeline.name(), r.nrmse);
                }
            }
        }
    }
    Ok(())
}

fn join_set(s: &BTreeSet<Key>) -> String {
    s.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
