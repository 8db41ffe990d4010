//! The p-ppswor (and p-priority) transform.
//!
//! Each element `(x, v)` becomes `(h(x), v / r_x^{1/p})` where `r_x` is drawn
//! from the job seed. Aggregating the output stream gives the transformed
//! frequencies `ν*_x = ν_x / r_x^{1/p}`, whose top-k keys form a bottom-k sample.

use serde::{Deserialize, Serialize};

use crate::data::{draw_r, Element, FrequencyVector, Key, RDist, SeedRand};
use crate::error::{Error, Result};
use crate::sample::{SampleEntry, SampleMode, WorSample};

/// How input keys map to the sketch domain `[n]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum KeyMap {
    /// Keys are decimal integers used as-is.
    Integer,
    /// Keys are hashed into `[0, n)`. Distinct keys may collide.
    Hashed { n: u64 },
}

impl KeyMap {
    pub fn map(&self, key: &Key, seed: u64) -> Result<u64> {
        match self {
            KeyMap::Integer => key.as_u64().ok_or_else(|| {
                Error::RejectedElement(format!("key {key} is not a decimal integer"))
            }),
            KeyMap::Hashed { n } => Ok(SeedRand::new(seed).key_hash(key.as_bytes(), *n)),
        }
    }

    /// Integer keys when every key parses, otherwise hashing into a domain
    /// four times the distinct key count (rounded up to a power of two).
    pub fn detect<'a>(keys: impl IntoIterator<Item = &'a Key>) -> KeyMap {
        let mut distinct = 0u64;
        let mut all_int = true;
        for k in keys {
            distinct += 1;
            all_int &= k.as_u64().is_some();
        }
        if all_int {
            KeyMap::Integer
        } else {
            KeyMap::Hashed {
                n: (4 * distinct.max(1)).next_power_of_two(),
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub p: f64,
    pub dist: RDist,
    pub seed: u64,
    pub key_map: KeyMap,
}

/// A transformed element in the sketch domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutputElement {
    pub key: u64,
    pub value: f64,
}

impl TransformConfig {
    pub fn new(p: f64, seed: u64) -> Self {
        TransformConfig {
            p,
            dist: RDist::Exp1,
            seed,
            key_map: KeyMap::Integer,
        }
    }

    pub fn with_dist(mut self, dist: RDist) -> Self {
        self.dist = dist;
        self
    }

    pub fn with_key_map(mut self, key_map: KeyMap) -> Self {
        self.key_map = key_map;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 2.0) {
            return Err(Error::Config(format!("p must be in (0, 2], got {}", self.p)));
        }
        Ok(())
    }

    pub fn r(&self, key: &Key) -> f64 {
        draw_r(key, self.seed, self.dist)
    }

    /// `r_x^{1/p}`, the factor separating input and transformed frequencies.
    pub fn scale(&self, key: &Key) -> f64 {
        let r = self.r(key);
        if self.p == 1.0 {
            r
        } else if self.p == 2.0 {
            r.sqrt()
        } else {
            r.powf(1.0 / self.p)
        }
    }

    pub fn transform_value(&self, key: &Key, value: f64) -> f64 {
        value / self.scale(key)
    }

    pub fn transform_element(&self, e: &Element) -> Result<OutputElement> {
        Ok(OutputElement {
            key: self.key_map.map(&e.key, self.seed)?,
            value: self.transform_value(&e.key, e.value),
        })
    }

    /// Maps an estimate of `ν*_x` back to an estimate of `ν_x`.
    pub fn invert_estimate(&self, est_out: f64, key: &Key) -> f64 {
        est_out * self.scale(key)
    }

    /// `ν*` of a whole frequency vector.
    pub fn transform_vector(&self, v: &FrequencyVector) -> FrequencyVector {
        v.iter()
            .map(|(k, nu)| (k.clone(), self.transform_value(k, nu)))
            .collect()
    }
}

/// The exact bottom-k sample: the `k` keys of largest `|ν*|` with `τ` the
/// `(k+1)`-st magnitude.
pub fn exact_bottomk_sample(v: &FrequencyVector, k: usize, cfg: &TransformConfig) -> Result<WorSample> {
    cfg.validate()?;
    if v.len() < k + 1 {
        return Err(Error::DegenerateInput(format!(
            "need at least {} keys for a size-{k} sample, got {}",
            k + 1,
            v.len()
        )));
    }
    let mut ranked: Vec<SampleEntry> = v
        .iter()
        .map(|(key, nu)| SampleEntry {
            key: key.clone(),
            frequency: nu,
            transformed: cfg.transform_value(key, nu),
        })
        .collect();
    crate::sample::sort_by_rank(&mut ranked);
    let tau = ranked[k].transformed.abs();
    ranked.truncate(k);
    Ok(WorSample::new(ranked, tau, SampleMode::Exact2Pass, cfg, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_arithmetic() {
        let cfg = TransformConfig::new(2.0, 1);
        // pick a key whose r we know, then check v / r^{1/p}
        let key = Key::from(5u64);
        let r = cfg.r(&key);
        let out = cfg.transform_element(&Element::new(5u64, 2.0).unwrap()).unwrap();
        assert_eq!(out.key, 5);
        assert_eq!(out.value, 2.0 / r.sqrt());
        let back = cfg.invert_estimate(out.value, &key);
        assert!((back - 2.0).abs() <= 4.0 * f64::EPSILON);
        assert!((cfg.invert_estimate(out.value * 1.1, &key) / 2.0 - 1.1).abs() < 1e-12);
    }

    #[test]
    fn integer_map_rejects_text_keys() {
        let cfg = TransformConfig::new(1.0, 0);
        assert!(cfg.transform_element(&Element::new("abc", 1.0).unwrap()).is_err());
        let hashed = cfg.with_key_map(KeyMap::Hashed { n: 64 });
        assert!(hashed.transform_element(&Element::new("abc", 1.0).unwrap()).unwrap().key < 64);
    }

    #[test]
    fn detect_key_map() {
        let ints: Vec<Key> = (0..10u64).map(Key::from).collect();
        assert_eq!(KeyMap::detect(&ints), KeyMap::Integer);
        let mixed = vec![Key::from("a"), Key::from(1u64), Key::from("b")];
        assert_eq!(KeyMap::detect(&mixed), KeyMap::Hashed { n: 16 });
    }

    #[test]
    fn bottomk_edge_cases() {
        let v = FrequencyVector::from_pairs((1..=10u64).map(|i| (Key::from(i), i as f64)));
        let cfg = TransformConfig::new(1.0, 3);
        let s = exact_bottomk_sample(&v, 9, &cfg).unwrap();
        assert_eq!(s.entries.len(), 9);
        let tv = cfg.transform_vector(&v);
        let smallest = tv
            .iter()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0
            .clone();
        assert!(s.entries.iter().all(|e| e.key != smallest));
        assert_eq!(s.tau, tv.get(&smallest).abs());
        assert!(matches!(
            exact_bottomk_sample(&v, 10, &cfg),
            Err(Error::DegenerateInput(_))
        ));
    }
}
