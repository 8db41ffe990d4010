//! Elements, aggregated frequency vectors and seeded per-key randomness.
//!
//! Everything in this module is deterministic: the same seed and key always
//! produce the same draws, and aggregation does not depend on arrival order
//! beyond floating point summation order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};

/// A key identifier. Keys are arbitrary non-empty byte strings and order by
/// their bytes, which is the tie-break order used throughout the crate.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Key(Vec<u8>);

impl Key {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(Error::RejectedElement("empty key".into()));
        }
        Ok(Key(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// Interprets the key as a decimal unsigned integer.
    pub fn as_u64(&self) -> Option<u64> {
        std::str::from_utf8(&self.0).ok()?.parse().ok()
    }
}

impl From<u64> for Key {
    fn from(v: u64) -> Self {
        Key(v.to_string().into_bytes())
    }
}

impl From<&str> for Key {
    /// Panics on the empty string; use [`Key::new`] for untrusted input.
    fn from(s: &str) -> Self {
        Key::new(s.as_bytes()).expect("non-empty key")
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.0))
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Key({})", self)
    }
}

impl Serialize for Key {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&String::from_utf8_lossy(&self.0))
    }
}

impl<'de> Deserialize<'de> for Key {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Key::new(s.into_bytes()).map_err(serde::de::Error::custom)
    }
}

/// One unaggregated stream update.
#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub key: Key,
    pub value: f64,
}

impl Element {
    pub fn new(key: impl Into<Key>, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::RejectedElement(format!("non-finite value {value}")));
        }
        Ok(Element {
            key: key.into(),
            value,
        })
    }
}

/// Aggregated key to signed frequency map. Absent keys have frequency zero and
/// no stored entry is exactly zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrequencyVector {
    entries: BTreeMap<Key, f64>,
}

impl FrequencyVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sums element values per key, dropping keys that cancel to zero.
    pub fn aggregate<'a, I>(stream: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Element>,
    {
        let mut entries: BTreeMap<Key, f64> = BTreeMap::new();
        for e in stream {
            if !e.value.is_finite() {
                return Err(Error::RejectedElement(format!(
                    "key {} has non-finite value {}",
                    e.key, e.value
                )));
            }
            *entries.entry(e.key.clone()).or_insert(0.0) += e.value;
        }
        entries.retain(|_, v| *v != 0.0);
        Ok(FrequencyVector { entries })
    }

    /// Integer-exact aggregation. Every value must be integral with magnitude
    /// below 2^53; sums are carried in `i128` so no rounding happens.
    pub fn aggregate_exact<'a, I>(stream: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Element>,
    {
        let mut sums: BTreeMap<Key, i128> = BTreeMap::new();
        for e in stream {
            let v = e.value;
            if !v.is_finite() || v.fract() != 0.0 || v.abs() >= 9_007_199_254_740_992.0 {
                return Err(Error::RejectedElement(format!(
                    "key {} has non-integral value {v}",
                    e.key
                )));
            }
            *sums.entry(e.key.clone()).or_insert(0) += v as i128;
        }
        let entries = sums
            .into_iter()
            .filter(|(_, s)| *s != 0)
            .map(|(k, s)| (k, s as f64))
            .collect();
        Ok(FrequencyVector { entries })
    }

    pub fn from_pairs<I, K>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, f64)>,
        K: Into<Key>,
    {
        let mut entries = BTreeMap::new();
        for (k, v) in pairs {
            *entries.entry(k.into()).or_insert(0.0) += v;
        }
        entries.retain(|_, v: &mut f64| *v != 0.0);
        FrequencyVector { entries }
    }

    pub fn get(&self, key: &Key) -> f64 {
        self.entries.get(key).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, f64)> + '_ {
        self.entries.iter().map(|(k, v)| (k, *v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &Key> + '_ {
        self.entries.keys()
    }

    /// `Σ |ν_x|^q`.
    pub fn norm_pow(&self, q: f64) -> f64 {
        self.entries.values().map(|v| v.abs().powf(q)).sum()
    }

    /// `Σ |ν_x|^q` over all but the `k` largest-magnitude entries.
    pub fn tail_norm(&self, k: usize, q: f64) -> f64 {
        let mut mags: Vec<f64> = self.entries.values().map(|v| v.abs()).collect();
        if k >= mags.len() {
            return 0.0;
        }
        mags.sort_unstable_by(|a, b| b.total_cmp(a));
        // smallest terms first keeps the sum stable
        mags[k..].iter().rev().map(|m| m.powf(q)).sum()
    }

    /// The `k` keys of largest magnitude, ties broken by ascending key bytes.
    pub fn top_k_order(&self, k: usize) -> Vec<Key> {
        let mut ranked: Vec<(&Key, f64)> = self.iter().collect();
        ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(b.0)));
        ranked.into_iter().take(k).map(|(k, _)| k.clone()).collect()
    }

    /// Every entry multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut entries: BTreeMap<Key, f64> =
            self.entries.iter().map(|(k, v)| (k.clone(), v * c)).collect();
        entries.retain(|_, v| *v != 0.0);
        FrequencyVector { entries }
    }

    /// One element per key carrying its full frequency.
    pub fn to_elements(&self) -> Vec<Element> {
        self.iter()
            .map(|(k, v)| Element {
                key: k.clone(),
                value: v,
            })
            .collect()
    }
}

impl FromIterator<(Key, f64)> for FrequencyVector {
    fn from_iter<T: IntoIterator<Item = (Key, f64)>>(iter: T) -> Self {
        FrequencyVector::from_pairs(iter)
    }
}

/// Which independent stream of per-key randomness a draw belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    TransformExp,
    TransformUniform,
    KeyHash,
    SketchRow,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::TransformExp => 0x5851_f42d_4c95_7f2d,
            Purpose::TransformUniform => 0x1405_7b7e_f767_814f,
            Purpose::KeyHash => 0x2545_f491_4f6c_dd1d,
            Purpose::SketchRow => 0x9e37_79b9_7f4a_7c15,
        }
    }
}

/// Seeded keyed hashing. Immutable and cheap to copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedRand {
    pub seed: u64,
}

impl SeedRand {
    pub fn new(seed: u64) -> Self {
        SeedRand { seed }
    }

    pub fn hash(&self, purpose: Purpose, bytes: &[u8]) -> u64 {
        xxh3_64_with_seed(bytes, splitmix64(self.seed ^ purpose.tag()))
    }

    /// Uniform in the open interval (0, 1) from the top 53 bits of the hash.
    pub fn unit(&self, purpose: Purpose, bytes: &[u8]) -> f64 {
        let h = self.hash(purpose, bytes);
        ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn exp1(&self, bytes: &[u8]) -> f64 {
        -self.unit(Purpose::TransformExp, bytes).ln()
    }

    pub fn uniform01(&self, bytes: &[u8]) -> f64 {
        self.unit(Purpose::TransformUniform, bytes)
    }

    /// Hash of `bytes` into `[0, n)`.
    pub fn key_hash(&self, bytes: &[u8], n: u64) -> u64 {
        let h = self.hash(Purpose::KeyHash, bytes);
        ((h as u128 * n as u128) >> 64) as u64
    }

    /// Per-row seeds for the projection sketch hash functions.
    pub fn row_seeds(&self, rows: usize) -> Vec<u64> {
        (0..rows as u64)
            .map(|r| splitmix64(self.seed ^ Purpose::SketchRow.tag() ^ splitmix64(r)))
            .collect()
    }
}

/// Distribution of the per-key scaling variable `r_x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RDist {
    /// Exponential(1): ppswor.
    Exp1,
    /// Uniform(0,1): priority sampling.
    Uniform01,
}

/// The deterministic per-key draw `r_x` for `(key, seed, dist)`.
pub fn draw_r(key: &Key, seed: u64, dist: RDist) -> f64 {
    let s = SeedRand::new(seed);
    match dist {
        RDist::Exp1 => s.exp1(key.as_bytes()),
        RDist::Uniform01 => s.uniform01(key.as_bytes()),
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A function of frequency `f` with `f(0) = 0`.
#[derive(Clone)]
pub enum FreqFn {
    /// `f(ν) = ν`
    Identity,
    /// `f(ν) = |ν|^e`
    Power(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl FreqFn {
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let f0 = f(0.0);
        if f0 != 0.0 {
            return Err(Error::Config(format!("f(0) must be 0, got {f0}")));
        }
        Ok(FreqFn::Custom(Arc::new(f)))
    }

    pub fn eval(&self, nu: f64) -> f64 {
        match self {
            FreqFn::Identity => nu,
            FreqFn::Power(e) => {
                if nu == 0.0 {
                    0.0
                } else {
                    nu.abs().powf(*e)
                }
            }
            FreqFn::Custom(f) => f(nu),
        }
    }

    /// Parses `sum`/`nu`/`identity` or `p<e>` (for example `p3`, `p0.5`).
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sum" | "nu" | "identity" => Ok(FreqFn::Identity),
            _ => s
                .strip_prefix('p')
                .and_then(|e| e.parse::<f64>().ok())
                .filter(|e| e.is_finite() && *e > 0.0)
                .map(FreqFn::Power)
                .ok_or_else(|| Error::Config(format!("unknown statistic {s:?}"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            FreqFn::Identity => "nu".into(),
            FreqFn::Power(e) => format!("p{e}"),
            FreqFn::Custom(_) => "custom".into(),
        }
    }
}

impl fmt::Debug for FreqFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FreqFn({})", self.label())
    }
}

/// A sum statistic `Σ_x f(ν_x) L_x`.
#[derive(Clone, Debug)]
pub struct StatisticSpec {
    pub f: FreqFn,
    /// Per-key coefficients; keys missing from the map use 1. `None` means all ones.
    pub coefficients: Option<HashMap<Key, f64>>,
}

impl StatisticSpec {
    pub fn new(f: FreqFn) -> Self {
        StatisticSpec {
            f,
            coefficients: None,
        }
    }

    pub fn with_coefficients(mut self, l: HashMap<Key, f64>) -> Self {
        self.coefficients = Some(l);
        self
    }

    pub fn coefficient(&self, key: &Key) -> f64 {
        self.coefficients
            .as_ref()
            .and_then(|m| m.get(key).copied())
            .unwrap_or(1.0)
    }

    /// The exact statistic over a frequency vector.
    pub fn exact(&self, v: &FrequencyVector) -> f64 {
        v.iter().map(|(k, nu)| self.f.eval(nu) * self.coefficient(k)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(k: &str, v: f64) -> Element {
        Element::new(k, v).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let v = FrequencyVector::aggregate(&[el("a", 1.0), el("a", 2.0), el("b", -1.0)]).unwrap();
        assert_eq!(v.get(&"a".into()), 3.0);
        assert_eq!(v.get(&"b".into()), -1.0);
        assert_eq!(v.len(), 2);

        let empty: Vec<Element> = vec![];
        assert!(FrequencyVector::aggregate(&empty).unwrap().is_empty());

        let v = FrequencyVector::aggregate(&[el("a", 5.0), el("a", -5.0)]).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn rejects_bad_elements() {
        assert!(Element::new("a", f64::NAN).is_err());
        assert!(Element::new("a", f64::INFINITY).is_err());
        assert!(Key::new(Vec::new()).is_err());
        let bad = Element {
            key: "a".into(),
            value: f64::NAN,
        };
        assert!(matches!(
            FrequencyVector::aggregate(&[bad]),
            Err(Error::RejectedElement(_))
        ));
    }

    #[test]
    fn exact_aggregation_is_integral() {
        let s = [el("a", 3.0), el("a", 4.0), el("b", 1.0), el("b", -1.0)];
        let v = FrequencyVector::aggregate_exact(&s).unwrap();
        assert_eq!(v.get(&"a".into()), 7.0);
        assert_eq!(v.len(), 1);
        assert!(FrequencyVector::aggregate_exact(&[el("a", 0.5)]).is_err());
    }

    #[test]
    fn tail_norm_examples() {
        let v = FrequencyVector::from_pairs([("a", 3.0), ("b", -1.0)]);
        assert_eq!(v.tail_norm(1, 2.0), 1.0);
        assert_eq!(v.tail_norm(2, 2.0), 0.0);
        assert_eq!(v.tail_norm(7, 1.0), 0.0);
        assert_eq!(v.tail_norm(0, 2.0), v.norm_pow(2.0));

        // ranked harmonic weights: the tail beyond rank 10 is H_100 - H_10
        let z = FrequencyVector::from_pairs((1..=100u64).map(|i| (Key::from(i), 1.0 / i as f64)));
        let direct: f64 = (11..=100).map(|i| 1.0 / i as f64).sum();
        assert!((z.tail_norm(10, 1.0) - direct).abs() < 1e-12);
    }

    #[test]
    fn top_k_order_examples() {
        let v = FrequencyVector::from_pairs([("a", 3.0), ("b", -4.0)]);
        assert_eq!(v.top_k_order(2), vec![Key::from("b"), Key::from("a")]);
        let v = FrequencyVector::from_pairs([("a", 2.0), ("b", 2.0)]);
        assert_eq!(v.top_k_order(1), vec![Key::from("a")]);
    }

    #[test]
    fn draw_r_is_deterministic_and_in_range() {
        let k = Key::from("query");
        assert_eq!(draw_r(&k, 9, RDist::Exp1), draw_r(&k, 9, RDist::Exp1));
        assert_ne!(draw_r(&k, 9, RDist::Exp1), draw_r(&k, 10, RDist::Exp1));
        for i in 0..10_000u64 {
            let k = Key::from(i);
            let e = draw_r(&k, 3, RDist::Exp1);
            let u = draw_r(&k, 3, RDist::Uniform01);
            assert!(e > 0.0 && e.is_finite());
            assert!(u > 0.0 && u < 1.0);
            assert!(SeedRand::new(3).key_hash(k.as_bytes(), 1000) < 1000);
        }
    }

    #[test]
    fn freq_fn_parse() {
        assert!(matches!(FreqFn::parse("p3").unwrap(), FreqFn::Power(e) if e == 3.0));
        assert!(matches!(FreqFn::parse("sum").unwrap(), FreqFn::Identity));
        assert!(FreqFn::parse("q2").is_err());
        assert!(FreqFn::custom(|x| x + 1.0).is_err());
        assert_eq!(FreqFn::Power(2.0).eval(-3.0), 9.0);
    }
}
