//! Without-replacement `ℓp` sampling over unaggregated, signed data streams.
//!
//! The crate transforms each stream element with a per-key random scale so
//! that a bottom-k sample of the frequency vector becomes the top-k of the
//! transformed one, then recovers those keys with mergeable residual heavy
//! hitter sketches. Two pipelines are provided: a two-pass sampler returning
//! exact frequencies and a one-pass sampler returning estimates.

pub mod bench;
pub mod calibration;
pub mod data;
pub mod error;
pub mod estimate;
pub mod io;
pub mod rhh;
pub mod sample;
pub mod sampler;
pub mod transform;
pub mod tvd;
pub mod util;

pub use calibration::{estimate_psi, Calibration, CalibrationCache};
pub use data::{draw_r, Element, FreqFn, FrequencyVector, Key, RDist, SeedRand, StatisticSpec};
pub use error::{Error, Result};
pub use estimate::{estimate_statistic, inclusion_prob, Estimate};
pub use io::{ElementFile, ElementSource};
pub use rhh::{Flavor, RhhConfig, RhhSketch};
pub use sample::{SampleEntry, SampleMode, WorSample};
pub use sampler::{one_pass_sample, two_pass_sample, Admission, SketchShape, WorpConfig};
pub use transform::{exact_bottomk_sample, KeyMap, TransformConfig};
