//! Experiment configuration files.
//!
//! JSON with an explicit `schema_version`; unknown keys are rejected
//! everywhere. Numbers that should be exact (probabilities, matrix
//! entries) may be given as strings `"p/q"`.

use std::fmt;
use std::path::Path;

use ergolab_core::sequences::SequenceSpec;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// A real number given as a JSON number, a decimal string or a rational
/// string `"p/q"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Num(pub f64);

impl Num {
    pub fn parse(s: &str) -> Result<f64, String> {
        let s = s.trim();
        match s.split_once('/') {
            Some((p, q)) => {
                let p: i64 = p.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
                let q: i64 = q.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
                if q == 0 {
                    return Err(format!("zero denominator in {s:?}"));
                }
                Ok(p as f64 / q as f64)
            }
            None => s.parse().map_err(|_| format!("not a number: {s:?}")),
        }
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Num;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a string \"p/q\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Num, E> {
                Ok(Num(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Num, E> {
                Num::parse(v).map(Num).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// Integer matrix entry: a JSON integer or an integral string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Int(pub i64);

impl<'de> Deserialize<'de> for Int {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Int;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an integer")
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Int, E> {
                Ok(Int(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Int, E> {
                i64::try_from(v).map(Int).map_err(|_| E::custom("integer out of range"))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Int, E> {
                let x = Num::parse(v).map_err(E::custom)?;
                if x.fract() != 0.0 || x.abs() > 9.0e15 {
                    return Err(E::custom(format!("{v:?} is not an integer")));
                }
                Ok(Int(x as i64))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    /// Markov shift; adjacency defaults to the support of `transition`.
    Markov {
        transition: Vec<Vec<Num>>,
        #[serde(default)]
        adjacency: Option<Vec<Vec<u8>>>,
        #[serde(default)]
        one_sided: bool,
    },
    Bernoulli {
        probabilities: Vec<Num>,
    },
    Doubling,
    Torus {
        matrix: Vec<Vec<Int>>,
        #[serde(default = "default_bits")]
        precision_bits: u32,
    },
}

fn default_bits() -> u32 {
    ergolab_core::systems::DEFAULT_PRECISION_BITS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTermConfig {
    pub freq: Vec<i64>,
    #[serde(default)]
    pub cos: Num,
    #[serde(default)]
    pub sin: Num,
}

impl Default for Num {
    fn default() -> Self {
        Num(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableConfig {
    /// `1{x_at = symbol}`.
    Indicator {
        symbol: usize,
        #[serde(default)]
        at: i64,
    },
    /// Locally constant function on coordinates `offset..offset+length`;
    /// `values[code]` with the oldest symbol most significant.
    Cylinder {
        offset: i64,
        length: usize,
        values: Vec<Num>,
    },
    Constant {
        value: Num,
    },
    Trig {
        dim: usize,
        terms: Vec<TrigTermConfig>,
    },
    Cosine {
        freq: Vec<i64>,
        #[serde(default = "one")]
        coefficient: Num,
    },
}

fn one() -> Num {
    Num(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Oracle {
    /// Exact when possible, Monte Carlo when the span is too large.
    #[default]
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelateConfig {
    pub system: SystemConfig,
    pub observables: Vec<ObservableConfig>,
    #[serde(default)]
    pub center: bool,
    /// One time tuple per row.
    pub tuples: Vec<Vec<i64>>,
    #[serde(default)]
    pub oracle: Oracle,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CumulantsConfig {
    pub system: SystemConfig,
    pub observables: Vec<ObservableConfig>,
    #[serde(default)]
    pub center: bool,
    pub tuples: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AverageConfig {
    pub system: SystemConfig,
    pub observables: Vec<ObservableConfig>,
    #[serde(default)]
    pub center: bool,
    pub multipliers: Vec<i64>,
    pub sequence: SequenceSpec,
    pub n_max: u64,
    #[serde(default)]
    pub checkpoints: Option<Vec<u64>>,
    #[serde(default = "one")]
    pub epsilon: Num,
    #[serde(default = "two")]
    pub delta: Num,
    #[serde(default = "one_usize")]
    pub points: usize,
    /// Checkpoint the rate trend is measured against.
    #[serde(default)]
    pub reference: Option<u64>,
    /// Largest tolerated final-checkpoint exceedance fraction (ratecheck).
    #[serde(default = "default_fraction")]
    pub max_fraction: f64,
}

fn two() -> Num {
    Num(2.0)
}

fn one_usize() -> usize {
    1
}

fn default_fraction() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DyadicConfig {
    pub system: SystemConfig,
    pub observables: Vec<ObservableConfig>,
    #[serde(default)]
    pub center: bool,
    pub multipliers: Vec<i64>,
    pub sequence: SequenceSpec,
    pub points: usize,
    /// `N` values for `E(0, N)` (powers of two).
    pub grid: Vec<u64>,
    /// Levels `s = 1..=s_max` for the variance profile.
    #[serde(default)]
    pub s_max: u32,
    #[serde(default = "one")]
    pub epsilon: Num,
    #[serde(default = "one")]
    pub sigma: Num,
    /// Values of `n` whose decomposition is written out.
    #[serde(default)]
    pub decompose: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub g: Vec<Vec<Num>>,
    pub h: Vec<Vec<Num>>,
    pub m_grid: Vec<u64>,
    pub k_max: u64,
    pub n_max: u64,
    #[serde(default)]
    pub claim: Option<f64>,
    /// `(m, n_from, n_to)` for the hyperbolic balance curve.
    #[serde(default)]
    pub balance: Option<(u64, u64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthConfig {
    #[serde(default)]
    pub matrix: Option<Vec<Vec<Num>>>,
    #[serde(default = "default_growth_n")]
    pub n_max: u64,
    #[serde(default)]
    pub pair: Option<PairConfig>,
}

fn default_growth_n() -> u64 {
    64
}

/// Correlation scale used by the counting experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScaleConfig {
    /// `c(k) = coefficient * k^exponent`.
    Power { coefficient: Num, exponent: Num },
    /// `b(m, k) = |a k + b m| + offset`.
    Affine { a: Num, b: Num, offset: Num },
    Constant { value: Num },
    /// `b(m, k) = |t_i r_m - t_j r_k| + 1`, or `c(k) = |(t_i - t_j) r_k| + 1`
    /// (`|t_i r_k| + 1` when `same`).
    Sequence {
        sequence: SequenceSpec,
        t_i: Num,
        t_j: Num,
        #[serde(default)]
        same: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountingCondition {
    C,
    BRow,
    BColumn,
    BEither,
    Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountingConfig {
    pub condition: CountingCondition,
    pub scale: ScaleConfig,
    pub k_max: u64,
    #[serde(default)]
    pub n_max: Option<u64>,
    #[serde(default)]
    pub m_grid: Vec<u64>,
    #[serde(default)]
    pub claim: Option<f64>,
    /// Band condition: bands `[s, s+1]` for `s <= s_max`, at most `m_claim` values each.
    #[serde(default)]
    pub s_max: Option<u64>,
    #[serde(default)]
    pub m_claim: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Correlate(CorrelateConfig),
    Cumulants(CumulantsConfig),
    Average(AverageConfig),
    Ratecheck(AverageConfig),
    Dyadic(DyadicConfig),
    Growth(GrowthConfig),
    Counting(CountingConfig),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Correlate(_) => "correlate",
            Experiment::Cumulants(_) => "cumulants",
            Experiment::Average(_) => "average",
            Experiment::Ratecheck(_) => "ratecheck",
            Experiment::Dyadic(_) => "dyadic",
            Experiment::Growth(_) => "growth",
            Experiment::Counting(_) => "counting",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub experiment: Experiment,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
