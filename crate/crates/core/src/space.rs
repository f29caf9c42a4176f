//! Knob definitions, the configuration space and points in it.
//!
//! All knobs are embedded on a shared unit-cube layout: continuous and
//! integer knobs map affinely from `[lo, hi]`, enumerated knobs map level
//! index `i` of `L` to `i / (L - 1)`. Surrogates, classifiers, k-means and
//! distances all work on that vector.

use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::EngineRng;

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("value {value} is outside the domain of knob `{knob}`")]
    DomainViolation { knob: String, value: String },
    #[error("expected a vector of length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("knob `{knob}` is invalid: {reason}")]
    InvalidKnob { knob: String, reason: String },
    #[error("duplicate knob name `{0}`")]
    DuplicateKnob(String),
    #[error("unknown knob `{0}`")]
    UnknownKnob(String),
    #[error("configuration is missing knob `{0}`")]
    MissingKnob(String),
    #[error("configuration space has no knobs")]
    Empty,
    #[error("non-finite coordinate {0}")]
    NonFinite(f64),
}

/// A single knob value. Serialized untagged: JSON integers, floats and strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KnobValue {
    Int(i64),
    Float(f64),
    Level(String),
}

impl KnobValue {
    fn as_f64(&self) -> Option<f64> {
        match *self {
            KnobValue::Int(v) => Some(v as f64),
            KnobValue::Float(v) => Some(v),
            KnobValue::Level(_) => None,
        }
    }
}

impl fmt::Display for KnobValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnobValue::Int(v) => write!(f, "{v}"),
            KnobValue::Float(v) => write!(f, "{v}"),
            KnobValue::Level(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KnobDomain {
    Continuous { lo: f64, hi: f64 },
    Integer { lo: i64, hi: i64 },
    Enumerated { levels: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnobKind {
    Continuous,
    Integer,
    Enumerated,
}

/// On-disk shape of one knob: `{"name", "kind", "domain", "default"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKnob {
    name: String,
    kind: KnobKind,
    domain: Vec<KnobValue>,
    default: KnobValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKnob", into = "RawKnob")]
pub struct KnobSpec {
    name: String,
    domain: KnobDomain,
    default: KnobValue,
}

impl KnobSpec {
    pub fn continuous(name: &str, lo: f64, hi: f64, default: f64) -> Result<Self, SpaceError> {
        Self::new(name, KnobDomain::Continuous { lo, hi }, KnobValue::Float(default))
    }

    pub fn integer(name: &str, lo: i64, hi: i64, default: i64) -> Result<Self, SpaceError> {
        Self::new(name, KnobDomain::Integer { lo, hi }, KnobValue::Int(default))
    }

    pub fn enumerated(name: &str, levels: &[&str], default: &str) -> Result<Self, SpaceError> {
        Self::new(
            name,
            KnobDomain::Enumerated {
                levels: levels.iter().map(|s| s.to_string()).collect(),
            },
            KnobValue::Level(default.to_string()),
        )
    }

    pub fn new(name: &str, domain: KnobDomain, default: KnobValue) -> Result<Self, SpaceError> {
        let invalid = |reason: &str| SpaceError::InvalidKnob {
            knob: name.to_string(),
            reason: reason.to_string(),
        };
        match &domain {
            KnobDomain::Continuous { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(invalid("continuous domain needs finite lo < hi"));
                }
            }
            KnobDomain::Integer { lo, hi } => {
                if lo >= hi {
                    return Err(invalid("integer domain needs lo < hi"));
                }
            }
            KnobDomain::Enumerated { levels } => {
                if levels.len() < 2 {
                    return Err(invalid("enumerated knob needs at least two levels"));
                }
                for (i, level) in levels.iter().enumerate() {
                    if levels[..i].contains(level) {
                        return Err(invalid("enumerated levels must be unique"));
                    }
                }
            }
        }
        let mut knob = KnobSpec {
            name: name.to_string(),
            domain,
            default: KnobValue::Int(0),
        };
        knob.default = knob.validate(&default)?;
        Ok(knob)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &KnobDomain {
        &self.domain
    }

    pub fn default_value(&self) -> &KnobValue {
        &self.default
    }

    pub fn kind(&self) -> KnobKind {
        match self.domain {
            KnobDomain::Continuous { .. } => KnobKind::Continuous,
            KnobDomain::Integer { .. } => KnobKind::Integer,
            KnobDomain::Enumerated { .. } => KnobKind::Enumerated,
        }
    }

    fn violation(&self, value: &KnobValue) -> SpaceError {
        SpaceError::DomainViolation {
            knob: self.name.clone(),
            value: value.to_string(),
        }
    }

    /// Check `value` against the domain and return it in canonical form
    /// (continuous knobs always hold `Float`, integer knobs `Int`).
    pub fn validate(&self, value: &KnobValue) -> Result<KnobValue, SpaceError> {
        match (&self.domain, value) {
            (KnobDomain::Continuous { lo, hi }, v) => match v.as_f64() {
                Some(x) if x.is_finite() && *lo <= x && x <= *hi => Ok(KnobValue::Float(x)),
                _ => Err(self.violation(value)),
            },
            (KnobDomain::Integer { lo, hi }, KnobValue::Int(x)) if lo <= x && x <= hi => {
                Ok(KnobValue::Int(*x))
            }
            (KnobDomain::Integer { lo, hi }, KnobValue::Float(x))
                if x.fract() == 0.0 && (*lo as f64) <= *x && *x <= (*hi as f64) =>
            {
                Ok(KnobValue::Int(*x as i64))
            }
            (KnobDomain::Enumerated { levels }, KnobValue::Level(s)) if levels.contains(s) => {
                Ok(KnobValue::Level(s.clone()))
            }
            _ => Err(self.violation(value)),
        }
    }

    /// Unit-interval coordinate of a value.
    pub fn normalize(&self, value: &KnobValue) -> Result<f64, SpaceError> {
        let value = self.validate(value)?;
        Ok(match (&self.domain, &value) {
            (KnobDomain::Continuous { lo, hi }, KnobValue::Float(x)) => (x - lo) / (hi - lo),
            (KnobDomain::Integer { lo, hi }, KnobValue::Int(x)) => {
                (x - lo) as f64 / (hi - lo) as f64
            }
            (KnobDomain::Enumerated { levels }, KnobValue::Level(s)) => {
                let idx = levels.iter().position(|l| l == s).expect("validated level");
                idx as f64 / (levels.len() - 1) as f64
            }
            _ => unreachable!("validate returns the canonical variant"),
        })
    }

    /// Map a unit coordinate back to a value. Coordinates are clamped into
    /// `[0, 1]`; integer and level indices round half-up.
    pub fn denormalize(&self, coord: f64) -> Result<KnobValue, SpaceError> {
        if !coord.is_finite() {
            return Err(SpaceError::NonFinite(coord));
        }
        let x = coord.clamp(0.0, 1.0);
        Ok(match &self.domain {
            KnobDomain::Continuous { lo, hi } => KnobValue::Float((lo + x * (hi - lo)).min(*hi)),
            KnobDomain::Integer { lo, hi } => {
                let offset = (x * (hi - lo) as f64 + 0.5).floor() as i64;
                KnobValue::Int((lo + offset).min(*hi))
            }
            KnobDomain::Enumerated { levels } => {
                let idx = (x * (levels.len() - 1) as f64 + 0.5).floor() as usize;
                KnobValue::Level(levels[idx.min(levels.len() - 1)].clone())
            }
        })
    }
}

impl TryFrom<RawKnob> for KnobSpec {
    type Error = SpaceError;

    fn try_from(raw: RawKnob) -> Result<Self, Self::Error> {
        let bad_domain = |reason: &str| SpaceError::InvalidKnob {
            knob: raw.name.clone(),
            reason: reason.to_string(),
        };
        let domain = match raw.kind {
            KnobKind::Continuous => match raw.domain.as_slice() {
                [lo, hi] => KnobDomain::Continuous {
                    lo: lo.as_f64().ok_or_else(|| bad_domain("numeric bounds expected"))?,
                    hi: hi.as_f64().ok_or_else(|| bad_domain("numeric bounds expected"))?,
                },
                _ => return Err(bad_domain("domain must be [lo, hi]")),
            },
            KnobKind::Integer => match raw.domain.as_slice() {
                [KnobValue::Int(lo), KnobValue::Int(hi)] => KnobDomain::Integer { lo: *lo, hi: *hi },
                _ => return Err(bad_domain("domain must be [lo, hi] with integer bounds")),
            },
            KnobKind::Enumerated => KnobDomain::Enumerated {
                levels: raw
                    .domain
                    .iter()
                    .map(|v| match v {
                        KnobValue::Level(s) => Ok(s.clone()),
                        _ => Err(bad_domain("enumerated levels must be strings")),
                    })
                    .collect::<Result<_, _>>()?,
            },
        };
        KnobSpec::new(&raw.name, domain, raw.default)
    }
}

impl From<KnobSpec> for RawKnob {
    fn from(knob: KnobSpec) -> Self {
        let kind = knob.kind();
        let domain = match knob.domain {
            KnobDomain::Continuous { lo, hi } => vec![KnobValue::Float(lo), KnobValue::Float(hi)],
            KnobDomain::Integer { lo, hi } => vec![KnobValue::Int(lo), KnobValue::Int(hi)],
            KnobDomain::Enumerated { levels } => levels.into_iter().map(KnobValue::Level).collect(),
        };
        RawKnob {
            name: knob.name,
            kind,
            domain,
            default: knob.default,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    knobs: Vec<KnobSpec>,
}

/// Ordered list of knobs. Knob order fixes the vector layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace")]
pub struct ConfigurationSpace {
    knobs: Vec<KnobSpec>,
}

impl TryFrom<RawSpace> for ConfigurationSpace {
    type Error = SpaceError;

    fn try_from(raw: RawSpace) -> Result<Self, Self::Error> {
        ConfigurationSpace::new(raw.knobs)
    }
}

/// One value per knob, in knob order. Only constructible through a space,
/// so every instance is valid for the space that built it.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    values: Vec<KnobValue>,
}

impl Configuration {
    pub fn values(&self) -> &[KnobValue] {
        &self.values
    }
}

impl ConfigurationSpace {
    pub fn new(knobs: Vec<KnobSpec>) -> Result<Self, SpaceError> {
        if knobs.is_empty() {
            return Err(SpaceError::Empty);
        }
        for (i, knob) in knobs.iter().enumerate() {
            if knobs[..i].iter().any(|k| k.name == knob.name) {
                return Err(SpaceError::DuplicateKnob(knob.name.clone()));
            }
        }
        Ok(Self { knobs })
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, crate::FileError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_json(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("space serializes")
    }

    pub fn knobs(&self) -> &[KnobSpec] {
        &self.knobs
    }

    pub fn dim(&self) -> usize {
        self.knobs.len()
    }

    pub fn configuration(&self, values: Vec<KnobValue>) -> Result<Configuration, SpaceError> {
        if values.len() != self.knobs.len() {
            return Err(SpaceError::Dimension {
                expected: self.knobs.len(),
                got: values.len(),
            });
        }
        let values = self
            .knobs
            .iter()
            .zip(&values)
            .map(|(k, v)| k.validate(v))
            .collect::<Result<_, _>>()?;
        Ok(Configuration { values })
    }

    pub fn default_configuration(&self) -> Configuration {
        Configuration {
            values: self.knobs.iter().map(|k| k.default.clone()).collect(),
        }
    }

    pub fn normalize(&self, config: &Configuration) -> Result<Vec<f64>, SpaceError> {
        if config.values.len() != self.knobs.len() {
            return Err(SpaceError::Dimension {
                expected: self.knobs.len(),
                got: config.values.len(),
            });
        }
        self.knobs
            .iter()
            .zip(&config.values)
            .map(|(k, v)| k.normalize(v))
            .collect()
    }

    pub fn denormalize(&self, vector: &[f64]) -> Result<Configuration, SpaceError> {
        if vector.len() != self.knobs.len() {
            return Err(SpaceError::Dimension {
                expected: self.knobs.len(),
                got: vector.len(),
            });
        }
        let values = self
            .knobs
            .iter()
            .zip(vector)
            .map(|(k, &x)| k.denormalize(x))
            .collect::<Result<_, _>>()?;
        Ok(Configuration { values })
    }

    /// Draw `n` configurations: a uniform unit coordinate per knob, denormalized.
    pub fn random_sample(&self, n: usize, rng: &mut EngineRng) -> Vec<Configuration> {
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..self.dim()).map(|_| rng.random::<f64>()).collect();
                self.denormalize(&v).expect("unit coordinates are valid")
            })
            .collect()
    }

    pub fn random_sample_seeded(&self, n: usize, seed: u64) -> Vec<Configuration> {
        let mut rng = crate::rng::rng_for(seed, 0);
        self.random_sample(n, &mut rng)
    }

    /// Euclidean distance between normalized vectors.
    pub fn distance(&self, a: &Configuration, b: &Configuration) -> Result<f64, SpaceError> {
        Ok(euclidean(&self.normalize(a)?, &self.normalize(b)?))
    }

    /// Configuration as a name-keyed map in knob order.
    pub fn to_map(&self, config: &Configuration) -> IndexMap<String, KnobValue> {
        self.knobs
            .iter()
            .zip(&config.values)
            .map(|(k, v)| (k.name.clone(), v.clone()))
            .collect()
    }

    pub fn from_map(&self, map: &IndexMap<String, KnobValue>) -> Result<Configuration, SpaceError> {
        if let Some(unknown) = map.keys().find(|name| !self.knobs.iter().any(|k| &k.name == *name)) {
            return Err(SpaceError::UnknownKnob(unknown.clone()));
        }
        let values = self
            .knobs
            .iter()
            .map(|k| {
                map.get(&k.name)
                    .cloned()
                    .ok_or_else(|| SpaceError::MissingKnob(k.name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.configuration(values)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
