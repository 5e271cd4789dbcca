//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lattice::{DensityField, TorusShape};
use crate::mcf::periodic_distance;
use crate::rates::{parse_named_exchange, parse_named_flip, ExchangeRateSpec, FlipRateSpec, RateError, RateFile};
use crate::snapshot::{Payload, Snapshot};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Rates(#[from] RateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "one")]
    pub replicas: usize,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub rates: RatesSection,
    pub shape: ShapeSection,
    pub k: KRule,
    pub initial: Initial,
    #[serde(default)]
    pub snapshots: Schedule,
    #[serde(default)]
    pub pde: PdeSection,
    #[serde(default)]
    pub bg: BgSection,
    #[serde(default)]
    pub master: MasterSection,
}

fn one() -> usize {
    1
}

/// Named rates (`simple`, `speedchange(a)`, `cubicflip(a1,a2,as)`,
/// `constant(p,m)`) or a JSON5 rate file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSection {
    pub dim: usize,
    pub n: NList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NList {
    One(usize),
    Many(Vec<usize>),
}

impl NList {
    pub fn values(&self) -> Vec<usize> {
        match self {
            NList::One(n) => vec![*n],
            NList::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase", deny_unknown_fields)]
pub enum KRule {
    Fixed {
        value: f64,
    },
    /// `delta (log N)^{sigma/2}`.
    Log {
        delta: f64,
        sigma: f64,
    },
}

impl KRule {
    pub fn k(&self, n: usize) -> Result<f64, ConfigError> {
        let k = match *self {
            KRule::Fixed { value } => value,
            KRule::Log { delta, sigma } => delta * (n as f64).ln().powf(sigma / 2.0),
        };
        if !(k >= 1.0) || !k.is_finite() {
            return Err(ConfigError::Invalid(format!(
                "K rule gives K = {k} at N = {n}, need K >= 1"
            )));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    #[default]
    Alpha1,
    Alpha2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Initial {
    /// `alpha_in + (alpha_out - alpha_in) S((|v - c| - R0) / w)` with `S` a
    /// C^5 smoothstep from 0 at `-1` to 1 at `1`; `w` defaults to `5/N`.
    Sphere {
        radius: f64,
        #[serde(default)]
        inside: Phase,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    Constant {
        value: f64,
    },
    /// A field snapshot file.
    Grid {
        file: PathBuf,
    },
}

/// Snapshot times: explicit, or `count` equally spaced points on `[0, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default = "five")]
    pub count: usize,
}

fn five() -> usize {
    5
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { times: None, count: 5 }
    }
}

impl Schedule {
    pub fn resolve(&self, t_end: f64) -> Result<Vec<f64>, ConfigError> {
        let times = match &self.times {
            Some(t) => t.clone(),
            None if self.count >= 2 => (0..self.count)
                .map(|i| t_end * i as f64 / (self.count - 1) as f64)
                .collect(),
            None => vec![t_end],
        };
        let sorted = times.windows(2).all(|w| w[0] < w[1]);
        if times.is_empty() || !sorted || times.iter().any(|t| !(0.0..=t_end).contains(t)) {
            return Err(ConfigError::Invalid(format!(
                "snapshot times {times:?} for t_end = {t_end}"
            )));
        }
        Ok(times)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BgSection {
    /// `pair` (`eta_0 eta_{e_1}`), `c_plus` (the creation rate), `occupation`.
    #[serde(default = "default_h")]
    pub h: Vec<String>,
    #[serde(default = "half")]
    pub density: f64,
    #[serde(default = "unit_coefficient")]
    pub coefficient: f64,
    /// Directory of occupancy snapshot files to read instead of simulating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Configurations in the frozen control, per lattice size.
    #[serde(default = "default_frozen")]
    pub frozen_samples: usize,
}

fn default_frozen() -> usize {
    400
}

fn default_h() -> Vec<String> {
    vec!["pair".into(), "c_plus".into()]
}

fn half() -> f64 {
    0.5
}

fn unit_coefficient() -> f64 {
    1.0
}

impl Default for BgSection {
    fn default() -> Self {
        BgSection {
            h: default_h(),
            density: 0.5,
            coefficient: 1.0,
            frozen_samples: default_frozen(),
            input: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterSection {
    /// Side of the tiny torus.
    #[serde(default = "four")]
    pub side: usize,
    /// Grid points for the entropy production check.
    #[serde(default = "five")]
    pub grid: usize,
    /// KMC replicas for the total-variation comparison (0 skips it).
    #[serde(default)]
    pub kmc_replicas: usize,
}

fn four() -> usize {
    4
}

impl Default for MasterSection {
    fn default() -> Self {
        MasterSection {
            side: 4,
            grid: 5,
            kmc_replicas: 0,
        }
    }
}

/// Exchange and flip rates of a config.
#[derive(Debug, Clone)]
pub struct ResolvedRates {
    pub exchange: ExchangeRateSpec,
    pub flip: Option<FlipRateSpec>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config; relative paths inside it are resolved against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(f) = config.rates.file.as_mut() {
            fix(f);
        }
        if let Initial::Grid { file } = &mut config.initial {
            fix(file);
        }
        if let Some(i) = config.bg.input.as_mut() {
            fix(i);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(1..=3).contains(&self.shape.dim) {
            return bad(format!("dimension {} not in 1..=3", self.shape.dim));
        }
        let ns = self.shape.n.values();
        if ns.is_empty() || ns.iter().any(|&n| n < 2) {
            return bad(format!("bad lattice sizes {ns:?}"));
        }
        for &n in &ns {
            self.k.k(n)?;
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end = {}", self.t_end));
        }
        if self.replicas == 0 {
            return bad("replicas must be positive".into());
        }
        self.snapshots.resolve(self.t_end)?;
        if self.rates.file.is_some() && (self.rates.exchange.is_some() || self.rates.flip.is_some()) {
            return bad("give either a rate file or named rates, not both".into());
        }
        if self.rates.file.is_none() && self.rates.exchange.is_none() {
            return bad("no exchange rates given".into());
        }
        match &self.initial {
            Initial::Sphere {
                radius, width, center, ..
            } => {
                if !(*radius >= 0.0 && *radius < 0.5) {
                    return bad(format!("sphere radius {radius}"));
                }
                if width.is_some_and(|w| !(w > 0.0)) {
                    return bad("sphere width must be positive".into());
                }
                if center.as_ref().is_some_and(|c| c.len() != self.shape.dim) {
                    return bad("sphere center has the wrong dimension".into());
                }
            }
            Initial::Constant { value } if !(*value > 0.0 && *value < 1.0) => {
                return bad(format!("constant profile {value} not in (0, 1)"));
            }
            _ => {}
        }
        if !(self.bg.density > 0.0 && self.bg.density < 1.0) {
            return bad(format!("bg density {}", self.bg.density));
        }
        Ok(())
    }

    /// Canonical TOML text of the config.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical text, hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn n_values(&self) -> Vec<usize> {
        self.shape.n.values()
    }

    pub fn shape_for(&self, n: usize) -> Result<TorusShape, ConfigError> {
        TorusShape::new(self.shape.dim, n).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn resolve_rates(&self) -> Result<ResolvedRates, ConfigError> {
        let dim = self.shape.dim;
        if let Some(path) = &self.rates.file {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.clone(),
                source,
            })?;
            let file = RateFile::parse(&text)?;
            if file.exchange.dim() != dim {
                return Err(ConfigError::Invalid(
                    "rate file dimension differs from shape.dim".into(),
                ));
            }
            return Ok(ResolvedRates {
                exchange: file.exchange,
                flip: file.flip,
            });
        }
        let exchange = parse_named_exchange(self.rates.exchange.as_deref().unwrap_or("simple"), dim)?;
        let flip = self
            .rates
            .flip
            .as_deref()
            .map(|s| parse_named_flip(s, dim))
            .transpose()?;
        Ok(ResolvedRates { exchange, flip })
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.resolve(self.t_end).expect("validated schedule")
    }
}

/// `S_5`: C^5 smoothstep on `[0, 1]`.
pub fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    // s^6 (462 - 1980 s + 3465 s^2 - 3080 s^3 + 1386 s^4 - 252 s^5)
    let p = 462.0 + s * (-1980.0 + s * (3465.0 + s * (-3080.0 + s * (1386.0 - 252.0 * s))));
    s.powi(6) * p
}

/// Builds `u0` on a torus. `alphas = (alpha1, alpha2)` are needed for spheres.
pub fn initial_field(
    initial: &Initial,
    shape: TorusShape,
    alphas: Option<(f64, f64)>,
) -> Result<DensityField, ConfigError> {
    let field = match initial {
        Initial::Constant { value } => DensityField::constant(shape, *value),
        Initial::Sphere {
            radius,
            inside,
            width,
            center,
        } => {
            let (a1, a2) =
                alphas.ok_or_else(|| ConfigError::Invalid("a sphere profile needs a bistable reaction term".into()))?;
            let (a_in, a_out) = match inside {
                Phase::Alpha1 => (a1, a2),
                Phase::Alpha2 => (a2, a1),
            };
            let w = width.unwrap_or(5.0 / shape.side() as f64);
            let c = center.clone().unwrap_or_else(|| vec![0.5; shape.dim()]);
            DensityField::sample(shape, |v| {
                let z = (periodic_distance(v, &c) - radius) / w;
                a_in + (a_out - a_in) * smoothstep(0.5 * (z + 1.0))
            })
        }
        Initial::Grid { file } => {
            let snap = Snapshot::read(file).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            let Payload::Field(field) = snap.payload else {
                return Err(ConfigError::Invalid("initial grid file holds occupancies".into()));
            };
            if field.shape() != shape {
                return Err(ConfigError::Invalid("initial grid has the wrong shape".into()));
            }
            field
        }
    };
    if field.values().iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
        return Err(ConfigError::Invalid("initial profile leaves (0, 1)".into()));
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 7
replicas = 4
t_end = 0.02

[rates]
exchange = "simple"
flip = "cubicflip(0.25,0.75,0.5)"

[shape]
dim = 2
n = 64

[k]
rule = "fixed"
value = 8.0

[initial]
kind = "sphere"
radius = 0.3
"#;

    #[test]
    fn parses_and_hashes_stably() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.replicas, 4);
        assert_eq!(c.times(), vec![0.0, 0.005, 0.01, 0.015, 0.02]);
        let again = ExperimentConfig::parse(&c.canonical()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
        let mut other = c.clone();
        other.seed = 8;
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn k_rules() {
        let k = KRule::Log { delta: 3.0, sigma: 0.5 }.k(128).unwrap();
        assert!((k - 3.0 * 128f64.ln().powf(0.25)).abs() < 1e-12);
        assert!((k - 4.5).abs() < 0.05);
        assert!(KRule::Fixed { value: 0.5 }.k(10).is_err());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::parse(&SAMPLE.replace("replicas = 4", "replicaz = 4")).is_err());
        assert!(ExperimentConfig::parse(&SAMPLE.replace("radius = 0.3", "radius = 0.7")).is_err());
        assert!(ExperimentConfig::parse(&SAMPLE.replace("t_end = 0.02", "t_end = -1.0")).is_err());
    }

    #[test]
    fn smoothstep_shape() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert!((smoothstep(1.0) - 1.0).abs() < 1e-12);
        assert!((smoothstep(0.5) - 0.5).abs() < 1e-12);
        for k in 0..100 {
            let s = k as f64 / 100.0;
            assert!(smoothstep(s + 0.01) >= smoothstep(s));
            assert!((smoothstep(s) + smoothstep(1.0 - s) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_profile_is_bounded_and_crosses_at_r0() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        let shape = c.shape_for(64).unwrap();
        let u = initial_field(&c.initial, shape, Some((0.25, 0.75))).unwrap();
        assert!(u.min() >= 0.25 && u.max() <= 0.75);
        let r = crate::mcf::extract_radius(&u, 0.5, &[0.5, 0.5]).unwrap();
        assert!((r - 0.3).abs() < 1e-3, "{r}");
    }
}
