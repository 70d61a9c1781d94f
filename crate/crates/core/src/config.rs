//! Declarative experiment configuration in TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize};

use crate::capacity::FunctionalCapOptions;
use crate::envelope::EnvelopeOptions;
use crate::error::{CapError, Result};
use crate::grid::{build_domain_dim, GridDomain, ShapeSpec};
use crate::wstar::ExampleSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// Registry of runnable experiments.
pub const EXPERIMENTS: [&str; 10] = [
    "capacity-comparison",
    "alexander-taylor",
    "volume-capacity",
    "moser-trudinger",
    "membership-threshold",
    "integral-inequalities",
    "subextension",
    "skoda",
    "choquet",
    "quasicontinuity",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = CapError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(CapError::Config { path: "formats".into(), msg: format!("unknown format `{other}`") }),
        }
    }
}

/// Positive real accepted either as a number or as a fraction `"p/q"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Spacing(pub f64);

impl std::str::FromStr for Spacing {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let v = match s.split_once('/') {
            Some((p, q)) => {
                let p: f64 = p.trim().parse().map_err(|_| format!("bad numerator in `{s}`"))?;
                let q: f64 = q.trim().parse().map_err(|_| format!("bad denominator in `{s}`"))?;
                p / q
            }
            None => s.parse().map_err(|_| format!("`{s}` is not a number"))?,
        };
        if v.is_finite() && v > 0.0 {
            Ok(Spacing(v))
        } else {
            Err(format!("spacing `{s}` must be positive"))
        }
    }
}

impl<'de> Deserialize<'de> for Spacing {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v > 0.0 && v.is_finite() => Ok(Spacing(v)),
            Raw::Num(v) => Err(serde::de::Error::custom(format!("spacing {v} must be positive"))),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| format!("`{x}` is not a number"))).collect()
}

/// Parses a command-line shape: `ball:R[@c1,c2,..]`, `annulus:R_IN:R_OUT[@c..]`,
/// `box:lo1,lo2,..:hi1,hi2,..`, or an inline JSON shape object.
pub fn parse_shape(s: &str) -> std::result::Result<ShapeSpec, String> {
    let s = s.trim();
    if s.starts_with('{') {
        return serde_json::from_str(s).map_err(|e| e.to_string());
    }
    let (body, center) = match s.split_once('@') {
        Some((b, c)) => (b, floats(c)?),
        None => (s, Vec::new()),
    };
    let parts: Vec<&str> = body.split(':').collect();
    let shape = match parts.as_slice() {
        ["ball", r] => ShapeSpec::Ball { center, radius: floats(r)?[0] },
        ["annulus", a, b] => ShapeSpec::Annulus { center, r_in: floats(a)?[0], r_out: floats(b)?[0] },
        ["box", lo, hi] if center.is_empty() => ShapeSpec::Box { lo: floats(lo)?, hi: floats(hi)? },
        _ => return Err(format!("cannot parse shape `{s}`")),
    };
    shape.validate().map_err(|e| e.to_string())?;
    Ok(shape)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub shape: ShapeSpec,
    pub spacing: Spacing,
    /// Complex dimension; shapes without centers are placed at the origin.
    #[serde(default = "one")]
    pub n: usize,
}

fn one() -> usize {
    1
}

impl DomainConfig {
    pub fn build(&self) -> Result<Arc<GridDomain>> {
        build_domain_dim(&self.shape, self.spacing.0, self.n)
    }
}

/// Experiment-specific knobs; unset values take per-experiment defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub trials: Option<usize>,
    /// Sublevel thresholds `s`.
    pub thresholds: Option<Vec<f64>>,
    /// Regularization scales in units of the spacing.
    pub delta_cells: Option<Vec<f64>>,
    /// Decreasing mollification scales.
    pub eps_list: Option<Vec<f64>>,
    pub delta_thresh: Option<f64>,
    /// Working-ball factor `S/R` for Siciak extremal functions.
    pub outer_factor: Option<f64>,
    /// Outer radius `R` of the Alexander–Taylor ball.
    pub outer_radius: Option<f64>,
    /// Radii of centered test balls.
    pub radii: Option<Vec<f64>>,
    /// `ε` in the subextension exponent `1/n − ε`.
    pub exponent_eps: Option<f64>,
    /// Radius of the compact `K`.
    pub k_radius: Option<f64>,
    /// Regularization used for catalog entries treated as smooth.
    pub smooth_delta: Option<f64>,
    /// Separate, finer spacing for Bedford–Taylor capacities.
    pub bt_spacing: Option<Spacing>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema: u32,
    pub name: String,
    pub domain: DomainConfig,
    #[serde(default)]
    pub sets: Vec<ShapeSpec>,
    #[serde(default)]
    pub examples: Vec<ExampleSpec>,
    #[serde(default)]
    pub envelope: EnvelopeOptions,
    #[serde(default)]
    pub functional: FunctionalCapOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    #[serde(default)]
    pub params: Params,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json, Format::Svg]
}

fn invalid(path: &str, msg: impl Into<String>) -> CapError {
    CapError::Config { path: path.into(), msg: msg.into() }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.inner().message().to_string();
            invalid(if path.is_empty() { "." } else { &path }, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid("<file>", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid(".", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid("schema", format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema)));
        }
        if !EXPERIMENTS.contains(&self.name.as_str()) {
            return Err(invalid("name", format!("unknown experiment `{}`", self.name)));
        }
        if self.domain.n != 1 && self.domain.n != 2 {
            return Err(invalid("domain.n", "complex dimension must be 1 or 2"));
        }
        self.domain.shape.validate().map_err(|e| invalid("domain.shape", e.to_string()))?;
        for (k, s) in self.sets.iter().enumerate() {
            s.validate().map_err(|e| invalid(&format!("sets[{k}]"), e.to_string()))?;
        }
        for (k, e) in self.examples.iter().enumerate() {
            e.validate(self.domain.n).map_err(|err| invalid(&format!("examples[{k}]"), err.to_string()))?;
        }
        if let Some(eps) = &self.params.eps_list {
            if eps.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(invalid("params.eps_list", "must be strictly decreasing"));
            }
        }
        if let Some(t) = self.params.trials {
            if t == 0 {
                return Err(invalid("params.trials", "must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "choquet"
seed = 3
[domain]
shape = { kind = "ball", radius = 1.0 }
spacing = "1/16"
"#;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.domain.spacing.0, 1.0 / 16.0);
        assert_eq!(c.formats.len(), 3);
        assert_eq!(c.domain.build().unwrap().complex_dim(), 1);
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn shape_strings() {
        assert_eq!(parse_shape("ball:0.25").unwrap(), ShapeSpec::Ball { center: vec![], radius: 0.25 });
        assert_eq!(
            parse_shape("annulus:0.1:0.3@0.1,0").unwrap(),
            ShapeSpec::Annulus { center: vec![0.1, 0.0], r_in: 0.1, r_out: 0.3 }
        );
        assert!(matches!(parse_shape("box:-0.1,-0.2:0.1,0.2").unwrap(), ShapeSpec::Box { .. }));
        assert!(parse_shape(r#"{"kind":"ball","radius":0.5}"#).is_ok());
        assert!(parse_shape("ball:-1").is_err());
        assert!(parse_shape("disc:1").is_err());
    }

    #[test]
    fn diagnostics_carry_field_paths() {
        let bad = MINIMAL.replace("spacing = \"1/16\"", "spacing = \"-1/16\"");
        match ExperimentConfig::from_toml_str(&bad) {
            Err(CapError::Config { path, .. }) => assert_eq!(path, "domain.spacing"),
            other => panic!("{other:?}"),
        }
        let bad = format!("{MINIMAL}\n[params]\ntrails = 3\n");
        match ExperimentConfig::from_toml_str(&bad) {
            Err(CapError::Config { path, .. }) => assert!(path.starts_with("params"), "{path}"),
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("choquet", "nope");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(CapError::Config { .. })));
    }
}
