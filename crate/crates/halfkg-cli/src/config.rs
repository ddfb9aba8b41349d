use halfkg::grid::{make_grid, Grid};
use halfkg::metric::{MetricSpec, Profile};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;

pub const EXPERIMENTS: [&str; 8] = ["decay", "strichartz", "local-energy", "projector", "flow", "damping", "kernel-probe", "dirac"];

/// Experiments that evolve fields on the periodic box and so need L ≥ 4T.
const EVOLVING: [&str; 5] = ["decay", "strichartz", "local-energy", "kernel-probe", "dirac"];

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
    /// Half width L of the box [−L, L)^d.
    pub half_width: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { dim: 2, n: 64, half_width: 32.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    /// flat, inverse-square, inverse-power, radial-bump or dyadic-bump.
    pub profile: String,
    #[serde(default)]
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l0: Option<i32>,
    #[serde(default)]
    pub time_amp: f64,
    #[serde(default)]
    pub time_freq: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { profile: "flat".into(), eps: 0.0, power: None, width: None, l0: None, time_amp: 0.0, time_freq: 0.0 }
    }
}

const PROFILES: [&str; 5] = ["flat", "inverse-square", "inverse-power", "radial-bump", "dyadic-bump"];

impl MetricConfig {
    pub fn spec(&self, dim: usize, eps: f64) -> MetricSpec {
        let profile = match self.profile.as_str() {
            "inverse-square" => Profile::InversePower { power: 2.0 },
            "inverse-power" => Profile::InversePower { power: self.power.unwrap_or(2.0) },
            "radial-bump" => Profile::RadialBump { width: self.width.unwrap_or(3.0) },
            "dyadic-bump" => Profile::DyadicBump { l0: self.l0.unwrap_or(0), width: self.width.unwrap_or(3.0) },
            _ => Profile::Flat,
        };
        let eps = if matches!(profile, Profile::Flat) { 0.0 } else { eps };
        MetricSpec::new(dim, eps, profile).with_time_modulation(self.time_amp, self.time_freq)
    }
}

/// Wave packet with a Gaussian spectrum centred at (frequency, 0, …).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketConfig {
    pub frequency: f64,
    pub width: f64,
}

/// Experiment-specific knobs; each experiment reads the ones it needs.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet: Option<PacketConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<Vec<i32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_exp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub theta: f64,
    #[serde(default = "one")]
    pub s: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub params: Params,
}

fn one() -> f64 {
    1.0
}

fn default_horizon() -> f64 {
    8.0
}

fn default_dt() -> f64 {
    0.5
}

/// A configuration problem, anchored to a line of the file when one can be found.
#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{}:{l}:{c}: {}", self.path, self.message),
            (Some(l), None) => write!(f, "{}:{l}: {}", self.path, self.message),
            _ => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// First line mentioning `"key"`, 1-based.
fn line_of(text: &str, key: &str) -> Option<usize> {
    let pat = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&pat)).map(|i| i + 1)
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let err = |line: Option<usize>, column: Option<usize>, message: String| ConfigError { path: path.to_string(), line, column, message };
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| err(Some(e.line()), Some(e.column()), e.to_string()))?;
        // Name check first so that a misspelled experiment gets the list of valid names.
        match value.get("experiment").and_then(|v| v.as_str()) {
            Some(name) if EXPERIMENTS.contains(&name) => {}
            Some(name) => return Err(err(line_of(text, "experiment"), None, format!("unknown experiment \"{name}\"; valid names: {}", EXPERIMENTS.join(", ")))),
            None => return Err(err(None, None, format!("missing \"experiment\"; valid names: {}", EXPERIMENTS.join(", ")))),
        }
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| err(Some(e.line()), Some(e.column()), e.to_string()))?;
        cfg.validate().map_err(|(key, msg)| err(line_of(text, key), None, msg))?;
        Ok(cfg)
    }

    /// Returns the offending key and a message.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !EXPERIMENTS.contains(&self.experiment.as_str()) {
            return Err(("experiment", format!("unknown experiment \"{}\"; valid names: {}", self.experiment, EXPERIMENTS.join(", "))));
        }
        if !PROFILES.contains(&self.metric.profile.as_str()) {
            return Err(("profile", format!("unknown metric profile \"{}\"; valid profiles: {}", self.metric.profile, PROFILES.join(", "))));
        }
        if !(1..=3).contains(&self.grid.dim) {
            return Err(("dim", format!("dimension {} not in 1..=3", self.grid.dim)));
        }
        if let Err(e) = make_grid(self.grid.dim, self.grid.n, self.grid.half_width) {
            return Err(("grid", e.to_string()));
        }
        for (key, v) in [("mass", self.mass), ("horizon", self.horizon), ("dt", self.dt)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err((key, format!("{key} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(("theta", format!("θ = {} not in [0, 1]", self.theta)));
        }
        if self.experiment == "dirac" && !(self.s > 1.0) {
            return Err(("s", format!("the cubic Dirac run needs s > 1, got {}", self.s)));
        }
        if EVOLVING.contains(&self.experiment.as_str()) && self.grid.half_width < 4.0 * self.horizon {
            return Err(("horizon", format!("box budget violated: need L ≥ 4T, got L = {} and T = {}", self.grid.half_width, self.horizon)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        make_grid(self.grid.dim, self.grid.n, self.grid.half_width).expect("validated grid")
    }

    pub fn metric_spec(&self) -> MetricSpec {
        self.metric.spec(self.grid.dim, self.metric.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_lists_valid_ones() {
        let text = "{\n  \"experiment\": \"decoy\"\n}";
        let e = ExperimentConfig::parse(text, "c.json").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.to_string().contains("decay, strichartz"));
    }

    #[test]
    fn box_budget_is_line_anchored() {
        let text = "{\n  \"experiment\": \"decay\",\n  \"grid\": {\"dim\": 1, \"n\": 64, \"half_width\": 16},\n  \"horizon\": 8\n}";
        let e = ExperimentConfig::parse(text, "c.json").unwrap_err();
        assert_eq!(e.line, Some(4));
        assert!(e.message.contains("L ≥ 4T"));
        let ok = text.replace("\"horizon\": 8", "\"horizon\": 4");
        assert_eq!(ExperimentConfig::parse(&ok, "c.json").unwrap().horizon, 4.0);
    }

    #[test]
    fn syntax_and_unknown_fields() {
        let e = ExperimentConfig::parse("{\n \"experiment\": \"flow\",\n \"bogus\": 1\n}", "c.json").unwrap_err();
        assert_eq!(e.line, Some(3));
        let e = ExperimentConfig::parse("{\n \"experiment\": \"flow\",,\n}", "c.json").unwrap_err();
        assert_eq!(e.line, Some(2));
    }
}
