use nalgebra::DVector;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::learning::{StepRule, TrainConfig};
use crate::network::{Activation, IntegrateOptions, NetworkParams};
use crate::sampling::{rng, uniform_dvector};

/// Malformed configuration; the message names the offending key.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config key `{key}`: {reason}")]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

fn err<T>(key: &str, reason: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { key: key.to_string(), reason: reason.into() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Tanh,
    Equivariant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSpec {
    /// Drawn `U(-0.8, 0.8)` from the run's seed.
    Random,
    Values(Vec<f64>),
}

/// Everything a command needs, after defaults and command-line overrides.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub n_neurons: usize,
    pub gamma: f64,
    pub mu: f64,
    /// One value for every entry, or `6N` values.
    pub bias: Vec<f64>,
    pub activation: ActivationKind,
    pub target: Option<TargetSpec>,
    pub lr_min: f64,
    pub lr_max: f64,
    pub lr_init: f64,
    pub proj_period: usize,
    pub tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub ablate_projection: bool,
    pub learn_alpha: bool,
    pub step_rule: StepRule,
    pub momentum: f64,
    pub t_end: f64,
    pub dt: f64,
    pub initial_state: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_neurons: 4,
            gamma: 1.0,
            mu: 1.0,
            bias: vec![0.125],
            activation: ActivationKind::Tanh,
            target: None,
            lr_min: 0.002,
            lr_max: 0.2,
            lr_init: 0.02,
            proj_period: 10,
            tol: 1e-5,
            max_epochs: 25_000,
            seed: 0,
            ablate_projection: false,
            learn_alpha: true,
            step_rule: StepRule::LossScaled,
            momentum: 0.9,
            t_end: 50.0,
            dt: 0.05,
            initial_state: None,
        }
    }
}

fn number(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        _ => err(key, format!("expected a finite number, got {v}")),
    }
}

fn positive(key: &str, v: &Value) -> Result<f64, ConfigError> {
    let x = number(key, v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        err(key, format!("must be positive, got {x}"))
    }
}

fn count(key: &str, v: &Value) -> Result<u64, ConfigError> {
    v.as_u64().map_or_else(|| err(key, format!("expected a non-negative integer, got {v}")), Ok)
}

fn flag(key: &str, v: &Value) -> Result<bool, ConfigError> {
    v.as_bool().map_or_else(|| err(key, format!("expected true or false, got {v}")), Ok)
}

fn numbers(key: &str, v: &Value) -> Result<Vec<f64>, ConfigError> {
    match v {
        Value::Array(items) => items.iter().map(|x| number(key, x)).collect(),
        _ => err(key, format!("expected an array of numbers, got {v}")),
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError {
            key: "<document>".into(),
            reason: e.to_string(),
        })?;
        match value {
            Value::Object(map) => Self::from_map(&map),
            _ => err("<document>", "expected a JSON object"),
        }
    }

    pub fn from_map(map: &Map<String, Value>) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (key, v) in map {
            let k = key.as_str();
            match k {
                "n_neurons" => {
                    c.n_neurons = count(k, v)? as usize;
                    if c.n_neurons == 0 {
                        return err(k, "must be at least 1");
                    }
                }
                "gamma" => c.gamma = positive(k, v)?,
                "mu" => c.mu = positive(k, v)?,
                "bias" => {
                    c.bias = match v {
                        Value::Array(_) => numbers(k, v)?,
                        _ => vec![number(k, v)?],
                    }
                }
                "activation" => {
                    c.activation = match v.as_str() {
                        Some("tanh") => ActivationKind::Tanh,
                        Some("equivariant") => ActivationKind::Equivariant,
                        _ => return err(k, format!("expected \"tanh\" or \"equivariant\", got {v}")),
                    }
                }
                "target" => {
                    c.target = Some(match v {
                        Value::String(s) if s == "random" => TargetSpec::Random,
                        Value::Array(_) => TargetSpec::Values(numbers(k, v)?),
                        _ => return err(k, format!("expected an array of numbers or \"random\", got {v}")),
                    })
                }
                "lr_min" => c.lr_min = positive(k, v)?,
                "lr_max" => c.lr_max = positive(k, v)?,
                "lr_init" => c.lr_init = positive(k, v)?,
                "proj_period" => c.proj_period = count(k, v)? as usize,
                "tol" => c.tol = positive(k, v)?,
                "max_epochs" => c.max_epochs = count(k, v)? as usize,
                "seed" => c.seed = count(k, v)?,
                "ablate_projection" => c.ablate_projection = flag(k, v)?,
                "learn_alpha" => c.learn_alpha = flag(k, v)?,
                "step_rule" => {
                    c.step_rule = match v.as_str() {
                        Some("plain") => StepRule::Plain,
                        Some("loss-scaled") => StepRule::LossScaled,
                        _ => return err(k, format!("expected \"plain\" or \"loss-scaled\", got {v}")),
                    }
                }
                "momentum" => {
                    c.momentum = number(k, v)?;
                    if !(0.0..1.0).contains(&c.momentum) {
                        return err(k, format!("must lie in [0, 1), got {}", c.momentum));
                    }
                }
                "t_end" => c.t_end = positive(k, v)?,
                "dt" => c.dt = positive(k, v)?,
                "initial_state" => c.initial_state = Some(numbers(k, v)?),
                _ => return err(k, "unknown key"),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Cross-field checks. Run again after command-line overrides.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let dim = 6 * self.n_neurons;
        if self.bias.len() != 1 && self.bias.len() != dim {
            return err("bias", format!("expected 1 or {dim} values, got {}", self.bias.len()));
        }
        if let Some(TargetSpec::Values(t)) = &self.target {
            if t.len() != dim {
                return err("target", format!("expected {dim} values, got {}", t.len()));
            }
        }
        if let Some(x) = &self.initial_state {
            if x.len() != dim {
                return err("initial_state", format!("expected {dim} values, got {}", x.len()));
            }
        }
        if self.lr_min > self.lr_max {
            return err("lr_min", format!("exceeds lr_max ({} > {})", self.lr_min, self.lr_max));
        }
        if self.proj_period == 0 {
            return err("proj_period", "must be at least 1");
        }
        if self.max_epochs == 0 {
            return err("max_epochs", "must be at least 1");
        }
        if self.dt > self.t_end {
            return err("dt", format!("exceeds t_end ({} > {})", self.dt, self.t_end));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        6 * self.n_neurons
    }

    pub fn params(&self) -> NetworkParams {
        let bias = if self.bias.len() == 1 {
            DVector::from_element(self.dim(), self.bias[0])
        } else {
            DVector::from_vec(self.bias.clone())
        };
        let activation = match self.activation {
            ActivationKind::Tanh => Activation::Tanh,
            ActivationKind::Equivariant => Activation::equivariant(),
        };
        NetworkParams { gamma: self.gamma, mu: self.mu, bias, activation }
    }

    /// Training configuration. A random target is drawn from `rng` (after
    /// the initial weights). A missing target is an error naming the key.
    pub fn train_config<R: rand::Rng>(&self, rng: &mut R) -> Result<TrainConfig, ConfigError> {
        let target = match &self.target {
            None => return err("target", "required for training but missing"),
            Some(TargetSpec::Random) => uniform_dvector(rng, self.dim(), -0.8, 0.8),
            Some(TargetSpec::Values(v)) => DVector::from_vec(v.clone()),
        };
        let mut cfg = TrainConfig::new(target);
        cfg.lr_min = self.lr_min;
        cfg.lr_max = self.lr_max;
        cfg.lr_init = self.lr_init;
        cfg.proj_period = self.proj_period;
        cfg.tol = self.tol;
        cfg.max_epochs = self.max_epochs;
        cfg.seed = self.seed;
        cfg.ablate_projection = self.ablate_projection;
        cfg.learn_alpha = self.learn_alpha;
        cfg.step_rule = self.step_rule;
        cfg.momentum = self.momentum;
        Ok(cfg)
    }

    /// Initial state for simulation: the configured one, or `U(-1, 1)` from
    /// the seed.
    pub fn initial_state(&self) -> DVector<f64> {
        match &self.initial_state {
            Some(x) => DVector::from_vec(x.clone()),
            None => uniform_dvector(&mut rng(self.seed), self.dim(), -1.0, 1.0),
        }
    }

    pub fn integrate_options(&self) -> IntegrateOptions {
        IntegrateOptions::sampled(self.t_end, self.dt)
    }

    /// SHA-256 of the canonical JSON form, hex-encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_setup() {
        let c = RunConfig::from_json_str("{}").unwrap();
        assert_eq!(c.n_neurons, 4);
        assert_eq!(c.proj_period, 10);
        assert_eq!(c.tol, 1e-5);
        assert_eq!(c.max_epochs, 25_000);
        assert_eq!(c.params().bias, DVector::from_element(24, 0.125));
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [
            (r#"{"gamma": -1}"#, "gamma"),
            (r#"{"lr_min": "fast"}"#, "lr_min"),
            (r#"{"bogus": 1}"#, "bogus"),
            (r#"{"target": [0.1, 0.2]}"#, "target"),
            (r#"{"bias": [1, 2, 3]}"#, "bias"),
            (r#"{"lr_min": 0.5, "lr_max": 0.1}"#, "lr_min"),
            (r#"{"proj_period": 0}"#, "proj_period"),
            (r#"{"activation": "relu"}"#, "activation"),
        ] {
            assert_eq!(RunConfig::from_json_str(text).unwrap_err().key, key, "{text}");
        }
        assert_eq!(RunConfig::from_json_str("[1]").unwrap_err().key, "<document>");
    }

    #[test]
    fn missing_target_fails_for_training() {
        let c = RunConfig::from_json_str("{}").unwrap();
        assert_eq!(c.train_config(&mut rng(0)).unwrap_err().key, "target");
        let c = RunConfig::from_json_str(r#"{"target": "random"}"#).unwrap();
        let t = c.train_config(&mut rng(0)).unwrap().target;
        assert!(t.iter().all(|x| x.abs() < 0.8));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
