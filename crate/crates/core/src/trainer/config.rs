use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calibrate::CalibrationMode;
use crate::filter::FilterParams;
use crate::objective::{ObjectiveParams, Temperatures};
use crate::{Error, Result};

/// Every knob of a continual run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_adapter: f64,
    pub lr_shift: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta_d: f64,
    pub tau: f64,
    /// Instance-matching temperature; `10·tau` when unset.
    pub tau_tilde: Option<f64>,
    pub lambda_im: f64,
    pub lambda_ta: f64,
    pub lambda_ric: f64,
    pub seed: u64,
    pub adapter_enabled: bool,
    pub adapter_scale: f64,
    pub calibration_mode: CalibrationMode,
    pub require_cls_noun: bool,
    pub few_shot_k: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr_adapter: 1e-5,
            lr_shift: 0.1,
            alpha: 0.1,
            beta: 1.0,
            gamma: 0.015,
            delta_d: 0.20,
            tau: 0.01,
            tau_tilde: None,
            lambda_im: 2.0,
            lambda_ta: 0.5,
            lambda_ric: 1.0,
            seed: 0,
            adapter_enabled: true,
            adapter_scale: 1.0,
            calibration_mode: CalibrationMode::ShiftOnNormalized,
            require_cls_noun: true,
            few_shot_k: None,
        }
    }
}

/// Filtering and instance-matching presets for coarse, fine and
/// fine-grained label spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Coarse,
    Fine,
    FineGrained,
}

impl Profile {
    /// `(delta_d, gamma, lambda_im)`
    pub fn values(self) -> (f64, f64, f64) {
        match self {
            Profile::Coarse => (0.20, 0.015, 2.0),
            Profile::Fine => (0.25, 0.03, 2.0),
            Profile::FineGrained => (0.30, 0.015, 15.0),
        }
    }

    pub fn apply(self, config: &mut RunConfig) {
        let (delta_d, gamma, lambda_im) = self.values();
        config.delta_d = delta_d;
        config.gamma = gamma;
        config.lambda_im = lambda_im;
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Profile::Coarse),
            "fine" => Ok(Profile::Fine),
            "finegrained" | "fine-grained" | "fine_grained" => Ok(Profile::FineGrained),
            other => Err(Error::Config(format!("unknown profile '{other}' (coarse, fine, finegrained)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Coarse => "coarse",
            Profile::Fine => "fine",
            Profile::FineGrained => "finegrained",
        })
    }
}

impl RunConfig {
    pub fn with_profile(profile: Profile) -> Self {
        let mut c = Self::default();
        profile.apply(&mut c);
        c
    }

    pub fn temperatures(&self) -> Temperatures {
        Temperatures { tau: self.tau, tau_tilde: self.tau_tilde.unwrap_or(10.0 * self.tau) }
    }

    pub fn objective(&self) -> ObjectiveParams {
        ObjectiveParams {
            temperatures: self.temperatures(),
            beta: self.beta,
            lambda_im: self.lambda_im,
            lambda_ta: self.lambda_ta,
            lambda_ric: self.lambda_ric,
        }
    }

    pub fn filter(&self) -> FilterParams {
        FilterParams { delta_d: self.delta_d, gamma: self.gamma, require_cls_noun: self.require_cls_noun }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.lr_adapter > 0.0) || !(self.lr_shift > 0.0) {
            return fail("learning rates must be positive");
        }
        let t = self.temperatures();
        if !(t.tau > 0.0) || !(t.tau_tilde > 0.0) {
            return fail("temperatures must be positive");
        }
        if [self.lambda_im, self.lambda_ta, self.lambda_ric].iter().any(|l| !(*l >= 0.0)) {
            return fail("loss weights must be non-negative");
        }
        if !self.delta_d.is_finite() || !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return fail("delta_d must be finite and gamma finite and non-negative");
        }
        if ![self.alpha, self.beta, self.adapter_scale].iter().all(|v| v.is_finite()) {
            return fail("alpha, beta and adapter_scale must be finite");
        }
        if self.few_shot_k == Some(0) {
            return fail("few_shot_k must be at least 1");
        }
        Ok(())
    }

    /// Applies a `key=value` override. Values are parsed as JSON, falling
    /// back to a plain string, and must type-check against the field.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut map = match serde_json::to_value(&*self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        if !map.contains_key(key) {
            return Err(Error::Config(format!("unknown config key '{key}'")));
        }
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        map.insert(key.to_string(), parsed);
        *self = serde_json::from_value(Value::Object(map))
            .map_err(|e| Error::Config(format!("bad value for '{key}': {e}")))?;
        Ok(())
    }

    /// Applies a `key=value` string.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{pair}' is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    /// Overlays the keys present in a JSON object onto this config.
    pub fn merge_json(&mut self, json: &str) -> Result<()> {
        let overlay: Value = serde_json::from_str(json).map_err(|e| Error::Config(format!("config file: {e}")))?;
        let Value::Object(overlay) = overlay else {
            return Err(Error::Config("config file must hold a JSON object".into()));
        };
        let mut map = match serde_json::to_value(&*self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        for (k, v) in overlay {
            if !map.contains_key(&k) {
                return Err(Error::Config(format!("unknown config key '{k}'")));
            }
            map.insert(k, v);
        }
        *self = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(format!("config file: {e}")))?;
        Ok(())
    }
}
