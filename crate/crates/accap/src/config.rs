//! Flat run configuration: every tunable of the pipeline as one key-value
//! document. Command-line flags override config-file values, which override
//! the defaults. All values are range-checked at resolution time.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::training::{AdvantageMode, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub d_h: usize,
    pub d_e: usize,
    pub d_emb: usize,
    pub feat_dim: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Margin of the embedding ranking loss.
    pub gamma: f64,
    /// Mix weight of the logged-only embedding diagnostic.
    pub alpha: f64,
    /// Likelihood weight in value-guided beam scoring.
    pub beta: f64,
    /// Beam width.
    pub k: usize,
    pub max_len: usize,
    pub advantage_mode: AdvantageMode,
    pub entropy_weight: f64,
    pub epochs_policy: u32,
    pub epochs_reward: u32,
    pub epochs_value: u32,
    pub epochs_joint: u32,
    pub batch_size: usize,
    pub value_hidden_layers: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d_h: 64,
            d_e: 64,
            d_emb: 64,
            feat_dim: 12,
            lr: 5e-4,
            lr_decay: 0.9,
            gamma: 0.2,
            alpha: 0.5,
            beta: 0.4,
            k: 3,
            max_len: 16,
            advantage_mode: AdvantageMode::Terminal,
            entropy_weight: 0.0,
            epochs_policy: 8,
            epochs_reward: 10,
            epochs_value: 3,
            epochs_joint: 5,
            batch_size: 16,
            value_hidden_layers: 2,
            seed: 42,
        }
    }
}

impl RunConfig {
    /// The full-scale preset: 512-wide hidden, embedding and reward spaces.
    pub fn paper512() -> Self {
        RunConfig {
            d_h: 512,
            d_e: 512,
            d_emb: 512,
            ..RunConfig::default()
        }
    }

    /// Layered resolution: defaults, then the config file, then flag
    /// overrides, each expressed as a partial JSON object.
    pub fn resolve(file_overlay: Option<&Value>, flag_overlay: &Value) -> Result<Self> {
        let mut doc = serde_json::to_value(RunConfig::default()).expect("default serializes");
        if let Some(file) = file_overlay {
            merge(&mut doc, file)?;
        }
        merge(&mut doc, flag_overlay)?;
        let cfg: RunConfig = serde_json::from_value(doc)
            .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_file(path: &Path) -> Result<Value> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if !value.is_object() {
            return Err(Error::Config(format!(
                "{}: config file must be a JSON object",
                path.display()
            )));
        }
        Ok(value)
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, what: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(what.to_string()))
            }
        }
        check(self.d_h >= 1, "d_h must be >= 1")?;
        check(self.d_e >= 1, "d_e must be >= 1")?;
        check(self.d_emb >= 1, "d_emb must be >= 1")?;
        check(self.feat_dim >= 1, "feat_dim must be >= 1")?;
        check(self.lr > 0.0, "lr must be > 0")?;
        check(
            self.lr_decay > 0.0 && self.lr_decay <= 1.0,
            "lr_decay must lie in (0, 1]",
        )?;
        check(self.gamma > 0.0 && self.gamma < 1.0, "gamma must lie in (0, 1)")?;
        check(self.alpha > 0.0 && self.alpha < 1.0, "alpha must lie in (0, 1)")?;
        check((0.0..=1.0).contains(&self.beta), "beta must lie in [0, 1]")?;
        check(self.k >= 1, "k must be >= 1")?;
        check(self.max_len >= 2, "max_len must be >= 2")?;
        check(self.entropy_weight >= 0.0, "entropy_weight must be >= 0")?;
        check(self.batch_size >= 1, "batch_size must be >= 1")?;
        check(
            (2..=3).contains(&self.value_hidden_layers),
            "value_hidden_layers must be 2 or 3",
        )?;
        Ok(())
    }

    /// Stage-level training settings derived from the flat document.
    pub fn train_config(&self, epochs: u32) -> TrainConfig {
        TrainConfig {
            base_lr: self.lr,
            lr_decay: self.lr_decay,
            epochs,
            batch_size: self.batch_size,
            max_len: self.max_len,
            advantage_mode: self.advantage_mode,
            entropy_weight: self.entropy_weight,
            seed: self.seed,
        }
    }
}

fn merge(doc: &mut Value, overlay: &Value) -> Result<()> {
    let (Value::Object(doc), Value::Object(overlay)) = (doc, overlay) else {
        return Err(Error::Config("configuration must be a JSON object".into()));
    };
    for (key, value) in overlay {
        if !doc.contains_key(key) {
            return Err(Error::Config(format!("unknown configuration key {key:?}")));
        }
        doc.insert(key.clone(), value.clone());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_resolve_and_validate() {
        let cfg = RunConfig::resolve(None, &json!({})).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.lr, 5e-4);
        assert_eq!(cfg.d_h, 64);
    }

    #[test]
    fn paper512_preset_widens_every_space() {
        let cfg = RunConfig::paper512();
        assert_eq!((cfg.d_h, cfg.d_e, cfg.d_emb), (512, 512, 512));
        cfg.validate().unwrap();
    }

    #[test]
    fn flag_beats_file_beats_default_per_key() {
        // Exercised key by key over the whole document.
        let defaults = serde_json::to_value(RunConfig::default()).unwrap();
        let file_vals = json!({
            "d_h": 32, "d_e": 24, "d_emb": 40, "feat_dim": 12,
            "lr": 1e-3, "lr_decay": 0.8, "gamma": 0.3, "alpha": 0.4,
            "beta": 0.5, "k": 5, "max_len": 10,
            "advantage_mode": "td0", "entropy_weight": 0.01,
            "epochs_policy": 3, "epochs_reward": 4, "epochs_value": 5,
            "epochs_joint": 6, "batch_size": 8, "value_hidden_layers": 3,
            "seed": 7
        });
        let flag_vals = json!({
            "d_h": 16, "d_e": 12, "d_emb": 20, "feat_dim": 12,
            "lr": 2e-3, "lr_decay": 0.7, "gamma": 0.4, "alpha": 0.3,
            "beta": 0.6, "k": 7, "max_len": 8,
            "advantage_mode": "terminal", "entropy_weight": 0.02,
            "epochs_policy": 9, "epochs_reward": 8, "epochs_value": 7,
            "epochs_joint": 2, "batch_size": 4, "value_hidden_layers": 2,
            "seed": 11
        });
        for key in defaults.as_object().unwrap().keys() {
            // default only
            let cfg = RunConfig::resolve(None, &json!({})).unwrap();
            let base = serde_json::to_value(&cfg).unwrap();
            assert_eq!(base[key], defaults[key], "default {key}");
            // file overrides default
            let one_file = json!({ key.clone(): file_vals[key].clone() });
            let cfg = RunConfig::resolve(Some(&one_file), &json!({})).unwrap();
            let got = serde_json::to_value(&cfg).unwrap();
            assert_eq!(got[key], file_vals[key], "file {key}");
            // flag overrides both
            let one_flag = json!({ key.clone(): flag_vals[key].clone() });
            let cfg = RunConfig::resolve(Some(&one_file), &one_flag).unwrap();
            let got = serde_json::to_value(&cfg).unwrap();
            assert_eq!(got[key], flag_vals[key], "flag {key}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::resolve(None, &json!({"learning_rate": 0.1})).is_err());
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        assert!(RunConfig::resolve(None, &json!({"gamma": 0.0})).is_err());
        assert!(RunConfig::resolve(None, &json!({"gamma": 1.0})).is_err());
        assert!(RunConfig::resolve(None, &json!({"beta": 1.5})).is_err());
        assert!(RunConfig::resolve(None, &json!({"lr": 0.0})).is_err());
        assert!(RunConfig::resolve(None, &json!({"max_len": 1})).is_err());
        assert!(RunConfig::resolve(None, &json!({"value_hidden_layers": 4})).is_err());
        assert!(RunConfig::resolve(None, &json!({"k": 0})).is_err());
    }
}
