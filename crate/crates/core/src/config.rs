//! Run configuration.
//!
//! Configs are JSON objects whose keys match the field names below. Missing
//! keys take their defaults; unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::TrainSettings;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Iid,
    Dirichlet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Shared filter aggregated over every client's cached filter.
    Feddiv,
    /// Shared filter aggregated over this round's participants only.
    FeddivDegraded,
    /// Each client filters with its own latest local mixture.
    FeddivLocalFilter,
    /// Plain federated averaging, no filtering.
    FedavgBaseline,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Feddiv,
        Variant::FedavgBaseline,
        Variant::FeddivDegraded,
        Variant::FeddivLocalFilter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Feddiv => "feddiv",
            Variant::FeddivDegraded => "feddiv_degraded",
            Variant::FeddivLocalFilter => "feddiv_local_filter",
            Variant::FedavgBaseline => "fedavg_baseline",
        }
    }

    pub fn filters(self) -> bool {
        self != Variant::FedavgBaseline
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // synthetic data
    pub num_samples: usize,
    pub test_fraction: f64,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub class_separation: f64,

    // federation
    pub num_clients: usize,
    pub client_fraction: f64,
    pub total_rounds: usize,
    pub warmup_iterations: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,

    // label noise
    pub noise_client_prob: f64,
    pub noise_lower_bound: f64,

    // filtering, relabeling and re-selection
    pub relabel_threshold: f64,
    pub debias_factor: f64,
    pub bias_momentum: f64,
    pub mixup_alpha: f64,
    pub reg_weight: f64,
    pub noisy_client_threshold: f64,
    pub clean_posterior_threshold: f64,
    pub em_max_iters: usize,
    pub em_tolerance: f64,
    /// Min-max normalize losses before filtering.
    pub normalize_losses: bool,

    pub partition_mode: PartitionMode,
    pub dirichlet_p: f64,
    pub dirichlet_alpha: f64,

    pub algorithm_variant: Variant,
    pub seed: u64,
    pub model_hidden_sizes: Vec<usize>,
    /// Training rounds (1-based) at which participants dump confusion matrices.
    pub confusion_rounds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            num_samples: 5000,
            test_fraction: 0.2,
            num_classes: 4,
            feature_dim: 2,
            class_separation: 6.0,
            num_clients: 20,
            client_fraction: 0.25,
            total_rounds: 60,
            warmup_iterations: 2,
            local_epochs: 5,
            batch_size: 10,
            learning_rate: 0.03,
            noise_client_prob: 0.6,
            noise_lower_bound: 0.5,
            relabel_threshold: 0.75,
            debias_factor: 0.5,
            bias_momentum: 0.2,
            mixup_alpha: 1.0,
            reg_weight: 0.0,
            noisy_client_threshold: 0.1,
            clean_posterior_threshold: 0.5,
            em_max_iters: 100,
            em_tolerance: 1e-6,
            normalize_losses: false,
            partition_mode: PartitionMode::Iid,
            dirichlet_p: 0.7,
            dirichlet_alpha: 10.0,
            algorithm_variant: Variant::Feddiv,
            seed: 0,
            model_hidden_sizes: vec![32],
            confusion_rounds: Vec::new(),
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

fn unit_interval(field: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, format!("= {v} must lie in [0, 1]")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Check every semantic constraint; the error names the first bad field.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(invalid("num_classes", "must be at least 2"));
        }
        if self.feature_dim == 0 {
            return Err(invalid("feature_dim", "must be positive"));
        }
        if self.num_samples < self.num_classes {
            return Err(invalid("num_samples", "must be at least num_classes"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(invalid("test_fraction", "must lie in (0, 1)"));
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return Err(invalid("class_separation", "must be finite and non-negative"));
        }
        if self.num_clients == 0 {
            return Err(invalid("num_clients", "must be positive"));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(invalid(
                "client_fraction",
                format!("= {} must lie in (0, 1]", self.client_fraction),
            ));
        }
        if self.client_fraction * (self.num_clients as f64) < 1.0 {
            return Err(invalid(
                "client_fraction",
                "selects no client per round (client_fraction * num_clients < 1)",
            ));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        unit_interval("noise_client_prob", self.noise_client_prob)?;
        if !(0.0..1.0).contains(&self.noise_lower_bound) {
            return Err(invalid("noise_lower_bound", "must lie in [0, 1)"));
        }
        unit_interval("relabel_threshold", self.relabel_threshold)?;
        if !self.debias_factor.is_finite() {
            return Err(invalid("debias_factor", "must be finite"));
        }
        unit_interval("bias_momentum", self.bias_momentum)?;
        if !(self.mixup_alpha >= 0.0 && self.mixup_alpha.is_finite()) {
            return Err(invalid("mixup_alpha", "must be finite and non-negative"));
        }
        if !(self.reg_weight >= 0.0 && self.reg_weight.is_finite()) {
            return Err(invalid("reg_weight", "must be finite and non-negative"));
        }
        unit_interval("noisy_client_threshold", self.noisy_client_threshold)?;
        unit_interval("clean_posterior_threshold", self.clean_posterior_threshold)?;
        if self.em_max_iters == 0 {
            return Err(invalid("em_max_iters", "must be positive"));
        }
        if !(self.em_tolerance > 0.0) {
            return Err(invalid("em_tolerance", "must be positive"));
        }
        if !(self.dirichlet_p > 0.0 && self.dirichlet_p <= 1.0) {
            return Err(invalid("dirichlet_p", "must lie in (0, 1]"));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(invalid("dirichlet_alpha", "must be positive"));
        }
        if self.model_hidden_sizes.contains(&0) {
            return Err(invalid("model_hidden_sizes", "widths must be positive"));
        }
        Ok(())
    }

    /// Clients selected per round: `round(omega * K)` clamped to `[1, K]`.
    pub fn clients_per_round(&self) -> usize {
        ((self.client_fraction * self.num_clients as f64).round() as usize)
            .clamp(1, self.num_clients)
    }

    /// Warm-up rounds: `ceil(warmup_iterations / omega)`.
    pub fn warmup_rounds(&self) -> usize {
        // the small slack keeps e.g. 5 / 0.1 = 50.000000000000007 at 50
        ((self.warmup_iterations as f64 / self.client_fraction) - 1e-9).ceil().max(0.0) as usize
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.feature_dim];
        sizes.extend(&self.model_hidden_sizes);
        sizes.push(self.num_classes);
        sizes
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            mixup_alpha: self.mixup_alpha,
            reg_weight: self.reg_weight,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Apply `key=value` overrides. Values are parsed as JSON when possible and
    /// taken as strings otherwise.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> std::result::Result<Self, String> {
        let mut value = serde_json::to_value(self).map_err(|e| e.to_string())?;
        let map = value.as_object_mut().expect("config is an object");
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| format!("override `{item}` is not of the form key=value"))?;
            let key = key.trim();
            if !map.contains_key(key) {
                return Err(format!("unknown config field `{key}`"));
            }
            let parsed = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            map.insert(key.to_string(), parsed);
        }
        serde_json::from_value(value).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn zero_fraction_names_the_field() {
        let cfg = RunConfig {
            client_fraction: 0.0,
            ..RunConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("client_fraction"), "{err}");
    }

    #[test]
    fn fraction_must_select_someone() {
        let cfg = RunConfig {
            num_clients: 4,
            client_fraction: 0.2,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_json(r#"{"num_clientz": 3}"#).is_err());
        let cfg = RunConfig::from_json(r#"{"num_clients": 3, "client_fraction": 1.0}"#).unwrap();
        assert_eq!(cfg.num_clients, 3);
        assert_eq!(cfg.local_epochs, RunConfig::default().local_epochs);
    }

    #[test]
    fn round_counts() {
        let cfg = RunConfig {
            num_clients: 100,
            client_fraction: 0.1,
            warmup_iterations: 5,
            ..RunConfig::default()
        };
        assert_eq!(cfg.clients_per_round(), 10);
        assert_eq!(cfg.warmup_rounds(), 50);
        let cfg = RunConfig {
            warmup_iterations: 0,
            ..cfg
        };
        assert_eq!(cfg.warmup_rounds(), 0);
        let cfg = RunConfig {
            num_clients: 20,
            client_fraction: 0.25,
            warmup_iterations: 2,
            ..RunConfig::default()
        };
        assert_eq!(cfg.warmup_rounds(), 8);
        let cfg = RunConfig {
            client_fraction: 0.3,
            warmup_iterations: 1,
            ..cfg
        };
        assert_eq!(cfg.warmup_rounds(), 4);
    }

    #[test]
    fn overrides() {
        let cfg = RunConfig::default()
            .with_overrides(&["seed=9", "algorithm_variant=fedavg_baseline", "model_hidden_sizes=[8,8]"])
            .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.algorithm_variant, Variant::FedavgBaseline);
        assert_eq!(cfg.model_hidden_sizes, vec![8, 8]);
        assert!(RunConfig::default().with_overrides(&["nope=1"]).is_err());
        assert!(RunConfig::default().with_overrides(&["seed"]).is_err());
    }

    #[test]
    fn json_round_trip_and_hash() {
        let cfg = RunConfig {
            seed: 77,
            ..RunConfig::default()
        };
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(cfg.hash(), RunConfig::default().hash());
        assert_eq!(cfg.hash().len(), 64);
    }
}
