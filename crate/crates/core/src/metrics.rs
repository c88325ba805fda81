//! Evaluation quantities and the per-round record written to the run log.

use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, forward_logits, ModelParams};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::noise_filter::GmmParams;

/// Fraction of samples whose predicted clean/noisy status matches the truth.
pub fn filtering_accuracy(predicted_clean: &[bool], clean_mask: &[bool]) -> Result<f64> {
    if predicted_clean.len() != clean_mask.len() {
        return Err(Error::DimensionMismatch {
            expected: clean_mask.len(),
            actual: predicted_clean.len(),
        });
    }
    if clean_mask.is_empty() {
        return Ok(1.0);
    }
    let hits = predicted_clean
        .iter()
        .zip(clean_mask)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / clean_mask.len() as f64)
}

/// Fraction of samples whose argmax prediction equals the true label.
pub fn test_accuracy(model: &ModelParams, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidDataset("empty test set".into()));
    }
    let mut correct = 0;
    for i in 0..test.len() {
        if argmax(&forward_logits(model, test.feature(i))?) == test.true_labels()[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Unweighted mean over participants of `||local - global||^2`.
pub fn training_stability(locals: &[&ModelParams], global: &ModelParams) -> Result<f64> {
    if locals.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for local in locals {
        if !local.same_shape(global) {
            return Err(Error::DimensionMismatch {
                expected: global.values().len(),
                actual: local.values().len(),
            });
        }
        total += local
            .values()
            .iter()
            .zip(global.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / locals.len() as f64)
}

/// `C x C` counts indexed `[true][assigned]`.
pub fn confusion_matrix(true_labels: &[usize], assigned: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; num_classes]; num_classes];
    for (&t, &a) in true_labels.iter().zip(assigned) {
        m[t][a] += 1;
    }
    m
}

/// Which stage of training produced a round record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Train,
}

/// Label matrices of one participant (see [`confusion_matrix`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionDump {
    pub given: Vec<Vec<usize>>,
    /// Clean samples with their given labels plus relabeled samples.
    pub relabeled: Vec<Vec<usize>>,
    /// The re-selected set of the last local epoch.
    pub reselected: Vec<Vec<usize>>,
}

/// What one participant did in one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundStats {
    pub client: usize,
    pub sample_count: usize,
    pub true_noise_level: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub estimated_noise_level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub filtering_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clean: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noisy: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub relabeled: Option<usize>,
    /// Fraction of relabeled samples whose pseudo-label is the true label.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub relabel_accuracy: Option<f64>,
    /// Size of the re-selected set in the last local epoch.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reselected: Option<usize>,
    /// Label accuracy (vs. truth) of clean plus relabeled candidates.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub candidate_label_accuracy: Option<f64>,
    /// Label accuracy of the last epoch's re-selected set.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reselected_label_accuracy: Option<f64>,
    pub starved_epochs: usize,
    pub starved_round: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub local_filter: Option<GmmParams>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub em_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub confusion: Option<ConfusionDump>,
}

impl ClientRoundStats {
    pub fn plain(client: usize, sample_count: usize, true_noise_level: f64) -> Self {
        Self {
            client,
            sample_count,
            true_noise_level,
            estimated_noise_level: None,
            filtering_accuracy: None,
            clean: None,
            noisy: None,
            relabeled: None,
            relabel_accuracy: None,
            reselected: None,
            candidate_label_accuracy: None,
            reselected_label_accuracy: None,
            starved_epochs: 0,
            starved_round: false,
            local_filter: None,
            em_iterations: None,
            confusion: None,
        }
    }
}

/// Metrics of one communication round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub phase: Phase,
    pub test_accuracy: f64,
    pub training_stability: f64,
    pub participants: Vec<ClientRoundStats>,
    /// Shared filter at the end of the round, for filtering variants.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub global_filter: Option<GmmParams>,
    /// Excluded from the log so identical runs stay byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RoundRecord {
    /// Mean filtering accuracy over participants that ran the filter.
    pub fn mean_filtering_accuracy(&self) -> Option<f64> {
        mean(self.participants.iter().filter_map(|p| p.filtering_accuracy))
    }
}

pub fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}
