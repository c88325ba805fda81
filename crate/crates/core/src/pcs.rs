//! Predictive-consistency sample re-selection.
//!
//! A candidate sample is kept when the global model's prediction agrees with
//! the local model's prediction after the local class bias has been divided
//! out of the logits.

use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, forward_logits, predict_proba, ModelParams, Sample};
use crate::error::{Error, Result};

/// Smallest bias entry fed to the logarithm.
pub const BIAS_CLAMP: f64 = 1e-12;

/// Client-cached estimate of the local model's class bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientBias(Vec<f64>);

impl ClientBias {
    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0 / num_classes as f64; num_classes])
    }

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDataset(format!(
                "bias {probs:?} is not a probability vector"
            )));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

/// `logits - xi * ln(max(bias, BIAS_CLAMP))`.
pub fn debias_logits(logits: &[f64], bias: &ClientBias, xi: f64) -> Vec<f64> {
    logits
        .iter()
        .zip(bias.probs())
        .map(|(z, p)| z - xi * p.max(BIAS_CLAMP).ln())
        .collect()
}

/// Keep the positions of `candidates` whose global label equals the de-biased
/// local label. `global_labels[i]` is the global model's argmax for
/// `candidates[i]`; it does not change within a round so callers compute it
/// once.
pub fn reselect_with_global_labels(
    candidates: &[Sample<'_>],
    global_labels: &[usize],
    local: &ModelParams,
    bias: &ClientBias,
    xi: f64,
) -> Result<Vec<usize>> {
    let mut kept = Vec::new();
    for (i, (sample, &global)) in candidates.iter().zip(global_labels).enumerate() {
        let local_label = argmax(&debias_logits(&forward_logits(local, sample.x)?, bias, xi));
        if local_label == global {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Global-model argmax label of every candidate.
pub fn global_labels(candidates: &[Sample<'_>], global: &ModelParams) -> Result<Vec<usize>> {
    candidates
        .iter()
        .map(|s| Ok(argmax(&forward_logits(global, s.x)?)))
        .collect()
}

/// Candidates on which the global and de-biased local predictions agree.
/// Labels are carried through unchanged.
pub fn reselect<'a>(
    candidates: &[Sample<'a>],
    global: &ModelParams,
    local: &ModelParams,
    bias: &ClientBias,
    xi: f64,
) -> Result<Vec<Sample<'a>>> {
    let labels = global_labels(candidates, global)?;
    let kept = reselect_with_global_labels(candidates, &labels, local, bias, xi)?;
    Ok(kept.into_iter().map(|i| candidates[i]).collect())
}

/// Re-selected samples for a client judged noisy, otherwise its full data.
pub fn choose_training_set<'s, T>(
    delta_hat: f64,
    threshold: f64,
    reselected: &'s [T],
    original: &'s [T],
) -> &'s [T] {
    if delta_hat >= threshold {
        reselected
    } else {
        original
    }
}

/// `m * bias + (1 - m) * mean_x p(x; model)` over the client's samples.
pub fn update_bias(
    bias: &ClientBias,
    model: &ModelParams,
    samples: &[Sample<'_>],
    momentum: f64,
) -> Result<ClientBias> {
    if samples.is_empty() {
        return Err(Error::EmptyTrainingData);
    }
    let classes = bias.probs().len();
    let mut mean = vec![0.0; classes];
    for s in samples {
        for (m, p) in mean.iter_mut().zip(predict_proba(model, s.x)?) {
            *m += p;
        }
    }
    let n = samples.len() as f64;
    let mut next: Vec<f64> = bias
        .probs()
        .iter()
        .zip(&mean)
        .map(|(old, m)| momentum * old + (1.0 - momentum) * m / n)
        .collect();
    // renormalize away rounding drift
    let total: f64 = next.iter().sum();
    next.iter_mut().for_each(|v| *v /= total);
    Ok(ClientBias(next))
}
