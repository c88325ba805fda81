//! Two-component Gaussian mixtures over per-sample losses.
//!
//! Component 0 is the low-loss ("clean") component and component 1 the
//! high-loss ("noisy") one. Clients fit a mixture by EM, the server caches one
//! mixture per client and averages them into the shared filter.

use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, predict_proba, ModelParams, Sample};
use crate::error::{Error, Result};

/// Lower bound applied to every component variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Means, variances and mixing weights of a two-component mixture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub weights: [f64; 2],
}

impl GmmParams {
    pub fn new(means: [f64; 2], variances: [f64; 2], weights: [f64; 2]) -> Result<Self> {
        let params = Self {
            means,
            variances,
            weights,
        };
        params.validate()?;
        Ok(params)
    }

    /// Initial cached filter before any client reports: anchored to the loss
    /// of a uniform prediction, `ln C`.
    pub fn cold_start(num_classes: usize) -> Self {
        let uniform_loss = (num_classes as f64).ln();
        Self {
            means: [0.5 * uniform_loss, 2.0 * uniform_loss],
            variances: [1.0, 1.0],
            weights: [0.5, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .means
            .iter()
            .chain(&self.variances)
            .chain(&self.weights)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidFilter("non-finite parameter".into()));
        }
        if self.weights.iter().any(|w| !(0.0..=1.0).contains(w))
            || (self.weights[0] + self.weights[1] - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidFilter(format!(
                "mixing weights {:?} are not a distribution",
                self.weights
            )));
        }
        if self.variances.iter().any(|&v| v < VARIANCE_FLOOR) {
            return Err(Error::InvalidFilter(format!(
                "variances {:?} below floor {VARIANCE_FLOOR}",
                self.variances
            )));
        }
        if self.means[0] > self.means[1] {
            return Err(Error::InvalidFilter(format!(
                "means {:?} not ordered clean-first",
                self.means
            )));
        }
        Ok(())
    }

    /// `ln(pi_g * N(loss; mu_g, var_g))` for both components.
    fn log_joint(&self, loss: f64) -> [f64; 2] {
        [0, 1].map(|g| {
            let var = self.variances[g];
            let diff = loss - self.means[g];
            self.weights[g].ln() - 0.5 * (LN_2PI + var.ln()) - diff * diff / (2.0 * var)
        })
    }

    /// Swap components so the smaller mean comes first.
    fn ordered(mut self) -> Self {
        if self.means[0] > self.means[1] {
            self.means.swap(0, 1);
            self.variances.swap(0, 1);
            self.weights.swap(0, 1);
        }
        self
    }

    fn max_abs_diff(&self, other: &Self) -> f64 {
        let a = self.means.iter().chain(&self.variances).chain(&self.weights);
        let b = other.means.iter().chain(&other.variances).chain(&other.weights);
        a.zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

/// Posterior probability that `loss` came from the clean component.
pub fn gmm_posterior_clean(loss: f64, filter: &GmmParams) -> f64 {
    let [clean, noisy] = filter.log_joint(loss);
    if clean == f64::NEG_INFINITY {
        return 0.0;
    }
    if noisy == f64::NEG_INFINITY {
        return 1.0;
    }
    // 1 / (1 + exp(noisy - clean)), written to avoid overflow
    let d = noisy - clean;
    if d > 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}

/// Total log-likelihood `sum_i ln sum_g pi_g N(l_i; mu_g, var_g)`.
pub fn log_likelihood(losses: &[f64], filter: &GmmParams) -> f64 {
    losses
        .iter()
        .map(|&l| {
            let [a, b] = filter.log_joint(l);
            log_add(a, b)
        })
        .sum()
}

fn log_add(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Outcome of a local EM fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub params: GmmParams,
    pub iterations: usize,
    pub converged: bool,
    /// Every loss had the same value; the fit is the fixed degenerate filter.
    pub degenerate: bool,
    /// Log-likelihood before the first update and after every EM step.
    pub log_likelihoods: Vec<f64>,
}

/// EM for a two-component mixture, started from `init`.
///
/// Stops when the largest absolute parameter change falls below `tolerance`
/// or after `max_iters` steps. A component whose responsibilities sum to zero
/// keeps its previous mean and variance.
pub fn fit_local_gmm(
    losses: &[f64],
    init: &GmmParams,
    max_iters: usize,
    tolerance: f64,
) -> Result<GmmFit> {
    if losses.is_empty() {
        return Err(Error::InvalidFilter("cannot fit a filter to zero losses".into()));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidFilter("losses must be finite".into()));
    }
    init.validate()?;

    let (lo, hi) = losses
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    if hi - lo <= 1e-12 {
        let value = losses[0];
        let params = GmmParams {
            means: [value, value],
            variances: [VARIANCE_FLOOR, VARIANCE_FLOOR],
            weights: [1.0, 0.0],
        };
        return Ok(GmmFit {
            params,
            iterations: 0,
            converged: true,
            degenerate: true,
            log_likelihoods: vec![log_likelihood(losses, &params)],
        });
    }

    let n = losses.len() as f64;
    let mut params = *init;
    let mut trace = vec![log_likelihood(losses, &params)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        // E step
        let resp: Vec<f64> = losses.iter().map(|&l| gmm_posterior_clean(l, &params)).collect();
        let mass = [resp.iter().sum::<f64>(), resp.iter().map(|r| 1.0 - r).sum::<f64>()];
        // M step
        let mut next = params;
        for g in 0..2 {
            let weight = |r: f64| if g == 0 { r } else { 1.0 - r };
            if mass[g] > 0.0 {
                let mean = losses
                    .iter()
                    .zip(&resp)
                    .map(|(l, &r)| weight(r) * l)
                    .sum::<f64>()
                    / mass[g];
                let second: f64 = losses
                    .iter()
                    .zip(&resp)
                    .map(|(l, &r)| weight(r) * (l - mean) * (l - mean))
                    .sum();
                next.means[g] = mean;
                next.variances[g] = (second / mass[g]).max(VARIANCE_FLOOR);
            }
            next.weights[g] = mass[g] / n;
        }
        let total = next.weights[0] + next.weights[1];
        next.weights = next.weights.map(|w| w / total);

        let delta = next.max_abs_diff(&params);
        params = next;
        trace.push(log_likelihood(losses, &params));
        if delta < tolerance {
            converged = true;
            break;
        }
    }
    Ok(GmmFit {
        params: params.ordered(),
        iterations,
        converged,
        degenerate: false,
        log_likelihoods: trace,
    })
}

/// One cached client filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterEntry {
    pub params: GmmParams,
    pub sample_count: usize,
    /// Round of the last upload; `None` while still at the cold start.
    pub last_updated: Option<u64>,
}

/// Server cache of the latest filter from every client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    entries: Vec<FilterEntry>,
}

impl FilterBank {
    pub fn cold_start(sample_counts: &[usize], num_classes: usize) -> Self {
        let params = GmmParams::cold_start(num_classes);
        Self {
            entries: sample_counts
                .iter()
                .map(|&sample_count| FilterEntry {
                    params,
                    sample_count,
                    last_updated: None,
                })
                .collect(),
        }
    }

    pub fn from_entries(entries: Vec<FilterEntry>) -> Result<Self> {
        for e in &entries {
            e.params.validate()?;
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FilterEntry] {
        &self.entries
    }

    pub fn get(&self, client: usize) -> &FilterEntry {
        &self.entries[client]
    }

    /// Replace the cached filter of `client`.
    pub fn update(&mut self, client: usize, params: GmmParams, round: u64) -> Result<()> {
        params.validate()?;
        let entry = &mut self.entries[client];
        entry.params = params;
        entry.last_updated = Some(round);
        Ok(())
    }
}

/// Sample-count weighted average over every cached filter.
pub fn aggregate_filters(bank: &FilterBank) -> Result<GmmParams> {
    aggregate_filter_entries(bank.entries.iter())
}

/// Sample-count weighted average over the cached filters of `clients` only.
pub fn aggregate_filters_over(bank: &FilterBank, clients: &[usize]) -> Result<GmmParams> {
    aggregate_filter_entries(clients.iter().map(|&k| &bank.entries[k]))
}

fn aggregate_filter_entries<'a>(
    entries: impl Iterator<Item = &'a FilterEntry> + Clone,
) -> Result<GmmParams> {
    let total: usize = entries.clone().map(|e| e.sample_count).sum();
    if total == 0 {
        return Err(Error::ZeroTotalWeight);
    }
    let mut out = GmmParams {
        means: [0.0; 2],
        variances: [0.0; 2],
        weights: [0.0; 2],
    };
    for e in entries.filter(|e| e.sample_count > 0) {
        let w = e.sample_count as f64 / total as f64;
        for g in 0..2 {
            out.means[g] += w * e.params.means[g];
            out.variances[g] += w * e.params.variances[g];
            out.weights[g] += w * e.params.weights[g];
        }
    }
    Ok(out)
}

/// Clean/noisy partition of one client's samples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSplit {
    pub clean: Vec<usize>,
    pub noisy: Vec<usize>,
}

impl FilterSplit {
    /// Estimated noise level `|noisy| / n`; zero for an empty client.
    pub fn noise_level(&self) -> f64 {
        let n = self.clean.len() + self.noisy.len();
        if n == 0 {
            0.0
        } else {
            self.noisy.len() as f64 / n as f64
        }
    }

    /// `true` where the sample was judged clean, indexed by position.
    pub fn predicted_clean(&self) -> Vec<bool> {
        let mut mask = vec![false; self.clean.len() + self.noisy.len()];
        for &i in &self.clean {
            mask[i] = true;
        }
        mask
    }
}

/// Sample `i` is clean iff its clean posterior is at least `threshold`.
pub fn filter_split(losses: &[f64], filter: &GmmParams, threshold: f64) -> FilterSplit {
    let (clean, noisy) = (0..losses.len())
        .partition(|&i| gmm_posterior_clean(losses[i], filter) >= threshold);
    FilterSplit { clean, noisy }
}

/// A noisy sample re-labeled with the global model's prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relabeled {
    pub index: usize,
    pub label: usize,
}

/// Pseudo-label every sample of `noisy` whose top global-model probability
/// reaches `zeta`; the rest are dropped.
pub fn relabel(
    samples: &[Sample<'_>],
    noisy: &[usize],
    global: &ModelParams,
    zeta: f64,
) -> Result<Vec<Relabeled>> {
    let mut out = Vec::new();
    for &index in noisy {
        let probs = predict_proba(global, samples[index].x)?;
        let label = argmax(&probs);
        if probs[label] >= zeta {
            out.push(Relabeled { index, label });
        }
    }
    Ok(out)
}

/// Min-max rescale losses into `[0, 1]` (all zeros when they are constant).
pub fn normalize_losses(losses: &[f64]) -> Vec<f64> {
    let (lo, hi) = losses
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    if !(hi > lo) {
        return vec![0.0; losses.len()];
    }
    losses.iter().map(|l| (l - lo) / (hi - lo)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, SeedRoot};
    use proptest::prelude::*;
    use rand::Rng;

    fn gmm(means: [f64; 2], variances: [f64; 2], weights: [f64; 2]) -> GmmParams {
        GmmParams::new(means, variances, weights).unwrap()
    }

    #[test]
    fn symmetric_filter_is_undecided() {
        let f = gmm([1.0, 1.0], [0.3, 0.3], [0.5, 0.5]);
        for loss in [0.0, 0.5, 1.0, 7.0] {
            assert!((gmm_posterior_clean(loss, &f) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_priors() {
        let f = gmm([0.2, 1.0], [0.1, 0.1], [1.0, 0.0]);
        assert_eq!(gmm_posterior_clean(50.0, &f), 1.0);
        let f = gmm([0.2, 1.0], [0.1, 0.1], [0.0, 1.0]);
        assert_eq!(gmm_posterior_clean(0.2, &f), 0.0);
    }

    #[test]
    fn separated_components() {
        // density ratio at 0: exp(-1 / (2 * 0.01)) / 1 = e^-50
        let f = gmm([0.0, 1.0], [0.01, 0.01], [0.5, 0.5]);
        let p = gmm_posterior_clean(0.0, &f);
        assert!(p > 0.999);
        // at 1 the roles swap and the small posterior is representable
        let q = gmm_posterior_clean(1.0, &f);
        let e = (-50f64).exp();
        assert!((q - e / (1.0 + e)).abs() < 1e-12 * e);
    }

    #[test]
    fn posterior_survives_far_tails() {
        let f = gmm([0.0, 1.0], [VARIANCE_FLOOR, VARIANCE_FLOOR], [0.5, 0.5]);
        assert_eq!(gmm_posterior_clean(-1e6, &f), 1.0);
        assert_eq!(gmm_posterior_clean(1e6, &f), 0.0);
    }

    #[test]
    fn em_recovers_known_mixture() {
        let mut rng = SeedRoot::new(5).stream(Purpose::Custom(2), 0, 0);
        let mut losses = Vec::new();
        for _ in 0..7000 {
            losses.push(0.2 + 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal));
        }
        for _ in 0..3000 {
            losses.push(2.0 + 0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal));
        }
        let fit = fit_local_gmm(&losses, &GmmParams::cold_start(4), 100, 1e-6).unwrap();
        assert!((fit.params.means[0] - 0.2).abs() < 0.05);
        assert!((fit.params.means[1] - 2.0).abs() < 0.05);
        assert!((fit.params.weights[0] - 0.7).abs() < 0.05);
    }

    #[test]
    fn em_at_optimum_stops_quickly() {
        let losses = [0.0, 0.0, 1.0, 1.0];
        let init = gmm([0.0, 1.0], [VARIANCE_FLOOR, VARIANCE_FLOOR], [0.5, 0.5]);
        let fit = fit_local_gmm(&losses, &init, 100, 1e-6).unwrap();
        assert!(fit.iterations <= 2);
        assert!(fit.converged);
        assert!((fit.params.means[0]).abs() < 1e-12 && (fit.params.means[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_losses_are_degenerate() {
        let fit = fit_local_gmm(&[0.5; 9], &GmmParams::cold_start(3), 100, 1e-6).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.params.means, [0.5, 0.5]);
        assert_eq!(fit.params.weights, [1.0, 0.0]);
        assert_eq!(fit.params.variances, [VARIANCE_FLOOR; 2]);
    }

    #[test]
    fn em_reorders_swapped_components() {
        // start with the components inverted relative to the data
        let losses: Vec<f64> = (0..50).map(|i| if i < 30 { 0.1 } else { 3.0 } + i as f64 * 1e-3).collect();
        let init = gmm([1.4, 1.6], [1.0, 1.0], [0.1, 0.9]);
        let fit = fit_local_gmm(&losses, &init, 100, 1e-8).unwrap();
        assert!(fit.params.means[0] < fit.params.means[1]);
        assert!((fit.params.weights[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn aggregation_cases() {
        let f = gmm([0.1, 2.0], [0.2, 0.5], [0.7, 0.3]);
        let bank = FilterBank::from_entries(vec![
            FilterEntry { params: f, sample_count: 3, last_updated: None },
            FilterEntry { params: f, sample_count: 11, last_updated: Some(2) },
        ])
        .unwrap();
        assert_eq!(aggregate_filters(&bank).unwrap(), f);

        let a = gmm([0.0, 1.0], [1.0, 1.0], [0.5, 0.5]);
        let b = gmm([0.4, 1.0], [1.0, 1.0], [0.5, 0.5]);
        let bank = FilterBank::from_entries(vec![
            FilterEntry { params: a, sample_count: 1, last_updated: None },
            FilterEntry { params: b, sample_count: 3, last_updated: None },
        ])
        .unwrap();
        assert!((aggregate_filters(&bank).unwrap().means[0] - 0.3).abs() < 1e-15);
        assert_eq!(aggregate_filters_over(&bank, &[1]).unwrap(), b);

        let empty = FilterBank::cold_start(&[0, 0], 2);
        assert!(matches!(aggregate_filters(&empty), Err(Error::ZeroTotalWeight)));
    }

    #[test]
    fn bank_update_touches_one_entry() {
        let mut bank = FilterBank::cold_start(&[5, 6, 7], 4);
        let f = gmm([0.1, 2.0], [0.2, 0.5], [0.7, 0.3]);
        bank.update(1, f, 9).unwrap();
        assert_eq!(bank.get(1).params, f);
        assert_eq!(bank.get(1).last_updated, Some(9));
        assert_eq!(bank.get(0).params, GmmParams::cold_start(4));
        assert_eq!(bank.get(2).last_updated, None);
    }

    #[test]
    fn split_extremes() {
        let losses = [0.1, 5.0, 0.3];
        let all_clean = gmm([0.0, 1.0], [1.0, 1.0], [1.0, 0.0]);
        let s = filter_split(&losses, &all_clean, 0.5);
        assert_eq!((s.clean.len(), s.noise_level()), (3, 0.0));
        let all_noisy = gmm([0.0, 1.0], [1.0, 1.0], [0.0, 1.0]);
        let s = filter_split(&losses, &all_noisy, 0.5);
        assert_eq!((s.noisy.len(), s.noise_level()), (3, 1.0));
    }

    #[test]
    fn relabel_thresholds() {
        let model = ModelParams::from_values(&[1, 3], vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.0]).unwrap();
        let xs = [[2.0], [-2.0], [0.0]];
        let samples: Vec<Sample> = xs.iter().map(|x| Sample { x, y: 1 }).collect();
        let all = relabel(&samples, &[0, 1, 2], &model, 0.0).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all[0], Relabeled { index: 0, label: 0 });
        assert_eq!(all[1], Relabeled { index: 1, label: 2 });
        // uniform prediction on x = 0: ties resolve to class 0
        assert_eq!(all[2], Relabeled { index: 2, label: 0 });
        assert!(relabel(&samples, &[0, 1, 2], &model, 1.0).unwrap().is_empty());
        assert_eq!(relabel(&samples, &[0, 2], &model, 0.5).unwrap().len(), 1);
    }

    #[test]
    fn normalization_range() {
        assert_eq!(normalize_losses(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(normalize_losses(&[2.0, 2.0]), vec![0.0, 0.0]);
    }

    fn arb_gmm() -> impl Strategy<Value = GmmParams> {
        (-2.0f64..5.0, 0.0f64..5.0, 1e-6f64..4.0, 1e-6f64..4.0, 0.0f64..=1.0).prop_map(
            |(m, gap, v0, v1, w)| GmmParams {
                means: [m, m + gap],
                variances: [v0, v1],
                weights: [w, 1.0 - w],
            },
        )
    }

    proptest! {
        #[test]
        fn em_never_decreases_likelihood(
            losses in proptest::collection::vec(0.0f64..8.0, 2..200),
            init in arb_gmm(),
        ) {
            let fit = fit_local_gmm(&losses, &init, 100, 1e-6).unwrap();
            prop_assert!(fit.params.validate().is_ok());
            for w in fit.log_likelihoods.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
            }
        }

        #[test]
        fn posterior_is_a_probability(loss in -1e3f64..1e3, f in arb_gmm()) {
            let p = gmm_posterior_clean(loss, &f);
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn split_partitions_samples(
            losses in proptest::collection::vec(0.0f64..8.0, 0..100),
            f in arb_gmm(),
        ) {
            let s = filter_split(&losses, &f, 0.5);
            prop_assert_eq!(s.clean.len() + s.noisy.len(), losses.len());
            let mut all: Vec<usize> = s.clean.iter().chain(&s.noisy).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..losses.len()).collect::<Vec<_>>());
            prop_assert!((0.0..=1.0).contains(&s.noise_level()));
        }

        #[test]
        fn aggregation_stays_in_envelope(
            filters in proptest::collection::vec((arb_gmm(), 0usize..50), 1..10),
        ) {
            prop_assume!(filters.iter().any(|(_, n)| *n > 0));
            let entries: Vec<FilterEntry> = filters
                .iter()
                .map(|&(params, sample_count)| FilterEntry { params, sample_count, last_updated: None })
                .collect();
            let out = aggregate_filters(&FilterBank::from_entries(entries).unwrap()).unwrap();
            prop_assert!(out.validate().is_ok());
            prop_assert!((out.weights[0] + out.weights[1] - 1.0).abs() < 1e-12);
            let live: Vec<&GmmParams> = filters.iter().filter(|(_, n)| *n > 0).map(|(p, _)| p).collect();
            for g in 0..2 {
                let lo = live.iter().map(|p| p.means[g]).fold(f64::INFINITY, f64::min);
                let hi = live.iter().map(|p| p.means[g]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.means[g] >= lo - 1e-12 && out.means[g] <= hi + 1e-12);
            }
        }
    }
}
