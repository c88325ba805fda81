//! The federated training loop: warm-up, client selection, per-client
//! filtering / relabeling / re-selection / local training, and the server-side
//! aggregation of models and filters.
//!
//! Per-client work inside a round is independent and runs either sequentially
//! or on the rayon pool (feature `parallel`). Every random draw comes from a
//! stream keyed by `(purpose, round, client)`, and aggregation folds client
//! results in client-id order, so both modes produce bit-identical results.

use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    argmax, forward_logits, per_sample_losses, predict_proba, LocalOptimizer, ModelParams, Sample,
};
use crate::config::{PartitionMode, RunConfig, Variant};
use crate::data::{make_blobs, train_test_split, LabeledDataset};
use crate::error::{Error, Result};
use crate::metrics::{
    confusion_matrix, filtering_accuracy, mean, test_accuracy, training_stability,
    ClientRoundStats, ConfusionDump, Phase, RoundRecord,
};
use crate::noise_filter::{
    aggregate_filters, aggregate_filters_over, filter_split, fit_local_gmm, normalize_losses,
    relabel, FilterBank, GmmParams,
};
use crate::partition::{inject_noise, partition_dirichlet, partition_iid, NoiseAssignment, PartitionPlan};
use crate::pcs::{global_labels, reselect_with_global_labels, update_bias, ClientBias};
use crate::rng::{Purpose, RngStream, SeedRoot};

/// How per-client work inside a round is scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon thread pool; falls back to sequential without the `parallel` feature.
    #[default]
    Parallel,
}

/// A client's persistent state between rounds.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub data: LabeledDataset,
    pub bias: ClientBias,
    /// Latest estimated noise level (0 before the first filtered round).
    pub noise_estimate: f64,
    pub true_noise_level: f64,
}

impl ClientState {
    pub fn sample_count(&self) -> usize {
        self.data.len()
    }

    /// Training pairs with the given (possibly noisy) labels.
    pub fn samples(&self) -> Vec<Sample<'_>> {
        (0..self.data.len())
            .map(|i| Sample {
                x: self.data.feature(i),
                y: self.data.given_labels()[i],
            })
            .collect()
    }
}

/// Server-held state.
#[derive(Clone, Debug)]
pub struct ServerState {
    pub model: ModelParams,
    pub filter: GmmParams,
    pub bank: FilterBank,
    pub round: u64,
}

/// Uniformly choose `count` of the `eligible` client ids, returned sorted.
pub fn select_from(eligible: &[usize], count: usize, rng: &mut RngStream) -> Vec<usize> {
    let count = count.clamp(1, eligible.len().max(1)).min(eligible.len());
    let mut picked: Vec<usize> = index::sample(rng, eligible.len(), count)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// `round(omega * K)` distinct clients (at least one), sorted by id.
pub fn select_clients(num_clients: usize, omega: f64, rng: &mut RngStream) -> Vec<usize> {
    let count = ((omega * num_clients as f64).round() as usize).clamp(1, num_clients.max(1));
    let all: Vec<usize> = (0..num_clients).collect();
    select_from(&all, count, rng)
}

/// Sample-count weighted average of model parameters.
pub fn fedavg_aggregate(models: &[(&ModelParams, usize)]) -> Result<ModelParams> {
    let total: usize = models.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::ZeroTotalWeight);
    }
    let first = models[0].0;
    let mut out = ModelParams::zeros(first.layer_sizes())?;
    for (model, n) in models.iter().filter(|(_, n)| *n > 0) {
        if !model.same_shape(first) {
            return Err(Error::DimensionMismatch {
                expected: first.values().len(),
                actual: model.values().len(),
            });
        }
        let w = *n as f64 / total as f64;
        for (acc, v) in out.values_mut().iter_mut().zip(model.values()) {
            *acc += w * v;
        }
    }
    Ok(out)
}

/// Data, partition and noise shared by every variant run of one config.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: RunConfig,
    pub test: LabeledDataset,
    pub plan: PartitionPlan,
    pub noise: NoiseAssignment,
    pub clients: Vec<LabeledDataset>,
}

/// Partition facts recorded in the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub mode: PartitionMode,
    pub client_sizes: Vec<usize>,
    /// Per-client class counts by true label.
    pub client_class_counts: Vec<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub indicator: Option<Vec<Vec<bool>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub proportions: Option<Vec<Vec<f64>>>,
    pub train_size: usize,
    pub test_size: usize,
}

/// Noise facts recorded in the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub client_noise_levels: Vec<f64>,
    pub corrupted_counts: Vec<usize>,
    /// Realized fraction of given labels that differ from the truth.
    pub realized_mismatch_rates: Vec<f64>,
    pub corrupted_indices: Vec<Vec<usize>>,
}

/// End-of-run summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalSummary {
    pub variant: Variant,
    pub seed: u64,
    pub config_hash: String,
    /// Best over the initial model and every round.
    pub best_test_accuracy: f64,
    pub final_test_accuracy: f64,
    /// Accuracy of the broadcast model before any round.
    pub initial_test_accuracy: f64,
    /// Mean over clients of the end-of-run filtering accuracy.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_filtering_accuracy: Option<f64>,
    /// Filtering accuracy of every non-empty client, evaluated with the final
    /// global model and the filter the variant would use next round.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub client_filtering_accuracy: Option<Vec<Option<f64>>>,
    pub client_noise_levels: Vec<f64>,
    pub realized_noise_rates: Vec<f64>,
    pub warmup_rounds: usize,
    pub training_rounds: usize,
    pub starved_epochs: usize,
    pub starved_rounds: usize,
}

/// Everything a run produces, in log order.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub partition: PartitionSummary,
    pub noise: NoiseSummary,
    pub rounds: Vec<RoundRecord>,
    pub summary: FinalSummary,
    pub final_model: ModelParams,
    pub final_filter: GmmParams,
}

impl Experiment {
    /// Generate data, split, partition and inject noise for `config`.
    pub fn prepare(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let root = SeedRoot::new(config.seed);
        let full = make_blobs(
            config.num_samples,
            config.num_classes,
            config.feature_dim,
            config.class_separation,
            &mut root.stream(Purpose::Dataset, 0, 0),
        )?;
        let (train, test) =
            train_test_split(&full, config.test_fraction, &mut root.stream(Purpose::Split, 0, 0))?;
        let mut rng = root.stream(Purpose::Partition, 0, 0);
        let plan = match config.partition_mode {
            PartitionMode::Iid => partition_iid(&train, config.num_clients, &mut rng)?,
            PartitionMode::Dirichlet => partition_dirichlet(
                &train,
                config.num_clients,
                config.dirichlet_p,
                config.dirichlet_alpha,
                &mut rng,
            )?,
        };
        let (clients, noise) = inject_noise(
            &plan,
            &train,
            config.noise_client_prob,
            config.noise_lower_bound,
            &root,
        )?;
        if clients.iter().all(LabeledDataset::is_empty) {
            return Err(Error::InvalidDataset("every client is empty".into()));
        }
        Ok(Self {
            config: config.clone(),
            test,
            plan,
            noise,
            clients,
        })
    }

    pub fn partition_summary(&self) -> PartitionSummary {
        PartitionSummary {
            mode: self.config.partition_mode,
            client_sizes: self.plan.client_sizes(),
            client_class_counts: self.clients.iter().map(LabeledDataset::class_counts).collect(),
            indicator: self.plan.indicator.clone(),
            proportions: self.plan.proportions.clone(),
            train_size: self.clients.iter().map(LabeledDataset::len).sum(),
            test_size: self.test.len(),
        }
    }

    pub fn noise_summary(&self) -> NoiseSummary {
        NoiseSummary {
            client_noise_levels: self.noise.client_noise_levels.clone(),
            corrupted_counts: self.noise.corrupted_indices.iter().map(Vec::len).collect(),
            realized_mismatch_rates: self.clients.iter().map(LabeledDataset::mismatch_rate).collect(),
            corrupted_indices: self.noise.corrupted_indices.clone(),
        }
    }

    /// Run warm-up plus training for `variant`, calling `on_round` with each
    /// record as soon as its round barrier completes.
    pub fn run(
        &self,
        variant: Variant,
        execution: Execution,
        mut on_round: impl FnMut(&RoundRecord),
    ) -> Result<RunOutput> {
        let config = RunConfig {
            algorithm_variant: variant,
            ..self.config.clone()
        };
        let root = SeedRoot::new(config.seed);
        let mut clients: Vec<ClientState> = self
            .clients
            .iter()
            .enumerate()
            .map(|(id, data)| ClientState {
                id,
                data: data.clone(),
                bias: ClientBias::uniform(config.num_classes),
                noise_estimate: 0.0,
                true_noise_level: self.noise.client_noise_levels[id],
            })
            .collect();
        let counts: Vec<usize> = clients.iter().map(ClientState::sample_count).collect();
        let bank = FilterBank::cold_start(&counts, config.num_classes);
        let mut server = ServerState {
            model: ModelParams::init(
                &config.layer_sizes(),
                &mut root.stream(Purpose::ModelInit, 0, 0),
            )?,
            filter: aggregate_filters(&bank)?,
            bank,
            round: 0,
        };

        let initial_test_accuracy = test_accuracy(&server.model, &self.test)?;
        let mut rounds = Vec::new();

        let warmup_rounds = config.warmup_rounds();
        for w in 1..=warmup_rounds as u64 {
            let record = warmup_round(&mut server, &clients, &config, &root, w, &self.test, execution)?;
            on_round(&record);
            rounds.push(record);
        }
        for t in 1..=config.total_rounds as u64 {
            let record = run_round(&mut server, &mut clients, &config, &root, t, &self.test, execution)?;
            on_round(&record);
            rounds.push(record);
        }

        let client_filtering_accuracy = if variant.filters() {
            Some(
                clients
                    .iter()
                    .map(|c| final_filtering_accuracy(&server, c, &config))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let mean_filtering_accuracy = client_filtering_accuracy
            .as_ref()
            .and_then(|accs| mean(accs.iter().flatten().copied()));
        let summary = FinalSummary {
            variant,
            seed: config.seed,
            config_hash: config.hash(),
            best_test_accuracy: rounds
                .iter()
                .map(|r| r.test_accuracy)
                .fold(initial_test_accuracy, f64::max),
            final_test_accuracy: rounds
                .last()
                .map_or(initial_test_accuracy, |r| r.test_accuracy),
            initial_test_accuracy,
            mean_filtering_accuracy,
            client_filtering_accuracy,
            client_noise_levels: self.noise.client_noise_levels.clone(),
            realized_noise_rates: self.clients.iter().map(LabeledDataset::mismatch_rate).collect(),
            warmup_rounds,
            training_rounds: config.total_rounds,
            starved_epochs: rounds
                .iter()
                .flat_map(|r| &r.participants)
                .map(|p| p.starved_epochs)
                .sum(),
            starved_rounds: rounds
                .iter()
                .flat_map(|r| &r.participants)
                .filter(|p| p.starved_round)
                .count(),
        };
        Ok(RunOutput {
            partition: self.partition_summary(),
            noise: self.noise_summary(),
            rounds,
            summary,
            final_model: server.model,
            final_filter: server.filter,
        })
    }
}

/// The filter a client applies in the split step.
fn split_filter(server: &ServerState, client: usize, variant: Variant) -> GmmParams {
    match variant {
        Variant::FeddivLocalFilter => server.bank.get(client).params,
        _ => server.filter,
    }
}

fn filter_losses(losses: Vec<f64>, config: &RunConfig) -> Vec<f64> {
    if config.normalize_losses {
        normalize_losses(&losses)
    } else {
        losses
    }
}

fn final_filtering_accuracy(
    server: &ServerState,
    client: &ClientState,
    config: &RunConfig,
) -> Result<Option<f64>> {
    if client.data.is_empty() {
        return Ok(None);
    }
    let losses = filter_losses(per_sample_losses(&server.model, &client.samples())?, config);
    let filter = split_filter(server, client.id, config.algorithm_variant);
    let split = filter_split(&losses, &filter, config.clean_posterior_threshold);
    Ok(Some(filtering_accuracy(&split.predicted_clean(), client.data.clean_mask())?))
}

fn eligible_clients<'a>(clients: impl Iterator<Item = (usize, usize)> + 'a) -> Vec<usize> {
    clients.filter(|&(_, n)| n > 0).map(|(id, _)| id).collect()
}

fn map_clients<T: Send>(
    selected: &[usize],
    execution: Execution,
    work: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            selected.par_iter().map(|&k| work(k)).collect()
        }
        _ => selected.iter().map(|&k| work(k)).collect(),
    }
}

/// One MixUp-only round on raw client data; filters are untouched.
pub fn warmup_round(
    server: &mut ServerState,
    clients: &[ClientState],
    config: &RunConfig,
    root: &SeedRoot,
    warmup_round: u64,
    test: &LabeledDataset,
    execution: Execution,
) -> Result<RoundRecord> {
    let started = Instant::now();
    let eligible = eligible_clients(clients.iter().map(|c| (c.id, c.sample_count())));
    let selected = select_from(
        &eligible,
        config.clients_per_round(),
        &mut root.stream(Purpose::WarmupSelect, warmup_round, 0),
    );
    let settings = config.train_settings();
    let global = &server.model;
    let locals = map_clients(&selected, execution, |k| {
        let mut rng = root.stream(Purpose::WarmupTrain, warmup_round, k as u64);
        let samples = clients[k].samples();
        let mut opt = LocalOptimizer::new(global.clone(), settings)?;
        for _ in 0..settings.local_epochs {
            opt.run_epoch(&samples, &mut rng)?;
        }
        Ok(opt.into_params())
    })?;
    let stats = selected
        .iter()
        .map(|&k| ClientRoundStats::plain(k, clients[k].sample_count(), clients[k].true_noise_level))
        .collect();
    finish_round(server, clients, selected, locals, stats, Phase::Warmup, None, test, started)
}

/// Result of one client's local session.
struct ClientOutcome {
    model: ModelParams,
    bias: Option<ClientBias>,
    noise_estimate: Option<f64>,
    local_filter: Option<GmmParams>,
    stats: ClientRoundStats,
}

/// One training round of the configured variant.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    config: &RunConfig,
    root: &SeedRoot,
    t: u64,
    test: &LabeledDataset,
    execution: Execution,
) -> Result<RoundRecord> {
    let started = Instant::now();
    let eligible = eligible_clients(clients.iter().map(|c| (c.id, c.sample_count())));
    let selected = select_from(
        &eligible,
        config.clients_per_round(),
        &mut root.stream(Purpose::Select, t, 0),
    );
    let variant = config.algorithm_variant;
    let shared: &ServerState = server;
    let snapshot: &[ClientState] = clients;
    let outcomes = map_clients(&selected, execution, |k| {
        let mut rng = root.stream(Purpose::Train, t, k as u64);
        if variant.filters() {
            filtered_client_update(shared, &snapshot[k], config, t, &mut rng)
        } else {
            baseline_client_update(&shared.model, &snapshot[k], config, &mut rng)
        }
    })?;

    let mut locals = Vec::with_capacity(outcomes.len());
    let mut stats = Vec::with_capacity(outcomes.len());
    let mut filters = Vec::new();
    for (&k, outcome) in selected.iter().zip(outcomes) {
        let client = &mut clients[k];
        if let Some(bias) = outcome.bias {
            client.bias = bias;
        }
        if let Some(estimate) = outcome.noise_estimate {
            client.noise_estimate = estimate;
        }
        if let Some(filter) = outcome.local_filter {
            filters.push((k, filter));
        }
        locals.push(outcome.model);
        stats.push(outcome.stats);
    }
    let round_number = server.round + 1;
    for &(k, filter) in &filters {
        server.bank.update(k, filter, round_number)?;
    }
    let next_filter = match variant {
        Variant::Feddiv => Some(aggregate_filters(&server.bank)?),
        Variant::FeddivDegraded => Some(aggregate_filters_over(&server.bank, &selected)?),
        Variant::FeddivLocalFilter | Variant::FedavgBaseline => None,
    };
    finish_round(server, clients, selected, locals, stats, Phase::Train, next_filter, test, started)
}

/// Server barrier: stability, FedAvg, filter swap, evaluation.
#[allow(clippy::too_many_arguments)]
fn finish_round(
    server: &mut ServerState,
    clients: &[ClientState],
    selected: Vec<usize>,
    locals: Vec<ModelParams>,
    stats: Vec<ClientRoundStats>,
    phase: Phase,
    next_filter: Option<GmmParams>,
    test: &LabeledDataset,
    started: Instant,
) -> Result<RoundRecord> {
    let refs: Vec<&ModelParams> = locals.iter().collect();
    let stability = training_stability(&refs, &server.model)?;
    let weighted: Vec<(&ModelParams, usize)> = selected
        .iter()
        .zip(&locals)
        .map(|(&k, m)| (m, clients[k].sample_count()))
        .collect();
    server.model = fedavg_aggregate(&weighted)?;
    if let Some(filter) = next_filter {
        server.filter = filter;
    }
    server.round += 1;
    Ok(RoundRecord {
        round: server.round,
        phase,
        test_accuracy: test_accuracy(&server.model, test)?,
        training_stability: stability,
        participants: stats,
        global_filter: next_filter,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

fn baseline_client_update(
    global: &ModelParams,
    client: &ClientState,
    config: &RunConfig,
    rng: &mut RngStream,
) -> Result<ClientOutcome> {
    let samples = client.samples();
    let mut opt = LocalOptimizer::new(global.clone(), config.train_settings())?;
    for _ in 0..config.local_epochs {
        opt.run_epoch(&samples, rng)?;
    }
    Ok(ClientOutcome {
        model: opt.into_params(),
        bias: None,
        noise_estimate: None,
        local_filter: None,
        stats: ClientRoundStats::plain(client.id, client.sample_count(), client.true_noise_level),
    })
}

fn label_accuracy(data: &LabeledDataset, samples: &[Sample<'_>], positions: &[usize]) -> Option<f64> {
    let hits = samples
        .iter()
        .zip(positions)
        .filter(|(s, &i)| s.y == data.true_labels()[i])
        .count();
    (!samples.is_empty()).then(|| hits as f64 / samples.len() as f64)
}

/// Filtering, relabeling, per-epoch re-selection, local training, bias update
/// and local filter fitting for one client.
fn filtered_client_update(
    server: &ServerState,
    client: &ClientState,
    config: &RunConfig,
    t: u64,
    rng: &mut RngStream,
) -> Result<ClientOutcome> {
    let data = &client.data;
    let samples = client.samples();
    let global = &server.model;
    let mut stats = ClientRoundStats::plain(client.id, client.sample_count(), client.true_noise_level);

    // split with the received global model and filter
    let losses = filter_losses(per_sample_losses(global, &samples)?, config);
    let filter = split_filter(server, client.id, config.algorithm_variant);
    let split = filter_split(&losses, &filter, config.clean_posterior_threshold);
    let noise_estimate = split.noise_level();
    let relabeled = if noise_estimate > config.noisy_client_threshold {
        relabel(&samples, &split.noisy, global, config.relabel_threshold)?
    } else {
        Vec::new()
    };

    // candidates: clean samples with given labels, then relabeled ones
    let mut positions: Vec<usize> = split.clean.clone();
    let mut candidates: Vec<Sample> = split.clean.iter().map(|&i| samples[i]).collect();
    for r in &relabeled {
        positions.push(r.index);
        candidates.push(Sample {
            x: samples[r.index].x,
            y: r.label,
        });
    }
    let use_reselection = noise_estimate >= config.noisy_client_threshold;
    let candidate_global = if use_reselection {
        global_labels(&candidates, global)?
    } else {
        Vec::new()
    };

    let mut opt = LocalOptimizer::new(global.clone(), config.train_settings())?;
    let mut last_kept: Option<Vec<usize>> = None;
    for _ in 0..config.local_epochs {
        if !use_reselection {
            opt.run_epoch(&samples, rng)?;
            continue;
        }
        let kept = reselect_with_global_labels(
            &candidates,
            &candidate_global,
            opt.params(),
            &client.bias,
            config.debias_factor,
        )?;
        let training: Vec<Sample> = kept.iter().map(|&i| candidates[i]).collect();
        if training.is_empty() {
            stats.starved_epochs += 1;
        } else {
            opt.run_epoch(&training, rng)?;
        }
        last_kept = Some(kept);
    }
    stats.starved_round = config.local_epochs > 0 && stats.starved_epochs == config.local_epochs;
    let model = opt.into_params();
    let bias = update_bias(&client.bias, &model, &samples, config.bias_momentum)?;

    // local filter on losses under the freshly trained model
    let fresh_losses = filter_losses(per_sample_losses(&model, &samples)?, config);
    let init = match config.algorithm_variant {
        Variant::FeddivLocalFilter => server.bank.get(client.id).params,
        _ => server.filter,
    };
    let fit = fit_local_gmm(&fresh_losses, &init, config.em_max_iters, config.em_tolerance)?;

    stats.estimated_noise_level = Some(noise_estimate);
    stats.filtering_accuracy = Some(filtering_accuracy(&split.predicted_clean(), data.clean_mask())?);
    stats.clean = Some(split.clean.len());
    stats.noisy = Some(split.noisy.len());
    stats.relabeled = Some(relabeled.len());
    if !relabeled.is_empty() {
        let hits = relabeled
            .iter()
            .filter(|r| r.label == data.true_labels()[r.index])
            .count();
        stats.relabel_accuracy = Some(hits as f64 / relabeled.len() as f64);
    }
    stats.candidate_label_accuracy = label_accuracy(data, &candidates, &positions);
    if let Some(kept) = &last_kept {
        let kept_samples: Vec<Sample> = kept.iter().map(|&i| candidates[i]).collect();
        let kept_positions: Vec<usize> = kept.iter().map(|&i| positions[i]).collect();
        stats.reselected = Some(kept.len());
        stats.reselected_label_accuracy = label_accuracy(data, &kept_samples, &kept_positions);
    }
    stats.local_filter = Some(fit.params);
    stats.em_iterations = Some(fit.iterations);
    if config.confusion_rounds.contains(&t) {
        let c = config.num_classes;
        let truth = |pos: &[usize]| pos.iter().map(|&i| data.true_labels()[i]).collect::<Vec<_>>();
        let reselected = last_kept.as_deref().unwrap_or(&[]);
        stats.confusion = Some(ConfusionDump {
            given: confusion_matrix(data.true_labels(), data.given_labels(), c),
            relabeled: confusion_matrix(
                &truth(&positions),
                &candidates.iter().map(|s| s.y).collect::<Vec<_>>(),
                c,
            ),
            reselected: confusion_matrix(
                &truth(&reselected.iter().map(|&i| positions[i]).collect::<Vec<_>>()),
                &reselected.iter().map(|&i| candidates[i].y).collect::<Vec<_>>(),
                c,
            ),
        });
    }

    Ok(ClientOutcome {
        model,
        bias: Some(bias),
        noise_estimate: Some(noise_estimate),
        local_filter: Some(fit.params),
        stats,
    })
}

/// Predicted class of every test sample; used by tooling.
pub fn predictions(model: &ModelParams, data: &LabeledDataset) -> Result<Vec<usize>> {
    (0..data.len())
        .map(|i| Ok(argmax(&forward_logits(model, data.feature(i))?)))
        .collect()
}

/// Mean predicted distribution over a dataset.
pub fn mean_prediction(model: &ModelParams, data: &LabeledDataset) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; model.num_classes()];
    for i in 0..data.len() {
        for (m, p) in mean.iter_mut().zip(predict_proba(model, data.feature(i))?) {
            *m += p / data.len() as f64;
        }
    }
    Ok(mean)
}
