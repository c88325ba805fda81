//! Client partitioning (IID and Bernoulli-masked Dirichlet) and per-client
//! label-noise injection.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::{largest_remainder, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream, SeedRoot};

const MAX_INDICATOR_REDRAWS: usize = 1000;

/// Assignment of source-dataset rows to clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub client_indices: Vec<Vec<usize>>,
    /// `indicator[c][k]`: whether client `k` may hold class `c` (non-IID only).
    pub indicator: Option<Vec<Vec<bool>>>,
    /// Per-class proportions over the clients with `indicator[c][k]` set.
    pub proportions: Option<Vec<Vec<f64>>>,
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn client_sizes(&self) -> Vec<usize> {
        self.client_indices.iter().map(Vec::len).collect()
    }
}

/// Realized per-client noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseAssignment {
    pub client_noise_levels: Vec<f64>,
    /// Positions within each client dataset whose given label was redrawn.
    pub corrupted_indices: Vec<Vec<usize>>,
}

/// Equal per-class shares; remainders go round-robin across clients.
///
/// The round-robin cursor carries over from class to class so client totals
/// stay within one sample of each other per full cycle.
pub fn partition_iid(
    dataset: &LabeledDataset,
    num_clients: usize,
    rng: &mut RngStream,
) -> Result<PartitionPlan> {
    if num_clients == 0 {
        return Err(Error::InvalidConfig {
            field: "num_clients",
            reason: "must be positive".into(),
        });
    }
    let mut client_indices = vec![Vec::new(); num_clients];
    let mut cursor = 0;
    for (class, mut group) in dataset.indices_by_class().into_iter().enumerate() {
        if group.len() < num_clients {
            return Err(Error::ClassTooSmall {
                class,
                count: group.len(),
                clients: num_clients,
            });
        }
        group.shuffle(rng);
        let base = group.len() / num_clients;
        let mut rows = group.into_iter();
        for client in client_indices.iter_mut() {
            client.extend(rows.by_ref().take(base));
        }
        for row in rows {
            client_indices[cursor].push(row);
            cursor = (cursor + 1) % num_clients;
        }
    }
    for client in &mut client_indices {
        client.sort_unstable();
    }
    Ok(PartitionPlan {
        client_indices,
        indicator: None,
        proportions: None,
    })
}

/// Bernoulli(p) class/client indicator, then Dirichlet(alpha_dir) class
/// proportions over the selected clients.
pub fn partition_dirichlet(
    dataset: &LabeledDataset,
    num_clients: usize,
    p: f64,
    alpha_dir: f64,
    rng: &mut RngStream,
) -> Result<PartitionPlan> {
    if num_clients == 0 {
        return Err(Error::InvalidConfig {
            field: "num_clients",
            reason: "must be positive".into(),
        });
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidConfig {
            field: "dirichlet_p",
            reason: format!("{p} outside (0, 1]"),
        });
    }
    if !(alpha_dir > 0.0 && alpha_dir.is_finite()) {
        return Err(Error::InvalidConfig {
            field: "dirichlet_alpha",
            reason: format!("{alpha_dir} must be positive and finite"),
        });
    }
    let num_classes = dataset.num_classes();
    let mut indicator = vec![vec![false; num_clients]; num_classes];
    for (class, row) in indicator.iter_mut().enumerate() {
        let mut attempts = 0;
        loop {
            for cell in row.iter_mut() {
                *cell = rng.random_bool(p);
            }
            if row.iter().any(|&b| b) {
                break;
            }
            attempts += 1;
            if attempts >= MAX_INDICATOR_REDRAWS {
                return Err(Error::EmptyIndicatorRow { class, attempts });
            }
        }
    }

    let gamma = Gamma::new(alpha_dir, 1.0).map_err(|e| Error::InvalidConfig {
        field: "dirichlet_alpha",
        reason: e.to_string(),
    })?;
    let mut client_indices = vec![Vec::new(); num_clients];
    let mut proportions = Vec::with_capacity(num_classes);
    for (row, mut group) in indicator.iter().zip(dataset.indices_by_class()) {
        let owners: Vec<usize> = (0..num_clients).filter(|&k| row[k]).collect();
        let q = sample_dirichlet(&gamma, owners.len(), rng);
        let quotas: Vec<f64> = q.iter().map(|v| v * group.len() as f64).collect();
        let counts = largest_remainder(&quotas, group.len());
        group.shuffle(rng);
        let mut rows = group.into_iter();
        for (&owner, count) in owners.iter().zip(counts) {
            client_indices[owner].extend(rows.by_ref().take(count));
        }
        proportions.push(q);
    }
    for client in &mut client_indices {
        client.sort_unstable();
    }
    Ok(PartitionPlan {
        client_indices,
        indicator: Some(indicator),
        proportions: Some(proportions),
    })
}

/// Symmetric Dirichlet draw via normalized Gamma variates.
fn sample_dirichlet(gamma: &Gamma<f64>, len: usize, rng: &mut RngStream) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let draws: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        return draws.iter().map(|d| d / total).collect();
    }
    // every Gamma draw underflowed (tiny alpha): the limit puts all mass on one owner
    let mut q = vec![0.0; len];
    q[rng.random_range(0..len)] = 1.0;
    q
}

/// Materialize client datasets and corrupt labels of noisy clients.
///
/// Each client draws from its own `(Noise, 0, k)` stream: with probability
/// `rho` its level is `U(tau, 1)`, otherwise zero. `round(level * n_k)`
/// positions are redrawn uniformly over all classes, the true class included.
pub fn inject_noise(
    plan: &PartitionPlan,
    dataset: &LabeledDataset,
    rho: f64,
    tau: f64,
    root: &SeedRoot,
) -> Result<(Vec<LabeledDataset>, NoiseAssignment)> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidConfig {
            field: "noise_client_prob",
            reason: format!("{rho} outside [0, 1]"),
        });
    }
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::InvalidConfig {
            field: "noise_lower_bound",
            reason: format!("{tau} outside [0, 1)"),
        });
    }
    let num_classes = dataset.num_classes();
    let mut clients = Vec::with_capacity(plan.num_clients());
    let mut levels = Vec::with_capacity(plan.num_clients());
    let mut corrupted = Vec::with_capacity(plan.num_clients());
    for (k, rows) in plan.client_indices.iter().enumerate() {
        let mut rng = root.stream(Purpose::Noise, 0, k as u64);
        let mut local = dataset.subset(rows);
        let level = if rng.random_bool(rho) {
            rng.random_range(tau..1.0)
        } else {
            0.0
        };
        let count = (level * local.len() as f64).round() as usize;
        let mut positions = index::sample(&mut rng, local.len(), count).into_vec();
        positions.sort_unstable();
        for &i in &positions {
            local.set_given_label(i, rng.random_range(0..num_classes))?;
        }
        clients.push(local);
        levels.push(level);
        corrupted.push(positions);
    }
    Ok((
        clients,
        NoiseAssignment {
            client_noise_levels: levels,
            corrupted_indices: corrupted,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use proptest::prelude::*;

    fn root(seed: u64) -> SeedRoot {
        SeedRoot::new(seed)
    }

    fn single_class(n: usize) -> LabeledDataset {
        LabeledDataset::clean(1, (0..n).map(|i| i as f64).collect(), vec![0; n], 1).unwrap()
    }

    fn balanced(per_class: usize, classes: usize, seed: u64) -> LabeledDataset {
        let mut rng = root(seed).stream(Purpose::Dataset, 0, 0);
        make_blobs(per_class * classes, classes, 2, 3.0, &mut rng).unwrap()
    }

    fn assert_disjoint(plan: &PartitionPlan, n: usize) {
        let mut seen = vec![false; n];
        for rows in &plan.client_indices {
            for &r in rows {
                assert!(r < n);
                assert!(!seen[r], "row {r} assigned twice");
                seen[r] = true;
            }
        }
    }

    #[test]
    fn iid_divisible() {
        let ds = balanced(50, 2, 1);
        let plan = partition_iid(&ds, 10, &mut root(1).stream(Purpose::Partition, 0, 0)).unwrap();
        for rows in &plan.client_indices {
            let sub = ds.subset(rows);
            assert_eq!(sub.class_counts(), vec![5, 5]);
        }
    }

    #[test]
    fn iid_single_client_gets_everything() {
        let ds = balanced(7, 3, 2);
        let plan = partition_iid(&ds, 1, &mut root(2).stream(Purpose::Partition, 0, 0)).unwrap();
        assert_eq!(plan.client_indices[0], (0..21).collect::<Vec<_>>());
    }

    #[test]
    fn iid_remainder_round_robin() {
        // oracle: 103 = 10 * 10 + 3, so three clients hold one extra sample
        let plan =
            partition_iid(&single_class(103), 10, &mut root(3).stream(Purpose::Partition, 0, 0))
                .unwrap();
        let mut sizes = plan.client_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, [vec![10; 7], vec![11; 3]].concat());
    }

    #[test]
    fn iid_rejects_small_class() {
        let err = partition_iid(&single_class(5), 10, &mut root(0).stream(Purpose::Partition, 0, 0));
        assert!(matches!(err, Err(Error::ClassTooSmall { .. })));
    }

    #[test]
    fn dirichlet_near_uniform_for_large_alpha() {
        let ds = single_class(400);
        let plan = partition_dirichlet(
            &ds,
            4,
            1.0,
            1e6,
            &mut root(4).stream(Purpose::Partition, 0, 0),
        )
        .unwrap();
        for size in plan.client_sizes() {
            assert!((size as i64 - 100).abs() <= 5, "size {size}");
        }
    }

    #[test]
    fn dirichlet_single_client() {
        let ds = balanced(10, 3, 5);
        for alpha in [0.1, 1.0, 100.0] {
            let plan = partition_dirichlet(
                &ds,
                1,
                1.0,
                alpha,
                &mut root(5).stream(Purpose::Partition, 0, 0),
            )
            .unwrap();
            assert_eq!(plan.client_sizes(), vec![30]);
        }
    }

    #[test]
    fn dirichlet_indicator_rate_matches_p() {
        // Monte-Carlo over 100 seeds. Redrawing empty rows biases the mean up
        // by at most 0.5^10 per row, far inside the window.
        let ds = balanced(20, 10, 6);
        let mut ones = 0usize;
        let mut cells = 0usize;
        for seed in 0..100 {
            let plan = partition_dirichlet(
                &ds,
                10,
                0.5,
                10.0,
                &mut root(seed).stream(Purpose::Partition, 0, 0),
            )
            .unwrap();
            for row in plan.indicator.unwrap() {
                ones += row.iter().filter(|&&b| b).count();
                cells += row.len();
            }
        }
        let mean = ones as f64 / cells as f64;
        assert!((0.45..=0.55).contains(&mean), "mean indicator {mean}");
    }

    #[test]
    fn no_noise_leaves_labels_alone() {
        let ds = balanced(25, 4, 7);
        let plan = partition_iid(&ds, 5, &mut root(7).stream(Purpose::Partition, 0, 0)).unwrap();
        let (clients, noise) = inject_noise(&plan, &ds, 0.0, 0.3, &root(7)).unwrap();
        assert!(noise.client_noise_levels.iter().all(|&d| d == 0.0));
        assert!(noise.corrupted_indices.iter().all(Vec::is_empty));
        assert!(clients.iter().all(|c| c.clean_mask().iter().all(|&m| m)));
    }

    #[test]
    fn noise_level_bounds() {
        let ds = balanced(100, 2, 8);
        let plan = partition_iid(&ds, 2, &mut root(8).stream(Purpose::Partition, 0, 0)).unwrap();
        let (_, noise) = inject_noise(&plan, &ds, 1.0, 0.5, &root(8)).unwrap();
        for (level, positions) in noise.client_noise_levels.iter().zip(&noise.corrupted_indices) {
            assert!((0.5..1.0).contains(level));
            assert!((50..=100).contains(&positions.len()));
        }
    }

    #[test]
    fn noise_preserves_features_and_truth() {
        let ds = balanced(30, 3, 9);
        let plan = partition_iid(&ds, 3, &mut root(9).stream(Purpose::Partition, 0, 0)).unwrap();
        let (clients, _) = inject_noise(&plan, &ds, 1.0, 0.2, &root(9)).unwrap();
        for (client, rows) in clients.iter().zip(&plan.client_indices) {
            let original = ds.subset(rows);
            assert_eq!(client.features(), original.features());
            assert_eq!(client.true_labels(), original.true_labels());
        }
    }

    proptest! {
        #[test]
        fn plans_are_disjoint(
            clients in 1usize..8,
            p in 0.2f64..1.0,
            alpha in 0.05f64..20.0,
            seed in any::<u64>(),
        ) {
            let ds = balanced(12, 4, seed);
            let mut rng = root(seed).stream(Purpose::Partition, 0, 0);
            let plan = partition_dirichlet(&ds, clients, p, alpha, &mut rng).unwrap();
            assert_disjoint(&plan, ds.len());
            // every class has an owner, so nothing is dropped
            prop_assert_eq!(plan.client_sizes().iter().sum::<usize>(), ds.len());
            let indicator = plan.indicator.as_ref().unwrap();
            for (row, q) in indicator.iter().zip(plan.proportions.as_ref().unwrap()) {
                prop_assert_eq!(q.len(), row.iter().filter(|&&b| b).count());
                prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }

            let plan = partition_iid(&ds, clients.min(12), &mut rng).unwrap();
            assert_disjoint(&plan, ds.len());
            prop_assert_eq!(plan.client_sizes().iter().sum::<usize>(), ds.len());
        }

        #[test]
        fn corrupted_count_matches_level(rho in 0.0f64..1.0, tau in 0.0f64..0.99, seed in any::<u64>()) {
            let ds = balanced(15, 4, seed);
            let mut rng = root(seed).stream(Purpose::Partition, 0, 0);
            let plan = partition_iid(&ds, 3, &mut rng).unwrap();
            let (clients, noise) = inject_noise(&plan, &ds, rho, tau, &root(seed)).unwrap();
            for ((client, level), positions) in clients
                .iter()
                .zip(&noise.client_noise_levels)
                .zip(&noise.corrupted_indices)
            {
                prop_assert_eq!(positions.len(), (level * client.len() as f64).round() as usize);
                for i in 0..client.len() {
                    if !positions.contains(&i) {
                        prop_assert!(client.clean_mask()[i]);
                    }
                }
            }
        }
    }
}
