//! Labeled datasets and the synthetic Gaussian-blob generator.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Feature rows with given labels plus ground truth kept for evaluation.
///
/// Features are stored row-major in one flat buffer of `len() * dim()` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    dim: usize,
    features: Vec<f64>,
    given_labels: Vec<usize>,
    true_labels: Vec<usize>,
    clean_mask: Vec<bool>,
    num_classes: usize,
}

impl LabeledDataset {
    /// Build a dataset whose given labels equal the true labels.
    pub fn clean(
        dim: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        Self::with_labels(dim, features, labels.clone(), labels, num_classes)
    }

    /// Build a dataset; the clean mask is derived from label equality.
    pub fn with_labels(
        dim: usize,
        features: Vec<f64>,
        given_labels: Vec<usize>,
        true_labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidDataset("num_classes must be positive".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidDataset("feature dimension must be positive".into()));
        }
        let n = given_labels.len();
        if true_labels.len() != n || features.len() != n * dim {
            return Err(Error::InvalidDataset(format!(
                "length mismatch: {} given labels, {} true labels, {} feature values for dim {}",
                n,
                true_labels.len(),
                features.len(),
                dim
            )));
        }
        for &label in given_labels.iter().chain(&true_labels) {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange { label, num_classes });
            }
        }
        let clean_mask = given_labels
            .iter()
            .zip(&true_labels)
            .map(|(g, t)| g == t)
            .collect();
        Ok(Self {
            dim,
            features,
            given_labels,
            true_labels,
            clean_mask,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.given_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.given_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn given_labels(&self) -> &[usize] {
        &self.given_labels
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn clean_mask(&self) -> &[bool] {
        &self.clean_mask
    }

    /// Fraction of samples whose given label differs from the true label.
    pub fn mismatch_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.clean_mask.iter().filter(|c| !**c).count() as f64 / self.len() as f64
    }

    /// Replace the given label of sample `i`, keeping the clean mask in sync.
    pub fn set_given_label(&mut self, i: usize, label: usize) -> Result<()> {
        if label >= self.num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: self.num_classes,
            });
        }
        self.given_labels[i] = label;
        self.clean_mask[i] = label == self.true_labels[i];
        Ok(())
    }

    /// Copy of the rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.feature(i));
        }
        Self {
            dim: self.dim,
            features,
            given_labels: indices.iter().map(|&i| self.given_labels[i]).collect(),
            true_labels: indices.iter().map(|&i| self.true_labels[i]).collect(),
            clean_mask: indices.iter().map(|&i| self.clean_mask[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Per-class sample counts by true label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &t in &self.true_labels {
            counts[t] += 1;
        }
        counts
    }

    /// Indices grouped by true label.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &t) in self.true_labels.iter().enumerate() {
            groups[t].push(i);
        }
        groups
    }
}

/// Cluster centers used by [`make_blobs`].
///
/// Centers sit on a regular polygon in the first two coordinates (a line when
/// `dim == 1`), with adjacent centers exactly `separation` apart.
pub fn blob_centers(num_classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut centers = vec![vec![0.0; dim]; num_classes];
    if num_classes < 2 {
        return centers;
    }
    if dim == 1 {
        let offset = separation * (num_classes - 1) as f64 / 2.0;
        for (c, center) in centers.iter_mut().enumerate() {
            center[0] = c as f64 * separation - offset;
        }
        return centers;
    }
    let angle = std::f64::consts::PI / num_classes as f64;
    let radius = separation / (2.0 * angle.sin());
    for (c, center) in centers.iter_mut().enumerate() {
        let theta = 2.0 * angle * c as f64;
        center[0] = radius * theta.cos();
        center[1] = radius * theta.sin();
    }
    centers
}

/// Isotropic unit-variance Gaussian clusters, one per class.
///
/// Sample `i` belongs to class `i % num_classes`, so class counts differ by at
/// most one.
pub fn make_blobs(
    num_samples: usize,
    num_classes: usize,
    dim: usize,
    class_separation: f64,
    rng: &mut RngStream,
) -> Result<LabeledDataset> {
    if num_classes == 0 || dim == 0 {
        return Err(Error::InvalidDataset(
            "num_classes and dim must be positive".into(),
        ));
    }
    if num_samples < num_classes {
        return Err(Error::InvalidDataset(format!(
            "{num_samples} samples cannot cover {num_classes} classes"
        )));
    }
    if !(class_separation >= 0.0 && class_separation.is_finite()) {
        return Err(Error::InvalidDataset(
            "class separation must be finite and non-negative".into(),
        ));
    }
    let centers = blob_centers(num_classes, dim, class_separation);
    let mut features = Vec::with_capacity(num_samples * dim);
    let mut labels = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let class = i % num_classes;
        for &mu in &centers[class] {
            let z: f64 = rng.sample(StandardNormal);
            features.push(mu + z);
        }
        labels.push(class);
    }
    LabeledDataset::clean(dim, features, labels, num_classes)
}

/// Stratified split into `(train, test)`.
///
/// Per-class test counts use largest-remainder rounding of
/// `count(c) * test_fraction`, so the total is `round(n * test_fraction)`.
pub fn train_test_split(
    dataset: &LabeledDataset,
    test_fraction: f64,
    rng: &mut RngStream,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::InvalidDataset("cannot split an empty dataset".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidDataset(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let test_total = (n as f64 * test_fraction).round() as usize;
    if test_total == 0 || test_total == n {
        return Err(Error::InvalidDataset(format!(
            "test fraction {test_fraction} leaves an empty split for {n} samples"
        )));
    }
    let groups = dataset.indices_by_class();
    let quotas: Vec<f64> = groups
        .iter()
        .map(|g| g.len() as f64 * test_total as f64 / n as f64)
        .collect();
    let per_class = largest_remainder(&quotas, test_total);

    let mut test_idx = Vec::with_capacity(test_total);
    let mut train_idx = Vec::with_capacity(n - test_total);
    for (mut group, take) in groups.into_iter().zip(per_class) {
        group.shuffle(rng);
        test_idx.extend_from_slice(&group[..take]);
        train_idx.extend_from_slice(&group[take..]);
    }
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((dataset.subset(&train_idx), dataset.subset(&test_idx)))
}

/// Round non-negative `quotas` to integers summing to `total`.
///
/// Floors first, then hands the remaining units to the largest fractional
/// parts (lowest index wins ties).
pub(crate) fn largest_remainder(quotas: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}
