//! Synthetic classification data and label-skewed client partitioning.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::numcore::{Batch, SimRng};
use crate::{config_err, Error, Result};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
    num_classes: usize,
    name: String,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        input_dim: usize,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(config_err("dataset must contain at least one sample"));
        }
        if input_dim == 0 {
            return Err(config_err("dataset input_dim must be positive"));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * input_dim,
                found: features.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            features,
            labels,
            input_dim,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn as_batch(&self) -> Batch<'_> {
        Batch::new(&self.features, &self.labels, self.input_dim).expect("dataset is non-empty")
    }

    /// Copy of the given rows, in the given order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, labels, self.input_dim, self.num_classes, name)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Row indices grouped by class.
    pub fn indices_by_class(&self, pool: &[usize]) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for &i in pool {
            by_class[self.labels[i]].push(i);
        }
        by_class
    }
}

/// Gaussian blobs, one per class, with class means drawn uniformly on the
/// unit sphere. Rows are class-major: all of class 0, then class 1, ...
pub fn make_blobs(
    num_classes: usize,
    input_dim: usize,
    samples_per_class: usize,
    spread: f64,
    rng: &mut SimRng,
) -> Result<Dataset> {
    if num_classes < 2 || input_dim == 0 || samples_per_class == 0 {
        return Err(config_err("blob counts must be positive (and at least 2 classes)"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(config_err("blob spread must be non-negative"));
    }
    let mut means = Vec::with_capacity(num_classes * input_dim);
    for _ in 0..num_classes {
        let v: Vec<f64> = (0..input_dim).map(|_| rng.normal()).collect();
        let norm = crate::numcore::l2_norm(&v).max(f64::MIN_POSITIVE);
        means.extend(v.iter().map(|x| x / norm));
    }
    let n = num_classes * samples_per_class;
    let mut features = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..num_classes {
        let mean = &means[c * input_dim..(c + 1) * input_dim];
        for _ in 0..samples_per_class {
            features.extend(mean.iter().map(|m| m + spread * rng.normal()));
            labels.push(c);
        }
    }
    Dataset::new(features, labels, input_dim, num_classes, "blobs")
}

/// Random split of `0..n` into `(held_out, rest)` with
/// `round(n * fraction)` held-out rows. Both halves are sorted.
pub fn split_indices(n: usize, fraction: f64, rng: &mut SimRng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let k = libm::round(n as f64 * fraction.clamp(0.0, 1.0)) as usize;
    let mut held = idx[..k].to_vec();
    let mut rest = idx[k..].to_vec();
    held.sort_unstable();
    rest.sort_unstable();
    (held, rest)
}

/// Client shards of a sample pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// `assignments[client]` lists row indices of the source dataset.
    pub assignments: Vec<Vec<usize>>,
    pub beta: f64,
    pub seed: u64,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }
}

fn dirichlet(rng: &mut SimRng, beta: f64, k: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..k).map(|_| rng.gamma(beta)).collect();
    let sum: f64 = p.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        p.iter_mut().for_each(|x| *x /= sum);
    } else {
        // All draws underflowed (tiny beta): put the mass on one random slot.
        p.iter_mut().for_each(|x| *x = 0.0);
        p[rng.below(k)] = 1.0;
    }
    p
}

/// Split `n` items by proportions `p` using rounded cumulative boundaries, so
/// the counts always sum to `n`.
fn proportional_counts(p: &[f64], n: usize) -> Vec<usize> {
    let mut counts = Vec::with_capacity(p.len());
    let mut cum = 0.0;
    let mut prev = 0usize;
    for (i, &pi) in p.iter().enumerate() {
        cum += pi;
        let bound = if i + 1 == p.len() {
            n
        } else {
            (libm::round(cum * n as f64) as usize).clamp(prev, n)
        };
        counts.push(bound - prev);
        prev = bound;
    }
    counts
}

/// Label-skewed partition of `pool` (row indices of `ds`) over `num_clients`.
///
/// For every class, the class's rows are shuffled and split over clients by
/// proportions drawn from `Dirichlet(beta, ..., beta)`. Clients left with
/// fewer than `min_samples` rows are then topped up one row at a time from
/// whichever client currently holds the most.
pub fn dirichlet_partition(
    ds: &Dataset,
    pool: &[usize],
    num_clients: usize,
    beta: f64,
    min_samples: usize,
    seed: u64,
) -> Result<Partition> {
    if num_clients == 0 {
        return Err(config_err("num_clients must be at least 1"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(config_err("Dirichlet beta must be positive"));
    }
    if min_samples == 0 {
        return Err(config_err("min_samples must be at least 1"));
    }
    if pool.len() < min_samples * num_clients {
        return Err(config_err(alloc::format!(
            "pool of {} samples cannot give {} clients {} samples each",
            pool.len(),
            num_clients,
            min_samples
        )));
    }
    let mut rng = SimRng::derive(seed, &[crate::numcore::stream::PARTITION]);
    let mut assignments = vec![Vec::new(); num_clients];
    for mut rows in ds.indices_by_class(pool) {
        if rows.is_empty() {
            continue;
        }
        rng.shuffle(&mut rows);
        let p = dirichlet(&mut rng, beta, num_clients);
        let counts = proportional_counts(&p, rows.len());
        let mut it = rows.into_iter();
        for (client, &count) in counts.iter().enumerate() {
            assignments[client].extend(it.by_ref().take(count));
        }
    }
    while let Some(needy) = (0..num_clients).find(|&c| assignments[c].len() < min_samples) {
        let donor = (0..num_clients)
            .max_by(|&a, &b| assignments[a].len().cmp(&assignments[b].len()).then(b.cmp(&a)))
            .expect("at least one client");
        let row = assignments[donor].pop().expect("donor holds more than min_samples");
        assignments[needy].push(row);
    }
    Ok(Partition {
        assignments,
        beta,
        seed,
    })
}

/// Draw `size` rows from `pool` without replacement with label skew similar to
/// one client of a Dirichlet(beta) partition: class proportions come from
/// `Dirichlet(beta)` over classes, and shortfalls in scarce classes are filled
/// from the remaining rows at random.
pub fn skewed_subset(ds: &Dataset, pool: &[usize], size: usize, beta: f64, rng: &mut SimRng) -> Result<Vec<usize>> {
    if size > pool.len() {
        return Err(config_err(alloc::format!(
            "cannot draw {size} rows from a pool of {}",
            pool.len()
        )));
    }
    let mut by_class = ds.indices_by_class(pool);
    for rows in by_class.iter_mut() {
        rng.shuffle(rows);
    }
    let p = dirichlet(rng, beta, ds.num_classes());
    let counts = proportional_counts(&p, size);
    let mut chosen = Vec::with_capacity(size);
    let mut leftovers = Vec::new();
    for (rows, &want) in by_class.iter().zip(&counts) {
        let take = want.min(rows.len());
        chosen.extend_from_slice(&rows[..take]);
        leftovers.extend_from_slice(&rows[take..]);
    }
    rng.shuffle(&mut leftovers);
    let missing = size - chosen.len();
    chosen.extend_from_slice(&leftovers[..missing]);
    Ok(chosen)
}
