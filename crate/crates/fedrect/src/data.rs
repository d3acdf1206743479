//! Dataset synthesis, CSV ingestion, and non-IID partitioning.

use rand::distributions::Distribution;
use rand::seq::SliceRandom;
use rand_distr::Gamma;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::rng::CounterRng;

const DATA_DOMAIN: u64 = 0x6461_7461_7365_7473;

/// A labelled classification dataset, inputs row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, feature_dim: usize, num_classes: usize) -> Result<Self> {
        if feature_dim == 0 || num_classes == 0 {
            return Err(Error::Config("dataset: feature_dim and classes must be >= 1".into()));
        }
        if inputs.len() != labels.len() * feature_dim {
            return Err(Error::Shape(format!(
                "dataset: {} input values != {} samples x {feature_dim} features",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Shape(format!("dataset: label {bad} outside [0, {num_classes})")));
        }
        Ok(Self { inputs, labels, feature_dim, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Copies the selected rows into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut inputs = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Shape(format!("subset index {i} out of range {}", self.len())));
            }
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(inputs, labels, self.feature_dim, self.num_classes)
    }

    /// The whole dataset as one batch.
    pub fn to_batch(&self) -> Result<Batch> {
        Batch::new(self.inputs.clone(), self.labels.clone(), self.feature_dim, self.num_classes)
    }

    /// Deterministic minibatch: `size` distinct rows picked by the keyed
    /// stream (the whole set when `size >= len`).
    pub fn sample_batch(&self, size: usize, rng: &mut CounterRng) -> Result<Batch> {
        if size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if size >= self.len() {
            return self.to_batch();
        }
        let mut indices: Vec<usize> = (0..self.len()).collect();
        let (picked, _) = indices.partial_shuffle(rng, size);
        picked.sort_unstable();
        let mut inputs = Vec::with_capacity(size * self.feature_dim);
        let mut labels = Vec::with_capacity(size);
        for &i in picked.iter() {
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(inputs, labels, self.feature_dim, self.num_classes)
    }

    /// Sample count per label.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.num_classes];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }
}

/// Gaussian-mixture classification data: class means on a seeded sphere of
/// radius `spread`, samples at `mean + noise * N(0, I)`, labels round-robin
/// so classes stay balanced.
pub fn synthetic_mixture(
    features: usize,
    classes: usize,
    samples: usize,
    noise: f64,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if features == 0 || classes == 0 || samples == 0 {
        return Err(Error::Config("synthetic dataset: features, classes, samples must be >= 1".into()));
    }
    let mut rng = CounterRng::new(seed ^ DATA_DOMAIN);
    let mut means = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut m: Vec<f64> = (0..features).map(|_| rng.next_normal_pair().0).collect();
        let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for x in m.iter_mut() {
            *x *= spread / norm;
        }
        means.push(m);
    }
    let mut inputs = Vec::with_capacity(samples * features);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let label = i % classes;
        for f in 0..features {
            inputs.push(means[label][f] + noise * rng.next_normal_pair().0);
        }
        labels.push(label);
    }
    Dataset::new(inputs, labels, features, classes)
}

/// Loads a classification dataset from a headed CSV file. All columns except
/// the named label column are parsed as real features; labels may be
/// integers or strings (strings are mapped to class indices in sorted
/// order).
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("dataset.path: {e}")))?;
    let headers = reader.headers().map_err(|e| Error::Decode(format!("csv header: {e}")))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Config(format!("dataset.label_column: no column named '{label_column}'")))?;
    let feature_dim = headers.len() - 1;
    if feature_dim == 0 {
        return Err(Error::Config("csv dataset needs at least one feature column".into()));
    }
    let mut inputs = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Decode(format!("csv row {}: {e}", line + 2)))?;
        if record.len() != headers.len() {
            return Err(Error::Decode(format!(
                "csv row {}: {} fields, expected {}",
                line + 2,
                record.len(),
                headers.len()
            )));
        }
        for (i, field) in record.iter().enumerate() {
            if i == label_idx {
                raw_labels.push(field.trim().to_string());
            } else {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Decode(format!("csv row {}: '{field}' is not a number", line + 2)))?;
                inputs.push(v);
            }
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::Config("csv dataset has no data rows".into()));
    }
    let mut classes: Vec<String> = raw_labels.clone();
    classes.sort();
    classes.dedup();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label present"))
        .collect();
    Dataset::new(inputs, labels, feature_dim, classes.len())
}

/// Result of a non-IID split: per-client shards plus the public holdout
/// reserved for the cloud.
#[derive(Debug, Clone)]
pub struct Partition {
    pub clients: Vec<Dataset>,
    pub public: Dataset,
}

/// Dirichlet non-IID partition.
///
/// Per-client label-proportion vectors are drawn from
/// `Dirichlet(concentration)`; within each class, samples are assigned to
/// clients by those proportions, without replacement. A stratified
/// `public_fraction` of every class is held out first for the cloud. Every
/// client is guaranteed at least one sample (topped up from the largest
/// client when the draw leaves someone empty).
pub fn partition_dirichlet(
    dataset: &Dataset,
    n_clients: usize,
    concentration: f64,
    public_fraction: f64,
    seed: u64,
) -> Result<Partition> {
    if n_clients == 0 {
        return Err(Error::Config("partition: n_clients must be >= 1".into()));
    }
    if !(concentration > 0.0) {
        return Err(Error::Config(format!("partition: concentration must be > 0 (got {concentration})")));
    }
    if !(0.0..1.0).contains(&public_fraction) {
        return Err(Error::Config(format!(
            "partition: public_fraction must be in [0, 1) (got {public_fraction})"
        )));
    }
    if dataset.len() < n_clients {
        return Err(Error::Config(format!(
            "partition: {} samples cannot cover {n_clients} clients",
            dataset.len()
        )));
    }

    let classes = dataset.num_classes();
    let mut rng = CounterRng::new(seed ^ DATA_DOMAIN ^ 0x7061_7274);

    // Shuffle indices within each class.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for i in 0..dataset.len() {
        by_class[dataset.label(i)].push(i);
    }
    for group in by_class.iter_mut() {
        group.shuffle(&mut rng);
    }

    // Stratified public holdout.
    let mut public_idx = Vec::new();
    let mut remaining: Vec<Vec<usize>> = Vec::with_capacity(classes);
    for group in by_class {
        let take = (public_fraction * group.len() as f64).round() as usize;
        let take = take.min(group.len());
        public_idx.extend_from_slice(&group[..take]);
        remaining.push(group[take..].to_vec());
    }

    // Per-client label proportions from the Dirichlet draw.
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::Config(format!("partition: bad concentration: {e}")))?;
    let mut proportions = vec![vec![0.0f64; classes]; n_clients];
    for client in proportions.iter_mut() {
        let mut total = 0.0;
        for p in client.iter_mut() {
            let g: f64 = gamma.sample(&mut rng);
            *p = g.max(1e-300);
            total += *p;
        }
        for p in client.iter_mut() {
            *p /= total;
        }
    }

    // Split each class across clients by their relative weight on it.
    let mut client_idx: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for (c, group) in remaining.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let weights: Vec<f64> = (0..n_clients).map(|i| proportions[i][c]).collect();
        let total: f64 = weights.iter().sum();
        let n = group.len();
        let mut cursor = 0usize;
        let mut cumulative = 0.0;
        for (i, w) in weights.iter().enumerate() {
            cumulative += w / total;
            let end = if i + 1 == n_clients { n } else { (cumulative * n as f64).round() as usize };
            let end = end.clamp(cursor, n);
            client_idx[i].extend_from_slice(&group[cursor..end]);
            cursor = end;
        }
    }

    // Top up empty clients from the largest one.
    loop {
        let Some(empty) = client_idx.iter().position(|c| c.is_empty()) else { break };
        let donor = client_idx
            .iter()
            .enumerate()
            .max_by_key(|(_, c)| c.len())
            .map(|(i, _)| i)
            .unwrap();
        if client_idx[donor].len() <= 1 {
            return Err(Error::Config(
                "partition: not enough non-public samples to give every client one".into(),
            ));
        }
        let moved = client_idx[donor].pop().unwrap();
        client_idx[empty].push(moved);
    }

    let clients = client_idx
        .iter()
        .map(|idx| dataset.subset(idx))
        .collect::<Result<Vec<_>>>()?;
    let public = dataset.subset(&public_idx)?;
    Ok(Partition { clients, public })
}

/// Splits off a deterministic evaluation holdout before partitioning.
pub fn split_eval(dataset: &Dataset, eval_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&eval_fraction) {
        return Err(Error::Config(format!(
            "dataset.eval_fraction must be in [0, 1) (got {eval_fraction})"
        )));
    }
    let n = dataset.len();
    let take = (eval_fraction * n as f64).round() as usize;
    if take == 0 {
        return Ok((dataset.clone(), dataset.subset(&[])?));
    }
    let mut rng = CounterRng::new(seed ^ DATA_DOMAIN ^ 0x6576_616C);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let eval = dataset.subset(&indices[..take])?;
    let train = dataset.subset(&indices[take..])?;
    Ok((train, eval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn synthetic_data_is_deterministic_and_balanced() {
        let a = synthetic_mixture(8, 4, 100, 1.0, 3.0, 7).unwrap();
        let b = synthetic_mixture(8, 4, 100, 1.0, 3.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.label_histogram(), vec![25; 4]);
    }

    #[test]
    fn partition_covers_dataset_disjointly() {
        let data = synthetic_mixture(6, 4, 400, 1.0, 3.0, 11).unwrap();
        let part = partition_dirichlet(&data, 10, 1.0, 0.2, 42).unwrap();
        let total: usize = part.clients.iter().map(|c| c.len()).sum::<usize>() + part.public.len();
        assert_eq!(total, data.len());
        assert!(part.clients.iter().all(|c| !c.is_empty()));
        // Disjoint and complete: every original row is matched exactly once.
        // Rows are floats drawn independently, so match on full content.
        let mut seen: Vec<Vec<u64>> = Vec::new();
        let mut collect = |d: &Dataset| {
            for i in 0..d.len() {
                seen.push(d.row(i).iter().map(|x| x.to_bits()).collect());
            }
        };
        for c in &part.clients {
            collect(c);
        }
        collect(&part.public);
        seen.sort();
        let before = seen.len();
        seen.dedup();
        assert_eq!(seen.len(), before, "duplicate rows across shards");
    }

    #[test]
    fn near_uniform_concentration_preserves_label_mix() {
        let data = synthetic_mixture(4, 4, 2000, 1.0, 3.0, 5).unwrap();
        let part = partition_dirichlet(&data, 10, 100.0, 0.0, 9).unwrap();
        let global = data.label_histogram();
        let global_total: usize = global.iter().sum();
        for (i, client) in part.clients.iter().enumerate() {
            let hist = client.label_histogram();
            let total: usize = hist.iter().sum();
            let tv: f64 = hist
                .iter()
                .zip(&global)
                .map(|(&h, &g)| (h as f64 / total as f64 - g as f64 / global_total as f64).abs())
                .sum::<f64>()
                / 2.0;
            assert!(tv <= 0.1, "client {i}: total-variation distance {tv}");
        }
    }

    #[test]
    fn low_concentration_produces_skewed_clients() {
        // Fixed-seed fixture: 4 classes, 10 clients, concentration 0.1.
        let data = synthetic_mixture(4, 4, 2000, 1.0, 3.0, 5).unwrap();
        let part = partition_dirichlet(&data, 10, 0.1, 0.0, 13).unwrap();
        let max_share = part
            .clients
            .iter()
            .map(|c| {
                let hist = c.label_histogram();
                let total: usize = hist.iter().sum();
                hist.into_iter().map(|h| h as f64 / total as f64).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        assert!(max_share > 0.8, "most skewed client has max label share {max_share}");
    }

    #[test]
    fn partition_is_deterministic() {
        let data = synthetic_mixture(4, 3, 300, 1.0, 3.0, 2).unwrap();
        let a = partition_dirichlet(&data, 7, 0.5, 0.1, 3).unwrap();
        let b = partition_dirichlet(&data, 7, 0.5, 0.1, 3).unwrap();
        for (x, y) in a.clients.iter().zip(&b.clients) {
            assert_eq!(x, y);
        }
        assert_eq!(a.public, b.public);
    }

    #[test]
    fn partition_rejects_bad_inputs() {
        let data = synthetic_mixture(4, 2, 10, 1.0, 3.0, 2).unwrap();
        assert!(partition_dirichlet(&data, 11, 1.0, 0.0, 1).is_err());
        assert!(partition_dirichlet(&data, 2, 0.0, 0.0, 1).is_err());
        assert!(partition_dirichlet(&data, 2, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn sample_batch_is_deterministic_without_replacement() {
        let data = synthetic_mixture(3, 3, 60, 1.0, 2.0, 4).unwrap();
        let mut rng1 = CounterRng::new(99);
        let mut rng2 = CounterRng::new(99);
        let a = data.sample_batch(8, &mut rng1).unwrap();
        let b = data.sample_batch(8, &mut rng2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.size(), 8);
        let whole = data.sample_batch(100, &mut rng1).unwrap();
        assert_eq!(whole.size(), 60);
    }

    #[test]
    fn csv_roundtrip_with_string_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "x1,label,x2").unwrap();
        writeln!(f, "0.5,cat,1.5").unwrap();
        writeln!(f, "-1.0,dog,2.0").unwrap();
        writeln!(f, "0.25,cat,-0.5").unwrap();
        drop(f);
        let data = load_csv(&path, "label").unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.feature_dim(), 2);
        assert_eq!(data.num_classes(), 2);
        // "cat" < "dog" in sorted order.
        assert_eq!(data.label(0), 0);
        assert_eq!(data.label(1), 1);
        assert_eq!(data.row(1), &[-1.0, 2.0]);
        assert!(load_csv(&path, "nope").is_err());
    }

    #[test]
    fn eval_split_is_disjoint() {
        let data = synthetic_mixture(4, 2, 100, 1.0, 3.0, 8).unwrap();
        let (train, eval) = split_eval(&data, 0.2, 3).unwrap();
        assert_eq!(train.len() + eval.len(), 100);
        assert_eq!(eval.len(), 20);
    }
}
