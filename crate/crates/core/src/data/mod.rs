//! Dataset provisioning: synthetic generators, IDX ingestion and node partitioning.

mod cache;
mod idx;

pub use cache::{read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use idx::{
    decode, encode_images, encode_labels, load_idx, parse_images, parse_labels, IdxImages,
    IMAGES_MAGIC, LABELS_MAGIC,
};

use std::path::PathBuf;

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{Dataset, Example};
use crate::rng::{role, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    SyntheticBlobs,
    SyntheticLogistic,
    IdxFiles,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum PartitionScheme {
    Iid,
    /// Per-class node proportions drawn from a symmetric Dirichlet(γ).
    LabelSkew { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPair {
    pub images: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    pub source: DataSource,
    pub num_classes: usize,
    pub dim: usize,
    pub per_node_size: usize,
    /// Fraction of all provisioned examples held out as the cloud test set.
    pub test_fraction: f64,
    pub partition: PartitionScheme,
    pub seed: u64,
    /// Within-class standard deviation for blobs.
    pub blob_std: f64,
    /// Distance between class means, in units of `blob_std` (blobs), or the
    /// logit scale of the ground-truth model (logistic).
    pub separation: f64,
    /// IDX file pairs, concatenated in order.
    pub idx: Vec<IdxPair>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            source: DataSource::SyntheticBlobs,
            num_classes: 10,
            dim: 10,
            per_node_size: 100,
            test_fraction: 0.2,
            partition: PartitionScheme::Iid,
            seed: 0,
            blob_std: 0.1,
            separation: 4.0,
            idx: Vec::new(),
        }
    }
}

/// Node shards plus the held-out cloud test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub shards: Vec<Dataset>,
    pub test: Dataset,
}

fn class_means(spec: &DataSpec, stream: &mut Stream) -> Vec<Vec<f64>> {
    let (c, d) = (spec.num_classes, spec.dim);
    let spread = spec.separation * spec.blob_std;
    if c <= d {
        // Scaled, centered basis vectors: every pair of means is `spread` apart.
        let a = spread / std::f64::consts::SQRT_2;
        (0..c)
            .map(|k| {
                (0..d)
                    .map(|i| {
                        let e = if i == k { 1.0 } else { 0.0 };
                        let centre = if i < c { 1.0 / c as f64 } else { 0.0 };
                        0.5 + a * (e - centre)
                    })
                    .collect()
            })
            .collect()
    } else {
        (0..c)
            .map(|_| {
                let dir: Vec<f64> = (0..d).map(|_| stream.gaussian()).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                dir.iter().map(|v| 0.5 + spread / 2.0 * v / norm).collect()
            })
            .collect()
    }
}

/// Generate `n` synthetic examples with features clamped to `[0, 1]`.
pub fn gen_synthetic(spec: &DataSpec, n: usize, seed: u64) -> Result<Dataset> {
    if spec.num_classes < 2 || spec.dim == 0 {
        return Err(Error::domain("data", "need at least 2 classes and 1 feature"));
    }
    let mut stream = Stream::derive(seed, role::SYNTHETIC, 0);
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let examples = match spec.source {
        DataSource::SyntheticBlobs => {
            let means = class_means(spec, &mut stream);
            (0..n)
                .map(|_| {
                    let label = stream.below(spec.num_classes);
                    let input = means[label]
                        .iter()
                        .map(|m| clamp(stream.normal(*m, spec.blob_std)))
                        .collect();
                    Example::new(input, label)
                })
                .collect()
        }
        DataSource::SyntheticLogistic => {
            let (c, d) = (spec.num_classes, spec.dim);
            let truth: Vec<f64> = (0..c * d)
                .map(|_| stream.normal(0.0, spec.separation))
                .collect();
            (0..n)
                .map(|_| {
                    let input: Vec<f64> = (0..d).map(|_| stream.uniform()).collect();
                    let z: Vec<f64> = (0..c)
                        .map(|r| {
                            (0..d)
                                .map(|i| truth[r * d + i] * (input[i] - 0.5))
                                .sum::<f64>()
                        })
                        .collect();
                    let p = crate::learner::softmax(&z);
                    let u = stream.uniform();
                    let mut acc = 0.0;
                    let mut label = c - 1;
                    for (k, pk) in p.iter().enumerate() {
                        acc += pk;
                        if u < acc {
                            label = k;
                            break;
                        }
                    }
                    Example::new(input, label)
                })
                .collect()
        }
        DataSource::IdxFiles => {
            return Err(Error::domain("data.source", "idx_files is not a synthetic source"))
        }
    };
    Dataset::new(examples)
}

fn shuffle<T>(items: &mut [T], stream: &mut Stream) {
    for i in (1..items.len()).rev() {
        let j = stream.below(i + 1);
        items.swap(i, j);
    }
}

/// Split `data` into a test set (carved first) and `k` disjoint node shards.
pub fn partition(
    data: &Dataset,
    k: usize,
    scheme: PartitionScheme,
    test_fraction: f64,
    seed: u64,
) -> Result<Partition> {
    if k == 0 {
        return Err(Error::domain("sim.nodes", "must be at least 1"));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::domain("data.test_fraction", "must lie in [0, 1)"));
    }
    let n = data.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let needed = k + n_test.max(1);
    if n < needed {
        return Err(Error::InsufficientExamples {
            needed,
            available: n,
        });
    }
    let mut stream = Stream::derive(seed, role::PARTITION, 0);
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut stream);
    let n_test = n_test.max(1);
    let (test_idx, rest) = order.split_at(n_test);
    let examples = data.examples();
    let pick = |idx: &[usize]| Dataset::new(idx.iter().map(|&i| examples[i].clone()).collect());

    let assignment: Vec<Vec<usize>> = match scheme {
        PartitionScheme::Iid => {
            let base = rest.len() / k;
            let extra = rest.len() % k;
            let mut start = 0;
            (0..k)
                .map(|node| {
                    let len = base + usize::from(node < extra);
                    let shard = rest[start..start + len].to_vec();
                    start += len;
                    shard
                })
                .collect()
        }
        PartitionScheme::LabelSkew { gamma } => label_skew(examples, rest, k, gamma, &mut stream)?,
    };
    let shards = assignment
        .iter()
        .map(|idx| pick(idx))
        .collect::<Result<Vec<_>>>()?;
    Ok(Partition {
        shards,
        test: pick(test_idx)?,
    })
}

fn label_skew(
    examples: &[Example],
    pool: &[usize],
    k: usize,
    gamma: f64,
    stream: &mut Stream,
) -> Result<Vec<Vec<usize>>> {
    let gamma_dist =
        Gamma::new(gamma, 1.0).map_err(|_| Error::domain("data.partition.gamma", "must be positive"))?;
    let num_classes = pool.iter().map(|&i| examples[i].label + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for &i in pool {
        by_class[examples[i].label].push(i);
    }
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); k];
    for members in &by_class {
        let mut weights: Vec<f64> = (0..k).map(|_| gamma_dist.sample(stream.rng())).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            weights = vec![1.0; k];
        }
        let total: f64 = weights.iter().sum();
        let mut cum = 0.0;
        let mut start = 0;
        for (node, w) in weights.iter().enumerate() {
            cum += w / total;
            let end = if node + 1 == k {
                members.len()
            } else {
                ((cum * members.len() as f64).round() as usize).min(members.len())
            };
            shards[node].extend_from_slice(&members[start..end.max(start)]);
            start = end.max(start);
        }
    }
    // Every node needs at least one example; borrow from the largest shard.
    for node in 0..k {
        if shards[node].is_empty() {
            let donor = (0..k).max_by_key(|&j| shards[j].len()).unwrap();
            let moved = shards[donor].pop().ok_or(Error::InsufficientExamples {
                needed: k,
                available: pool.len(),
            })?;
            shards[node].push(moved);
        }
    }
    Ok(shards)
}

/// Build node shards and the cloud test set described by `spec`.
pub fn provision(spec: &DataSpec, k: usize) -> Result<Partition> {
    let n_train = k * spec.per_node_size;
    let n_test = ((n_train as f64) * spec.test_fraction / (1.0 - spec.test_fraction)).round() as usize;
    let total = n_train + n_test;
    let data = match spec.source {
        DataSource::SyntheticBlobs | DataSource::SyntheticLogistic => {
            gen_synthetic(spec, total, spec.seed)?
        }
        DataSource::IdxFiles => {
            if spec.idx.is_empty() {
                return Err(Error::domain("data.idx", "idx_files source needs at least one file pair"));
            }
            let mut all = Vec::new();
            for pair in &spec.idx {
                all.extend(load_idx(&pair.images, &pair.labels)?.into_examples());
            }
            if all.len() < total {
                return Err(Error::InsufficientExamples {
                    needed: total,
                    available: all.len(),
                });
            }
            all.truncate(total);
            Dataset::new(all)?
        }
    };
    partition(&data, k, spec.partition, spec.test_fraction, spec.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(c: usize, d: usize) -> DataSpec {
        DataSpec {
            num_classes: c,
            dim: d,
            ..DataSpec::default()
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_normalized() {
        let spec = blobs(3, 4);
        let a = gen_synthetic(&spec, 200, 5).unwrap();
        assert_eq!(a, gen_synthetic(&spec, 200, 5).unwrap());
        assert_ne!(a, gen_synthetic(&spec, 200, 6).unwrap());
        assert!(a
            .examples()
            .iter()
            .all(|e| e.input.iter().all(|x| (0.0..=1.0).contains(x))));
        let logistic = DataSpec {
            source: DataSource::SyntheticLogistic,
            ..spec
        };
        let b = gen_synthetic(&logistic, 200, 5).unwrap();
        assert!(b.examples().iter().all(|e| e.label < 3));
    }

    #[test]
    fn binary_blobs_are_balanced_within_three_sigma() {
        // Labels are fair coin flips: count ~ Binomial(n, 1/2), sd = sqrt(n)/2.
        let n = 4000;
        let data = gen_synthetic(&blobs(2, 3), n, 17).unwrap();
        let ones = data.label_counts(2)[1] as f64;
        let sd = (n as f64).sqrt() / 2.0;
        assert!((ones - n as f64 / 2.0).abs() <= 3.0 * sd, "{ones}");
    }

    #[test]
    fn single_node_iid_gets_everything_but_test() {
        let data = gen_synthetic(&blobs(2, 2), 50, 1).unwrap();
        let p = partition(&data, 1, PartitionScheme::Iid, 0.2, 3).unwrap();
        assert_eq!(p.test.len(), 10);
        assert_eq!(p.shards.len(), 1);
        assert_eq!(p.shards[0].len(), 40);
    }

    #[test]
    fn iid_shards_are_balanced() {
        let data = gen_synthetic(&blobs(3, 2), 103, 1).unwrap();
        let p = partition(&data, 7, PartitionScheme::Iid, 0.1, 3).unwrap();
        let sizes: Vec<usize> = p.shards.iter().map(Dataset::len).collect();
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(max - min <= 1);
        assert_eq!(sizes.iter().sum::<usize>() + p.test.len(), 103);
    }

    #[test]
    fn insufficient_examples() {
        let data = gen_synthetic(&blobs(2, 2), 5, 1).unwrap();
        assert!(matches!(
            partition(&data, 10, PartitionScheme::Iid, 0.2, 0),
            Err(Error::InsufficientExamples { .. })
        ));
    }

    #[test]
    fn strong_label_skew_concentrates_classes() {
        let spec = blobs(10, 10);
        let data = gen_synthetic(&spec, 1200, 2).unwrap();
        let p = partition(&data, 10, PartitionScheme::LabelSkew { gamma: 0.1 }, 0.2, 2).unwrap();
        let dominated = p.shards.iter().any(|s| {
            let counts = s.label_counts(10);
            *counts.iter().max().unwrap() * 2 > s.len()
        });
        assert!(dominated);
        assert!(p.shards.iter().all(|s| s.len() >= 1));
    }
}
