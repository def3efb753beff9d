//! Descriptors and the two-step k-means clustering of training samples.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::FeatureMap;

pub const DEFAULT_INIT_TRIALS: usize = 1000;
pub const MAX_LLOYD_ITERATIONS: usize = 100;

/// Pooled, L2-normalized summary of a compressed feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor(pub Vec<f64>);

impl Descriptor {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance_sq(&self, other: &Descriptor) -> f64 {
        sq_dist(&self.0, &other.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-channel spatial mean, then L2 normalization. A zero map stays zero.
pub fn make_descriptor(z: &FeatureMap) -> Descriptor {
    let (w, h, c) = z.shape();
    let mut v = vec![0.0; c];
    for cell in z.data().chunks_exact(c) {
        for (a, &x) in v.iter_mut().zip(cell) {
            *a += x as f64;
        }
    }
    let n = (w * h) as f64;
    v.iter_mut().for_each(|a| *a /= n);
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|a| *a /= norm);
    }
    Descriptor(v)
}

/// Indices of the first occurrence of every distinct descriptor (bitwise).
fn distinct_indices(descriptors: &[Descriptor]) -> Vec<usize> {
    let mut seen = HashSet::new();
    (0..descriptors.len())
        .filter(|&i| seen.insert(descriptors[i].0.iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
        .collect()
}

fn min_pairwise(descriptors: &[Descriptor], subset: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            best = best.min(descriptors[i].distance_sq(&descriptors[j]));
        }
    }
    best
}

/// Indices of the seeds chosen by [`farthest_init`], ascending.
pub fn farthest_init_indices<R: Rng + ?Sized>(
    descriptors: &[Descriptor],
    k: usize,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k == 0 || trials == 0 {
        return Err(Error::config("farthest_init needs k >= 1 and trials >= 1"));
    }
    let distinct = distinct_indices(descriptors);
    if distinct.len() < k {
        return Err(Error::InsufficientDistinct { needed: k, found: distinct.len() });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..trials {
        let mut subset: Vec<usize> = sample(rng, distinct.len(), k).into_iter().map(|i| distinct[i]).collect();
        subset.sort_unstable();
        let spread = min_pairwise(descriptors, &subset);
        if best.as_ref().is_none_or(|(s, _)| spread > *s) {
            best = Some((spread, subset));
        }
    }
    Ok(best.expect("trials >= 1").1)
}

/// The best of `trials` uniform random k-subsets under the maximin
/// pairwise-distance criterion.
pub fn farthest_init<R: Rng + ?Sized>(
    descriptors: &[Descriptor],
    k: usize,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<Descriptor>> {
    Ok(farthest_init_indices(descriptors, k, trials, rng)?.into_iter().map(|i| descriptors[i].clone()).collect())
}

/// Final clustering. Cluster indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Vec<Descriptor>,
    pub assignments: Vec<usize>,
    /// k-means objective after every assignment pass of the first step.
    pub first_step_objective: Vec<f64>,
    /// Same, for the re-run after the small clusters are dropped.
    pub second_step_objective: Vec<f64>,
}

impl ClusterModel {
    pub fn clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == cluster).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.clusters()];
        for &a in &self.assignments {
            n[a] += 1;
        }
        n
    }
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = sq_dist(m, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(data: &[&[f64]], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let labels = data
        .iter()
        .map(|x| {
            let (c, d) = nearest(centroids, x);
            total += d;
            c
        })
        .collect();
    (labels, total)
}

/// Lloyd iterations from the given centroids until the assignment stops
/// changing. Empty clusters are reseeded with the sample farthest from its
/// own centroid. Returns labels, centroids, and the objective after every
/// assignment pass.
fn lloyd(data: &[&[f64]], mut centroids: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let k = centroids.len();
    let dim = centroids[0].len();
    let (mut labels, obj) = assign(data, &centroids);
    let mut history = vec![obj];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &l) in data.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(x.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let mut taken = HashSet::new();
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = (0..data.len()).filter(|i| !taken.contains(i)).max_by(|&a, &b| {
                let da = sq_dist(data[a], &centroids[labels[a]]);
                let db = sq_dist(data[b], &centroids[labels[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            });
            if let Some(i) = far {
                taken.insert(i);
                centroids[c] = data[i].to_vec();
            }
        }
        let (next, obj) = assign(data, &centroids);
        history.push(obj);
        let fixpoint = next == labels;
        labels = next;
        if fixpoint {
            break;
        }
    }
    (labels, centroids, history)
}

/// Two-step clustering into exactly `n_experts` nonempty clusters.
///
/// k-means with `2 n_experts` maximin seeds, then the `n_experts` clusters
/// with the fewest members are dropped (ties drop the lower index first),
/// every sample is reassigned to the survivors, and Lloyd runs again.
pub fn two_step_cluster<R: Rng + ?Sized>(
    descriptors: &[Descriptor],
    n_experts: usize,
    trials: usize,
    rng: &mut R,
) -> Result<ClusterModel> {
    if n_experts == 0 {
        return Err(Error::config("need at least one expert"));
    }
    let dim = descriptors.first().map_or(0, Descriptor::dim);
    if descriptors.iter().any(|d| d.dim() != dim) {
        return Err(Error::shape("descriptors differ in length"));
    }
    let k = 2 * n_experts;
    let seeds = farthest_init_indices(descriptors, k, trials, rng)?;
    let data: Vec<&[f64]> = descriptors.iter().map(Descriptor::as_slice).collect();
    let init: Vec<Vec<f64>> = seeds.iter().map(|&i| descriptors[i].0.clone()).collect();
    let (labels, centroids, first) = lloyd(&data, init);

    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&c| (counts[c], c));
    let mut survivors: Vec<usize> = order[n_experts..].to_vec();
    survivors.sort_unstable();
    let kept: Vec<Vec<f64>> = survivors.iter().map(|&c| centroids[c].clone()).collect();
    let (assignments, centroids, second) = lloyd(&data, kept);

    Ok(ClusterModel {
        centroids: centroids.into_iter().map(Descriptor).collect(),
        assignments,
        first_step_objective: first,
        second_step_objective: second,
    })
}

/// Adjusted Rand index between two labelings of the same samples.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let pairs = |m: usize| (m * m.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&m| pairs(m)).sum();
    let rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| pairs(table.iter().map(|r| r[j]).sum())).sum();
    let total = pairs(n);
    let expected = if total > 0.0 { rows * cols / total } else { 0.0 };
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn d(v: &[f64]) -> Descriptor {
        Descriptor(v.to_vec())
    }

    #[test]
    fn descriptor_examples() {
        let z = FeatureMap::new(2, 2, 4, vec![1.0; 16]).unwrap();
        assert_eq!(make_descriptor(&z).0, vec![0.5; 4]);
        assert_eq!(make_descriptor(&FeatureMap::zeros(3, 3, 5)).0, vec![0.0; 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = (0..5 * 5 * 7).map(|_| rng.random_range(0.0..3.0f32)).collect();
        let r = make_descriptor(&FeatureMap::new(5, 5, 7, data).unwrap());
        let norm = r.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn farthest_init_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = vec![d(&[0.0]), d(&[0.1]), d(&[10.0])];
        assert_eq!(farthest_init(&pts, 2, 100, &mut rng).unwrap(), vec![d(&[0.0]), d(&[10.0])]);
        assert_eq!(farthest_init(&pts, 3, 5, &mut rng).unwrap(), pts);
        let dup = vec![d(&[1.0]), d(&[1.0]), d(&[2.0])];
        assert!(matches!(
            farthest_init(&dup, 3, 10, &mut rng),
            Err(Error::InsufficientDistinct { needed: 3, found: 2 })
        ));
    }

    #[test]
    fn farthest_init_beats_the_random_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Descriptor> =
            (0..50).map(|_| d(&[rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])).collect();
        let chosen = farthest_init_indices(&pts, 4, 1000, &mut rng).unwrap();
        let best = min_pairwise(&pts, &chosen);
        let mut fresh: Vec<f64> = (0..1000).map(|_| min_pairwise(&pts, &sample(&mut rng, 50, 4).into_vec())).collect();
        fresh.sort_by(f64::total_cmp);
        assert!(best >= fresh[500]);
    }

    fn blob(center: &[f64], n: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<Descriptor> {
        let noise = Normal::new(0.0, std).unwrap();
        (0..n).map(|_| Descriptor(center.iter().map(|c| c + noise.sample(rng)).collect())).collect()
    }

    #[test]
    fn outlier_clusters_are_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pts = blob(&[0.0, 0.0], 10, 0.05, &mut rng);
        pts.extend(blob(&[5.0, 0.0], 10, 0.05, &mut rng));
        pts.push(d(&[-3.0, 3.0]));
        pts.push(d(&[8.0, -3.0]));
        let model = two_step_cluster(&pts, 2, 1000, &mut rng).unwrap();
        let truth: Vec<usize> = (0..22).map(|i| if i < 10 || i == 20 { 0 } else { 1 }).collect();
        assert_eq!(adjusted_rand_index(&model.assignments, &truth).unwrap(), 1.0);
        assert_eq!(model.sizes().iter().filter(|&&n| n > 0).count(), 2);
        for h in [&model.first_step_objective, &model.second_step_objective] {
            assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn clustering_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Descriptor> =
            (0..40).map(|_| d(&[rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])).collect();
        let a = two_step_cluster(&pts, 3, 200, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let b = two_step_cluster(&pts, 3, 200, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        assert!(a.sizes().iter().all(|&n| n > 0));
    }

    #[test]
    fn ari_basics() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!(v < 0.0);
        assert!(adjusted_rand_index(&[0], &[0, 1]).is_err());
    }
}
