//! k-means over feature embeddings: Lloyd iterations from Forgy starts,
//! optionally polished with single-point moves.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{DumpSet, ModelDescriptor};
use crate::metriclearn::MetricCnn;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the relative inertia improvement falls below this.
    pub tol: f64,
    /// Independent Forgy starts; the lowest final inertia wins.
    pub n_init: usize,
    /// Polish each Lloyd result with single-point moves.
    pub refine: bool,
}

impl KMeansConfig {
    pub const DEFAULT_MAX_ITER: usize = 300;
    pub const DEFAULT_TOL: f64 = 1e-6;
    pub const DEFAULT_N_INIT: usize = 50;

    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iter: Self::DEFAULT_MAX_ITER,
            tol: Self::DEFAULT_TOL,
            n_init: Self::DEFAULT_N_INIT,
            refine: true,
        }
    }

    pub fn single_start(mut self) -> Self {
        self.n_init = 1;
        self
    }
}

/// Result of one Lloyd run (or the best of several).
#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step, ending with the final value.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

fn means(points: &[Vec<f64>], assignment: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            for v in s.iter_mut() {
                *v /= n as f64;
            }
        }
    }
    (sums, counts)
}

/// Centroid update. An empty cluster takes the point farthest from its
/// own centroid (lowest index on ties), and the donor's mean is recomputed.
fn update(points: &[Vec<f64>], assignment: &mut [usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let (mut centroids, mut counts) = means(points, assignment, k, dim);
    while let Some(empty) = counts.iter().position(|&n| n == 0) {
        let mut far = (0, -1.0);
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, &centroids[assignment[i]]);
            if d > far.1 {
                far = (i, d);
            }
        }
        assignment[far.0] = empty;
        (centroids, counts) = means(points, assignment, k, dim);
    }
    centroids
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = points.first() else {
        return Err(Error::InvalidArgument("k-means needs at least one point".into()));
    };
    let dim = first.len();
    if let Some(i) = points.iter().position(|p| p.len() != dim) {
        return Err(Error::InvalidArgument(format!(
            "point {i} has dimension {}, expected {dim}",
            points[i].len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("k-means points must be finite".into()));
    }
    Ok(dim)
}

/// Lloyd's method from the given starting centroids.
pub fn lloyd(points: &[Vec<f64>], init: Vec<Vec<f64>>, max_iter: usize, tol: f64) -> Result<KMeansFit> {
    let dim = check_points(points)?;
    let k = init.len();
    if k == 0 || init.iter().any(|c| c.len() != dim) {
        return Err(Error::InvalidArgument(format!(
            "need at least one {dim}-d starting centroid"
        )));
    }
    let mut centroids = init;
    let mut assignment: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let j = inertia(points, &centroids, &next);
        let unchanged = next == assignment;
        let small_gain = history
            .last()
            .is_some_and(|&prev: &f64| prev - j <= tol * prev);
        history.push(j);
        assignment = next;
        if unchanged || small_gain {
            break;
        }
        centroids = update(points, &mut assignment, k);
    }
    centroids = update(points, &mut assignment, k);
    let j = inertia(points, &centroids, &assignment);
    history.push(j);
    Ok(KMeansFit {
        centroids,
        assignment,
        inertia: j,
        history,
    })
}

/// Single-point moves on top of a Lloyd fixed point: a point leaves its
/// cluster whenever doing so lowers the objective once both centroids are
/// recomputed. Lloyd cannot make these moves because it keeps centroids
/// fixed while reassigning.
pub fn refine(points: &[Vec<f64>], fit: KMeansFit, max_sweeps: usize) -> Result<KMeansFit> {
    check_points(points)?;
    let k = fit.centroids.len();
    let KMeansFit {
        mut centroids,
        mut assignment,
        mut history,
        ..
    } = fit;
    let mut counts = vec![0usize; k];
    assignment.iter().for_each(|&a| counts[a] += 1);
    for _ in 0..max_sweeps {
        let scale = history.last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = assignment[i];
            let na = counts[a] as f64;
            if counts[a] < 2 {
                continue;
            }
            let leave = na / (na - 1.0) * sq_dist(p, &centroids[a]);
            let mut best = (a, 0.0);
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let delta = nb / (nb + 1.0) * sq_dist(p, &centroids[b]) - leave;
                if delta < best.1 - 1e-12 * scale {
                    best = (b, delta);
                }
            }
            let b = best.0;
            if b == a {
                continue;
            }
            let nb = counts[b] as f64;
            for (c, v) in centroids[a].iter_mut().zip(p) {
                *c = (*c * na - v) / (na - 1.0);
            }
            for (c, v) in centroids[b].iter_mut().zip(p) {
                *c = (*c * nb + v) / (nb + 1.0);
            }
            counts[a] -= 1;
            counts[b] += 1;
            assignment[i] = b;
            moved = true;
        }
        if !moved {
            break;
        }
        centroids = update(points, &mut assignment, k);
        history.push(inertia(points, &centroids, &assignment));
    }
    let j = *history.last().expect("lloyd records at least one value");
    Ok(KMeansFit {
        centroids,
        assignment,
        inertia: j,
        history,
    })
}

/// Indices of the first occurrence of each distinct point.
fn distinct(points: &[Vec<f64>]) -> Vec<usize> {
    let mut seen = HashSet::new();
    (0..points.len())
        .filter(|&i| seen.insert(points[i].iter().map(|v| v.to_bits()).collect::<Vec<u64>>()))
        .collect()
}

/// Forgy start: `k` distinct points drawn uniformly without replacement.
pub fn forgy_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let ids = distinct(points);
    if k == 0 || k > ids.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} but there are {} distinct points",
            ids.len()
        )));
    }
    Ok(index::sample(rng, ids.len(), k)
        .into_iter()
        .map(|i| points[ids[i]].clone())
        .collect())
}

/// Best of `n_init` Lloyd runs (each optionally refined) from successive Forgy draws of one seeded
/// stream; ties keep the earliest run.
pub fn kmeans(points: &[Vec<f64>], config: &KMeansConfig) -> Result<KMeansFit> {
    check_points(points)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..config.n_init.max(1) {
        let init = forgy_init(points, config.k, &mut rng)?;
        let mut fit = lloyd(points, init, config.max_iter, config.tol)?;
        if config.refine {
            fit = refine(points, fit, config.max_iter)?;
        }
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one run"))
}

/// Per-layer clustering of features, persisted as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub layer: usize,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster of each feature, indexed by feature.
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub seed: u64,
}

impl ClusterModel {
    pub fn from_fit(layer: usize, seed: u64, fit: KMeansFit) -> Self {
        ClusterModel {
            layer,
            k: fit.centroids.len(),
            centroids: fit.centroids,
            assignment: fit.assignment,
            inertia: fit.inertia,
            seed,
        }
    }

    /// Features assigned to `cluster`, ascending.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&f| self.assignment[f] == cluster)
            .collect()
    }

    pub fn feature_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.centroids.len() != self.k {
            return Err(Error::InvalidArgument(format!(
                "cluster model for layer {}: k = {} but {} centroids",
                self.layer,
                self.k,
                self.centroids.len()
            )));
        }
        if let Some(&a) = self.assignment.iter().find(|&&a| a >= self.k) {
            return Err(Error::InvalidArgument(format!(
                "cluster model for layer {}: label {a} ≥ k = {}",
                self.layer, self.k
            )));
        }
        if !(self.inertia >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cluster model for layer {}: negative inertia",
                self.layer
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cluster model serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ClusterModel = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        m.validate().map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Ok(m)
    }
}

fn model_for(models: &BTreeMap<usize, MetricCnn>, layer: usize) -> Result<&MetricCnn> {
    models
        .get(&layer)
        .ok_or_else(|| Error::InvalidArgument(format!("no metric model for layer {layer}")))
}

fn to_points(embeddings: &[Tensor<f32>]) -> Vec<Vec<f64>> {
    embeddings
        .iter()
        .map(|v| v.data().iter().map(|&x| x as f64).collect())
        .collect()
}

fn cluster_points(layer: usize, points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel> {
    let fit = kmeans(points, &KMeansConfig::new(k, seed))?;
    Ok(ClusterModel::from_fit(layer, seed, fit))
}

/// Cluster each layer's features using the embeddings of a single sample's
/// unhooked taps (`taps[d - 1]` for layer `d`).
pub fn cluster_sample(
    models: &BTreeMap<usize, MetricCnn>,
    taps: &[Tensor<f32>],
    descriptor: &ModelDescriptor,
    seed: u64,
) -> Result<Vec<ClusterModel>> {
    if taps.len() != descriptor.layer_count() {
        return Err(Error::InvalidArgument(format!(
            "{} taps for a {}-layer model",
            taps.len(),
            descriptor.layer_count()
        )));
    }
    descriptor
        .layers
        .iter()
        .zip(taps)
        .map(|(l, tap)| {
            if tap.shape() != l.map_shape() {
                return Err(Error::shape(
                    "cluster_sample",
                    format!("layer {} tap is {:?}, expected {:?}", l.index, tap.shape(), l.map_shape()),
                ));
            }
            let v = model_for(models, l.index)?.embed_features(tap)?;
            cluster_points(l.index, &to_points(&v), l.cluster_count, seed)
        })
        .collect()
}

/// Cluster each layer's features by their mean embedding over every sample
/// in `dumps`.
pub fn cluster_mean(
    models: &BTreeMap<usize, MetricCnn>,
    dumps: &DumpSet,
    descriptor: &ModelDescriptor,
    seed: u64,
) -> Result<Vec<ClusterModel>> {
    let mut out = Vec::with_capacity(descriptor.layer_count());
    for l in &descriptor.layers {
        let model = model_for(models, l.index)?;
        let mut sums: Vec<Vec<f64>> = Vec::new();
        let mut n = 0usize;
        for d in dumps.layer(l.index) {
            if d.activations.shape() != l.map_shape() {
                return Err(Error::shape(
                    "cluster_mean",
                    format!(
                        "sample {} layer {} is {:?}, expected {:?}",
                        d.sample,
                        l.index,
                        d.activations.shape(),
                        l.map_shape()
                    ),
                ));
            }
            let points = to_points(&model.embed_features(&d.activations)?);
            if sums.is_empty() {
                sums = vec![vec![0.0; points[0].len()]; points.len()];
            }
            for (s, p) in sums.iter_mut().zip(&points) {
                for (a, b) in s.iter_mut().zip(p) {
                    *a += b;
                }
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidArgument(format!("no samples for layer {}", l.index)));
        }
        for s in &mut sums {
            for v in s.iter_mut() {
                *v /= n as f64;
            }
        }
        out.push(cluster_points(l.index, &sums, l.cluster_count, seed)?);
    }
    Ok(out)
}
