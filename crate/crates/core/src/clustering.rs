//! K-means over per-candidate pitch features and polarity-driven cluster
//! selection.
//!
//! Features are `(mean_hz, variance_hz2)` z-scored within the pool. Fitting
//! runs Lloyd's algorithm from k-means++ seeds, restarted several times under
//! derived seeds; the lowest-inertia restart wins, with the restart index as
//! tie-breaker so the outcome never depends on scheduling.

use std::collections::{BTreeMap, HashSet};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CandidatePool, EmotionLabel};
use crate::pitch::PitchStats;

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePoint {
    pub candidate_id: String,
    pub x: f64,
    pub y: f64,
}

impl FeaturePoint {
    pub fn new(candidate_id: impl Into<String>, x: f64, y: f64) -> Self {
        Self {
            candidate_id: candidate_id.into(),
            x,
            y,
        }
    }

    fn coords(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Per-feature `(mean, std)` used for z-scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl NormParams {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 2],
            std: [1.0; 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<[f64; 2]>,
    /// `(candidate_id, cluster)` in input order.
    pub assignments: Vec<(String, usize)>,
    pub norm_params: NormParams,
    pub seed: u64,
    pub inertia: f64,
    /// Restart that produced this model.
    pub restart: usize,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn cluster_of(&self, candidate_id: &str) -> Option<usize> {
        self.assignments
            .iter()
            .find(|(id, _)| id == candidate_id)
            .map(|(_, c)| *c)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for (_, c) in &self.assignments {
            sizes[*c] += 1;
        }
        sizes
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("need at least {k} points to fit {k} clusters, got {points}")]
    TooFewPoints { points: usize, k: usize },
    #[error("cluster count must be positive")]
    ZeroClusters,
    #[error("non-finite feature for candidate {0:?}")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_RESTARTS,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

pub fn fit_kmeans(points: &[FeaturePoint], k: usize, seed: u64) -> Result<ClusterModel, ClusterError> {
    fit_kmeans_with(points, k, seed, KMeansOptions::default())
}

pub fn fit_kmeans_with(
    points: &[FeaturePoint],
    k: usize,
    seed: u64,
    opts: KMeansOptions,
) -> Result<ClusterModel, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if points.len() < k {
        return Err(ClusterError::TooFewPoints {
            points: points.len(),
            k,
        });
    }
    if let Some(p) = points.iter().find(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(ClusterError::NonFinite(p.candidate_id.clone()));
    }
    let coords: Vec<[f64; 2]> = points.iter().map(FeaturePoint::coords).collect();

    let runs: Vec<LloydRun> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(seed, restart));
            let init = kmeans_plus_plus(&coords, k, &mut rng);
            lloyd(&coords, init, opts.max_iter)
        })
        .collect();

    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.inertia.total_cmp(&b.inertia).then(ia.cmp(ib)))
        .expect("at least one restart");

    Ok(ClusterModel {
        k,
        centroids: best.centroids,
        assignments: points
            .iter()
            .map(|p| p.candidate_id.clone())
            .zip(best.labels)
            .collect(),
        norm_params: NormParams::identity(),
        seed,
        inertia: best.inertia,
        restart,
        inertia_history: best.history,
    })
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(p: &[f64; 2], centroids: &[[f64; 2]]) -> (usize, f64) {
    let mut best = (0, sq_dist(p, &centroids[0]));
    for (i, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>()
}

fn kmeans_plus_plus(coords: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let n = coords.len();
    let mut chosen = Vec::with_capacity(k);
    let mut centroids = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen.push(first);
    centroids.push(coords[first]);
    let mut d2: Vec<f64> = coords.iter().map(|p| sq_dist(p, &coords[first])).collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = uniform01(rng) * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("total > 0 implies a point with positive distance")
        } else {
            // Every remaining point coincides with a centroid.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        centroids.push(coords[next]);
        for (i, p) in coords.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &coords[next]));
        }
    }
    centroids
}

struct LloydRun {
    centroids: Vec<[f64; 2]>,
    labels: Vec<usize>,
    inertia: f64,
    history: Vec<f64>,
}

fn lloyd(coords: &[[f64; 2]], mut centroids: Vec<[f64; 2]>, max_iter: usize) -> LloydRun {
    let k = centroids.len();
    let mut labels = vec![usize::MAX; coords.len()];
    let mut history = Vec::new();

    for _ in 0..max_iter.max(1) {
        let mut next: Vec<usize> = coords.iter().map(|p| nearest(p, &centroids).0).collect();
        let repaired = repair_empty_clusters(coords, &mut centroids, &mut next);
        history.push(inertia_of(coords, &centroids, &next));
        let converged = !repaired && next == labels;
        labels = next;
        if converged {
            break;
        }
        centroids = means(coords, &labels, k, &centroids);
    }

    let inertia = inertia_of(coords, &centroids, &labels);
    LloydRun {
        centroids,
        labels,
        inertia,
        history,
    }
}

/// Moves the point farthest from its centroid into each empty cluster.
/// Returns whether anything moved.
fn repair_empty_clusters(coords: &[[f64; 2]], centroids: &mut [[f64; 2]], labels: &mut [usize]) -> bool {
    let k = centroids.len();
    let mut repaired = false;
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return repaired;
        };
        let donor = (0..coords.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .map(|i| (i, sq_dist(&coords[i], &centroids[labels[i]])))
            .fold(None::<(usize, f64)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
            .map(|(i, _)| i)
            .expect("a cluster with more than one member exists when k <= n");
        labels[donor] = empty;
        centroids[empty] = coords[donor];
        repaired = true;
    }
}

fn means(coords: &[[f64; 2]], labels: &[usize], k: usize, previous: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut sums = vec![[0.0; 2]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in coords.iter().zip(labels) {
        sums[l][0] += p[0];
        sums[l][1] += p[1];
        counts[l] += 1;
    }
    sums.iter()
        .zip(&counts)
        .zip(previous)
        .map(|((s, &c), prev)| {
            if c == 0 {
                *prev
            } else {
                [s[0] / c as f64, s[1] / c as f64]
            }
        })
        .collect()
}

pub(crate) fn inertia_of(coords: &[[f64; 2]], centroids: &[[f64; 2]], labels: &[usize]) -> f64 {
    coords
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum()
}

/// Recomputes the sum of squared distances from the model's own assignments.
pub fn recompute_inertia(model: &ClusterModel, points: &[FeaturePoint]) -> f64 {
    points
        .iter()
        .map(|p| {
            let c = model.cluster_of(&p.candidate_id).expect("point in model");
            sq_dist(&p.coords(), &model.centroids[c])
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    High,
    Low,
}

impl std::str::FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" => Ok(Polarity::High),
            "low" => Ok(Polarity::Low),
            other => Err(format!("polarity must be high or low, got {other:?}")),
        }
    }
}

impl std::fmt::Display for Polarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Polarity::High => "high",
            Polarity::Low => "low",
        })
    }
}

/// Which end of the pitch feature space each emotion is selected from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionPolarity {
    table: [Polarity; 5],
}

impl Default for EmotionPolarity {
    fn default() -> Self {
        let mut table = [Polarity::High; 5];
        for e in EmotionLabel::ALL {
            table[e as usize] = match e {
                EmotionLabel::Happy | EmotionLabel::Surprised | EmotionLabel::Anger => Polarity::High,
                EmotionLabel::Sad | EmotionLabel::Comfort => Polarity::Low,
            };
        }
        Self { table }
    }
}

impl EmotionPolarity {
    pub fn get(&self, emotion: EmotionLabel) -> Polarity {
        self.table[emotion as usize]
    }

    pub fn set(&mut self, emotion: EmotionLabel, polarity: Polarity) {
        self.table[emotion as usize] = polarity;
    }
}

/// Orders clusters by `z_mean + z_var` of their centroids: descending for
/// [`Polarity::High`], ascending for [`Polarity::Low`], lower index first on ties.
pub fn rank_clusters(model: &ClusterModel, polarity: Polarity) -> Vec<usize> {
    let score: Vec<f64> = model.centroids.iter().map(|c| c[0] + c[1]).collect();
    let mut order: Vec<usize> = (0..model.centroids.len()).collect();
    order.sort_by(|&a, &b| {
        let by_score = match polarity {
            Polarity::High => score[b].total_cmp(&score[a]),
            Polarity::Low => score[a].total_cmp(&score[b]),
        };
        by_score.then(a.cmp(&b))
    });
    order
}

/// Z-scores `(mean_hz, variance_hz2)` over the given stats. A constant
/// feature gets unit std so it maps to zero.
pub fn normalize_features(stats: &[(String, PitchStats)]) -> (Vec<FeaturePoint>, NormParams) {
    let n = stats.len().max(1) as f64;
    let raw: Vec<[f64; 2]> = stats.iter().map(|(_, s)| [s.mean_hz, s.variance_hz2]).collect();
    let mut params = NormParams::identity();
    for dim in 0..2 {
        let mean = raw.iter().map(|r| r[dim]).sum::<f64>() / n;
        let var = raw.iter().map(|r| (r[dim] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        params.mean[dim] = mean;
        params.std[dim] = if std > 0.0 { std } else { 1.0 };
    }
    let points = stats
        .iter()
        .zip(&raw)
        .map(|((id, _), r)| {
            FeaturePoint::new(
                id.clone(),
                (r[0] - params.mean[0]) / params.std[0],
                (r[1] - params.mean[1]) / params.std[1],
            )
        })
        .collect();
    (points, params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitchSelection {
    pub pool: CandidatePool,
    pub model: ClusterModel,
    /// Clusters in polarity order; the first `m` were kept.
    pub ranking: Vec<usize>,
}

/// Clusters the pool's candidates that have pitch stats and keeps every
/// member of the `m` best clusters for the pool's emotion, in pool order.
pub fn select_pitch_clusters(
    pool: &CandidatePool,
    stats: &BTreeMap<String, PitchStats>,
    num_clusters: usize,
    m: usize,
    polarity: Polarity,
    seed: u64,
) -> Result<PitchSelection, ClusterError> {
    let featured: Vec<(String, PitchStats)> = pool
        .candidates()
        .iter()
        .filter_map(|c| stats.get(&c.id).map(|s| (c.id.clone(), *s)))
        .collect();
    let (points, params) = normalize_features(&featured);
    let mut model = fit_kmeans(&points, num_clusters, seed)?;
    model.norm_params = params;

    let ranking = rank_clusters(&model, polarity);
    let keep: HashSet<usize> = ranking.iter().take(m).copied().collect();
    let kept_ids: HashSet<&str> = model
        .assignments
        .iter()
        .filter(|(_, c)| keep.contains(c))
        .map(|(id, _)| id.as_str())
        .collect();
    let selected = pool.filtered(|c| kept_ids.contains(c.id.as_str()));
    Ok(PitchSelection {
        pool: selected,
        model,
        ranking,
    })
}
