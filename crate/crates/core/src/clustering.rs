//! k-means++ with restarts, heterogeneity-driven divisive clustering and
//! natural cluster-count discovery over a k range.
//!
//! All randomness is derived from an explicit `u64` seed; restarts and sweep
//! points use independent seeds mixed from it, so results do not depend on
//! thread scheduling.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::stats::{mix_seed, sq_dist};

pub const DEFAULT_RESTARTS: usize = 50;
pub const MAX_ITER: usize = 300;
pub const TOLERANCE: f64 = 1e-6;
pub const TENTATIVE_SPLIT_RESTARTS: usize = 5;
pub const SPLIT_RESTARTS: usize = 10;
pub const MIN_SPLIT_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kmeans,
    Divisive,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Kmeans => "kmeans",
            Method::Divisive => "divisive",
        }
    }
}

/// One binary split of the divisive hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitNode {
    pub node: usize,
    pub left: usize,
    pub right: usize,
    pub size: usize,
    pub heterogeneity: f64,
}

/// Binary split tree. Node 0 is the root; `leaf_of_label[c]` is the node
/// holding final cluster `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTree {
    pub splits: Vec<SplitNode>,
    pub leaf_of_label: Vec<usize>,
}

impl SplitTree {
    fn parents(&self) -> Vec<Option<(usize, usize)>> {
        let n_nodes = self
            .splits
            .iter()
            .map(|s| s.left.max(s.right) + 1)
            .max()
            .unwrap_or(1);
        let mut parent = vec![None; n_nodes];
        for (i, s) in self.splits.iter().enumerate() {
            parent[s.left] = Some((s.node, i));
            parent[s.right] = Some((s.node, i));
        }
        parent
    }

    /// Heterogeneity of the split separating two final clusters (0 if equal).
    pub fn separation_height(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        let parent = self.parents();
        let ancestors = |mut node: usize| {
            let mut out = vec![node];
            while let Some((p, _)) = parent[node] {
                out.push(p);
                node = p;
            }
            out
        };
        let pa = ancestors(self.leaf_of_label[a]);
        let pb = ancestors(self.leaf_of_label[b]);
        let lca = pa.iter().find(|n| pb.contains(n)).copied().unwrap_or(0);
        self.splits
            .iter()
            .find(|s| s.node == lca)
            .map(|s| s.heterogeneity)
            .unwrap_or(0.0)
    }

    /// Pairwise separation heights between final clusters.
    pub fn height_matrix(&self) -> Vec<Vec<f64>> {
        let k = self.leaf_of_label.len();
        (0..k)
            .map(|a| (0..k).map(|b| self.separation_height(a, b)).collect())
            .collect()
    }
}

/// Output of any clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub labels: Vec<usize>,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub method: Method,
    pub split_tree: Option<SplitTree>,
    pub seed: u64,
    pub warning: Option<String>,
}

/// JSON sidecar written next to a labels CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub schema_version: u32,
    pub k: usize,
    pub method: Method,
    pub inertia: f64,
    pub seed: u64,
    pub split_tree: Option<SplitTree>,
    pub warning: Option<String>,
}

impl ClusterModel {
    pub fn sidecar(&self) -> ModelSidecar {
        ModelSidecar {
            schema_version: 1,
            k: self.k,
            method: self.method,
            inertia: self.inertia,
            seed: self.seed,
            split_tree: self.split_tree.clone(),
            warning: self.warning.clone(),
        }
    }
}

fn centroids_of(rows: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (r, &l) in rows.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(r) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

/// Within-cluster sum of squared distances to the given centroids.
pub fn inertia(rows: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    rows.iter()
        .zip(labels)
        .map(|(r, &l)| sq_dist(r, &centroids[l]))
        .sum()
}

fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(row, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding by D² sampling.
pub fn kmeans_plus_plus(rows: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centroids = vec![rows[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = rows[pick].clone();
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// A single seeded k-means run with its per-iteration inertia trace.
#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub history: Vec<f64>,
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(rows: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let far = (0..rows.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(&rows[a], &centroids[labels[a]])
                    .total_cmp(&sq_dist(&rows[b], &centroids[labels[b]]))
                    .then(b.cmp(&a))
            });
        let Some(far) = far else {
            return;
        };
        labels[far] = empty;
        centroids[empty] = rows[far].clone();
    }
}

pub fn kmeans_single(rows: &[Vec<f64>], k: usize, seed: u64) -> KMeansRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(rows, k, &mut rng);
    let mut labels = vec![0usize; rows.len()];
    let mut history = Vec::new();
    let mut current = f64::INFINITY;
    for _ in 0..MAX_ITER {
        for (l, r) in labels.iter_mut().zip(rows) {
            *l = nearest(r, &centroids).0;
        }
        repair_empty(rows, &mut labels, &mut centroids, k);
        let updated = centroids_of(rows, &labels, k);
        current = inertia(rows, &labels, &updated);
        history.push(current);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < TOLERANCE {
            break;
        }
    }
    KMeansRun {
        labels,
        centroids,
        inertia: current,
        history,
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidInput(format!("k = {k} exceeds {n} rows")));
    }
    Ok(())
}

fn check_rows(rows: &[Vec<f64>]) -> Result<()> {
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix contains non-finite values".into()));
    }
    Ok(())
}

/// Best of `restarts` seeded k-means++ runs by inertia; ties go to the
/// lowest restart index.
pub fn kmeans(rows: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<ClusterModel> {
    check_k(rows.len(), k)?;
    check_rows(rows)?;
    let runs: Vec<KMeansRun> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| kmeans_single(rows, k, mix_seed(seed, r)))
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    Ok(ClusterModel {
        labels: best.labels,
        k,
        centroids: best.centroids,
        inertia: best.inertia,
        method: Method::Kmeans,
        split_tree: None,
        seed,
        warning: None,
    })
}

/// Factors of the heterogeneity score for one cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heterogeneity {
    pub score: f64,
    pub variance: f64,
    pub split_silhouette: f64,
    pub size: usize,
}

/// `H(C) = σ²(C) · (1 + sil(C)) · ln(|C| + 1)` where σ² is the mean squared
/// distance to the centroid and sil is the mean silhouette of a tentative
/// seeded 2-means split. Clusters smaller than 4 score 0.
pub fn heterogeneity(rows: &[Vec<f64>], seed: u64) -> Heterogeneity {
    let size = rows.len();
    let zero = Heterogeneity {
        score: 0.0,
        variance: 0.0,
        split_silhouette: 0.0,
        size,
    };
    if size < MIN_SPLIT_SIZE {
        return zero;
    }
    let centroid = centroids_of(rows, &vec![0; size], 1).remove(0);
    let variance = rows.iter().map(|r| sq_dist(r, &centroid)).sum::<f64>() / size as f64;
    if variance <= 0.0 {
        return zero;
    }
    let split = kmeans(rows, 2, TENTATIVE_SPLIT_RESTARTS, seed).expect("size >= 4 admits k = 2");
    let sil = metrics::silhouette(rows, &split.labels).unwrap_or(0.0);
    Heterogeneity {
        score: variance * (1.0 + sil) * ((size + 1) as f64).ln(),
        variance,
        split_silhouette: sil,
        size,
    }
}

struct Leaf {
    node: usize,
    members: Vec<usize>,
    h: f64,
}

/// Top-down clustering: repeatedly split the leaf with the largest
/// heterogeneity (ties: larger leaf, then lower node id) by seeded 2-means
/// until `k_target` leaves exist, every leaf scores 0, or (optionally) the
/// best score falls below `h_threshold`.
pub fn divisive_cluster(
    rows: &[Vec<f64>],
    k_target: usize,
    seed: u64,
    h_threshold: Option<f64>,
) -> Result<ClusterModel> {
    check_k(rows.len(), k_target)?;
    check_rows(rows)?;
    let subset = |members: &[usize]| members.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
    let score = |node: usize, members: &[usize]| {
        heterogeneity(&subset(members), mix_seed(seed, 2 * node as u64 + 1)).score
    };
    let all: Vec<usize> = (0..rows.len()).collect();
    let mut leaves = vec![Leaf {
        node: 0,
        h: score(0, &all),
        members: all,
    }];
    let mut splits = Vec::new();
    let mut next_node = 1;
    let mut warning = None;
    while leaves.len() < k_target {
        let best = (0..leaves.len())
            .max_by(|&a, &b| {
                let (la, lb) = (&leaves[a], &leaves[b]);
                la.h.total_cmp(&lb.h)
                    .then(la.members.len().cmp(&lb.members.len()))
                    .then(lb.node.cmp(&la.node))
            })
            .expect("at least one leaf");
        let h = leaves[best].h;
        if h <= 0.0 {
            let msg = format!(
                "stopped at {} clusters: no cluster has positive heterogeneity",
                leaves.len()
            );
            warn!("{msg}");
            warning = Some(msg);
            break;
        }
        if h_threshold.is_some_and(|t| h < t) {
            break;
        }
        let leaf = leaves.swap_remove(best);
        let sub = subset(&leaf.members);
        let split = kmeans(&sub, 2, SPLIT_RESTARTS, mix_seed(seed, 2 * leaf.node as u64))?;
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for (&i, &l) in leaf.members.iter().zip(&split.labels) {
            if l == 0 {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        let (ln, rn) = (next_node, next_node + 1);
        next_node += 2;
        splits.push(SplitNode {
            node: leaf.node,
            left: ln,
            right: rn,
            size: leaf.members.len(),
            heterogeneity: h,
        });
        leaves.push(Leaf {
            node: ln,
            h: score(ln, &left),
            members: left,
        });
        leaves.push(Leaf {
            node: rn,
            h: score(rn, &right),
            members: right,
        });
    }
    leaves.sort_by_key(|l| l.node);
    let k = leaves.len();
    let mut labels = vec![0; rows.len()];
    for (c, leaf) in leaves.iter().enumerate() {
        for &i in &leaf.members {
            labels[i] = c;
        }
    }
    let centroids = centroids_of(rows, &labels, k);
    Ok(ClusterModel {
        inertia: inertia(rows, &labels, &centroids),
        labels,
        k,
        centroids,
        method: Method::Divisive,
        split_tree: Some(SplitTree {
            splits,
            leaf_of_label: leaves.iter().map(|l| l.node).collect(),
        }),
        seed,
        warning,
    })
}

/// A clustering procedure that can be re-run on resampled data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clusterer {
    KMeans { k: usize, restarts: usize },
    Divisive { k: usize },
}

impl Clusterer {
    pub fn fit(&self, rows: &[Vec<f64>], seed: u64) -> Result<ClusterModel> {
        match *self {
            Clusterer::KMeans { k, restarts } => kmeans(rows, k, restarts, seed),
            Clusterer::Divisive { k } => divisive_cluster(rows, k, seed, None),
        }
    }

    pub fn method(&self) -> Method {
        match self {
            Clusterer::KMeans { .. } => Method::Kmeans,
            Clusterer::Divisive { .. } => Method::Divisive,
        }
    }
}

/// Weights of silhouette, Calinski-Harabasz and elbow in the consensus.
pub const CONSENSUS_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepResult {
    pub ks: Vec<usize>,
    pub silhouette: Vec<f64>,
    pub calinski_harabasz: Vec<f64>,
    pub inertia: Vec<f64>,
    pub elbow: Vec<f64>,
    pub norm_silhouette: Vec<f64>,
    pub norm_calinski_harabasz: Vec<f64>,
    pub norm_elbow: Vec<f64>,
    pub consensus: Vec<f64>,
    pub chosen_k: usize,
}

/// Min-max scaling to [0, 1]; a flat curve maps to zeros.
pub fn min_max(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Distance of each (k, inertia) point from the chord joining the curve's
/// endpoints, both axes scaled to [0, 1].
pub fn elbow_scores(ks: &[usize], inertia: &[f64]) -> Vec<f64> {
    let kf: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let (x, y) = (min_max(&kf), min_max(inertia));
    let n = x.len();
    let (x0, y0, x1, y1) = (x[0], y[0], x[n - 1], y[n - 1]);
    let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    if len == 0.0 {
        return vec![0.0; n];
    }
    x.iter()
        .zip(&y)
        .map(|(xi, yi)| ((x1 - x0) * (y0 - yi) - (x0 - xi) * (y1 - y0)).abs() / len)
        .collect()
}

/// Runs k-means for every k in `k_min..=k_max` and picks the k with the
/// highest weighted consensus of normalized silhouette, Calinski-Harabasz
/// and elbow scores (ties → smaller k).
pub fn select_natural_k(
    rows: &[Vec<f64>],
    k_min: usize,
    k_max: usize,
    restarts: usize,
    seed: u64,
) -> Result<KSweepResult> {
    if k_min < 2 || k_max <= k_min || k_max > rows.len() {
        return Err(Error::InvalidInput(format!(
            "k range [{k_min}, {k_max}] must satisfy 2 <= k_min < k_max <= {}",
            rows.len()
        )));
    }
    let ks: Vec<usize> = (k_min..=k_max).collect();
    let points: Vec<(f64, f64, f64)> = ks
        .par_iter()
        .map(|&k| {
            let model = kmeans(rows, k, restarts, mix_seed(seed, k as u64))?;
            let sil = metrics::silhouette(rows, &model.labels)?;
            let ch = metrics::calinski_harabasz(rows, &model.labels)?;
            Ok((sil, ch, model.inertia))
        })
        .collect::<Result<_>>()?;
    let silhouette: Vec<f64> = points.iter().map(|p| p.0).collect();
    let calinski_harabasz: Vec<f64> = points.iter().map(|p| p.1).collect();
    let inertia: Vec<f64> = points.iter().map(|p| p.2).collect();
    let elbow = elbow_scores(&ks, &inertia);
    let (ns, nc, ne) = (min_max(&silhouette), min_max(&calinski_harabasz), min_max(&elbow));
    let [ws, wc, we] = CONSENSUS_WEIGHTS;
    let consensus: Vec<f64> = (0..ks.len())
        .map(|i| ws * ns[i] + wc * nc[i] + we * ne[i])
        .collect();
    let mut best = 0;
    for i in 1..consensus.len() {
        if consensus[i] > consensus[best] {
            best = i;
        }
    }
    Ok(KSweepResult {
        chosen_k: ks[best],
        ks,
        silhouette,
        calinski_harabasz,
        inertia,
        elbow,
        norm_silhouette: ns,
        norm_calinski_harabasz: nc,
        norm_elbow: ne,
        consensus,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand_distr_free::gaussian;

    /// Box-Muller normal samples; avoids another dependency.
    pub(crate) mod rand_distr_free {
        use rand::Rng;
        pub fn gaussian(rng: &mut impl Rng) -> f64 {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }
    }

    pub(crate) fn blobs(centers: &[Vec<f64>], per: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (c, centre) in centers.iter().enumerate() {
            for _ in 0..per {
                rows.push(centre.iter().map(|m| m + sigma * gaussian(&mut rng)).collect());
                truth.push(c);
            }
        }
        (rows, truth)
    }

    #[test]
    fn kmeans_recovers_three_blobs() {
        let centers = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0]];
        let (rows, truth) = blobs(&centers, 100, 0.1, 1);
        let m = kmeans(&rows, 3, 10, 7).unwrap();
        assert_eq!(metrics::ari(&m.labels, &truth).unwrap(), 1.0);
        let again = kmeans(&rows, 3, 10, 7).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn kmeans_with_k_equal_n_has_zero_inertia() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let m = kmeans(&rows, 12, 3, 0).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut seen = m.labels.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let rows = vec![vec![0.0]; 3];
        assert!(kmeans(&rows, 1, 1, 0).is_err());
        assert!(kmeans(&rows, 4, 1, 0).is_err());
    }

    #[test]
    fn lloyd_inertia_never_increases_and_best_restart_wins() {
        let centers: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 1.5, (i % 2) as f64]).collect();
        let (rows, _) = blobs(&centers, 30, 0.8, 3);
        let mut restart_inertias = Vec::new();
        for r in 0..8u64 {
            let run = kmeans_single(&rows, 6, mix_seed(5, r));
            for w in run.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9);
            }
            restart_inertias.push(run.inertia);
        }
        let best = kmeans(&rows, 6, 8, 5).unwrap();
        assert!(restart_inertias.iter().all(|&i| best.inertia <= i));
    }

    #[test]
    fn empty_clusters_are_repaired() {
        // duplicates make D² sampling run out of distinct points
        let mut rows = vec![vec![0.0, 0.0]; 10];
        rows.push(vec![5.0, 5.0]);
        let m = kmeans(&rows, 3, 2, 1).unwrap();
        let mut counts = vec![0; 3];
        for &l in &m.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
    }

    #[test]
    fn heterogeneity_guards() {
        assert_eq!(heterogeneity(&vec![vec![1.0, 2.0]; 20], 0).score, 0.0);
        assert_eq!(heterogeneity(&[vec![1.0, 2.0]], 0).score, 0.0);
        assert_eq!(heterogeneity(&[vec![0.0], vec![1.0], vec![9.0]], 0).score, 0.0);
    }

    #[test]
    fn heterogeneity_is_never_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..20 {
            let n = 4 + trial;
            let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![gaussian(&mut rng), gaussian(&mut rng)]).collect();
            assert!(heterogeneity(&rows, trial as u64).score >= 0.0);
        }
    }

    #[test]
    fn divisive_recovers_four_blobs() {
        let centers = vec![
            vec![0.0, 0.0],
            vec![20.0, 0.0],
            vec![0.0, 20.0],
            vec![20.0, 20.0],
        ];
        let (rows, truth) = blobs(&centers, 40, 0.5, 4);
        let m = divisive_cluster(&rows, 4, 9, None).unwrap();
        assert_eq!(m.k, 4);
        assert_eq!(metrics::ari(&m.labels, &truth).unwrap(), 1.0);
        let tree = m.split_tree.as_ref().unwrap();
        assert_eq!(tree.splits.len(), 3);
        assert!(tree.splits.iter().all(|s| s.heterogeneity > 0.0));
    }

    #[test]
    fn divisive_with_two_targets_splits_the_root_once() {
        let (rows, _) = blobs(&[vec![0.0], vec![10.0]], 20, 0.3, 5);
        let m = divisive_cluster(&rows, 2, 1, None).unwrap();
        let tree = m.split_tree.unwrap();
        assert_eq!(tree.splits.len(), 1);
        assert_eq!(tree.splits[0].node, 0);
        assert_eq!(tree.splits[0].size, 40);
    }

    #[test]
    fn divisive_on_identical_rows_warns() {
        let rows = vec![vec![3.0, 3.0]; 10];
        let m = divisive_cluster(&rows, 3, 0, None).unwrap();
        assert_eq!(m.k, 1);
        assert!(m.warning.is_some());
        assert!(m.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn divisive_threshold_stops_early() {
        let (rows, _) = blobs(&[vec![0.0], vec![10.0], vec![20.0]], 20, 0.3, 6);
        let m = divisive_cluster(&rows, 3, 0, Some(f64::INFINITY)).unwrap();
        assert_eq!(m.k, 1);
        assert!(m.warning.is_none());
    }

    #[test]
    fn split_tree_heights() {
        let (rows, _) = blobs(&[vec![0.0], vec![10.0], vec![40.0]], 10, 0.3, 8);
        let m = divisive_cluster(&rows, 3, 0, None).unwrap();
        let tree = m.split_tree.unwrap();
        let h = tree.height_matrix();
        let root_h = tree.splits[0].heterogeneity;
        for a in 0..3 {
            assert_eq!(h[a][a], 0.0);
            for b in 0..3 {
                assert_eq!(h[a][b], h[b][a]);
                assert!(h[a][b] <= root_h);
            }
        }
    }

    #[test]
    fn label_permutation_leaves_scores_unchanged() {
        let (rows, truth) = blobs(&[vec![0.0, 0.0], vec![5.0, 5.0], vec![0.0, 6.0]], 15, 1.0, 10);
        let permuted: Vec<usize> = truth.iter().map(|&l| (l + 1) % 3).collect();
        let c1 = centroids_of(&rows, &truth, 3);
        let c2 = centroids_of(&rows, &permuted, 3);
        assert!((inertia(&rows, &truth, &c1) - inertia(&rows, &permuted, &c2)).abs() < 1e-9);
        assert!(
            (metrics::silhouette(&rows, &truth).unwrap() - metrics::silhouette(&rows, &permuted).unwrap()).abs()
                < 1e-12
        );
    }

    #[test]
    fn sweep_on_single_blob_prefers_small_k() {
        let (rows, _) = blobs(&[vec![0.0; 10]], 200, 1.0, 12);
        let sweep = select_natural_k(&rows, 2, 10, 10, 3).unwrap();
        assert_eq!(sweep.ks.len(), 9);
        for curve in [&sweep.norm_silhouette, &sweep.norm_calinski_harabasz, &sweep.norm_elbow] {
            let lo = curve.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((lo, hi), (0.0, 1.0));
        }
        assert!(sweep.consensus.iter().all(|c| (0.0..=1.0).contains(c)));
        let sil_best = sweep.ks[crate::stats::argmax(&sweep.silhouette)];
        assert!(sil_best <= 3, "{sil_best}");
        assert_eq!(sweep.chosen_k, 2, "{:?}", sweep.consensus);
    }

    #[test]
    fn sweep_rejects_degenerate_range() {
        let rows = vec![vec![0.0]; 10];
        assert!(select_natural_k(&rows, 5, 5, 1, 0).is_err());
        assert!(select_natural_k(&rows, 1, 5, 1, 0).is_err());
        assert!(select_natural_k(&rows, 5, 11, 1, 0).is_err());
    }

    #[test]
    fn elbow_peaks_at_the_knee() {
        let ks: Vec<usize> = (1..=9).collect();
        let inertia = [100.0, 50.0, 20.0, 5.0, 4.0, 3.5, 3.0, 2.5, 2.0];
        let e = elbow_scores(&ks, &inertia);
        assert_eq!(crate::stats::argmax(&e), 3);
        assert_eq!(e[0], 0.0);
    }
}
