//! External, internal and distribution metrics for a clustering, plus the
//! six-dimension acoustic profile of each cluster.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterModel, Clusterer};
use crate::error::{Error, Result};
use crate::feature_table::FeatureMatrix;
use crate::schema::FeatureGroup;
use crate::stats::{dist, mean, mix_seed, pearson, std};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BOOTSTRAP: usize = 50;
pub const MIN_PAIR_OBSERVATIONS: usize = 5;

fn check_len(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "label vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty label vectors".into()));
    }
    Ok(())
}

/// Maps arbitrary label values onto 0..k in order of first appearance.
fn dense(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

struct Contingency {
    table: Vec<Vec<f64>>,
    rows: Vec<f64>,
    cols: Vec<f64>,
    n: f64,
}

fn contingency(pred: &[usize], truth: &[usize]) -> Contingency {
    let (p, kp) = dense(pred);
    let (t, kt) = dense(truth);
    let mut table = vec![vec![0.0; kt]; kp];
    for (&a, &b) in p.iter().zip(&t) {
        table[a][b] += 1.0;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..kt).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Contingency {
        table,
        rows,
        cols,
        n: pred.len() as f64,
    }
}

fn entropy_of(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_info(c: &Contingency) -> f64 {
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0.0 {
                mi += nij / c.n * (c.n * nij / (c.rows[i] * c.cols[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Unnormalized mutual information in nats.
pub fn mi_score(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_len(pred, truth)?;
    Ok(mutual_info(&contingency(pred, truth)))
}

/// Mutual information normalized by the geometric mean of the entropies.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_len(pred, truth)?;
    let c = contingency(pred, truth);
    let hp = entropy_of(&c.rows, c.n);
    let ht = entropy_of(&c.cols, c.n);
    if hp == 0.0 || ht == 0.0 {
        // both constant means the partitions coincide
        return Ok(if hp == ht { 1.0 } else { 0.0 });
    }
    Ok((mutual_info(&c) / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_len(pred, truth)?;
    let c = contingency(pred, truth);
    let index: f64 = c.table.iter().flatten().map(|&x| comb2(x)).sum();
    let sa: f64 = c.rows.iter().map(|&x| comb2(x)).sum();
    let sb: f64 = c.cols.iter().map(|&x| comb2(x)).sum();
    let total = comb2(c.n);
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max_index = 0.5 * (sa + sb);
    let denom = max_index - expected;
    if denom == 0.0 {
        // only reachable when both partitions are trivial in the same way
        return Ok(if index == max_index { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

/// Share of points that belong to their cluster's majority class.
pub fn purity(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_len(pred, truth)?;
    let c = contingency(pred, truth);
    let hits: f64 = c
        .table
        .iter()
        .map(|r| r.iter().cloned().fold(0.0, f64::max))
        .sum();
    Ok(hits / c.n)
}

fn n_clusters(labels: &[usize]) -> usize {
    dense(labels).1
}

/// Mean silhouette; singleton clusters contribute 0.
pub fn silhouette(rows: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if rows.len() != labels.len() {
        return Err(Error::InvalidInput("rows and labels differ in length".into()));
    }
    let (lab, k) = dense(labels);
    if k < 2 {
        return Err(Error::Degenerate(format!("silhouette needs at least 2 clusters, got {k}")));
    }
    let mut sizes = vec![0usize; k];
    for &l in &lab {
        sizes[l] += 1;
    }
    let per_point: Vec<f64> = (0..rows.len())
        .into_par_iter()
        .map(|i| {
            let own = lab[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, r) in rows.iter().enumerate() {
                if j != i {
                    sums[lab[j]] += dist(&rows[i], r);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    Ok(mean(&per_point))
}

fn centroids(rows: &[Vec<f64>], lab: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = rows.first().map_or(0, Vec::len);
    let mut c = vec![vec![0.0; d]; k];
    let mut sizes = vec![0usize; k];
    for (r, &l) in rows.iter().zip(lab) {
        sizes[l] += 1;
        for (a, v) in c[l].iter_mut().zip(r) {
            *a += v;
        }
    }
    for (row, &s) in c.iter_mut().zip(&sizes) {
        row.iter_mut().for_each(|v| *v /= s as f64);
    }
    (c, sizes)
}

/// Davies-Bouldin index (lower is better). Pairs of coincident centroids
/// are skipped.
pub fn davies_bouldin(rows: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let (lab, k) = dense(labels);
    if k < 2 {
        return Err(Error::Degenerate(format!("Davies-Bouldin needs at least 2 clusters, got {k}")));
    }
    let (cen, sizes) = centroids(rows, &lab, k);
    let mut scatter = vec![0.0; k];
    for (r, &l) in rows.iter().zip(&lab) {
        scatter[l] += dist(r, &cen[l]);
    }
    for (s, &n) in scatter.iter_mut().zip(&sizes) {
        *s /= n as f64;
    }
    let mut any = false;
    let mut total = 0.0;
    for i in 0..k {
        let mut worst: f64 = 0.0;
        for j in (0..k).filter(|&j| j != i) {
            let d = dist(&cen[i], &cen[j]);
            if d > 0.0 {
                any = true;
                worst = worst.max((scatter[i] + scatter[j]) / d);
            }
        }
        total += worst;
    }
    if !any {
        return Err(Error::Degenerate("all cluster centroids coincide".into()));
    }
    Ok(total / k as f64)
}

/// Calinski-Harabasz variance ratio. A zero within-cluster scatter with
/// positive between-cluster scatter yields `f64::MAX`.
pub fn calinski_harabasz(rows: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let (lab, k) = dense(labels);
    let n = rows.len();
    if k < 2 {
        return Err(Error::Degenerate(format!("Calinski-Harabasz needs at least 2 clusters, got {k}")));
    }
    if n <= k {
        return Ok(0.0);
    }
    let (cen, sizes) = centroids(rows, &lab, k);
    let overall = crate::stats::column_means(rows);
    let between: f64 = cen
        .iter()
        .zip(&sizes)
        .map(|(c, &s)| s as f64 * crate::stats::sq_dist(c, &overall))
        .sum();
    let within: f64 = rows
        .iter()
        .zip(&lab)
        .map(|(r, &l)| crate::stats::sq_dist(r, &cen[l]))
        .sum();
    if within == 0.0 {
        return Ok(if between > 0.0 { f64::MAX } else { 0.0 });
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

/// Entropy of the cluster-size distribution in nats, and that entropy
/// divided by ln(k) (1 for a single cluster).
pub fn balance_metrics(labels: &[usize]) -> (f64, f64) {
    let (lab, k) = dense(labels);
    let mut sizes = vec![0.0; k];
    for &l in &lab {
        sizes[l] += 1.0;
    }
    let h = entropy_of(&sizes, labels.len() as f64);
    let norm = if k <= 1 { 1.0 } else { (h / (k as f64).ln()).clamp(0.0, 1.0) };
    (h, norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampling {
    Bootstrap,
    /// Every "resample" is the full data set; used as a sanity check.
    Identity,
}

/// Stability of a clustering procedure: Pearson correlation between the
/// full-data co-assignment matrix and the mean co-assignment over `b`
/// re-clustered resamples, over pairs seen together often enough.
pub fn cophenetic_bootstrap(
    rows: &[Vec<f64>],
    clusterer: &Clusterer,
    b: usize,
    seed: u64,
    resampling: Resampling,
) -> Result<f64> {
    let n = rows.len();
    if n < 10 {
        return Err(Error::InvalidInput(format!("bootstrap stability needs n >= 10, got {n}")));
    }
    let full = clusterer.fit(rows, mix_seed(seed, u64::MAX))?.labels;
    let resampled: Vec<Vec<Option<usize>>> = (0..b as u64)
        .into_par_iter()
        .map(|r| {
            let s = mix_seed(seed, r);
            let idx: Vec<usize> = match resampling {
                Resampling::Identity => (0..n).collect(),
                Resampling::Bootstrap => {
                    let mut rng = ChaCha8Rng::seed_from_u64(s);
                    (0..n).map(|_| rng.gen_range(0..n)).collect()
                }
            };
            let sample: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
            let labels = clusterer.fit(&sample, s)?.labels;
            let mut of = vec![None; n];
            for (&i, &l) in idx.iter().zip(&labels) {
                of[i].get_or_insert(l);
            }
            Ok(of)
        })
        .collect::<Result<_>>()?;
    let pairs = n * (n - 1) / 2;
    let mut seen = vec![0u32; pairs];
    let mut together = vec![0u32; pairs];
    for of in &resampled {
        let mut p = 0;
        for i in 0..n {
            for j in i + 1..n {
                if let (Some(a), Some(c)) = (of[i], of[j]) {
                    seen[p] += 1;
                    together[p] += u32::from(a == c);
                }
                p += 1;
            }
        }
    }
    let threshold = MIN_PAIR_OBSERVATIONS.min(b).max(1) as u32;
    let (mut a, mut a_hat) = (Vec::new(), Vec::new());
    let mut p = 0;
    for i in 0..n {
        for j in i + 1..n {
            if seen[p] >= threshold {
                a.push(f64::from(u8::from(full[i] == full[j])));
                a_hat.push(f64::from(together[p]) / f64::from(seen[p]));
            }
            p += 1;
        }
    }
    if a.is_empty() || a.iter().all(|&x| x == a[0]) {
        return Err(Error::Degenerate("full-data co-assignment matrix is constant".into()));
    }
    Ok(pearson(&a, &a_hat).unwrap_or(0.0))
}

/// Classical cophenetic correlation for a divisive model: pairwise
/// distances against the heterogeneity of the separating split.
pub fn cophenetic_dendrogram(rows: &[Vec<f64>], model: &ClusterModel) -> Result<f64> {
    let tree = model
        .split_tree
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("model has no split tree".into()))?;
    let heights = tree.height_matrix();
    let n = rows.len();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    let mut h = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(dist(&rows[i], &rows[j]));
            h.push(heights[model.labels[i]][model.labels[j]]);
        }
    }
    pearson(&d, &h).ok_or_else(|| Error::Degenerate("constant cophenetic or distance values".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalMetrics {
    pub nmi: f64,
    pub ari: f64,
    pub purity: f64,
    pub mi_score: f64,
}

/// Undefined values (fewer than two clusters, degenerate stability) are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalMetrics {
    pub silhouette: Option<f64>,
    pub davies_bouldin: Option<f64>,
    pub cophenetic: Option<f64>,
    pub cophenetic_dendrogram: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionMetrics {
    pub balance: f64,
    pub normalized_balance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportContext {
    pub method: String,
    pub k: usize,
    pub seed: u64,
    /// `applied` for extracted features, `skipped` for imported embeddings.
    pub selection: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub context: ReportContext,
    pub external: ExternalMetrics,
    pub internal: InternalMetrics,
    pub distribution: DistributionMetrics,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Computes every metric for one clustering. `bootstrap` resamples feed the
/// stability score; 0 skips it.
pub fn evaluate_all(
    rows: &[Vec<f64>],
    model: &ClusterModel,
    truth: &[usize],
    clusterer: &Clusterer,
    seed: u64,
    bootstrap: usize,
) -> Result<EvaluationReport> {
    let labels = &model.labels;
    if rows.len() != labels.len() {
        return Err(Error::InvalidInput("rows and labels differ in length".into()));
    }
    let (balance, normalized_balance) = balance_metrics(labels);
    let multi = n_clusters(labels) >= 2;
    let cophenetic = if bootstrap > 0 {
        match cophenetic_bootstrap(rows, clusterer, bootstrap, seed, Resampling::Bootstrap) {
            Ok(v) => Some(v),
            Err(Error::Degenerate(msg)) => {
                warn!("stability score undefined: {msg}");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let cophenetic_dendrogram = match model.split_tree {
        Some(_) => cophenetic_dendrogram(rows, model).ok(),
        None => None,
    };
    Ok(EvaluationReport {
        schema_version: SCHEMA_VERSION,
        context: ReportContext {
            method: model.method.as_str().to_string(),
            k: model.k,
            seed,
            selection: "applied".into(),
        },
        external: ExternalMetrics {
            nmi: nmi(labels, truth)?,
            ari: ari(labels, truth)?,
            purity: purity(labels, truth)?,
            mi_score: mi_score(labels, truth)?,
        },
        internal: InternalMetrics {
            silhouette: if multi { Some(silhouette(rows, labels)?) } else { None },
            davies_bouldin: if multi { davies_bouldin(rows, labels).ok() } else { None },
            cophenetic,
            cophenetic_dendrogram,
        },
        distribution: DistributionMetrics {
            balance,
            normalized_balance,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Energy,
    Danceability,
    Tempo,
    Harmonic,
    Rhythmic,
    Electronic,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::Energy,
        Dimension::Danceability,
        Dimension::Tempo,
        Dimension::Harmonic,
        Dimension::Rhythmic,
        Dimension::Electronic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Energy => "energy",
            Dimension::Danceability => "danceability",
            Dimension::Tempo => "tempo",
            Dimension::Harmonic => "harmonic",
            Dimension::Rhythmic => "rhythmic",
            Dimension::Electronic => "electronic",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.as_str().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Matcher {
    Name(String),
    Group(FeatureGroup),
    /// Name rule consulted only when no primary rule fed the dimension.
    Fallback(String),
}

/// Ordered column → dimension rules; the first matching primary rule wins.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMapping {
    pub rules: Vec<(Dimension, Matcher)>,
}

/// Built-in mapping in the same format accepted by [`ProfileMapping::parse`].
pub const DEFAULT_MAPPING: &str = "\
# dimension  kind      pattern
tempo        name      catalog_bpm
tempo        fallback  bpm
danceability name      dfa
danceability name   beat_emphasis
energy       name   rms
energy       name   loud
energy       name   energy
energy       name   amplitude
energy       name   mfcc_mean_00
energy       name   spectral_flux
rhythmic     group  tempogram
rhythmic     name   tempo_
rhythmic     name   onset
rhythmic     name   beat
harmonic     group  harmonic
harmonic     name   chroma
electronic   group  spectral
electronic   group  timbral
electronic   name   mfcc
electronic   name   spectral
";

impl Default for ProfileMapping {
    fn default() -> Self {
        Self::parse(DEFAULT_MAPPING).expect("built-in mapping parses")
    }
}

impl ProfileMapping {
    /// One rule per line: `<dimension> name|group|fallback <pattern>`; `#`
    /// starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Config(format!("mapping line {}: {raw:?}", no + 1));
            let [dim, kind, pat] = parts[..] else {
                return Err(bad());
            };
            let dim = Dimension::parse(dim).ok_or_else(bad)?;
            let matcher = match kind {
                "name" => Matcher::Name(pat.to_ascii_lowercase()),
                "group" => Matcher::Group(pat.parse().map_err(|_| bad())?),
                "fallback" => Matcher::Fallback(pat.to_ascii_lowercase()),
                _ => return Err(bad()),
            };
            rules.push((dim, matcher));
        }
        Ok(Self { rules })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        Self::parse(&text)
    }

    pub fn dimension_of(&self, name: &str, group: FeatureGroup) -> Option<Dimension> {
        let lower = name.to_ascii_lowercase();
        self.rules.iter().find_map(|(d, m)| {
            let hit = match m {
                Matcher::Name(p) => lower.contains(p.as_str()),
                Matcher::Group(g) => *g == group,
                Matcher::Fallback(_) => false,
            };
            hit.then_some(*d)
        })
    }

    /// Columns per dimension in [`Dimension::ALL`] order, with fallback
    /// rules filling dimensions that no primary rule reached.
    pub fn assign(&self, names: &[String], groups: &[FeatureGroup]) -> Vec<Vec<usize>> {
        let mut dims: Vec<Vec<usize>> = vec![Vec::new(); 6];
        for (j, (name, group)) in names.iter().zip(groups).enumerate() {
            if let Some(d) = self.dimension_of(name, *group) {
                dims[d as usize].push(j);
            }
        }
        for (d, m) in &self.rules {
            let Matcher::Fallback(p) = m else { continue };
            if !dims[*d as usize].is_empty() {
                continue;
            }
            dims[*d as usize] = names
                .iter()
                .enumerate()
                .filter(|(_, n)| n.to_ascii_lowercase().contains(p.as_str()))
                .map(|(j, _)| j)
                .collect();
        }
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub cluster: usize,
    pub size: usize,
    /// Percentile rank per dimension in [`Dimension::ALL`] order; `None` when
    /// no column maps to the dimension.
    pub percentiles: Vec<Option<f64>>,
    pub purity: f64,
    pub majority_genre: String,
}

/// Mid-rank percentiles in [0, 100]; ties share the mean rank.
pub fn percentile_ranks(values: &[f64]) -> Vec<f64> {
    let k = values.len();
    if k <= 1 {
        return vec![50.0; k];
    }
    values
        .iter()
        .map(|v| {
            let less = values.iter().filter(|&&x| x < *v).count() as f64;
            let equal = values.iter().filter(|&&x| x == *v).count() as f64;
            let rank = less + (equal + 1.0) / 2.0;
            100.0 * (rank - 1.0) / (k - 1) as f64
        })
        .collect()
}

/// Per-cluster percentile ranks over six interpretable dimensions. Columns
/// are z-scored, averaged within each dimension per cluster, then ranked
/// across clusters. Clusters are listed in ascending label order.
pub fn cluster_profiles(
    m: &FeatureMatrix,
    labels: &[usize],
    genres: &[String],
    mapping: &ProfileMapping,
) -> Result<Vec<ClusterProfile>> {
    if labels.len() != m.n_rows() || genres.len() != m.n_rows() {
        return Err(Error::InvalidInput("labels, genres and matrix rows must align".into()));
    }
    let clusters: Vec<usize> = {
        let mut c = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let slot = |l: usize| clusters.binary_search(&l).expect("label listed");
    let dim_cols = mapping.assign(&m.cols, &m.groups);
    let mut percentiles = vec![vec![None; 6]; clusters.len()];
    for (d, cols) in dim_cols.iter().enumerate() {
        if cols.is_empty() {
            warn!("no column maps to profile dimension {}", Dimension::ALL[d].as_str());
            continue;
        }
        let mut sums = vec![0.0; clusters.len()];
        let mut counts = vec![0usize; clusters.len()];
        for &j in cols {
            let col = m.column(j);
            let (mu, sd) = (mean(&col), std(&col));
            for (v, &l) in col.iter().zip(labels) {
                let z = if sd > 0.0 { (v - mu) / sd } else { 0.0 };
                sums[slot(l)] += z;
                counts[slot(l)] += 1;
            }
        }
        let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
        for (c, p) in percentile_ranks(&means).into_iter().enumerate() {
            percentiles[c][d] = Some(p);
        }
    }
    Ok(clusters
        .iter()
        .enumerate()
        .map(|(c, &label)| {
            let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
            for (&l, g) in labels.iter().zip(genres) {
                if l == label {
                    *tally.entry(g.as_str()).or_default() += 1;
                }
            }
            let size: usize = tally.values().sum();
            // BTreeMap order makes the alphabetically first genre win ties
            let (genre, top) = tally
                .iter()
                .fold(("", 0), |best, (g, &n)| if n > best.1 { (*g, n) } else { best });
            ClusterProfile {
                cluster: label,
                size,
                percentiles: percentiles[c].clone(),
                purity: top as f64 / size as f64,
                majority_genre: genre.to_string(),
            }
        })
        .collect())
}

pub fn save_profiles(path: impl AsRef<Path>, profiles: &[ClusterProfile]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["schema_version".to_string(), "cluster".into(), "size".into()];
    header.extend(Dimension::ALL.iter().map(|d| d.as_str().to_string()));
    header.extend(["purity".to_string(), "majority_genre".into()]);
    w.write_record(&header)?;
    for p in profiles {
        let mut rec = vec![SCHEMA_VERSION.to_string(), p.cluster.to_string(), p.size.to_string()];
        rec.extend(p.percentiles.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        rec.push(p.purity.to_string());
        rec.push(p.majority_genre.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::tests::blobs;
    use crate::clustering::{kmeans, Method};
    use proptest::prelude::*;
    use rand::Rng;

    /// Brute-force ARI over all pairs.
    fn ari_pairs(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut only_a, mut only_b, mut total) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                total += 1.0;
                if sa && sb {
                    both += 1.0;
                }
                if sa {
                    only_a += 1.0;
                }
                if sb {
                    only_b += 1.0;
                }
            }
        }
        let expected = only_a * only_b / total;
        let max = 0.5 * (only_a + only_b);
        if max == expected {
            return if both == max { 1.0 } else { 0.0 };
        }
        (both - expected) / (max - expected)
    }

    /// NMI from explicit probability sums.
    fn nmi_brute(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len() as f64;
        let p = |f: &dyn Fn(usize) -> bool| (0..a.len()).filter(|&i| f(i)).count() as f64 / n;
        let la: Vec<usize> = { let mut v = a.to_vec(); v.sort(); v.dedup(); v };
        let lb: Vec<usize> = { let mut v = b.to_vec(); v.sort(); v.dedup(); v };
        let ha: f64 = la.iter().map(|&x| { let q = p(&|i| a[i] == x); -q * q.ln() }).sum();
        let hb: f64 = lb.iter().map(|&y| { let q = p(&|i| b[i] == y); -q * q.ln() }).sum();
        let mut mi = 0.0;
        for &x in &la {
            for &y in &lb {
                let pxy = p(&|i| a[i] == x && b[i] == y);
                if pxy > 0.0 {
                    mi += pxy * (pxy / (p(&|i| a[i] == x) * p(&|i| b[i] == y))).ln();
                }
            }
        }
        if ha == 0.0 || hb == 0.0 {
            return if ha == hb { 1.0 } else { 0.0 };
        }
        mi / (ha * hb).sqrt()
    }

    #[test]
    fn hand_computed_examples() {
        let p = [0, 0, 1, 1];
        let t = [0, 1, 0, 1];
        assert!(nmi(&p, &t).unwrap().abs() < 1e-12);
        assert!((ari(&p, &t).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(purity(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert_eq!(purity(&[0, 0], &[0, 1]).unwrap(), 0.5);
        assert_eq!(nmi(&[3, 3, 3], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(nmi(&[1, 2, 1], &[5, 6, 5]).unwrap(), 1.0);
        assert_eq!(ari(&[1, 2, 1], &[5, 6, 5]).unwrap(), 1.0);
        assert!(ari(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn mi_of_identical_balanced_labels_is_ln_k() {
        let l: Vec<usize> = (0..35 * 4).map(|i| i % 35).collect();
        assert!((mi_score(&l, &l).unwrap() - 35f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn random_labelings_have_near_zero_ari() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut acc = 0.0;
        for _ in 0..20 {
            let a: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..2)).collect();
            let b: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..2)).collect();
            acc += ari(&a, &b).unwrap().abs();
        }
        assert!(acc / 20.0 < 0.05);
    }

    #[test]
    fn brute_force_oracles_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.gen_range(2..=50);
            let ka = rng.gen_range(1..=6);
            let kb = rng.gen_range(1..=6);
            let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..ka)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kb)).collect();
            assert!((ari(&a, &b).unwrap() - ari_pairs(&a, &b)).abs() < 1e-12);
            assert!((nmi(&a, &b).unwrap() - nmi_brute(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn balance_examples() {
        let l: Vec<usize> = (0..70).map(|i| i % 35).collect();
        let (b, nb) = balance_metrics(&l);
        assert!((b - 35f64.ln()).abs() < 1e-12);
        assert!((nb - 1.0).abs() < 1e-12);
        assert_eq!(balance_metrics(&[4, 4, 4]), (0.0, 1.0));
        let mut skew = vec![0; 1000];
        skew.extend(1..6);
        assert!(balance_metrics(&skew).1 < 0.05);
        assert!((3.3115 / 35f64.ln() - 0.9314).abs() < 1e-3);
    }

    #[test]
    fn internal_indices_on_separated_and_interleaved_blobs() {
        let (rows, truth) = blobs(&[vec![0.0, 0.0], vec![50.0, 0.0]], 50, 1.0, 1);
        let sep_sil = silhouette(&rows, &truth).unwrap();
        let sep_db = davies_bouldin(&rows, &truth).unwrap();
        assert!(sep_sil > 0.9);
        assert!(sep_db < 0.1);
        let (one, _) = blobs(&[vec![0.0, 0.0]], 200, 1.0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let random: Vec<usize> = (0..200).map(|_| rng.gen_range(0..2)).collect();
        let mix_sil = silhouette(&one, &random).unwrap();
        let mix_db = davies_bouldin(&one, &random).unwrap();
        assert!(mix_sil.abs() < 0.1);
        assert!(mix_db > 1.0);
        assert!(sep_sil > mix_sil && sep_db < mix_db);
        assert!(silhouette(&rows, &vec![0; 100]).is_err());
    }

    #[test]
    fn duplicate_pairs_have_perfect_silhouette() {
        let rows: Vec<Vec<f64>> = (0..10).flat_map(|i| [vec![i as f64 * 10.0], vec![i as f64 * 10.0]]).collect();
        let labels: Vec<usize> = (0..20).map(|i| i / 2).collect();
        assert_eq!(silhouette(&rows, &labels).unwrap(), 1.0);
    }

    #[test]
    fn zero_spread_clusters_have_zero_davies_bouldin() {
        let rows = vec![vec![0.0], vec![0.0], vec![5.0], vec![5.0]];
        assert_eq!(davies_bouldin(&rows, &[0, 0, 1, 1]).unwrap(), 0.0);
        let same = vec![vec![1.0]; 4];
        assert!(davies_bouldin(&same, &[0, 0, 1, 1]).is_err());
    }

    #[test]
    fn bootstrap_stability() {
        let (rows, _) = blobs(&[vec![0.0, 0.0], vec![30.0, 0.0], vec![0.0, 30.0]], 20, 1.0, 5);
        let c = Clusterer::KMeans { k: 3, restarts: 3 };
        let stable = cophenetic_bootstrap(&rows, &c, 20, 1, Resampling::Bootstrap).unwrap();
        assert!(stable > 0.95, "{stable}");
        let ident = cophenetic_bootstrap(&rows, &c, 1, 1, Resampling::Identity).unwrap();
        assert!((ident - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // 2-D uniform data is still fairly stable under k-means; 5-D is not
        let uniform: Vec<Vec<f64>> = (0..60).map(|_| (0..5).map(|_| rng.gen()).collect()).collect();
        let c5 = Clusterer::KMeans { k: 5, restarts: 3 };
        let loose = cophenetic_bootstrap(&uniform, &c5, 20, 1, Resampling::Bootstrap).unwrap();
        assert!(stable - loose > 0.3, "{stable} vs {loose}");
        assert!(cophenetic_bootstrap(&rows[..5], &c, 5, 0, Resampling::Bootstrap).is_err());
    }

    #[test]
    fn dendrogram_correlation_on_divisive_model() {
        let (rows, _) = blobs(&[vec![0.0], vec![10.0], vec![40.0]], 10, 0.3, 8);
        let m = crate::clustering::divisive_cluster(&rows, 3, 0, None).unwrap();
        assert!(cophenetic_dendrogram(&rows, &m).unwrap() > 0.5);
        let km = kmeans(&rows, 3, 2, 0).unwrap();
        assert!(cophenetic_dendrogram(&rows, &km).is_err());
    }

    #[test]
    fn evaluation_report_round_trips() {
        let (rows, truth) = blobs(&[vec![0.0, 0.0], vec![40.0, 0.0]], 20, 1.0, 2);
        let c = Clusterer::KMeans { k: 2, restarts: 2 };
        let model = c.fit(&rows, 0).unwrap();
        let r = evaluate_all(&rows, &model, &truth, &c, 0, 10).unwrap();
        assert_eq!(r.external.nmi, 1.0);
        assert_eq!(r.external.ari, 1.0);
        assert_eq!(r.external.purity, 1.0);
        assert!(r.internal.silhouette.unwrap() > 0.9);
        let back = EvaluationReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);

        let constant = ClusterModel {
            labels: vec![0; 40],
            k: 1,
            centroids: vec![],
            inertia: 0.0,
            method: Method::Kmeans,
            split_tree: None,
            seed: 0,
            warning: None,
        };
        let r = evaluate_all(&rows, &constant, &truth, &c, 0, 0).unwrap();
        assert_eq!(r.external.purity, 0.5);
        assert!(r.external.ari.abs() < 1e-12);
        assert!(r.internal.silhouette.is_none());
    }

    fn toy_matrix() -> FeatureMatrix {
        let rows: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
        let cols = vec!["tempo_fourier_bpm".to_string(), "chroma_mean_C".into(), "spectral_centroid_mean".into()];
        let groups = vec![FeatureGroup::Rhythmic, FeatureGroup::Harmonic, FeatureGroup::Spectral];
        let data = vec![
            vec![170.0, 0.5, 1.0],
            vec![174.0, 0.4, 1.1],
            vec![172.0, 0.6, 1.2],
            vec![120.0, 0.5, 1.0],
            vec![122.0, 0.4, 1.1],
            vec![121.0, 0.6, 1.2],
        ];
        FeatureMatrix::new(rows, cols, groups, data).unwrap()
    }

    #[test]
    fn profiles_rank_clusters() {
        let m = toy_matrix();
        let labels = [0, 0, 0, 1, 1, 1];
        let genres: Vec<String> = ["dnb", "dnb", "house", "house", "house", "dnb"].iter().map(|s| s.to_string()).collect();
        let p = cluster_profiles(&m, &labels, &genres, &ProfileMapping::default()).unwrap();
        assert_eq!(p.len(), 2);
        let tempo = Dimension::Tempo as usize;
        let harmonic = Dimension::Harmonic as usize;
        assert_eq!(p[0].percentiles[tempo], Some(100.0));
        assert_eq!(p[1].percentiles[tempo], Some(0.0));
        assert_eq!(p[0].percentiles[harmonic], Some(50.0));
        assert!(p[0].percentiles[tempo] > p[0].percentiles[harmonic]);
        assert_eq!(p[0].percentiles[Dimension::Energy as usize], None);
        assert_eq!(p[0].majority_genre, "dnb");
        assert!((p[0].purity - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(p[1].majority_genre, "house");
    }

    #[test]
    fn mapping_parse_and_override() {
        let m = ProfileMapping::parse("energy name chroma\n# comment\n").unwrap();
        assert_eq!(m.dimension_of("chroma_mean_A", FeatureGroup::Harmonic), Some(Dimension::Energy));
        assert_eq!(m.dimension_of("tempo_bpm", FeatureGroup::Rhythmic), None);
        assert!(ProfileMapping::parse("energy regex x").is_err());
        assert!(ProfileMapping::parse("loudness name x").is_err());
        let d = ProfileMapping::default();
        assert_eq!(d.dimension_of("catalog_bpm", FeatureGroup::Meta), Some(Dimension::Tempo));
        assert_eq!(d.dimension_of("tempo_fourier_bpm", FeatureGroup::Rhythmic), Some(Dimension::Rhythmic));
        assert_eq!(d.dimension_of("tg_fourier_r1_bpm", FeatureGroup::Tempogram), Some(Dimension::Rhythmic));
        let names = vec!["tempo_fourier_bpm".to_string(), "chroma_mean_A".into()];
        let groups = vec![FeatureGroup::Rhythmic, FeatureGroup::Harmonic];
        assert_eq!(d.assign(&names, &groups)[Dimension::Tempo as usize], vec![0]);
        let mut with_catalog = names.clone();
        with_catalog.push("catalog_bpm".into());
        let mut g2 = groups.clone();
        g2.push(FeatureGroup::Meta);
        assert_eq!(d.assign(&with_catalog, &g2)[Dimension::Tempo as usize], vec![2]);
        assert_eq!(d.dimension_of("danceability_dfa", FeatureGroup::Rhythmic), Some(Dimension::Danceability));
        assert_eq!(d.dimension_of("mfcc_mean_00", FeatureGroup::Timbral), Some(Dimension::Energy));
        assert_eq!(d.dimension_of("mfcc_mean_05", FeatureGroup::Timbral), Some(Dimension::Electronic));
    }

    #[test]
    fn percentile_ties_use_mid_rank() {
        assert_eq!(percentile_ranks(&[1.0, 1.0, 1.0]), vec![50.0; 3]);
        assert_eq!(percentile_ranks(&[3.0, 1.0, 2.0]), vec![100.0, 0.0, 50.0]);
        assert_eq!(percentile_ranks(&[7.0]), vec![50.0]);
    }

    proptest! {
        #[test]
        fn external_metrics_ignore_label_names(
            pairs in proptest::collection::vec((0usize..5, 0usize..5), 2..60),
            shift in 1usize..7,
        ) {
            let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let a2: Vec<usize> = a.iter().map(|&x| (x * 3 + shift) % 17).collect();
            let b2: Vec<usize> = b.iter().map(|&x| 100 - x).collect();
            prop_assert!((nmi(&a, &b).unwrap() - nmi(&a2, &b2).unwrap()).abs() < 1e-12);
            prop_assert!((ari(&a, &b).unwrap() - ari(&a2, &b2).unwrap()).abs() < 1e-12);
            prop_assert!((purity(&a, &b).unwrap() - purity(&a2, &b2).unwrap()).abs() < 1e-12);
            prop_assert!((mi_score(&a, &b).unwrap() - mi_score(&a2, &b2).unwrap()).abs() < 1e-12);
            let r = ari(&a, &b).unwrap();
            prop_assert!(r <= 1.0 + 1e-12);
            let n = nmi(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&n));
        }

        #[test]
        fn balance_normalization_is_exact(labels in proptest::collection::vec(0usize..6, 1..80)) {
            let (b, nb) = balance_metrics(&labels);
            let k = n_clusters(&labels);
            prop_assert!(b >= 0.0);
            if k > 1 {
                prop_assert!((nb - b / (k as f64).ln()).abs() < 1e-12);
            }
        }
    }
}
