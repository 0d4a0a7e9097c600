//! Feature engineering, ensemble normalization and multi-criteria feature
//! selection against genre labels.

mod forest;

use std::cmp::Ordering;
use std::path::Path;

use log::warn;
use rayon::prelude::*;

pub use forest::{ForestMode, MAX_DEPTH, MIN_LEAF, N_TREES};

use crate::error::{Error, Result};
use crate::feature_table::FeatureMatrix;
use crate::schema::FeatureGroup;
use crate::stats::{mean, mix_seed, quantile_sorted, sample_variance, sorted, std};

pub const ENGINEER_TOP: usize = 20;
pub const INTERACTION_GROUPS: [FeatureGroup; 5] = [
    FeatureGroup::Spectral,
    FeatureGroup::Timbral,
    FeatureGroup::Harmonic,
    FeatureGroup::Rhythmic,
    FeatureGroup::Tempogram,
];

/// Weights of the robust, Yeo-Johnson and standard scalings.
pub const NORMALIZATION_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];
pub const YJ_LAMBDA_MIN: f64 = -2.0;
pub const YJ_LAMBDA_MAX: f64 = 2.0;
pub const YJ_LAMBDA_STEP: f64 = 0.01;

pub const MI_BINS: usize = 16;
pub const DEFAULT_TOP_K: usize = 100;

pub const METHODS: [&str; 6] = [
    "anova_f",
    "mutual_info",
    "rf_importance",
    "et_importance",
    "variance",
    "cluster_sep",
];
pub const SELECTION_WEIGHTS: [f64; 6] = [0.25, 0.20, 0.20, 0.15, 0.10, 0.10];

/// Genre index per matrix row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabelVector {
    /// Classes are indexed in sorted name order.
    pub fn from_names(names: &[String]) -> Self {
        let mut class_names = names.to_vec();
        class_names.sort();
        class_names.dedup();
        let labels = names
            .iter()
            .map(|n| class_names.binary_search(n).expect("name listed"))
            .collect();
        Self { labels, class_names }
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    fn check(&self, n_rows: usize) -> Result<()> {
        if self.labels.len() != n_rows {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} rows",
                self.labels.len(),
                n_rows
            )));
        }
        let mut seen = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() < 2 {
            return Err(Error::Degenerate("feature scoring needs at least 2 classes".into()));
        }
        if seen.iter().any(|&l| l >= self.n_classes()) {
            return Err(Error::InvalidInput("label index out of range".into()));
        }
        Ok(())
    }
}

fn columns(m: &FeatureMatrix) -> Vec<Vec<f64>> {
    (0..m.n_cols()).map(|j| m.column(j)).collect()
}

fn is_constant(col: &[f64]) -> bool {
    col.iter().all(|&v| v == col[0])
}

/// Population skewness; `None` for constant columns.
pub fn skewness(col: &[f64]) -> Option<f64> {
    let mu = mean(col);
    let m2 = col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / col.len() as f64;
    if m2 <= 0.0 || is_constant(col) {
        return None;
    }
    let m3 = col.iter().map(|x| (x - mu).powi(3)).sum::<f64>() / col.len() as f64;
    Some(m3 / m2.powf(1.5))
}

/// Indices ranked by descending score, ties by column name.
fn rank_desc(scores: &[(usize, f64)], names: &[String]) -> Vec<usize> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| names[a.0].cmp(&names[b.0])));
    v.into_iter().map(|p| p.0).collect()
}

/// Appends squared, log-shifted and cross-group interaction columns, all
/// tagged `engineered`. Only non-engineered input columns are used as bases.
pub fn engineer_features(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    m.validate()?;
    let cols = columns(m);
    let base: Vec<usize> = (0..m.n_cols())
        .filter(|&j| m.groups[j] != FeatureGroup::Engineered)
        .collect();
    let variances: Vec<(usize, f64)> = base.iter().map(|&j| (j, sample_variance(&cols[j]))).collect();
    let by_var = rank_desc(&variances, &m.cols);
    if by_var.len() < ENGINEER_TOP {
        warn!("only {} columns available for squared features", by_var.len());
    }
    let skews: Vec<(usize, f64)> = base
        .iter()
        .filter_map(|&j| skewness(&cols[j]).map(|s| (j, s.abs())))
        .collect();
    let by_skew = rank_desc(&skews, &m.cols);
    if by_skew.len() < ENGINEER_TOP {
        warn!("only {} non-constant columns available for log features", by_skew.len());
    }

    let mut out = m.clone();
    for &j in by_var.iter().take(ENGINEER_TOP) {
        let v = cols[j].iter().map(|x| x * x).collect();
        out.push_column(format!("sq_{}", m.cols[j]), FeatureGroup::Engineered, v);
    }
    for &j in by_skew.iter().take(ENGINEER_TOP) {
        let lo = cols[j].iter().cloned().fold(f64::INFINITY, f64::min);
        let v = cols[j].iter().map(|x| (x - lo).ln_1p()).collect();
        out.push_column(format!("log_{}", m.cols[j]), FeatureGroup::Engineered, v);
    }
    let leaders: Vec<usize> = INTERACTION_GROUPS
        .iter()
        .filter_map(|g| by_var.iter().copied().find(|&j| m.groups[j] == *g))
        .collect();
    if leaders.len() < INTERACTION_GROUPS.len() {
        warn!(
            "only {} of {} feature groups present for interactions",
            leaders.len(),
            INTERACTION_GROUPS.len()
        );
    }
    for (a, &i) in leaders.iter().enumerate() {
        for &j in &leaders[a + 1..] {
            let v = cols[i].iter().zip(&cols[j]).map(|(x, y)| x * y).collect();
            out.push_column(format!("x_{}_{}", m.cols[i], m.cols[j]), FeatureGroup::Engineered, v);
        }
    }
    Ok(out)
}

/// `(x - median) / IQR`, falling back to the standard deviation when the
/// IQR is 0; zeros for a constant column.
pub fn robust_scale(col: &[f64]) -> Vec<f64> {
    let s = sorted(col);
    let med = quantile_sorted(&s, 0.5);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let scale = if iqr > 0.0 { iqr } else { std(col) };
    if scale <= 0.0 {
        return vec![0.0; col.len()];
    }
    col.iter().map(|x| (x - med) / scale).collect()
}

/// `(x - mean) / std` with population std; zeros for a constant column.
pub fn standard_scale(col: &[f64]) -> Vec<f64> {
    let (mu, sd) = (mean(col), std(col));
    if sd <= 0.0 {
        return vec![0.0; col.len()];
    }
    col.iter().map(|x| (x - mu) / sd).collect()
}

pub fn yeo_johnson(x: f64, lambda: f64) -> f64 {
    if x >= 0.0 {
        if lambda.abs() < 1e-12 {
            x.ln_1p()
        } else {
            ((x + 1.0).powf(lambda) - 1.0) / lambda
        }
    } else if (lambda - 2.0).abs() < 1e-12 {
        -(-x).ln_1p()
    } else {
        -((1.0 - x).powf(2.0 - lambda) - 1.0) / (2.0 - lambda)
    }
}

/// Normal log-likelihood of the transformed column, up to a constant.
pub fn yeo_johnson_log_likelihood(col: &[f64], lambda: f64) -> f64 {
    let t: Vec<f64> = col.iter().map(|&x| yeo_johnson(x, lambda)).collect();
    let mu = mean(&t);
    let var = t.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / t.len() as f64;
    if !(var > 0.0 && var.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let jac: f64 = col.iter().map(|&x| x.signum() * x.abs().ln_1p()).sum();
    -0.5 * col.len() as f64 * var.ln() + (lambda - 1.0) * jac
}

/// λ on the [-2, 2] grid (step 0.01) maximizing the log-likelihood; the
/// first maximum wins.
pub fn fit_yeo_johnson(col: &[f64]) -> f64 {
    let steps = ((YJ_LAMBDA_MAX - YJ_LAMBDA_MIN) / YJ_LAMBDA_STEP).round() as usize;
    let mut best = (1.0, f64::NEG_INFINITY);
    for i in 0..=steps {
        let lambda = YJ_LAMBDA_MIN + i as f64 * YJ_LAMBDA_STEP;
        let ll = yeo_johnson_log_likelihood(col, lambda);
        if ll > best.1 {
            best = (lambda, ll);
        }
    }
    best.0
}

/// Z-scored Yeo-Johnson transform with the fitted λ.
pub fn power_scale(col: &[f64]) -> Vec<f64> {
    if is_constant(col) {
        return vec![0.0; col.len()];
    }
    let lambda = fit_yeo_johnson(col);
    let t: Vec<f64> = col.iter().map(|&x| yeo_johnson(x, lambda)).collect();
    standard_scale(&t)
}

pub fn normalize_column(col: &[f64]) -> Vec<f64> {
    if is_constant(col) {
        return vec![0.0; col.len()];
    }
    let [wr, wp, wz] = NORMALIZATION_WEIGHTS;
    let (r, p, z) = (robust_scale(col), power_scale(col), standard_scale(col));
    (0..col.len()).map(|i| wr * r[i] + wp * p[i] + wz * z[i]).collect()
}

/// Weighted blend of robust, Yeo-Johnson and standard scaling per column.
pub fn ensemble_normalize(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    m.validate()?;
    let cols: Vec<Vec<f64>> = (0..m.n_cols())
        .into_par_iter()
        .map(|j| normalize_column(&m.column(j)))
        .collect();
    let data = (0..m.n_rows()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    FeatureMatrix::new(m.rows.clone(), m.cols.clone(), m.groups.clone(), data)
}

/// One-way F statistic; `None` when the within-class scatter is zero but
/// the classes differ.
fn f_statistic(col: &[f64], y: &[usize], k: usize) -> Option<f64> {
    let n = col.len();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&v, &l) in col.iter().zip(y) {
        sums[l] += v;
        counts[l] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    let grand = mean(col);
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let ssb: f64 = means
        .iter()
        .zip(&counts)
        .map(|(m, &c)| c as f64 * (m - grand).powi(2))
        .sum();
    let ssw: f64 = col.iter().zip(y).map(|(v, &l)| (v - means[l]).powi(2)).sum();
    if ssb <= 0.0 || present < 2 {
        return Some(0.0);
    }
    if ssw <= 0.0 || n <= present {
        return None;
    }
    Some((ssb / (present - 1) as f64) / (ssw / (n - present) as f64))
}

/// Replaces infinite separations with ten times the largest finite score
/// (10 if there is none).
fn fill_sentinel(scores: Vec<Option<f64>>) -> Vec<f64> {
    let max = scores.iter().flatten().cloned().fold(0.0, f64::max);
    let sentinel = if max > 0.0 { max * 10.0 } else { 10.0 };
    scores.into_iter().map(|s| s.unwrap_or(sentinel)).collect()
}

pub fn anova_f(m: &FeatureMatrix, labels: &LabelVector) -> Result<Vec<f64>> {
    labels.check(m.n_rows())?;
    let k = labels.n_classes();
    let raw = (0..m.n_cols())
        .into_par_iter()
        .map(|j| f_statistic(&m.column(j), &labels.labels, k))
        .collect();
    Ok(fill_sentinel(raw))
}

/// Per-column Calinski-Harabasz index of the genre labeling. In one
/// dimension this is the same ratio as the one-way F statistic.
pub fn cluster_separation_score(m: &FeatureMatrix, labels: &LabelVector) -> Result<Vec<f64>> {
    anova_f(m, labels)
}

/// Equal-frequency bin index per value.
pub fn quantile_bins(col: &[f64], bins: usize) -> Vec<usize> {
    let s = sorted(col);
    let mut cuts: Vec<f64> = (1..bins).map(|i| quantile_sorted(&s, i as f64 / bins as f64)).collect();
    cuts.dedup();
    col.iter().map(|&v| cuts.partition_point(|&c| c < v)).collect()
}

fn plugin_mi(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let n = a.len() as f64;
    let mut joint = vec![vec![0.0; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        joint[x][y] += 1.0;
    }
    let pa: Vec<f64> = joint.iter().map(|r| r.iter().sum::<f64>()).collect();
    let pb: Vec<f64> = (0..kb).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let c = joint[i][j];
            if c > 0.0 {
                mi += c / n * (n * c / (pa[i] * pb[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Plug-in mutual information (nats) between 16-bin equal-frequency
/// discretizations of each column and the labels.
pub fn mutual_info(m: &FeatureMatrix, labels: &LabelVector) -> Result<Vec<f64>> {
    labels.check(m.n_rows())?;
    Ok((0..m.n_cols())
        .into_par_iter()
        .map(|j| plugin_mi(&quantile_bins(&m.column(j), MI_BINS), &labels.labels))
        .collect())
}

/// Tree-ensemble impurity importances. Rows and columns are put in a
/// canonical order (rows by value, columns by name) before fitting so the
/// result does not depend on the input ordering.
pub fn forest_importance(m: &FeatureMatrix, labels: &LabelVector, mode: ForestMode, seed: u64) -> Result<Vec<f64>> {
    labels.check(m.n_rows())?;
    let mut col_order: Vec<usize> = (0..m.n_cols()).collect();
    col_order.sort_by(|&a, &b| m.cols[a].cmp(&m.cols[b]));
    let mut row_order: Vec<usize> = (0..m.n_rows()).collect();
    row_order.sort_by(|&a, &b| {
        col_order
            .iter()
            .map(|&j| m.data[a][j].total_cmp(&m.data[b][j]))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(labels.labels[a].cmp(&labels.labels[b]))
    });
    let cols: Vec<Vec<f64>> = col_order
        .iter()
        .map(|&j| row_order.iter().map(|&i| m.data[i][j]).collect())
        .collect();
    let y: Vec<usize> = row_order.iter().map(|&i| labels.labels[i]).collect();
    let salt = match mode {
        ForestMode::RandomForest => 0x5246,
        ForestMode::ExtraTrees => 0x4554,
    };
    let imp = forest::importances(&cols, &y, labels.n_classes(), mode, mix_seed(seed, salt));
    let mut out = vec![0.0; m.n_cols()];
    for (pos, &j) in col_order.iter().enumerate() {
        out[j] = imp[pos];
    }
    Ok(out)
}

/// Sample variance per column.
pub fn variance_score(m: &FeatureMatrix) -> Vec<f64> {
    (0..m.n_cols()).map(|j| sample_variance(&m.column(j))).collect()
}

/// Min-max scaling to [0, 1]; a method that scores every feature equally
/// contributes zeros.
pub fn normalize_scores(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScore {
    pub feature: String,
    pub raw: [f64; 6],
    pub normalized: [f64; 6],
    pub ensemble: f64,
    pub selected: bool,
}

/// Scores for every candidate feature, listed in ensemble rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub scores: Vec<FeatureScore>,
    pub top_k: usize,
}

impl SelectionReport {
    pub fn selected(&self) -> Vec<&str> {
        self.scores
            .iter()
            .filter(|s| s.selected)
            .map(|s| s.feature.as_str())
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["feature".to_string()];
        header.extend(METHODS.iter().map(|m| m.to_string()));
        header.extend(METHODS.iter().map(|m| format!("{m}_norm")));
        header.extend(["ensemble".to_string(), "selected".into()]);
        w.write_record(&header)?;
        for s in &self.scores {
            let mut rec = vec![s.feature.clone()];
            rec.extend(s.raw.iter().map(f64::to_string));
            rec.extend(s.normalized.iter().map(f64::to_string));
            rec.push(s.ensemble.to_string());
            rec.push(s.selected.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Raw scores of every method, columns in matrix order.
pub fn method_scores(m: &FeatureMatrix, labels: &LabelVector, seed: u64) -> Result<[Vec<f64>; 6]> {
    Ok([
        anova_f(m, labels)?,
        mutual_info(m, labels)?,
        forest_importance(m, labels, ForestMode::RandomForest, seed)?,
        forest_importance(m, labels, ForestMode::ExtraTrees, seed)?,
        variance_score(m),
        cluster_separation_score(m, labels)?,
    ])
}

/// Keeps the `top_k` columns with the highest weighted ensemble of
/// min-max-normalized method scores (ties by column name). The returned
/// matrix lists the kept columns in rank order.
pub fn ensemble_select(
    m: &FeatureMatrix,
    labels: &LabelVector,
    top_k: usize,
    seed: u64,
) -> Result<(FeatureMatrix, SelectionReport)> {
    if top_k == 0 || top_k > m.n_cols() {
        return Err(Error::InvalidInput(format!(
            "top_k = {top_k} must be in 1..={}",
            m.n_cols()
        )));
    }
    let raw = method_scores(m, labels, seed)?;
    let norm: Vec<Vec<f64>> = raw.iter().map(|r| normalize_scores(r)).collect();
    let mut scores: Vec<FeatureScore> = (0..m.n_cols())
        .map(|j| {
            let r: [f64; 6] = std::array::from_fn(|mi| raw[mi][j]);
            let nz: [f64; 6] = std::array::from_fn(|mi| norm[mi][j]);
            FeatureScore {
                feature: m.cols[j].clone(),
                raw: r,
                normalized: nz,
                ensemble: SELECTION_WEIGHTS.iter().zip(&nz).map(|(w, s)| w * s).sum(),
                selected: false,
            }
        })
        .collect();
    scores.sort_by(|a, b| b.ensemble.total_cmp(&a.ensemble).then_with(|| a.feature.cmp(&b.feature)));
    scores.iter_mut().take(top_k).for_each(|s| s.selected = true);
    let keep: Vec<usize> = scores
        .iter()
        .take(top_k)
        .map(|s| m.column_index(&s.feature).expect("scored column exists"))
        .collect();
    Ok((m.select_columns(&keep), SelectionReport { scores, top_k }))
}
