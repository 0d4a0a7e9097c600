//! Gini CART ensembles used only for their impurity-decrease importances.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::stats::mix_seed;

pub const N_TREES: usize = 100;
pub const MAX_DEPTH: usize = 12;
pub const MIN_LEAF: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForestMode {
    /// Bootstrap rows, best midpoint split per sampled feature.
    RandomForest,
    /// All rows, one uniform random threshold per sampled feature.
    ExtraTrees,
}

struct Data<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / nf).powi(2)).sum::<f64>()
}

fn class_counts(d: &Data, idx: &[usize]) -> Vec<usize> {
    let mut c = vec![0; d.n_classes];
    for &i in idx {
        c[d.y[i]] += 1;
    }
    c
}

struct Split {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

fn best_midpoint(d: &Data, idx: &[usize], f: usize, parent: &[usize], parent_gini: f64) -> Option<Split> {
    let col = &d.cols[f];
    let mut order = idx.to_vec();
    order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    let n = order.len();
    let mut left = vec![0usize; d.n_classes];
    let mut best: Option<Split> = None;
    for pos in 0..n - 1 {
        left[d.y[order[pos]]] += 1;
        let nl = pos + 1;
        let (lo, hi) = (col[order[pos]], col[order[pos + 1]]);
        if nl < MIN_LEAF || n - nl < MIN_LEAF || lo == hi {
            continue;
        }
        let right: Vec<usize> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
        let child = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
        let dec = parent_gini - child;
        if best.as_ref().map_or(true, |b| dec > b.decrease) {
            best = Some(Split {
                feature: f,
                threshold: 0.5 * (lo + hi),
                decrease: dec,
            });
        }
    }
    best
}

fn random_threshold(
    d: &Data,
    idx: &[usize],
    f: usize,
    parent_gini: f64,
    rng: &mut impl Rng,
) -> Option<Split> {
    let col = &d.cols[f];
    let lo = idx.iter().map(|&i| col[i]).fold(f64::INFINITY, f64::min);
    let hi = idx.iter().map(|&i| col[i]).fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return None;
    }
    let t = rng.gen_range(lo..hi);
    let (mut left, mut right) = (vec![0; d.n_classes], vec![0; d.n_classes]);
    for &i in idx {
        if col[i] <= t {
            left[d.y[i]] += 1;
        } else {
            right[d.y[i]] += 1;
        }
    }
    let nl: usize = left.iter().sum();
    let nr = idx.len() - nl;
    if nl < MIN_LEAF || nr < MIN_LEAF {
        return None;
    }
    let n = idx.len() as f64;
    let child = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n;
    Some(Split {
        feature: f,
        threshold: t,
        decrease: parent_gini - child,
    })
}

fn grow(
    d: &Data,
    idx: Vec<usize>,
    depth: usize,
    n_root: usize,
    mode: ForestMode,
    rng: &mut ChaCha8Rng,
    importance: &mut [f64],
) {
    let n = idx.len();
    if depth >= MAX_DEPTH || n < 2 * MIN_LEAF {
        return;
    }
    let counts = class_counts(d, &idx);
    let g = gini(&counts, n);
    if g == 0.0 {
        return;
    }
    let n_feat = d.cols.len();
    let mtry = ((n_feat as f64).sqrt() as usize).clamp(1, n_feat);
    let mut best: Option<Split> = None;
    for f in sample(rng, n_feat, mtry).into_vec() {
        let cand = match mode {
            ForestMode::RandomForest => best_midpoint(d, &idx, f, &counts, g),
            ForestMode::ExtraTrees => random_threshold(d, &idx, f, g, rng),
        };
        if let Some(c) = cand {
            if best.as_ref().map_or(true, |b| c.decrease > b.decrease) {
                best = Some(c);
            }
        }
    }
    let Some(split) = best else {
        return;
    };
    importance[split.feature] += n as f64 / n_root as f64 * split.decrease;
    let col = &d.cols[split.feature];
    let (left, right): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| col[i] <= split.threshold);
    grow(d, left, depth + 1, n_root, mode, rng, importance);
    grow(d, right, depth + 1, n_root, mode, rng, importance);
}

/// Mean decrease in Gini impurity per column over `N_TREES` seeded trees,
/// normalized to sum 1 (all zeros if no tree could split).
pub fn importances(cols: &[Vec<f64>], y: &[usize], n_classes: usize, mode: ForestMode, seed: u64) -> Vec<f64> {
    let n = y.len();
    let data = Data { cols, y, n_classes };
    let per_tree: Vec<Vec<f64>> = (0..N_TREES as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, t));
            let idx: Vec<usize> = match mode {
                ForestMode::RandomForest => (0..n).map(|_| rng.gen_range(0..n)).collect(),
                ForestMode::ExtraTrees => (0..n).collect(),
            };
            let mut imp = vec![0.0; cols.len()];
            grow(&data, idx, 0, n, mode, &mut rng, &mut imp);
            imp
        })
        .collect();
    let mut total = vec![0.0; cols.len()];
    for imp in &per_tree {
        for (t, v) in total.iter_mut().zip(imp) {
            *t += v;
        }
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        total.iter_mut().for_each(|v| *v /= sum);
    }
    total
}
