//! Trajectory and scanpath distances, best/mean aggregation and saliency scores.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::SaliencyMap;

pub type Point = [f64; 2];

fn dist(a: Point, b: Point) -> f64 {
    libm::hypot(a[0] - b[0], a[1] - b[1])
}

fn require_nonempty(op: &str, a: &[Point], b: &[Point]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Sequence(format!(
            "{op} needs nonempty sequences, got lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Edit distance with unit insertion, deletion and substitution costs.
pub fn edit_distance<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, sa) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, sb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(sa != sb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Spatial alphabet: `rows × cols` equal cells over a `(height, width)` frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellGrid {
    pub rows: usize,
    pub cols: usize,
}

impl Default for CellGrid {
    fn default() -> Self {
        CellGrid { rows: 12, cols: 16 }
    }
}

impl CellGrid {
    pub fn symbol(&self, p: Point, (height, width): (usize, usize)) -> usize {
        let cell = |v: f64, size: usize, n: usize| {
            let f = libm::floor(v / size as f64 * n as f64);
            f.clamp(0.0, (n - 1) as f64) as usize
        };
        cell(p[1], height, self.rows) * self.cols + cell(p[0], width, self.cols)
    }

    pub fn symbols(&self, points: &[Point], frame: (usize, usize)) -> Vec<usize> {
        points.iter().map(|&p| self.symbol(p, frame)).collect()
    }
}

/// Edit distance between the cell strings of two fixation sequences.
pub fn levenshtein(a: &[Point], b: &[Point], frame: (usize, usize), grid: CellGrid) -> Result<usize> {
    if grid.rows == 0 || grid.cols == 0 {
        return Err(Error::Config(format!("cell grid {grid:?} must be at least 1x1")));
    }
    Ok(edit_distance(&grid.symbols(a, frame), &grid.symbols(b, frame)))
}

/// Dynamic time warping with Euclidean costs and no window constraint.
pub fn dtw(a: &[Point], b: &[Point]) -> Result<f64> {
    require_nonempty("dtw", a, b)?;
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &pa in a {
        cur[0] = f64::INFINITY;
        for j in 0..m {
            cur[j + 1] = dist(pa, b[j]) + prev[j].min(prev[j + 1]).min(cur[j]);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Discrete Fréchet distance with Euclidean ground distance.
pub fn frechet(a: &[Point], b: &[Point]) -> Result<f64> {
    require_nonempty("frechet", a, b)?;
    let m = b.len();
    let mut prev = vec![0.0; m];
    let mut cur = vec![0.0; m];
    for (i, &pa) in a.iter().enumerate() {
        for j in 0..m {
            let d = dist(pa, b[j]);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => d.max(cur[j - 1]),
                (_, 0) => d.max(prev[0]),
                _ => d.max(prev[j].min(prev[j - 1]).min(cur[j - 1])),
            };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TdeParams {
    pub k: usize,
    pub stride: usize,
}

impl Default for TdeParams {
    fn default() -> Self {
        TdeParams { k: 5, stride: 1 }
    }
}

/// Directed time-delay-embedding distance: each length-`k` window of `a`
/// (every `stride` samples) is matched to its closest window of `b` by mean
/// pointwise distance, and the minima are averaged.
pub fn tde(a: &[Point], b: &[Point], params: TdeParams) -> Result<f64> {
    let TdeParams { k, stride } = params;
    if k == 0 || stride == 0 {
        return Err(Error::Config(format!("tde needs k, stride >= 1, got {params:?}")));
    }
    if a.len() < k || b.len() < k {
        return Err(Error::Sequence(format!(
            "tde with k = {k} needs lengths >= k, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let m = b.len();
    let d: Vec<f64> = a.iter().flat_map(|&pa| b.iter().map(move |&pb| dist(pa, pb))).collect();
    let mut total = 0.0;
    let mut windows = 0usize;
    for i in (0..=a.len() - k).step_by(stride) {
        let mut best = f64::INFINITY;
        for j in 0..=m - k {
            let mut s = 0.0;
            for t in 0..k {
                s += d[(i + t) * m + j + t];
            }
            best = best.min(s / k as f64);
        }
        total += best;
        windows += 1;
    }
    Ok(total / windows as f64)
}

/// Average of both directions; symmetric in its arguments.
pub fn tde_symmetric(a: &[Point], b: &[Point], params: TdeParams) -> Result<f64> {
    Ok(0.5 * (tde(a, b, params)? + tde(b, a, params)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Levenshtein,
    Dtw,
    Frechet,
    Tde,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Levenshtein, Metric::Dtw, Metric::Frechet, Metric::Tde];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Levenshtein => "levenshtein",
            Metric::Dtw => "dtw",
            Metric::Frechet => "frechet",
            Metric::Tde => "tde",
        }
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Settings shared by every metric evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricParams {
    pub frame: (usize, usize),
    pub grid: CellGrid,
    pub tde: TdeParams,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            frame: (224, 224),
            grid: CellGrid::default(),
            tde: TdeParams::default(),
        }
    }
}

/// Distance from a ground-truth sequence to a generated one.
pub fn distance(metric: Metric, gt: &[Point], gen: &[Point], params: &MetricParams) -> Result<f64> {
    match metric {
        Metric::Levenshtein => Ok(levenshtein(gt, gen, params.frame, params.grid)? as f64),
        Metric::Dtw => dtw(gt, gen),
        Metric::Frechet => frechet(gt, gen),
        Metric::Tde => tde(gt, gen, params.tde),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestMean {
    pub best: f64,
    pub mean: f64,
}

/// One image's score from a `ground truth × generated` distance matrix:
/// per ground truth the minimum and the average over generated samples,
/// each then averaged over ground truths.
pub fn aggregate(distances: &[Vec<f64>]) -> Result<BestMean> {
    if distances.is_empty() {
        return Err(Error::Sequence("no ground-truth sequences".into()));
    }
    let mut best = 0.0;
    let mut mean = 0.0;
    for row in distances {
        if row.is_empty() {
            return Err(Error::Sequence("no generated sequences".into()));
        }
        let low = row.iter().copied().fold(f64::INFINITY, f64::min);
        // Rounding can put the mean of equal entries just below their minimum.
        best += low;
        mean += (row.iter().sum::<f64>() / row.len() as f64).max(low);
    }
    let n = distances.len() as f64;
    Ok(BestMean {
        best: best / n,
        mean: mean / n,
    })
}

/// Distance matrix between every ground truth and every generated sequence.
pub fn distance_matrix(
    metric: Metric,
    gt: &[Vec<Point>],
    gen: &[Vec<Point>],
    params: &MetricParams,
) -> Result<Vec<Vec<f64>>> {
    gt.iter()
        .map(|g| gen.iter().map(|s| distance(metric, g, s, params)).collect())
        .collect()
}

/// Averages per-image scores into the dataset-level score.
pub fn overall(per_image: &[BestMean]) -> Result<BestMean> {
    if per_image.is_empty() {
        return Err(Error::Sequence("no images to average".into()));
    }
    let n = per_image.len() as f64;
    Ok(BestMean {
        best: per_image.iter().map(|s| s.best).sum::<f64>() / n,
        mean: per_image.iter().map(|s| s.mean).sum::<f64>() / n,
    })
}

/// Floor added to both maps before the divergence.
pub const KL_EPS: f64 = 1e-7;
pub const BORJI_SPLITS: usize = 100;
pub const BORJI_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaliencyScores {
    pub auc_judd: f64,
    pub auc_borji: f64,
    pub nss: f64,
    pub sim: f64,
    pub cc: f64,
    pub kl: f64,
    /// Set when the prediction has zero variance and NSS/CC fell back to 0.
    pub degenerate: bool,
}

fn is_constant(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

fn min_max_scaled(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

fn as_distribution(values: &[f64]) -> Vec<f64> {
    let s: f64 = values.iter().sum();
    if s > 0.0 {
        values.iter().map(|v| v / s).collect()
    } else {
        vec![1.0 / values.len() as f64; values.len()]
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let std = if values.len() > 1 {
        libm::sqrt(ss / (n - 1.0))
    } else {
        0.0
    };
    (mean, std)
}

fn trapz(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

/// Threshold sweep over the prediction values at fixated pixels.
/// A constant prediction scores chance, 0.5.
pub fn auc_judd(pred: &[f64], fixated: &[usize]) -> f64 {
    if is_constant(pred) {
        return 0.5;
    }
    let s = min_max_scaled(pred);
    let mut at_fix: Vec<f64> = fixated.iter().map(|&i| s[i]).collect();
    at_fix.sort_by(|a, b| b.total_cmp(a));
    let n_fix = at_fix.len() as f64;
    let n_px = s.len() as f64;
    let mut tp = vec![0.0];
    let mut fp = vec![0.0];
    for (i, &thresh) in at_fix.iter().enumerate() {
        let above = s.iter().filter(|&&v| v >= thresh).count() as f64;
        tp.push((i + 1) as f64 / n_fix);
        fp.push(((above - (i + 1) as f64) / (n_px - n_fix)).clamp(0.0, 1.0));
    }
    tp.push(1.0);
    fp.push(1.0);
    trapz(&fp, &tp)
}

/// Fixated values against uniformly drawn pixel values, averaged over splits.
/// A constant prediction scores chance, 0.5.
pub fn auc_borji(pred: &[f64], fixated: &[usize], splits: usize, step: f64, seed: u64) -> f64 {
    if is_constant(pred) {
        return 0.5;
    }
    let s = min_max_scaled(pred);
    let at_fix: Vec<f64> = fixated.iter().map(|&i| s[i]).collect();
    let n_fix = at_fix.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..splits {
        let negatives: Vec<f64> = (0..at_fix.len()).map(|_| s[rng.random_range(0..s.len())]).collect();
        let top = at_fix.iter().chain(&negatives).copied().fold(0.0, f64::max);
        let steps = libm::floor(top / step) as usize + 1;
        let mut tp = vec![0.0];
        let mut fp = vec![0.0];
        for i in (0..=steps).rev() {
            let thresh = i as f64 * step;
            tp.push(at_fix.iter().filter(|&&v| v >= thresh).count() as f64 / n_fix);
            fp.push(negatives.iter().filter(|&&v| v >= thresh).count() as f64 / n_fix);
        }
        tp.push(1.0);
        fp.push(1.0);
        total += trapz(&fp, &tp);
    }
    total / splits as f64
}

/// The six saliency scores of `pred` against a ground-truth density map
/// and the ground-truth fixated pixels (row-major indices).
pub fn saliency_metrics(pred: &SaliencyMap, gt: &SaliencyMap, fixated: &[usize], seed: u64) -> Result<SaliencyScores> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::shape(
            "saliency metrics",
            &[pred.height, pred.width],
            &[gt.height, gt.width],
        ));
    }
    let n = pred.values.len();
    if n == 0 {
        return Err(Error::Saliency("empty maps".into()));
    }
    if fixated.is_empty() {
        return Err(Error::Saliency("no ground-truth fixations".into()));
    }
    if let Some(&bad) = fixated.iter().find(|&&i| i >= n) {
        return Err(Error::Saliency(format!("fixation index {bad} outside a {n}-pixel map")));
    }
    for (name, m) in [("prediction", pred), ("ground truth", gt)] {
        if m.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Saliency(format!("{name} map has negative or non-finite values")));
        }
    }
    let p = &pred.values;
    let (p_mean, p_std) = mean_std(p);
    let degenerate = is_constant(p) || !(p_std > 0.0);

    let nss = if degenerate {
        0.0
    } else {
        fixated.iter().map(|&i| (p[i] - p_mean) / p_std).sum::<f64>() / fixated.len() as f64
    };

    let pd = as_distribution(p);
    let qd = as_distribution(&gt.values);
    let sim = pd.iter().zip(&qd).map(|(a, b)| a.min(*b)).sum();

    let (q_mean, q_std) = mean_std(&qd);
    let pd_mean = 1.0 / n as f64;
    let cc = if degenerate || is_constant(&qd) || !(q_std > 0.0) {
        0.0
    } else {
        let cov: f64 = pd.iter().zip(&qd).map(|(a, b)| (a - pd_mean) * (b - q_mean)).sum();
        let sp = libm::sqrt(pd.iter().map(|a| (a - pd_mean) * (a - pd_mean)).sum::<f64>());
        let sq = libm::sqrt(qd.iter().map(|b| (b - q_mean) * (b - q_mean)).sum::<f64>());
        (cov / (sp * sq)).clamp(-1.0, 1.0)
    };

    let smooth = |d: &[f64]| {
        let z = 1.0 + KL_EPS * n as f64;
        d.iter().map(|v| (v + KL_EPS) / z).collect::<Vec<f64>>()
    };
    let (ps, qs) = (smooth(&pd), smooth(&qd));
    let kl = qs
        .iter()
        .zip(&ps)
        .map(|(q, p)| q * libm::log(q / p))
        .sum::<f64>()
        .max(0.0);

    Ok(SaliencyScores {
        auc_judd: auc_judd(p, fixated),
        auc_borji: auc_borji(p, fixated, BORJI_SPLITS, BORJI_STEP, seed),
        nss,
        sim,
        cc,
        kl,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_points() {
        let (a, b) = ([[0.0, 0.0]], [[3.0, 4.0]]);
        assert_eq!(dtw(&a, &b).unwrap(), 5.0);
        assert_eq!(frechet(&a, &b).unwrap(), 5.0);
        assert_eq!(tde(&a, &b, TdeParams { k: 1, stride: 1 }).unwrap(), 5.0);
    }

    #[test]
    fn kitten_sitting() {
        let a: Vec<char> = "kitten".chars().collect();
        let b: Vec<char> = "sitting".chars().collect();
        assert_eq!(edit_distance(&a, &b), 3);
        assert_eq!(edit_distance(&a, &[]), 6);
        assert_eq!(edit_distance::<char>(&[], &b), 7);
    }

    #[test]
    fn hand_executed_aggregation() {
        let r = aggregate(&[alloc::vec![1.0, 2.0], alloc::vec![3.0, 4.0]]).unwrap();
        assert_eq!(r, BestMean { best: 2.0, mean: 2.5 });
        assert!(aggregate(&[alloc::vec![]]).is_err());
    }

    #[test]
    fn tde_rejects_short_sequences() {
        let a = [[0.0, 0.0]; 4];
        assert!(matches!(tde(&a, &a, TdeParams::default()), Err(Error::Sequence(_))));
    }

    #[test]
    fn cell_symbols_cover_the_frame() {
        let g = CellGrid::default();
        assert_eq!(g.symbol([0.0, 0.0], (224, 224)), 0);
        assert_eq!(g.symbol([223.9, 223.9], (224, 224)), 12 * 16 - 1);
        assert_eq!(g.symbol([224.0, 0.0], (224, 224)), 15);
    }
}
