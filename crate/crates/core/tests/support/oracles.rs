//! Brute-force reference implementations, written from the definitions.
#![allow(dead_code)]

pub type P = [f64; 2];

pub fn euclid(a: P, b: P) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Minimum cost over every monotone alignment path, enumerated explicitly.
pub fn dtw_paths(a: &[P], b: &[P]) -> f64 {
    fn walk(a: &[P], b: &[P], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + euclid(a[i], b[j]);
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

/// The coupling recursion evaluated without memoization.
pub fn frechet_recursive(a: &[P], b: &[P]) -> f64 {
    fn c(a: &[P], b: &[P], i: usize, j: usize) -> f64 {
        let d = euclid(a[i], b[j]);
        match (i, j) {
            (0, 0) => d,
            (0, _) => d.max(c(a, b, 0, j - 1)),
            (_, 0) => d.max(c(a, b, i - 1, 0)),
            _ => d.max(c(a, b, i - 1, j).min(c(a, b, i - 1, j - 1)).min(c(a, b, i, j - 1))),
        }
    }
    c(a, b, a.len() - 1, b.len() - 1)
}

/// Edit distance by plain recursion on suffixes.
pub fn levenshtein_recursive<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let sub = levenshtein_recursive(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
    let del = levenshtein_recursive(&a[1..], b) + 1;
    let ins = levenshtein_recursive(a, &b[1..]) + 1;
    sub.min(del).min(ins)
}

/// Cell index of a point on a rows × cols partition of a height × width frame.
pub fn cell(p: P, height: usize, width: usize, rows: usize, cols: usize) -> usize {
    let mut r = (p[1] * rows as f64 / height as f64).floor() as i64;
    let mut c = (p[0] * cols as f64 / width as f64).floor() as i64;
    r = r.clamp(0, rows as i64 - 1);
    c = c.clamp(0, cols as i64 - 1);
    r as usize * cols + c as usize
}

/// Every window of `a` against every window of `b`, distances recomputed each time.
pub fn tde_loops(a: &[P], b: &[P], k: usize, stride: usize) -> f64 {
    let mut minima = Vec::new();
    let mut i = 0;
    while i + k <= a.len() {
        let mut best = f64::INFINITY;
        for j in 0..=b.len() - k {
            let mut s = 0.0;
            for t in 0..k {
                s += euclid(a[i + t], b[j + t]);
            }
            best = best.min(s / k as f64);
        }
        minima.push(best);
        i += stride;
    }
    minima.iter().sum::<f64>() / minima.len() as f64
}

/// Best/mean over a ground-truth × generated matrix, as nested loops.
pub fn best_mean(matrix: &[Vec<f64>]) -> (f64, f64) {
    let mut best_sum = 0.0;
    let mut mean_sum = 0.0;
    for row in matrix {
        let mut lo = f64::INFINITY;
        let mut total = 0.0;
        for &d in row {
            if d < lo {
                lo = d;
            }
            total += d;
        }
        best_sum += lo;
        mean_sum += total / row.len() as f64;
    }
    (best_sum / matrix.len() as f64, mean_sum / matrix.len() as f64)
}
