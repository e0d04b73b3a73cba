//! Deterministic reductions.

/// Pairwise (cascade) summation; the result depends only on the input order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if v.len() <= BLOCK {
        let mut s = 0.0;
        for &x in v {
            s += x;
        }
        return s;
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Pairwise sum of `f(i)` for `i in 0..n`.
pub fn sum_by<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    let terms: Vec<f64> = (0..n).map(f).collect();
    pairwise_sum(&terms)
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    sxy / sxx
}
