//! Shared statistical primitives: deterministic reductions, two-sample
//! Kolmogorov-Smirnov, and Spearman rank correlation.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Pairwise (cascade) summation; result is independent of thread count and
/// accumulation order by construction because the tree shape only depends on
/// the slice length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    (pairwise_sum(&dev) / (n - 1.0) / n).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
#[derive(Clone, Copy, Debug)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(a.len() > 1 && b.len() > 1);
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na as f64 * nb as f64) / (na + nb) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    KsResult { statistic: d, p_value: ks_asymptotic_sf(lambda) }
}

/// Kolmogorov distribution survival function, 2*sum (-1)^{k-1} exp(-2 k^2 x^2).
fn ks_asymptotic_sf(x: f64) -> f64 {
    if x < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * x * x).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap());
    let mut r = vec![0.0; n];
    let mut k = 0;
    while k < n {
        let mut k2 = k;
        while k2 + 1 < n && xs[idx[k2 + 1]] == xs[idx[k]] {
            k2 += 1;
        }
        // average rank over ties, 1-based
        let avg = (k + k2 + 2) as f64 / 2.0;
        for &m in &idx[k..=k2] {
            r[m] = avg;
        }
        k = k2 + 1;
    }
    r
}

/// Spearman rank correlation with a Student-t p-value.
#[derive(Clone, Copy, Debug)]
pub struct SpearmanResult {
    pub rho: f64,
    /// one-sided p-value for the alternative rho < 0 (decreasing trend)
    pub p_decreasing: f64,
}

pub fn spearman(x: &[f64], y: &[f64]) -> SpearmanResult {
    assert!(x.len() == y.len() && x.len() >= 4);
    let rx = ranks(x);
    let ry = ranks(y);
    let mx = mean(&rx);
    let my = mean(&ry);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for k in 0..x.len() {
        sxy += (rx[k] - mx) * (ry[k] - my);
        sxx += (rx[k] - mx) * (rx[k] - mx);
        syy += (ry[k] - my) * (ry[k] - my);
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let n = x.len() as f64;
    let t = rho * ((n - 2.0) / (1.0 - rho * rho).max(1e-15)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 2.0).unwrap();
    SpearmanResult { rho, p_decreasing: dist.cdf(t) }
}
