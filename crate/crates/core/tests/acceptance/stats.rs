/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.5758;

/// 99% normal-approximation interval for a binomial proportion `p` over `n`.
pub fn binomial_ci99(p: f64, n: u64) -> (f64, f64) {
    let half = Z99 * (p * (1.0 - p) / n as f64).sqrt();
    (p - half, p + half)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
