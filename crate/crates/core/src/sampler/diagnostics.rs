/// Effective sample size of one chain from Geyer's initial monotone
/// sequence estimator of the integrated autocorrelation time.
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = chain.iter().map(|v| v - mean).collect();
    let var = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * var);
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let mut pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 1;
    }
    n as f64 / tau.max(1.0 / n as f64)
}

/// Monte-Carlo standard error of the chain mean.
pub fn mc_standard_error(chain: &[f64]) -> f64 {
    let n = chain.len() as f64;
    let mean = chain.iter().sum::<f64>() / n;
    let var = chain.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / effective_sample_size(chain)).sqrt()
}
