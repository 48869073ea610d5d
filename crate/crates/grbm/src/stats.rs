//! Statistical and special-function oracles: one-sample Kolmogorov-Smirnov,
//! digamma, empirical moments with batch-means errors, and the 1D
//! Fokker-Planck stationary-density oracle that anchors the sign conventions
//! used throughout the crate.

use crate::quad;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("samples must be nonempty and free of NaN")]
    BadSamples,
    #[error("digamma requires x > 0, got {0}")]
    DigammaDomain(f64),
    #[error("stationary density is not integrable on the grid: {0}")]
    NonIntegrable(String),
    #[error("empty window: {0}")]
    EmptyWindow(String),
}

/// Result of a one-sample KS test.
#[derive(Debug, Clone, Copy)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against the cdf,
/// with the asymptotic Kolmogorov p-value.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult, StatsError> {
    if samples.is_empty() || samples.iter().any(|x| x.is_nan()) {
        return Err(StatsError::BadSamples);
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let c = cdf(x).clamp(0.0, 1.0);
        let hi = (i as f64 + 1.0) / n - c;
        let lo = c - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    Ok(KsResult {
        d,
        p_value: kolmogorov_sf(lambda),
    })
}

/// Survival function of the Kolmogorov distribution, Q(lambda).
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Digamma function, via the recurrence to x > 6 plus the asymptotic series.
pub fn digamma(x: f64) -> Result<f64, StatsError> {
    if !(x > 0.0) {
        return Err(StatsError::DigammaDomain(x));
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 12.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    // Asymptotic expansion with Bernoulli-number coefficients.
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = x.ln() - 0.5 * inv
        - inv2
            * (1.0 / 12.0
                - inv2
                    * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
    Ok(acc + series)
}

/// A tabulated density on a uniform grid.
#[derive(Debug, Clone)]
pub struct DensityTable {
    pub xs: Vec<f64>,
    pub pdf: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl DensityTable {
    /// Linear interpolation of the cdf; clamps outside the grid.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= self.xs[n - 1] {
            return 1.0;
        }
        let h = self.xs[1] - self.xs[0];
        let i = ((x - self.xs[0]) / h).floor() as usize;
        let i = i.min(n - 2);
        let w = (x - self.xs[i]) / h;
        self.cdf[i] * (1.0 - w) + self.cdf[i + 1] * w
    }

    /// Linear interpolation of the pdf; zero outside the grid.
    pub fn pdf_at(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] {
            return 0.0;
        }
        let h = self.xs[1] - self.xs[0];
        let i = (((x - self.xs[0]) / h).floor() as usize).min(n - 2);
        let w = (x - self.xs[i]) / h;
        self.pdf[i] * (1.0 - w) + self.pdf[i + 1] * w
    }

    pub fn mean(&self) -> f64 {
        let h = self.xs[1] - self.xs[0];
        let ys: Vec<f64> = self.xs.iter().zip(&self.pdf).map(|(x, p)| x * p).collect();
        quad::trapezoid(&ys, h)
    }
}

/// Stationary density of a 1D diffusion dX = drift(X) dt + sigma dW on the
/// grid `[lo, hi]` with `n` points: density proportional to
/// exp{(2/sigma^2) * integral of drift}, normalized by trapezoid quadrature.
pub fn fokker_planck_1d_oracle<F: Fn(f64) -> f64>(
    drift: F,
    sigma2: f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<DensityTable, StatsError> {
    assert!(n >= 8 && hi > lo && sigma2 > 0.0);
    let h = (hi - lo) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
    let drifts: Vec<f64> = xs.iter().map(|&x| drift(x)).collect();
    let exponent: Vec<f64> = quad::cumulative_trapezoid(&drifts, h)
        .iter()
        .map(|v| 2.0 / sigma2 * v)
        .collect();
    let m = exponent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(StatsError::NonIntegrable("exponent overflow".into()));
    }
    // Tail check: the exponent must fall well below its max at both ends,
    // otherwise the density mass escapes the grid.
    let decay = 20.0;
    if exponent[0] > m - decay || exponent[n - 1] > m - decay {
        return Err(StatsError::NonIntegrable(format!(
            "exponent at grid ends ({:.3}, {:.3}) too close to max {:.3}",
            exponent[0],
            exponent[n - 1],
            m
        )));
    }
    let unnorm: Vec<f64> = exponent.iter().map(|&e| (e - m).exp()).collect();
    let z = quad::trapezoid(&unnorm, h);
    let pdf: Vec<f64> = unnorm.iter().map(|&u| u / z).collect();
    let mut cdf = quad::cumulative_trapezoid(&pdf, h);
    let total = cdf[n - 1];
    for c in cdf.iter_mut() {
        *c = (*c / total).clamp(0.0, 1.0);
    }
    Ok(DensityTable { xs, pdf, cdf })
}

/// A point estimate with a batch-means standard error.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Batch-means estimate of the mean of a (possibly autocorrelated) series.
pub fn batch_means(series: &[f64]) -> Result<Estimate, StatsError> {
    if series.is_empty() {
        return Err(StatsError::EmptyWindow("batch_means on empty series".into()));
    }
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    if n < 4 {
        return Ok(Estimate { value: mean, stderr: f64::INFINITY });
    }
    let n_batches = ((n as f64).sqrt().floor() as usize).clamp(2, 64);
    let batch = n / n_batches;
    let used = n_batches * batch;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| series[b * batch..(b + 1) * batch].iter().sum::<f64>() / batch as f64)
        .collect();
    let grand = series[..used].iter().sum::<f64>() / used as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    Ok(Estimate {
        value: mean,
        stderr: (var / n_batches as f64).sqrt(),
    })
}

/// Empirical raw/central moments with batch-means standard errors.
/// Order 1 is the mean; orders >= 2 are central moments.
pub fn empirical_moments(samples: &[f64], orders: &[u32]) -> Result<Vec<(u32, Estimate)>, StatsError> {
    if samples.is_empty() || samples.iter().any(|x| x.is_nan()) {
        return Err(StatsError::BadSamples);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    orders
        .iter()
        .map(|&k| {
            let series: Vec<f64> = if k == 1 {
                samples.to_vec()
            } else {
                samples.iter().map(|&x| (x - mean).powi(k as i32)).collect()
            };
            batch_means(&series).map(|e| (k, e))
        })
        .collect()
}

/// Spearman rank correlation of two equally long samples.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx).powi(2);
        vy += (ry[i] - my).powi(2);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut out = vec![0.0; xs.len()];
    for (r, &i) in idx.iter().enumerate() {
        out[i] = r as f64 + 1.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    /// Independent digamma oracle: Euler-Maclaurin with a 50-step recurrence.
    fn digamma_oracle(x: f64) -> f64 {
        let mut x = x;
        let mut acc = 0.0;
        for _ in 0..50 {
            acc -= 1.0 / x;
            x += 1.0;
        }
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        acc + x.ln() - 0.5 * inv - inv2 / 12.0 + inv2 * inv2 / 120.0 - inv2 * inv2 * inv2 / 252.0
    }

    #[test]
    fn digamma_at_one_is_minus_euler() {
        assert_relative_eq!(digamma(1.0).unwrap(), -EULER_GAMMA, epsilon = 1e-12);
    }

    #[test]
    fn digamma_at_two() {
        assert_relative_eq!(digamma(2.0).unwrap(), 1.0 - EULER_GAMMA, epsilon = 1e-12);
    }

    #[test]
    fn digamma_recurrence_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let x: f64 = rand::Rng::gen_range(&mut rng, 0.1..50.0);
            let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap() - 1.0 / x;
            assert!(lhs.abs() < 1e-12, "recurrence defect {lhs} at {x}");
        }
    }

    #[test]
    fn digamma_matches_euler_maclaurin_oracle() {
        for i in 1..=1000 {
            let x = i as f64 * 0.1;
            let d = (digamma(x).unwrap() - digamma_oracle(x)).abs();
            assert!(d < 1e-12, "digamma mismatch {d} at {x}");
        }
    }

    #[test]
    fn digamma_rejects_nonpositive() {
        assert!(digamma(0.0).is_err());
        assert!(digamma(-1.5).is_err());
    }

    #[test]
    fn ks_point_mass_against_normal() {
        let samples = vec![0.0; 1000];
        let cdf = |x: f64| 0.5 * (1.0 + libm_erf(x / std::f64::consts::SQRT_2));
        let r = ks_statistic(&samples, cdf).unwrap();
        assert_relative_eq!(r.d, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn ks_shifted_samples_near_one() {
        let samples: Vec<f64> = (0..1000).map(|i| 10.0 + i as f64 * 1e-3).collect();
        let cdf = |x: f64| 0.5 * (1.0 + libm_erf(x / std::f64::consts::SQRT_2));
        let r = ks_statistic(&samples, cdf).unwrap();
        assert!(r.d > 0.999);
    }

    #[test]
    fn ks_calibration_under_null() {
        // Samples drawn from the cdf itself should rarely be rejected at 1%.
        let mut fails = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..10_000)
                .map(|_| rand::Rng::gen::<f64>(&mut rng))
                .collect();
            let r = ks_statistic(&samples, |x| x.clamp(0.0, 1.0)).unwrap();
            if r.p_value <= 0.01 {
                fails += 1;
            }
        }
        assert!(fails <= 1, "{fails}/100 null rejections at 1%");
    }

    #[test]
    fn ks_rejects_nan() {
        assert!(ks_statistic(&[1.0, f64::NAN], |x| x).is_err());
    }

    // erf via Abramowitz-Stegun 7.1.26; test-only helper.
    fn libm_erf(x: f64) -> f64 {
        let s = if x < 0.0 { -1.0 } else { 1.0 };
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        s * y
    }

    #[test]
    fn fokker_planck_ou_is_gaussian() {
        // drift -y with sigma^2 = 2 gives the standard normal; check the
        // closed Gaussian form pointwise.
        let table = fokker_planck_1d_oracle(|y| -y, 2.0, -8.0, 8.0, 4001).unwrap();
        for i in (0..4001).step_by(400) {
            let x = table.xs[i];
            let expected = (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
            assert!((table.pdf[i] - expected).abs() < 1e-10, "pdf mismatch at {x}");
        }
    }

    #[test]
    fn fokker_planck_exponential_drift_matches_loggamma_shape() {
        // drift e^{-y} - mu, sigma^2 = 1 gives density prop. to exp{-2(e^{-y} + mu y)}.
        let mu = 1.0;
        let table = fokker_planck_1d_oracle(|y| (-y).exp() - mu, 1.0, -4.0, 14.0, 40_001).unwrap();
        let logp = |x: f64| -2.0 * ((-x).exp() + mu * x);
        let ref_idx = 20_000;
        for i in (1000..39_000).step_by(1900) {
            let ratio = table.pdf[i].ln() - table.pdf[ref_idx].ln();
            let expect = logp(table.xs[i]) - logp(table.xs[ref_idx]);
            assert!((ratio - expect).abs() < 1e-5, "shape mismatch at {}", table.xs[i]);
        }
    }

    #[test]
    fn fokker_planck_integrates_to_one() {
        let table = fokker_planck_1d_oracle(|y| (-y).exp() - 0.7, 1.0, -5.0, 20.0, 8001).unwrap();
        let h = table.xs[1] - table.xs[0];
        let total = quad::trapezoid(&table.pdf, h);
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fokker_planck_flags_divergence() {
        // drift +0.1 pushes mass to +infinity: non-integrable.
        assert!(fokker_planck_1d_oracle(|_| 0.1, 1.0, -10.0, 10.0, 1001).is_err());
    }

    #[test]
    fn moments_constant_samples() {
        let m = empirical_moments(&[3.0; 100], &[1, 2]).unwrap();
        assert_relative_eq!(m[0].1.value, 3.0);
        assert_relative_eq!(m[1].1.value, 0.0);
    }

    #[test]
    fn moments_gamma_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = Gamma::new(2.0, 1.0).unwrap();
        let samples: Vec<f64> = (0..100_000).map(|_| g.sample(&mut rng)).collect();
        let m = empirical_moments(&samples, &[1]).unwrap();
        assert!((m[0].1.value - 2.0).abs() < 3.0 * m[0].1.stderr);
    }

    #[test]
    fn moments_symmetric_skewness() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<f64> = (0..50_000)
            .map(|_| rand::Rng::gen::<f64>(&mut rng) - 0.5)
            .collect();
        let m = empirical_moments(&samples, &[3]).unwrap();
        assert!(m[0].1.value.abs() < 3.0 * m[0].1.stderr);
    }

    #[test]
    fn spearman_of_monotone_is_one() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        assert_relative_eq!(spearman_rho(&xs, &ys), 1.0, epsilon = 1e-12);
    }
}
