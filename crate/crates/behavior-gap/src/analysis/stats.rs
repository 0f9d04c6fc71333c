//! Seed-deterministic statistics: percentile bootstrap, Welch's t-test,
//! the one-sample t-test on log-transformed ratios, and Pearson correlation.
//!
//! ```
//! use behavior_gap::analysis::stats;
//!
//! let aligned = [4.0, 5.0, 4.0, 5.0, 4.0];
//! let misaligned = [2.0, 1.0, 2.0, 2.0, 3.0];
//! let result = stats::welch_t_test(&aligned, &misaligned).unwrap();
//! assert!(result.p < 0.01);
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::AnalysisError;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn t_sf(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    1.0 - dist.cdf(t)
}

/// Percentile bootstrap CI for the mean at 95% coverage. Resampling is
/// driven by a ChaCha stream so results are reproducible across platforms.
pub fn bootstrap_ci(
    values: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64), AnalysisError> {
    if values.len() < 2 {
        return Err(AnalysisError::TooFewSamples {
            needed: 2,
            got: values.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..values.len() {
            sum += values[rng.gen_range(0..values.len())];
        }
        means.push(sum / values.len() as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite means"));
    Ok((percentile(&means, 2.5), percentile(&means, 97.5)))
}

/// Generic dialog-level bootstrap: resample indexes, recompute an arbitrary
/// pooled statistic. Used for pooled-discrepancy intervals where the
/// statistic is not a plain mean.
pub fn bootstrap_statistic_ci<F>(
    n: usize,
    resamples: usize,
    seed: u64,
    statistic: F,
) -> Result<(f64, f64), AnalysisError>
where
    F: Fn(&[usize]) -> f64,
{
    if n < 2 {
        return Err(AnalysisError::TooFewSamples { needed: 2, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(resamples);
    let mut idx = vec![0usize; n];
    for _ in 0..resamples {
        for slot in idx.iter_mut() {
            *slot = rng.gen_range(0..n);
        }
        stats.push(statistic(&idx));
    }
    stats.sort_by(|a, b| a.partial_cmp(b).expect("finite statistics"));
    Ok((percentile(&stats, 2.5), percentile(&stats, 97.5)))
}

// Linear-interpolation percentile over a sorted slice.
fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Welch's unequal-variance t-test with Satterthwaite degrees of freedom;
/// two-sided p. Two degenerate (zero-variance) groups with equal means
/// yield `t = 0, p = 1` by convention.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, AnalysisError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(AnalysisError::TooFewSamples {
            needed: 2,
            got: a.len().min(b.len()),
        });
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a), sample_variance(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        if ma == mb {
            return Ok(TTestResult {
                t: 0.0,
                df: na + nb - 2.0,
                p: 1.0,
            });
        }
        return Ok(TTestResult {
            t: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
            df: na + nb - 2.0,
            p: 0.0,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2.powi(2) / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let p = 2.0 * t_sf(t.abs(), df);
    Ok(TTestResult { t, df, p })
}

/// One-sample t-test on `ln(injected / baseline)` against the null that the
/// mean log-ratio is at most zero; one-sided p (greater). Nonpositive pairs
/// are excluded and counted in `excluded`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRatioResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub excluded: usize,
}

pub fn log_ratio_t_test(pairs: &[(f64, f64)]) -> Result<LogRatioResult, AnalysisError> {
    let mut logs = Vec::with_capacity(pairs.len());
    let mut excluded = 0usize;
    for &(injected, baseline) in pairs {
        if injected > 0.0 && baseline > 0.0 {
            logs.push((injected / baseline).ln());
        } else {
            excluded += 1;
        }
    }
    if logs.len() < 2 {
        return Err(AnalysisError::TooFewSamples {
            needed: 2,
            got: logs.len(),
        });
    }
    let n = logs.len() as f64;
    let m = mean(&logs);
    let v = sample_variance(&logs);
    let df = n - 1.0;
    // Identical ratios can still produce a nonzero computed variance
    // through rounding in the mean, so degeneracy is detected on the raw
    // logs.
    if v == 0.0 || logs.iter().all(|&x| x == logs[0]) {
        // Degenerate spread: direction decides the p-value outright.
        let (t, p) = if m > 0.0 {
            (f64::INFINITY, 0.0)
        } else if m < 0.0 {
            (f64::NEG_INFINITY, 1.0)
        } else {
            (0.0, 0.5)
        };
        return Ok(LogRatioResult { t, df, p, excluded });
    }
    let t = m / (v / n).sqrt();
    let p = t_sf(t, df);
    Ok(LogRatioResult { t, df, p, excluded })
}

/// Product-moment correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch {
            a: x.len(),
            b: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooFewSamples {
            needed: 2,
            got: x.len(),
        });
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Draw `n` standard-normal values from a seeded stream. Exposed for the
/// acceptance suite's CLT check.
pub fn seeded_standard_normal(n: usize, seed: u64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect()
}
