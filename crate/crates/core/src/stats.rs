//! Estimators and hypothesis checks that turn ensembles into verdicts.
//!
//! Scaling fits use medians of `|phi_n|` rather than second moments: second
//! moments are infinite in the stable regime, while medians scale like the
//! correct normalisation in both the diffusive and the superdiffusive case.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::fitting::{fit_line, LineFit};
use crate::groups::GroupElement;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// `q`-quantile (linear interpolation) of an unsorted sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty() && (0.0..=1.0).contains(&q));
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    }
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// One-sample Kolmogorov-Smirnov distance between a **sorted** sample and a
/// reference CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        sup = sup.max((f - i as f64 / n).abs());
        sup = sup.max(((i + 1) as f64 / n - f).abs());
    }
    sup
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("empty KS sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j) = (0usize, 0usize);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut sup = 0.0f64;
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

/// KS distance of a standardized sample against the standard normal law.
/// Requires at least 1e3 samples and a nondegenerate variance.
pub fn ks_normal(samples: &[f64]) -> Result<f64> {
    if samples.len() < 1000 {
        return Err(Error::InsufficientData(format!(
            "ks_normal needs >= 1000 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::Degenerate("zero variance in ks_normal".into()));
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = samples.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ks_distance(&z, normal_cdf))
}

/// `(1/n) * E[phi_n phi_n^T]`, symmetrized. Requires at least 100 samples
/// and a centered observable.
pub fn estimate_covariance(samples: &[Vec<f64>], n: u64) -> Result<DMatrix<f64>> {
    if samples.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "estimate_covariance needs >= 100 samples, got {}",
            samples.len()
        )));
    }
    let d = samples[0].len();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                acc[(i, j)] += s[i] * s[j];
            }
        }
    }
    acc /= samples.len() as f64 * n as f64;
    Ok(0.5 * (&acc + acc.transpose()))
}

/// `max_i |g_i Sigma - Sigma g_i|_F / |Sigma|_F` over the supplied group
/// elements. Returns `(0, true)` for a numerically zero matrix.
pub fn equivariance_defect(sigma: &DMatrix<f64>, group: &[GroupElement]) -> (f64, bool) {
    let norm = sigma.norm();
    if norm < 1e-300 {
        return (0.0, true);
    }
    let mut worst = 0.0f64;
    for g in group {
        let m = g.matrix();
        let defect = (m * sigma - sigma * m).norm() / norm;
        worst = worst.max(defect);
    }
    (worst, false)
}

/// `|Sigma - sigma^2 I|_F / |Sigma|_F` with `sigma^2 = tr(Sigma) / d`.
pub fn isotropy_defect(sigma: &DMatrix<f64>) -> f64 {
    let d = sigma.nrows();
    let s2 = sigma.trace() / d as f64;
    let iso = DMatrix::<f64>::identity(d, d) * s2;
    (sigma - iso).norm() / sigma.norm()
}

/// Least-squares slope of `log median` against `log n`. The grid must span
/// at least three decades.
pub fn diffusion_exponent(ns: &[f64], medians: &[f64]) -> Result<LineFit> {
    if ns.len() != medians.len() || ns.len() < 3 {
        return Err(Error::InsufficientData(
            "diffusion_exponent needs >= 3 grid points".into(),
        ));
    }
    let lo = ns.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ns.iter().cloned().fold(0.0f64, f64::max);
    if hi / lo < 999.0 {
        return Err(Error::InsufficientData(format!(
            "diffusion_exponent grid spans {:.2} decades, needs >= 3",
            (hi / lo).log10()
        )));
    }
    let xs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ys: Vec<f64> = medians.iter().map(|m| m.ln()).collect();
    fit_line(&xs, &ys)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StableIndexEstimate {
    /// Hill estimate at the central cut fraction.
    pub alpha: f64,
    /// `alpha / sqrt(k)` at the central cut.
    pub stderr: f64,
    /// Sensitivity band of the estimate across cut fractions 1%..5%.
    pub band: (f64, f64),
    /// Central cut fraction and its order-statistic count.
    pub cut_fraction: f64,
    pub k: usize,
    /// Raised when the estimate sits at or beyond the Gaussian boundary
    /// `alpha >= 2` (no heavy tail detected).
    pub gaussian_boundary: bool,
}

/// Hill estimator of the tail index of `|x|`, with a sensitivity band over
/// the top 1-5% order statistics.
pub fn stable_index(samples: &[f64]) -> Result<StableIndexEstimate> {
    if samples.len() < 10_000 {
        return Err(Error::InsufficientData(format!(
            "stable_index needs >= 1e4 samples, got {}",
            samples.len()
        )));
    }
    let mut mags: Vec<f64> = samples.iter().map(|x| x.abs()).filter(|x| *x > 0.0).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let hill = |k: usize| -> Option<f64> {
        if k < 10 || k >= mags.len() {
            return None;
        }
        let xk = mags[k];
        if xk <= 0.0 {
            return None;
        }
        let mean_log: f64 = mags[..k].iter().map(|x| (x / xk).ln()).sum::<f64>() / k as f64;
        (mean_log > 0.0).then(|| 1.0 / mean_log)
    };
    let fractions = [0.01, 0.02, 0.025, 0.03, 0.04, 0.05];
    let mut band = (f64::INFINITY, f64::NEG_INFINITY);
    let mut central = None;
    for &f in &fractions {
        let k = ((mags.len() as f64 * f) as usize).max(10);
        match hill(k) {
            Some(a) => {
                band.0 = band.0.min(a);
                band.1 = band.1.max(a);
                if f == 0.025 {
                    central = Some((a, k));
                }
            }
            None => {
                return Err(Error::InsufficientData(
                    "tail too short for Hill estimation".into(),
                ))
            }
        }
    }
    let (alpha, k) = central.expect("central cut evaluated");
    Ok(StableIndexEstimate {
        alpha,
        stderr: alpha / (k as f64).sqrt(),
        band,
        cut_fraction: 0.025,
        k,
        gaussian_boundary: alpha >= 2.0,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogNormalizationProbe {
    /// Slope of `(median|phi_n| / z_{3/4})^2 / n` against `ln n`; for
    /// variance `c n log n` this recovers `c`.
    pub slope: f64,
    pub slope_stderr: f64,
    /// Intercept in the same regression (the plain-diffusion level).
    pub intercept: f64,
}

/// Exploratory probe for the `(n log n)^{1/2}` normalisation at `gamma = 1/2`:
/// regresses the squared, quartile-standardised median against `ln n`.
pub fn log_normalization_probe(ns: &[f64], medians: &[f64]) -> Result<LogNormalizationProbe> {
    if ns.len() != medians.len() || ns.len() < 3 {
        return Err(Error::InsufficientData(
            "log probe needs >= 3 grid points".into(),
        ));
    }
    // Median of |N(0,1)| is the 3/4 normal quantile.
    let z34 = 0.6744897501960817;
    let xs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ys: Vec<f64> = medians
        .iter()
        .zip(ns)
        .map(|(m, n)| (m / z34) * (m / z34) / n)
        .collect();
    let fit = fit_line(&xs, &ys)?;
    Ok(LogNormalizationProbe {
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        intercept: fit.intercept,
    })
}

/// Summary statistics block attached to run reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsReport {
    pub sigma_hat: Vec<Vec<f64>>,
    pub sigma_min_eigenvalue: f64,
    pub equivariance_defect: f64,
    pub equivariance_zero_matrix: bool,
    pub isotropy_defect: f64,
    /// KS statistic per projection direction.
    pub ks_statistics: Vec<f64>,
    pub diffusion_exponent: Option<LineFit>,
    pub stable_index: Option<StableIndexEstimate>,
    pub samples: usize,
    pub grid: Vec<u64>,
}

/// Validated symmetric positive-semidefinite check used by report assembly:
/// symmetry to 1e-12, eigenvalues above -1e-10.
pub fn check_covariance(sigma: &DMatrix<f64>) -> Result<f64> {
    let asym = (sigma - sigma.transpose()).amax();
    if asym > 1e-12 {
        return Err(Error::Degenerate(format!(
            "covariance asymmetric by {asym:e}"
        )));
    }
    let eigs = sigma.clone().symmetric_eigen().eigenvalues;
    let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 {
        return Err(Error::Degenerate(format!(
            "covariance has negative eigenvalue {min:e}"
        )));
    }
    Ok(min)
}

/// Convenience: matrix to row-major nested vectors for serialization.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Projections of vector samples onto a direction.
pub fn project_samples(samples: &[Vec<f64>], direction: &DVector<f64>) -> Vec<f64> {
    samples
        .iter()
        .map(|s| s.iter().zip(direction.iter()).map(|(a, b)| a * b).sum())
        .collect()
}
