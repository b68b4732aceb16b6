//! Ordinary least squares on small point sets, used by every exponent fit.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope under homoscedastic residuals.
    pub slope_stderr: f64,
}

/// Least-squares line through `(xs, ys)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(Error::GridMismatch(format!(
            "fit_line: {} xs vs {} ys",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::InsufficientData(
            "fit_line needs at least two points".into(),
        ));
    }
    let nf = n as f64;
    let mean_x = xs.iter().sum::<f64>() / nf;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::Degenerate("fit_line: all xs identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let mut ss_res = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - (intercept + slope * x);
        ss_res += r * r;
    }
    let slope_stderr = if n > 2 {
        (ss_res / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr,
    })
}

/// Quadratic coefficient of the least-squares parabola through `(xs, ys)`.
/// Used as a curvature diagnostic: a genuine power law is a straight line in
/// log-log coordinates, an exponential tail bends.
pub fn quadratic_coefficient(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::InsufficientData(
            "quadratic fit needs at least three points".into(),
        ));
    }
    // Normal equations for y = a + b x + c x^2 via centered powers.
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let u: Vec<f64> = xs.iter().map(|x| x - mean_x).collect();
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    let (mut t0, mut t1, mut t2) = (0.0, 0.0, 0.0);
    for (&ui, &yi) in u.iter().zip(ys) {
        let u2 = ui * ui;
        s1 += ui;
        s2 += u2;
        s3 += u2 * ui;
        s4 += u2 * u2;
        t0 += yi;
        t1 += yi * ui;
        t2 += yi * u2;
    }
    // Solve the 3x3 symmetric system [n s1 s2; s1 s2 s3; s2 s3 s4] [a b c]^T = [t0 t1 t2]^T.
    let m = nalgebra::Matrix3::new(n, s1, s2, s1, s2, s3, s2, s3, s4);
    let rhs = nalgebra::Vector3::new(t0, t1, t2);
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("singular quadratic fit".into()))?;
    Ok(sol[2])
}
