//! The exact first-return system on `Y = [1/2, 1]`.
//!
//! The return-time partition `{Z_n}` is delimited by the branch points of
//! the left branch: `Z_1 = [3/4, 1]` and `Z_n = [(1+c_{n-1})/2, (1+c_{n-2})/2)`
//! for `n >= 2`, so that `r(y) = n` exactly when `f(y)` lands in
//! `[c_{n-1}, c_{n-2})`. On each excursion the induced cocycle and induced
//! observable
//!
//! ```text
//! H(y) = h(y) h(f y) ... h(f^{r-1} y),
//! V(y) = sum_{j<r} h_j(y) v(f^j y),
//! V*(y) = max_{l<r} |sum_{j<=l} h_j(y) v(f^j y)|
//! ```
//!
//! are accumulated in one pass over the orbit. The module also carries the
//! numerical verification of the growth and tail laws that drive the
//! suppression argument: the `n^{-1/gamma}` return-time tail, the
//! `n^{1 - eta/gamma}` scaling of `V*`, the linear/quadratic cylinder bounds
//! on `V` and `H`, and the summability conditions reduced to moment
//! comparisons of the return time.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accum::KahanVec;
use crate::dynamics::{BranchPoints, LsvMap};
use crate::ensemble::{trajectory_rng, ObservableSpec};
use crate::error::{Error, Result};
use crate::fitting::{fit_line, quadratic_coefficient};
use crate::groups::{CocycleSpec, GroupElement};

/// Curvature threshold above which a log-log tail is flagged as not a
/// power law (geometric tails bend visibly on two decades).
pub const POWER_LAW_CURVATURE_TOL: f64 = 0.2;

// ---------------------------------------------------------------------------
// Return partition
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cylinder {
    pub n: u64,
    pub left: f64,
    pub right: f64,
    /// Empirical `mu_Y` mass from the long-orbit return counts.
    pub mu_hat: f64,
}

impl Cylinder {
    pub fn length(&self) -> f64 {
        self.right - self.left
    }
}

#[derive(Debug, Clone)]
pub struct ReturnPartition {
    pub map: LsvMap,
    pub cylinders: Vec<Cylinder>,
    /// Empirical `mu_Y(r > n_max)`.
    pub tail_mass: f64,
    /// Largest relative discrepancy between the two mass estimators on
    /// well-populated cylinders.
    pub mu_cross_check: f64,
    branch_points: BranchPoints,
}

impl ReturnPartition {
    pub fn n_max(&self) -> u64 {
        self.cylinders.len() as u64
    }

    pub fn branch_points(&self) -> &BranchPoints {
        &self.branch_points
    }

    /// Cylinder index of `y in Y` by branch-point classification; `None` for
    /// returns deeper than `n_max`.
    pub fn classify(&self, y: f64) -> Option<u64> {
        let n = self.branch_points.classify_image(self.map.step(y))?;
        (n <= self.n_max()).then_some(n)
    }

    /// `sum_n n mu_hat(Z_n)` plus a power-law tail extrapolation: the mean
    /// return time, which Kac's formula pins to `1 / mu(Y)`.
    pub fn mean_return_time(&self, tail_exponent: f64) -> f64 {
        let bulk: f64 = self
            .cylinders
            .iter()
            .map(|c| c.n as f64 * c.mu_hat)
            .sum();
        // mu(r > n) ~ tail_mass (n / n_max)^{-tau} beyond the table gives
        // sum_{n > n_max} n mu(Z_n) ~ tail_mass n_max tau / (tau - 1).
        let tau = tail_exponent;
        let tail = if tau > 1.0 {
            self.tail_mass * self.n_max() as f64 * tau / (tau - 1.0)
        } else {
            f64::INFINITY
        };
        bulk + tail
    }

    /// Empirical tail `mu_Y(r > n)` for `n <= n_max`.
    pub fn empirical_tail(&self, n: u64) -> f64 {
        self.cylinders
            .iter()
            .filter(|c| c.n > n)
            .map(|c| c.mu_hat)
            .sum::<f64>()
            + self.tail_mass
    }
}

/// Build the return partition with `mu_Y` masses estimated two ways: one
/// long orbit of the induced map after burn-in, and an ensemble of short
/// orbits. The two estimates are cross-checked and the first is stored.
pub fn build_return_partition(
    map: &LsvMap,
    n_max: u64,
    returns: usize,
    seed: u64,
) -> Result<ReturnPartition> {
    assert!(n_max >= 1);
    let bp = map.branch_points(n_max as usize)?;
    let pts = bp.points();
    let mut cylinders = Vec::with_capacity(n_max as usize);
    cylinders.push(Cylinder {
        n: 1,
        left: 0.75,
        right: 1.0,
        mu_hat: 0.0,
    });
    for n in 2..=n_max {
        cylinders.push(Cylinder {
            n,
            left: 0.5 + pts[n as usize - 1] / 2.0,
            right: 0.5 + pts[n as usize - 2] / 2.0,
            mu_hat: 0.0,
        });
    }

    // Estimator 1: one long induced orbit.
    let burn_in = 100_000.min(returns / 10);
    let counts_long = induced_orbit_counts(map, n_max, returns, burn_in, seed, 0)?;
    // Estimator 2: ensemble of short orbits.
    let orbits = 64usize;
    let per_orbit = (returns / orbits).max(64);
    let chunks: Vec<(Vec<u64>, u64)> = (1..=orbits as u64)
        .into_par_iter()
        .map(|t| induced_orbit_counts(map, n_max, per_orbit, per_orbit / 10, seed, t))
        .collect::<Result<_>>()?;
    let mut counts_short = vec![0u64; n_max as usize + 1];
    let mut short_total = 0u64;
    for (c, tail) in &chunks {
        for (i, v) in c.iter().enumerate() {
            counts_short[i] += v;
        }
        short_total += c.iter().sum::<u64>() + tail;
        counts_short[n_max as usize] += tail;
    }

    let (counts, tail_count) = counts_long;
    let total = counts.iter().sum::<u64>() + tail_count;
    for (i, cyl) in cylinders.iter_mut().enumerate() {
        cyl.mu_hat = counts[i] as f64 / total as f64;
    }
    let tail_mass = tail_count as f64 / total as f64;

    let mut cross = 0.0f64;
    for i in 0..n_max as usize {
        let a = counts[i];
        let b = counts_short[i];
        if a >= 100 && b >= 100 {
            let pa = a as f64 / total as f64;
            let pb = b as f64 / short_total as f64;
            cross = cross.max((pa - pb).abs() / pa);
        }
    }

    Ok(ReturnPartition {
        map: *map,
        cylinders,
        tail_mass,
        mu_cross_check: cross,
        branch_points: bp,
    })
}

/// Return-time counts per cylinder along one induced orbit; returns deeper
/// than `n_max` are lumped into the tail count (second component).
fn induced_orbit_counts(
    map: &LsvMap,
    n_max: u64,
    returns: usize,
    burn_in_returns: usize,
    seed: u64,
    stream: u64,
) -> Result<(Vec<u64>, u64)> {
    let mut rng = trajectory_rng(seed, stream);
    let mut sampler = crate::dynamics::OrbitSampler::new(map);
    let mut y = 0.5 + 0.5 * rng.gen::<f64>();
    let mut counts = vec![0u64; n_max as usize];
    let mut tail = 0u64;
    for i in 0..(burn_in_returns + returns) {
        let (r, next) = sampler.return_step(y, &mut rng)?;
        y = next;
        if i >= burn_in_returns {
            if r <= n_max {
                counts[r as usize - 1] += 1;
            } else {
                tail += 1;
            }
        }
    }
    Ok((counts, tail))
}

/// Plain return-time sample along an induced orbit, for tail fits.
pub fn sample_return_times(
    map: &LsvMap,
    count: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<u64>> {
    let mut rng = trajectory_rng(seed, 0);
    let mut sampler = crate::dynamics::OrbitSampler::new(map);
    let mut y = 0.5 + 0.5 * rng.gen::<f64>();
    let mut out = Vec::with_capacity(count);
    for i in 0..(burn_in + count) {
        let (r, next) = sampler.return_step(y, &mut rng)?;
        y = next;
        if i >= burn_in {
            out.push(r);
        }
    }
    Ok(out)
}

/// Fraction of time a long full-map orbit spends in `Y`, for the Kac check.
/// Estimated independently of any return-time bookkeeping.
pub fn time_fraction_in_y(map: &LsvMap, steps: u64, burn_in: u64, seed: u64) -> f64 {
    let mut rng = trajectory_rng(seed, 0);
    let mut sampler = crate::dynamics::OrbitSampler::new(map);
    let mut x: f64 = rng.gen();
    for _ in 0..burn_in {
        x = sampler.step(x, &mut rng);
    }
    let mut hits = 0u64;
    for _ in 0..steps {
        if x >= 0.5 {
            hits += 1;
        }
        x = sampler.step(x, &mut rng);
    }
    hits as f64 / steps as f64
}

// ---------------------------------------------------------------------------
// Induced observables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct InducedSample {
    pub y: f64,
    pub r: u64,
    /// Induced cocycle `H = h_r(y)`.
    pub h: GroupElement,
    /// Induced observable `V(y)`.
    pub v: Vec<f64>,
    /// Running maximum `V*(y)` of the partial-sum norms.
    pub v_star: f64,
    /// Landing point `F y = f^r y in Y`.
    pub image: f64,
}

/// One pass over the excursion of `y`: accumulates the cocycle products, the
/// partial sums and their running maximum.
pub fn induced_values(
    map: &LsvMap,
    cocycle: &CocycleSpec,
    observable: &ObservableSpec,
    y: f64,
) -> Result<InducedSample> {
    if !(0.5..=1.0).contains(&y) {
        return Err(Error::domain(format!("induced start {y} outside Y")));
    }
    let d = observable.dim;
    let mut h = GroupElement::identity(d);
    let mut sum = KahanVec::zeros(d);
    let mut v = vec![0.0; d];
    let mut term = vec![0.0; d];
    let mut v_star = 0.0f64;
    let mut x = y;
    let mut r = 0u64;
    loop {
        observable.eval(x, &mut v);
        // term = h_j(y) v(f^j y); manual loop to keep the arithmetic
        // bit-identical with the tower instrumentation stream.
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += h.matrix()[(i, j)] * v[j];
            }
            term[i] = s;
        }
        sum.add(&term);
        let norm: f64 = sum.value().iter().map(|t| t * t).sum::<f64>().sqrt();
        v_star = v_star.max(norm);
        h = h.compose(&cocycle.evaluate_unchecked(x));
        x = map.step(x);
        r += 1;
        if x >= 0.5 {
            break;
        }
        if r >= map.max_return() {
            return Err(Error::ReturnCapExceeded {
                y,
                cap: map.max_return(),
            });
        }
    }
    Ok(InducedSample {
        y,
        r,
        h,
        v: sum.value().to_vec(),
        v_star,
        image: x,
    })
}

// ---------------------------------------------------------------------------
// Tail exponent
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailFit {
    /// Log-log slope of the empirical tail; the tail law predicts `-1/gamma`.
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    /// Quadratic coefficient of the log-log fit.
    pub curvature: f64,
    /// False when the curvature diagnostic rejects a power law.
    pub power_law: bool,
    pub window: (u64, u64),
    pub observations: usize,
}

/// Least-squares tail fit from raw return-time observations over a log-log
/// window. Needs at least 1e4 observations.
pub fn tail_exponent_fit(returns: &[u64], window: (u64, u64)) -> Result<TailFit> {
    if returns.len() < 10_000 {
        return Err(Error::InsufficientData(format!(
            "tail fit needs >= 1e4 return observations, got {}",
            returns.len()
        )));
    }
    let total = returns.len() as f64;
    let mut sorted: Vec<u64> = returns.to_vec();
    sorted.sort_unstable();
    let tail_at = |n: u64| -> f64 {
        let idx = sorted.partition_point(|&r| r <= n);
        (sorted.len() - idx) as f64 / total
    };
    fit_tail_window(window, tail_at)
}

/// Same fit from partition masses; needs `n_max >= 1e3`.
pub fn tail_exponent_fit_from_partition(
    partition: &ReturnPartition,
    window: (u64, u64),
) -> Result<TailFit> {
    if partition.n_max() < 1_000 {
        return Err(Error::InsufficientData(
            "partition tail fit needs n_max >= 1e3".into(),
        ));
    }
    fit_tail_window(window, |n| partition.empirical_tail(n))
}

fn fit_tail_window<F: Fn(u64) -> f64>(window: (u64, u64), tail_at: F) -> Result<TailFit> {
    let (lo, hi) = window;
    if lo < 1 || hi <= lo {
        return Err(Error::config("bad tail window"));
    }
    // Log-spaced evaluation points.
    let points = 40usize;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut obs = 0usize;
    let mut last_n = 0u64;
    for i in 0..=points {
        let n = (lo as f64 * (hi as f64 / lo as f64).powf(i as f64 / points as f64)).round() as u64;
        if n == last_n {
            continue;
        }
        last_n = n;
        let t = tail_at(n);
        if t > 0.0 {
            xs.push((n as f64).ln());
            ys.push(t.ln());
            obs += 1;
        }
    }
    if xs.len() < 5 {
        return Err(Error::InsufficientData(
            "tail has too few populated points in the window".into(),
        ));
    }
    let fit = fit_line(&xs, &ys)?;
    let curvature = quadratic_coefficient(&xs, &ys)?;
    Ok(TailFit {
        slope: fit.slope,
        intercept: fit.intercept,
        stderr: fit.slope_stderr,
        curvature,
        power_law: curvature.abs() <= POWER_LAW_CURVATURE_TOL,
        window,
        observations: obs,
    })
}

// ---------------------------------------------------------------------------
// V* scaling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VstarFit {
    /// Log-log exponent of `max_{Z_n} V*` against `n`.
    pub exponent: f64,
    pub stderr: f64,
    /// True when the fitted exponent is below 0.1: `V*` is flat in `n`.
    pub bounded: bool,
    /// Per-`n` maxima that entered the fit.
    pub per_n_max: Vec<(u64, f64)>,
}

/// Sample `V*` per cylinder: for each listed `n`, draw starting points
/// uniformly inside `Z_n` and record the actual return time alongside `V*`.
pub fn sample_vstar_per_cylinder(
    map: &LsvMap,
    cocycle: &CocycleSpec,
    observable: &ObservableSpec,
    partition: &ReturnPartition,
    cylinder_ns: &[u64],
    samples_per_cylinder: usize,
    seed: u64,
) -> Result<Vec<(u64, f64)>> {
    if cylinder_ns.iter().any(|&n| n < 1 || n > partition.n_max()) {
        return Err(Error::config("cylinder index outside the partition"));
    }
    let out: Vec<Vec<(u64, f64)>> = cylinder_ns
        .par_iter()
        .map(|&n| {
            let cyl = &partition.cylinders[n as usize - 1];
            let mut rng = trajectory_rng(seed, n);
            let mut rows = Vec::with_capacity(samples_per_cylinder);
            for _ in 0..samples_per_cylinder {
                let y = cyl.left + (cyl.right - cyl.left) * rng.gen::<f64>();
                let s = induced_values(map, cocycle, observable, y)?;
                rows.push((s.r, s.v_star));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Fit the growth exponent of `max_{Z_n} V*` over a window in `n`,
/// requiring at least 10 samples per decade.
pub fn vstar_scaling_fit(samples: &[(u64, f64)], window: (u64, u64)) -> Result<VstarFit> {
    let mut per_n: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
    for &(n, vs) in samples {
        if n >= window.0 && n <= window.1 {
            let e = per_n.entry(n).or_insert(0.0);
            if vs > *e {
                *e = vs;
            }
        }
    }
    // Coverage: at least 10 samples in each decade intersecting the window.
    let mut decade = window.0;
    while decade < window.1 {
        let dec_hi = (decade * 10).min(window.1);
        let count = samples
            .iter()
            .filter(|(n, _)| *n >= decade && *n < dec_hi.max(decade + 1))
            .count();
        if count < 10 {
            return Err(Error::InsufficientData(format!(
                "V* fit: only {count} samples in decade [{decade}, {dec_hi})"
            )));
        }
        decade = dec_hi;
    }
    let xs: Vec<f64> = per_n.keys().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = per_n.values().map(|&v| v.max(1e-300).ln()).collect();
    let fit = fit_line(&xs, &ys)?;
    Ok(VstarFit {
        exponent: fit.slope,
        stderr: fit.slope_stderr,
        bounded: fit.slope < 0.1,
        per_n_max: per_n.into_iter().collect(),
    })
}

// ---------------------------------------------------------------------------
// Growth bounds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthRow {
    pub n: u64,
    /// `sup_{Z_n} |V| / n`; bounded by `|v|_inf`.
    pub v_ratio: f64,
    /// `sup pairs |H(y) - H(y')|_max / (n |F y - F y'|^eta)`; the cylinder
    /// bound makes this flat in `n`.
    pub h_ratio: f64,
    /// `max_k |f^k y| (n - k)^{1/gamma}`; the excursion geometry keeps this
    /// bounded.
    pub geometry: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthBoundsReport {
    pub rows: Vec<GrowthRow>,
    /// Log-log trend slopes of the three ratios; all must stay below 0.05.
    pub v_trend: f64,
    pub h_trend: f64,
    pub geometry_trend: f64,
    /// `sup_n v_ratio <= |v|_inf` held exactly.
    pub v_bound_ok: bool,
    pub v_sup_norm: f64,
}

/// Empirical check of the cylinder growth bounds: `|V| <= |v|_inf n` on
/// `Z_n`, the quadratic-in-`n` oscillation bound for `H` (measured against
/// the image distance `|Fy - Fy'|^eta`, the operational surrogate for the
/// symbolic metric), and the excursion geometry `|f^k y| (n-k)^{1/gamma}`.
pub fn verify_growth_bounds(
    map: &LsvMap,
    cocycle: &CocycleSpec,
    observable: &ObservableSpec,
    partition: &ReturnPartition,
    cylinder_ns: &[u64],
    samples_per_cylinder: usize,
    seed: u64,
) -> Result<GrowthBoundsReport> {
    if cylinder_ns.iter().any(|&n| n < 1 || n > partition.n_max()) {
        return Err(Error::config("cylinder index outside the partition"));
    }
    let gamma = map.gamma();
    let eta = cocycle.holder_exponent();
    let rows: Vec<GrowthRow> = cylinder_ns
        .par_iter()
        .map(|&n| {
            let cyl = &partition.cylinders[n as usize - 1];
            let mut rng = trajectory_rng(seed, 1_000_000 + n);
            let mut v_ratio = 0.0f64;
            let mut h_ratio = 0.0f64;
            let mut geometry = 0.0f64;
            let mut prev: Option<(f64, GroupElement)> = None;
            for _ in 0..samples_per_cylinder {
                let y = cyl.left + (cyl.right - cyl.left) * rng.gen::<f64>();
                let s = induced_values(map, cocycle, observable, y)?;
                if s.r != n {
                    continue; // boundary rounding; skip misclassified draws
                }
                let vnorm: f64 = s.v.iter().map(|t| t * t).sum::<f64>().sqrt();
                v_ratio = v_ratio.max(vnorm / n as f64);
                // Excursion geometry along the orbit.
                if gamma > 0.0 {
                    let (_, orbit) = map.return_time_orbit(y)?;
                    for (k, &xk) in orbit.iter().enumerate().skip(1) {
                        let m = (n as f64) - (k as f64);
                        geometry = geometry.max(xk * m.powf(1.0 / gamma));
                    }
                }
                // Pairwise oscillation of H within the cylinder, measured
                // against the induced-map image distance |Fy - Fy'|^eta.
                if let Some((image_prev, h_prev)) = &prev {
                    let dist = (s.image - image_prev).abs();
                    if dist > 1e-14 {
                        let osc = s.h.max_entry_distance(h_prev);
                        h_ratio = h_ratio.max(osc / (n as f64 * dist.powf(eta)));
                    }
                }
                prev = Some((s.image, s.h));
            }
            Ok(GrowthRow {
                n,
                v_ratio,
                h_ratio,
                geometry,
            })
        })
        .collect::<Result<_>>()?;

    let trend = |sel: fn(&GrowthRow) -> f64| -> f64 {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| sel(r) > 0.0)
            .map(|r| ((r.n as f64).ln(), sel(r).ln()))
            .collect();
        if pts.len() < 3 {
            return 0.0;
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        fit_line(&xs, &ys).map(|f| f.slope).unwrap_or(0.0)
    };
    let v_sup = observable.sup_norm();
    let v_max = rows.iter().map(|r| r.v_ratio).fold(0.0f64, f64::max);
    Ok(GrowthBoundsReport {
        v_trend: trend(|r| r.v_ratio),
        h_trend: trend(|r| r.h_ratio),
        geometry_trend: trend(|r| r.geometry),
        v_bound_ok: v_max <= v_sup * (1.0 + 1e-12),
        v_sup_norm: v_sup,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Summability
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Convergent,
    Divergent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesDiagnostic {
    /// Growth exponent of the summand surrogate (`mu(Z_n)` times `n^expo`).
    pub exponent: f64,
    /// Partial sums at decade checkpoints.
    pub partial_sums: Vec<(u64, f64)>,
    /// Ratio of the last two decade increments; Cauchy behaviour shows up
    /// as a ratio well below 1.
    pub increment_ratio: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummabilityReport {
    pub gamma: f64,
    pub p: f64,
    pub epsilon: f64,
    /// Fitted return-tail exponent `tau` (the analytic value is `1/gamma`).
    pub tail_exponent: f64,
    /// Condition (i): `sum mu(Z_n) |v|_inf n`.
    pub condition_i: SeriesDiagnostic,
    /// Conditions (ii)-(iii): `sum mu(Z_n) n^{2 eps + 1}`.
    pub condition_ii_iii: SeriesDiagnostic,
    /// Moment condition `r in L^p`: `sum mu(Z_n) n^p`.
    pub lp_condition: SeriesDiagnostic,
    /// The comparison that settles (ii)-(iii): `2 eps + 1 < tau`.
    pub epsilon_comparison: bool,
}

/// Summability verdicts for the martingale conditions, combining finite
/// partial sums with a power-law tail extrapolation. Raw partial sums alone
/// cannot separate convergence from slow divergence; the verdict is the
/// exponent comparison against the fitted tail.
pub fn verify_summability(
    partition: &ReturnPartition,
    v_sup: f64,
    p: f64,
    epsilon: f64,
    tail_fit: &TailFit,
) -> Result<SummabilityReport> {
    if p <= 1.0 {
        return Err(Error::config("moment order p must exceed 1"));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::config("epsilon must lie in (0, 1]"));
    }
    let tau = -tail_fit.slope;
    let series = |expo: f64, scale: f64| -> SeriesDiagnostic {
        let mut sum = 0.0;
        let mut checkpoints = Vec::new();
        let mut next_checkpoint = 10u64;
        for c in &partition.cylinders {
            sum += scale * c.mu_hat * (c.n as f64).powf(expo);
            if c.n == next_checkpoint {
                checkpoints.push((c.n, sum));
                next_checkpoint *= 10;
            }
        }
        checkpoints.push((partition.n_max(), sum));
        let increment_ratio = if checkpoints.len() >= 3 {
            let k = checkpoints.len();
            let a = checkpoints[k - 2].1 - checkpoints[k - 3].1;
            let b = checkpoints[k - 1].1 - checkpoints[k - 2].1;
            if a > 0.0 {
                b / a
            } else {
                0.0
            }
        } else {
            f64::NAN
        };
        SeriesDiagnostic {
            exponent: expo,
            partial_sums: checkpoints,
            increment_ratio,
            verdict: if expo < tau {
                Verdict::Convergent
            } else {
                Verdict::Divergent
            },
        }
    };
    Ok(SummabilityReport {
        gamma: partition.map.gamma(),
        p,
        epsilon,
        tail_exponent: tau,
        condition_i: series(1.0, v_sup),
        condition_ii_iii: series(2.0 * epsilon + 1.0, 1.0),
        lp_condition: series(p, 1.0),
        epsilon_comparison: 2.0 * epsilon + 1.0 < tau,
    })
}

#[cfg(test)]
#[path = "inducing_tests.rs"]
mod tests;
