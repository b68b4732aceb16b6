//! The LSV family of intermittent interval maps and its branch structure.
//!
//! The map on `[0,1]` is
//!
//! ```text
//! f(x) = x (1 + (2x)^gamma)   for x in [0, 1/2],
//! f(x) = 2x - 1               for x in (1/2, 1],
//! ```
//!
//! with a neutral fixed point at 0 for `gamma > 0` and the doubling map at
//! `gamma = 0`. The left branch is written with `2^gamma x^gamma = (2x)^gamma`
//! so that `f(1/2) = 1` holds exactly in floating point.
//!
//! Returns to `Y = [1/2, 1]` organise everything downstream: the decreasing
//! branch points `c_0 = 1/2 > c_1 > c_2 > ...` defined by `f(c_k) = c_{k-1}`
//! delimit the sets of points whose first-return time to `Y` equals a given
//! value. `c_k` decays like `k^{-1/gamma}`, which is the source of the
//! heavy-tailed return times.

use crate::error::{Error, Result};

const BISECTION_BUDGET: usize = 200;

/// LSV map together with the numerical policy used when inverting branches
/// and following excursions.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LsvMap {
    gamma: f64,
    bisection_tol: f64,
    max_return: u64,
}

impl LsvMap {
    pub const DEFAULT_BISECTION_TOL: f64 = 1e-14;
    pub const DEFAULT_MAX_RETURN: u64 = 10_000_000;

    /// Map with the intermittency exponent `gamma in [0, 1)` and default
    /// tolerance/cap policy.
    pub fn new(gamma: f64) -> Result<Self> {
        Self::with_policy(gamma, Self::DEFAULT_BISECTION_TOL, Self::DEFAULT_MAX_RETURN)
    }

    pub fn with_policy(gamma: f64, bisection_tol: f64, max_return: u64) -> Result<Self> {
        if !gamma.is_finite() || !(0.0..1.0).contains(&gamma) {
            return Err(Error::domain(format!(
                "gamma must lie in [0,1) for integrable return times, got {gamma}"
            )));
        }
        if !(bisection_tol > 0.0) {
            return Err(Error::domain("bisection_tol must be positive"));
        }
        if max_return == 0 {
            return Err(Error::domain("max_return must be at least 1"));
        }
        Ok(LsvMap {
            gamma,
            bisection_tol,
            max_return,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn bisection_tol(&self) -> f64 {
        self.bisection_tol
    }

    pub fn max_return(&self) -> u64 {
        self.max_return
    }

    /// One step of the map. Errors outside `[0,1]` or on non-finite input.
    pub fn apply(&self, x: f64) -> Result<f64> {
        if !x.is_finite() || !(0.0..=1.0).contains(&x) {
            return Err(Error::domain(format!("map input {x} outside [0,1]")));
        }
        Ok(self.step(x))
    }

    /// One step without the domain check; callers guarantee `x in [0,1]`.
    #[inline(always)]
    pub(crate) fn step(&self, x: f64) -> f64 {
        if x <= 0.5 {
            self.left(x)
        } else {
            2.0 * x - 1.0
        }
    }

    /// Left branch `g(x) = x (1 + (2x)^gamma)`, increasing on `[0, 1/2]`
    /// with `g(0) = 0` and `g(1/2) = 1`.
    #[inline(always)]
    pub(crate) fn left(&self, x: f64) -> f64 {
        if self.gamma == 0.0 {
            2.0 * x
        } else {
            x * (1.0 + (2.0 * x).powf(self.gamma))
        }
    }

    /// Inverse of the left branch by bisection: returns `x in [0, 1/2]` with
    /// `|g(x) - z| <= bisection_tol`.
    pub fn left_branch_inverse(&self, z: f64) -> Result<f64> {
        if !z.is_finite() || !(0.0..=1.0).contains(&z) {
            return Err(Error::domain(format!("inverse input {z} outside [0,1]")));
        }
        let (mut lo, mut hi) = (0.0_f64, 0.5_f64);
        let mut mid = 0.25;
        for _ in 0..BISECTION_BUDGET {
            mid = 0.5 * (lo + hi);
            let g = self.left(mid);
            if (g - z).abs() <= self.bisection_tol {
                return Ok(mid);
            }
            if g < z {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // The interval collapses to one ulp long before the budget runs out;
        // reaching this point means the tolerance is unattainable at z.
        let residual = (self.left(mid) - z).abs();
        if residual <= 10.0 * self.bisection_tol {
            return Ok(mid);
        }
        Err(Error::Convergence {
            tol: self.bisection_tol,
            budget: BISECTION_BUDGET,
            residual,
        })
    }

    /// Branch points `c_0 = 1/2, c_k = g^{-1}(c_{k-1})` for `k = 1..=n`.
    pub fn branch_points(&self, n: usize) -> Result<BranchPoints> {
        assert!(n >= 1, "need at least one branch point");
        let mut points = Vec::with_capacity(n + 1);
        points.push(0.5);
        for k in 1..=n {
            let prev = points[k - 1];
            points.push(self.left_branch_inverse(prev)?);
        }
        Ok(BranchPoints { points })
    }

    /// First-return data for `y in Y = [1/2, 1]`: the return time `r` and the
    /// excursion `(y, f y, ..., f^{r-1} y)`; `f^r y` is back in `Y`.
    pub fn return_time_orbit(&self, y: f64) -> Result<(u64, Vec<f64>)> {
        if !y.is_finite() || !(0.5..=1.0).contains(&y) {
            return Err(Error::domain(format!("return start {y} outside [1/2,1]")));
        }
        let mut orbit = vec![y];
        let mut x = self.step(y);
        let mut r = 1u64;
        while x < 0.5 {
            if r >= self.max_return {
                return Err(Error::ReturnCapExceeded {
                    y,
                    cap: self.max_return,
                });
            }
            orbit.push(x);
            x = self.left(x);
            r += 1;
        }
        Ok((r, orbit))
    }

    /// Return time only, without storing the excursion.
    pub fn return_time(&self, y: f64) -> Result<u64> {
        self.return_step(y).map(|(r, _)| r)
    }

    /// Return time together with the landing point `F y = f^r y in Y`;
    /// no allocation, for long induced orbits.
    pub fn return_step(&self, y: f64) -> Result<(u64, f64)> {
        if !y.is_finite() || !(0.5..=1.0).contains(&y) {
            return Err(Error::domain(format!("return start {y} outside [1/2,1]")));
        }
        let mut x = self.step(y);
        let mut r = 1u64;
        while x < 0.5 {
            if r >= self.max_return {
                return Err(Error::ReturnCapExceeded {
                    y,
                    cap: self.max_return,
                });
            }
            x = self.left(x);
            r += 1;
        }
        Ok((r, x))
    }
}

/// Orbit stepper for long statistical runs.
///
/// For `gamma = 0` the map is the doubling map, which is exact in binary
/// floating point: every f64 orbit lands on the dyadic fixed point within
/// about 50 steps. Statistical orbits therefore refresh the lowest mantissa
/// bit with one fresh random bit per step, which realises a typical orbit
/// of the natural extension (the bit stream of a Lebesgue-random point).
/// For `gamma > 0` the nonlinear branch mixes mantissa bits by itself and
/// the map is iterated as is. Identity and replay checks always use the
/// pure map.
#[derive(Debug, Clone)]
pub struct OrbitSampler {
    map: LsvMap,
    refill: bool,
    buffer: u64,
    bits_left: u8,
}

impl OrbitSampler {
    pub fn new(map: &LsvMap) -> Self {
        OrbitSampler {
            map: *map,
            refill: map.gamma() == 0.0,
            buffer: 0,
            bits_left: 0,
        }
    }

    #[inline(always)]
    fn fresh_bit<R: rand::Rng>(&mut self, rng: &mut R) -> f64 {
        if self.bits_left == 0 {
            self.buffer = rng.gen();
            self.bits_left = 64;
        }
        let bit = (self.buffer & 1) as f64;
        self.buffer >>= 1;
        self.bits_left -= 1;
        bit
    }

    #[inline(always)]
    pub fn step<R: rand::Rng>(&mut self, x: f64, rng: &mut R) -> f64 {
        let y = self.map.step(x);
        if !self.refill {
            return y;
        }
        // ulp(y) <= 2^-53 on [0, 1), so the injection is exact.
        let mut y = y + self.fresh_bit(rng) * 2f64.powi(-53);
        if y >= 1.0 {
            y -= 2f64.powi(-53);
        }
        y
    }

    /// Return time and landing point with the same refill policy.
    pub fn return_step<R: rand::Rng>(&mut self, y: f64, rng: &mut R) -> Result<(u64, f64)> {
        if !self.refill {
            return self.map.return_step(y);
        }
        let mut x = self.step(y, rng);
        let mut r = 1u64;
        while x < 0.5 {
            if r >= self.map.max_return() {
                return Err(Error::ReturnCapExceeded {
                    y,
                    cap: self.map.max_return(),
                });
            }
            x = self.step(x, rng);
            r += 1;
        }
        Ok((r, x))
    }
}

/// Decreasing branch points `c_0 = 1/2 > c_1 > ... > c_N` with
/// `f(c_k) = c_{k-1}` on the left branch.
#[derive(Debug, Clone)]
pub struct BranchPoints {
    points: Vec<f64>,
}

impl BranchPoints {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Largest `k` such that `c_k` is tabulated.
    pub fn depth(&self) -> usize {
        self.points.len() - 1
    }

    /// Cylinder index from the image point: `r(y) = n` iff
    /// `f(y) in [c_{n-1}, c_{n-2})`, with the convention `c_{-1} = 1` and the
    /// top interval closed at 1 (both `y = 1/2` and `y = 1` map to `1 in Y`).
    /// Returns `None` when `f(y)` lies below the deepest tabulated point.
    pub fn classify_image(&self, fy: f64) -> Option<u64> {
        if fy >= 0.5 {
            return Some(1);
        }
        // points is strictly decreasing: find k with c_k <= fy < c_{k-1}.
        let pts = &self.points;
        if fy < *pts.last().unwrap() {
            return None;
        }
        let mut lo = 0usize; // fy < pts[lo]
        let mut hi = pts.len() - 1; // pts[hi] <= fy
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if fy >= pts[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi as u64 + 1)
    }
}
