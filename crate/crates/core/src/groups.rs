//! Orthogonal matrix groups, parametric Hoelder cocycles and their
//! fixed-space geometry.
//!
//! Cocycles are drawn from the family `h(x) = exp(S0 + x^eta S1)` with `S0`,
//! `S1` skew-symmetric. This gives exact control of the value at the neutral
//! fixed point, `h(0) = exp(S0)`, an exact Hoelder exponent `eta`, and lets
//! experiments dial `Fix h(0)` precisely. Distances on the group are measured
//! in the max-entry matrix norm throughout.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::accum::KahanVec;
use crate::dynamics::LsvMap;
use crate::error::{Error, Result};

/// Max-entry tolerance on `Q^T Q - I` for a valid group element.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;
/// Tolerance on `det Q - 1` (the group is connected).
pub const DETERMINANT_TOL: f64 = 1e-8;
/// Default singular-value threshold separating `Fix h(0)` from its complement.
pub const FIX_THRESHOLD: f64 = 1e-8;

/// Orthogonal `d x d` matrix with determinant `+1`, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    m: DMatrix<f64>,
}

impl GroupElement {
    pub fn try_new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::domain("group element must be square"));
        }
        let d = m.nrows();
        let gram = m.transpose() * &m;
        let mut defect = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((gram[(i, j)] - target).abs());
            }
        }
        if defect > ORTHOGONALITY_TOL {
            return Err(Error::domain(format!(
                "matrix is not orthogonal: max |Q^T Q - I| = {defect:e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > DETERMINANT_TOL {
            return Err(Error::domain(format!(
                "determinant {det} too far from +1"
            )));
        }
        Ok(GroupElement { m })
    }

    pub fn identity(d: usize) -> Self {
        GroupElement {
            m: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Inverse; for orthogonal matrices this is the transpose.
    pub fn inverse(&self) -> GroupElement {
        GroupElement {
            m: self.m.transpose(),
        }
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        GroupElement {
            m: &self.m * &other.m,
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.m * v
    }

    /// Max-entry distance to another element.
    pub fn max_entry_distance(&self, other: &GroupElement) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.m.nrows() {
            for j in 0..self.m.ncols() {
                d = d.max((self.m[(i, j)] - other.m[(i, j)]).abs());
            }
        }
        d
    }
}

fn antisymmetrize(s: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (s - s.transpose())
}

/// Exponential of a skew-symmetric matrix: planar rotation for `d = 2`,
/// axis-angle for `d = 3`, scaling-and-squaring with a truncated series for
/// `d >= 4`. The result is orthogonal with determinant `+1`.
pub fn matrix_exp_skew(s: &DMatrix<f64>) -> GroupElement {
    let d = s.nrows();
    assert_eq!(d, s.ncols(), "skew matrix must be square");
    let m = match d {
        0 => DMatrix::identity(0, 0),
        1 => DMatrix::identity(1, 1),
        2 => {
            let theta = s[(1, 0)];
            let (sin, cos) = theta.sin_cos();
            DMatrix::from_row_slice(2, 2, &[cos, -sin, sin, cos])
        }
        3 => {
            let w = [s[(2, 1)], s[(0, 2)], s[(1, 0)]];
            rot3_from_vector(w)
        }
        _ => exp_scaling_squaring(s),
    };
    GroupElement { m }
}

/// Rodrigues rotation from a rotation vector (axis times angle), row-major.
#[inline(always)]
pub(crate) fn rot3_array(w: [f64; 3]) -> [f64; 9] {
    let theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let theta = theta2.sqrt();
    // sin(t)/t and (1-cos t)/t^2, series-switched near zero.
    let (a, b) = if theta < 1e-4 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let (x, y, z) = (w[0], w[1], w[2]);
    [
        1.0 - b * (y * y + z * z),
        -a * z + b * x * y,
        a * y + b * x * z,
        a * z + b * x * y,
        1.0 - b * (x * x + z * z),
        -a * x + b * y * z,
        -a * y + b * x * z,
        a * x + b * y * z,
        1.0 - b * (x * x + y * y),
    ]
}

fn rot3_from_vector(w: [f64; 3]) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &rot3_array(w))
}

fn exp_scaling_squaring(s: &DMatrix<f64>) -> DMatrix<f64> {
    let d = s.nrows();
    let norm = s.amax() * d as f64;
    let squarings = if norm > 0.25 {
        ((norm / 0.25).log2().ceil() as u32).min(60)
    } else {
        0
    };
    let scaled = s / 2f64.powi(squarings as i32);
    let mut result = DMatrix::identity(d, d);
    let mut term = DMatrix::identity(d, d);
    for k in 1..=40 {
        term = (&term * &scaled) / k as f64;
        result += &term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Which compact connected group the cocycle maps into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupKind {
    /// Trivial action on `R^dim`; the fiber never moves.
    Trivial { dim: usize },
    So2,
    So3,
    /// SO(dim) for dim >= 4.
    SOd { dim: usize },
    /// `blocks` independent planar rotations embedded block-diagonally
    /// in SO(2 * blocks).
    Torus { blocks: usize },
}

impl GroupKind {
    pub fn dim(&self) -> usize {
        match self {
            GroupKind::Trivial { dim } => *dim,
            GroupKind::So2 => 2,
            GroupKind::So3 => 3,
            GroupKind::SOd { dim } => *dim,
            GroupKind::Torus { blocks } => 2 * blocks,
        }
    }
}

/// Parametric Hoelder cocycle `h(x) = exp(S0 + x^eta S1)`.
#[derive(Debug, Clone)]
pub struct CocycleSpec {
    kind: GroupKind,
    s0: DMatrix<f64>,
    s1: DMatrix<f64>,
    eta: f64,
}

impl CocycleSpec {
    pub fn new(kind: GroupKind, s0: DMatrix<f64>, s1: DMatrix<f64>, eta: f64) -> Result<Self> {
        let d = kind.dim();
        if s0.nrows() != d || s0.ncols() != d || s1.nrows() != d || s1.ncols() != d {
            return Err(Error::domain(format!(
                "generators must be {d} x {d} for {kind:?}"
            )));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::domain(format!(
                "Hoelder exponent must lie in (0, 1], got {eta}"
            )));
        }
        Ok(CocycleSpec {
            kind,
            s0: antisymmetrize(&s0),
            s1: antisymmetrize(&s1),
            eta,
        })
    }

    /// Constant-identity cocycle into the trivial group on `R^dim`.
    pub fn trivial(dim: usize) -> Self {
        CocycleSpec {
            kind: GroupKind::Trivial { dim },
            s0: DMatrix::zeros(dim, dim),
            s1: DMatrix::zeros(dim, dim),
            eta: 1.0,
        }
    }

    /// Planar rotations `h(x) = R(omega0 + x^eta omega1)`.
    pub fn so2(omega0: f64, omega1: f64, eta: f64) -> Result<Self> {
        let gen = |w: f64| DMatrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
        Self::new(GroupKind::So2, gen(omega0), gen(omega1), eta)
    }

    /// Rotations in SO(3) from rotation vectors (axis times angle) for the
    /// base and the modulation generator.
    pub fn so3(w0: [f64; 3], w1: [f64; 3], eta: f64) -> Result<Self> {
        let skew = |w: [f64; 3]| {
            DMatrix::from_row_slice(3, 3, &[0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0])
        };
        Self::new(GroupKind::So3, skew(w0), skew(w1), eta)
    }

    /// Torus cocycle: independent planar blocks with the given base and
    /// modulation angles.
    pub fn torus(angles0: &[f64], angles1: &[f64], eta: f64) -> Result<Self> {
        if angles0.len() != angles1.len() || angles0.is_empty() {
            return Err(Error::domain("torus needs equal, nonempty angle lists"));
        }
        let k = angles0.len();
        let block_diag = |angles: &[f64]| {
            let mut s = DMatrix::zeros(2 * k, 2 * k);
            for (b, &w) in angles.iter().enumerate() {
                s[(2 * b, 2 * b + 1)] = -w;
                s[(2 * b + 1, 2 * b)] = w;
            }
            s
        };
        Self::new(
            GroupKind::Torus { blocks: k },
            block_diag(angles0),
            block_diag(angles1),
            eta,
        )
    }

    /// Random skew generators in SO(dim), scaled to the given generator norms.
    pub fn sod_random<R: Rng>(
        dim: usize,
        scale0: f64,
        scale1: f64,
        eta: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::domain("SO(d) needs dim >= 2"));
        }
        let mut rand_skew = |scale: f64| {
            let mut s = DMatrix::zeros(dim, dim);
            for i in 0..dim {
                for j in (i + 1)..dim {
                    let v: f64 = rng.sample(StandardNormal);
                    s[(i, j)] = scale * v;
                    s[(j, i)] = -scale * v;
                }
            }
            s
        };
        let s0 = rand_skew(scale0);
        let s1 = rand_skew(scale1);
        Self::new(GroupKind::SOd { dim }, s0, s1, eta)
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn holder_exponent(&self) -> f64 {
        self.eta
    }

    pub fn base_generator(&self) -> &DMatrix<f64> {
        &self.s0
    }

    pub fn modulation_generator(&self) -> &DMatrix<f64> {
        &self.s1
    }

    /// `h(x) = exp(S0 + x^eta S1)` for `x in [0, 1]`.
    pub fn evaluate(&self, x: f64) -> Result<GroupElement> {
        if !x.is_finite() || !(0.0..=1.0).contains(&x) {
            return Err(Error::domain(format!("cocycle argument {x} outside [0,1]")));
        }
        Ok(self.evaluate_unchecked(x))
    }

    pub(crate) fn evaluate_unchecked(&self, x: f64) -> GroupElement {
        if matches!(self.kind, GroupKind::Trivial { .. }) {
            return GroupElement::identity(self.dim());
        }
        let s = &self.s0 + self.modulation(x) * &self.s1;
        matrix_exp_skew(&s)
    }

    #[inline(always)]
    pub(crate) fn modulation(&self, x: f64) -> f64 {
        if self.eta == 1.0 {
            x
        } else {
            x.powf(self.eta)
        }
    }

    /// `h(0) = exp(S0)`, the value at the neutral fixed point.
    pub fn at_zero(&self) -> GroupElement {
        self.evaluate_unchecked(0.0)
    }

    /// Ordered orbit product `h_j(y) = h(y) h(f y) ... h(f^{j-1} y)`;
    /// `j = 0` gives the identity.
    pub fn orbit_product(&self, map: &LsvMap, y: f64, j: usize) -> Result<GroupElement> {
        if !y.is_finite() || !(0.0..=1.0).contains(&y) {
            return Err(Error::domain(format!("orbit start {y} outside [0,1]")));
        }
        let mut product = GroupElement::identity(self.dim());
        let mut x = y;
        for _ in 0..j {
            product = product.compose(&self.evaluate_unchecked(x));
            x = map.step(x);
        }
        Ok(product)
    }
}

/// Which side of the orthogonal splitting `R^d = Fix h(0) + (Fix h(0))^perp`
/// an observable value is projected onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DichotomyMode {
    /// Project onto the orthogonal complement: sets up suppression of
    /// superdiffusion.
    Perp,
    /// Project onto the fixed space: sets up the conjectured stable regime.
    Fix,
    /// Leave the vector untouched.
    Raw,
}

/// Orthonormal bases of `Fix g` and its orthogonal complement.
#[derive(Debug, Clone)]
pub struct FixSpace {
    pub fix_basis: Vec<DVector<f64>>,
    pub perp_basis: Vec<DVector<f64>>,
    pub rank: usize,
}

impl FixSpace {
    pub fn dim(&self) -> usize {
        self.fix_basis.len() + self.perp_basis.len()
    }

    /// Orthogonal projection of `v` per the dichotomy mode. The flag reports
    /// a numerically negligible projection (norm below `1e-10 |v|`).
    pub fn project(&self, v: &DVector<f64>, mode: DichotomyMode) -> (DVector<f64>, bool) {
        let projected = match mode {
            DichotomyMode::Raw => v.clone(),
            DichotomyMode::Fix => {
                let mut p = DVector::zeros(v.len());
                for b in &self.fix_basis {
                    p += b * b.dot(v);
                }
                p
            }
            DichotomyMode::Perp => {
                let mut p = v.clone();
                for b in &self.fix_basis {
                    p -= b * b.dot(v);
                }
                p
            }
        };
        let negligible = projected.norm() < 1e-10 * v.norm();
        (projected, negligible)
    }
}

/// Numerical `Fix g`: the span of right singular vectors of `g - I` with
/// singular value below `threshold`. Errors when any singular value falls
/// within a factor 10 of the threshold (the rank would be ambiguous).
pub fn fix_space(g: &GroupElement, threshold: f64) -> Result<FixSpace> {
    let d = g.dim();
    let a = g.matrix() - DMatrix::<f64>::identity(d, d);
    let svd = nalgebra::SVD::new(a, false, true);
    let v_t = svd.v_t.expect("svd of finite matrix");
    let mut fix_basis = Vec::new();
    let mut perp_basis = Vec::new();
    for (i, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma > threshold / 10.0 && sigma < threshold * 10.0 {
            return Err(Error::AmbiguousRank { sigma, threshold });
        }
        let row = v_t.row(i).transpose();
        if sigma < threshold {
            fix_basis.push(row);
        } else {
            perp_basis.push(row);
        }
    }
    let rank = fix_basis.len();
    Ok(FixSpace {
        fix_basis,
        perp_basis,
        rank,
    })
}

/// `max_{0 <= l <= len} | sum_{j=0}^{l} g0^j v0 |`, by brute-force partial
/// sums with compensated accumulation.
pub fn rotated_sum_sup(g0: &GroupElement, v0: &DVector<f64>, len: usize) -> f64 {
    let d = v0.len();
    let mut w: Vec<f64> = v0.iter().copied().collect();
    let mut acc = KahanVec::zeros(d);
    let mut sup = 0.0f64;
    let mut scratch = vec![0.0; d];
    for step in 0..=len {
        acc.add(&w);
        let norm: f64 = acc.value().iter().map(|s| s * s).sum::<f64>().sqrt();
        sup = sup.max(norm);
        if step == len {
            break;
        }
        // w <- g0 w
        let m = g0.matrix();
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += m[(i, j)] * w[j];
            }
            scratch[i] = s;
        }
        std::mem::swap(&mut w, &mut scratch);
    }
    sup
}

/// Haar sample on SO(d): orthogonalise a standard-normal matrix, fix the
/// signs so the triangular factor has positive diagonal, and flip the last
/// column when the determinant is -1.
pub fn haar_sample<R: Rng>(d: usize, rng: &mut R) -> GroupElement {
    assert!(d >= 1);
    let data: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
    let a = DMatrix::from_vec(d, d, data);
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    if q.determinant() < 0.0 {
        let last = d - 1;
        for i in 0..d {
            q[(i, last)] = -q[(i, last)];
        }
    }
    GroupElement { m: q }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_distance, ks_two_sample};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_entry(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }

    /// Plain long Taylor series, the independent oracle for the fast paths.
    fn series_oracle(s: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let d = s.nrows();
        let mut result = DMatrix::identity(d, d);
        let mut term = DMatrix::identity(d, d);
        for k in 1..=terms {
            term = (&term * s) / k as f64;
            result += &term;
        }
        result
    }

    #[test]
    fn exp_quarter_turn() {
        let s = DMatrix::from_row_slice(2, 2, &[0.0, -std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2, 0.0]);
        let g = matrix_exp_skew(&s);
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(max_entry(&(g.matrix() - expected)) < 1e-15);
        let zero = DMatrix::zeros(4, 4);
        assert_eq!(
            matrix_exp_skew(&zero).matrix(),
            &DMatrix::<f64>::identity(4, 4)
        );
    }

    #[test]
    fn exp_matches_series_oracle_d5() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let mut s = DMatrix::zeros(5, 5);
            for i in 0..5 {
                for j in (i + 1)..5 {
                    let v: f64 = rng.gen_range(-0.2..0.2);
                    s[(i, j)] = v;
                    s[(j, i)] = -v;
                }
            }
            let g = matrix_exp_skew(&s);
            let oracle = series_oracle(&s, 30);
            assert!(max_entry(&(g.matrix() - oracle)) < 1e-12);
        }
    }

    #[test]
    fn rodrigues_matches_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let w = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let s = DMatrix::from_row_slice(
                3,
                3,
                &[0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0],
            );
            let g = matrix_exp_skew(&s);
            let oracle = series_oracle(&s, 40);
            assert!(max_entry(&(g.matrix() - oracle)) < 1e-12);
        }
    }

    #[test]
    fn cocycle_values_are_group_elements() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let spec = CocycleSpec::sod_random(4, 0.8, 0.5, 0.7, &mut rng).unwrap();
        for x in [0.0, 0.3, 0.7, 1.0] {
            let g = spec.evaluate(x).unwrap();
            // Re-validate through the checked constructor.
            GroupElement::try_new(g.matrix().clone()).unwrap();
        }
    }

    #[test]
    fn constant_so2_cocycle_is_fixed_rotation() {
        let omega = 1.1;
        let spec = CocycleSpec::so2(omega, 0.0, 1.0).unwrap();
        for x in [0.0, 0.5, 1.0] {
            let g = spec.evaluate(x).unwrap();
            assert_relative_eq!(g.matrix()[(0, 0)], omega.cos(), epsilon = 1e-15);
            assert_relative_eq!(g.matrix()[(1, 0)], omega.sin(), epsilon = 1e-15);
        }
    }

    #[test]
    fn so3_modulation_vanishes_at_zero() {
        let spec = CocycleSpec::so3(
            [0.0, 0.0, std::f64::consts::FRAC_PI_3],
            [0.1, 0.0, 0.0],
            1.0,
        )
        .unwrap();
        let g0 = spec.at_zero();
        let pure = matrix_exp_skew(&DMatrix::from_row_slice(
            3,
            3,
            &[
                0.0,
                -std::f64::consts::FRAC_PI_3,
                0.0,
                std::f64::consts::FRAC_PI_3,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
            ],
        ));
        assert!(g0.max_entry_distance(&pure) < 1e-14);
    }

    #[test]
    fn orbit_product_is_a_cocycle() {
        // h_{j+k}(y) = h_j(y) h_k(f^j y) to 1e-10 per entry.
        let map = LsvMap::new(0.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let spec = CocycleSpec::so3([0.3, -0.2, 1.2], [0.4, 0.1, -0.3], 0.8).unwrap();
        for _ in 0..30 {
            let y: f64 = rng.gen();
            let j = rng.gen_range(0..=20usize);
            let k = rng.gen_range(0..=20usize);
            let lhs = spec.orbit_product(&map, y, j + k).unwrap();
            let mut fj = y;
            for _ in 0..j {
                fj = map.step(fj);
            }
            let rhs = spec
                .orbit_product(&map, y, j)
                .unwrap()
                .compose(&spec.orbit_product(&map, fj, k).unwrap());
            assert!(lhs.max_entry_distance(&rhs) < 1e-10);
        }
    }

    #[test]
    fn orbit_product_term_by_term() {
        let map = LsvMap::new(0.5).unwrap();
        let spec = CocycleSpec::so2(0.9, 0.7, 0.6).unwrap();
        let y = 0.37;
        let direct = spec.orbit_product(&map, y, 3).unwrap();
        let f1 = map.step(y);
        let f2 = map.step(f1);
        let by_hand = spec
            .evaluate(y)
            .unwrap()
            .compose(&spec.evaluate(f1).unwrap())
            .compose(&spec.evaluate(f2).unwrap());
        assert!(direct.max_entry_distance(&by_hand) < 1e-14);
        // j = 0 gives the identity, constant cocycle gives powers.
        let id = spec.orbit_product(&map, y, 0).unwrap();
        assert_eq!(id.matrix(), &DMatrix::<f64>::identity(2, 2));
        let constant = CocycleSpec::so2(0.4, 0.0, 1.0).unwrap();
        let h5 = constant.orbit_product(&map, y, 5).unwrap();
        let h0 = constant.at_zero();
        let pow5 = h0.compose(&h0).compose(&h0).compose(&h0).compose(&h0);
        assert!(h5.max_entry_distance(&pow5) < 1e-13);
    }

    #[test]
    fn holder_modulus_of_the_family() {
        // |h(x) - h(x')|_max <= 2 |S1| |x - x'|^eta with 10% slack.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let spec = CocycleSpec::so3([0.5, 0.0, 1.1], [0.7, -0.4, 0.2], 0.6).unwrap();
        let s1_norm = spec
            .modulation_generator()
            .clone()
            .svd(false, false)
            .singular_values[0];
        let c_h = 2.0 * s1_norm;
        for _ in 0..1000 {
            let x: f64 = rng.gen();
            let xp: f64 = rng.gen();
            let hx = spec.evaluate(x).unwrap();
            let hxp = spec.evaluate(xp).unwrap();
            let osc = hx.max_entry_distance(&hxp);
            let bound = 1.1 * c_h * (x - xp).abs().powf(0.6);
            assert!(osc <= bound, "osc {osc} > bound {bound}");
        }
    }

    #[test]
    fn fix_space_of_rotations() {
        // Quarter turn in SO(2): nothing is fixed.
        let r = matrix_exp_skew(&DMatrix::from_row_slice(
            2,
            2,
            &[0.0, -std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2, 0.0],
        ));
        let fs = fix_space(&r, FIX_THRESHOLD).unwrap();
        assert_eq!(fs.rank, 0);
        assert_eq!(fs.perp_basis.len(), 2);

        // Rotation about the z axis in SO(3) fixes exactly the axis.
        let spec = CocycleSpec::so3([0.0, 0.0, std::f64::consts::FRAC_PI_3], [0.0; 3], 1.0).unwrap();
        let fs = fix_space(&spec.at_zero(), FIX_THRESHOLD).unwrap();
        assert_eq!(fs.rank, 1);
        let axis = &fs.fix_basis[0];
        assert_relative_eq!(axis[2].abs(), 1.0, epsilon = 1e-10);
        let h0 = spec.at_zero();
        assert!((h0.apply(axis) - axis).norm() <= 1e-8);

        // The identity fixes everything.
        let fs = fix_space(&GroupElement::identity(4), FIX_THRESHOLD).unwrap();
        assert_eq!(fs.rank, 4);
    }

    #[test]
    fn fix_rank_matches_generator_rank() {
        // One planar generator in d = 3 leaves a single fixed direction.
        let spec = CocycleSpec::so3([0.0, 0.0, 0.9], [0.0; 3], 1.0).unwrap();
        let fs = fix_space(&spec.at_zero(), FIX_THRESHOLD).unwrap();
        assert_eq!(fs.rank, 3 - 2);
    }

    #[test]
    fn projections_split_orthogonally() {
        let spec = CocycleSpec::so3([0.0, 0.0, 1.0], [0.0; 3], 1.0).unwrap();
        let fs = fix_space(&spec.at_zero(), FIX_THRESHOLD).unwrap();
        let v = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let (perp, _) = fs.project(&v, DichotomyMode::Perp);
        let (fix, _) = fs.project(&v, DichotomyMode::Fix);
        assert_relative_eq!(perp[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(perp[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(perp[2], 0.0, epsilon = 1e-12);
        assert_relative_eq!(fix[2], 1.0, epsilon = 1e-12);
        assert!((perp + fix - v).norm() < 1e-12);
    }

    #[test]
    fn zero_projection_is_flagged() {
        let r = CocycleSpec::so2(2.4, 0.0, 1.0).unwrap();
        let fs = fix_space(&r.at_zero(), FIX_THRESHOLD).unwrap();
        let v = DVector::from_vec(vec![1.0, 0.5]);
        let (fixed, negligible) = fs.project(&v, DichotomyMode::Fix);
        assert!(negligible);
        assert!(fixed.norm() < 1e-10);
    }

    #[test]
    fn rotated_sums_quarter_turn_and_identity() {
        let quarter = matrix_exp_skew(&DMatrix::from_row_slice(
            2,
            2,
            &[0.0, -std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2, 0.0],
        ));
        let v0 = DVector::from_vec(vec![1.0, 0.0]);
        // Partial sums cycle (1,0), (1,1), (0,1), (0,0): sup is sqrt(2).
        let sup = rotated_sum_sup(&quarter, &v0, 100);
        assert_relative_eq!(sup, 2f64.sqrt(), epsilon = 1e-12);
        // v0 in Fix(identity): linear growth, 101 terms at l = 100.
        let sup = rotated_sum_sup(&GroupElement::identity(2), &v0, 100);
        assert_relative_eq!(sup, 101.0, epsilon = 1e-12);
    }

    #[test]
    fn rotated_sums_geometric_bound() {
        // sup_l |sum g^j v0| <= 2 |v0| / |e^{i omega} - 1| for every l.
        for omega in [0.3, 1.0, 2.399963229728653] {
            let g = matrix_exp_skew(&DMatrix::from_row_slice(2, 2, &[0.0, -omega, omega, 0.0]));
            let v0 = DVector::from_vec(vec![1.0, 0.0]);
            let sup = rotated_sum_sup(&g, &v0, 10_000);
            let bound = 2.0 / (2.0 * (omega / 2.0).sin()).abs();
            assert!(sup <= bound, "omega {omega}: sup {sup} > bound {bound}");
        }
    }

    #[test]
    fn haar_samples_are_valid_and_uniform_in_so2() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        // Orthogonality invariant for several dimensions.
        for d in [2usize, 3, 5] {
            for _ in 0..20 {
                let g = haar_sample(d, &mut rng);
                GroupElement::try_new(g.matrix().clone()).unwrap();
            }
        }
        // In SO(2) the rotation angle must be uniform on [0, 2 pi).
        let mut angles: Vec<f64> = (0..100_000)
            .map(|_| {
                let g = haar_sample(2, &mut rng);
                g.matrix()[(1, 0)].atan2(g.matrix()[(0, 0)]).rem_euclid(2.0 * std::f64::consts::PI)
            })
            .collect();
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ks = ks_distance(&angles, |t| t / (2.0 * std::f64::consts::PI));
        assert!(ks < 0.01, "KS vs uniform = {ks}");
    }

    #[test]
    fn haar_left_invariance() {
        // The distribution of g * sample matches the sample distribution:
        // two-sample KS on a fixed matrix entry, 1e5 draws each.
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let fixed = haar_sample(3, &mut rng);
        let a: Vec<f64> = (0..100_000)
            .map(|_| haar_sample(3, &mut rng).matrix()[(0, 0)])
            .collect();
        let b: Vec<f64> = (0..100_000)
            .map(|_| fixed.compose(&haar_sample(3, &mut rng)).matrix()[(0, 0)])
            .collect();
        let ks = ks_two_sample(&a, &b).unwrap();
        assert!(ks < 0.02, "two-sample KS = {ks}");
    }
}
