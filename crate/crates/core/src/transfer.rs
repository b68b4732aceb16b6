//! Ulam discretisation of the transfer operator of the induced map
//! `F = f^r : Y -> Y` and of its twisted counterpart
//! `(M_H V)(y) = sum_branches q(y_a) H(y_a)^{-1} V(y_a)`.
//!
//! Only the induced map is discretised, never `f` itself: `F` is uniformly
//! expanding with full branches (Gibbs-Markov), so its operator has a
//! spectral gap, while the operator of `f` would lose the gap as soon as
//! `gamma >= 1/2`.
//!
//! The discretisation runs in two stages over the exact branch geometry
//! (inverse-branch preimages of the bin edges, intersected with the bins):
//!
//! 1. a column-stochastic Lebesgue mass-transfer matrix whose fixed vector
//!    estimates the invariant masses `mu_Y(B_i)`;
//! 2. the `mu_Y`-normalised operator, each cell weighted by the quadrature
//!    average of `H^{-1}` over its piece (4-point Gauss per piece).
//!    Untwisted rows sum to one; twisted cells are mass times an average
//!    of orthogonal matrices, so the operator contracts the block sup norm.
//!
//! Branches beyond `n_max` are truncated and the missing mass is
//! redistributed proportionally within each source bin; the truncated mass
//! is recorded.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{LsvMap, OrbitSampler};
use crate::ensemble::{trajectory_rng, ObservableSpec};
use crate::error::{Error, Result};
use crate::groups::CocycleSpec;
use crate::inducing::ReturnPartition;

/// 4-point Gauss-Legendre nodes and weights on [-1, 1].
const GAUSS_NODES: [f64; 4] = [
    -0.8611363115940526,
    -0.3399810435848563,
    0.3399810435848563,
    0.8611363115940526,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.34785484513745385,
    0.6521451548625461,
    0.6521451548625461,
    0.34785484513745385,
];

/// One cell of the branch geometry: the source subinterval of cylinder
/// `branch` inside source bin `src` whose image under `f^branch` is target
/// bin `tgt`.
#[derive(Debug, Clone, Copy)]
pub struct Piece {
    pub y_lo: f64,
    pub y_hi: f64,
    pub branch: u32,
    pub src: u32,
    pub tgt: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruncationInfo {
    /// Largest per-bin mass fraction lost to branches beyond `n_max`
    /// (before redistribution).
    pub max_bin_deficit: f64,
    /// Total Lebesgue length of `Y` not covered by the tabulated branches.
    pub uncovered_length: f64,
}

pub struct UlamOperator {
    pub m: usize,
    pub d_rep: usize,
    pub n_max: u64,
    /// `(m d_rep) x (m d_rep)` operator matrix acting on bin vectors.
    pub entries: DMatrix<f64>,
    /// Invariant bin masses from the Lebesgue mass-transfer stage.
    pub mu_hat: Vec<f64>,
    /// Invariant density per bin (mass over bin width).
    pub rho_hat: Vec<f64>,
    pub truncation: TruncationInfo,
    pub map: LsvMap,
    pub cocycle: Option<CocycleSpec>,
    pieces: Vec<Piece>,
    bin_width: f64,
}

impl UlamOperator {
    pub fn dim(&self) -> usize {
        self.m * self.d_rep
    }

    pub fn bin_of(&self, y: f64) -> usize {
        (((y - 0.5) / self.bin_width) as usize).min(self.m - 1)
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=self.m)
            .map(|i| 0.5 + i as f64 * self.bin_width)
            .collect()
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// `T v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.entries * v
    }

    /// Sup over bins of the Euclidean block norm; the norm the twisted
    /// operator contracts.
    pub fn block_sup_norm(&self, v: &DVector<f64>) -> f64 {
        let d = self.d_rep;
        (0..self.m)
            .map(|i| {
                (0..d)
                    .map(|c| v[i * d + c] * v[i * d + c])
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Walk the quadrature nodes of every piece, calling back with the piece,
/// the node and weight, the induced cocycle value `H_n(y)` and (when an
/// observable is supplied) the induced observable `V(y)` accumulated along
/// the excursion.
fn sweep_nodes<F>(op: &UlamOperator, observable: Option<&ObservableSpec>, mut visit: F)
where
    F: FnMut(&Piece, f64, f64, &DMatrix<f64>, &[f64]),
{
    let d = op.d_rep;
    let map = &op.map;
    let identity = DMatrix::<f64>::identity(d, d);
    let mut vbuf = vec![0.0; d];
    let mut term = vec![0.0; d];
    for piece in &op.pieces {
        let half = 0.5 * (piece.y_hi - piece.y_lo);
        let mid = 0.5 * (piece.y_hi + piece.y_lo);
        for q in 0..4 {
            let y = mid + half * GAUSS_NODES[q];
            let w = half * GAUSS_WEIGHTS[q];
            let mut h = identity.clone();
            let mut vsum = vec![0.0; d];
            let mut x = y;
            for step in 0..piece.branch {
                if let Some(obs) = observable {
                    obs.eval(x, &mut vbuf);
                    for i in 0..d {
                        let mut s = 0.0;
                        for j in 0..d {
                            s += h[(i, j)] * vbuf[j];
                        }
                        term[i] = s;
                    }
                    for i in 0..d {
                        vsum[i] += term[i];
                    }
                }
                if let Some(coc) = &op.cocycle {
                    let hx = coc.evaluate_unchecked(x);
                    h = &h * hx.matrix();
                }
                // Follow the branch chain: one right-branch step off Y,
                // then left-branch steps (kept on the chain even if a
                // boundary node rounds across a cylinder edge).
                x = if step == 0 { map.step(x) } else { map.left(x) };
            }
            visit(piece, y, w, &h, &vsum);
        }
    }
}

/// Build the Ulam operator at resolution `m` over branches `1..=n_max`.
/// `cocycle: None` gives the plain transfer operator (`d_rep = 1`);
/// `Some(h)` the twisted operator with `d x d` blocks.
pub fn build_ulam(
    map: &LsvMap,
    partition: &ReturnPartition,
    cocycle: Option<&CocycleSpec>,
    m: usize,
    n_max: u64,
) -> Result<UlamOperator> {
    if m < 2 {
        return Err(Error::config("need at least two bins"));
    }
    if partition.n_max() < n_max {
        return Err(Error::config(format!(
            "partition depth {} < requested n_max {n_max}",
            partition.n_max()
        )));
    }
    let bin_width = 0.5 / m as f64;
    let deepest = partition.cylinders[n_max as usize - 1].left - 0.5;
    if deepest > bin_width {
        return Err(Error::config(format!(
            "n_max = {n_max} leaves an uncovered region of length {deepest:.2e} \
             wider than one bin ({bin_width:.2e}); increase n_max"
        )));
    }
    let d_rep = cocycle.map_or(1, |c| c.dim());

    // Branch preimages of the target-bin edges. On the left-branch chain
    // the preimages of branch n are g^{-1} of those of branch n-1, with the
    // branch-1 preimage of a target t being (1 + t) / 2.
    let edges: Vec<f64> = (0..=m).map(|i| 0.5 + i as f64 * bin_width).collect();
    let mut pre: Vec<f64> = edges.clone();
    let mut pieces: Vec<Piece> = Vec::new();
    for n in 1..=n_max {
        if n > 1 {
            for p in pre.iter_mut() {
                *p = map.left_branch_inverse(*p)?;
            }
        }
        for t in 0..m {
            let y_lo = 0.5 + 0.5 * pre[t];
            let y_hi = 0.5 + 0.5 * pre[t + 1];
            if y_hi <= y_lo {
                continue;
            }
            // Split at source-bin boundaries.
            let mut lo = y_lo;
            let src_last = (((y_hi - 0.5) / bin_width) as usize).min(m - 1);
            let mut src = (((y_lo - 0.5) / bin_width) as usize).min(m - 1);
            while src < src_last {
                let boundary = 0.5 + (src + 1) as f64 * bin_width;
                if boundary > lo {
                    pieces.push(Piece {
                        y_lo: lo,
                        y_hi: boundary,
                        branch: n as u32,
                        src: src as u32,
                        tgt: t as u32,
                    });
                    lo = boundary;
                }
                src += 1;
            }
            if y_hi > lo {
                pieces.push(Piece {
                    y_lo: lo,
                    y_hi,
                    branch: n as u32,
                    src: src as u32,
                    tgt: t as u32,
                });
            }
        }
    }

    // Stage 1: column-stochastic Lebesgue mass transfer.
    let mut mass = DMatrix::<f64>::zeros(m, m);
    for p in &pieces {
        mass[(p.tgt as usize, p.src as usize)] += p.y_hi - p.y_lo;
    }
    let mut max_bin_deficit = 0.0f64;
    let mut uncovered = 0.0f64;
    for j in 0..m {
        let col_sum: f64 = (0..m).map(|i| mass[(i, j)]).sum();
        if col_sum <= 0.0 {
            return Err(Error::Degenerate(format!(
                "source bin {j} received no branch mass"
            )));
        }
        max_bin_deficit = max_bin_deficit.max(1.0 - col_sum / bin_width);
        uncovered += bin_width - col_sum;
        // Redistribute the truncated branch mass proportionally.
        for i in 0..m {
            mass[(i, j)] /= col_sum;
        }
    }

    // Invariant masses by power iteration on the column-stochastic matrix.
    let mut mu = DVector::from_element(m, 1.0 / m as f64);
    let mut converged = false;
    for _ in 0..20_000 {
        let next = &mass * &mu;
        let diff: f64 = (&next - &mu).abs().sum();
        mu = next;
        let norm: f64 = mu.sum();
        mu /= norm;
        if diff < 1e-14 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(
            "invariant-mass power iteration".into(),
        ));
    }
    let mu_hat: Vec<f64> = mu.iter().copied().collect();
    let rho_hat: Vec<f64> = mu_hat.iter().map(|&w| w / bin_width).collect();

    let mut op = UlamOperator {
        m,
        d_rep,
        n_max,
        entries: DMatrix::zeros(m * d_rep, m * d_rep),
        mu_hat,
        rho_hat,
        truncation: TruncationInfo {
            max_bin_deficit,
            uncovered_length: uncovered,
        },
        map: *map,
        cocycle: cocycle.cloned(),
        pieces,
        bin_width,
    };

    // Stage 2: mu_Y-normalised (twisted) operator. Cell (i, j) carries the
    // stochastic mass mu_j A_ij / mu_i times the quadrature average of
    // H^{-1} over its pieces, so untwisted rows sum to one exactly and
    // twisted cells stay sub-stochastic in operator norm.
    let d = d_rep;
    let mut rot = vec![0.0f64; if cocycle.is_some() { m * m * d * d } else { 0 }];
    let mut wsum = DMatrix::<f64>::zeros(m, m);
    if cocycle.is_some() {
        sweep_nodes(&op, None, |piece, _y, w, h, _v| {
            let (i, j) = (piece.tgt as usize, piece.src as usize);
            wsum[(i, j)] += w;
            let base = (i * m + j) * d * d;
            // H^{-1} = H^T for orthogonal H.
            for a in 0..d {
                for b in 0..d {
                    rot[base + a * d + b] += w * h[(b, a)];
                }
            }
        });
    }
    let mut touched = vec![false; m * m];
    for p in &op.pieces {
        touched[p.tgt as usize * m + p.src as usize] = true;
    }
    let mut entries = DMatrix::<f64>::zeros(m * d, m * d);
    for i in 0..m {
        for j in 0..m {
            if !touched[i * m + j] {
                continue;
            }
            let weight = op.mu_hat[j] / op.mu_hat[i] * mass[(i, j)];
            if cocycle.is_some() {
                let base = (i * m + j) * d * d;
                let total = wsum[(i, j)];
                for a in 0..d {
                    for b in 0..d {
                        entries[(i * d + a, j * d + b)] = weight * rot[base + a * d + b] / total;
                    }
                }
            } else {
                entries[(i, j)] = weight;
            }
        }
    }
    op.entries = entries;
    Ok(op)
}

// ---------------------------------------------------------------------------
// Spectrum
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Leading eigenvalues sorted by magnitude, as (real, imag) pairs.
    pub eigenvalues: Vec<(f64, f64)>,
    /// Spectral radius estimate.
    pub radius: f64,
    /// `1 - radius`: the twisted operator's margin to the unit circle.
    pub delta: f64,
    /// `1 - |lambda_2|`, the mixing gap below the leading cluster.
    pub gap: f64,
    /// Invariant density per bin (from the mass-transfer stage).
    pub density: Vec<f64>,
    /// Phases of eigenvalues with magnitude >= 0.99; at finite resolution
    /// these are the observable shadows of unit-circle eigenvalues.
    pub near_unit_phases: Vec<f64>,
    pub truncation_mass: f64,
    pub m: usize,
}

/// Arnoldi with full reorthogonalisation; Ritz values magnitude-sorted.
fn arnoldi_ritz_values(op: &UlamOperator, krylov: usize, seed: u64) -> Result<Vec<Complex<f64>>> {
    let n = op.dim();
    let k = krylov.min(n);
    let mut rng = trajectory_rng(seed, 777);
    let mut v0 = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
    let norm = v0.norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("zero Arnoldi start".into()));
    }
    v0 /= norm;
    let mut basis: Vec<DVector<f64>> = vec![v0];
    let mut h = DMatrix::<f64>::zeros(k + 1, k);
    let mut effective = k;
    for j in 0..k {
        let mut w = op.apply(&basis[j]);
        for (i, b) in basis.iter().enumerate() {
            let c = b.dot(&w);
            h[(i, j)] = c;
            w -= b * c;
        }
        // Second pass for orthogonality at working precision.
        for (i, b) in basis.iter().enumerate() {
            let c = b.dot(&w);
            h[(i, j)] += c;
            w -= b * c;
        }
        let beta = w.norm();
        h[(j + 1, j)] = beta;
        if beta < 1e-13 {
            effective = j + 1;
            break;
        }
        basis.push(w / beta);
    }
    let hk = h.view((0, 0), (effective, effective)).into_owned();
    let mut eigs: Vec<Complex<f64>> = hk.complex_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    Ok(eigs)
}

/// Norm-growth estimate of the spectral radius over a long power-iteration
/// window; the independent oracle for the Arnoldi path.
pub fn power_norm_radius(op: &UlamOperator, warmup: usize, window: usize, seed: u64) -> f64 {
    let n = op.dim();
    let mut rng = trajectory_rng(seed, 778);
    let mut v = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
    for _ in 0..warmup {
        v = op.apply(&v);
        let nv = v.norm();
        if nv > 0.0 {
            v /= nv;
        }
    }
    let mut log_growth = 0.0;
    for _ in 0..window {
        v = op.apply(&v);
        let nv = v.norm();
        log_growth += nv.ln();
        v /= nv;
    }
    (log_growth / window as f64).exp()
}

/// Top-`k` spectrum of the operator.
pub fn leading_spectrum(op: &UlamOperator, k: usize) -> Result<SpectralReport> {
    let krylov = (4 * k).clamp(24, op.dim().min(96));
    let eigs = arnoldi_ritz_values(op, krylov, 4242)?;
    let top: Vec<(f64, f64)> = eigs.iter().take(k).map(|e| (e.re, e.im)).collect();
    let radius = eigs.first().map(|e| e.norm()).unwrap_or(0.0);
    let second = eigs
        .iter()
        .map(|e| e.norm())
        .find(|&r| r < radius * (1.0 - 1e-9))
        .unwrap_or(radius);
    let near_unit_phases: Vec<f64> = eigs
        .iter()
        .filter(|e| e.norm() >= 0.99)
        .map(|e| e.im.atan2(e.re))
        .collect();
    Ok(SpectralReport {
        eigenvalues: top,
        radius,
        delta: 1.0 - radius,
        gap: 1.0 - second,
        density: op.rho_hat.clone(),
        near_unit_phases,
        truncation_mass: op.truncation.max_bin_deficit,
        m: op.m,
    })
}

// ---------------------------------------------------------------------------
// Induced observable discretisation
// ---------------------------------------------------------------------------

/// Bin averages of the induced observable `V(y) = sum_j h_j(y) v(f^j y)`
/// against the invariant density.
pub fn discretize_induced_observable(
    op: &UlamOperator,
    observable: &ObservableSpec,
) -> Result<DVector<f64>> {
    let d = op.d_rep;
    if observable.dim != d {
        return Err(Error::config(
            "observable dimension != representation dimension",
        ));
    }
    let m = op.m;
    let mut acc = vec![0.0f64; m * d];
    let mut wacc = vec![0.0f64; m];
    sweep_nodes(op, Some(observable), |piece, _y, w, _h, v| {
        let j = piece.src as usize;
        wacc[j] += w;
        for c in 0..d {
            acc[j * d + c] += w * v[c];
        }
    });
    let mut out = DVector::zeros(m * d);
    for j in 0..m {
        if wacc[j] > 0.0 {
            for c in 0..d {
                out[j * d + c] = acc[j * d + c] / wacc[j];
            }
        }
    }
    Ok(out)
}

/// Bin averages of the image `M_H V` with `V` evaluated at the quadrature
/// nodes (exact-integration Galerkin right-hand side).
///
/// This is not the same as applying the assembled matrix to the projected
/// `V`: the induced observable jumps at every cylinder boundary, so its
/// piecewise-constant projection carries an O(1) error into the bins whose
/// branch preimages hug the cylinder edges. Integrating the true `V` at
/// the nodes removes that error.
pub fn image_of_induced_observable(
    op: &UlamOperator,
    observable: &ObservableSpec,
) -> Result<DVector<f64>> {
    let d = op.d_rep;
    if observable.dim != d {
        return Err(Error::config(
            "observable dimension != representation dimension",
        ));
    }
    let m = op.m;
    let mut acc = vec![0.0f64; m * d];
    sweep_nodes(op, Some(observable), |piece, _y, w, h, v| {
        let (i, j) = (piece.tgt as usize, piece.src as usize);
        for a in 0..d {
            let mut s = 0.0;
            for b in 0..d {
                s += h[(b, a)] * v[b];
            }
            acc[i * d + a] += op.rho_hat[j] * w * s;
        }
    });
    let mut out = DVector::zeros(m * d);
    for i in 0..m {
        for a in 0..d {
            out[i * d + a] = acc[i * d + a] / op.mu_hat[i];
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Martingale-coboundary solve
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiMethod {
    /// Neumann series `chi = sum_{j>=1} M_H^j V`.
    Neumann,
    /// Dense LU solve of `(I - M_H) chi = M_H V` with one refinement step;
    /// used when the spectral radius sits too close to one for the series.
    DirectRefined,
}

#[derive(Debug, Clone)]
pub struct ChiSolution {
    pub chi: DVector<f64>,
    pub method: ChiMethod,
    pub iterations: usize,
    /// Representation components on which the operator acts trivially,
    /// deflated to mean zero before solving.
    pub deflated_components: Vec<usize>,
    /// `|(I - M_H) chi - M_H V|_max` of the linear system itself.
    pub linear_residual: f64,
}

/// Solve `(I - M_H) chi = M_H V` for the induced observable, with the
/// right-hand side integrated exactly at the quadrature nodes.
pub fn solve_chi(op: &UlamOperator, observable: &ObservableSpec) -> Result<ChiSolution> {
    let rhs = image_of_induced_observable(op, observable)?;
    solve_chi_system(op, rhs)
}

/// Solve `(I - M_H) chi = rhs` on the discretised operator.
///
/// Trivial subrepresentations (components whose constants are fixed by
/// `M_H`, eigenvalue 1) are deflated by projecting onto mean-zero data,
/// the discrete version of restricting to observables of mean zero. If 1
/// remains in the spectrum after deflation the solve is refused;
/// unit-modulus eigenvalues away from 1 fall through to the direct solver.
pub fn solve_chi_system(op: &UlamOperator, mut rhs: DVector<f64>) -> Result<ChiSolution> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::config("right-hand side has the wrong length"));
    }
    let d = op.d_rep;
    let m = op.m;

    // Trivial components: M_H (1 e_c) = 1 e_c.
    let mut deflated = Vec::new();
    for c in 0..d {
        let e = DVector::from_fn(n, |i, _| if i % d == c { 1.0 } else { 0.0 });
        let img = op.apply(&e);
        if (&img - &e).amax() < 1e-8 {
            deflated.push(c);
        }
    }
    let project = |w: &mut DVector<f64>| {
        for &c in &deflated {
            let mean: f64 = (0..m).map(|i| op.mu_hat[i] * w[i * d + c]).sum();
            for i in 0..m {
                w[i * d + c] -= mean;
            }
        }
    };
    project(&mut rhs);

    // Spectrum with the deflated eigenvalue-1 copies removed: up to
    // `deflated.len()` eigenvalues within 1e-6 of +1 are accounted for by
    // the trivial components.
    let eigs = arnoldi_ritz_values(op, 48.min(n), 4241)?;
    let radius = eigs.first().map(|e| e.norm()).unwrap_or(0.0);
    let mut trivial_budget = deflated.len();
    let mut non_trivial_radius = 0.0f64;
    let mut stray_unit_eigenvalue = false;
    for e in &eigs {
        if (e - Complex::new(1.0, 0.0)).norm() < 1e-6 {
            if trivial_budget > 0 {
                trivial_budget -= 1;
                continue;
            }
            stray_unit_eigenvalue = true;
        }
        non_trivial_radius = non_trivial_radius.max(e.norm());
    }

    if non_trivial_radius < 0.99 {
        // Neumann series on the deflated data.
        let mut chi = rhs.clone();
        let mut w = rhs.clone();
        let mut iterations = 1usize;
        loop {
            w = op.apply(&w);
            project(&mut w);
            chi += &w;
            iterations += 1;
            if w.amax() <= 1e-14 * chi.amax().max(1e-300) {
                break;
            }
            if iterations > 200_000 {
                return Err(Error::NoConvergence("Neumann series for chi".into()));
            }
        }
        let residual = (&chi - op.apply(&chi) - &rhs).amax();
        return Ok(ChiSolution {
            chi,
            method: ChiMethod::Neumann,
            iterations,
            deflated_components: deflated,
            linear_residual: residual,
        });
    }

    // Radius at or beyond 1: refuse when 1 itself stays in the spectrum
    // beyond the deflated copies, otherwise solve (I - M_H) directly.
    if stray_unit_eigenvalue {
        return Err(Error::UnitEigenvalue { rho: radius });
    }
    let mut system = DMatrix::<f64>::identity(n, n) - &op.entries;
    // Deflated directions span the kernel of (I - M_H); pin them with the
    // mu-weighted mean constraint.
    for &c in &deflated {
        for i in 0..m {
            for j in 0..m {
                system[(i * d + c, j * d + c)] += op.mu_hat[j];
            }
        }
    }
    let lu = system.clone().lu();
    let mut chi = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("singular (I - M_H) system".into()))?;
    let mut defect = &rhs - &system * &chi;
    if let Some(correction) = lu.solve(&defect) {
        chi += correction;
        defect = &rhs - &system * &chi;
    }
    Ok(ChiSolution {
        chi,
        method: ChiMethod::DirectRefined,
        iterations: 1,
        deflated_components: deflated,
        linear_residual: defect.amax(),
    })
}

/// Sup norm of `M_H V_hat` with `V_hat = V - H (chi o F) + chi`, evaluated
/// pointwise at test nodes:
///
/// ```text
/// (M_H V_hat)(t) = sum_n q_n(t) H_n(y_n)^{-1} V_hat(y_n),
/// q_n(t) = rho(y_n) / (rho(t) |F_n'(y_n)|),
/// ```
///
/// with `y_n` the branch-`n` preimage of `t` and the branch derivative by
/// the chain rule along the excursion. The martingale property
/// `M_H V_hat = 0` is exact in function space, so what remains is the
/// discretisation error of `chi` and of the density.
pub fn martingale_residual(
    op: &UlamOperator,
    observable: &ObservableSpec,
    chi: &DVector<f64>,
) -> Result<f64> {
    let d = op.d_rep;
    let m = op.m;
    if chi.len() != op.dim() {
        return Err(Error::config("chi has the wrong length"));
    }
    let map = &op.map;
    let gamma = map.gamma();
    // Left-branch derivative g'(x) = 1 + (1 + gamma) (2x)^gamma.
    let g_prime = |x: f64| 1.0 + (1.0 + gamma) * (2.0 * x).powf(gamma);

    // Test points: the Gauss nodes of every target bin.
    let mut points = Vec::with_capacity(4 * m);
    for i in 0..m {
        let lo = 0.5 + i as f64 * op.bin_width;
        let half = 0.5 * op.bin_width;
        let mid = lo + half;
        for q in 0..4 {
            points.push(mid + half * GAUSS_NODES[q]);
        }
    }
    let mut acc = vec![0.0f64; points.len() * d];
    let mut qsum = vec![0.0f64; points.len()];
    // Branch preimages on the left-branch chain, advanced branch by branch.
    let mut xs: Vec<f64> = points.clone();
    let mut vbuf = vec![0.0; d];
    let mut term = vec![0.0; d];
    for n in 1..=op.n_max {
        if n > 1 {
            for x in xs.iter_mut() {
                *x = map.left_branch_inverse(*x)?;
            }
        }
        for (p, (&t, &xn)) in points.iter().zip(&xs).enumerate() {
            let y = 0.5 + 0.5 * xn;
            // Forward walk: H_n(y), V(y) and |F_n'(y)| by the chain rule.
            let mut h = DMatrix::<f64>::identity(d, d);
            let mut vsum = vec![0.0; d];
            let mut deriv = 2.0f64;
            let mut x = y;
            for step in 0..n {
                observable.eval(x, &mut vbuf);
                for i in 0..d {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += h[(i, j)] * vbuf[j];
                    }
                    term[i] = s;
                }
                for i in 0..d {
                    vsum[i] += term[i];
                }
                if let Some(coc) = &op.cocycle {
                    let hx = coc.evaluate_unchecked(x);
                    h = &h * hx.matrix();
                }
                if step == 0 {
                    x = map.step(x);
                } else {
                    deriv *= g_prime(x);
                    x = map.left(x);
                }
            }
            let q_n = op.rho_hat[op.bin_of(y)] / (op.rho_hat[op.bin_of(t)] * deriv);
            qsum[p] += q_n;
            // V_hat(y) = V(y) + chi(bin(y)) - H(y) chi(bin(t)).
            let (src, tgt) = (op.bin_of(y), op.bin_of(t));
            for a in 0..d {
                let mut hx = 0.0;
                for b in 0..d {
                    hx += h[(a, b)] * chi[tgt * d + b];
                }
                let vhat_a = vsum[a] + chi[src * d + a] - hx;
                term[a] = vhat_a;
            }
            for a in 0..d {
                let mut s = 0.0;
                for b in 0..d {
                    s += h[(b, a)] * term[b];
                }
                acc[p * d + a] += q_n * s;
            }
        }
    }
    // Normalise by the realised branch-weight sum; this mirrors the
    // proportional redistribution of the truncated branch mass.
    let mut sup = 0.0f64;
    for p in 0..points.len() {
        let norm: f64 = (0..d)
            .map(|a| {
                let z = acc[p * d + a] / qsum[p];
                z * z
            })
            .sum::<f64>()
            .sqrt();
        sup = sup.max(norm);
    }
    Ok(sup)
}

// ---------------------------------------------------------------------------
// Green-Kubo
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GreenKubo {
    /// Covariance of the induced system.
    pub sigma_induced: DMatrix<f64>,
    /// Covariance of the full system, `sigma_induced / r_bar`.
    pub sigma_full: DMatrix<f64>,
    /// Frobenius norms of the correlation terms.
    pub term_norms: Vec<f64>,
    /// Geometric decay ratio fitted on the terms past the mixing scale.
    pub decay_ratio: f64,
    pub terms_used: usize,
}

/// `Sigma = Int V V^T dmu_Y + sum_{n>=1} [Int (M_H^n V) V^T dmu_Y + t.]`,
/// truncated once the terms fall below 1e-12 relative.
pub fn greenkubo_sigma(op: &UlamOperator, v: &DVector<f64>, r_bar: f64) -> Result<GreenKubo> {
    let d = op.d_rep;
    let m = op.m;
    if v.len() != op.dim() {
        return Err(Error::config("discretised V has the wrong length"));
    }
    if !(r_bar > 0.0) {
        return Err(Error::config("mean return time must be positive"));
    }
    let weighted_outer = |a: &DVector<f64>, b: &DVector<f64>| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(d, d);
        for i in 0..m {
            for x in 0..d {
                for y in 0..d {
                    out[(x, y)] += op.mu_hat[i] * a[i * d + x] * b[i * d + y];
                }
            }
        }
        out
    };
    let mut sigma = weighted_outer(v, v);
    let mut w = v.clone();
    let mut term_norms = Vec::new();
    let mut used = 0usize;
    loop {
        w = op.apply(&w);
        let b = weighted_outer(&w, v);
        let norm = b.norm();
        term_norms.push(norm);
        sigma += &b + b.transpose();
        used += 1;
        if norm < 1e-12 * sigma.norm().max(1e-300) {
            break;
        }
        if used >= 100_000 {
            return Err(Error::NoConvergence("Green-Kubo series".into()));
        }
    }
    let half = term_norms.len() / 2;
    let decay_ratio = if term_norms.len() >= 4 && term_norms[half] > 0.0 {
        let k = term_norms.len() - 1;
        (term_norms[k] / term_norms[half]).powf(1.0 / (k - half) as f64)
    } else {
        0.0
    };
    Ok(GreenKubo {
        sigma_full: &sigma / r_bar,
        sigma_induced: sigma,
        term_norms,
        decay_ratio,
        terms_used: used,
    })
}

// ---------------------------------------------------------------------------
// Duality check
// ---------------------------------------------------------------------------

/// Orbit-sampled quadrature of `Int <V, H (W o F)> dmu_Y`, the adjoint side
/// of `<M_H V, W> = <V, H (W o F)>`. Independent of the assembled matrix:
/// an ergodic average along an induced orbit with the cocycle product
/// accumulated step by step.
pub fn duality_orbit_quadrature(
    op: &UlamOperator,
    v: &DVector<f64>,
    w: &DVector<f64>,
    returns: usize,
    seed: u64,
) -> Result<f64> {
    let d = op.d_rep;
    let cocycle = op
        .cocycle
        .clone()
        .unwrap_or_else(|| CocycleSpec::trivial(1));
    let map = &op.map;
    let mut rng = trajectory_rng(seed, 31337);
    let mut sampler = OrbitSampler::new(map);
    let mut y = 0.5 + 0.5 * rng.gen::<f64>();
    for _ in 0..(returns / 10).max(100) {
        let (_, next) = sampler.return_step(y, &mut rng)?;
        y = next;
    }
    let mut acc = 0.0f64;
    for _ in 0..returns {
        // One excursion, accumulating H = h_r(y).
        let mut h = DMatrix::<f64>::identity(d, d);
        let mut x = y;
        let mut r = 0u64;
        loop {
            let hx = cocycle.evaluate_unchecked(x);
            h = &h * hx.matrix();
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
        let (by, bfy) = (op.bin_of(y), op.bin_of(x));
        let mut dot = 0.0;
        for a in 0..d {
            let mut hw = 0.0;
            for b in 0..d {
                hw += h[(a, b)] * w[bfy * d + b];
            }
            dot += v[by * d + a] * hw;
        }
        acc += dot;
        y = x;
    }
    Ok(acc / returns as f64)
}

/// Matrix side of the duality check: `<M_H V, W>` under the empirical
/// invariant masses.
pub fn duality_matrix_side(op: &UlamOperator, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let img = op.apply(v);
    let d = op.d_rep;
    (0..op.m)
        .map(|i| {
            let mut dot = 0.0;
            for a in 0..d {
                dot += img[i * d + a] * w[i * d + a];
            }
            op.mu_hat[i] * dot
        })
        .sum()
}

#[cfg(test)]
#[path = "transfer_tests.rs"]
mod tests;
