//! Parallel Monte Carlo over the group extension `(x, g) -> (f x, g h(x))`.
//!
//! Each trajectory accumulates the Birkhoff sum `phi_n = sum_j g_j v(x_j)`
//! of the equivariant observable `phi(x, g) = g v(x)` with compensated
//! summation, records snapshots on a geometric `n`-grid, and keeps the
//! running maxima needed for path statistics. Trajectories are independent
//! work items on counter-based RNG streams keyed by `(master seed,
//! trajectory index)`, so results are bit-identical under any rayon
//! schedule or worker count.
//!
//! Trajectories started on `Y = [1/2, 1]` can be run with first-return
//! instrumentation instead (`run_tower_checks`), which replays each
//! excursion through the induced observable and verifies the excursion
//! decomposition `phi_k = Phi_{N_k} + R_k` and the pathwise excursion bound
//! along the way.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accum::KahanVec;
use crate::dynamics::LsvMap;
use crate::error::{Error, Result};
use crate::groups::{haar_sample, rot3_array, CocycleSpec, GroupKind};

const TAU: f64 = std::f64::consts::TAU;

// ---------------------------------------------------------------------------
// Observables
// ---------------------------------------------------------------------------

/// One Fourier term of a trigonometric observable. Both basis functions,
/// `cos(2 pi k x) - 1` and `sin(2 pi k x)`, vanish at `x = 0`, so the value
/// at the neutral fixed point is exactly `v0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Harmonic {
    pub frequency: u32,
    pub cos_coeff: Vec<f64>,
    pub sin_coeff: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ObservableForm {
    /// `v(x) = v0`.
    Constant,
    /// `v(x) = v0 + x^eta * direction`.
    HolderPower { eta: f64, direction: Vec<f64> },
    /// `v(x) = v0 + sum_k [c_k (cos(2 pi k x) - 1) + s_k sin(2 pi k x)]`.
    Trigonometric { harmonics: Vec<Harmonic> },
    /// Piecewise-constant table on equal cells of `[0, 1]` (last cell is
    /// closed at 1). Not Hoelder across cell boundaries; meant for control
    /// runs such as the coin-flip observable of the doubling map.
    Table { values: Vec<Vec<f64>> },
}

/// Parametric observable `v : [0,1] -> R^d`, carrying its value at the
/// neutral fixed point and an optional empirical centering offset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservableSpec {
    pub dim: usize,
    pub v0: Vec<f64>,
    pub form: ObservableForm,
    /// Subtracted from every evaluation. Must stay zero for fixed-point-free
    /// group actions, where the equivariant observable is automatically
    /// centered.
    pub centering_offset: Vec<f64>,
}

impl ObservableSpec {
    pub fn constant(v0: Vec<f64>) -> Self {
        let dim = v0.len();
        ObservableSpec {
            dim,
            v0,
            form: ObservableForm::Constant,
            centering_offset: vec![0.0; dim],
        }
    }

    pub fn holder_power(v0: Vec<f64>, eta: f64, direction: Vec<f64>) -> Result<Self> {
        if direction.len() != v0.len() {
            return Err(Error::domain("direction dimension mismatch"));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::domain("observable Hoelder exponent outside (0,1]"));
        }
        let dim = v0.len();
        Ok(ObservableSpec {
            dim,
            v0,
            form: ObservableForm::HolderPower { eta, direction },
            centering_offset: vec![0.0; dim],
        })
    }

    pub fn trigonometric(v0: Vec<f64>, harmonics: Vec<Harmonic>) -> Result<Self> {
        let dim = v0.len();
        for h in &harmonics {
            if h.cos_coeff.len() != dim || h.sin_coeff.len() != dim {
                return Err(Error::domain("harmonic coefficient dimension mismatch"));
            }
            if h.frequency == 0 {
                return Err(Error::domain("harmonic frequency must be positive"));
            }
        }
        Ok(ObservableSpec {
            dim,
            v0,
            form: ObservableForm::Trigonometric { harmonics },
            centering_offset: vec![0.0; dim],
        })
    }

    pub fn table(values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("table observable needs at least one cell"));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::domain("table cells must share one dimension"));
        }
        Ok(ObservableSpec {
            dim,
            v0: values[0].clone(),
            form: ObservableForm::Table { values },
            centering_offset: vec![0.0; dim],
        })
    }

    pub fn with_centering(mut self, offset: Vec<f64>) -> Result<Self> {
        if offset.len() != self.dim {
            return Err(Error::domain("centering offset dimension mismatch"));
        }
        self.centering_offset = offset;
        Ok(self)
    }

    /// `v(x)`, centering included.
    #[inline(always)]
    pub fn eval(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match &self.form {
            ObservableForm::Constant => out.copy_from_slice(&self.v0),
            ObservableForm::HolderPower { eta, direction } => {
                let s = if *eta == 1.0 { x } else { x.powf(*eta) };
                for i in 0..self.dim {
                    out[i] = self.v0[i] + s * direction[i];
                }
            }
            ObservableForm::Trigonometric { harmonics } => {
                out.copy_from_slice(&self.v0);
                for h in harmonics {
                    let (s, c) = (TAU * h.frequency as f64 * x).sin_cos();
                    for i in 0..self.dim {
                        out[i] += h.cos_coeff[i] * (c - 1.0) + h.sin_coeff[i] * s;
                    }
                }
            }
            ObservableForm::Table { values } => {
                let m = values.len();
                let cell = ((x * m as f64) as usize).min(m - 1);
                out.copy_from_slice(&values[cell]);
            }
        }
        for i in 0..self.dim {
            out[i] -= self.centering_offset[i];
        }
    }

    /// `v(0)`, centering included.
    pub fn value_at_zero(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval(0.0, &mut out);
        out
    }

    /// Upper bound on `sup_x |v(x)|`, exact for constant and table forms.
    pub fn sup_norm(&self) -> f64 {
        let diff_norm = |v: &[f64]| -> f64 {
            v.iter()
                .zip(&self.centering_offset)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        match &self.form {
            ObservableForm::Constant => diff_norm(&self.v0),
            ObservableForm::HolderPower { direction, .. } => {
                diff_norm(&self.v0) + direction.iter().map(|x| x * x).sum::<f64>().sqrt()
            }
            ObservableForm::Trigonometric { harmonics } => {
                let mut bound = diff_norm(&self.v0);
                for h in harmonics {
                    let c: f64 = h.cos_coeff.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let s: f64 = h.sin_coeff.iter().map(|x| x * x).sum::<f64>().sqrt();
                    bound += 2.0 * c + s;
                }
                bound
            }
            ObservableForm::Table { values } => {
                values.iter().map(|v| diff_norm(v)).fold(0.0, f64::max)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Fiber kernels
// ---------------------------------------------------------------------------

/// Group coordinate of one trajectory. SO(2) and tori track angles reduced
/// mod 2 pi, SO(3) multiplies flat 3x3 arrays, and the dense variant covers
/// SO(d) for d >= 4. One variant stays live per run, so the per-step match
/// is perfectly predicted.
#[derive(Clone)]
pub(crate) enum Fiber {
    Trivial,
    Rot2 {
        angle: f64,
        omega0: f64,
        omega1: f64,
        eta: f64,
    },
    Rot3 {
        g: [f64; 9],
        w0: [f64; 3],
        w1: [f64; 3],
        eta: f64,
    },
    Torus {
        angles: Vec<f64>,
        base: Vec<f64>,
        modulation: Vec<f64>,
        eta: f64,
    },
    Dense {
        g: nalgebra::DMatrix<f64>,
        cocycle: CocycleSpec,
    },
}

impl Fiber {
    pub(crate) fn new(cocycle: &CocycleSpec, init: FiberInit, rng: &mut ChaCha8Rng) -> Fiber {
        match cocycle.kind() {
            GroupKind::Trivial { .. } => Fiber::Trivial,
            GroupKind::So2 => Fiber::Rot2 {
                angle: match init {
                    FiberInit::Identity => 0.0,
                    FiberInit::Haar => rng.gen::<f64>() * TAU,
                },
                omega0: cocycle.base_generator()[(1, 0)],
                omega1: cocycle.modulation_generator()[(1, 0)],
                eta: cocycle.holder_exponent(),
            },
            GroupKind::So3 => {
                let s0 = cocycle.base_generator();
                let s1 = cocycle.modulation_generator();
                let g = match init {
                    FiberInit::Identity => [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                    FiberInit::Haar => {
                        let q = haar_sample(3, rng);
                        let mut g = [0.0f64; 9];
                        for i in 0..3 {
                            for j in 0..3 {
                                g[3 * i + j] = q.matrix()[(i, j)];
                            }
                        }
                        g
                    }
                };
                Fiber::Rot3 {
                    g,
                    w0: [s0[(2, 1)], s0[(0, 2)], s0[(1, 0)]],
                    w1: [s1[(2, 1)], s1[(0, 2)], s1[(1, 0)]],
                    eta: cocycle.holder_exponent(),
                }
            }
            GroupKind::Torus { blocks } => {
                let s0 = cocycle.base_generator();
                let s1 = cocycle.modulation_generator();
                Fiber::Torus {
                    angles: match init {
                        FiberInit::Identity => vec![0.0; blocks],
                        FiberInit::Haar => (0..blocks).map(|_| rng.gen::<f64>() * TAU).collect(),
                    },
                    base: (0..blocks).map(|b| s0[(2 * b + 1, 2 * b)]).collect(),
                    modulation: (0..blocks).map(|b| s1[(2 * b + 1, 2 * b)]).collect(),
                    eta: cocycle.holder_exponent(),
                }
            }
            GroupKind::SOd { dim } => Fiber::Dense {
                g: match init {
                    FiberInit::Identity => nalgebra::DMatrix::identity(dim, dim),
                    FiberInit::Haar => haar_sample(dim, rng).matrix().clone(),
                },
                cocycle: cocycle.clone(),
            },
        }
    }

    /// `g <- g h(x)`.
    #[inline(always)]
    pub(crate) fn advance(&mut self, x: f64) {
        match self {
            Fiber::Trivial => {}
            Fiber::Rot2 {
                angle,
                omega0,
                omega1,
                eta,
            } => {
                let m = if *eta == 1.0 { x } else { x.powf(*eta) };
                *angle = (*angle + *omega0 + m * *omega1).rem_euclid(TAU);
            }
            Fiber::Rot3 { g, w0, w1, eta } => {
                let m = if *eta == 1.0 { x } else { x.powf(*eta) };
                let h = rot3_array([w0[0] + m * w1[0], w0[1] + m * w1[1], w0[2] + m * w1[2]]);
                let mut out = [0.0f64; 9];
                for i in 0..3 {
                    for j in 0..3 {
                        out[3 * i + j] =
                            g[3 * i] * h[j] + g[3 * i + 1] * h[3 + j] + g[3 * i + 2] * h[6 + j];
                    }
                }
                *g = out;
            }
            Fiber::Torus {
                angles,
                base,
                modulation,
                eta,
            } => {
                let m = if *eta == 1.0 { x } else { x.powf(*eta) };
                for b in 0..angles.len() {
                    angles[b] = (angles[b] + base[b] + m * modulation[b]).rem_euclid(TAU);
                }
            }
            Fiber::Dense { g, cocycle } => {
                let h = cocycle.evaluate_unchecked(x);
                *g = &*g * h.matrix();
            }
        }
    }

    /// `out = g v`.
    #[inline(always)]
    pub(crate) fn translate(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Fiber::Trivial => out.copy_from_slice(v),
            Fiber::Rot2 { angle, .. } => {
                let (s, c) = angle.sin_cos();
                out[0] = c * v[0] - s * v[1];
                out[1] = s * v[0] + c * v[1];
            }
            Fiber::Rot3 { g, .. } => {
                for i in 0..3 {
                    out[i] = g[3 * i] * v[0] + g[3 * i + 1] * v[1] + g[3 * i + 2] * v[2];
                }
            }
            Fiber::Torus { angles, .. } => {
                for (b, &angle) in angles.iter().enumerate() {
                    let (s, c) = angle.sin_cos();
                    out[2 * b] = c * v[2 * b] - s * v[2 * b + 1];
                    out[2 * b + 1] = s * v[2 * b] + c * v[2 * b + 1];
                }
            }
            Fiber::Dense { g, .. } => {
                let d = v.len();
                for i in 0..d {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += g[(i, j)] * v[j];
                    }
                    out[i] = s;
                }
            }
        }
    }

    /// Left-multiply the state by a fixed rotation (`g <- q g`); test hook
    /// for the equivariance invariant.
    pub(crate) fn premultiply(&mut self, q: &nalgebra::DMatrix<f64>) {
        match self {
            Fiber::Trivial => {}
            Fiber::Rot2 { angle, .. } => {
                let theta = q[(1, 0)].atan2(q[(0, 0)]);
                *angle = (*angle + theta).rem_euclid(TAU);
            }
            Fiber::Rot3 { g, .. } => {
                let old = *g;
                for i in 0..3 {
                    for j in 0..3 {
                        g[3 * i + j] =
                            q[(i, 0)] * old[j] + q[(i, 1)] * old[3 + j] + q[(i, 2)] * old[6 + j];
                    }
                }
            }
            Fiber::Torus { angles, .. } => {
                for (b, angle) in angles.iter_mut().enumerate() {
                    let theta = q[(2 * b + 1, 2 * b)].atan2(q[(2 * b, 2 * b)]);
                    *angle = (*angle + theta).rem_euclid(TAU);
                }
            }
            Fiber::Dense { g, .. } => {
                *g = q * &*g;
            }
        }
    }
}

/// How the fiber coordinate is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiberInit {
    Identity,
    Haar,
}

/// Initial law of the base coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartLaw {
    /// Uniform on `[0, 1]`; any absolutely continuous law gives the same
    /// limit statistics.
    Lebesgue,
    /// Uniform on `Y = [1/2, 1]`, for induced-system instrumentation.
    YUniform,
}

// ---------------------------------------------------------------------------
// Ensemble simulation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SimulateSpec {
    pub map: LsvMap,
    pub cocycle: CocycleSpec,
    pub observable: ObservableSpec,
    /// Snapshot times, strictly increasing.
    pub grid: Vec<u64>,
    pub samples: usize,
    pub seed: u64,
    pub start: StartLaw,
    pub fiber_init: FiberInit,
    /// Intra-path samples per grid value (0 disables path recording).
    pub path_points: usize,
}

/// Default geometric grid `{10^3, 10^3.5, ..., 10^6}`.
pub fn default_grid() -> Vec<u64> {
    vec![1_000, 3_162, 10_000, 31_623, 100_000, 316_228, 1_000_000]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// `phi_n` at each grid value.
    pub phi: Vec<Vec<f64>>,
    /// `max_{k <= n} |phi_k|` at each grid value.
    pub abs_max: Vec<f64>,
    /// Componentwise `max_{k <= n} phi_k[i]` at each grid value.
    pub comp_max: Vec<Vec<f64>>,
    /// With path recording: per grid value, `phi` at
    /// `k = floor(j n / path_points)`, `j = 0..=path_points`.
    pub path: Vec<Vec<Vec<f64>>>,
    /// Step at which the NaN guard aborted this trajectory, if it did.
    pub aborted_at: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub dim: usize,
    pub grid: Vec<u64>,
    pub seed: u64,
    pub records: Vec<TrajectoryRecord>,
    pub warnings: Vec<String>,
}

impl PathEnsemble {
    /// `|phi_n|` across trajectories at grid index `i`.
    pub fn abs_values_at(&self, i: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.aborted_at.is_none())
            .map(|r| r.phi[i].iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    /// `phi_n` samples at grid index `i`.
    pub fn samples_at(&self, i: usize) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .filter(|r| r.aborted_at.is_none())
            .map(|r| r.phi[i].clone())
            .collect()
    }

    /// Median of `|phi_n|` per grid value, the input of scaling fits.
    pub fn median_abs(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| crate::stats::median(&self.abs_values_at(i)))
            .collect()
    }
}

/// Counter-based stream for one trajectory: ChaCha8 keyed by the master
/// seed with the trajectory index as the stream counter.
pub fn trajectory_rng(seed: u64, trajectory: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trajectory.wrapping_add(1));
    rng
}

fn validate_spec(spec: &SimulateSpec) -> Result<()> {
    if spec.grid.is_empty() || spec.grid[0] == 0 || spec.grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(
            "grid must be nonempty, positive and strictly increasing",
        ));
    }
    if spec.samples == 0 {
        return Err(Error::config("samples must be positive"));
    }
    if spec.observable.dim != spec.cocycle.dim() {
        return Err(Error::config(format!(
            "observable dimension {} != group dimension {}",
            spec.observable.dim,
            spec.cocycle.dim()
        )));
    }
    Ok(())
}

/// Simulate the ensemble described by `spec`.
pub fn simulate_ensemble(spec: &SimulateSpec) -> Result<PathEnsemble> {
    validate_spec(spec)?;
    let records: Vec<TrajectoryRecord> = (0..spec.samples as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trajectory_rng(spec.seed, t);
            let x0 = match spec.start {
                StartLaw::Lebesgue => rng.gen::<f64>(),
                StartLaw::YUniform => 0.5 + 0.5 * rng.gen::<f64>(),
            };
            let fiber = Fiber::new(&spec.cocycle, spec.fiber_init, &mut rng);
            run_trajectory(spec, x0, fiber, &mut rng)
        })
        .collect();
    let warnings: Vec<String> = records
        .iter()
        .enumerate()
        .filter_map(|(t, r)| {
            r.aborted_at
                .map(|n| format!("trajectory {t}: NaN guard aborted at step {n}"))
        })
        .collect();
    Ok(PathEnsemble {
        dim: spec.observable.dim,
        grid: spec.grid.clone(),
        seed: spec.seed,
        records,
        warnings,
    })
}

fn run_trajectory(
    spec: &SimulateSpec,
    x0: f64,
    mut fiber: Fiber,
    rng: &mut ChaCha8Rng,
) -> TrajectoryRecord {
    let d = spec.observable.dim;
    let mut sampler = crate::dynamics::OrbitSampler::new(&spec.map);
    let n_max = *spec.grid.last().unwrap();
    let mut acc = KahanVec::zeros(d);
    let mut v = vec![0.0f64; d];
    let mut term = vec![0.0f64; d];
    let mut abs2_max = 0.0f64;
    let mut comp_max = vec![f64::NEG_INFINITY; d];

    let record_paths = spec.path_points > 0;
    let path_marks: Vec<Vec<u64>> = if record_paths {
        spec.grid
            .iter()
            .map(|&n| {
                (0..=spec.path_points as u64)
                    .map(|j| j * n / spec.path_points as u64)
                    .collect()
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut rec = TrajectoryRecord {
        phi: Vec::with_capacity(spec.grid.len()),
        abs_max: Vec::with_capacity(spec.grid.len()),
        comp_max: Vec::with_capacity(spec.grid.len()),
        path: if record_paths {
            spec.grid
                .iter()
                .map(|_| Vec::with_capacity(spec.path_points + 1))
                .collect()
        } else {
            Vec::new()
        },
        aborted_at: None,
    };
    let mut path_cursor = vec![0usize; path_marks.len()];
    if record_paths {
        // phi_0 = 0 snapshots (W_n(0) = 0 for every trajectory).
        for (gi, marks) in path_marks.iter().enumerate() {
            while path_cursor[gi] < marks.len() && marks[path_cursor[gi]] == 0 {
                rec.path[gi].push(vec![0.0; d]);
                path_cursor[gi] += 1;
            }
        }
    }

    let mut next_grid = 0usize;
    let mut x = x0;
    for k in 0..n_max {
        spec.observable.eval(x, &mut v);
        fiber.translate(&v, &mut term);
        acc.add(&term);
        let phi = acc.value();
        let mut norm2 = 0.0;
        for i in 0..d {
            norm2 += phi[i] * phi[i];
            if phi[i] > comp_max[i] {
                comp_max[i] = phi[i];
            }
        }
        if norm2 > abs2_max {
            abs2_max = norm2;
        }
        fiber.advance(x);
        x = sampler.step(x, rng);

        let n = k + 1;
        if record_paths {
            for gi in 0..path_marks.len() {
                while path_cursor[gi] < path_marks[gi].len()
                    && path_marks[gi][path_cursor[gi]] == n
                {
                    rec.path[gi].push(phi.to_vec());
                    path_cursor[gi] += 1;
                }
            }
        }
        if n == spec.grid[next_grid] {
            if phi.iter().any(|p| !p.is_finite()) {
                rec.aborted_at = Some(n);
                break;
            }
            rec.phi.push(phi.to_vec());
            rec.abs_max.push(abs2_max.sqrt());
            rec.comp_max.push(comp_max.clone());
            next_grid += 1;
            if next_grid == spec.grid.len() {
                break;
            }
        }
    }
    // Keep grid indexing rectangular for aborted trajectories.
    while rec.phi.len() < spec.grid.len() {
        rec.phi.push(vec![f64::NAN; d]);
        rec.abs_max.push(f64::NAN);
        rec.comp_max.push(vec![f64::NAN; d]);
    }
    rec
}

/// Translation part of the corresponding Euclidean-type extension: iterates
/// the semidirect product law `(g, p)(h(x), v(x)) = (g h(x), p + g v(x))`
/// and returns `p` at the grid values for one trajectory. An independent
/// implementation used to cross-check `simulate_ensemble`.
pub fn euclidean_translation_orbit(spec: &SimulateSpec, trajectory: u64) -> Result<Vec<Vec<f64>>> {
    validate_spec(spec)?;
    let d = spec.observable.dim;
    let mut rng = trajectory_rng(spec.seed, trajectory);
    let mut x = match spec.start {
        StartLaw::Lebesgue => rng.gen::<f64>(),
        StartLaw::YUniform => 0.5 + 0.5 * rng.gen::<f64>(),
    };
    let mut g = Fiber::new(&spec.cocycle, spec.fiber_init, &mut rng);
    let mut sampler = crate::dynamics::OrbitSampler::new(&spec.map);
    let mut p = KahanVec::zeros(d);
    let mut v = vec![0.0; d];
    let mut gv = vec![0.0; d];
    let mut out = Vec::with_capacity(spec.grid.len());
    let mut next = 0usize;
    for k in 0..*spec.grid.last().unwrap() {
        spec.observable.eval(x, &mut v);
        g.translate(&v, &mut gv);
        p.add(&gv);
        g.advance(x);
        x = sampler.step(x, &mut rng);
        if k + 1 == spec.grid[next] {
            out.push(p.value().to_vec());
            next += 1;
            if next == spec.grid.len() {
                break;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Centering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CenteringEstimate {
    pub offset: Vec<f64>,
    /// Max componentwise gap between per-orbit half estimates. Slow
    /// convergence here is expected in the anomalous regime and is reported,
    /// not fatal.
    pub half_orbit_gap: f64,
    pub steps_per_orbit: u64,
    pub orbits: usize,
}

/// Empirical mean of the raw observable along independent long orbits after
/// burn-in. Needed only when the group action has a trivial component;
/// fixed-point-free actions are automatically centered and skip this.
pub fn estimate_centering(
    map: &LsvMap,
    observable: &ObservableSpec,
    orbits: usize,
    steps_per_orbit: u64,
    burn_in: u64,
    seed: u64,
) -> Result<CenteringEstimate> {
    if orbits == 0 || steps_per_orbit < 2 {
        return Err(Error::config("centering needs orbits and steps"));
    }
    let d = observable.dim;
    let halves: Vec<(Vec<f64>, Vec<f64>)> = (0..orbits as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trajectory_rng(seed, t);
            let mut sampler = crate::dynamics::OrbitSampler::new(map);
            let mut x: f64 = rng.gen();
            for _ in 0..burn_in {
                x = sampler.step(x, &mut rng);
            }
            let mut first = KahanVec::zeros(d);
            let mut second = KahanVec::zeros(d);
            let mut v = vec![0.0; d];
            let half = steps_per_orbit / 2;
            for k in 0..steps_per_orbit {
                observable.eval(x, &mut v);
                if k < half {
                    first.add(&v);
                } else {
                    second.add(&v);
                }
                x = sampler.step(x, &mut rng);
            }
            let a: Vec<f64> = first.value().iter().map(|s| s / half as f64).collect();
            let b: Vec<f64> = second
                .value()
                .iter()
                .map(|s| s / (steps_per_orbit - half) as f64)
                .collect();
            (a, b)
        })
        .collect();
    let mut offset = vec![0.0; d];
    let mut gap = 0.0f64;
    for (a, b) in &halves {
        for i in 0..d {
            offset[i] += 0.5 * (a[i] + b[i]) / orbits as f64;
            gap = gap.max((a[i] - b[i]).abs());
        }
    }
    Ok(CenteringEstimate {
        offset,
        half_orbit_gap: gap,
        steps_per_orbit,
        orbits,
    })
}

// ---------------------------------------------------------------------------
// Path process
// ---------------------------------------------------------------------------

/// Piecewise-linear rescaled paths `W_n(t) = n^{-1/2} phi_{nt}` on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct PathProcess {
    pub n: u64,
    /// Recorded times `t_j`.
    pub times: Vec<f64>,
    /// Per trajectory, `W_n(t_j)` as `d`-vectors.
    pub paths: Vec<Vec<Vec<f64>>>,
}

impl PathProcess {
    /// Linear interpolation of trajectory `i` at `t in [0, 1]`.
    pub fn eval(&self, i: usize, t: f64) -> Vec<f64> {
        let path = &self.paths[i];
        let m = self.times.len() - 1;
        let pos = t.clamp(0.0, 1.0) * m as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        path[lo]
            .iter()
            .zip(&path[hi])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

/// Extract the rescaled path process at grid value `n` from an ensemble
/// simulated with path recording.
pub fn path_process(ensemble: &PathEnsemble, n: u64) -> Result<PathProcess> {
    let gi = ensemble
        .grid
        .iter()
        .position(|&g| g == n)
        .ok_or_else(|| Error::GridMismatch(format!("n = {n} not on the ensemble grid")))?;
    if ensemble.records.iter().any(|r| r.path.is_empty()) {
        return Err(Error::GridMismatch(
            "ensemble was simulated without path recording".into(),
        ));
    }
    let scale = 1.0 / (n as f64).sqrt();
    let points = ensemble.records[0].path[gi].len();
    let times: Vec<f64> = (0..points)
        .map(|j| j as f64 / (points - 1) as f64)
        .collect();
    let paths: Vec<Vec<Vec<f64>>> = ensemble
        .records
        .iter()
        .filter(|r| r.aborted_at.is_none())
        .map(|r| {
            r.path[gi]
                .iter()
                .map(|p| p.iter().map(|x| x * scale).collect())
                .collect()
        })
        .collect();
    Ok(PathProcess { n, times, paths })
}

// ---------------------------------------------------------------------------
// Tower instrumentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TowerReport {
    /// Max relative error of `phi_{r_1 + ... + r_j} = Phi_j` over all
    /// completed returns, with `Phi_j` recomputed excursion-by-excursion
    /// through the induced observable.
    pub return_identity_err: f64,
    /// Max relative error of `phi_k - Phi_{N_k} - R_k = 0` at the grid
    /// times, with `R_k` recomputed from the incomplete excursion.
    pub decomposition_err: f64,
    /// Min over grid times of `max_j Psi(Q^j y) - max_{k<=n} |R_k|`;
    /// the pathwise excursion bound demands this stays nonnegative. Both
    /// sides are evaluated on the exact excursion decomposition, whose
    /// agreement with the global sum is certified by `decomposition_err`.
    pub excursion_bound_slack: f64,
    /// `|N_k / k - 1 / r_bar|` at the final step, with `r_bar` the sample
    /// mean of the completed return times.
    pub lap_ratio_dev: f64,
    /// Max deviation between the streamed excursion maxima and the `V*`
    /// recomputation through `induced_values`; identical arithmetic, so this
    /// must be exactly zero.
    pub psi_recompute_dev: f64,
    pub returns: usize,
    pub r_bar_emp: f64,
    pub steps: u64,
}

/// One `Y`-started trajectory with first-return instrumentation: verifies
/// the tower identities at the given grid of times.
pub fn run_tower_checks(
    map: &LsvMap,
    cocycle: &CocycleSpec,
    observable: &ObservableSpec,
    steps: u64,
    grid: &[u64],
    seed: u64,
    trajectory: u64,
) -> Result<TowerReport> {
    use crate::inducing::induced_values;

    let d = observable.dim;
    let mut rng = trajectory_rng(seed, trajectory);
    let y0 = 0.5 + 0.5 * rng.gen::<f64>();

    // Global Birkhoff sum along the full orbit (identity fiber start).
    let mut global = KahanVec::zeros(d);
    let mut g_global = Fiber::new(cocycle, FiberInit::Identity, &mut rng);
    // Induced side: Phi_j = sum_{i<j} G_i V(y_i), G the running product of
    // induced cocycle values H(y_i).
    let mut induced_sum = KahanVec::zeros(d);
    let mut g_induced = crate::groups::GroupElement::identity(d);

    let mut y = y0;
    let mut k: u64 = 0;
    let mut t_last_return: u64 = 0;
    let mut returns = 0usize;
    let mut return_identity_err = 0.0f64;
    let mut decomposition_err = 0.0f64;
    let mut excursion_bound_slack = f64::INFINITY;
    let mut psi_recompute_dev = 0.0f64;
    let mut max_psi = 0.0f64; // streamed maxima over completed excursions
    let mut max_partial = 0.0f64; // max_k |R_k| seen so far
    let mut grid_cursor = 0usize;
    let mut v = vec![0.0; d];
    let mut term = vec![0.0; d];

    'outer: while k < steps && grid_cursor < grid.len() {
        // Independent per-excursion recomputation.
        let sample = induced_values(map, cocycle, observable, y)?;
        // Streamed pass over the same excursion, tracking partial sums in
        // the induced frame (|R_k| = |partial| since the action is
        // orthogonal) and the global Birkhoff sum.
        let mut x = y;
        let mut h_local = crate::groups::GroupElement::identity(d);
        let mut partial = KahanVec::zeros(d);
        let mut psi_stream = 0.0f64;
        for _ in 0..sample.r {
            observable.eval(x, &mut v);
            g_global.translate(&v, &mut term);
            global.add(&term);
            let mut local = vec![0.0; d];
            for i in 0..d {
                let mut s = 0.0;
                for j in 0..d {
                    s += h_local.matrix()[(i, j)] * v[j];
                }
                local[i] = s;
            }
            partial.add(&local);
            let partial_norm: f64 = partial.value().iter().map(|t| t * t).sum::<f64>().sqrt();
            psi_stream = psi_stream.max(partial_norm);
            if partial_norm > max_partial {
                max_partial = partial_norm;
            }
            h_local = h_local.compose(&cocycle.evaluate_unchecked(x));
            g_global.advance(x);
            x = map.step(x);
            k += 1;
            if grid_cursor < grid.len() && k == grid[grid_cursor] {
                // phi_k - Phi_{N_k} - R_k with R_k = G_{N_k} * partial.
                let r_k =
                    g_induced.apply(&nalgebra::DVector::from_column_slice(partial.value()));
                let mut err = 0.0f64;
                let mut scale = 1.0f64;
                for i in 0..d {
                    let lhs = global.value()[i];
                    let rhs = induced_sum.value()[i] + r_k[i];
                    err = err.max((lhs - rhs).abs());
                    scale = scale.max(lhs.abs());
                }
                decomposition_err = decomposition_err.max(err / scale);
                let current_psi = max_psi.max(psi_stream);
                excursion_bound_slack = excursion_bound_slack.min(current_psi - max_partial);
                grid_cursor += 1;
            }
            if k >= steps || grid_cursor >= grid.len() {
                break 'outer;
            }
        }
        // Excursion completed: fold it into the induced accumulators and
        // check phi at the return time against the induced sum.
        let term_v = g_induced.apply(&nalgebra::DVector::from_column_slice(&sample.v));
        induced_sum.add(term_v.as_slice());
        g_induced = g_induced.compose(&sample.h);
        returns += 1;
        t_last_return = k;
        psi_recompute_dev = psi_recompute_dev.max((psi_stream - sample.v_star).abs());
        max_psi = max_psi.max(psi_stream);
        let mut err = 0.0f64;
        let mut scale = 1.0f64;
        for i in 0..d {
            err = err.max((global.value()[i] - induced_sum.value()[i]).abs());
            scale = scale.max(global.value()[i].abs());
        }
        return_identity_err = return_identity_err.max(err / scale);
        y = x;
    }
    if returns == 0 {
        return Err(Error::InsufficientData(
            "no completed return within the step budget".into(),
        ));
    }
    let r_bar_emp = t_last_return as f64 / returns as f64;
    let lap_ratio_dev = (returns as f64 / k as f64 - 1.0 / r_bar_emp).abs();
    Ok(TowerReport {
        return_identity_err,
        decomposition_err,
        excursion_bound_slack,
        lap_ratio_dev,
        psi_recompute_dev,
        returns,
        r_bar_emp,
        steps: k,
    })
}

#[cfg(test)]
#[path = "ensemble_tests.rs"]
mod tests;
