use super::*;
use crate::ensemble::Harmonic;
use crate::groups::matrix_exp_skew;
use crate::inducing::build_return_partition;
use approx::assert_relative_eq;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const GOLDEN_ANGLE: f64 = 2.399963229728653;

fn rotation(theta: f64) -> DMatrix<f64> {
    matrix_exp_skew(&DMatrix::from_row_slice(2, 2, &[0.0, -theta, theta, 0.0]))
        .matrix()
        .clone()
}

/// Synthetic operator: `rho` times a cyclic shift of `m` bins tensored with
/// the rotation block `R(-omega)`. The Ulam picture of a single-branch,
/// constant-return caricature with a constant cocycle.
fn caricature(m: usize, rho: f64, omega: f64) -> UlamOperator {
    let d = 2usize;
    let r = rotation(-omega);
    let mut entries = DMatrix::<f64>::zeros(m * d, m * d);
    for i in 0..m {
        let j = (i + m - 1) % m;
        for a in 0..d {
            for b in 0..d {
                entries[(i * d + a, j * d + b)] = rho * r[(a, b)];
            }
        }
    }
    UlamOperator {
        m,
        d_rep: d,
        n_max: 1,
        entries,
        mu_hat: vec![1.0 / m as f64; m],
        rho_hat: vec![2.0; m],
        truncation: TruncationInfo {
            max_bin_deficit: 0.0,
            uncovered_length: 0.0,
        },
        map: LsvMap::new(0.0).unwrap(),
        cocycle: Some(CocycleSpec::so2(omega, 0.0, 1.0).unwrap()),
        pieces: Vec::new(),
        bin_width: 0.5 / m as f64,
    }
}

#[test]
fn doubling_untwisted_spectrum_is_exact() {
    let map = LsvMap::new(0.0).unwrap();
    let partition = build_return_partition(&map, 24, 20_000, 51).unwrap();
    let op = build_ulam(&map, &partition, None, 256, 24).unwrap();

    // Entries nonnegative, rows stochastic after tail redistribution.
    for i in 0..256 {
        let mut row = 0.0;
        for j in 0..256 {
            assert!(op.entries[(i, j)] >= 0.0);
            row += op.entries[(i, j)];
        }
        assert_relative_eq!(row, 1.0, epsilon = 1e-10);
    }
    assert!(op.truncation.max_bin_deficit < 0.005);

    let spec = leading_spectrum(&op, 5).unwrap();
    assert!(
        (spec.radius - 1.0).abs() < 1e-6,
        "leading eigenvalue {}",
        spec.radius
    );
    // mu_Y is normalized Lebesgue on Y for the doubling map: density 2.
    for rho in &spec.density {
        assert!((rho - 2.0).abs() < 0.02, "density {rho}");
    }
    assert!(spec.gap > 0.1, "gap {}", spec.gap);
}

#[test]
fn gamma03_density_matches_orbit_histogram() {
    let map = LsvMap::new(0.3).unwrap();
    let partition = build_return_partition(&map, 64, 20_000, 52).unwrap();
    let op = build_ulam(&map, &partition, None, 512, 64).unwrap();
    let spec = leading_spectrum(&op, 3).unwrap();
    assert!(
        spec.radius > 0.999 && spec.radius < 1.001,
        "leading eigenvalue {}",
        spec.radius
    );

    // Histogram of an induced orbit (the visits of F equidistribute per
    // mu_Y); L1 distance of bin masses below 0.02.
    let mut rng = crate::ensemble::trajectory_rng(53, 0);
    let mut y = 0.5 + 0.5 * rng.gen::<f64>();
    for _ in 0..10_000 {
        y = map.return_step(y).unwrap().1;
    }
    let returns = 2_000_000usize;
    let mut hist = vec![0u64; op.m];
    for _ in 0..returns {
        hist[op.bin_of(y)] += 1;
        y = map.return_step(y).unwrap().1;
    }
    let l1: f64 = (0..op.m)
        .map(|i| (hist[i] as f64 / returns as f64 - op.mu_hat[i]).abs())
        .sum();
    assert!(l1 < 0.02, "L1 distance {l1}");
}

#[test]
fn constant_cocycle_blocks_factorize() {
    // With h = R(omega) constant, H on branch n is R(omega n), so each
    // single-branch cell equals the untwisted weight times R(-omega n).
    let map = LsvMap::new(0.0).unwrap();
    let partition = build_return_partition(&map, 20, 20_000, 54).unwrap();
    let omega = 0.9f64;
    let cocycle = CocycleSpec::so2(omega, 0.0, 1.0).unwrap();
    let plain = build_ulam(&map, &partition, None, 16, 20).unwrap();
    let twisted = build_ulam(&map, &partition, Some(&cocycle), 16, 20).unwrap();

    // Cells reached by exactly one branch.
    let mut branch_of = std::collections::HashMap::<(u32, u32), Option<u32>>::new();
    for p in twisted.pieces() {
        branch_of
            .entry((p.tgt, p.src))
            .and_modify(|b| {
                if *b != Some(p.branch) {
                    *b = None;
                }
            })
            .or_insert(Some(p.branch));
    }
    let mut checked = 0;
    for ((i, j), branch) in branch_of {
        let Some(n) = branch else { continue };
        let r = rotation(-omega * n as f64);
        let w = plain.entries[(i as usize, j as usize)];
        for a in 0..2 {
            for b in 0..2 {
                let got = twisted.entries[(i as usize * 2 + a, j as usize * 2 + b)];
                assert!(
                    (got - w * r[(a, b)]).abs() < 1e-12,
                    "cell ({i},{j}) block mismatch"
                );
            }
        }
        checked += 1;
    }
    assert!(checked > 50, "only {checked} single-branch cells");
}

#[test]
fn caricature_chi_matches_geometric_closed_form() {
    let omega = GOLDEN_ANGLE;
    let v0 = [0.8, -0.3];
    let closed_form = |rho: f64| -> DVector<f64> {
        let r = rotation(-omega) * rho;
        let inv = (DMatrix::<f64>::identity(2, 2) - &r)
            .try_inverse()
            .unwrap();
        inv * r * DVector::from_column_slice(&v0)
    };

    // Contracting caricature: Neumann path.
    let op = caricature(8, 0.6, omega);
    let v = DVector::from_fn(16, |i, _| v0[i % 2]);
    let sol = solve_chi_system(&op, op.apply(&v)).unwrap();
    assert_eq!(sol.method, ChiMethod::Neumann);
    let expect = closed_form(0.6);
    for i in 0..8 {
        for c in 0..2 {
            assert!(
                (sol.chi[i * 2 + c] - expect[c]).abs() < 1e-10,
                "chi[{i},{c}] = {} vs {}",
                sol.chi[i * 2 + c],
                expect[c]
            );
        }
    }

    // Unit-modulus caricature (constant cocycle): eigenvalues sit on the
    // unit circle away from 1, so the solve falls through to the direct
    // path and still matches (I - R(-omega))^{-1} R(-omega) v0.
    let op = caricature(8, 1.0, omega);
    let sol = solve_chi_system(&op, op.apply(&v)).unwrap();
    assert_eq!(sol.method, ChiMethod::DirectRefined);
    let expect = closed_form(1.0);
    for i in 0..8 {
        for c in 0..2 {
            assert!(
                (sol.chi[i * 2 + c] - expect[c]).abs() < 1e-9,
                "chi[{i},{c}] = {} vs {}",
                sol.chi[i * 2 + c],
                expect[c]
            );
        }
    }

    // V = 0 gives chi = 0.
    let sol = solve_chi_system(&caricature(8, 0.6, omega), DVector::zeros(16)).unwrap();
    assert_eq!(sol.chi.amax(), 0.0);
}

#[test]
fn caricature_greenkubo_matches_matrix_series() {
    let omega = 1.1f64;
    let rho = 0.7f64;
    let op = caricature(6, rho, omega);
    let v0 = DVector::from_column_slice(&[1.0, 0.4]);
    let v = DVector::from_fn(12, |i, _| v0[i % 2]);
    let gk = greenkubo_sigma(&op, &v, 2.0).unwrap();

    // Closed form: Sigma = v0 v0^T + S v0 v0^T + v0 v0^T S^T with
    // S = (I - rho R(-omega))^{-1} rho R(-omega).
    let r = rotation(-omega) * rho;
    let s = (DMatrix::<f64>::identity(2, 2) - &r).try_inverse().unwrap() * &r;
    let outer = &v0 * v0.transpose();
    let expect = &outer + &s * &outer + &outer * s.transpose();
    assert!(
        (&gk.sigma_induced - &expect).amax() < 1e-10,
        "Green-Kubo mismatch: {:?} vs {:?}",
        gk.sigma_induced,
        expect
    );
    assert!((&gk.sigma_full * 2.0 - &gk.sigma_induced).amax() < 1e-12);
    assert!((gk.decay_ratio - rho).abs() < 0.01, "ratio {}", gk.decay_ratio);

    // V = 0 gives the zero matrix.
    let gk = greenkubo_sigma(&op, &DVector::zeros(12), 2.0).unwrap();
    assert_eq!(gk.sigma_induced.amax(), 0.0);
}

#[test]
fn golden_twisted_operator_has_a_gap() {
    let map = LsvMap::new(0.3).unwrap();
    let partition = build_return_partition(&map, 64, 20_000, 55).unwrap();
    let cocycle = CocycleSpec::so2(GOLDEN_ANGLE, 1.0, 1.0).unwrap();
    let op = build_ulam(&map, &partition, Some(&cocycle), 256, 64).unwrap();
    let spec = leading_spectrum(&op, 5).unwrap();
    assert!(
        spec.radius < 0.99,
        "twisted spectral radius {}",
        spec.radius
    );
    assert!(spec.delta > 0.01);

    // Power-iteration oracle agrees with the Arnoldi radius.
    let power = power_norm_radius(&op, 200, 400, 56);
    assert!(
        (power - spec.radius).abs() < 1e-3,
        "Arnoldi {} vs power {power}",
        spec.radius
    );

    // Contraction in the block sup norm.
    let mut rng = ChaCha8Rng::seed_from_u64(57);
    for _ in 0..100 {
        let v = DVector::from_fn(op.dim(), |_, _| rng.gen::<f64>() - 0.5);
        let mut prev = op.block_sup_norm(&v);
        let mut w = v;
        for _ in 0..5 {
            w = op.apply(&w);
            let cur = op.block_sup_norm(&w);
            assert!(cur <= prev + 1e-10, "sup norm grew: {prev} -> {cur}");
            prev = cur;
        }
    }
}

#[test]
fn trivial_component_is_deflated() {
    // Constant axis cocycle in SO(3): the z component is a trivial
    // subrepresentation, so M_H has eigenvalue 1 there; solve_chi must
    // deflate it and still converge.
    let map = LsvMap::new(0.3).unwrap();
    let partition = build_return_partition(&map, 64, 20_000, 58).unwrap();
    let cocycle = CocycleSpec::so3([0.0, 0.0, GOLDEN_ANGLE], [0.0; 3], 1.0).unwrap();
    let op = build_ulam(&map, &partition, Some(&cocycle), 64, 64).unwrap();
    let obs = crate::ensemble::ObservableSpec::trigonometric(
        vec![0.4, 0.1, 0.2],
        vec![Harmonic {
            frequency: 1,
            cos_coeff: vec![0.3, 0.0, 0.5],
            sin_coeff: vec![0.0, 0.2, 0.1],
        }],
    )
    .unwrap();
    let sol = solve_chi(&op, &obs).unwrap();
    assert_eq!(sol.deflated_components, vec![2]);
    assert!(sol.linear_residual < 1e-10, "residual {}", sol.linear_residual);
}

#[test]
fn martingale_residual_shrinks_with_resolution() {
    let map = LsvMap::new(0.3).unwrap();
    let partition = build_return_partition(&map, 64, 20_000, 59).unwrap();
    let cocycle = CocycleSpec::so2(GOLDEN_ANGLE, 1.0, 1.0).unwrap();
    let obs = crate::ensemble::ObservableSpec::trigonometric(
        vec![1.0, 0.0],
        vec![Harmonic {
            frequency: 1,
            cos_coeff: vec![0.0, 0.4],
            sin_coeff: vec![0.5, 0.0],
        }],
    )
    .unwrap();
    let mut residuals = Vec::new();
    for m in [64usize, 256] {
        let op = build_ulam(&map, &partition, Some(&cocycle), m, 64).unwrap();
        let sol = solve_chi(&op, &obs).unwrap();
        residuals.push(martingale_residual(&op, &obs, &sol.chi).unwrap());
    }
    assert!(
        residuals[1] < residuals[0],
        "residuals {residuals:?} should shrink with m"
    );
    assert!(residuals[1] < 0.05, "residual too large: {}", residuals[1]);
}

#[test]
fn duality_of_matrix_and_orbit_quadrature() {
    let map = LsvMap::new(0.3).unwrap();
    let partition = build_return_partition(&map, 64, 20_000, 60).unwrap();
    let cocycle = CocycleSpec::so2(GOLDEN_ANGLE, 0.7, 1.0).unwrap();
    let op = build_ulam(&map, &partition, Some(&cocycle), 128, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for _ in 0..3 {
        let v = DVector::from_fn(op.dim(), |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let w = DVector::from_fn(op.dim(), |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let lhs = duality_matrix_side(&op, &v, &w);
        let rhs = duality_orbit_quadrature(&op, &v, &w, 400_000, 62).unwrap();
        let scale = op.block_sup_norm(&v) * op.block_sup_norm(&w);
        assert!(
            (lhs - rhs).abs() < 0.02 * scale,
            "duality gap {} vs scale {scale}",
            (lhs - rhs).abs()
        );
    }
}

#[test]
fn build_rejects_bad_geometry() {
    let map = LsvMap::new(0.7).unwrap();
    let partition = build_return_partition(&map, 32, 20_000, 63).unwrap();
    // 32 branches leave an uncovered region wider than a bin at m = 512.
    assert!(build_ulam(&map, &partition, None, 512, 32).is_err());
    // Deeper n_max than the partition provides.
    assert!(build_ulam(&map, &partition, None, 16, 64).is_err());
}

