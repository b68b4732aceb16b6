use super::*;
use crate::ensemble::ObservableSpec;
use crate::groups::{fix_space, rotated_sum_sup, DichotomyMode, FIX_THRESHOLD};
use approx::assert_relative_eq;
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[test]
fn doubling_partition_is_dyadic() {
    let map = LsvMap::new(0.0).unwrap();
    let p = build_return_partition(&map, 3, 200_000, 12).unwrap();
    let c = &p.cylinders;
    assert_eq!((c[0].left, c[0].right), (0.75, 1.0));
    assert_eq!((c[1].left, c[1].right), (0.625, 0.75));
    assert_eq!((c[2].left, c[2].right), (0.5625, 0.625));
    // mu_Y is uniform for the doubling map: masses 1/2, 1/4, 1/8.
    assert!((c[0].mu_hat - 0.5).abs() < 0.01);
    assert!((c[1].mu_hat - 0.25).abs() < 0.01);
    assert!((c[2].mu_hat - 0.125).abs() < 0.005);
    assert!(p.mu_cross_check < 0.1);

    // Brute-force return times on a fine grid agree with the endpoints.
    for i in 0..2_000 {
        let y = 0.5 + 0.5 * (i as f64 + 0.5) / 2_000.0;
        let r = map.return_time(y).unwrap();
        match p.classify(y) {
            Some(n) => assert_eq!(n, r),
            None => assert!(r > 3),
        }
    }
}

#[test]
fn partition_covers_y() {
    for gamma in [0.0, 0.3, 0.6, 0.75] {
        let map = LsvMap::new(gamma).unwrap();
        let p = build_return_partition(&map, 200, 50_000, 13).unwrap();
        let total: f64 = p.cylinders.iter().map(|c| c.length()).sum();
        let tail_len = p.cylinders.last().unwrap().left - 0.5;
        assert!(
            (total + tail_len - 0.5).abs() < 1e-8,
            "gamma {gamma}: coverage {}",
            total + tail_len
        );
        for w in p.cylinders.windows(2) {
            assert_eq!(w[0].left, w[1].right, "cylinders must tile Y downward");
        }
    }
}

#[test]
fn classification_matches_orbits_gamma06() {
    let map = LsvMap::new(0.6).unwrap();
    let p = build_return_partition(&map, 1_000, 50_000, 14).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let y = 0.5 + 0.5 * rng.gen::<f64>();
        let r = map.return_time(y).unwrap();
        match p.classify(y) {
            Some(n) if n != r => mismatches += 1,
            None if r <= 1_000 => mismatches += 1,
            _ => {}
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn induced_values_special_cases() {
    let map = LsvMap::new(0.6).unwrap();
    // Trivial cocycle, constant v: V = r v0, V* = r |v0|, H = I.
    let cocycle = CocycleSpec::trivial(1);
    let obs = ObservableSpec::constant(vec![0.5]);
    let s = induced_values(&map, &cocycle, &obs, 0.682).unwrap();
    let r = map.return_time(0.682).unwrap();
    assert_eq!(s.r, r);
    assert_relative_eq!(s.v[0], 0.5 * r as f64, epsilon = 1e-12);
    assert_relative_eq!(s.v_star, 0.5 * r as f64, epsilon = 1e-12);

    // Constant cocycle: H = h0^r.
    let cocycle = CocycleSpec::so2(0.9, 0.0, 1.0).unwrap();
    let obs = ObservableSpec::constant(vec![1.0, 0.0]);
    let s = induced_values(&map, &cocycle, &obs, 0.682).unwrap();
    let h0 = cocycle.at_zero();
    let mut pow = crate::groups::GroupElement::identity(2);
    for _ in 0..s.r {
        pow = pow.compose(&h0);
    }
    assert!(s.h.max_entry_distance(&pow) < 1e-12);
}

#[test]
fn induced_values_term_by_term_oracle() {
    // V recomputed with independent cocycle_product calls per term.
    let map = LsvMap::new(0.65).unwrap();
    let cocycle = CocycleSpec::so3([0.1, -0.4, 1.3], [0.6, 0.2, 0.0], 0.7).unwrap();
    let obs = ObservableSpec::holder_power(vec![0.2, -0.1, 0.5], 0.7, vec![1.0, 0.3, -0.4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..20 {
        let y = 0.5 + 0.5 * rng.gen::<f64>();
        let s = induced_values(&map, &cocycle, &obs, y).unwrap();
        let mut expect = DVector::zeros(3);
        let mut x = y;
        let mut vbuf = vec![0.0; 3];
        for j in 0..s.r {
            let hj = cocycle.orbit_product(&map, y, j as usize).unwrap();
            obs.eval(x, &mut vbuf);
            expect += hj.matrix() * DVector::from_column_slice(&vbuf);
            x = map.step(x);
        }
        for i in 0..3 {
            assert!(
                (s.v[i] - expect[i]).abs() < 1e-10,
                "component {i}: {} vs {}",
                s.v[i],
                expect[i]
            );
        }
        // V* dominates both endpoints of the partial-sum sequence.
        let vnorm = s.v.iter().map(|t| t * t).sum::<f64>().sqrt();
        obs.eval(y, &mut vbuf);
        let v_at_y = vbuf.iter().map(|t| t * t).sum::<f64>().sqrt();
        assert!(s.v_star >= vnorm - 1e-12);
        assert!(s.v_star >= v_at_y - 1e-12);
        // Second pass reproduces V* bit-identically.
        let s2 = induced_values(&map, &cocycle, &obs, y).unwrap();
        assert_eq!(s.v_star, s2.v_star);
    }
}

#[test]
fn synthetic_power_law_tail_regression() {
    // Exact tail mu(r > n) = n^{-2}: the fitted slope is -2.
    let fit = fit_tail_window((10, 1_000), |n| (n as f64).powi(-2)).unwrap();
    assert_relative_eq!(fit.slope, -2.0, epsilon = 0.01);
    assert!(fit.power_law);
}

#[test]
fn geometric_tail_is_flagged() {
    // gamma = 0 has a 2^{-n} return tail: not a power law.
    let map = LsvMap::new(0.0).unwrap();
    let returns = sample_return_times(&map, 50_000, 1_000, 17).unwrap();
    let fit = tail_exponent_fit(&returns, (2, 12)).unwrap();
    assert!(!fit.power_law, "curvature {}", fit.curvature);
}

#[test]
fn tail_exponent_monte_carlo_gamma06() {
    let map = LsvMap::new(0.6).unwrap();
    let returns = sample_return_times(&map, 300_000, 1_000, 18).unwrap();
    let fit = tail_exponent_fit(&returns, (10, 1_000)).unwrap();
    let target = -1.0 / 0.6;
    assert!(
        (fit.slope - target).abs() < 0.15,
        "slope {} vs {}",
        fit.slope,
        target
    );
    assert!(fit.power_law);
}

#[test]
fn kac_formula_consistency() {
    // r_bar from the partition times the time fraction in Y from an
    // independent orbit must be 1 within 2%.
    let map = LsvMap::new(0.3).unwrap();
    let p = build_return_partition(&map, 400, 200_000, 19).unwrap();
    let tail_fit = {
        let returns = sample_return_times(&map, 100_000, 1_000, 20).unwrap();
        tail_exponent_fit(&returns, (2, 60)).unwrap()
    };
    let r_bar = p.mean_return_time(-tail_fit.slope);
    let mu_y = time_fraction_in_y(&map, 2_000_000, 10_000, 21);
    let product = r_bar * mu_y;
    assert!(
        (product - 1.0).abs() < 0.02,
        "Kac product {product} (r_bar {r_bar}, mu_y {mu_y})"
    );
}

#[test]
fn vstar_fix_mode_grows_linearly() {
    // Constant v0 in Fix h(0), constant cocycle: partial sums grow like l,
    // so max V* over Z_n is exactly n |v0| and the exponent is 1.
    let map = LsvMap::new(0.7).unwrap();
    let p = build_return_partition(&map, 1_000, 50_000, 22).unwrap();
    let cocycle = CocycleSpec::so3([0.0, 0.0, 2.4], [0.0; 3], 1.0).unwrap();
    let obs = ObservableSpec::constant(vec![0.0, 0.0, 1.0]);
    let ns: Vec<u64> = log_spaced(10, 1_000, 16);
    let samples = sample_vstar_per_cylinder(&map, &cocycle, &obs, &p, &ns, 12, 23).unwrap();
    let fit = vstar_scaling_fit(&samples, (10, 1_000)).unwrap();
    assert!(
        (fit.exponent - 1.0).abs() < 0.05,
        "exponent {}",
        fit.exponent
    );
    assert!(!fit.bounded);
}

#[test]
fn vstar_vanishing_observable_scalings() {
    let map = LsvMap::new(0.7).unwrap();
    let p = build_return_partition(&map, 1_000, 50_000, 24).unwrap();
    let ns: Vec<u64> = log_spaced(10, 1_000, 16);

    // eta = 1 > gamma: the nominal exponent 1 - eta/gamma is negative, so
    // V* is uniformly bounded over cylinders and the fit reports it flat.
    let cocycle = CocycleSpec::trivial(1);
    let obs = ObservableSpec::holder_power(vec![0.0], 1.0, vec![1.0]).unwrap();
    let samples = sample_vstar_per_cylinder(&map, &cocycle, &obs, &p, &ns, 12, 25).unwrap();
    let fit = vstar_scaling_fit(&samples, (10, 1_000)).unwrap();
    assert!(fit.bounded, "exponent {}", fit.exponent);

    // eta = 0.5: V* grows like n^{1 - eta/gamma} = n^{0.286}.
    let obs = ObservableSpec::holder_power(vec![0.0], 0.5, vec![1.0]).unwrap();
    let samples = sample_vstar_per_cylinder(&map, &cocycle, &obs, &p, &ns, 12, 26).unwrap();
    let fit = vstar_scaling_fit(&samples, (10, 1_000)).unwrap();
    let target = 1.0 - 0.5 / 0.7;
    assert!(
        (fit.exponent - target).abs() < 0.15,
        "exponent {} vs {}",
        fit.exponent,
        target
    );
}

#[test]
fn growth_bounds_hold_gamma06() {
    let map = LsvMap::new(0.6).unwrap();
    let p = build_return_partition(&map, 1_000, 50_000, 27).unwrap();
    let cocycle = CocycleSpec::so2(2.4, 0.9, 1.0).unwrap();
    let obs = ObservableSpec::constant(vec![1.0, 0.0]);
    let ns: Vec<u64> = log_spaced(10, 1_000, 16);
    let rep = verify_growth_bounds(&map, &cocycle, &obs, &p, &ns, 24, 28).unwrap();
    assert!(rep.v_bound_ok, "sup |V|/n exceeded |v|_inf");
    assert!(rep.v_trend <= 0.05, "v trend {}", rep.v_trend);
    assert!(rep.h_trend <= 0.05, "H oscillation trend {}", rep.h_trend);
    assert!(
        rep.geometry_trend <= 0.05,
        "geometry trend {}",
        rep.geometry_trend
    );
    // The excursion geometry constant is order one (example: ~ 1.2 at
    // gamma = 0.6), far below 10.
    let geo_max = rep.rows.iter().map(|r| r.geometry).fold(0.0f64, f64::max);
    assert!(geo_max <= 10.0, "geometry constant {geo_max}");
}

#[test]
fn summability_verdicts_match_exponent_comparison() {
    // gamma = 0.7: tail exponent 1/0.7 ~ 1.43.
    let map = LsvMap::new(0.7).unwrap();
    let p = build_return_partition(&map, 1_000, 300_000, 29).unwrap();
    let tail = tail_exponent_fit_from_partition(&p, (10, 1_000)).unwrap();
    let rep = verify_summability(&p, 1.0, 1.3, 0.15, &tail).unwrap();
    assert_eq!(rep.condition_ii_iii.verdict, Verdict::Convergent);
    assert!(rep.epsilon_comparison);
    let rep = verify_summability(&p, 1.0, 1.3, 0.5, &tail).unwrap();
    assert_eq!(rep.condition_ii_iii.verdict, Verdict::Divergent);
    assert!(!rep.epsilon_comparison);

    // gamma = 0.3: r in L^2, partial sums Cauchy.
    let map = LsvMap::new(0.3).unwrap();
    let p = build_return_partition(&map, 1_000, 300_000, 30).unwrap();
    let tail = tail_exponent_fit_from_partition(&p, (5, 200)).unwrap();
    let rep = verify_summability(&p, 1.0, 2.0, 0.15, &tail).unwrap();
    assert_eq!(rep.lp_condition.verdict, Verdict::Convergent);
    assert!(
        rep.lp_condition.increment_ratio < 0.5,
        "increment ratio {}",
        rep.lp_condition.increment_ratio
    );
}

#[test]
fn suppression_gate_on_rotated_sums() {
    // Projecting onto (Fix h(0))^perp keeps rotated sums bounded while the
    // Fix projection grows linearly; the ratio at L = 1e4 exceeds 1e2.
    let cocycle = CocycleSpec::so3([0.0, 0.0, 2.399963229728653], [0.0; 3], 1.0).unwrap();
    let h0 = cocycle.at_zero();
    let fs = fix_space(&h0, FIX_THRESHOLD).unwrap();
    let v0 = DVector::from_vec(vec![1.0, 1.0, 1.0]);
    let (perp, _) = fs.project(&v0, DichotomyMode::Perp);
    let (fix, _) = fs.project(&v0, DichotomyMode::Fix);
    let sup_perp = rotated_sum_sup(&h0, &perp, 10_000);
    let sup_fix = rotated_sum_sup(&h0, &fix, 10_000);
    assert!(
        sup_fix / sup_perp > 100.0,
        "ratio {} (fix {sup_fix}, perp {sup_perp})",
        sup_fix / sup_perp
    );
}

fn log_spaced(lo: u64, hi: u64, points: usize) -> Vec<u64> {
    let mut out: Vec<u64> = (0..=points)
        .map(|i| {
            (lo as f64 * (hi as f64 / lo as f64).powf(i as f64 / points as f64)).round() as u64
        })
        .collect();
    out.dedup();
    out
}
