use groupext::dynamics::LsvMap;
use groupext::ensemble::{Harmonic, ObservableSpec};
use groupext::groups::CocycleSpec;
use groupext::inducing::build_return_partition;
use groupext::transfer::*;
fn main() {
    let map = LsvMap::new(0.3).unwrap();
    let partition = build_return_partition(&map, 400, 20_000, 59).unwrap();
    let cocycle = CocycleSpec::so2(2.399963229728653, 1.0, 1.0).unwrap();
    let obs = ObservableSpec::trigonometric(
        vec![1.0, 0.0],
        vec![Harmonic { frequency: 1, cos_coeff: vec![0.0, 0.4], sin_coeff: vec![0.5, 0.0] }],
    ).unwrap();
    for m in [64usize, 128, 256, 512, 1024] {
        let n_max = 16 + (3.0 * (m as f64).powf(0.3)) as u64 * 4;
        let op = build_ulam(&map, &partition, Some(&cocycle), m, n_max).unwrap();
        let sol = solve_chi(&op, &obs).unwrap();
        let res = martingale_residual(&op, &obs, &sol.chi).unwrap();
        let spec = leading_spectrum(&op, 4).unwrap();
        println!("m={m:5} n_max={n_max:3} rho={:.4} residual={res:.5}", spec.radius);
    }
}
