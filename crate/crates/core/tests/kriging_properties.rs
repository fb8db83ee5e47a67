use std::sync::Arc;

use fokcp::kriging::{assemble_system, krige, krige_detailed, solve_direct, solve_weights, SolveMethod, SolverSettings};
use fokcp::{Curve, Site, SpatialFunctionalDataset, TimeGrid, VariogramModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(seed: u64, n: usize) -> (SpatialFunctionalDataset, VariogramModel, Site) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Arc::new(TimeGrid::uniform(0.0, 1.0, 12).unwrap());
    let sites: Vec<Site> = (0..n)
        .map(|i| Site::new(format!("s{i}"), rng.random::<f64>() * 4.0, rng.random::<f64>() * 4.0))
        .collect();
    let curves = (0..n)
        .map(|_| {
            let (a, b, c) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
            Curve::from_fn(grid.clone(), |t| a + b * t + (c * 6.0 * t).sin()).unwrap()
        })
        .collect();
    let model = VariogramModel::exponential(
        rng.random::<f64>() * 0.2,
        0.5 + rng.random::<f64>(),
        0.3 + rng.random::<f64>() * 3.0,
    )
    .unwrap();
    let target = Site::at(rng.random::<f64>() * 4.0, rng.random::<f64>() * 4.0);
    (SpatialFunctionalDataset::new(grid, sites, curves).unwrap(), model, target)
}

#[test]
fn iterative_agrees_with_direct_on_random_instances() {
    let settings = SolverSettings::default();
    let mut by_cg = 0;
    for seed in 0..100 {
        let n = 1 + (seed as usize * 7) % 30;
        let (data, model, target) = random_instance(seed, n);
        let sys = assemble_system(&data, &model, &target).unwrap();
        let sol = solve_weights(&sys, &settings).unwrap();
        let (direct, _) = solve_direct(&sys).unwrap();
        let sum: f64 = sol.lambda.iter().sum();
        assert!((sum - 1.0).abs() < 1e-8, "seed {seed}: Σλ = {sum}");
        assert!(sol.residual_norm <= settings.tol);
        for (a, b) in sol.lambda.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-8, "seed {seed}: {a} vs {b}");
        }
        if sol.method == SolveMethod::ProjectedCg {
            by_cg += 1;
        }
    }
    assert!(by_cg >= 90, "only {by_cg} of 100 converged by plain CG");
}

#[test]
fn zero_nugget_interpolates_data_sites() {
    for seed in 0..20 {
        let (data, _, _) = random_instance(seed + 500, 10);
        let model = VariogramModel::exponential(0.0, 1.0, 2.0).unwrap();
        for (site, curve) in data.sites().iter().zip(data.curves()) {
            let p = krige(&data, &model, &Site::at(site.u, site.v), &SolverSettings::default()).unwrap();
            for (a, b) in p.values().iter().zip(curve.values()) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn near_coincident_target_still_interpolates() {
    let (data, _, _) = random_instance(77, 12);
    let model = VariogramModel::exponential(0.0, 1.0, 2.0).unwrap();
    let s = &data.sites()[3];
    let out = krige_detailed(&data, &model, &Site::at(s.u + 1e-7, s.v), &SolverSettings::default()).unwrap();
    assert_ne!(out.solution.method, SolveMethod::Coincident);
    for (a, b) in out.curve.values().iter().zip(data.curves()[3].values()) {
        assert!((a - b).abs() < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn permutation_invariance(seed in 0u64..10_000, n in 2usize..20, rot in 1usize..19) {
        let (data, model, target) = random_instance(seed, n);
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let permuted = data.subset(&perm).unwrap();
        let settings = SolverSettings::default();
        let a = krige_detailed(&data, &model, &target, &settings).unwrap();
        let b = krige_detailed(&permuted, &model, &target, &settings).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            prop_assert!((b.solution.lambda[k] - a.solution.lambda[p]).abs() < 1e-10);
        }
        for (x, y) in a.curve.values().iter().zip(b.curve.values()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn translation_equivariance(seed in 0u64..10_000, n in 1usize..20, c in -50.0f64..50.0) {
        let (data, model, target) = random_instance(seed, n);
        let shifted = data.map_curves(|x| x.map(|v| v + c)).unwrap();
        let settings = SolverSettings::default();
        let a = krige(&data, &model, &target, &settings).unwrap();
        let b = krige(&shifted, &model, &target, &settings).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x + c - y).abs() < 1e-8 * (1.0 + c.abs()));
        }
    }
}
