mod common;

use common::*;
use mlar::likelihood::{component_loglik, manifest_loglik, total_loglik};
use mlar::{ModelSpec, Parameters, QuadratureGrid, ResponseFamily};
use proptest::prelude::*;

fn grid(spec: &ModelSpec, params: &Parameters) -> QuadratureGrid {
    QuadratureGrid::new(spec.q, spec.knot_bound, &params.rho).unwrap()
}

#[test]
fn total_matches_path_enumeration_all_families() {
    let mut r = rng(11);
    for fam in all_families() {
        for _ in 0..10 {
            let (spec, params, data) = random_instance(fam, &mut r);
            let got = total_loglik(&spec, &data, &params, &grid(&spec, &params)).unwrap();
            let want = brute_loglik(&spec, &params, &data);
            assert!(rel(got, want) < 1e-10, "{fam:?}: {got} vs {want}");
        }
    }
}

#[test]
fn fixed_size_instance_matches_enumeration() {
    let mut r = rng(12);
    for fam in all_families() {
        let spec = ModelSpec::new(fam, 1, 2, 5).unwrap();
        let params = random_params(&spec, &mut r);
        let data = random_data(fam, 4, 3, 1, &mut r);
        let got = total_loglik(&spec, &data, &params, &grid(&spec, &params)).unwrap();
        let want = brute_loglik(&spec, &params, &data);
        assert!(rel(got, want) < 1e-10, "{fam:?}: {got} vs {want}");
    }
}

#[test]
fn component_matches_enumeration_tightly() {
    let mut r = rng(13);
    for fam in all_families() {
        let spec = ModelSpec::new(fam, 2, 2, 4).unwrap();
        let params = random_params(&spec, &mut r);
        let data = random_data(fam, 2, 3, 2, &mut r);
        let g = grid(&spec, &params);
        for i in 0..2 {
            for h in 0..2 {
                let got = component_loglik(&spec, &data, &params, &g, i, h).unwrap();
                let want = brute_component(&spec, &params, &data, i, h).ln();
                assert!(rel(got, want) < 1e-12, "{fam:?} i={i} h={h}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn two_component_manifest_is_the_direct_mixture() {
    let mut r = rng(14);
    for fam in all_families() {
        let spec = ModelSpec::new(fam, 1, 2, 5).unwrap();
        let params = random_params(&spec, &mut r);
        let data = random_data(fam, 3, 3, 1, &mut r);
        let g = grid(&spec, &params);
        for i in 0..3 {
            let p1 = brute_component(&spec, &params, &data, i, 0);
            let p2 = brute_component(&spec, &params, &data, i, 1);
            let want = (params.pi[0] * p1 + params.pi[1] * p2).ln();
            let got = manifest_loglik(&spec, &data, &params, &g, i).unwrap();
            assert!(rel(got, want) < 1e-12);
        }
    }
}

#[test]
fn single_subject_total_is_its_manifest() {
    let mut r = rng(15);
    let spec = ModelSpec::new(ResponseFamily::OrdinalLogit { categories: 4 }, 1, 2, 7).unwrap();
    let params = random_params(&spec, &mut r);
    let data = random_data(spec.family, 1, 4, 1, &mut r);
    let g = grid(&spec, &params);
    assert_eq!(
        total_loglik(&spec, &data, &params, &g).unwrap(),
        manifest_loglik(&spec, &data, &params, &g, 0).unwrap()
    );
}

fn tie(params: &Parameters, pi1: f64) -> Parameters {
    Parameters {
        xi: vec![0.0, 0.0],
        rho: vec![params.rho[0], params.rho[0]],
        pi: vec![pi1, 1.0 - pi1],
        ..params.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn tied_components_collapse_to_one(seed in any::<u64>(), fam_ix in 0usize..5, pi1 in 0.01f64..0.99) {
        let mut r = rng(seed);
        let fam = all_families()[fam_ix];
        let one = ModelSpec::new(fam, 1, 1, 9).unwrap();
        let p1 = random_params(&one, &mut r);
        let data = random_data(fam, 20, 4, 1, &mut r);
        let two = one.with_k(2);
        let p2 = tie(&p1, pi1);
        let l1 = total_loglik(&one, &data, &p1, &grid(&one, &p1)).unwrap();
        let l2 = total_loglik(&two, &data, &p2, &grid(&two, &p2)).unwrap();
        prop_assert!((l1 - l2).abs() < 1e-8, "{} vs {}", l1, l2);
    }

    #[test]
    fn relabeling_components_leaves_loglik(seed in any::<u64>(), fam_ix in 0usize..5) {
        let mut r = rng(seed);
        let fam = all_families()[fam_ix];
        let spec = ModelSpec::new(fam, 1, 3, 7).unwrap();
        let params = random_params(&spec, &mut r);
        let data = random_data(fam, 10, 3, 1, &mut r);
        let base = total_loglik(&spec, &data, &params, &grid(&spec, &params)).unwrap();
        for perm in [[1, 0, 2], [2, 1, 0], [1, 2, 0]] {
            let q = params.relabel(&perm).unwrap();
            prop_assert_eq!(q.xi[0], 0.0);
            let l = total_loglik(&spec, &data, &q, &grid(&spec, &q)).unwrap();
            prop_assert!(rel(l, base) < 1e-12);
        }
    }

    #[test]
    fn duplicated_panel_doubles_loglik(seed in any::<u64>(), fam_ix in 0usize..5) {
        let mut r = rng(seed);
        let fam = all_families()[fam_ix];
        let spec = ModelSpec::new(fam, 2, 2, 7).unwrap();
        let params = random_params(&spec, &mut r);
        let data = random_data(fam, 9, 3, 2, &mut r);
        let twice = data.stack(&data).unwrap();
        let g = grid(&spec, &params);
        let l1 = total_loglik(&spec, &data, &params, &g).unwrap();
        let l2 = total_loglik(&spec, &twice, &params, &g).unwrap();
        prop_assert!(rel(l2, 2.0 * l1) < 1e-13);
    }

    #[test]
    fn weights_are_stochastic(q in 3usize..40, bound in 0.5f64..6.0, rho in -0.99f64..0.99) {
        let g = QuadratureGrid::new(q, bound, &[rho]).unwrap();
        prop_assert!((g.w_init.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for row in g.w_trans[0].rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&w| w >= 0.0));
        }
        let want = trans_weights(&g.knots, rho);
        for (m1, row) in want.iter().enumerate() {
            for (m2, w) in row.iter().enumerate() {
                prop_assert!((g.w_trans[0][[m1, m2]] - w).abs() < 1e-12);
            }
        }
    }
}
