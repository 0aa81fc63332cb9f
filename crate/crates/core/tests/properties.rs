use eigenfed::estimators::{self, LocalSolution};
use eigenfed::metrics::{
    bound_simplified, bound_subgaussian, check_assumptions, intdim, subspace_dist2, subspace_dist_f, BoundInputs,
};
use eigenfed::models::{self, derive_seed};
use eigenfed::{Matrix, SubspaceEstimate};
use proptest::prelude::*;

fn noisy_solutions(d: usize, r: usize, m: usize, seed: u64) -> (SubspaceEstimate, Vec<LocalSolution>) {
    let model = models::model_m1(d, r, 0.5, 1.0, 0.2).unwrap().with_basis_seed(seed);
    let (x, v1) = models::realize_matrix(&model).unwrap();
    let sols = models::gaussian_nodes(&x, m, 4 * d, seed)
        .unwrap()
        .iter()
        .map(|n| estimators::solve_local(n.node_id, &n.local_matrix, r).unwrap())
        .collect();
    (v1, sols)
}

fn rotate(sol: &LocalSolution, seed: u64) -> LocalSolution {
    let r = sol.estimate.dim_subspace();
    let q = models::haar_orthogonal(r, seed);
    LocalSolution::new(
        sol.node_id,
        SubspaceEstimate::with_tolerance(sol.estimate.basis() * q, 1e-9).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn aggregates_ignore_local_orthogonal_ambiguity(
        seed in any::<u64>(),
        r in 1usize..4,
        m in 2usize..6,
    ) {
        let (_, sols) = noisy_solutions(15, r, m, seed);
        let rotated: Vec<_> = sols.iter().map(|s| rotate(s, derive_seed(seed, 7, s.node_id as u64))).collect();
        let a = estimators::procrustes_fix_default(&sols).unwrap();
        let b = estimators::procrustes_fix_default(&rotated).unwrap();
        prop_assert!(subspace_dist2(a.basis().unwrap(), b.basis().unwrap()).unwrap() <= 1e-8);
        let a = estimators::iterative_refinement(&sols, 2).unwrap();
        let b = estimators::iterative_refinement(&rotated, 2).unwrap();
        prop_assert!(subspace_dist2(a.basis().unwrap(), b.basis().unwrap()).unwrap() <= 1e-8);
        let a = estimators::projector_average(&sols).unwrap();
        let b = estimators::projector_average(&rotated).unwrap();
        prop_assert!(subspace_dist2(a.basis().unwrap(), b.basis().unwrap()).unwrap() <= 1e-8);
    }

    #[test]
    fn node_order_only_matters_through_the_reference(seed in any::<u64>(), m in 3usize..7) {
        let (_, sols) = noisy_solutions(12, 2, m, seed);
        // keep node 0 as reference, permute the rest
        let mut permuted = sols.clone();
        permuted[1..].reverse();
        let a = estimators::procrustes_fix_default(&sols).unwrap();
        let b = estimators::procrustes_fix_default(&permuted).unwrap();
        prop_assert!(subspace_dist2(a.basis().unwrap(), b.basis().unwrap()).unwrap() <= 1e-10);
        let mut shuffled = sols.clone();
        shuffled.rotate_left(1);
        let a = estimators::projector_average(&sols).unwrap();
        let b = estimators::projector_average(&shuffled).unwrap();
        prop_assert!(subspace_dist2(a.basis().unwrap(), b.basis().unwrap()).unwrap() <= 1e-10);
    }

    #[test]
    fn distance_norm_sandwich_and_symmetry(seed in any::<u64>(), d in 3usize..12, r in 1usize..3) {
        let u = models::haar_frame(d, r, seed).unwrap();
        let v = models::haar_frame(d, r, seed ^ 0x5555).unwrap();
        let d2 = subspace_dist2(&u, &v).unwrap();
        let df = subspace_dist_f(&u, &v).unwrap();
        prop_assert!((0.0..=1.0).contains(&d2));
        prop_assert!(df + 1e-12 >= d2);
        prop_assert!(df <= (2.0 * r as f64).sqrt() * d2 + 1e-12);
        prop_assert!((d2 - subspace_dist2(&v, &u).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn distance_triangle_inequality(seed in any::<u64>(), d in 3usize..10) {
        let a = models::haar_frame(d, 2, seed).unwrap();
        let b = models::haar_frame(d, 2, seed.wrapping_add(1)).unwrap();
        let c = models::haar_frame(d, 2, seed.wrapping_add(2)).unwrap();
        let ab = subspace_dist2(&a, &b).unwrap();
        let bc = subspace_dist2(&b, &c).unwrap();
        let ac = subspace_dist2(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-10);
    }

    #[test]
    fn intdim_between_one_and_rank(seed in any::<u64>(), d in 2usize..10, k in 1usize..10) {
        let k = k.min(d);
        let f = models::sample_with_root(&Matrix::identity(d, d), k, seed);
        let a = f.transpose() * f;
        let v = intdim(&a).unwrap();
        prop_assert!(v >= 1.0 - 1e-10 && v <= k as f64 + 1e-10);
    }
}

#[test]
fn simplified_bound_monotone_on_grid() {
    let ns = [250.0, 1000.0, 4000.0];
    let ms = [5.0, 10.0, 20.0];
    let rs = [2.0, 8.0, 32.0];
    for &r in &rs {
        for &m in &ms {
            for w in ns.windows(2) {
                assert!(bound_simplified(r, w[1], m, 0.2) < bound_simplified(r, w[0], m, 0.2));
            }
        }
        for &n in &ns {
            for w in ms.windows(2) {
                assert!(bound_simplified(r, n, w[1], 0.2) < bound_simplified(r, n, w[0], 0.2));
            }
        }
    }
    for &n in &ns {
        for &m in &ms {
            for w in rs.windows(2) {
                assert!(bound_simplified(w[1], n, m, 0.2) > bound_simplified(w[0], n, m, 0.2));
            }
        }
    }
}

/// The first term grows like `ln m`, so for small `n` the rate is not monotone
/// in `m` beyond a few dozen machines.
#[test]
fn simplified_bound_can_grow_with_m() {
    assert!(bound_simplified(2.0, 250.0, 80.0, 0.2) > bound_simplified(2.0, 250.0, 40.0, 0.2));
}

#[test]
fn subgaussian_bound_increases_with_intrinsic_dimension() {
    let base = BoundInputs {
        delta: 0.2,
        m: 50,
        n: 2000,
        d: 100,
        r_star: 1.0,
        p: 0.05,
        b: None,
        norm_x: 1.0,
    };
    let mut last = 0.0;
    for r_star in [1.0, 2.0, 5.0, 20.0, 60.0] {
        let v = bound_subgaussian(&BoundInputs { r_star, ..base }, 2.0).unwrap().value;
        assert!(v > last);
        last = v;
    }
}

/// The `‖Eⁱ‖₂ < δ/8` requirement is demanding: with M1 (δ = 0.2, d = 50,
/// r = 4) a node needs on the order of 10⁵ samples to satisfy it. At n = 1000
/// the spectral error is around 0.1, four times the threshold.
#[test]
fn assumption_check_at_desk_scale() {
    let model = models::model_m1(50, 4, 0.5, 1.0, 0.2).unwrap();
    let mut errors = Vec::new();
    for seed in 0..10u64 {
        let model = model.clone().with_basis_seed(seed);
        let (x, _) = models::realize_matrix(&model).unwrap();
        let x_hat = models::gaussian_nodes(&x, 1, 1000, seed).unwrap().remove(0).local_matrix;
        let report = check_assumptions(&x, &[x_hat], 4).unwrap();
        assert!(report.eigengap_ok);
        assert!(!report.local_error_ok);
        errors.push(report.max_local_error);
    }
    assert!(errors.iter().all(|e| (0.05..0.2).contains(e)), "{errors:?}");

    let (x, _) = models::realize_matrix(&model.with_basis_seed(3)).unwrap();
    let x_hat = models::gaussian_nodes(&x, 1, 100_000, 3).unwrap().remove(0).local_matrix;
    assert!(check_assumptions(&x, &[x_hat], 4).unwrap().holds());
}
