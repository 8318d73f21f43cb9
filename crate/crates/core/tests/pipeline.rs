use std::f64::consts::{PI, SQRT_2};

use kslayers_core::analysis::{self, FixedPointOptions};
use kslayers_core::ansatz::{build_ansatz, lambda_of_eps, solve_epsilon, AnsatzOptions};
use kslayers_core::bvp::{self, ContinuationOptions};
use kslayers_core::greens::solve_layers;
use kslayers_core::nondegen::sweep_point;
use kslayers_core::specfun::{modified_bessel, xi_zeta};
use kslayers_core::{GridSpec, OuterMode, Profile};
use proptest::prelude::*;

#[test]
fn ansatz_newton_and_report_at_small_eps() {
    let eps = 0.015;
    let lambda = lambda_of_eps(eps);
    let a = build_ansatz(lambda, AnsatzOptions::default()).unwrap();
    let p = bvp::solve_bvp(lambda, &a.profile).unwrap();
    assert!(p.newton_iters <= 5, "{} iterations", p.newton_iters);
    assert!(p.residual_norm <= bvp::RESIDUAL_TOL);
    let (cfg, _) = solve_layers(1, 2.0 * SQRT_2 * eps, OuterMode::DirichletOne).unwrap();
    let rep = bvp::concentration_report(&p, &cfg).unwrap();
    assert!((rep.origin_mass / (8.0 * PI) - 1.0).abs() < 1e-2);
    assert!(rep.total_mass > rep.origin_mass);
}

#[test]
fn fixed_point_lands_close_to_the_newton_solution() {
    let eps = 0.02;
    let lambda = lambda_of_eps(eps);
    let a = build_ansatz(lambda, AnsatzOptions::default()).unwrap();
    let fp = analysis::fixed_point(&a.profile, lambda, FixedPointOptions::default()).unwrap();
    assert!(fp.contraction_factor < 1.0);
    let solved = bvp::solve_bvp(lambda, &a.profile).unwrap();
    let corrected: Vec<f64> = a.profile.values.iter().zip(&fp.phi).map(|(u, p)| u + p).collect();
    let gap = corrected.iter().zip(&solved.profile.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-8, "gap {gap:e}");
}

#[test]
fn constant_start_finds_the_lower_solution() {
    let lambda = 1e-3;
    let grid = GridSpec::new(300, 1e-2, 1e-2).build().unwrap();
    let n = grid.len();
    let p = bvp::solve_bvp(lambda, &Profile::from_values(grid, vec![0.0; n]).unwrap()).unwrap();
    let c = p.u0_value;
    // Newton stops on the per-volume residual, so the constant is exact to about 1e-9.
    assert!((c / (lambda * c.exp()) - 1.0).abs() < 1e-6);
    assert!(p.profile.values.iter().all(|u| (u - c).abs() < 1e-9));
}

#[test]
fn nondegeneracy_grid_is_bounded_away_from_zero() {
    for k in 1..=4 {
        for b in [1e-4, 1e-3, 1e-2] {
            let row = sweep_point(k, b).unwrap();
            assert!(row.det.abs() > 1e-2, "k {k} b {b}: {}", row.det);
            assert_eq!(row.alphas.len(), k + 1);
        }
    }
}

#[test]
fn branches_are_disjoint_near_onset() {
    let opts = ContinuationOptions::default();
    let plus = bvp::bifurcation_branch(2, 1, 8, &opts).unwrap();
    let minus = bvp::bifurcation_branch(2, -1, 8, &opts).unwrap();
    assert!(bvp::branch_separation(&plus, &minus) > 1e-4);
    assert!(plus.points.iter().all(|p| p.u0_value > 1.0 && p.zero_count == 1));
    assert!(minus.points.iter().all(|p| p.u0_value < 1.0 && p.zero_count == 1));
}

#[test]
fn third_branch_has_two_zeros() {
    let b = bvp::bifurcation_branch(3, 1, 3, &ContinuationOptions::default()).unwrap();
    assert!(b.points.iter().all(|p| p.zero_count == 2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn epsilon_round_trip(eps in 0.005f64..0.25) {
        let back = solve_epsilon(lambda_of_eps(eps)).unwrap();
        prop_assert!(((back - eps) / eps).abs() < 1e-10);
    }

    #[test]
    fn bessel_wronskian(r in 1e-6f64..30.0) {
        let e = modified_bessel(r).unwrap();
        prop_assert!((e.wronskian() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pair_satisfies_the_screened_equation(r in 0.3f64..1.0) {
        // ξ'' + ξ'/r − ξ = 0 by central differences.
        let h = 1e-4;
        let f = |x: f64| xi_zeta(x).unwrap();
        let (a, b, c) = (f(r - h), f(r), f(r + h));
        let lap = (a.zeta - 2.0 * b.zeta + c.zeta) / (h * h) + (c.zeta - a.zeta) / (2.0 * h * r);
        prop_assert!((lap - b.zeta).abs() < 1e-5 * (1.0 + b.zeta.abs()));
    }

    #[test]
    fn reflection_law_holds(k in 1usize..=4, lb in -4.0f64..-1.0, neumann in any::<bool>()) {
        let mode = if neumann { OuterMode::Neumann } else { OuterMode::DirichletOne };
        let (cfg, g) = solve_layers(k, 10f64.powf(lb), mode).unwrap();
        prop_assert!(g.reflection_defects().iter().all(|d| d.abs() < 1e-10));
        prop_assert!(cfg.alphas.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(cfg.alphas.iter().all(|a| *a > 0.0 && *a <= 1.0));
    }
}
