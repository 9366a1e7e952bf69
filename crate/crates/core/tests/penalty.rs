mod common;

use certmpc::{QpProblem, SuboptimalityPair};
use common::{random_qp, rng, uniform_vec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn naive_cost(prob: &QpProblem, p: &DVector<f64>) -> f64 {
    let n = p.len();
    let mut s = prob.s0();
    for i in 0..n {
        s += prob.f()[i] * p[i];
        for j in 0..n {
            s += 0.5 * p[i] * prob.h()[(i, j)] * p[j];
        }
    }
    s
}

fn naive_psi(prob: &QpProblem, p: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..prob.n_c() {
        let mut r = -prob.b()[i];
        for j in 0..p.len() {
            r += prob.a()[(i, j)] * p[j];
        }
        if prob.hard_idx().contains(&i) {
            r += prob.eps_psi();
        }
        s += r.max(0.0).powi(2);
    }
    s
}

fn min_kink_distance(prob: &QpProblem, p: &DVector<f64>) -> f64 {
    let r = prob.a() * p - prob.b_eff();
    r.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cost_and_penalty_match_naive_sums(seed in any::<u64>(), scale in 0.1f64..3.0) {
        let mut r = rng(seed);
        let inst = random_qp(&mut r, 10, 20, 5);
        let p = uniform_vec(&mut r, 10, scale);
        let c = inst.prob.cost_value(&p).unwrap();
        prop_assert!((c - naive_cost(&inst.prob, &p)).abs() <= 1e-12 * c.abs().max(1.0));
        let psi = inst.prob.penalty_value(&p).unwrap();
        prop_assert!((psi - naive_psi(&inst.prob, &p)).abs() <= 1e-12 * psi.max(1.0));
        let rho = 37.0;
        let f = inst.prob.augmented_cost(rho, &p).unwrap();
        prop_assert!((f - (c + rho * psi)).abs() <= 1e-12 * f.max(1.0));
        prop_assert!(c >= 0.0);
    }

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>(), log_rho in -2.0f64..4.0) {
        let mut r = rng(seed);
        let inst = random_qp(&mut r, 10, 20, 5);
        let prob = &inst.prob;
        let rho = 10f64.powf(log_rho);
        let p = uniform_vec(&mut r, 10, 1.5);
        let h = 1e-6;
        prop_assume!(min_kink_distance(prob, &p) > 2.0 * h);
        let g = prob.augmented_gradient(rho, &p).unwrap();
        let mut fd = DVector::zeros(10);
        for j in 0..10 {
            let mut a = p.clone();
            let mut b = p.clone();
            a[j] += h;
            b[j] -= h;
            fd[j] = (prob.augmented_cost(rho, &a).unwrap() - prob.augmented_cost(rho, &b).unwrap()) / (2.0 * h);
        }
        let err = (&g - &fd).norm();
        prop_assert!(err <= 1e-5 * g.norm().max(1.0), "err {err:e} |g| {:e}", g.norm());
    }

    #[test]
    fn penalty_is_convex(seed in any::<u64>(), theta in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let inst = random_qp(&mut r, 10, 20, 5);
        let p1 = uniform_vec(&mut r, 10, 3.0);
        let p2 = uniform_vec(&mut r, 10, 3.0);
        let mid = &p1 * theta + &p2 * (1.0 - theta);
        let lhs = inst.prob.penalty_value(&mid).unwrap();
        let rhs = theta * inst.prob.penalty_value(&p1).unwrap()
            + (1.0 - theta) * inst.prob.penalty_value(&p2).unwrap();
        prop_assert!(lhs <= rhs + 1e-12 * rhs.max(1.0));
    }

    #[test]
    fn augmented_cost_is_mu0_strongly_convex(seed in any::<u64>(), rho in 0.0f64..1e3) {
        let mut r = rng(seed);
        let inst = random_qp(&mut r, 10, 20, 5);
        let prob = &inst.prob;
        let rho = rho.max(1e-9);
        let mu0 = certmpc::linalg::lambda_min(prob.h());
        let p1 = uniform_vec(&mut r, 10, 2.0);
        let p2 = uniform_vec(&mut r, 10, 2.0);
        let f1 = prob.augmented_cost(rho, &p1).unwrap();
        let f2 = prob.augmented_cost(rho, &p2).unwrap();
        let g1 = prob.augmented_gradient(rho, &p1).unwrap();
        let d = &p2 - &p1;
        let lower = f1 + g1.dot(&d) + 0.5 * mu0 * d.norm_squared();
        prop_assert!(f2 >= lower - 1e-10 * f2.abs().max(1.0));
    }

    #[test]
    fn small_penalty_implies_constraint_satisfaction(seed in any::<u64>(), t in 0.0f64..1.0) {
        let mut r = rng(seed);
        let inst = random_qp(&mut r, 6, 12, 6);
        let prob = &inst.prob;
        // Points on the segment from the interior point outwards, which cross
        // the constraint boundaries.
        let dir = uniform_vec(&mut r, 6, 1.0);
        let p = &inst.p_f + dir * (3.0 * t);
        let psi = prob.penalty_value(&p).unwrap();
        if psi <= prob.eps_psi().powi(2) {
            prop_assert!(prob.max_hard_violation(&p).unwrap() <= 0.0);
            prop_assert!(prob.max_soft_violation(&p).unwrap() <= prob.eps_psi());
        }
    }
}

#[test]
fn unconstrained_minimizer_has_zero_gradient_when_interior() {
    let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let f = DVector::from_vec(vec![-1.0, 0.5]);
    let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let b = DVector::from_vec(vec![100.0]);
    let pu = -h.clone().lu().solve(&f).unwrap();
    let s0 = 0.5 * f.dot(&h.clone().lu().solve(&f).unwrap()) + 0.1;
    let prob = QpProblem::all_soft(h, f, s0, a, b, 0.01).unwrap();
    assert!((prob.unconstrained_minimizer() - &pu).norm() < 1e-14);
    assert!(prob.augmented_gradient(5.0, &pu).unwrap().norm() < 1e-13);
}

#[test]
fn suboptimality_rejects_penalty_above_tolerance() {
    // 1-d soft row p <= 0, f0 = p^2/2; p = sqrt(2) eps gives psi = 2 eps^2.
    let eps = 1e-2;
    let prob = QpProblem::all_soft(
        DMatrix::from_element(1, 1, 1.0),
        DVector::zeros(1),
        0.0,
        DMatrix::from_element(1, 1, 1.0),
        DVector::zeros(1),
        eps,
    )
    .unwrap();
    let pair = SuboptimalityPair::new(1.0, eps).unwrap();
    let p = DVector::from_element(1, 2f64.sqrt() * eps);
    assert!((prob.penalty_value(&p).unwrap() - 2.0 * eps * eps).abs() < 1e-18);
    assert!(!prob.is_suboptimal(&p, 0.0, &pair).unwrap());
    assert!(prob.is_suboptimal(&DVector::zeros(1), 0.0, &pair).unwrap());
}
