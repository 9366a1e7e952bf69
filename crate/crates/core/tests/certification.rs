mod common;

use certmpc::certified::{d0_upper_bound, kappa0, qp_constants, z1};
use certmpc::fast_gradient::{advance, convergence_bound, nbar, radius_bound, FgWorkspace};
use certmpc::{
    certified_solve, solve_reference, stationary_point, CertificationConstants, FastGradientState,
    ScalingMode, SmoothnessPair, SolveExit, SuboptimalityPair,
};
use common::{random_qp, rng, uniform_vec};
use nalgebra::DVector;

const SLACK: f64 = 1e-9;

#[test]
fn rate_bound_holds_at_every_iteration() {
    let mut r = rng(11);
    for _ in 0..30 {
        let inst = random_qp(&mut r, 8, 16, 4);
        let prob = &inst.prob;
        let pair = SuboptimalityPair::new(0.05, 1e-2).unwrap();
        let k = CertificationConstants::for_problem(prob, &pair, ScalingMode::Conservative, inst.p_f.norm()).unwrap();
        let rho = k.rho;
        let smooth = k.smoothness().unwrap();
        let star = stationary_point(prob, rho, 1e-10).unwrap();
        let f_star = prob.augmented_cost(rho, &star.p).unwrap();
        let p0 = uniform_vec(&mut r, 8, 1.0);
        let r0 = radius_bound(prob.augmented_cost(rho, &p0).unwrap(), smooth.mu()).unwrap();
        let mut st = FastGradientState::new(p0, &smooth);
        let mut ws = FgWorkspace::new(8);
        let mut grad = |x: &DVector<f64>, out: &mut DVector<f64>| {
            out.copy_from(&prob.augmented_gradient(rho, x).unwrap())
        };
        for i in 0..3000u64 {
            let bound = convergence_bound(i, &smooth, r0);
            let gap = prob.augmented_cost(rho, &st.p).unwrap() - f_star;
            assert!(gap <= bound * (1.0 + 1e-12) + 1e-12 * f_star, "iter {i}: gap {gap:e} > {bound:e}");
            if bound < 1e-8 * f_star {
                break;
            }
            advance(&mut st, &mut grad, &smooth, &mut ws).unwrap();
        }
    }
}

#[test]
fn nbar_iterations_reach_requested_gap() {
    let mut r = rng(12);
    for _ in 0..30 {
        let inst = random_qp(&mut r, 6, 10, 0);
        let prob = &inst.prob;
        let rho = 50.0;
        let l = certmpc::linalg::lambda_max(prob.h()) + rho * 2.0 * certmpc::linalg::spectral_norm(prob.a()).powi(2);
        let mu = certmpc::linalg::lambda_min(prob.h());
        let smooth = SmoothnessPair::new(mu, l).unwrap();
        let p0 = DVector::zeros(6);
        let f0 = prob.augmented_cost(rho, &p0).unwrap();
        let star = stationary_point(prob, rho, 1e-11).unwrap();
        let f_star = prob.augmented_cost(rho, &star.p).unwrap();
        for eps in [1e-1, 1e-3, 1e-5] {
            let gamma = eps * mu / ((l + mu) * f0);
            let n = nbar(smooth.c(), gamma).unwrap();
            let mut st = FastGradientState::new(p0.clone(), &smooth);
            let mut ws = FgWorkspace::new(6);
            let mut grad = |x: &DVector<f64>, out: &mut DVector<f64>| {
                out.copy_from(&prob.augmented_gradient(rho, x).unwrap())
            };
            for _ in 0..n {
                advance(&mut st, &mut grad, &smooth, &mut ws).unwrap();
            }
            let gap = prob.augmented_cost(rho, &st.p).unwrap() - f_star;
            assert!(gap <= eps + 1e-12, "eps {eps}: gap {gap:e} after {n}");
        }
    }
}

/// The five preliminary bounds at the stationary point, tested as stated
/// with the Conservative constants.
#[test]
fn preliminary_bounds_hold_on_random_instances() {
    let mut r = rng(13);
    for trial in 0..40 {
        let inst = random_qp(&mut r, 10, 20, if trial % 2 == 0 { 0 } else { 6 });
        let prob = &inst.prob;
        let k = qp_constants(prob, ScalingMode::Conservative).unwrap();
        let d0 = d0_upper_bound(prob, inst.p_f.norm()).unwrap();
        let psi_pu = prob.penalty_value(&prob.unconstrained_minimizer()).unwrap();
        let kap = kappa0(k.l0, k.beta, k.mu0, psi_pu);
        // Optimum over the zero set of psi, where hard rows carry the tightening.
        let tightened = certmpc::QpProblem::all_soft(
            prob.h().clone(),
            prob.f().clone(),
            prob.s0(),
            prob.a().clone(),
            prob.b_eff().clone(),
            prob.eps_psi(),
        )
        .unwrap();
        let opt = solve_reference(&tightened, 1e-10).unwrap();
        for factor in [1.5, 10.0, 1e3] {
            let rho = factor * k.l0 / k.beta;
            let star = stationary_point(prob, rho, 1e-10).unwrap();
            let ps = &star.p;
            // Gradient of f0 at p*.
            let g0 = prob.cost_gradient(ps).unwrap().norm();
            assert!(g0 <= d0 + SLACK, "gradient {g0} > D0 {d0}");
            // Penalty at p*.
            let psi = prob.penalty_value(ps).unwrap();
            assert!(psi <= k.lpsi * kap * kap / (2.0 * rho) + SLACK);
            // Cost gap to the constrained optimum.
            let s = (psi / k.beta).sqrt();
            let gap = (opt.f_ref - prob.cost_value(ps).unwrap()).abs();
            assert!(gap <= d0 * s + 0.5 * k.l0 * s * s + SLACK, "trial {trial}: gap {gap:e}");
            // Augmented-cost precision to cost precision, at perturbed points.
            let f_star = prob.augmented_cost(rho, ps).unwrap();
            for scale in [1e-4, 1e-2, 1e-1, 1.0] {
                let p = ps + uniform_vec(&mut r, 10, scale);
                let eps = (prob.augmented_cost(rho, &p).unwrap() - f_star).abs();
                let d = (2.0 * eps / k.mu0).sqrt();
                let lhs = (prob.cost_value(&p).unwrap() - prob.cost_value(ps).unwrap()).abs();
                assert!(lhs <= d0 * d + 0.5 * k.l0 * d * d + SLACK);
                // Distance to p*.
                let rp = radius_bound(prob.augmented_cost(rho, &p).unwrap(), k.mu0).unwrap();
                assert!((&p - ps).norm() <= rp + SLACK);
            }
        }
    }
}

#[test]
fn z1_solves_the_quadratic_bound() {
    for (d0, l0, eps) in [(1.0, 1.0, 0.1), (5.0, 0.2, 3.0), (1e-3, 40.0, 1e-6)] {
        let z = z1(eps, d0, l0);
        assert!((d0 * z + 0.5 * l0 * z * z - eps).abs() <= 1e-12 * eps.max(1.0));
    }
}

#[test]
fn certified_solve_is_suboptimal_with_hard_rows() {
    let mut r = rng(14);
    for _ in 0..25 {
        let inst = random_qp(&mut r, 6, 12, 6);
        let prob = &inst.prob;
        let opt = solve_reference(prob, 1e-9).unwrap();
        let pair = SuboptimalityPair::new(0.05 * opt.f_ref, 1e-2).unwrap();
        let k = CertificationConstants::for_problem(prob, &pair, ScalingMode::Conservative, inst.p_f.norm()).unwrap();
        let rep = certified_solve(prob, &DVector::zeros(6), &k).unwrap();
        assert!(rep.iters_used <= rep.n_max);
        let p = rep.p_hat();
        assert!(prob.is_suboptimal(&p, opt.f_ref, &pair).unwrap());
        assert!(prob.max_hard_violation(&p).unwrap() <= 0.0);
        if rep.exit == SolveExit::GradientThreshold {
            // Early exit is only taken within eta of the stationary value.
            let star = stationary_point(prob, k.rho, 1e-10).unwrap();
            let gap = prob.augmented_cost(k.rho, &p).unwrap() - prob.augmented_cost(k.rho, &star.p).unwrap();
            assert!(gap <= k.eta * (1.0 + 1e-9));
        }
    }
}

#[test]
fn penalty_at_stationary_point_shrinks_like_one_over_rho() {
    let mut r = rng(15);
    let inst = random_qp(&mut r, 10, 20, 0);
    let prob = &inst.prob;
    let k = qp_constants(prob, ScalingMode::Conservative).unwrap();
    let kap = kappa0(k.l0, k.beta, k.mu0, prob.penalty_value(&prob.unconstrained_minimizer()).unwrap());
    let mut prev = f64::INFINITY;
    let mut rho = 2.0 * k.l0 / k.beta;
    for _ in 0..8 {
        let psi = prob.penalty_value(&stationary_point(prob, rho, 1e-10).unwrap().p).unwrap();
        assert!(psi <= prev + 1e-15);
        assert!(psi <= k.lpsi * kap * kap / (2.0 * rho) + SLACK);
        prev = psi;
        rho *= 4.0;
    }
}
