//! High-accuracy reference solutions used to validate the certified solver.
//!
//! `solve_reference` is a primal-dual active-set method (Goldfarb-Idnani)
//! on the original constraints `A p <= B`; `stationary_point` minimizes the
//! penalty-augmented cost with a globalized semismooth Newton iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::QpProblem;

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub p_ref: Vec<f64>,
    pub f_ref: f64,
    pub kkt_residual: f64,
    /// Indices of rows with a positive multiplier or held active at the optimum.
    pub active_set: Vec<usize>,
    /// One multiplier per constraint row (zero off the active set).
    pub lambda: Vec<f64>,
}

impl OracleSolution {
    pub fn p(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.p_ref)
    }
}

/// Largest of: stationarity `||Hp + F + A'lambda||`, primal violation
/// `max(Ap - B)+`, complementarity `max |lambda_i (A_i p - B_i)|` and dual
/// violation `max(-lambda)+`.
pub fn kkt_residual(prob: &QpProblem, p: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let stat = (prob.h() * p + prob.f() + prob.a().transpose() * lambda).norm();
    let c = prob.a() * p - prob.b();
    let mut worst = stat;
    for i in 0..c.len() {
        worst = worst
            .max(c[i].max(0.0))
            .max((lambda[i] * c[i]).abs())
            .max((-lambda[i]).max(0.0));
    }
    worst
}

struct ActiveSetState {
    x: DVector<f64>,
    w: Vec<usize>,
    u: Vec<f64>,
}

/// Primal step `z` and multiplier rate `r` for raising the multiplier of row `p`
/// while the rows in `w` stay tight.
fn step_directions(
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    a: &DMatrix<f64>,
    w: &[usize],
    p: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let ap = a.row(p).transpose();
    let hp = chol.solve(&ap);
    if w.is_empty() {
        return Ok((-hp, DVector::zeros(0)));
    }
    let aw = a.select_rows(w);
    let hinv_awt = chol.solve(&aw.transpose());
    let m = &aw * &hinv_awt;
    let rhs = -(&aw * &hp);
    let r = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Convergence("singular working-set system".into()))?;
    let z = -hp - hinv_awt * &r;
    Ok((z, r))
}

/// Reference solve of `min f0(p) s.t. A p <= B` to KKT tolerance `tol`.
pub fn solve_reference(prob: &QpProblem, tol: f64) -> Result<OracleSolution> {
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tol must be > 0, got {tol}")));
    }
    let h = prob.h();
    let a = prob.a();
    let b = prob.b();
    let n = prob.n_p();
    let nc = prob.n_c();
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Invariant("H is not positive definite".into()))?;
    let mut st = ActiveSetState {
        x: prob.unconstrained_minimizer(),
        w: Vec::new(),
        u: Vec::new(),
    };
    let scale = 1.0 + b.amax() + a.amax();
    let feas_tol = 1e-14 * scale;
    let max_steps = 50 * (n + nc) + 100;
    let mut steps = 0usize;

    'outer: loop {
        // Most violated row outside the working set.
        let c = a * &st.x - b;
        let mut pick = None;
        let mut worst = feas_tol;
        for i in 0..nc {
            if !st.w.contains(&i) && c[i] > worst {
                worst = c[i];
                pick = Some(i);
            }
        }
        let Some(p) = pick else { break };
        let mut up = 0.0;
        loop {
            steps += 1;
            if steps > max_steps {
                return Err(Error::Convergence(format!(
                    "active-set iteration limit {max_steps} reached, working set {:?}",
                    st.w
                )));
            }
            let (z, r) = step_directions(&chol, a, &st.w, p)?;
            let hp_norm = chol.solve(&a.row(p).transpose()).norm();
            let dependent = z.norm() <= 1e-12 * hp_norm.max(f64::MIN_POSITIVE);

            // Dual step: first working-set multiplier to hit zero.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj < 0.0 {
                    let t = st.u[j] / -rj;
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let sp = (a.row(p) * &st.x)[0] - b[p];
            let t2 = if dependent {
                f64::INFINITY
            } else {
                let curv = z.dot(&(h * &z));
                (sp / curv).max(0.0)
            };
            if t1.is_infinite() && t2.is_infinite() {
                return Err(Error::Infeasible(format!(
                    "row {p} cannot be satisfied together with rows {:?}",
                    st.w
                )));
            }
            let t = t1.min(t2);
            if !dependent {
                st.x.axpy(t, &z, 1.0);
            }
            for (uj, rj) in st.u.iter_mut().zip(r.iter()) {
                *uj += t * rj;
            }
            up += t;
            if t2 <= t1 {
                st.w.push(p);
                st.u.push(up);
                continue 'outer;
            }
            let k = drop.expect("finite t1 has an index");
            st.w.remove(k);
            st.u.remove(k);
        }
    }

    let mut lambda = DVector::zeros(nc);
    for (&i, &ui) in st.w.iter().zip(st.u.iter()) {
        lambda[i] = ui.max(0.0);
    }
    let mut x = st.x;
    let mut res = kkt_residual(prob, &x, &lambda);

    // Polish: exact equality-constrained solve on the working set.
    if let Some((xp, lp)) = polish(prob, &st.w) {
        let res_p = kkt_residual(prob, &xp, &lp);
        if res_p <= res {
            x = xp;
            lambda = lp;
            res = res_p;
        }
    }
    if !(res <= tol) {
        return Err(Error::Convergence(format!(
            "KKT residual {res:e} above tolerance {tol:e}"
        )));
    }
    let mut active: Vec<usize> = st.w.clone();
    active.sort_unstable();
    let f_ref = prob.cost_value(&x)?;
    Ok(OracleSolution {
        p_ref: x.iter().cloned().collect(),
        f_ref,
        kkt_residual: res,
        active_set: active,
        lambda: lambda.iter().cloned().collect(),
    })
}

fn polish(prob: &QpProblem, w: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = prob.n_p();
    let k = w.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(prob.h());
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-prob.f()));
    for (j, &i) in w.iter().enumerate() {
        let row = prob.a().row(i);
        kkt.view_mut((n + j, 0), (1, n)).copy_from(&row);
        kkt.view_mut((0, n + j), (n, 1)).copy_from(&row.transpose());
        rhs[n + j] = prob.b()[i];
    }
    let sol = kkt.lu().solve(&rhs)?;
    let x = sol.rows(0, n).into_owned();
    let mut lambda = DVector::zeros(prob.n_c());
    for (j, &i) in w.iter().enumerate() {
        lambda[i] = sol[n + j];
    }
    Some((x, lambda))
}

/// Minimizer of the augmented cost `f0 + rho psi`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPoint {
    pub p: DVector<f64>,
    pub grad_norm: f64,
    pub newton_steps: usize,
}

/// Gradient norm reachable in double precision at `p`: the penalty term
/// amplifies rounding in `A p - B` by `2 rho ||A||`.
fn gradient_floor(prob: &QpProblem, rho: f64, p: &DVector<f64>) -> f64 {
    let an = prob.a().norm();
    let hp = prob.h().norm() * p.norm() + prob.f().norm();
    let pen = 2.0 * rho * an * (an * p.norm() + prob.b_eff().norm());
    1e3 * f64::EPSILON * (hp + pen)
}

pub fn stationary_point(prob: &QpProblem, rho: f64, tol: f64) -> Result<StationaryPoint> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Parameter(format!("rho must be > 0, got {rho}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tol must be > 0, got {tol}")));
    }
    let n = prob.n_p();
    let mut p = prob.unconstrained_minimizer();
    let mut steps = 0usize;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for _ in 0..500 {
        let g = prob.augmented_gradient(rho, &p)?;
        let gn = g.norm();
        if best.as_ref().is_none_or(|(b, _)| gn < *b) {
            best = Some((gn, p.clone()));
        }
        if gn <= tol {
            break;
        }
        let r = prob.a() * &p - prob.b_eff();
        let act: Vec<usize> = (0..r.len()).filter(|&i| r[i] > 0.0).collect();
        // (H + 2 rho A_S'A_S) d = -g, written as a saddle system for conditioning.
        let k = act.len();
        let mut m = DMatrix::zeros(n + k, n + k);
        m.view_mut((0, 0), (n, n)).copy_from(prob.h());
        for (j, &i) in act.iter().enumerate() {
            let row = prob.a().row(i);
            m.view_mut((n + j, 0), (1, n)).copy_from(&row);
            m.view_mut((0, n + j), (n, 1)).copy_from(&row.transpose());
            m[(n + j, n + j)] = -1.0 / (2.0 * rho);
        }
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&g));
        let Some(sol) = m.lu().solve(&rhs) else {
            return Err(Error::Convergence("singular Newton system".into()));
        };
        let d = sol.rows(0, n).into_owned();
        let f_cur = prob.augmented_cost_unchecked(rho, &p);
        let slope = g.dot(&d);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-20 {
            let trial = &p + &d * t;
            let f_trial = prob.augmented_cost_unchecked(rho, &trial);
            if f_trial <= f_cur + 1e-4 * t * slope {
                p = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        steps += 1;
        if !accepted || t * d.norm() <= 1e-16 * (1.0 + p.norm()) {
            break;
        }
    }
    let (gn, p) = best.expect("at least one gradient evaluation");
    if gn > tol.max(gradient_floor(prob, rho, &p)) {
        return Err(Error::Convergence(format!(
            "augmented gradient norm {gn:e} above tolerance {tol:e} after {steps} Newton steps"
        )));
    }
    Ok(StationaryPoint {
        p,
        grad_norm: gn,
        newton_steps: steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_dim() -> QpProblem {
        QpProblem::all_soft(
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            0.0,
            DMatrix::from_element(1, 1, -1.0),
            DVector::from_element(1, -1.0),
            0.01,
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_feasible_returns_pu() {
        let prob = QpProblem::all_soft(
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0])),
            DVector::from_vec(vec![-2.0, 1.0]),
            3.0,
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 10.0),
            0.01,
        )
        .unwrap();
        let s = solve_reference(&prob, 1e-9).unwrap();
        assert!((s.p() - prob.unconstrained_minimizer()).norm() < 1e-14);
        assert!(s.active_set.is_empty());
    }

    #[test]
    fn one_dim_active_bound() {
        let s = solve_reference(&one_dim(), 1e-9).unwrap();
        assert!((s.p_ref[0] - 1.0).abs() < 1e-14);
        assert!((s.f_ref - 0.5).abs() < 1e-14);
        assert_eq!(s.active_set, vec![0]);
        assert!((s.lambda[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_detected() {
        // p <= -1 and -p <= -1
        let prob = QpProblem::all_soft(
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            0.0,
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
            0.01,
        )
        .unwrap();
        assert!(matches!(solve_reference(&prob, 1e-9), Err(Error::Infeasible(_))));
    }

    #[test]
    fn stationary_point_one_dim() {
        // f = p^2/2 + rho (1 - p)^2 for p < 1, minimized at 2 rho / (1 + 2 rho).
        let rho = 50.0;
        let sp = stationary_point(&one_dim(), rho, 1e-12).unwrap();
        assert!((sp.p[0] - 2.0 * rho / (1.0 + 2.0 * rho)).abs() < 1e-13);
    }

    #[test]
    fn stationary_point_interior_is_pu() {
        let prob = QpProblem::all_soft(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![0.5, -0.5]),
            0.25,
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_element(1, 2.0),
            0.01,
        )
        .unwrap();
        let sp = stationary_point(&prob, 10.0, 1e-12).unwrap();
        assert_eq!(sp.newton_steps, 0);
        assert!((sp.p - prob.unconstrained_minimizer()).norm() < 1e-15);
    }
}
