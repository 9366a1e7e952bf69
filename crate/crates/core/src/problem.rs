//! Constrained strongly convex QP and its penalty-augmented cost.
//!
//! The problem is `min 1/2 p'Hp + F'p + s0` subject to `A p <= B`, with the
//! constraint rows split into hard and soft indices. The penalty
//!
//! ```text
//! psi(p) = sum_{soft} max(0, A_i p - B_i)^2 + sum_{hard} max(0, A_i p - B_i + eps_psi)^2
//! ```
//!
//! is added with weight `rho` to form the augmented cost `f = f0 + rho * psi`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Precision pair `(eps0, eps_psi)`: cost accuracy and penalty accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuboptimalityPair {
    pub eps0: f64,
    pub eps_psi: f64,
}

impl SuboptimalityPair {
    pub fn new(eps0: f64, eps_psi: f64) -> Result<Self> {
        if !(eps0 > 0.0 && eps0.is_finite()) || !(eps_psi > 0.0 && eps_psi.is_finite()) {
            return Err(Error::Parameter(format!(
                "precision pair must be strictly positive, got ({eps0}, {eps_psi})"
            )));
        }
        Ok(Self { eps0, eps_psi })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    h: DMatrix<f64>,
    f: DVector<f64>,
    s0: f64,
    a: DMatrix<f64>,
    b: DVector<f64>,
    hard_idx: Vec<usize>,
    soft_idx: Vec<usize>,
    eps_psi: f64,
    // B_i - eps_psi on hard rows, B_i on soft rows.
    b_eff: DVector<f64>,
}

impl QpProblem {
    /// Builds a problem and checks the partition, strong convexity and `f0 >= 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        h: DMatrix<f64>,
        f: DVector<f64>,
        s0: f64,
        a: DMatrix<f64>,
        b: DVector<f64>,
        hard_idx: Vec<usize>,
        soft_idx: Vec<usize>,
        eps_psi: f64,
    ) -> Result<Self> {
        let n = h.nrows();
        check_dim("H columns", n, h.ncols())?;
        check_dim("F", n, f.len())?;
        let nc = a.nrows();
        if nc > 0 {
            check_dim("A columns", n, a.ncols())?;
        }
        check_dim("B", nc, b.len())?;
        if !(eps_psi > 0.0 && eps_psi.is_finite()) {
            return Err(Error::Parameter(format!("eps_psi must be > 0, got {eps_psi}")));
        }

        let mut seen = vec![false; nc];
        for &i in hard_idx.iter().chain(soft_idx.iter()) {
            if i >= nc {
                return Err(Error::Invariant(format!("constraint index {i} out of range")));
            }
            if seen[i] {
                return Err(Error::Invariant(format!(
                    "constraint {i} appears twice in the hard/soft partition"
                )));
            }
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Invariant(format!(
                "constraint {i} is neither hard nor soft"
            )));
        }

        let asym = (&h - h.transpose()).amax();
        if asym > 1e-10 * h.amax().max(1.0) {
            return Err(Error::Invariant(format!("H is not symmetric (defect {asym:e})")));
        }
        let mu = linalg::lambda_min(&h);
        if !(mu > 0.0) {
            return Err(Error::Invariant(format!(
                "H must be positive definite, lambda_min = {mu:e}"
            )));
        }

        let mut b_eff = b.clone();
        for &i in &hard_idx {
            b_eff[i] -= eps_psi;
        }

        let prob = Self {
            h,
            f,
            s0,
            a,
            b,
            hard_idx,
            soft_idx,
            eps_psi,
            b_eff,
        };

        let pu = prob.unconstrained_minimizer();
        let fmin = prob.cost_unchecked(&pu);
        if fmin < -1e-9 * (1.0 + s0.abs()) {
            return Err(Error::Invariant(format!(
                "cost must be nonnegative, its minimum is {fmin:e}"
            )));
        }
        Ok(prob)
    }

    /// All constraints soft.
    pub fn all_soft(
        h: DMatrix<f64>,
        f: DVector<f64>,
        s0: f64,
        a: DMatrix<f64>,
        b: DVector<f64>,
        eps_psi: f64,
    ) -> Result<Self> {
        let nc = a.nrows();
        Self::new(h, f, s0, a, b, Vec::new(), (0..nc).collect(), eps_psi)
    }

    pub fn n_p(&self) -> usize {
        self.h.nrows()
    }
    pub fn n_c(&self) -> usize {
        self.a.nrows()
    }
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn f(&self) -> &DVector<f64> {
        &self.f
    }
    pub fn s0(&self) -> f64 {
        self.s0
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn hard_idx(&self) -> &[usize] {
        &self.hard_idx
    }
    pub fn soft_idx(&self) -> &[usize] {
        &self.soft_idx
    }
    pub fn eps_psi(&self) -> f64 {
        self.eps_psi
    }
    /// Right-hand side with hard rows tightened by `eps_psi`.
    pub fn b_eff(&self) -> &DVector<f64> {
        &self.b_eff
    }

    /// `p_u = -H^{-1} F`.
    pub fn unconstrained_minimizer(&self) -> DVector<f64> {
        linalg::spd_solve(&self.h, &(-&self.f)).expect("H checked positive definite")
    }

    fn check_point(&self, p: &DVector<f64>) -> Result<()> {
        check_dim("decision vector", self.n_p(), p.len())
    }

    fn cost_unchecked(&self, p: &DVector<f64>) -> f64 {
        0.5 * p.dot(&(&self.h * p)) + self.f.dot(p) + self.s0
    }

    /// `f0(p) = 1/2 p'Hp + F'p + s0`.
    pub fn cost_value(&self, p: &DVector<f64>) -> Result<f64> {
        self.check_point(p)?;
        Ok(self.cost_unchecked(p))
    }

    /// Raw constraint values `A p - B`.
    pub fn constraint_values(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(p)?;
        Ok(&self.a * p - &self.b)
    }

    fn penalty_unchecked(&self, p: &DVector<f64>) -> f64 {
        let r = &self.a * p - &self.b_eff;
        r.iter().map(|&v| if v > 0.0 { v * v } else { 0.0 }).sum()
    }

    /// `psi(p)`.
    pub fn penalty_value(&self, p: &DVector<f64>) -> Result<f64> {
        self.check_point(p)?;
        Ok(self.penalty_unchecked(p))
    }

    pub fn augmented_cost(&self, rho: f64, p: &DVector<f64>) -> Result<f64> {
        check_rho(rho)?;
        self.check_point(p)?;
        Ok(self.cost_unchecked(p) + rho * self.penalty_unchecked(p))
    }

    pub fn augmented_gradient(&self, rho: f64, p: &DVector<f64>) -> Result<DVector<f64>> {
        check_rho(rho)?;
        self.check_point(p)?;
        let mut out = DVector::zeros(self.n_p());
        let mut scratch = DVector::zeros(self.n_c());
        self.gradient_into(rho, p, &mut out, &mut scratch);
        Ok(out)
    }

    /// Gradient of `f0` alone: `H p + F`.
    pub fn cost_gradient(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(p)?;
        Ok(&self.h * p + &self.f)
    }

    /// Allocation-free augmented gradient. `scratch` must have length `n_c`.
    ///
    /// At a kink (`A_i p - B_i = 0`) the penalty term contributes 0, which is
    /// the derivative of the C^1 squared hinge there.
    pub fn gradient_into(
        &self,
        rho: f64,
        p: &DVector<f64>,
        out: &mut DVector<f64>,
        scratch: &mut DVector<f64>,
    ) {
        out.copy_from(&self.f);
        out.gemv(1.0, &self.h, p, 1.0);
        if self.n_c() == 0 {
            return;
        }
        scratch.copy_from(&self.b_eff);
        scratch.gemv(1.0, &self.a, p, -1.0);
        scratch.apply(|v| {
            if *v < 0.0 {
                *v = 0.0
            }
        });
        out.gemv_tr(2.0 * rho, &self.a, scratch, 1.0);
    }

    /// Augmented cost without argument checks, for inner loops.
    pub fn augmented_cost_unchecked(&self, rho: f64, p: &DVector<f64>) -> f64 {
        self.cost_unchecked(p) + rho * self.penalty_unchecked(p)
    }

    /// `|f0(p) - f_opt| <= eps0` and `psi(p) <= eps_psi^2`.
    pub fn is_suboptimal(
        &self,
        p: &DVector<f64>,
        f_opt: f64,
        pair: &SuboptimalityPair,
    ) -> Result<bool> {
        self.check_point(p)?;
        let cost_ok = (self.cost_unchecked(p) - f_opt).abs() <= pair.eps0;
        let psi_ok = self.penalty_unchecked(p) <= pair.eps_psi * pair.eps_psi;
        Ok(cost_ok && psi_ok)
    }

    /// Largest `A_i p - B_i` over hard rows (`-inf` when there are none).
    pub fn max_hard_violation(&self, p: &DVector<f64>) -> Result<f64> {
        let c = self.constraint_values(p)?;
        Ok(self
            .hard_idx
            .iter()
            .map(|&i| c[i])
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Largest `A_i p - B_i` over soft rows (`-inf` when there are none).
    pub fn max_soft_violation(&self, p: &DVector<f64>) -> Result<f64> {
        let c = self.constraint_values(p)?;
        Ok(self
            .soft_idx
            .iter()
            .map(|&i| c[i])
            .fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&QpProblemJson::from(self)).expect("plain data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: QpProblemJson =
            serde_json::from_str(s).map_err(|e| Error::Parameter(format!("bad problem JSON: {e}")))?;
        Self::try_from(raw)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Parameter(format!("penalty rho must be > 0, got {rho}")));
    }
    Ok(())
}

/// On-disk layout: matrices as arrays of rows, indices 0-based.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QpProblemJson {
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    pub f: Vec<f64>,
    pub s0: f64,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    pub hard_idx: Vec<usize>,
    pub soft_idx: Vec<usize>,
    pub eps_psi: f64,
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], ncols_if_empty: usize) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    if nr == 0 {
        return Ok(DMatrix::zeros(0, ncols_if_empty));
    }
    let nc = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != nc) {
        return Err(Error::Dimension {
            what: "matrix row",
            expected: nc,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl From<&QpProblem> for QpProblemJson {
    fn from(p: &QpProblem) -> Self {
        Self {
            h: rows_of(&p.h),
            f: p.f.iter().cloned().collect(),
            s0: p.s0,
            a: rows_of(&p.a),
            b: p.b.iter().cloned().collect(),
            hard_idx: p.hard_idx.clone(),
            soft_idx: p.soft_idx.clone(),
            eps_psi: p.eps_psi,
        }
    }
}

impl TryFrom<QpProblemJson> for QpProblem {
    type Error = Error;

    fn try_from(raw: QpProblemJson) -> Result<Self> {
        let n = raw.f.len();
        let h = matrix_from_rows(&raw.h, n)?;
        let a = matrix_from_rows(&raw.a, n)?;
        QpProblem::new(
            h,
            DVector::from_vec(raw.f),
            raw.s0,
            a,
            DVector::from_vec(raw.b),
            raw.hard_idx,
            raw.soft_idx,
            raw.eps_psi,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(h: f64, f: f64, s0: f64, a: &[f64], b: &[f64], hard: bool, eps: f64) -> QpProblem {
        let nc = a.len();
        let (hard_idx, soft_idx) = if hard {
            ((0..nc).collect(), vec![])
        } else {
            (vec![], (0..nc).collect())
        };
        QpProblem::new(
            DMatrix::from_element(1, 1, h),
            DVector::from_element(1, f),
            s0,
            DMatrix::from_column_slice(nc, 1, a),
            DVector::from_column_slice(b),
            hard_idx,
            soft_idx,
            eps,
        )
        .unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn cost_zero_case() {
        let p = QpProblem::all_soft(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            0.0,
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            0.1,
        )
        .unwrap();
        assert_eq!(p.cost_value(&v(&[0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn cost_at_shifted_minimum() {
        let p = scalar(1.0, -2.0, 2.0, &[], &[], false, 0.1);
        assert_eq!(p.cost_value(&v(&[2.0])).unwrap(), 0.0);
    }

    #[test]
    fn cost_dimension_mismatch() {
        let p = scalar(1.0, 0.0, 0.0, &[], &[], false, 0.1);
        assert!(matches!(
            p.cost_value(&v(&[1.0, 2.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn penalty_examples() {
        // p - 1 <= 0
        let soft = scalar(1.0, 0.0, 0.0, &[1.0], &[1.0], false, 0.1);
        assert_eq!(soft.penalty_value(&v(&[2.0])).unwrap(), 1.0);
        assert_eq!(soft.penalty_value(&v(&[0.5])).unwrap(), 0.0);
        let hard = scalar(1.0, 0.0, 0.0, &[1.0], &[1.0], true, 0.1);
        assert!((hard.penalty_value(&v(&[1.0])).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(hard.penalty_value(&v(&[0.9])).unwrap(), 0.0);
    }

    #[test]
    fn augmented_cost_one_dimensional() {
        // f0 = p^2 / 2 with 1 - p <= 0, i.e. -p <= -1
        let p = scalar(1.0, 0.0, 0.0, &[-1.0], &[-1.0], false, 0.1);
        assert_eq!(p.augmented_cost(10.0, &v(&[0.0])).unwrap(), 10.0);
        assert!(matches!(
            p.augmented_cost(0.0, &v(&[0.0])),
            Err(Error::Parameter(_))
        ));
        assert_eq!(p.augmented_cost(3.0, &v(&[2.0])).unwrap(), 2.0);
    }

    #[test]
    fn augmented_gradient_one_dimensional() {
        let p = scalar(1.0, 0.0, 0.0, &[-1.0], &[-1.0], false, 0.1);
        let g = p.augmented_gradient(1.0, &v(&[0.0])).unwrap();
        assert_eq!(g[0], -2.0);
    }

    #[test]
    fn gradient_vanishes_at_interior_unconstrained_minimum() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = v(&[-1.0, 0.3]);
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let prob = QpProblem::all_soft(h, f, 5.0, a, v(&[100.0]), 0.01).unwrap();
        let pu = prob.unconstrained_minimizer();
        let g = prob.augmented_gradient(7.0, &pu).unwrap();
        assert!(g.norm() < 1e-14);
    }

    #[test]
    fn suboptimality_predicate() {
        let p = scalar(1.0, 0.0, 0.0, &[-1.0], &[-1.0], false, 0.1);
        let pair = SuboptimalityPair::new(0.01, 0.1).unwrap();
        assert!(p.is_suboptimal(&v(&[1.0]), 0.5, &pair).unwrap());
        // psi = 2 eps_psi^2 -> rejected whatever the cost
        let viol = 1.0 - (2.0f64).sqrt() * 0.1;
        assert!(!p.is_suboptimal(&v(&[viol]), 0.5 * viol * viol, &pair).unwrap());
        assert!(SuboptimalityPair::new(0.0, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_partition_and_indefinite_h() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = v(&[1.0, 1.0]);
        let h = DMatrix::identity(1, 1);
        let f = v(&[0.0]);
        let overlap = QpProblem::new(h.clone(), f.clone(), 0.0, a.clone(), b.clone(), vec![0], vec![0, 1], 0.1);
        assert!(matches!(overlap, Err(Error::Invariant(_))));
        let missing = QpProblem::new(h.clone(), f.clone(), 0.0, a.clone(), b.clone(), vec![0], vec![], 0.1);
        assert!(matches!(missing, Err(Error::Invariant(_))));
        let neg = QpProblem::all_soft(-h.clone(), f.clone(), 0.0, a.clone(), b.clone(), 0.1);
        assert!(matches!(neg, Err(Error::Invariant(_))));
        let negative_cost = QpProblem::all_soft(h, v(&[1.0]), 0.0, a, b, 0.1);
        assert!(matches!(negative_cost, Err(Error::Invariant(_))));
    }

    #[test]
    fn json_round_trip() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let prob = QpProblem::new(h, v(&[1.0, -1.0]), 3.0, a, v(&[1.0, 2.0, 0.5]), vec![1], vec![0, 2], 0.01)
            .unwrap();
        let text = prob.to_json();
        assert!(text.contains("\"H\"") && text.contains("\"eps_psi\""));
        let back = QpProblem::from_json(&text).unwrap();
        assert_eq!(back, prob);
    }
}
