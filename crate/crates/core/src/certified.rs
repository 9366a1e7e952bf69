//! Certified penalty fast-gradient solve.
//!
//! Given a precision pair `(eps0, eps_psi)`, the penalty `rho` and inner
//! tolerance `eta` are chosen from problem constants so that any point whose
//! augmented cost is within `eta` of the augmented minimum is an
//! `(eps0, eps_psi)`-suboptimal solution of the constrained problem. The
//! number of fast-gradient iterations needed to reach that accuracy is known
//! before iterating.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fast_gradient::{self, FastGradientState, FgWorkspace, SmoothnessPair};
use crate::linalg;
use crate::problem::{QpProblem, SuboptimalityPair};

/// How the penalty smoothness and growth constants are derived from `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    /// `L_psi = sigma_max(A)`, `beta = sigma_min+(A)`.
    #[serde(rename = "paper")]
    PaperLiteral,
    /// `L_psi = 2 sigma_max(A)^2`, `beta = sigma_min+(A)^2`.
    #[default]
    Conservative,
}

impl std::str::FromStr for ScalingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" | "paperliteral" | "paper-literal" => Ok(Self::PaperLiteral),
            "conservative" => Ok(Self::Conservative),
            other => Err(Error::Parameter(format!("unknown scaling mode '{other}'"))),
        }
    }
}

/// Intrinsic constants of a QP: `(L0, L_psi, mu0, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpConstants {
    pub l0: f64,
    pub lpsi: f64,
    pub mu0: f64,
    pub beta: f64,
}

const SIGMA_REL_TOL: f64 = 1e-10;

/// Constants of a cost Hessian `h` and constraint matrix `a`.
pub fn matrix_constants(
    h: &nalgebra::DMatrix<f64>,
    a: &nalgebra::DMatrix<f64>,
    mode: ScalingMode,
) -> Result<QpConstants> {
    let (mu0, l0) = linalg::sym_eig_extremes(h);
    if !(mu0 > 0.0) {
        return Err(Error::Invariant(format!(
            "H must be positive definite, lambda_min = {mu0:e}"
        )));
    }
    let smax = linalg::spectral_norm(a);
    // With no (nonzero) constraint rows psi vanishes identically and any
    // positive growth constant is valid.
    let smin = linalg::sigma_min_nonzero(a, SIGMA_REL_TOL).unwrap_or(1.0);
    let (lpsi, beta) = match mode {
        ScalingMode::PaperLiteral => (smax, smin),
        ScalingMode::Conservative => (2.0 * smax * smax, smin * smin),
    };
    Ok(QpConstants {
        l0,
        lpsi,
        mu0,
        beta,
    })
}

pub fn qp_constants(prob: &QpProblem, mode: ScalingMode) -> Result<QpConstants> {
    matrix_constants(prob.h(), prob.a(), mode)
}

/// Upper bound on `sup { ||f0'(p)|| : f0(p) <= f0(p_a) }` given
/// `p_radius >= ||p_a||` for some admissible `p_a`.
pub fn d0_bound_from_norms(lmax: f64, lmin: f64, f_norm: f64, p_radius: f64) -> Result<f64> {
    if !(p_radius > 0.0) {
        return Err(Error::Parameter(format!("p_radius must be > 0, got {p_radius}")));
    }
    let f_bar = 0.5 * lmax * p_radius * p_radius + f_norm * p_radius;
    let p_bar = (f_norm + (f_norm * f_norm + 2.0 * lmin * f_bar).sqrt()) / lmin;
    Ok(lmax * p_bar + f_norm)
}

pub fn d0_upper_bound(prob: &QpProblem, p_radius: f64) -> Result<f64> {
    let (lmin, lmax) = linalg::sym_eig_extremes(prob.h());
    d0_bound_from_norms(lmax, lmin, prob.f().norm(), p_radius)
}

/// `Z1(eps) = (D0/L0)(sqrt(1 + 2 L0 eps / D0^2) - 1)`, evaluated in the
/// cancellation-free form `2 eps / (D0 + sqrt(D0^2 + 2 L0 eps))`.
pub fn z1(eps: f64, d0: f64, l0: f64) -> f64 {
    2.0 * eps / (d0 + (d0 * d0 + 2.0 * l0 * eps).sqrt())
}

/// `kappa0 = (2 L0 / beta) sqrt(2 psi(p_u) / mu0)`.
pub fn kappa0(l0: f64, beta: f64, mu0: f64, psi_pu: f64) -> f64 {
    2.0 * l0 / beta * (2.0 * psi_pu / mu0).sqrt()
}

/// Gradient-Lipschitz constant of `f0 + rho psi`.
#[allow(non_snake_case)]
pub fn L_of_rho(l0: f64, lpsi: f64, rho: f64) -> f64 {
    l0 + rho * lpsi
}

/// Candidate penalties and tolerances, with the selected `rho = max` and `eta = min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoEta {
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub rho: f64,
    pub eta: f64,
}

pub fn select_rho_eta(
    k: &QpConstants,
    d0: f64,
    kappa0: f64,
    pair: &SuboptimalityPair,
) -> RhoEta {
    let z = z1(0.5 * pair.eps0, d0, k.l0);
    let rho3 = k.l0 / k.beta;
    let (rho1, rho2) = if kappa0 == 0.0 || k.lpsi == 0.0 {
        (0.0, 0.0)
    } else {
        let lk2 = k.lpsi * kappa0 * kappa0;
        (
            2.0 * lk2 / (pair.eps_psi * pair.eps_psi),
            lk2 / (2.0 * k.beta * z * z),
        )
    };
    let eta1 = 0.5 * k.mu0 * z * z;
    let eta2 = if k.lpsi > 0.0 {
        k.mu0 * pair.eps_psi * pair.eps_psi / (4.0 * k.lpsi)
    } else {
        f64::INFINITY
    };
    RhoEta {
        rho1,
        rho2,
        rho3,
        eta1,
        eta2,
        rho: rho1.max(rho2).max(rho3),
        eta: eta1.min(eta2),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationConstants {
    pub l0: f64,
    pub lpsi: f64,
    pub mu0: f64,
    pub beta: f64,
    pub d0: f64,
    pub psi_pu: f64,
    pub kappa0: f64,
    pub rho: f64,
    pub eta: f64,
    pub l_of_rho: f64,
    pub mode: ScalingMode,
    pub candidates: RhoEta,
}

impl CertificationConstants {
    /// All constants for `prob` and `pair`; `p_radius` bounds the norm of some
    /// admissible point and feeds the `D0` bound.
    pub fn for_problem(
        prob: &QpProblem,
        pair: &SuboptimalityPair,
        mode: ScalingMode,
        p_radius: f64,
    ) -> Result<Self> {
        if pair.eps_psi != prob.eps_psi() {
            return Err(Error::Parameter(format!(
                "pair eps_psi = {} differs from the problem's hard-constraint tightening {}",
                pair.eps_psi,
                prob.eps_psi()
            )));
        }
        let k = qp_constants(prob, mode)?;
        let d0 = d0_upper_bound(prob, p_radius)?;
        let psi_pu = prob.penalty_value(&prob.unconstrained_minimizer())?;
        Ok(Self::assemble(k, d0, psi_pu, pair, mode))
    }

    pub fn assemble(
        k: QpConstants,
        d0: f64,
        psi_pu: f64,
        pair: &SuboptimalityPair,
        mode: ScalingMode,
    ) -> Self {
        let kappa0 = kappa0(k.l0, k.beta, k.mu0, psi_pu);
        let sel = select_rho_eta(&k, d0, kappa0, pair);
        Self {
            l0: k.l0,
            lpsi: k.lpsi,
            mu0: k.mu0,
            beta: k.beta,
            d0,
            psi_pu,
            kappa0,
            rho: sel.rho,
            eta: sel.eta,
            l_of_rho: L_of_rho(k.l0, k.lpsi, sel.rho),
            mode,
            candidates: sel,
        }
    }

    pub fn smoothness(&self) -> Result<SmoothnessPair> {
        SmoothnessPair::new(self.mu0, self.l_of_rho)
    }

    /// `g_min = mu0 sqrt(2 eta / L)`.
    pub fn g_min(&self) -> f64 {
        self.mu0 * (2.0 * self.eta / self.l_of_rho).sqrt()
    }

    /// `gamma0 = eta mu0 / ((L + mu0) f(p0))`.
    pub fn gamma0(&self, f_at_p0: f64) -> f64 {
        self.eta * self.mu0 / ((self.l_of_rho + self.mu0) * f_at_p0)
    }

    /// A priori iteration bound from a start whose augmented cost is `f_at_p0`.
    pub fn n_max(&self, f_at_p0: f64) -> Result<u64> {
        if f_at_p0 <= 0.0 {
            return Ok(0);
        }
        let c = self.smoothness()?.c();
        fast_gradient::nbar(c, self.gamma0(f_at_p0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveExit {
    GradientThreshold,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedSolveReport {
    pub p_hat: Vec<f64>,
    pub iters_used: u64,
    pub n_max: u64,
    pub exit: SolveExit,
    pub rho_used: f64,
    pub eta_used: f64,
    pub g_min: f64,
    /// Augmented cost at the start, the denominator of `gamma0`.
    pub f_start: f64,
}

impl CertifiedSolveReport {
    pub fn p_hat(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.p_hat)
    }

    pub fn ratio(&self) -> f64 {
        if self.n_max == 0 {
            0.0
        } else {
            self.iters_used as f64 / self.n_max as f64
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }
}

/// Runs the certified iteration. Exits as soon as `g(p_i) <= g_min` or
/// `i >= N_max`, returning `p_i`.
pub fn certified_solve(
    prob: &QpProblem,
    p0: &DVector<f64>,
    consts: &CertificationConstants,
) -> Result<CertifiedSolveReport> {
    certified_solve_with_budget(prob, p0, consts, None)
}

/// Same as [`certified_solve`] with an extra externally imposed iteration cap
/// (the real-time budget). The cap never raises `N_max`.
pub fn certified_solve_with_budget(
    prob: &QpProblem,
    p0: &DVector<f64>,
    consts: &CertificationConstants,
    budget: Option<u64>,
) -> Result<CertifiedSolveReport> {
    check_dim("initial guess", prob.n_p(), p0.len())?;
    let rho = consts.rho;
    let f_start = prob.augmented_cost(rho, p0)?;
    if !f_start.is_finite() {
        return Err(Error::Numeric { iter: 0 });
    }
    let smooth = consts.smoothness()?;
    let n_max = consts.n_max(f_start)?;
    let cap = budget.map_or(n_max, |b| b.min(n_max));
    let g_min = consts.g_min();

    let n = prob.n_p();
    let mut state = FastGradientState::new(p0.clone(), &smooth);
    let mut ws = FgWorkspace::new(n);
    let mut g = DVector::zeros(n);
    let mut scratch_check = DVector::zeros(prob.n_c());
    let mut scratch_step = DVector::zeros(prob.n_c());
    let mut grad = |x: &DVector<f64>, out: &mut DVector<f64>| {
        prob.gradient_into(rho, x, out, &mut scratch_step)
    };

    let exit = loop {
        prob.gradient_into(rho, &state.p, &mut g, &mut scratch_check);
        let gn = g.norm();
        if !gn.is_finite() {
            return Err(Error::Numeric {
                iter: state.iter as usize,
            });
        }
        if gn <= g_min {
            break SolveExit::GradientThreshold;
        }
        if state.iter >= cap {
            break SolveExit::IterationCap;
        }
        fast_gradient::advance(&mut state, &mut grad, &smooth, &mut ws)?;
    };

    Ok(CertifiedSolveReport {
        p_hat: state.p.iter().cloned().collect(),
        iters_used: state.iter,
        n_max,
        exit,
        rho_used: rho,
        eta_used: consts.eta,
        g_min,
        f_start,
    })
}
