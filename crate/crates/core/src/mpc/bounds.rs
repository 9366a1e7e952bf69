//! Compact-set constants of a design: radii, penalty and cost maxima, the
//! pipeline iteration count `N_C(eps0, eps_psi)` and the decrease constants.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::certified::{
    self, matrix_constants, CertificationConstants, QpConstants, ScalingMode,
};
use crate::error::{Error, Result};
use crate::fast_gradient;
use crate::linalg;
use crate::mpc::design::MpcDesign;
use crate::problem::SuboptimalityPair;

/// How the set-point reaches the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetpointMode {
    /// Smoothly filtered set-point: only its rate enters the prediction error.
    Filtered,
    /// Raw jumps within the set-point domain.
    Raw,
}

impl std::str::FromStr for SetpointMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "filtered" => Ok(Self::Filtered),
            "raw" => Ok(Self::Raw),
            other => Err(Error::Parameter(format!("unknown set-point mode '{other}'"))),
        }
    }
}

/// `(E0, E1)` prediction-error envelope.
pub fn prediction_error(
    mode: SetpointMode,
    zd_radius: f64,
    zd_rate_max: f64,
    extra_e1: f64,
) -> Result<(f64, f64)> {
    if !(zd_radius >= 0.0 && zd_rate_max >= 0.0 && extra_e1 >= 0.0) {
        return Err(Error::Parameter("prediction-error inputs must be >= 0".into()));
    }
    let e0 = match mode {
        SetpointMode::Filtered => 0.0,
        SetpointMode::Raw => zd_radius,
    };
    Ok((e0, zd_rate_max + extra_e1))
}

/// `||M|| > 0` for the admissible initial-state radius `u_bar / ||M||`.
fn m_norm(design: &MpcDesign) -> Result<f64> {
    let mn = linalg::spectral_norm(&design.m);
    if !(mn > 0.0) {
        return Err(Error::Design("feasibility map M is zero".into()));
    }
    Ok(mn)
}

/// Radius of admissible initial states, `u_bar / ||M||`.
pub fn admissible_state_radius(design: &MpcDesign) -> Result<f64> {
    Ok(design.u_bar() / m_norm(design)?)
}

/// Cold-start cost level `phi0`.
pub fn phi0_bound(design: &MpcDesign, mode: ScalingMode) -> Result<f64> {
    let r = admissible_state_radius(design)?;
    let ls = linalg::lambda_max(&design.s);
    Ok(phi0_from(ls, r, mode))
}

pub fn phi0_from(lambda_max_s: f64, state_radius: f64, mode: ScalingMode) -> f64 {
    match mode {
        ScalingMode::Conservative => lambda_max_s * state_radius * state_radius,
        ScalingMode::PaperLiteral => lambda_max_s * state_radius,
    }
}

/// Cost matrix in error coordinates: `f0 = (p, y)' W0 (p, y)` with `y = z - z_d`.
pub fn w0_matrix(design: &MpcDesign) -> DMatrix<f64> {
    let np = design.n_p();
    let nz = design.n_z();
    let mut w = DMatrix::zeros(np + nz, np + nz);
    w.view_mut((0, 0), (np, np)).copy_from(&(&design.h * 0.5));
    let f11 = design.f1.view((0, 0), (np, nz)) * 0.5;
    w.view_mut((0, np), (np, nz)).copy_from(&f11);
    w.view_mut((np, 0), (nz, np)).copy_from(&f11.transpose());
    w.view_mut((np, np), (nz, nz))
        .copy_from(&design.s.view((0, 0), (nz, nz)));
    linalg::symmetrize(&w)
}

/// Cost matrix in full coordinates: `f0 = (p, x)' W (p, x)`.
pub fn w_matrix(design: &MpcDesign) -> DMatrix<f64> {
    let np = design.n_p();
    let n = design.n_x();
    let mut w = DMatrix::zeros(np + n, np + n);
    w.view_mut((0, 0), (np, np)).copy_from(&(&design.h * 0.5));
    let f1 = &design.f1 * 0.5;
    w.view_mut((0, np), (np, n)).copy_from(&f1);
    w.view_mut((np, 0), (n, np)).copy_from(&f1.transpose());
    w.view_mut((np, np), (n, n)).copy_from(&design.s);
    linalg::symmetrize(&w)
}

/// `(p_radius, x_radius)` from the smallest eigenvalue of `W0`.
pub fn compact_set_from_w0(w0: &DMatrix<f64>, phi0: f64, zd_radius: f64) -> Result<(f64, f64)> {
    if !(phi0 >= 0.0 && zd_radius >= 0.0) {
        return Err(Error::Parameter("phi0 and zd_radius must be >= 0".into()));
    }
    let lmin = linalg::lambda_min(w0);
    if !(lmin > 0.0) {
        return Err(Error::Design(format!(
            "W0 is not positive definite (lambda_min = {lmin:e})"
        )));
    }
    let r = (phi0 / lmin).sqrt();
    Ok((r, zd_radius + r))
}

pub fn compact_set(design: &MpcDesign, phi0: f64, zd_radius: f64) -> Result<(f64, f64)> {
    compact_set_from_w0(&w0_matrix(design), phi0, zd_radius)
}

/// Per-row ball maximization of the penalty at the unconstrained minimizer
/// `p_u(x) = -H^{-1} F1 x`. Hard rows use their tightened right-hand side.
pub fn psi_max(design: &MpcDesign, x_radius: f64) -> Result<f64> {
    let hinv_f1 = design
        .h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Invariant("H is not positive definite".into()))?
        .solve(&design.f1);
    let mi = -(&design.a * hinv_f1 + &design.b1);
    let mut hard = vec![false; design.n_c()];
    for &i in &design.hard_idx {
        hard[i] = true;
    }
    let eps = design.eps_psi();
    let mut total = 0.0;
    for i in 0..design.n_c() {
        let li = design.b0[i] - if hard[i] { eps } else { 0.0 };
        let v = (mi.row(i).norm() * x_radius - li).max(0.0);
        total += v * v;
    }
    Ok(total)
}

/// Upper bound on `f0` over `P x X`. The radius is squared in Conservative mode.
pub fn f0_max(design: &MpcDesign, p_radius: f64, x_radius: f64, mode: ScalingMode) -> f64 {
    let rad = (p_radius * p_radius + x_radius * x_radius).sqrt();
    let lw = linalg::lambda_max(&w_matrix(design)).max(0.0);
    match mode {
        ScalingMode::Conservative => lw * rad * rad,
        ScalingMode::PaperLiteral => lw * rad,
    }
}

/// `(K0_C, Kpsi_C, D_C)`.
pub fn constants_kd(
    design: &MpcDesign,
    p_radius: f64,
    x_radius: f64,
    psi_max: f64,
) -> (f64, f64, f64) {
    let k0 = linalg::spectral_norm(&design.f1.transpose()) * p_radius
        + 2.0 * linalg::lambda_max(&design.s).max(0.0) * x_radius;
    let kpsi =
        2.0 * design.n_c() as f64 * psi_max * linalg::spectral_norm(&design.b1.transpose());
    let u_radius = design.u_bar() * (design.n_u() as f64).sqrt();
    let dc = linalg::lambda_max(&design.q).max(0.0)
        * x_radius
        * (linalg::spectral_norm(&design.a_s) * x_radius
            + linalg::spectral_norm(&design.b_s) * u_radius);
    (k0, kpsi, dc)
}

/// All pair-independent constants of a design over its compact set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactSetBounds {
    pub mode: ScalingMode,
    pub phi0: f64,
    pub p_radius: f64,
    pub x_radius: f64,
    pub zd_radius: f64,
    pub psi_max: f64,
    pub f0_max: f64,
    pub l0: f64,
    pub lpsi: f64,
    pub mu0: f64,
    pub beta: f64,
    /// Gradient bound of `f0` over the compact set.
    pub d0: f64,
    pub kappa0_max: f64,
    pub d_c: f64,
    pub k_c0: f64,
    pub k_cpsi: f64,
    pub e0: f64,
    pub e1: f64,
}

/// Pair-dependent pipeline values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineEval {
    pub rho_max: f64,
    pub eta_min: f64,
    pub gamma0_min: f64,
    pub c_min: f64,
    pub n: u64,
}

impl CompactSetBounds {
    /// Runs the whole chain: `phi0 -> (P, X) -> psi_max -> f0_max -> K, D`.
    pub fn compute(
        design: &MpcDesign,
        mode: ScalingMode,
        zd_radius: f64,
        e0: f64,
        e1: f64,
    ) -> Result<Self> {
        let phi0 = phi0_bound(design, mode)?;
        Self::compute_with_phi0(design, mode, phi0, zd_radius, e0, e1)
    }

    pub fn compute_with_phi0(
        design: &MpcDesign,
        mode: ScalingMode,
        phi0: f64,
        zd_radius: f64,
        e0: f64,
        e1: f64,
    ) -> Result<Self> {
        let (p_radius, x_radius) = compact_set(design, phi0, zd_radius)?;
        let psi = psi_max(design, x_radius)?;
        let f0m = f0_max(design, p_radius, x_radius, mode);
        let k = matrix_constants(&design.h, &design.a, mode)?;
        let f_norm = linalg::spectral_norm(&design.f1) * x_radius;
        let d0 = certified::d0_bound_from_norms(k.l0, k.mu0, f_norm, p_radius.max(f64::MIN_POSITIVE))?;
        let kappa0_max = certified::kappa0(k.l0, k.beta, k.mu0, psi);
        let (k_c0, k_cpsi, d_c) = constants_kd(design, p_radius, x_radius, psi);
        Ok(Self {
            mode,
            phi0,
            p_radius,
            x_radius,
            zd_radius,
            psi_max: psi,
            f0_max: f0m,
            l0: k.l0,
            lpsi: k.lpsi,
            mu0: k.mu0,
            beta: k.beta,
            d0,
            kappa0_max,
            d_c,
            k_c0,
            k_cpsi,
            e0,
            e1,
        })
    }

    pub fn qp_constants(&self) -> QpConstants {
        QpConstants {
            l0: self.l0,
            lpsi: self.lpsi,
            mu0: self.mu0,
            beta: self.beta,
        }
    }

    /// Solver constants valid over the whole compact set for `pair`.
    pub fn solver_constants(&self, pair: &SuboptimalityPair) -> CertificationConstants {
        CertificationConstants::assemble(self.qp_constants(), self.d0, self.psi_max, pair, self.mode)
    }

    pub fn pipeline(&self, pair: &SuboptimalityPair) -> Result<PipelineEval> {
        let cc = self.solver_constants(pair);
        let c_min = (self.mu0 / cc.l_of_rho).sqrt();
        if self.f0_max <= 0.0 {
            return Ok(PipelineEval {
                rho_max: cc.rho,
                eta_min: cc.eta,
                gamma0_min: f64::INFINITY,
                c_min,
                n: 0,
            });
        }
        let gamma0_min = cc.eta * self.mu0 / ((cc.l_of_rho + self.mu0) * self.f0_max);
        let n = fast_gradient::nbar(c_min, gamma0_min)?;
        Ok(PipelineEval {
            rho_max: cc.rho,
            eta_min: cc.eta,
            gamma0_min,
            c_min,
            n,
        })
    }

    /// Real-valued `N_C` (before rounding); used for smooth scans.
    pub fn pipeline_n_real(&self, pair: &SuboptimalityPair) -> Result<f64> {
        let ev = self.pipeline(pair)?;
        if ev.n == 0 {
            return Ok(0.0);
        }
        fast_gradient::nbar_real(ev.c_min, ev.gamma0_min)
    }
}

/// `N_C(eps0, eps_psi)` for a design with precomputed bounds.
pub fn pipeline_n(bounds: &CompactSetBounds, pair: &SuboptimalityPair) -> Result<u64> {
    Ok(bounds.pipeline(pair)?.n)
}
