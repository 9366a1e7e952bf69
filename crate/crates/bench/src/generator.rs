//! Random strongly convex QPs with a guaranteed strictly feasible point.

use certmpc::{QpProblem, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub n_p: usize,
    pub n_c: usize,
    pub sigma_range: (f64, f64),
    /// Entries of the rank-one factor `C` are standard normal times this.
    pub c_scale: f64,
    /// Half-width of the box the unconstrained minimizer is drawn from.
    pub pu_scale: f64,
    /// Half-width of the box the interior point is drawn from.
    pub pf_scale: f64,
    pub slack_range: (f64, f64),
    pub eps_psi: f64,
    /// Rows listed here are hard; all others soft.
    pub hard_rows: Vec<usize>,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            n_p: 10,
            n_c: 20,
            sigma_range: (1e-3, 1.0),
            c_scale: 0.1,
            pu_scale: 0.3,
            pf_scale: 0.3,
            slack_range: (0.1, 1.0),
            eps_psi: 1e-2,
            hard_rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedQp {
    pub prob: QpProblem,
    pub p_u: DVector<f64>,
    /// Strictly feasible point used to build `B`.
    pub p_f: DVector<f64>,
    pub sigma: f64,
}

fn uniform_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, half: f64) -> DVector<f64> {
    let u = Uniform::new_inclusive(-half, half).expect("finite range");
    DVector::from_fn(n, |_, _| u.sample(rng))
}

/// `H = C C' + sigma I`, cost `(p - p_u)' H (p - p_u) + 1`, unit-norm rows in
/// `A` and `B = A p_f + slack`.
pub fn generate<R: Rng + ?Sized>(params: &GeneratorParams, rng: &mut R) -> Result<GeneratedQp> {
    let n = params.n_p;
    let nc = params.n_c;
    let c: DVector<f64> = DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * params.c_scale
    });
    let sigma = Uniform::new_inclusive(params.sigma_range.0, params.sigma_range.1)
        .expect("finite range")
        .sample(rng);
    let hm = &c * c.transpose() + DMatrix::identity(n, n) * sigma;
    let p_u = uniform_vec(rng, n, params.pu_scale);

    let mut a = DMatrix::zeros(nc, n);
    for i in 0..nc {
        let mut row: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let nr = row.norm();
        row /= nr;
        a.row_mut(i).copy_from(&row.transpose());
    }
    let p_f = uniform_vec(rng, n, params.pf_scale);
    let slack = Uniform::new_inclusive(params.slack_range.0, params.slack_range.1)
        .expect("finite range");
    let b = &a * &p_f + DVector::from_fn(nc, |_, _| slack.sample(rng));

    // (p - p_u)' H (p - p_u) + 1 = 1/2 p' (2H) p - (2 H p_u)' p + p_u' H p_u + 1
    let h = &hm * 2.0;
    let f = -(&hm * &p_u) * 2.0;
    let s0 = p_u.dot(&(&hm * &p_u)) + 1.0;
    let hard: Vec<usize> = params.hard_rows.clone();
    let soft: Vec<usize> = (0..nc).filter(|i| !hard.contains(i)).collect();
    let prob = QpProblem::new(h, f, s0, a, b, hard, soft, params.eps_psi)?;
    Ok(GeneratedQp {
        prob,
        p_u,
        p_f,
        sigma,
    })
}
