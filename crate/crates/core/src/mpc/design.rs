//! Condensed linear MPC with a terminal equality constraint.
//!
//! The physical plant `dz/dt = A0 z + B0 u` is extended with a constant
//! set-point `z_d`, so `x = (z, z_d)` and the tracking error is `C x = z - z_d`.
//! The input profile over `[0, T]` is `u(s) = Phi(s) p_u` with a piecewise
//! constant basis, and `p_u = K p + M x0` keeps `C x(T) = 0` for every `p`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::problem::{matrix_from_rows, rows_of, QpProblem};

/// Input basis over the prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Basis {
    /// `blocks` equal subintervals, one free value per input on each.
    PiecewiseConstant { blocks: usize },
}

impl Basis {
    pub fn blocks(&self) -> usize {
        match *self {
            Basis::PiecewiseConstant { blocks } => blocks,
        }
    }
}

/// Box bound on one physical state component, enforced as two soft rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateBound {
    pub component: usize,
    pub lower: f64,
    pub upper: f64,
}

/// Everything needed to build a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub a0: Vec<Vec<f64>>,
    pub b0: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub horizon: f64,
    pub basis: Basis,
    /// Number of uniformly spaced constraint-checking instants.
    pub check_points: usize,
    pub state_bounds: Vec<StateBound>,
    pub u_bar: f64,
    pub eps_psi: f64,
}

impl DesignParams {
    /// Chain of `n` integrators, `dz_i/dt = z_{i+1}`, `dz_n/dt = u`, with the
    /// benchmark weights and bounds (`|z1| <= 2`, `|z2| <= 1`, `|u| <= 10`).
    pub fn integrator_chain(n: usize) -> Self {
        let mut a0 = vec![vec![0.0; n]; n];
        for (i, row) in a0.iter_mut().enumerate().take(n.saturating_sub(1)) {
            row[i + 1] = 1.0;
        }
        let mut b0 = vec![vec![0.0]; n];
        b0[n - 1][0] = 1.0;
        let q = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let mut state_bounds = vec![StateBound {
            component: 0,
            lower: -2.0,
            upper: 2.0,
        }];
        if n > 1 {
            state_bounds.push(StateBound {
                component: 1,
                lower: -1.0,
                upper: 1.0,
            });
        }
        Self {
            a0,
            b0,
            q,
            r: vec![vec![0.001]],
            horizon: 10.0,
            basis: Basis::PiecewiseConstant { blocks: 10 },
            check_points: 50,
            state_bounds,
            u_bar: 10.0,
            eps_psi: 1e-2,
        }
    }
}

/// Extended model: `As = diag(A0, 0)`, `Bs = [B0; 0]`, `C = [I, -I]`.
pub fn build_extended(
    a0: &DMatrix<f64>,
    b0m: &DMatrix<f64>,
    zd_dim: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let nz = a0.nrows();
    check_dim("A0 columns", nz, a0.ncols())?;
    check_dim("B0 rows", nz, b0m.nrows())?;
    check_dim("set-point dimension", nz, zd_dim)?;
    let n = nz + zd_dim;
    let nu = b0m.ncols();
    let mut a_s = DMatrix::zeros(n, n);
    a_s.view_mut((0, 0), (nz, nz)).copy_from(a0);
    let mut b_s = DMatrix::zeros(n, nu);
    b_s.view_mut((0, 0), (nz, nu)).copy_from(b0m);
    let mut c = DMatrix::zeros(nz, n);
    for i in 0..nz {
        c[(i, i)] = 1.0;
        c[(i, nz + i)] = -1.0;
    }
    Ok((a_s, b_s, c))
}

/// Block selector: `u_j = E_j p_u` on block `j`.
fn block_selector(j: usize, nu: usize, m: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(nu, m);
    for k in 0..nu {
        e[(k, j * nu + k)] = 1.0;
    }
    e
}

/// Prediction maps at the block boundaries: `x(t_j) = Phi_j x0 + Gamma_j p_u`.
fn boundary_maps(
    a_s: &DMatrix<f64>,
    b_s: &DMatrix<f64>,
    blocks: usize,
    width: f64,
) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a_s.nrows();
    let nu = b_s.ncols();
    let m = blocks * nu;
    let (ad, bd) = linalg::zoh(a_s, b_s, width);
    let mut out = Vec::with_capacity(blocks + 1);
    let mut phi = DMatrix::identity(n, n);
    let mut gam = DMatrix::zeros(n, m);
    out.push((phi.clone(), gam.clone()));
    for j in 0..blocks {
        phi = &ad * &phi;
        gam = &ad * &gam + &bd * block_selector(j, nu, m);
        out.push((phi.clone(), gam.clone()));
    }
    out
}

/// `(K, M)` with `p_u = K p + M x0` meeting `C x(T) = 0`.
pub fn build_parametrization(
    a_s: &DMatrix<f64>,
    b_s: &DMatrix<f64>,
    c: &DMatrix<f64>,
    basis: Basis,
    horizon: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let blocks = basis.blocks();
    if blocks == 0 || !(horizon > 0.0) {
        return Err(Error::Parameter("need at least one block and T > 0".into()));
    }
    let maps = boundary_maps(a_s, b_s, blocks, horizon / blocks as f64);
    let (e, g) = &maps[blocks];
    let cg = c * g;
    if linalg::rank(&cg) < cg.nrows() {
        return Err(Error::Design(
            "terminal map C G is row-rank deficient; horizon or basis too small".into(),
        ));
    }
    let m_map = -(linalg::pseudo_inverse(&cg) * (c * e));
    let k = linalg::null_space(&cg);
    Ok((k, m_map))
}

/// A built design: the condensed QP `f0(p, x) = 1/2 p'Hp + (F1 x)'p + x'Sx`
/// subject to `A p <= B0 + B1 x`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcDesign {
    pub params: DesignParams,
    pub a_s: DMatrix<f64>,
    pub b_s: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub f1: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b0: DVector<f64>,
    pub b1: DMatrix<f64>,
    pub check_grid: Vec<f64>,
    pub hard_idx: Vec<usize>,
    pub soft_idx: Vec<usize>,
    // Cached block-boundary maps and one-block ZOH pair.
    maps: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

impl MpcDesign {
    pub fn build(params: &DesignParams) -> Result<Self> {
        let a0 = matrix_from_rows(&params.a0, 0)?;
        let b0m = matrix_from_rows(&params.b0, 0)?;
        let nz = a0.nrows();
        let nu = b0m.ncols();
        let q = matrix_from_rows(&params.q, 0)?;
        let r = matrix_from_rows(&params.r, 0)?;
        check_dim("Q rows", nz, q.nrows())?;
        check_dim("R rows", nu, r.nrows())?;
        if !(linalg::lambda_min(&r) > 0.0) {
            return Err(Error::Parameter("R must be positive definite".into()));
        }
        if linalg::lambda_min(&q) < -1e-12 {
            return Err(Error::Parameter("Q must be positive semidefinite".into()));
        }
        if !(params.u_bar >= 0.0) || params.check_points == 0 {
            return Err(Error::Parameter("need u_bar >= 0 and a nonempty check grid".into()));
        }
        for sb in &params.state_bounds {
            if sb.component >= nz || !(sb.lower < sb.upper) {
                return Err(Error::Parameter(format!("bad state bound {sb:?}")));
            }
        }

        let (a_s, b_s, c) = build_extended(&a0, &b0m, nz)?;
        let (k, m_map) = build_parametrization(&a_s, &b_s, &c, params.basis, params.horizon)?;
        let blocks = params.basis.blocks();
        let width = params.horizon / blocks as f64;
        let maps = boundary_maps(&a_s, &b_s, blocks, width);

        let n = a_s.nrows();
        let mdim = blocks * nu;
        let np = k.ncols();

        // Exact cost per block: with w = (x(t_j), u_j) and
        // d/ds w = [[As, Bs], [0, 0]] w, the block cost is w' Z w where
        // Z = int_0^width e^{At' s} diag(C'QC, R) e^{At s} ds (block-exponential identity).
        let nw = n + nu;
        let mut at = DMatrix::zeros(nw, nw);
        at.view_mut((0, 0), (n, n)).copy_from(&a_s);
        at.view_mut((0, n), (n, nu)).copy_from(&b_s);
        let mut qt = DMatrix::zeros(nw, nw);
        qt.view_mut((0, 0), (n, n)).copy_from(&(c.transpose() * &q * &c));
        qt.view_mut((n, n), (nu, nu)).copy_from(&r);
        let mut vl = DMatrix::zeros(2 * nw, 2 * nw);
        vl.view_mut((0, 0), (nw, nw)).copy_from(&(-at.transpose()));
        vl.view_mut((0, nw), (nw, nw)).copy_from(&qt);
        vl.view_mut((nw, nw), (nw, nw)).copy_from(&at);
        let ev = linalg::expm(&vl, width);
        let z = linalg::symmetrize(
            &(ev.view((nw, nw), (nw, nw)).transpose() * ev.view((0, nw), (nw, nw))),
        );

        // p_u = [K M] (p, x); each w_j is linear in (p, x).
        let mut km = DMatrix::zeros(mdim, np + n);
        km.view_mut((0, 0), (mdim, np)).copy_from(&k);
        km.view_mut((0, np), (mdim, n)).copy_from(&m_map);
        let mut wq = DMatrix::zeros(np + n, np + n);
        for j in 0..blocks {
            let (phi, gam) = &maps[j];
            let mut lj = DMatrix::zeros(nw, np + n);
            let mut xpart = gam * &km;
            {
                let mut xv = xpart.view_mut((0, np), (n, n));
                xv += phi;
            }
            lj.view_mut((0, 0), (n, np + n)).copy_from(&xpart);
            lj.view_mut((n, 0), (nu, np + n))
                .copy_from(&(block_selector(j, nu, mdim) * &km));
            wq += lj.transpose() * &z * &lj;
        }
        let wq = linalg::symmetrize(&wq);
        let h = wq.view((0, 0), (np, np)).into_owned();
        let f1 = wq.view((0, np), (np, n)).into_owned();
        let s = wq.view((np, np), (n, n)) * 0.5;

        let check_grid: Vec<f64> = (0..params.check_points)
            .map(|i| (i as f64 + 0.5) * params.horizon / params.check_points as f64)
            .collect();

        let mut design = Self {
            params: params.clone(),
            a_s,
            b_s,
            c,
            q,
            r,
            k,
            m: m_map,
            h,
            f1,
            s,
            a: DMatrix::zeros(0, np),
            b0: DVector::zeros(0),
            b1: DMatrix::zeros(0, n),
            check_grid,
            hard_idx: Vec::new(),
            soft_idx: Vec::new(),
            maps,
        };
        design.build_rows();
        Ok(design)
    }

    /// Constraint rows: `+-u(s_j) <= u_bar` (hard) then the state boxes (soft).
    fn build_rows(&mut self) {
        let n = self.n_x();
        let np = self.n_p();
        let nu = self.n_u();
        let mut a_rows: Vec<DVector<f64>> = Vec::new();
        let mut b0: Vec<f64> = Vec::new();
        let mut b1_rows: Vec<DVector<f64>> = Vec::new();
        let mut hard = Vec::new();
        let mut soft = Vec::new();
        let ubar = self.params.u_bar;
        let grid = self.check_grid.clone();

        for &sj in &grid {
            let sel = self.input_selector(sj);
            let ak = &sel * &self.k;
            let am = &sel * &self.m;
            for i in 0..nu {
                for sign in [1.0, -1.0] {
                    hard.push(a_rows.len());
                    a_rows.push(ak.row(i).transpose() * sign);
                    b0.push(ubar);
                    b1_rows.push(am.row(i).transpose() * (-sign));
                }
            }
        }
        for &sj in &grid {
            let (phi, gam) = self.prediction(sj);
            let ap = &gam * &self.k;
            let ax = &phi + &gam * &self.m;
            for sb in &self.params.state_bounds {
                let i = sb.component;
                soft.push(a_rows.len());
                a_rows.push(ap.row(i).transpose());
                b0.push(sb.upper);
                b1_rows.push(-ax.row(i).transpose());
                soft.push(a_rows.len());
                a_rows.push(-ap.row(i).transpose());
                b0.push(-sb.lower);
                b1_rows.push(ax.row(i).transpose());
            }
        }
        let nc = a_rows.len();
        self.a = DMatrix::from_fn(nc, np, |i, j| a_rows[i][j]);
        self.b0 = DVector::from_vec(b0);
        self.b1 = DMatrix::from_fn(nc, n, |i, j| b1_rows[i][j]);
        self.hard_idx = hard;
        self.soft_idx = soft;
    }

    pub fn n_x(&self) -> usize {
        self.a_s.nrows()
    }
    pub fn n_z(&self) -> usize {
        self.c.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b_s.ncols()
    }
    pub fn n_p(&self) -> usize {
        self.k.ncols()
    }
    pub fn n_c(&self) -> usize {
        self.a.nrows()
    }
    pub fn blocks(&self) -> usize {
        self.params.basis.blocks()
    }
    pub fn horizon(&self) -> f64 {
        self.params.horizon
    }
    pub fn block_width(&self) -> f64 {
        self.params.horizon / self.blocks() as f64
    }
    pub fn u_bar(&self) -> f64 {
        self.params.u_bar
    }
    pub fn eps_psi(&self) -> f64 {
        self.params.eps_psi
    }

    fn block_of(&self, s: f64) -> (usize, f64) {
        let w = self.block_width();
        let j = ((s / w).floor().max(0.0) as usize).min(self.blocks() - 1);
        (j, s - j as f64 * w)
    }

    /// Row selector of the input at time `s`: `u(s) = sel * p_u`.
    /// Zero at and beyond the horizon, where the profile is extended by `u = 0`.
    pub fn input_selector(&self, s: f64) -> DMatrix<f64> {
        let mdim = self.blocks() * self.n_u();
        if s >= self.horizon() {
            return DMatrix::zeros(self.n_u(), mdim);
        }
        let (j, _) = self.block_of(s);
        block_selector(j, self.n_u(), mdim)
    }

    /// `(Phi(s), Gamma(s))` with `x(s) = Phi(s) x0 + Gamma(s) p_u`, exact.
    pub fn prediction(&self, s: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        if s >= self.horizon() {
            let (phi, gam) = &self.maps[self.blocks()];
            let e = linalg::expm(&self.a_s, s - self.horizon());
            return (&e * phi, &e * gam);
        }
        let (j, rem) = self.block_of(s);
        let (phi, gam) = &self.maps[j];
        if rem == 0.0 {
            return (phi.clone(), gam.clone());
        }
        let (ad, bd) = linalg::zoh(&self.a_s, &self.b_s, rem);
        let sel = block_selector(j, self.n_u(), self.blocks() * self.n_u());
        (&ad * phi, &ad * gam + bd * sel)
    }

    /// `p_u = K p + M x`.
    pub fn p_u(&self, p: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        &self.k * p + &self.m * x
    }

    /// Input values on each block, `n_u` per block.
    pub fn input_at(&self, s: f64, p_u: &DVector<f64>) -> DVector<f64> {
        self.input_selector(s) * p_u
    }

    pub fn state_at(&self, s: f64, x0: &DVector<f64>, p_u: &DVector<f64>) -> DVector<f64> {
        let (phi, gam) = self.prediction(s);
        phi * x0 + gam * p_u
    }

    /// Tracking cost `q(x) = |C x|_Q^2 / 2`, the state part of the stage cost.
    /// With this scaling the stage cost starts at or above `q(x)` and `q`
    /// decays no faster than `D_C`.
    pub fn q_of(&self, x: &DVector<f64>) -> f64 {
        let e = &self.c * x;
        0.5 * e.dot(&(&self.q * &e))
    }

    /// Stage cost `q(x) + u'Ru / 2`.
    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.q_of(x) + 0.5 * u.dot(&(&self.r * u))
    }

    /// Breakpoints of the input profile inside `[a, b]`, endpoints included.
    pub fn segments(&self, a: f64, b: f64) -> Vec<f64> {
        let w = self.block_width();
        let mut pts = vec![a];
        for j in 1..=self.blocks() {
            let t = j as f64 * w;
            if t > a && t < b {
                pts.push(t);
            }
        }
        pts.push(b);
        pts
    }

    /// Integral of the stage cost along the prediction from `x0` with `p_u`,
    /// over `[a, b]`; Gauss-Legendre on each constant-input segment.
    pub fn cost_integral(&self, x0: &DVector<f64>, p_u: &DVector<f64>, a: f64, b: f64) -> f64 {
        let pts = self.segments(a, b);
        let mut total = 0.0;
        for w in pts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let u = self.input_at(mid, p_u);
            total += linalg::gauss_integrate(w[0], w[1], 8, |s| {
                self.stage_cost(&self.state_at(s, x0, p_u), &u)
            });
        }
        total
    }

    /// Condensed cost `f0(p, x)`.
    pub fn f0(&self, p: &DVector<f64>, x: &DVector<f64>) -> f64 {
        0.5 * p.dot(&(&self.h * p)) + (&self.f1 * x).dot(p) + x.dot(&(&self.s * x))
    }

    /// The QP at state `x`: `F = F1 x`, `s0 = x'Sx`, `B = B0 + B1 x`.
    pub fn qp_at(&self, x: &DVector<f64>) -> Result<QpProblem> {
        check_dim("state", self.n_x(), x.len())?;
        let f = &self.f1 * x;
        let s0 = x.dot(&(&self.s * x));
        let b = &self.b0 + &self.b1 * x;
        QpProblem::new(
            self.h.clone(),
            f,
            s0,
            self.a.clone(),
            b,
            self.hard_idx.clone(),
            self.soft_idx.clone(),
            self.params.eps_psi,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MpcDesignJson::from(self)).expect("plain data serializes")
    }
}

/// Serialized form: matrices as arrays of rows, grids explicit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcDesignJson {
    pub params: DesignParams,
    #[serde(rename = "As")]
    pub a_s: Vec<Vec<f64>>,
    #[serde(rename = "Bs")]
    pub b_s: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "F1")]
    pub f1: Vec<Vec<f64>>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B0")]
    pub b0: Vec<f64>,
    #[serde(rename = "B1")]
    pub b1: Vec<Vec<f64>>,
    pub check_grid: Vec<f64>,
    pub hard_idx: Vec<usize>,
    pub soft_idx: Vec<usize>,
}

impl From<&MpcDesign> for MpcDesignJson {
    fn from(d: &MpcDesign) -> Self {
        Self {
            params: d.params.clone(),
            a_s: rows_of(&d.a_s),
            b_s: rows_of(&d.b_s),
            c: rows_of(&d.c),
            k: rows_of(&d.k),
            m: rows_of(&d.m),
            h: rows_of(&d.h),
            f1: rows_of(&d.f1),
            s: rows_of(&d.s),
            a: rows_of(&d.a),
            b0: d.b0.iter().cloned().collect(),
            b1: rows_of(&d.b1),
            check_grid: d.check_grid.clone(),
            hard_idx: d.hard_idx.clone(),
            soft_idx: d.soft_idx.clone(),
        }
    }
}
