//! Constant-step fast gradient iteration for `mu`-strongly convex functions
//! with `L`-Lipschitz gradient, plus its a priori iteration bound.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};

/// Strong-convexity and gradient-Lipschitz constants of the minimized function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessPair {
    mu: f64,
    l: f64,
}

impl SmoothnessPair {
    pub fn new(mu: f64, l: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite() && l.is_finite() && l >= mu) {
            return Err(Error::Parameter(format!(
                "need 0 < mu <= L, got mu = {mu}, L = {l}"
            )));
        }
        Ok(Self { mu, l })
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    /// `c = sqrt(mu / L)`.
    pub fn c(&self) -> f64 {
        (self.mu / self.l).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastGradientState {
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    pub alpha: f64,
    pub iter: u64,
}

impl FastGradientState {
    /// `q0 = p0`, `alpha0 = sqrt(mu / L)`.
    pub fn new(p0: DVector<f64>, smooth: &SmoothnessPair) -> Self {
        Self {
            q: p0.clone(),
            p: p0,
            alpha: smooth.c(),
            iter: 0,
        }
    }
}

/// Positive root of `a^2 = (1 - a) alpha^2 + (mu / L) a`.
pub fn alpha_next(alpha: f64, smooth: &SmoothnessPair) -> f64 {
    let kappa = smooth.mu / smooth.l;
    let a2 = alpha * alpha;
    let b = a2 - kappa;
    let disc = (b * b + 4.0 * a2).sqrt();
    // Both branches are the same root; pick the one free of cancellation.
    if b > 0.0 {
        2.0 * a2 / (b + disc)
    } else {
        0.5 * (disc - b)
    }
}

/// Reusable buffers for [`advance`].
#[derive(Debug, Clone)]
pub struct FgWorkspace {
    grad: DVector<f64>,
    p_next: DVector<f64>,
}

impl FgWorkspace {
    pub fn new(n: usize) -> Self {
        Self {
            grad: DVector::zeros(n),
            p_next: DVector::zeros(n),
        }
    }
}

/// One iteration, in place. `grad(x, out)` must write `f'(x)` into `out`.
pub fn advance<G>(
    state: &mut FastGradientState,
    grad: &mut G,
    smooth: &SmoothnessPair,
    ws: &mut FgWorkspace,
) -> Result<()>
where
    G: FnMut(&DVector<f64>, &mut DVector<f64>),
{
    grad(&state.q, &mut ws.grad);
    if !ws.grad.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric { iter: state.iter as usize });
    }
    // p+ = q - f'(q) / L
    ws.p_next.copy_from(&state.q);
    ws.p_next.axpy(-1.0 / smooth.l, &ws.grad, 1.0);

    let a = state.alpha;
    let a_next = alpha_next(a, smooth);
    let beta = a * (1.0 - a) / (a * a + a_next);

    // q+ = p+ + beta (p+ - p)
    state.q.copy_from(&ws.p_next);
    state.q *= 1.0 + beta;
    state.q.axpy(-beta, &state.p, 1.0);
    std::mem::swap(&mut state.p, &mut ws.p_next);
    state.alpha = a_next;
    state.iter += 1;
    Ok(())
}

/// Pure single step: returns the successor state.
pub fn fg_step<G>(
    state: &FastGradientState,
    mut grad: G,
    smooth: &SmoothnessPair,
) -> Result<FastGradientState>
where
    G: FnMut(&DVector<f64>, &mut DVector<f64>),
{
    if !(state.alpha > 0.0 && state.alpha <= 1.0) {
        return Err(Error::Invariant(format!("alpha = {} outside (0, 1]", state.alpha)));
    }
    check_dim("fast-gradient extrapolated point", state.p.len(), state.q.len())?;
    let mut next = state.clone();
    let mut ws = FgWorkspace::new(state.p.len());
    advance(&mut next, &mut grad, smooth, &mut ws)?;
    Ok(next)
}

/// Real-valued iteration bound before rounding; may be `+inf`.
pub fn nbar_real(c: f64, gamma: f64) -> Result<f64> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::Parameter(format!("c must lie in (0, 1), got {c}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::Parameter(format!("gamma must be > 0, got {gamma}")));
    }
    if gamma >= 1.0 {
        return Ok(0.0);
    }
    if c == 1.0 {
        // mu = L: one gradient step lands on the minimizer.
        return Ok(1.0);
    }
    let geometric = gamma.ln() / (-c).ln_1p();
    let polynomial = ((1.0 / gamma).sqrt() - 1.0) / c;
    Ok(geometric.min(polynomial).max(0.0))
}

/// Iteration count guaranteeing `f(p_N) - f(p*) <= gamma (L + mu)/2 ||p0 - p*||^2`.
///
/// The real bound is rounded up; a relative `1e-12` allowance keeps exact
/// integers such as `2.0000000000000004` at 2.
pub fn nbar(c: f64, gamma: f64) -> Result<u64> {
    let x = nbar_real(c, gamma)?;
    if x == 0.0 {
        return Ok(0);
    }
    Ok((x - 1e-12 * x.max(1.0)).ceil() as u64)
}

/// Right-hand side of the rate bound after `i` iterations.
pub fn convergence_bound(i: u64, smooth: &SmoothnessPair, dist0: f64) -> f64 {
    let c = smooth.c();
    let geometric = (1.0 - c).powf(i as f64);
    let polynomial = 1.0 / (1.0 + i as f64 * c).powi(2);
    0.5 * (smooth.l + smooth.mu) * geometric.min(polynomial) * dist0 * dist0
}

/// `r(p) = sqrt(2 f(p) / mu)`, a bound on `||p - p*||` when `f >= 0`.
pub fn radius_bound(f_at_p: f64, mu: f64) -> Result<f64> {
    if f_at_p < 0.0 {
        return Err(Error::Invariant(format!(
            "radius bound needs f(p) >= 0, got {f_at_p}"
        )));
    }
    if !(mu > 0.0) {
        return Err(Error::Parameter(format!("mu must be > 0, got {mu}")));
    }
    Ok((2.0 * f_at_p / mu).sqrt())
}
