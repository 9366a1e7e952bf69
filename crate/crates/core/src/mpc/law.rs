//! Decrease condition and the state-dependent updating period.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::bounds::CompactSetBounds;
use crate::problem::SuboptimalityPair;

/// Lower bound on the cost decrease accumulated over `tau` from a state with
/// tracking cost `q`, when `q` decays at most at rate `d_c`.
pub fn gamma_lb(tau: f64, q: f64, d_c: f64) -> f64 {
    if tau <= 0.0 || q <= 0.0 {
        return 0.0;
    }
    if tau <= q / d_c {
        q * tau - 0.5 * d_c * tau * tau
    } else {
        q * q / (2.0 * d_c)
    }
}

/// `K0 (E0 + tau_c E1 N) + eps0 - Gamma(tau_c N, q_bar)` with `N = N_C(eps0, eps_psi)`.
pub fn r_decrease(
    eps0: f64,
    eps_psi: f64,
    q_bar: f64,
    tau_c: f64,
    bounds: &CompactSetBounds,
) -> Result<f64> {
    let pair = SuboptimalityPair::new(eps0, eps_psi)?;
    let n = bounds.pipeline(&pair)?.n;
    Ok(r_from_n(eps0, n, q_bar, tau_c, bounds))
}

/// The decrease residual for a known iteration count.
pub fn r_from_n(eps0: f64, n: u64, q_bar: f64, tau_c: f64, bounds: &CompactSetBounds) -> f64 {
    // u64::MAX marks an unbounded count.
    let tau = if n == u64::MAX {
        f64::INFINITY
    } else {
        tau_c * n as f64
    };
    let drift = if bounds.e1 == 0.0 { 0.0 } else { bounds.e1 * tau };
    bounds.k_c0 * (bounds.e0 + drift) + eps0 - gamma_lb(tau, q_bar, bounds.d_c)
}

/// Parameters of a certification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyParams {
    pub eps_psi: f64,
    pub tau_c: f64,
    pub q_min: f64,
    pub gamma_c: f64,
    pub lambda: f64,
    pub eps0_lo: f64,
    pub eps0_hi: f64,
    pub grid_points: usize,
    /// Relative width at which endpoint bisection stops.
    pub bisect_rel: f64,
    /// Precision cap is `gamma_c q_min^2 / (cap_divisor D)`. The per-event
    /// decrease argument needs every precision below the `6 D` level.
    pub cap_divisor: f64,
}

impl CertifyParams {
    pub fn new(eps_psi: f64, tau_c: f64, q_min: f64, gamma_c: f64) -> Self {
        Self {
            eps_psi,
            tau_c,
            q_min,
            gamma_c,
            lambda: 0.6,
            eps0_lo: 1e-8,
            eps0_hi: 1e-1,
            grid_points: 200,
            bisect_rel: 1e-3,
            cap_divisor: 6.0,
        }
    }

    /// `gamma_c q_min^2 / (3 D)`: the required decrease margin.
    pub fn threshold(&self, d_c: f64) -> f64 {
        self.gamma_c * self.q_min * self.q_min / (3.0 * d_c)
    }

    /// Upper cap on the solver precision.
    pub fn eps0_cap(&self, d_c: f64) -> f64 {
        self.gamma_c * self.q_min * self.q_min / (self.cap_divisor * d_c)
    }

    /// Guaranteed per-event decrease of the visited cost, `gamma_c q_min^2 / (6 D)`.
    pub fn event_decrease(&self, d_c: f64) -> f64 {
        self.gamma_c * self.q_min * self.q_min / (6.0 * d_c)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.eps_psi > 0.0
            && self.tau_c > 0.0
            && self.q_min > 0.0
            && self.gamma_c > 0.0
            && (0.0..=1.0).contains(&self.lambda)
            && self.eps0_lo > 0.0
            && self.eps0_hi > self.eps0_lo
            && self.grid_points >= 2
            && self.bisect_rel > 0.0
            && self.cap_divisor >= 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("bad certification parameters {self:?}")))
        }
    }
}

/// One row of the sampling-law table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawRow {
    pub q_bar: f64,
    pub eps0_lower: f64,
    pub eps0_upper: f64,
    pub eps0_sol: f64,
    pub n_iters: u64,
    pub tau_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedSamplingLaw {
    pub q_min: f64,
    pub gamma_c: f64,
    pub eps_psi: f64,
    pub tau_c: f64,
    pub lambda: f64,
    pub d_c: f64,
    pub table: Vec<LawRow>,
}

/// Result of a period lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Period {
    pub tau_k: f64,
    pub eps0: f64,
    pub n: u64,
    /// `q(x) < q_min`: the state is in the target set and the first row is used.
    pub in_target: bool,
}

impl CertifiedSamplingLaw {
    pub fn threshold(&self) -> f64 {
        self.gamma_c * self.q_min * self.q_min / (3.0 * self.d_c)
    }

    pub fn event_decrease(&self) -> f64 {
        self.gamma_c * self.q_min * self.q_min / (6.0 * self.d_c)
    }

    /// Largest initial precision allowed, `gamma_c q_min^2 / (6 D)`.
    pub fn eps0_initial_cap(&self) -> f64 {
        self.event_decrease()
    }

    /// Period for tracking cost `q`. Uses the row with the largest `q_bar <= q`;
    /// admissible sets grow with `q_bar`, so that row is valid at `q`.
    pub fn period_for_q(&self, q: f64) -> Period {
        let idx = self.table.partition_point(|r| r.q_bar <= q);
        let in_target = q < self.q_min;
        let row = &self.table[idx.saturating_sub(1)];
        Period {
            tau_k: row.tau_k,
            eps0: row.eps0_sol,
            n: row.n_iters,
            in_target,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("q_bar,eps0_lower,eps0_upper,eps0_sol,N,tau_k\n");
        for r in &self.table {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt17(r.q_bar),
                fmt17(r.eps0_lower),
                fmt17(r.eps0_upper),
                fmt17(r.eps0_sol),
                r.n_iters,
                fmt17(r.tau_k)
            ));
        }
        out
    }
}

/// Float with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// `(tau_k, eps0, N)` for state `x` via the design's tracking cost.
pub fn updating_period(
    law: &CertifiedSamplingLaw,
    design: &crate::mpc::design::MpcDesign,
    x: &nalgebra::DVector<f64>,
) -> Period {
    law.period_for_q(design.q_of(x))
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i + 1 == n {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

struct Scan<'a> {
    bounds: &'a CompactSetBounds,
    p: &'a CertifyParams,
    cap: f64,
    thr: f64,
    q_bar: f64,
}

impl Scan<'_> {
    /// `R - threshold` and the iteration count.
    fn margin(&self, eps0: f64) -> Result<(f64, u64)> {
        let pair = SuboptimalityPair::new(eps0, self.p.eps_psi)?;
        let n = self.bounds.pipeline(&pair)?.n;
        let r = r_from_n(eps0, n, self.q_bar, self.p.tau_c, self.bounds);
        Ok((r + self.thr, n))
    }

    fn admissible(&self, eps0: f64) -> Result<bool> {
        Ok(eps0 <= self.cap && self.margin(eps0)?.0 <= 0.0)
    }

    /// Shrinks `[good, bad]` (either order) until relative width `bisect_rel`;
    /// returns the admissible end.
    fn bisect(&self, mut good: f64, mut bad: f64) -> Result<f64> {
        while (good - bad).abs() > self.p.bisect_rel * good.abs().min(bad.abs()) {
            let mid = (good * bad).sqrt();
            if self.admissible(mid)? {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok(good)
    }
}

/// Admissible precision interval at `q_bar`, or the closest margin if empty.
fn interval_at(
    bounds: &CompactSetBounds,
    p: &CertifyParams,
    q_bar: f64,
) -> Result<std::result::Result<(f64, f64), f64>> {
    let scan = Scan {
        bounds,
        p,
        cap: p.eps0_cap(bounds.d_c),
        thr: p.threshold(bounds.d_c),
        q_bar,
    };
    let grid = log_grid(p.eps0_lo, p.eps0_hi, p.grid_points);
    let mut ok = Vec::with_capacity(grid.len());
    let mut best = f64::INFINITY;
    for &e in &grid {
        let (m, _) = scan.margin(e)?;
        // Distance to admissibility, counting the cap as part of the condition.
        let excess = m.max(e - scan.cap);
        best = best.min(excess);
        ok.push(excess <= 0.0);
    }
    // Longest run of admissible grid points.
    let (mut s_best, mut len_best) = (0usize, 0usize);
    let mut i = 0;
    while i < ok.len() {
        if ok[i] {
            let s = i;
            while i < ok.len() && ok[i] {
                i += 1;
            }
            if i - s > len_best {
                s_best = s;
                len_best = i - s;
            }
        } else {
            i += 1;
        }
    }
    if len_best == 0 {
        return Ok(Err(best));
    }
    let e_first = s_best;
    let e_last = s_best + len_best - 1;
    let lower = if e_first == 0 {
        grid[0]
    } else {
        scan.bisect(grid[e_first], grid[e_first - 1])?
    };
    let upper = if e_last + 1 == grid.len() {
        grid[e_last]
    } else {
        scan.bisect(grid[e_last], grid[e_last + 1])?
    };
    Ok(Ok((lower, upper)))
}

/// Builds the sampling-law table over `q_grid` (sorted, all `>= q_min`).
pub fn certify(
    bounds: &CompactSetBounds,
    params: &CertifyParams,
    q_grid: &[f64],
) -> Result<CertifiedSamplingLaw> {
    params.validate()?;
    if q_grid.is_empty() || q_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Parameter("q grid must be nonempty and sorted".into()));
    }
    if q_grid[0] < params.q_min {
        return Err(Error::Parameter("q grid must start at or above q_min".into()));
    }
    if !(bounds.d_c > 0.0) {
        return Err(Error::Design("decay constant D_C must be > 0".into()));
    }
    let thr = params.threshold(bounds.d_c);
    let cap = params.eps0_cap(bounds.d_c);
    let mut table = Vec::with_capacity(q_grid.len());
    for (i, &q_bar) in q_grid.iter().enumerate() {
        let (lower, upper) = match interval_at(bounds, params, q_bar)? {
            Ok(iv) => iv,
            Err(margin) => {
                if i == 0 {
                    return Err(Error::CertificationInfeasible {
                        q_min: q_bar,
                        margin,
                    });
                }
                // Admissible sets only grow with q_bar; an empty set here
                // means a non-monotone residual, so reuse the previous row.
                let prev: LawRow = *table.last().expect("row 0 exists");
                table.push(LawRow { q_bar, ..prev });
                continue;
            }
        };
        let mut sol = (1.0 - params.lambda) * lower + params.lambda * upper;
        let scan = Scan {
            bounds,
            p: params,
            cap,
            thr,
            q_bar,
        };
        if !scan.admissible(sol)? {
            // The residual is not convex in general; fall back to an endpoint.
            sol = upper;
        }
        let pair = SuboptimalityPair::new(sol, params.eps_psi)?;
        let n = bounds.pipeline(&pair)?.n;
        table.push(LawRow {
            q_bar,
            eps0_lower: lower,
            eps0_upper: upper,
            eps0_sol: sol,
            n_iters: n,
            tau_k: params.tau_c * n as f64,
        });
    }
    Ok(CertifiedSamplingLaw {
        q_min: params.q_min,
        gamma_c: params.gamma_c,
        eps_psi: params.eps_psi,
        tau_c: params.tau_c,
        lambda: params.lambda,
        d_c: bounds.d_c,
        table,
    })
}

/// `q_min * ratio` on a log-spaced grid, as used for the law table.
pub fn q_grid(q_min: f64, max_ratio: f64, points: usize) -> Vec<f64> {
    log_grid(q_min, q_min * max_ratio, points.max(2))
}
