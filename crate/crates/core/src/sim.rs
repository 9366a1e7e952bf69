//! Closed-loop simulation of certified real-time MPC and the online monitor.
//!
//! Event `k` runs over `[t_k, t_{k+1})`. The input applied there is the
//! profile of `p_k`, solved for the state `xs_k` the controller predicted.
//! During the same interval the next solve runs for the prediction of
//! `x(t_{k+1})`, with exactly `N_k` iterations of budget, so
//! `t_{k+1} = t_k + tau_c N_k`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certified::{certified_solve_with_budget, CertifiedSolveReport};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::mpc::bounds::CompactSetBounds;
use crate::mpc::design::{DesignParams, MpcDesign, StateBound};
use crate::mpc::law::{fmt17, CertifiedSamplingLaw};
use crate::problem::{matrix_from_rows, SuboptimalityPair};

/// Physical LTI plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub a0: DMatrix<f64>,
    pub b0m: DMatrix<f64>,
    pub u_bar: f64,
    pub state_box: Vec<StateBound>,
}

impl Plant {
    pub fn new(
        a0: DMatrix<f64>,
        b0m: DMatrix<f64>,
        u_bar: f64,
        state_box: Vec<StateBound>,
    ) -> Result<Self> {
        check_dim("A0 columns", a0.nrows(), a0.ncols())?;
        check_dim("B0 rows", a0.nrows(), b0m.nrows())?;
        if !(u_bar > 0.0) {
            return Err(Error::Parameter("u_bar must be > 0".into()));
        }
        if let Some(sb) = state_box.iter().find(|sb| !(sb.lower < sb.upper)) {
            return Err(Error::Parameter(format!("empty state box {sb:?}")));
        }
        Ok(Self {
            a0,
            b0m,
            u_bar,
            state_box,
        })
    }

    pub fn from_params(p: &DesignParams) -> Result<Self> {
        Self::new(
            matrix_from_rows(&p.a0, 0)?,
            matrix_from_rows(&p.b0, 0)?,
            p.u_bar,
            p.state_bounds.clone(),
        )
    }

    pub fn n_z(&self) -> usize {
        self.a0.nrows()
    }
}

/// Set-point trajectory `z_d(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetpointProfile {
    Constant { value: Vec<f64> },
    /// Piecewise constant: `value` holds from `time` on; before the first
    /// entry the first value holds.
    Steps { steps: Vec<(f64, Vec<f64>)> },
    /// Straight move from `from` to `to` at speed `rate`, starting at `t_start`.
    Ramp {
        from: Vec<f64>,
        to: Vec<f64>,
        t_start: f64,
        rate: f64,
    },
}

impl SetpointProfile {
    pub fn value(&self, t: f64) -> DVector<f64> {
        match self {
            Self::Constant { value } => DVector::from_column_slice(value),
            Self::Steps { steps } => {
                let idx = steps.partition_point(|(ts, _)| *ts <= t);
                DVector::from_column_slice(&steps[idx.saturating_sub(1)].1)
            }
            Self::Ramp {
                from,
                to,
                t_start,
                rate,
            } => {
                let a = DVector::from_column_slice(from);
                let b = DVector::from_column_slice(to);
                let dist = (&b - &a).norm();
                if dist == 0.0 || t <= *t_start {
                    return a;
                }
                let frac = (rate * (t - t_start) / dist).min(1.0);
                &a + (&b - &a) * frac
            }
        }
    }

    /// Largest `|dz_d/dt|` (zero for step profiles, whose jumps are not rates).
    pub fn max_rate(&self) -> f64 {
        match self {
            Self::Ramp { rate, .. } => *rate,
            _ => 0.0,
        }
    }

    /// Largest `|z_d|` over time.
    pub fn max_norm(&self) -> f64 {
        match self {
            Self::Constant { value } => DVector::from_column_slice(value).norm(),
            Self::Steps { steps } => steps
                .iter()
                .map(|(_, v)| DVector::from_column_slice(v).norm())
                .fold(0.0, f64::max),
            Self::Ramp { from, to, .. } => DVector::from_column_slice(from)
                .norm()
                .max(DVector::from_column_slice(to).norm()),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Self::Constant { value } => value.len(),
            Self::Steps { steps } => steps.first().map(|s| s.1.len()).unwrap_or(0),
            Self::Ramp { from, .. } => from.len(),
        }
    }
}

/// One event of the closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub q: f64,
    /// Precision the applied solution was certified for.
    pub eps0: f64,
    pub tau: f64,
    /// Certified iteration count of the period, `N_C(eps0)` from the law.
    pub n_certified: u64,
    /// Budget and use of the solve running during this event.
    pub n_budget: u64,
    pub n_used: u64,
    /// `f0(p_k, x(t_k))` at the actual state.
    pub f0_visited: f64,
    /// Hard rows of the applied solution at the state it was solved for.
    pub max_hard_violation: f64,
    /// Soft rows of the applied solution at the actual state.
    pub max_soft_violation: f64,
    /// `f0` change to the next event plus the certified decrease; `<= 0` is
    /// the required behaviour while `q > q_min`. `None` on the last event.
    pub decrease_margin: Option<f64>,
    pub in_target: bool,
    /// Applied solution and the state it was solved for.
    pub p: Vec<f64>,
    pub x_solved: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopTrace {
    pub events: Vec<EventRecord>,
    pub tau_c: f64,
    pub event_decrease: f64,
}

const CSV_HEADER: &str = "k,t,q,eps0,tau,n_certified,n_budget,n_used,f0_visited,max_hard_violation,max_soft_violation,decrease_margin,in_target";

impl ClosedLoopTrace {
    /// One row per event; the state vector follows as `x0..x{n-1}`.
    pub fn to_csv(&self) -> String {
        let nx = self.events.first().map(|e| e.x.len()).unwrap_or(0);
        let mut out = String::from(CSV_HEADER);
        for i in 0..nx {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for (k, e) in self.events.iter().enumerate() {
            out.push_str(&format!(
                "{k},{},{},{},{},{},{},{},{},{},{},{},{}",
                fmt17(e.t),
                fmt17(e.q),
                fmt17(e.eps0),
                fmt17(e.tau),
                e.n_certified,
                e.n_budget,
                e.n_used,
                fmt17(e.f0_visited),
                fmt17(e.max_hard_violation),
                fmt17(e.max_soft_violation),
                e.decrease_margin.map(fmt17).unwrap_or_default(),
                e.in_target as u8
            ));
            for v in &e.x {
                out.push(',');
                out.push_str(&fmt17(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Knobs of a run beyond the law itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub horizon: f64,
    /// Hard stop on the number of events.
    pub max_events: usize,
    /// Multiplies every solve budget; values below 1 inject a fault.
    pub budget_scale: f64,
    /// Cost level the initial pair must respect.
    pub phi0: f64,
}

/// Least-squares shift of the previous profile by `tau` onto the
/// parametrization at `x_next`.
pub fn warm_start_shift(
    design: &MpcDesign,
    p_prev: &DVector<f64>,
    x_prev: &DVector<f64>,
    x_next: &DVector<f64>,
    tau: f64,
) -> DVector<f64> {
    let np = design.n_p();
    let nu = design.n_u();
    let mdim = design.blocks() * nu;
    let horizon = design.horizon();
    let w = design.block_width();
    let pu_prev = design.p_u(p_prev, x_prev);
    let end = (horizon - tau).max(0.0);
    // G = int_0^end Phi' Phi, b = int_0^end Phi' v with v(s) = u_prev(s + tau).
    let mut g = DMatrix::zeros(mdim, mdim);
    let mut b = DVector::zeros(mdim);
    let mut pts: Vec<f64> = vec![0.0, end];
    for j in 1..design.blocks() {
        let t = j as f64 * w;
        for c in [t, t - tau] {
            if c > 0.0 && c < end {
                pts.push(c);
            }
        }
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for seg in pts.windows(2) {
        let len = seg[1] - seg[0];
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (seg[0] + seg[1]);
        let sel = design.input_selector(mid);
        let v = design.input_at(mid + tau, &pu_prev);
        g += sel.transpose() * &sel * len;
        b += sel.transpose() * v * len;
    }
    if np == 0 {
        return DVector::zeros(0);
    }
    let kt = design.k.transpose();
    let lhs = &kt * &g * &design.k;
    let rhs = &kt * (b - &g * (&design.m * x_next));
    linalg::pseudo_inverse(&lhs) * rhs
}

/// Exact propagation of the physical state over `[0, tau]` under the profile `p_u`.
fn propagate(plant: &Plant, design: &MpcDesign, z0: &DVector<f64>, p_u: &DVector<f64>, tau: f64) -> DVector<f64> {
    let mut z = z0.clone();
    let pts = design.segments(0.0, tau);
    for seg in pts.windows(2) {
        let len = seg[1] - seg[0];
        if len <= 0.0 {
            continue;
        }
        let u = design.input_at(0.5 * (seg[0] + seg[1]), p_u);
        let (ad, bd) = linalg::zoh(&plant.a0, &plant.b0m, len);
        z = ad * z + bd * u;
    }
    z
}

fn join(z: &DVector<f64>, zd: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(z.len() + zd.len(), z.iter().chain(zd.iter()).cloned())
}

fn solve_at(
    design: &MpcDesign,
    bounds: &CompactSetBounds,
    x: &DVector<f64>,
    p0: &DVector<f64>,
    eps0: f64,
    budget: u64,
) -> Result<CertifiedSolveReport> {
    let prob = design.qp_at(x)?;
    let pair = SuboptimalityPair::new(eps0, design.eps_psi())?;
    let consts = bounds.solver_constants(&pair);
    certified_solve_with_budget(&prob, p0, &consts, Some(budget))
}

fn violations(design: &MpcDesign, p: &DVector<f64>, x_hard: &DVector<f64>, x_soft: &DVector<f64>) -> (f64, f64) {
    let rows_h = &design.a * p - (&design.b0 + &design.b1 * x_hard);
    let rows_s = &design.a * p - (&design.b0 + &design.b1 * x_soft);
    let hard = design.hard_idx.iter().map(|&i| rows_h[i]).fold(0.0, f64::max);
    let soft = design.soft_idx.iter().map(|&i| rows_s[i]).fold(0.0, f64::max);
    (hard, soft)
}

/// Runs the closed loop from `z0` (physical state) under `law`.
pub fn simulate(
    plant: &Plant,
    design: &MpcDesign,
    bounds: &CompactSetBounds,
    law: &CertifiedSamplingLaw,
    z0: &DVector<f64>,
    zd_profile: &SetpointProfile,
    opts: &SimOptions,
) -> Result<ClosedLoopTrace> {
    check_dim("initial state", plant.n_z(), z0.len())?;
    check_dim("set-point", plant.n_z(), zd_profile.dim())?;
    check_dim("plant vs design", design.n_z(), plant.n_z())?;
    if law.table.is_empty() {
        return Err(Error::Precondition("sampling law has no rows".into()));
    }
    if !(opts.budget_scale > 0.0) || !(opts.horizon > 0.0) {
        return Err(Error::Parameter("budget_scale and horizon must be > 0".into()));
    }

    // The compact-set bounds are stated in the error `z - z_d`, which only
    // carries the whole cost when `z_d` is an equilibrium.
    let check_zd = |zd: &DVector<f64>| -> Result<()> {
        if (&plant.a0 * zd).amax() > 1e-9 * (1.0 + zd.amax()) {
            return Err(Error::Precondition(format!(
                "set-point {:?} is not an equilibrium of the plant",
                zd.as_slice()
            )));
        }
        Ok(())
    };
    check_zd(&zd_profile.value(0.0))?;
    let mut x = join(z0, &zd_profile.value(0.0));
    let pu_cold = &design.m * &x;
    if pu_cold.amax() > design.u_bar() {
        return Err(Error::Precondition(format!(
            "initial state needs |M x0|_inf = {} > u_bar",
            pu_cold.amax()
        )));
    }

    let scaled = |n: u64| -> u64 { ((n as f64) * opts.budget_scale).floor().max(0.0) as u64 };

    // First solution, computed before t0 from the cold start p = 0.
    let first = law.period_for_q(design.q_of(&x));
    let eps_init = first.eps0.min(law.eps0_initial_cap());
    let n_init = scaled(bounds.pipeline(&SuboptimalityPair::new(eps_init, law.eps_psi)?)?.n);
    let rep0 = solve_at(design, bounds, &x, &DVector::zeros(design.n_p()), eps_init, n_init)?;
    let mut p = rep0.p_hat();
    let mut eps_cur = eps_init;
    let f_start = design.f0(&p, &x);
    if f_start > opts.phi0 {
        return Err(Error::Precondition(format!(
            "initial cost {f_start:e} exceeds phi0 = {:e}",
            opts.phi0
        )));
    }

    let mut xs = x.clone();
    let mut t = 0.0;
    let mut events: Vec<EventRecord> = Vec::new();
    let mut last_period = first;
    let nz = plant.n_z();

    while t < opts.horizon && events.len() < opts.max_events {
        let q = design.q_of(&x);
        let mut period = law.period_for_q(q);
        if period.in_target && !events.is_empty() {
            period = crate::mpc::law::Period {
                in_target: true,
                ..last_period
            };
        }
        last_period = period;
        let budget = scaled(period.n);
        let tau = law.tau_c * budget as f64;

        let pu = design.p_u(&p, &xs);
        let z = x.rows(0, nz).into_owned();
        let z_next = propagate(plant, design, &z, &pu, tau);
        let zd_now = x.rows(nz, nz).into_owned();
        let xs_next = join(&z_next, &zd_now);
        let zd_next = zd_profile.value(t + tau);
        check_zd(&zd_next)?;
        let x_next = join(&z_next, &zd_next);

        let p0 = warm_start_shift(design, &p, &xs, &xs_next, tau);
        let rep = solve_at(design, bounds, &xs_next, &p0, period.eps0, budget)?;

        let (hard, soft) = violations(design, &p, &xs, &x);
        events.push(EventRecord {
            t,
            x: x.iter().cloned().collect(),
            q,
            eps0: eps_cur,
            tau,
            n_certified: period.n,
            n_budget: budget,
            n_used: rep.iters_used,
            f0_visited: design.f0(&p, &x),
            max_hard_violation: hard,
            max_soft_violation: soft,
            decrease_margin: None,
            in_target: q < law.q_min,
            p: p.iter().cloned().collect(),
            x_solved: xs.iter().cloned().collect(),
        });

        p = rep.p_hat();
        eps_cur = period.eps0;
        xs = xs_next;
        x = x_next;
        t += tau;
        if tau == 0.0 {
            break;
        }
    }

    let dec = law.event_decrease();
    for k in 0..events.len().saturating_sub(1) {
        let d = events[k + 1].f0_visited - events[k].f0_visited + dec;
        events[k].decrease_margin = Some(d);
    }
    Ok(ClosedLoopTrace {
        events,
        tau_c: law.tau_c,
        event_decrease: dec,
    })
}

/// Per-check outcome of the monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    /// Visited-cost decrease while `q > q_min`.
    pub decrease_ok: bool,
    pub hard_ok: bool,
    pub soft_ok: bool,
    pub budget_ok: bool,
    pub timing_ok: bool,
    /// Events with `q > q_min` before the first arrival in the target set.
    pub events_outside: usize,
    pub event_bound: f64,
    pub arrival_ok: bool,
    pub max_hard_violation: f64,
    pub max_soft_violation: f64,
    pub soft_bound: f64,
    pub worst_decrease_margin: f64,
    pub failing_events: Vec<usize>,
}

impl MonitorReport {
    pub fn all_ok(&self) -> bool {
        self.decrease_ok
            && self.hard_ok
            && self.soft_ok
            && self.budget_ok
            && self.timing_ok
            && self.arrival_ok
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

/// Rechecks every certified inequality on a finished trace.
pub fn monitor(
    trace: &ClosedLoopTrace,
    bounds: &CompactSetBounds,
    law: &CertifiedSamplingLaw,
    phi0: f64,
) -> MonitorReport {
    let ev = &trace.events;
    let max_tau = ev.iter().map(|e| e.tau).fold(0.0, f64::max);
    let soft_bound = law.eps_psi + bounds.k_cpsi * (bounds.e0 + bounds.e1 * max_tau);
    let mut failing = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    let (mut dec_ok, mut hard_ok, mut soft_ok, mut budget_ok, mut timing_ok) =
        (true, true, true, true, true);
    let mut max_hard = 0.0f64;
    let mut max_soft = 0.0f64;
    for (k, e) in ev.iter().enumerate() {
        let mut bad = false;
        if !e.in_target {
            if let Some(m) = e.decrease_margin {
                worst = worst.max(m);
                if m > 0.0 {
                    dec_ok = false;
                    bad = true;
                }
            }
        }
        max_hard = max_hard.max(e.max_hard_violation);
        max_soft = max_soft.max(e.max_soft_violation);
        if e.max_hard_violation > 0.0 {
            hard_ok = false;
            bad = true;
        }
        if e.max_soft_violation > soft_bound {
            soft_ok = false;
            bad = true;
        }
        if e.n_used > e.n_budget || e.n_budget < e.n_certified {
            budget_ok = false;
            bad = true;
        }
        if k + 1 < ev.len() && ev[k + 1].t != e.t + e.tau {
            timing_ok = false;
            bad = true;
        }
        if e.tau != trace.tau_c * e.n_budget as f64 {
            timing_ok = false;
            bad = true;
        }
        if bad {
            failing.push(k);
        }
    }
    let events_outside = ev.iter().take_while(|e| !e.in_target).count();
    let event_bound = phi0 / law.event_decrease();
    let arrived = ev.iter().any(|e| e.in_target);
    let arrival_ok = arrived && (events_outside as f64) <= event_bound;
    MonitorReport {
        decrease_ok: dec_ok,
        hard_ok,
        soft_ok,
        budget_ok,
        timing_ok,
        events_outside,
        event_bound,
        arrival_ok,
        max_hard_violation: max_hard,
        max_soft_violation: max_soft,
        soft_bound,
        worst_decrease_margin: worst,
        failing_events: failing,
    }
}
