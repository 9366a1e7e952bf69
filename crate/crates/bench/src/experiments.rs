//! The four experiments. Each returns plain data plus CSV/JSON renderings;
//! writing files is left to the caller.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use certmpc::mpc::law::{fmt17, q_grid};
use certmpc::mpc::{
    certify, gamma_lb, prediction_error, CertifiedSamplingLaw, CertifyParams,
    CompactSetBounds, MpcDesign,
};
use certmpc::sim::{monitor, simulate, ClosedLoopTrace, MonitorReport, Plant, SimOptions};
use certmpc::{
    certified_solve, solve_reference, CertificationConstants, Error, QpProblem, Result,
    SuboptimalityPair,
};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::generator::{generate, GeneratedQp, GeneratorParams};

/// Oracle tolerance of the random suite.
pub const ORACLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub n_used: u64,
    pub n_max: u64,
    pub ratio: f64,
    pub eps0: f64,
    pub f_ref: f64,
    /// `|f0(p) - f_ref|` at the returned point.
    pub cost_gap: f64,
    pub psi: f64,
    pub suboptimal_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub seed: u64,
    pub rows: Vec<TrialRow>,
    /// `(lo, hi, count)` bins of `N_used / N_max` over `[0, 1]`.
    pub histogram: Vec<(f64, f64, usize)>,
}

impl SuiteResult {
    pub fn failures(&self) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| !r.suboptimal_pass || r.n_used > r.n_max)
            .map(|r| r.trial)
            .collect()
    }

    pub fn all_pass(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.ratio).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,N_used,N_max,ratio,eps0,f_ref,suboptimal_pass\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.trial,
                r.n_used,
                r.n_max,
                fmt17(r.ratio),
                fmt17(r.eps0),
                fmt17(r.f_ref),
                r.suboptimal_pass
            ));
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (lo, hi, c) in &self.histogram {
            out.push_str(&format!("{},{},{}\n", fmt17(*lo), fmt17(*hi), c));
        }
        out
    }
}

fn histogram(ratios: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let mut counts = vec![0usize; bins];
    for &r in ratios {
        let i = ((r * bins as f64).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as f64 / bins as f64, (i + 1) as f64 / bins as f64, c))
        .collect()
}

/// The instance of trial `trial`: its own ChaCha stream, so the result does not
/// depend on which worker ran it.
pub fn trial_instance(cfg: &ExperimentConfig, trial: usize) -> Result<GeneratedQp> {
    let params = GeneratorParams {
        n_p: cfg.n_p,
        n_c: cfg.n_c,
        eps_psi: cfg.mpc.eps_psi,
        ..GeneratorParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial as u64);
    generate(&params, &mut rng)
}

pub fn trial_problem(cfg: &ExperimentConfig, trial: usize) -> Result<QpProblem> {
    Ok(trial_instance(cfg, trial)?.prob)
}

/// One certified cold-start solve checked against the oracle.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialRow> {
    let g = trial_instance(cfg, trial)?;
    let oracle = solve_reference(&g.prob, ORACLE_TOL)?;
    let eps0 = cfg.eps0_fraction * oracle.f_ref;
    let pair = SuboptimalityPair::new(eps0, g.prob.eps_psi())?;
    let k = CertificationConstants::for_problem(&g.prob, &pair, cfg.scaling_mode, g.p_f.norm())?;
    let rep = certified_solve(&g.prob, &DVector::zeros(g.prob.n_p()), &k)?;
    let p = rep.p_hat();
    let cost_gap = (g.prob.cost_value(&p)? - oracle.f_ref).abs();
    let psi = g.prob.penalty_value(&p)?;
    Ok(TrialRow {
        trial,
        n_used: rep.iters_used,
        n_max: rep.n_max,
        ratio: rep.ratio(),
        eps0,
        f_ref: oracle.f_ref,
        cost_gap,
        psi,
        suboptimal_pass: g.prob.is_suboptimal(&p, oracle.f_ref, &pair)?,
    })
}

/// Runs all trials on a worker pool; rows come back in trial order.
pub fn run_random_qp_suite(cfg: &ExperimentConfig) -> Result<SuiteResult> {
    let n = cfg.trials;
    let workers = std::thread::available_parallelism()
        .map(|w| w.get())
        .unwrap_or(1)
        .min(n)
        .max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<TrialRow>>>> = Mutex::new(vec![None; n]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::Relaxed);
                if t >= n {
                    break;
                }
                let r = run_trial(cfg, t);
                slots.lock().expect("no poisoned workers")[t] = Some(r);
            });
        }
    });
    let rows = slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every trial ran"))
        .collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    Ok(SuiteResult {
        seed: cfg.seed,
        histogram: histogram(&ratios, cfg.histogram_bins),
        rows,
    })
}

/// Design, compact-set bounds and certification parameters of an MPC config.
#[derive(Debug, Clone)]
pub struct MpcSetup {
    pub design: MpcDesign,
    pub bounds: CompactSetBounds,
    pub params: CertifyParams,
}

pub fn mpc_setup(cfg: &ExperimentConfig) -> Result<MpcSetup> {
    let m = &cfg.mpc;
    let design = MpcDesign::build(&m.design_params())?;
    let (e0, e1) = prediction_error(m.setpoint_mode, m.zd_radius, m.e1, m.extra_e1)?;
    let bounds = match m.phi0 {
        Some(phi0) => CompactSetBounds::compute_with_phi0(
            &design,
            cfg.scaling_mode,
            phi0,
            m.zd_radius,
            e0,
            e1,
        )?,
        None => CompactSetBounds::compute(&design, cfg.scaling_mode, m.zd_radius, e0, e1)?,
    };
    let mut params = CertifyParams::new(m.eps_psi, m.tau_c, m.q_min, m.gamma_c);
    params.lambda = m.lambda;
    params.cap_divisor = m.cap_divisor;
    params.grid_points = m.eps0_points.max(2);
    Ok(MpcSetup {
        design,
        bounds,
        params,
    })
}

/// One point of the precision sweep at `q_bar`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps0: f64,
    pub n: u64,
    pub tau: f64,
    /// `K0 (E0 + E1 tau)`.
    pub e_term: f64,
    /// `e_term + eps0`.
    pub sum: f64,
    /// `Gamma(tau, q_bar) - gamma_c q_bar_min^2 / (3 D)`.
    pub gamma_threshold: f64,
    pub admissible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyResult {
    pub n: usize,
    pub q_bar: f64,
    pub gamma_c: f64,
    pub e1: f64,
    pub sweep: Vec<SweepRow>,
    /// Certified `[eps0_lower, eps0_upper]`, if any.
    pub interval: Option<(f64, f64)>,
    /// Smallest `R - threshold` over the sweep when no interval exists.
    pub closest_margin: Option<f64>,
    pub bounds: CompactSetBounds,
    pub eps0_cap: f64,
    pub threshold: f64,
}

impl CertifyResult {
    pub fn sweep_csv(&self) -> String {
        let mut out = String::from("eps0,N,tau,e_term,eps0_line,sum,gamma_threshold,admissible\n");
        for r in &self.sweep {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                fmt17(r.eps0),
                r.n,
                fmt17(r.tau),
                fmt17(r.e_term),
                fmt17(r.eps0),
                fmt17(r.sum),
                fmt17(r.gamma_threshold),
                r.admissible
            ));
        }
        out
    }

    pub fn report_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            status: &'static str,
            n: usize,
            q_bar: f64,
            gamma_c: f64,
            e1: f64,
            interval: Option<(f64, f64)>,
            closest_margin: Option<f64>,
            eps0_cap: f64,
            threshold: f64,
            bounds: &'a CompactSetBounds,
        }
        serde_json::to_string_pretty(&Report {
            status: if self.interval.is_some() {
                "certified"
            } else {
                "infeasible"
            },
            n: self.n,
            q_bar: self.q_bar,
            gamma_c: self.gamma_c,
            e1: self.e1,
            interval: self.interval,
            closest_margin: self.closest_margin,
            eps0_cap: self.eps0_cap,
            threshold: self.threshold,
            bounds: &self.bounds,
        })
        .expect("plain data serializes")
    }
}

fn log_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

/// Precision sweep of the decrease residual at `q_bar = q_min` plus the
/// certified interval.
pub fn run_integrator_certify(cfg: &ExperimentConfig) -> Result<CertifyResult> {
    let setup = mpc_setup(cfg)?;
    let (b, p) = (&setup.bounds, &setup.params);
    let q_bar = p.q_min;
    let thr = p.threshold(b.d_c);
    let cap = p.eps0_cap(b.d_c);
    let mut sweep = Vec::with_capacity(p.grid_points);
    for eps0 in log_points(p.eps0_lo, p.eps0_hi, p.grid_points) {
        let pair = SuboptimalityPair::new(eps0, p.eps_psi)?;
        let n = b.pipeline(&pair)?.n;
        let tau = if n == u64::MAX {
            f64::INFINITY
        } else {
            p.tau_c * n as f64
        };
        let drift = if b.e1 == 0.0 { 0.0 } else { b.e1 * tau };
        let e_term = b.k_c0 * (b.e0 + drift);
        let sum = e_term + eps0;
        let gamma_threshold = gamma_lb(tau, q_bar, b.d_c) - thr;
        sweep.push(SweepRow {
            eps0,
            n,
            tau,
            e_term,
            sum,
            gamma_threshold,
            admissible: sum <= gamma_threshold && eps0 <= cap,
        });
    }
    let (interval, closest_margin) = match certify(b, p, &[q_bar]) {
        Ok(law) => {
            let r = law.table[0];
            (Some((r.eps0_lower, r.eps0_upper)), None)
        }
        Err(Error::CertificationInfeasible { margin, .. }) => (None, Some(margin)),
        Err(e) => return Err(e),
    };
    Ok(CertifyResult {
        n: cfg.mpc.n,
        q_bar,
        gamma_c: p.gamma_c,
        e1: b.e1,
        sweep,
        interval,
        closest_margin,
        bounds: b.clone(),
        eps0_cap: cap,
        threshold: thr,
    })
}

/// The sampling law over a log grid of cost levels.
pub fn certified_law(cfg: &ExperimentConfig, setup: &MpcSetup) -> Result<CertifiedSamplingLaw> {
    let grid = q_grid(cfg.mpc.q_min, cfg.mpc.q_ratio_max, cfg.mpc.q_points);
    certify(&setup.bounds, &setup.params, &grid)
}

/// Bounds table `(q / q_min, lower, upper, sol, N, tau)`.
pub fn run_integrator_bounds(cfg: &ExperimentConfig) -> Result<CertifiedSamplingLaw> {
    let setup = mpc_setup(cfg)?;
    certified_law(cfg, &setup)
}

pub fn bounds_csv(law: &CertifiedSamplingLaw) -> String {
    let mut out = String::from("q_ratio,eps0_lower,eps0_upper,eps0_sol,N,tau_k\n");
    for r in &law.table {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt17(r.q_bar / law.q_min),
            fmt17(r.eps0_lower),
            fmt17(r.eps0_upper),
            fmt17(r.eps0_sol),
            r.n_iters,
            fmt17(r.tau_k)
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct ClosedLoopResult {
    pub law: CertifiedSamplingLaw,
    pub trace: ClosedLoopTrace,
    pub report: MonitorReport,
    pub phi0: f64,
}

/// Certifies, simulates the scenario and runs the monitor on the trace.
pub fn run_closed_loop(cfg: &ExperimentConfig) -> Result<ClosedLoopResult> {
    let setup = mpc_setup(cfg)?;
    let law = certified_law(cfg, &setup)?;
    let plant = Plant::from_params(&setup.design.params)?;
    let sc = &cfg.scenario;
    let phi0 = setup.bounds.phi0;
    let opts = SimOptions {
        horizon: sc.horizon,
        max_events: sc.max_events,
        budget_scale: sc.budget_scale,
        phi0,
    };
    let trace = simulate(
        &plant,
        &setup.design,
        &setup.bounds,
        &law,
        &DVector::from_column_slice(&sc.z0),
        &sc.setpoint,
        &opts,
    )?;
    let report = monitor(&trace, &setup.bounds, &law, phi0);
    Ok(ClosedLoopResult {
        law,
        trace,
        report,
        phi0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_cover_unit_interval() {
        let h = histogram(&[0.0, 0.05, 0.5, 1.0], 10);
        assert_eq!(h.len(), 10);
        assert_eq!(h[0].2, 2);
        assert_eq!(h[5].2, 1);
        assert_eq!(h[9].2, 1);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 4);
    }

    #[test]
    fn single_trial_is_reproducible() {
        let cfg = ExperimentConfig {
            trials: 1,
            seed: 7,
            scaling_mode: certmpc::ScalingMode::PaperLiteral,
            ..ExperimentConfig::default()
        };
        let a = run_random_qp_suite(&cfg).unwrap();
        let b = run_random_qp_suite(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.all_pass());
    }

    #[test]
    fn trial_stream_is_independent_of_pool() {
        let cfg = ExperimentConfig {
            trials: 3,
            scaling_mode: certmpc::ScalingMode::PaperLiteral,
            ..ExperimentConfig::default()
        };
        let suite = run_random_qp_suite(&cfg).unwrap();
        assert_eq!(suite.rows[2], run_trial(&cfg, 2).unwrap());
        assert_ne!(trial_problem(&cfg, 0).unwrap(), trial_problem(&cfg, 1).unwrap());
    }
}
