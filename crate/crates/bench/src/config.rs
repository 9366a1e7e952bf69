//! Experiment configuration, read from and written to JSON.

use certmpc::mpc::{Basis, DesignParams, SetpointMode};
use certmpc::sim::SetpointProfile;
use certmpc::ScalingMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    RandomQpSuite,
    IntegratorCertify,
    IntegratorBounds,
    ClosedLoop,
}

/// Integrator-chain design and certification parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    /// Chain length.
    pub n: usize,
    pub horizon: f64,
    pub blocks: usize,
    pub check_points: usize,
    /// `Q = q_weight I`.
    pub q_weight: f64,
    pub r_weight: f64,
    pub u_bar: f64,
    /// Multiplies the default state box (`|z1| <= 2`, `|z2| <= 1`).
    pub state_box_scale: f64,
    pub tau_c: f64,
    pub eps_psi: f64,
    pub zd_radius: f64,
    pub setpoint_mode: SetpointMode,
    /// Bound on the set-point rate.
    pub e1: f64,
    /// Extra model-error term added to `E1`.
    pub extra_e1: f64,
    pub q_min: f64,
    pub gamma_c: f64,
    pub lambda: f64,
    /// Cap on the precision is `gamma_c q_min^2 / (cap_divisor D)`.
    pub cap_divisor: f64,
    /// Law table spans `[q_min, q_min * q_ratio_max]`.
    pub q_ratio_max: f64,
    pub q_points: usize,
    /// Points of the precision sweep.
    pub eps0_points: usize,
    /// Cost level of admissible initial pairs; `None` uses the cold-start bound.
    pub phi0: Option<f64>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            n: 4,
            horizon: 10.0,
            blocks: 10,
            check_points: 50,
            q_weight: 1.0,
            r_weight: 0.001,
            u_bar: 10.0,
            state_box_scale: 1.0,
            tau_c: 1e-7,
            eps_psi: 1e-2,
            zd_radius: 5.0,
            setpoint_mode: SetpointMode::Filtered,
            e1: 0.05,
            extra_e1: 0.0,
            q_min: 0.36,
            gamma_c: 0.2,
            lambda: 0.6,
            cap_divisor: 6.0,
            q_ratio_max: 25.0,
            q_points: 40,
            eps0_points: 200,
            phi0: None,
        }
    }
}

impl MpcConfig {
    /// The double-integrator certification target.
    pub fn double_integrator() -> Self {
        Self {
            n: 2,
            e1: 0.3,
            q_min: 0.18,
            ..Self::default()
        }
    }

    pub fn design_params(&self) -> DesignParams {
        let mut p = DesignParams::integrator_chain(self.n);
        p.horizon = self.horizon;
        p.basis = Basis::PiecewiseConstant {
            blocks: self.blocks,
        };
        p.check_points = self.check_points;
        for (i, row) in p.q.iter_mut().enumerate() {
            row[i] = self.q_weight;
        }
        p.r = vec![vec![self.r_weight]];
        p.u_bar = self.u_bar;
        p.eps_psi = self.eps_psi;
        for sb in p.state_bounds.iter_mut() {
            sb.lower *= self.state_box_scale;
            sb.upper *= self.state_box_scale;
        }
        p
    }
}

/// Closed-loop scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Initial physical state.
    pub z0: Vec<f64>,
    pub setpoint: SetpointProfile,
    pub horizon: f64,
    pub max_events: usize,
    /// Solve budgets are multiplied by this; below 1 injects a fault.
    pub budget_scale: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            z0: vec![-1.0, 0.0, 0.0, 0.0],
            setpoint: SetpointProfile::Ramp {
                from: vec![0.0; 4],
                to: vec![1.0, 0.0, 0.0, 0.0],
                t_start: 0.0,
                rate: 0.05,
            },
            horizon: 20.0,
            max_events: 200_000,
            budget_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub trials: usize,
    pub n_p: usize,
    pub n_c: usize,
    pub scaling_mode: ScalingMode,
    /// Random-suite precision as a fraction of the optimal cost.
    pub eps0_fraction: f64,
    pub histogram_bins: usize,
    pub mpc: MpcConfig,
    pub scenario: ScenarioConfig,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::RandomQpSuite,
            seed: 1,
            trials: 500,
            n_p: 10,
            n_c: 20,
            scaling_mode: ScalingMode::Conservative,
            eps0_fraction: 0.01,
            histogram_bins: 20,
            mpc: MpcConfig::default(),
            scenario: ScenarioConfig::default(),
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.trials < 1 {
            return Err("trials must be >= 1".into());
        }
        if !(0.5..=0.9).contains(&self.mpc.lambda) {
            return Err(format!("lambda must lie in [0.5, 0.9], got {}", self.mpc.lambda));
        }
        if !(self.eps0_fraction > 0.0) {
            return Err("eps0_fraction must be > 0".into());
        }
        if self.n_p == 0 || self.n_c == 0 || self.histogram_bins == 0 {
            return Err("n_p, n_c and histogram_bins must be >= 1".into());
        }
        if self.mpc.n == 0 || self.mpc.blocks == 0 || self.mpc.q_points == 0 {
            return Err("mpc.n, mpc.blocks and mpc.q_points must be >= 1".into());
        }
        if self.experiment == Experiment::ClosedLoop {
            let rate = self.scenario.setpoint.max_rate();
            if rate > self.mpc.e1 {
                return Err(format!(
                    "set-point rate {rate} exceeds the certified bound E1 = {}",
                    self.mpc.e1
                ));
            }
            if self.scenario.setpoint.max_norm() > self.mpc.zd_radius {
                return Err("set-point leaves the certified domain zd_radius".into());
            }
            if self.scenario.z0.len() != self.mpc.n {
                return Err("scenario.z0 must have length mpc.n".into());
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| format!("bad config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// A small single-integrator loop whose certified budgets are tractable;
    /// the full-size designs certify only with astronomically large budgets.
    pub fn small_closed_loop() -> Self {
        Self {
            experiment: Experiment::ClosedLoop,
            scaling_mode: ScalingMode::Conservative,
            mpc: MpcConfig {
                n: 1,
                horizon: 1.0,
                blocks: 2,
                check_points: 4,
                r_weight: 0.1,
                u_bar: 100.0,
                state_box_scale: 25.0,
                tau_c: 1e-5,
                zd_radius: 0.5,
                e1: 0.001,
                q_min: 0.1,
                q_ratio_max: 20.0,
                q_points: 8,
                phi0: Some(1.0),
                ..MpcConfig::default()
            },
            scenario: ScenarioConfig {
                z0: vec![-0.6],
                setpoint: SetpointProfile::Ramp {
                    from: vec![0.0],
                    to: vec![0.3],
                    t_start: 0.0,
                    rate: 0.001,
                },
                horizon: 3.0,
                max_events: 100_000,
                budget_scale: 1.0,
            },
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        for cfg in [
            ExperimentConfig::default(),
            ExperimentConfig::small_closed_loop(),
            ExperimentConfig {
                mpc: MpcConfig::double_integrator(),
                experiment: Experiment::IntegratorCertify,
                ..ExperimentConfig::default()
            },
        ] {
            assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
    }

    #[test]
    fn lambda_outside_range_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.mpc.lambda = 0.95;
        assert!(cfg.validate().is_err());
        cfg.mpc.lambda = 0.5;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn zero_trials_rejected() {
        let cfg = ExperimentConfig {
            trials: 0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"trials": 3, "mpc": {"n": 2}}"#).unwrap();
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.mpc.n, 2);
        assert_eq!(cfg.mpc.blocks, 10);
    }

    #[test]
    fn scenario_rate_above_e1_rejected() {
        let mut cfg = ExperimentConfig::small_closed_loop();
        cfg.mpc.e1 = 0.0;
        assert!(cfg.validate().unwrap_err().contains("E1"));
    }
}
