//! Certified real-time linear MPC: design, compact-set constants, sampling law.

pub mod bounds;
pub mod design;

pub use bounds::{pipeline_n, prediction_error, CompactSetBounds, PipelineEval, SetpointMode};
pub use design::{build_extended, build_parametrization, Basis, DesignParams, MpcDesign, StateBound};
pub mod law;
pub use law::{certify, gamma_lb, r_decrease, CertifiedSamplingLaw, CertifyParams, LawRow, Period};
