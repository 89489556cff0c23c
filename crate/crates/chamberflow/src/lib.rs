//! Numerical laboratory for reduced Monge-Ampere equations on Weyl chambers:
//! moment-polytope quadrature, a barycenter existence criterion, a parabolic
//! flow solver with concentration tracking, and a classifier for the limit
//! behavior of long runs.

pub mod classifier;
pub mod config;
pub mod criterion;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod polytope;
pub mod quad;
pub mod report;
pub mod rootsys;

pub use classifier::{
    build_degeneration, classify, degeneration_from_phi_u, estimate_a0, estimate_y,
    limit_residual, A0Estimate, CaseTag, ClassificationResult, LieData, LimitResidual,
    LimitSummary, RootGrowth, Thresholds, YEstimate,
};
pub use config::{Assembled, RunConfig};
pub use criterion::{CriterionPair, CriterionReport, Margin, MarginStatus, NecessaryStatus};
pub use error::{Error, Result};
pub use flow::{
    sample_checkpoint, Checkpoint, Diagnostics, Flow, FlowConfig, FlowState, NodeSample,
    RunStatus, StepRecord, Trajectory,
};
pub use geometry::{GeometryKind, ReducedGeometry};
pub use report::{fmt_f64, to_json_17, trajectory_csv};
pub use grid::Grid;
pub use polytope::{Facet, MomentPolytope, ReferencePotential};
pub use rootsys::{Family, Root, RootSystem};
