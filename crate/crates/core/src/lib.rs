//! Lagrange geometry on Lie algebroids: symbolic Lagrangians, canonical
//! nonlinear and distinguished connections, their curvature, and the
//! N-adapted Ricci flow with its entropy functionals.

pub mod algebroid;
pub mod connection;
pub mod error;
pub mod expr;
pub mod flow;
pub mod geometry;
pub mod jet;
pub mod report;
pub mod sampling;
pub mod scenario;

pub use algebroid::{AlgebroidKind, AlgebroidSpec, ChartBox, StructureReport};
pub use connection::{AlgebroidMetric, CurvatureBlocks, ExprDMetric, MetricSource, PointGeometry, RicciBlocks};
pub use error::{Error, Result};
pub use flow::{Flow, FlowConfig, FlowMode, FlowState, Gradient, Grid};
pub use geometry::{AdaptedFrame, ExprNConnection, FrameIndex, LagrangeModel, NSource, Trajectory};
pub use expr::{parse, EvalPoint, Expr, ExprScalar, VarSet};
pub use jet::{Jet, JetSpace};
pub use report::{identity_suite, IdentityReport, TensorDump};
pub use scenario::{Format, Scenario};
