//! Deterministic FaaS cluster simulator and multi-objective plan optimizer.
//!
//! The crate models a container cluster serving serverless function requests
//! in fixed planning epochs and searches for scheduling + autoscaling plans
//! that jointly minimize SLO violations, operational carbon, and wastewater.
//!
//! Modules:
//! - [`workload`]: trace CSV ingest, synthetic generation, epoch bucketing
//! - [`cluster`]: cluster model, plans, feasibility, random plans
//! - [`sustain`]: SLO / energy / water / carbon evaluation
//! - [`optimizer`]: history-guided local search + EA with a Pareto archive
//! - [`baselines`]: SCORE and HYBRID reference schedulers
//! - [`harness`]: horizon runs, Pareto fronts, 2-D projections
//!
//! All search and simulation is seeded and bit-reproducible; population
//! evaluation fans out over rayon when the `parallel` feature (default) is
//! enabled, with identical results either way.

pub mod baselines;
pub mod cluster;
pub mod error;
pub mod exec;
pub mod harness;
pub mod optimizer;
pub mod sustain;
pub mod workload;

pub use cluster::{ClusterSpec, ContainerAlloc, NodeSpec, OverheadSpec, Plan};
pub use error::{CapacityError, ConfigError, EvalError, WorkloadError};
pub use harness::{EnvSchedule, HorizonResult, Policy, RunSettings};
pub use optimizer::{ParetoArchive, SearchBudget, Weights};
pub use sustain::{EnvironmentState, EvalContext, ObjectiveVector};
pub use workload::{EpochWorkload, FunctionSpec, Trace, TraceConfig};
