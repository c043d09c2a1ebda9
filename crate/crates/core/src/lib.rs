//! Discrete-event simulation and closed-form delay analysis for cyclic
//! TSN shapers: CQF, 3-queue CQF and multi-group MCQF.

pub mod analysis;
pub mod engine;
pub mod kpi;
pub mod scenario;
pub mod shaper;
pub mod time;
pub mod topology;
pub mod traffic;

pub use analysis::{bounds_all, bounds_for, check_feasibility, validate_traces, DelayBounds, FeasibilityReport};
pub use engine::{run, DelayParams, SimConfig, TraceSet};
pub use kpi::{compare_shapers, compute_kpis, FlowKpi};
pub use scenario::{load_scenario, Scenario};
pub use shaper::{ShaperConfig, ShaperKind};
pub use time::Nanos;
pub use topology::{NetworkGraph, NodeId};
pub use traffic::{Flow, FlowId, FlowSet, QueueSelector};
