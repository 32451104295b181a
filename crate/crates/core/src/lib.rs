//! Stop-and-go multihop packet scheduling for sensor networks.
//!
//! Each link carries one periodic frame clock per traffic class. A packet
//! reaching a node waits for the next frame of its class on the output link
//! and is then sent in non-preemptive class-priority order, which bounds its
//! queuing delay at every node by two frames. Around that discipline the
//! crate provides admission control, buffer sizing, a deterministic
//! discrete-event simulator and bound verification.
//!
//! The analytic checks are generic over [`Scalar`]; [`Exact`] is the
//! representation used for admission decisions.

pub mod admission;
pub mod buffering;
pub mod framing;
pub mod ids;
pub mod metrics;
pub mod report;
pub mod scalar;
pub mod scenario;
pub mod scheduling;
pub mod sim;

pub use admission::{
    capacity_constraint, check_rate, AdmissionControl, AdmissionError, Connection,
    ConstraintVerdict, Decision, FailedCheck, LinkLoad,
};
pub use buffering::{buffer_size, occupancy_check, BudgetTable, BufferBudget, Occupancy};
pub use framing::{ClassSet, FrameClock, Nanos, TrafficClass};
pub use ids::{ClassId, ConnectionId, LinkId, NodeId, PacketId};
pub use metrics::{delay_bounds, verify_bounds, BoundReport, Metrics};
pub use scalar::Scalar;
pub use scenario::{Scenario, ScenarioError};
pub use scheduling::{OutputPort, Packet};

/// Exact rational scalar used for admission verdicts.
pub type Exact = num_rational::BigRational;
/// Fixed-width rational, exact while numerators and denominators fit.
pub type Ratio128 = num_rational::Ratio<i128>;

pub type ExactVerdict = ConstraintVerdict<Exact>;
pub type FloatVerdict = ConstraintVerdict<f64>;
