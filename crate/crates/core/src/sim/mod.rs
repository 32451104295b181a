//! Discrete-event simulation of a scenario.

pub mod engine;
pub mod generator;
pub mod topology;

pub use engine::{
    DropReasonKey, Injection, Route, SimConfig, SimError, SimOutput, Simulator, TraceEvent,
    TraceKind,
};
pub use generator::{Generator, GeneratorError};
pub use topology::{LinkSpec, Topology, TopologyError};

use thiserror::Error;

use crate::buffering::BudgetTable;
use crate::metrics::{AdmissionEcho, Metrics};
use crate::scenario::{AdmissionOutcome, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Everything produced by one scenario run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub trace: Vec<TraceEvent>,
    pub admission: AdmissionOutcome,
    pub budgets: BudgetTable,
}

/// Admission, traffic generation and simulation of `scenario` with `seed`.
///
/// Rejected connections stay silent unless the scenario bypasses admission.
/// Queue budgets come from the loads of the connections that actually run.
pub fn run(scenario: &Scenario, seed: u64, record_trace: bool) -> Result<RunOutput, RunError> {
    let admission = scenario.admission()?;
    let active = scenario.active_connections(&admission);
    let loads = scenario.class_loads(&active);
    let budgets = scenario.budgets(&loads);
    let phases = scenario.phases(seed);
    let injections = scenario.injections(&active, &phases, seed);
    let config = SimConfig {
        classes: scenario.classes.clone(),
        max_packet_bits: scenario.max_packet_bits,
        topology: scenario.topology.clone(),
        phases,
        budgets: Some(budgets.clone()),
        routes: active
            .iter()
            .map(|c| Route {
                connection: c.id,
                class: c.class,
                path: c.path.clone(),
                deadline: scenario.deadline(c),
            })
            .collect(),
        horizon: scenario.horizon,
        warm_up: scenario.warm_up,
        drop_late: scenario.options.drop_late,
        record_trace,
        admission: AdmissionEcho {
            admitted: admission.all_admitted(),
            bypassed: scenario.options.bypass_admission,
            rejected: admission.rejected(),
        },
    };
    let mut sim = Simulator::new(config)?;
    for inj in injections {
        sim.inject(inj)?;
    }
    let SimOutput { metrics, trace } = sim.run();
    Ok(RunOutput {
        metrics,
        trace,
        admission,
        budgets,
    })
}
