//! Federated rounds: client sampling, local training, server rules and the
//! even-round extrapolation.

mod plan;
mod run;
mod strategy;
mod upcycled;

pub use plan::{assign_stragglers, sample_clients, RoundPlan};
pub use run::{
    evaluate_global, initial_model, run, Accounting, Comparison, DissimilarityProbe, NoObserver, PrivacySpec,
    RoundObserver, RoundRecord, RunAborted, RunConfig, RunOutput, Trajectory, TrajectoryPoint,
    UpcycledSpec,
};
pub use strategy::{
    aggregate, local_update, scaffold_control_update, server_update, Aux, StrategyKind,
    StrategyState,
};
pub use upcycled::{upcycled_even_update, CoefficientSchedule, LambdaSchedule};
