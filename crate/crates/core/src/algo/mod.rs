//! Federated training: local objective terms, prototype maintenance, the
//! server loop, and the few-communication schedule.

mod client;
mod config;
mod federation;
mod few_shot;
mod losses;
mod prototypes;

pub use client::{client_update, ClientState, ClientUpdate, LocalContext, LossSummary};
pub use config::FederationConfig;
pub use federation::{
    aggregate_models, initial_parameters, run_federation, run_federation_observed,
    FederationOutcome, RoundMetrics, RoundView,
};
pub use few_shot::{
    ensemble_accuracy, ensemble_predict, run_few_shot, run_single, FewShotOutcome, StageMetrics,
    DEFAULT_STAGE_EPOCHS,
};
pub use losses::{
    combine_losses, compute_cpgma_loss, compute_sfmc_loss, cpgma_from_embeddings, stack_records,
    LossBreakdown, LossFlags,
};
pub use prototypes::{update_client_center, update_global_prototype, PrototypeState};
