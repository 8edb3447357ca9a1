//! Experiment runner: config parsing, pipeline orchestration, persistence
//! layout (`out/<config_hash>/{checkpoints,reports,images}`), and report
//! emission.

pub mod bundles;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod presets;
pub mod report;

pub use bundles::{
    load_remover_bundle, load_victim_bundle, save_remover_bundle, save_victim_bundle,
};
pub use commands::{cmd_attack, cmd_false_positive_suite, cmd_sweep, cmd_train_victim};
pub use config::{AttackKind, ExperimentConfig};
pub use manifest::RunManifest;
pub use presets::{keyed_extractor_presets, net_preset};
pub use report::cmd_report;
