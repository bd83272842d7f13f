//! Profile ingestion, scenario generation and experiment sweeps.

pub mod experiment;
pub mod features;
pub mod generate;
pub mod profile;

pub use experiment::{revalidate, run_experiment, AggregateRow, ExperimentPlan, ExperimentResult, RunRecord, Sweep};
pub use features::{read_feature_file, synthetic_conditions, write_feature_file, CorpusConfig};
pub use generate::{gen_scenario, gen_scenario_with, DeviceTier, GeneratorConfig};
pub use profile::{ingest_profile, parse_profile, ProfileRow, ProfileTable};
