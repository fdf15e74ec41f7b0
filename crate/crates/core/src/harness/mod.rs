//! Experiment plumbing: configuration, corpus splitting, synthetic domains
//! and the end-to-end method comparison.

mod base;
mod config;
mod experiment;
mod seeds;
mod split;
mod suite;
pub mod synth;

pub use base::pretrain_from_text;
pub use config::{DomainConfig, ExperimentConfig, MethodConfig};
pub use experiment::{
    run_experiment, train_method, write_outputs, Cell, DomainResult, ExperimentOutput, ExperimentReport,
    SecondPass,
};
pub use seeds::sub_seed;
pub use split::split_corpus;
pub use suite::{write_suite, SuiteOptions, LARGE_DATA, LOW_DATA};
pub use synth::{builtin_domain, builtin_domain_names, generic_corpus, synthesize_domain, SyntheticDomain, SyntheticDomainSpec};
