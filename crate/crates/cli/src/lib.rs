//! Command-line front end: scenario files, the `run` and `validate`
//! commands and their report files.

// Range checks are written as negated comparisons so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod run;
pub mod scenario;

pub use run::{cross_check, run, validate, Agreement, CommandError, Mode, Outcome};
pub use scenario::{load_scenario, Scenario, ScenarioDoc, ScenarioError};

/// Environment variable overriding the oracle's perturbation seed.
pub const SEED_ENV: &str = "SCPNUM_SEED";

/// Reads the seed override, if any. The value must be a decimal integer.
pub fn seed_from_env() -> Result<u64, String> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{SEED_ENV} must be a decimal integer, got `{v}`")),
        Err(_) => Ok(scpnum_core::oracle::DEFAULT_PERTURBATION_SEED),
    }
}
