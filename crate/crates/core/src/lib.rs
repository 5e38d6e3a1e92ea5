//! Rate allocation for streaming flows with S-curve utilities.
//!
//! The non-concave utility maximization problem is rewritten in transformed
//! rates, where utilities become strictly concave and capacity constraints
//! become reverse-convex. Those constraints are linearized at the previous
//! iterate and the convexified problem is solved by dual gradient
//! projection: links price their load, sources answer in closed form.
//!
//! * [`network`] holds topology, routing and feasibility checks.
//! * [`utility`] evaluates S-curve and logistic utilities and the transform.
//! * [`engine`] runs the iteration monolithically and certifies its output.
//! * [`agents`] runs the same iteration as message-passing link and source agents.
//! * [`oracle`] provides solver-independent checks: grid search, local
//!   perturbation tests and finite-difference gradients.

// Range checks are written as negated comparisons so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod engine;
pub mod instance;
pub mod network;
pub mod oracle;
pub mod utility;

pub use engine::{
    solve, AllocationResult, InitialPrices, InitialRates, IterateState, PriceLag, ScpError, SolverConfig, StoppingRule,
    TraceRecord,
};
pub use instance::{Instance, RandomInstances};
pub use network::{LinkSpec, Network, NetworkError, SourceSpec};
pub use utility::{LogisticUtility, SCurveUtility, UtilityError};

/// Formats a float with 17 significant digits, enough to round-trip any
/// `f64` exactly.
pub fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}
