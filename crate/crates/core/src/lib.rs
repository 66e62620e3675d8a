//! Feasibility-aware evaluation for tool-using agents.
//!
//! The crate covers two halves of one workflow:
//!
//! * **Construction.** Run a roster of agents on closed-tool tasks, take the
//!   tools every successful trace used ([`critical::critical_intersection`]),
//!   and mask them from the pool ([`critical::mask_tools`]) to obtain tasks
//!   that can no longer be completed.
//! * **Evaluation.** Run agents under a feasibility prompt, detect explicit
//!   `STOP:` declarations ([`agents::detect_stop`]) and score them with the
//!   false-continue rate, success rate, token-cost split and FASS in
//!   [`metrics`]. [`stats`] holds the sample-size and agreement machinery
//!   for human verification of the constructed suite.
//!
//! The `toolstop` binary wraps [`pipeline`] for command-line use; the
//! `examples/` directory shows each capability in isolation.

pub mod agents;
pub mod critical;
pub mod metrics;
pub mod pipeline;
pub mod stats;
pub mod task;
pub mod trace;

use serde::{Deserialize, Serialize};

/// Ground-truth label of a task, and also an agent's decision about it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Feasible,
    Infeasible,
}

impl std::fmt::Display for Feasibility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Feasibility::Feasible => "feasible",
            Feasibility::Infeasible => "infeasible",
        })
    }
}

/// Whitespace-delimited token count. Used for agents that report no usage.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
