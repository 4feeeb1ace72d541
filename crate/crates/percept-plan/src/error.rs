use thiserror::Error;

/// Errors produced by planning, verification, and scenario handling.
#[derive(Error, Debug)]
pub enum PlanError {
    /// Free-space sampling rejected too many consecutive candidates.
    #[error("free-space sampling stalled after {rejected} consecutive colliding candidates")]
    InfeasibleSpace { rejected: usize },

    /// No sampled node lies in the goal region and the goal-box center is in collision.
    #[error("no collision-free node available inside the goal region")]
    NoGoalSample,

    /// The open set was exhausted without a goal plan within the heuristic bound,
    /// or bound refinement failed even at the tightest bound.
    #[error("no feasible plan within the perception-heuristic bound")]
    NoFeasiblePlan,

    /// The Riccati iteration for the tracker gain did not converge.
    #[error("Riccati iteration failed to converge to a stabilizing gain")]
    NonConvergence,

    /// Scenario file could not be parsed.
    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    /// Scenario contents violate an invariant; the message names it.
    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
