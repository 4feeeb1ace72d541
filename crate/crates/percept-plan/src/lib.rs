//! Perception-aware motion planning with Monte Carlo certification.
//!
//! The pipeline plans minimum-cost, collision-free trajectories through a
//! mapped 3D workspace while bounding a *perception heuristic* — a running
//! proxy for localization drift that grows with time and shrinks when enough
//! landmark features are in view. Because the heuristic is history-dependent
//! (it clamps at zero), cost and heuristic are searched as separate
//! objectives over a Pareto front rather than blended into one score. The
//! chosen plan is then certified by simulating a tracked, VIO-localized
//! vehicle over many noisy trials.
//!
//! Pipeline stages, each backed by a module:
//!
//! 1. [`roadmap`] — deterministic Halton sampling and r-disc graph building
//!    over the [`env`] geometry kernel.
//! 2. [`heuristic`] — per-edge drift profiles, either counted from visible
//!    features or interpolated from an exported error-rate map.
//! 3. [`explore`] — the group-parallel multiobjective search with dominance
//!    pruning and a heuristic cutoff.
//! 4. [`montecarlo`] — LQR tracking of a double integrator with simulated
//!    inertial + visual localization, exceedance estimation, and bound
//!    refinement.
//!
//! Every parallel stage is deterministic: results are identical for any
//! worker count.
//!
//! The `examples/` directory contains one runnable example per capability:
//!
//! ```bash
//! cargo run -p percept-plan --example sample_roadmap
//! cargo run -p percept-plan --example feature_visibility
//! cargo run -p percept-plan --example edge_profiles
//! cargo run -p percept-plan --example pareto_search
//! cargo run -p percept-plan --example two_corridor
//! cargo run -p percept-plan --example localization_trial
//! cargo run -p percept-plan --example verify_plan
//! cargo run -p percept-plan --example refine_bound
//! cargo run -p percept-plan --example learned_map
//! ```
//!
//! Batch runs go through the `plan` binary, which executes a JSON scenario
//! end to end and writes `solution.json`, `pareto.json`, `trials.csv`, and
//! `summary.json`.

pub mod env;
pub mod error;
pub mod explore;
pub mod heuristic;
pub mod montecarlo;
pub mod roadmap;
pub mod scenario;

pub use env::{Aabb, Environment, GoalRegion, Obstacle, PlannerState, VisibilityParams, Workspace};
pub use error::PlanError;
pub use explore::{explore, explore_full, ExploreOutcome, ExploreParams, Plan};
pub use heuristic::{
    edge_profile, fold_heuristic, profiles_for_roadmap, EdgeProfile, HeuristicMap, HeuristicModel,
    HeuristicParams, ProfileTable,
};
pub use montecarlo::{
    lqr_gain, mc_verify, nominal_trajectory, refine_bound, simulate_trial, McOutcome, NoiseModel,
    NominalTrajectory, RefineOutcome, RefineProblem, TrackerGains, TrialResult, VehicleModel,
    VerifyParams,
};
pub use roadmap::{build_graph, edge_cost, goal_node_indices, halton, sample_free, Roadmap};
pub use scenario::{load_scenario, run, Mode, RunReport, Scenario};
