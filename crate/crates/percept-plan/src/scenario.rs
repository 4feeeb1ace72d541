//! Scenario files and the batch pipeline.
//!
//! A scenario bundles the environment, planner parameters, and verification
//! parameters into one JSON document. `run` executes the full pipeline for
//! the scenario's mode and writes the output artifacts:
//!
//! - `solution.json` — selected plan: node indices, per-node states, cost, h
//! - `pareto.json`   — per-goal-node (cost, h) front surviving the search
//! - `trials.csv`    — per-trial maxima (verify and refine modes)
//! - `summary.json`  — cost, h, bound used, p_hat, pass, phase timings
//!
//! Re-running a scenario with a fixed seed reproduces `solution.json` and
//! `trials.csv` byte for byte, for any worker count.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::env::{Aabb, Environment, PlannerState, VisibilityParams};
use crate::error::PlanError;
use crate::explore::{explore_full, ExploreOutcome, ExploreParams};
use crate::heuristic::{HeuristicMap, HeuristicModel, HeuristicParams, MapRecord};
use crate::montecarlo::{
    lqr_gain, mc_verify, nominal_trajectory, refine_bound, NoiseModel, RefineProblem, TrialResult,
    VehicleModel, VerifyParams,
};
use crate::roadmap::{build_graph, goal_node_indices, Roadmap};

/// Pipeline mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Mode {
    /// Plan only; no verification.
    #[serde(rename = "explore-only", alias = "explore")]
    Explore,
    /// Plan at the configured bound, then estimate the exceedance
    /// probability.
    #[serde(rename = "verify")]
    Verify,
    /// Bisect the heuristic bound until the cheapest certified plan is
    /// found.
    #[serde(rename = "refine")]
    Refine,
}

fn default_epsilon() -> f64 {
    0.5
}
fn default_n_f() -> usize {
    12
}
fn default_fov() -> f64 {
    std::f64::consts::FRAC_PI_4
}
fn default_k_nn() -> usize {
    HeuristicMap::DEFAULT_K_NN
}
fn default_w_yaw() -> f64 {
    HeuristicMap::DEFAULT_W_YAW
}

/// Planner parameters. `beta = null` (or absent) means unbounded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    /// Number of free-space samples.
    pub n: usize,
    /// Connection radius (meters).
    pub r_n: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub beta: Option<f64>,
    /// Upper end of the bound search; refine mode only.
    #[serde(default)]
    pub beta_max: Option<f64>,
    #[serde(default = "default_n_f")]
    pub n_f: usize,
    /// Heuristic timestep (seconds).
    pub dt: f64,
    /// Speed used to time-parameterize edges and trajectories (m/s).
    pub nominal_speed: f64,
    #[serde(default = "default_fov")]
    pub fov_half_angle: f64,
    /// Defaults to the workspace diagonal (effectively unbounded).
    #[serde(default)]
    pub max_range: Option<f64>,
}

/// Monte Carlo parameters; required in verify and refine modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub trials: usize,
    pub delta_xhat: f64,
    pub alpha: f64,
    pub sigma_imu: f64,
    pub sigma_vis: f64,
    pub dt_sim: f64,
    pub rng_seed: u64,
    /// Per-axis control limit (m/s^2).
    pub u_max: f64,
    /// Diagonal LQR state weights (position, velocity).
    pub q: [f64; 2],
    /// LQR control weight.
    pub r: f64,
}

/// Where edge profiles come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HeuristicSource {
    /// Count visible landmarks against the feature budget.
    FeatureCount,
    /// Interpolate an exported error-rate map. The file holds a JSON array
    /// of records `{position, velocity, yaw, rate}`. A relative path is
    /// resolved against the scenario file's directory at load time.
    HeuristicMap {
        path: String,
        #[serde(default = "default_k_nn")]
        k_nn: usize,
        #[serde(default = "default_w_yaw")]
        w_yaw: f64,
    },
}

impl Default for HeuristicSource {
    fn default() -> Self {
        HeuristicSource::FeatureCount
    }
}

/// A complete problem description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub workspace: Aabb,
    #[serde(default)]
    pub obstacles: Vec<Aabb>,
    #[serde(default)]
    pub features: Vec<Vector3<f64>>,
    pub start: PlannerState,
    pub goal: Aabb,
    pub planner: PlannerConfig,
    #[serde(default)]
    pub mc: Option<McConfig>,
    pub mode: Mode,
    #[serde(default)]
    pub heuristic: HeuristicSource,
}

impl Scenario {
    pub fn environment(&self) -> Environment {
        Environment {
            workspace: self.workspace,
            obstacles: self.obstacles.clone(),
            features: self.features.clone(),
        }
    }

    pub fn visibility(&self) -> VisibilityParams {
        VisibilityParams {
            fov_half_angle: self.planner.fov_half_angle,
            max_range: self
                .planner
                .max_range
                .unwrap_or_else(|| self.workspace.diagonal()),
        }
    }

    pub fn heuristic_params(&self) -> HeuristicParams {
        HeuristicParams {
            dt: self.planner.dt,
            n_f: self.planner.n_f,
            nominal_speed: self.planner.nominal_speed,
        }
    }
}

/// Checks every invariant the modules rely on; the error names the violated
/// one.
pub fn validate(s: &Scenario) -> Result<(), PlanError> {
    use std::f64::consts::PI;
    let invalid = |msg: &str| Err(PlanError::Validation(msg.to_string()));

    if !s.workspace.is_valid() {
        return invalid("workspace bounds");
    }
    for o in &s.obstacles {
        if !o.is_valid() {
            return invalid("obstacle bounds");
        }
        if !s.workspace.contains_box(o) {
            return invalid("obstacle outside workspace");
        }
    }
    let env = s.environment();
    for f in &s.features {
        if !s.workspace.contains(f) {
            return invalid("feature outside workspace");
        }
        if s.obstacles.iter().any(|o| o.contains(f)) {
            return invalid("feature inside obstacle");
        }
    }
    if !env.point_free(&s.start.position) {
        return invalid("start state in collision");
    }
    if !s.goal.is_valid() {
        return invalid("goal bounds");
    }
    // The goal box must intersect free space; probe a coarse grid.
    let free_goal_point = (0..64).any(|i| {
        let (a, b, c) = (i % 4, (i / 4) % 4, i / 16);
        let frac = |k: usize| k as f64 / 3.0;
        let p = Vector3::new(
            s.goal.lo.x + frac(a) * (s.goal.hi.x - s.goal.lo.x),
            s.goal.lo.y + frac(b) * (s.goal.hi.y - s.goal.lo.y),
            s.goal.lo.z + frac(c) * (s.goal.hi.z - s.goal.lo.z),
        );
        env.point_free(&p)
    });
    if !free_goal_point {
        return invalid("goal region has no free space");
    }

    let p = &s.planner;
    if p.n < 1 {
        return invalid("sample count");
    }
    if !(p.r_n > 0.0) {
        return invalid("connection radius");
    }
    if !(p.epsilon > 0.0 && p.epsilon <= 1.0) {
        return invalid("group cost factor");
    }
    if let Some(beta) = p.beta {
        if !(beta >= 0.0) {
            return invalid("heuristic bound");
        }
    }
    if p.n_f < 1 {
        return invalid("feature budget");
    }
    if !(p.dt > 0.0) {
        return invalid("heuristic timestep");
    }
    if !(p.nominal_speed > 0.0) {
        return invalid("nominal speed");
    }
    if !(p.fov_half_angle > 0.0 && p.fov_half_angle <= PI) {
        return invalid("field of view");
    }
    if let Some(r) = p.max_range {
        if !(r > 0.0) {
            return invalid("visibility range");
        }
    }

    if matches!(s.mode, Mode::Verify | Mode::Refine) && s.mc.is_none() {
        return invalid("mc params required in verify and refine modes");
    }
    if s.mode == Mode::Refine {
        match p.beta_max {
            Some(bm) if bm > 0.0 => {}
            _ => return invalid("beta_max required in refine mode"),
        }
    }
    if let Some(mc) = &s.mc {
        if mc.trials < 1 {
            return invalid("trial count");
        }
        if !(mc.delta_xhat > 0.0) {
            return invalid("exceedance threshold");
        }
        if !(mc.alpha > 0.0 && mc.alpha < 1.0) {
            return invalid("probability bound");
        }
        if mc.sigma_imu < 0.0 || mc.sigma_vis < 0.0 {
            return invalid("noise sigma");
        }
        if !(mc.dt_sim > 0.0) {
            return invalid("simulation timestep");
        }
        if !(mc.u_max > 0.0) {
            return invalid("control limit");
        }
        if mc.q[0] < 0.0 || mc.q[1] < 0.0 {
            return invalid("state weights");
        }
        if !(mc.r > 0.0) {
            return invalid("control weight");
        }
    }
    Ok(())
}

fn parse_error(path: &Path, err: &serde_json::Error) -> PlanError {
    PlanError::Parse {
        path: path.display().to_string(),
        line: err.line(),
        column: err.column(),
        message: err.to_string(),
    }
}

/// Loads and validates a scenario. Unknown keys are rejected; defaults are
/// applied; a relative heuristic-map path is resolved against the scenario
/// file's directory.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, PlanError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| parse_error(path, &e))?;
    if let HeuristicSource::HeuristicMap { path: map_path, .. } = &mut scenario.heuristic {
        let p = PathBuf::from(&map_path);
        if p.is_relative() {
            if let Some(dir) = path.parent() {
                *map_path = dir.join(p).display().to_string();
            }
        }
    }
    validate(&scenario)?;
    Ok(scenario)
}

fn load_heuristic_map(path: &str, k_nn: usize, w_yaw: f64) -> Result<HeuristicMap, PlanError> {
    let text = fs::read_to_string(path)?;
    let records: Vec<MapRecord> =
        serde_json::from_str(&text).map_err(|e| parse_error(Path::new(path), &e))?;
    if records.is_empty() {
        return Err(PlanError::Validation("heuristic map is empty".into()));
    }
    if k_nn < 1 {
        return Err(PlanError::Validation("heuristic map k_nn".into()));
    }
    Ok(HeuristicMap::new(records, k_nn, w_yaw))
}

#[derive(Serialize)]
struct SolutionState {
    position: [f64; 3],
    yaw: f64,
}

#[derive(Serialize)]
struct SolutionFile {
    nodes: Vec<usize>,
    states: Vec<SolutionState>,
    cost: f64,
    h: f64,
}

#[derive(Serialize)]
struct ParetoEntry {
    node: usize,
    front: Vec<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct PhaseTimings {
    pub graph_build: f64,
    pub heuristic: f64,
    pub explore: f64,
    pub monte_carlo: f64,
}

/// What `run` produced; also serialized as `summary.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub mode: Mode,
    pub feasible: bool,
    pub cost: Option<f64>,
    pub h: Option<f64>,
    /// Bound the returned plan was searched at; absent when unbounded.
    pub beta: Option<f64>,
    pub p_hat: Option<f64>,
    pub pass: Option<bool>,
    pub timings: PhaseTimings,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PlanError> {
    let mut text = serde_json::to_string_pretty(value).expect("serialization cannot fail");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_solution(
    dir: &Path,
    plan: &crate::explore::Plan,
    roadmap: &Roadmap,
) -> Result<(), PlanError> {
    let nodes = plan.node_sequence();
    let states = nodes
        .iter()
        .map(|&i| {
            let s = roadmap.nodes[i];
            SolutionState {
                position: [s.position.x, s.position.y, s.position.z],
                yaw: s.yaw,
            }
        })
        .collect();
    write_json(
        &dir.join("solution.json"),
        &SolutionFile {
            nodes,
            states,
            cost: plan.cost,
            h: plan.h,
        },
    )
}

fn write_pareto(
    dir: &Path,
    outcome: &ExploreOutcome,
    goal_nodes: &[usize],
) -> Result<(), PlanError> {
    let entries: Vec<ParetoEntry> = goal_nodes
        .iter()
        .map(|&g| ParetoEntry {
            node: g,
            front: outcome.fronts[g].iter().map(|&(c, h)| [c, h]).collect(),
        })
        .collect();
    write_json(&dir.join("pareto.json"), &entries)
}

fn write_trials(dir: &Path, results: &[TrialResult]) -> Result<(), PlanError> {
    let mut text = String::from("trial,max_loc_error,max_deviation\n");
    for (i, r) in results.iter().enumerate() {
        text.push_str(&format!("{},{},{}\n", i, r.max_loc_error, r.max_deviation));
    }
    fs::write(dir.join("trials.csv"), text)?;
    Ok(())
}

/// Executes the scenario end to end and writes artifacts into `out_dir`.
///
/// Infeasibility discovered during the pipeline (no plan within the bound,
/// or bound refinement failing outright) yields `Ok` with
/// `feasible = false` and no `solution.json`; hard failures (I/O, parse,
/// sampling stall, no goal sample) are errors.
pub fn run(scenario: &Scenario, out_dir: impl AsRef<Path>) -> Result<RunReport, PlanError> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let env = scenario.environment();
    let vp = scenario.visibility();
    let hp = scenario.heuristic_params();
    let p = &scenario.planner;
    let mut timings = PhaseTimings::default();

    let t = Instant::now();
    let roadmap = build_graph(&env, p.n, p.r_n, scenario.start, &scenario.goal)?;
    timings.graph_build = t.elapsed().as_secs_f64();

    let map;
    let model = match &scenario.heuristic {
        HeuristicSource::FeatureCount => HeuristicModel::FeatureCount { env: &env, vp: &vp },
        HeuristicSource::HeuristicMap { path, k_nn, w_yaw } => {
            map = load_heuristic_map(path, *k_nn, *w_yaw)?;
            HeuristicModel::LearnedMap { map: &map }
        }
    };
    let t = Instant::now();
    let profiles = crate::heuristic::profiles_for_roadmap(&roadmap, &model, &hp);
    timings.heuristic = t.elapsed().as_secs_f64();

    let goal_nodes = goal_node_indices(&roadmap, &scenario.goal);

    let report = match scenario.mode {
        Mode::Explore => {
            let beta = p.beta.unwrap_or(f64::INFINITY);
            let t = Instant::now();
            let outcome = explore_full(
                &roadmap,
                &profiles,
                &goal_nodes,
                &ExploreParams {
                    epsilon: p.epsilon,
                    beta,
                },
            );
            timings.explore = t.elapsed().as_secs_f64();
            write_pareto(dir, &outcome, &goal_nodes)?;
            match outcome.plan {
                Some(plan) => {
                    write_solution(dir, &plan, &roadmap)?;
                    RunReport {
                        mode: scenario.mode,
                        feasible: true,
                        cost: Some(plan.cost),
                        h: Some(plan.h),
                        beta: p.beta,
                        p_hat: None,
                        pass: None,
                        timings,
                    }
                }
                None => RunReport {
                    mode: scenario.mode,
                    feasible: false,
                    cost: None,
                    h: None,
                    beta: p.beta,
                    p_hat: None,
                    pass: None,
                    timings,
                },
            }
        }
        Mode::Verify => {
            let mc = scenario.mc.as_ref().expect("validated");
            let beta = p.beta.unwrap_or(f64::INFINITY);
            let t = Instant::now();
            let outcome = explore_full(
                &roadmap,
                &profiles,
                &goal_nodes,
                &ExploreParams {
                    epsilon: p.epsilon,
                    beta,
                },
            );
            timings.explore = t.elapsed().as_secs_f64();
            write_pareto(dir, &outcome, &goal_nodes)?;
            match outcome.plan {
                Some(plan) => {
                    let gains = lqr_gain(mc.q, mc.r)?;
                    let vehicle = VehicleModel {
                        u_max: mc.u_max,
                        dt_sim: mc.dt_sim,
                    };
                    let noise = NoiseModel {
                        sigma_imu: mc.sigma_imu,
                        sigma_vis: mc.sigma_vis,
                    };
                    let verify = VerifyParams {
                        trials: mc.trials,
                        delta_xhat: mc.delta_xhat,
                        alpha: mc.alpha,
                        rng_seed: mc.rng_seed,
                    };
                    let t = Instant::now();
                    let traj =
                        nominal_trajectory(&plan, &roadmap, p.nominal_speed, mc.dt_sim);
                    let mc_out = mc_verify(&traj, &env, &vp, &noise, &gains, &vehicle, &verify);
                    timings.monte_carlo = t.elapsed().as_secs_f64();
                    write_solution(dir, &plan, &roadmap)?;
                    write_trials(dir, &mc_out.results)?;
                    RunReport {
                        mode: scenario.mode,
                        feasible: true,
                        cost: Some(plan.cost),
                        h: Some(plan.h),
                        beta: p.beta,
                        p_hat: Some(mc_out.p_hat),
                        pass: Some(mc_out.pass),
                        timings,
                    }
                }
                None => RunReport {
                    mode: scenario.mode,
                    feasible: false,
                    cost: None,
                    h: None,
                    beta: p.beta,
                    p_hat: None,
                    pass: None,
                    timings,
                },
            }
        }
        Mode::Refine => {
            let mc = scenario.mc.as_ref().expect("validated");
            let beta_max = p.beta_max.expect("validated");
            let gains = lqr_gain(mc.q, mc.r)?;
            let vehicle = VehicleModel {
                u_max: mc.u_max,
                dt_sim: mc.dt_sim,
            };
            let noise = NoiseModel {
                sigma_imu: mc.sigma_imu,
                sigma_vis: mc.sigma_vis,
            };
            let verify = VerifyParams {
                trials: mc.trials,
                delta_xhat: mc.delta_xhat,
                alpha: mc.alpha,
                rng_seed: mc.rng_seed,
            };
            let problem = RefineProblem {
                roadmap: &roadmap,
                profiles: &profiles,
                goal_nodes: &goal_nodes,
                epsilon: p.epsilon,
                env: &env,
                vp: &vp,
                noise: &noise,
                gains: &gains,
                vehicle: &vehicle,
                nominal_speed: p.nominal_speed,
                verify,
            };
            let t = Instant::now();
            let refined = refine_bound(&problem, beta_max, 10);
            timings.monte_carlo = t.elapsed().as_secs_f64();
            match refined {
                Ok(out) => {
                    // Regenerate the front at the certified bound for the
                    // dump.
                    let outcome = explore_full(
                        &roadmap,
                        &profiles,
                        &goal_nodes,
                        &ExploreParams {
                            epsilon: p.epsilon,
                            beta: out.beta_final,
                        },
                    );
                    write_pareto(dir, &outcome, &goal_nodes)?;
                    write_solution(dir, &out.plan, &roadmap)?;
                    write_trials(dir, &out.results)?;
                    RunReport {
                        mode: scenario.mode,
                        feasible: true,
                        cost: Some(out.plan.cost),
                        h: Some(out.plan.h),
                        beta: Some(out.beta_final),
                        p_hat: Some(out.p_hat),
                        pass: Some(true),
                        timings,
                    }
                }
                Err(PlanError::NoFeasiblePlan) => {
                    let outcome = explore_full(
                        &roadmap,
                        &profiles,
                        &goal_nodes,
                        &ExploreParams {
                            epsilon: p.epsilon,
                            beta: beta_max,
                        },
                    );
                    write_pareto(dir, &outcome, &goal_nodes)?;
                    RunReport {
                        mode: scenario.mode,
                        feasible: false,
                        cost: None,
                        h: None,
                        beta: Some(beta_max),
                        p_hat: None,
                        pass: None,
                        timings,
                    }
                }
                Err(e) => return Err(e),
            }
        }
    };

    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}
