//! Closed-loop verification: a tracked double-integrator vehicle localized
//! by fusing a noisy accelerometer with landmark position fixes, simulated
//! over many independent trials to estimate the probability that the
//! localization error ever exceeds a threshold.
//!
//! The controller feeds back on the estimated state, so localization error
//! drives tracking deviation. Yaw is tracked exactly; each axis runs an
//! identical 2-state (position, velocity) Kalman filter because the noise
//! model is axis-independent.

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::env::{Environment, PlannerState, VisibilityParams, wrap_angle};
use crate::error::PlanError;
use crate::explore::{explore_full, ExploreParams, Plan};
use crate::heuristic::ProfileTable;
use crate::roadmap::Roadmap;

/// Mass-normalized double integrator per axis with saturated control.
#[derive(Clone, Copy, Debug)]
pub struct VehicleModel {
    /// Per-axis control limit (m/s^2).
    pub u_max: f64,
    /// Simulation timestep (s).
    pub dt_sim: f64,
}

/// Accelerometer and feature-measurement noise (one sigma, per axis).
#[derive(Clone, Copy, Debug)]
pub struct NoiseModel {
    pub sigma_imu: f64,
    pub sigma_vis: f64,
}

/// Per-axis state-feedback gain for the double integrator; the closed loop
/// `A - B K` is Hurwitz by construction.
#[derive(Clone, Copy, Debug)]
pub struct TrackerGains {
    pub k: [f64; 2],
}

/// Trial counts, exceedance threshold, probability bound, and RNG seed.
#[derive(Clone, Copy, Debug)]
pub struct VerifyParams {
    pub trials: usize,
    pub delta_xhat: f64,
    pub alpha: f64,
    pub rng_seed: u64,
}

/// Worst-case errors over one simulated trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialResult {
    /// max over time of |estimated position - true position|.
    pub max_loc_error: f64,
    /// max over time of |nominal position - true position|.
    pub max_deviation: f64,
}

/// Continuous-time LQR gain for the per-axis double integrator
/// `A = [[0, 1], [0, 0]]`, `B = [0, 1]^T` with diagonal state weight `q`
/// and control weight `r`, solved by Newton iteration on the Riccati
/// equation to tolerance 1e-10. The same gain serves x, y, and z.
pub fn lqr_gain(q: [f64; 2], r: f64) -> Result<TrackerGains, PlanError> {
    assert!(q[0] >= 0.0 && q[1] >= 0.0, "state weights must be >= 0");
    assert!(r > 0.0, "control weight must be positive");
    // Detectability: the integrator's marginal mode is unobserved through
    // diag(q) unless the position weight is strictly positive, and then no
    // stabilizing solution exists.
    if q[0] == 0.0 {
        return Err(PlanError::NonConvergence);
    }

    // Kleinman iteration: each step solves the closed-loop Lyapunov
    // equation Acl' P + P Acl = -(Q + K' R K) for symmetric P, then
    // updates K = R^-1 B' P. K = [1, 1] is stabilizing.
    let mut k = [1.0_f64, 1.0_f64];
    for _ in 0..200 {
        let (a21, a22) = (-k[0], -k[1]);
        let m11 = q[0] + r * k[0] * k[0];
        let m12 = r * k[0] * k[1];
        let m22 = q[1] + r * k[1] * k[1];
        let p2 = -m11 / (2.0 * a21);
        let p3 = (-m22 / 2.0 - p2) / a22;
        let _p1 = -m12 - a22 * p2 - a21 * p3; // not needed for the gain
        let next = [p2 / r, p3 / r];
        let delta = (next[0] - k[0]).abs().max((next[1] - k[1]).abs());
        k = next;
        if delta < 1e-10 {
            // Closed-loop characteristic polynomial s^2 + k2 s + k1 is
            // Hurwitz iff both gains are positive.
            if k[0] > 0.0 && k[1] > 0.0 && k[0].is_finite() && k[1].is_finite() {
                return Ok(TrackerGains { k });
            }
            return Err(PlanError::NonConvergence);
        }
    }
    Err(PlanError::NonConvergence)
}

/// One sample of the time-parameterized reference trajectory.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub yaw: f64,
}

/// Constant-speed arc-length parameterization of a plan's polyline, sampled
/// every `dt_sim` (the final interval may be shorter so the last sample
/// lands exactly on the goal).
#[derive(Clone, Debug)]
pub struct NominalTrajectory {
    pub points: Vec<TrajectoryPoint>,
    pub total_length: f64,
}

pub fn nominal_trajectory(
    plan: &Plan,
    roadmap: &Roadmap,
    nominal_speed: f64,
    dt_sim: f64,
) -> NominalTrajectory {
    assert!(nominal_speed > 0.0 && dt_sim > 0.0);
    let seq = plan.node_sequence();
    let states: Vec<PlannerState> = seq.iter().map(|&i| roadmap.nodes[i]).collect();

    // Cumulative arc length over non-degenerate segments.
    let mut cum = vec![0.0_f64];
    let mut segments: Vec<(PlannerState, PlannerState, f64)> = Vec::new();
    for w in states.windows(2) {
        let len = (w[1].position - w[0].position).norm();
        if len > 0.0 {
            segments.push((w[0], w[1], len));
            cum.push(cum.last().unwrap() + len);
        }
    }
    let total_length = *cum.last().unwrap();

    if segments.is_empty() {
        let s0 = states[0];
        return NominalTrajectory {
            points: vec![TrajectoryPoint {
                t: 0.0,
                position: s0.position,
                velocity: Vector3::zeros(),
                yaw: s0.yaw,
            }],
            total_length: 0.0,
        };
    }

    let duration = total_length / nominal_speed;
    let full_steps = (duration / dt_sim + 1e-9).floor() as usize;
    let remainder = duration - full_steps as f64 * dt_sim;
    let mut times: Vec<f64> = (0..=full_steps).map(|k| k as f64 * dt_sim).collect();
    if remainder > 1e-9 * duration.max(1.0) {
        times.push(duration);
    }

    let sample_at = |s: f64| -> TrajectoryPoint {
        let s = s.min(total_length);
        // First segment whose far end passes s; the endpoint belongs to the
        // last segment.
        let mut i = match cum[1..].iter().position(|&c| c > s) {
            Some(i) => i,
            None => segments.len() - 1,
        };
        if s >= total_length {
            i = segments.len() - 1;
        }
        let (a, b, len) = segments[i];
        let local = s - cum[i];
        let dir = (b.position - a.position) / len;
        let frac = local / len;
        let dyaw = wrap_angle(b.yaw - a.yaw);
        TrajectoryPoint {
            t: 0.0,
            position: a.position + dir * local,
            velocity: dir * nominal_speed,
            yaw: wrap_angle(a.yaw + dyaw * frac),
        }
    };

    let points = times
        .iter()
        .map(|&t| {
            let mut p = sample_at(t * nominal_speed);
            p.t = t;
            p
        })
        .collect();
    NominalTrajectory {
        points,
        total_length,
    }
}

/// Simulates one closed-loop trial along the trajectory.
///
/// Per step: (1) the control `u = u_ff + K (nominal - estimate)` saturates
/// at the vehicle limit and drives the true dynamics (semi-implicit Euler);
/// (2) the filter predicts with the accelerometer measurement (true
/// acceleration plus noise); (3) features visible from the true state (yaw
/// tracked exactly) yield noisy relative positions whose translation-only
/// alignment enters the filter as a position fix with covariance
/// `sigma_vis^2 / k`; (4) the running error maxima are updated. RNG draws
/// happen in a fixed order, so a trial is a pure function of its stream.
pub fn simulate_trial(
    traj: &NominalTrajectory,
    env: &Environment,
    vp: &VisibilityParams,
    noise: &NoiseModel,
    gains: &TrackerGains,
    vehicle: &VehicleModel,
    rng: &mut ChaCha8Rng,
) -> TrialResult {
    simulate_trial_probed(traj, env, vp, noise, gains, vehicle, rng, |_| {})
}

/// Per-step view of a running trial, handed to the probe after every
/// filter update.
pub struct StepProbe<'a> {
    pub step: usize,
    /// estimate - truth, per axis.
    pub loc_error: Vector3<f64>,
    /// nominal - truth, per axis.
    pub deviation: Vector3<f64>,
    /// Per-axis (position, velocity) filter covariance.
    pub covariances: &'a [Matrix2<f64>; 3],
}

/// As [`simulate_trial`], invoking the probe after every step. Exposed for
/// diagnostics and tests.
#[allow(clippy::too_many_arguments)]
pub fn simulate_trial_probed(
    traj: &NominalTrajectory,
    env: &Environment,
    vp: &VisibilityParams,
    noise: &NoiseModel,
    gains: &TrackerGains,
    vehicle: &VehicleModel,
    rng: &mut ChaCha8Rng,
    mut probe: impl FnMut(&StepProbe<'_>),
) -> TrialResult {
    let points = &traj.points;
    let start = points[0];

    // Truth and estimate both start on the trajectory: the vehicle is
    // fully localized at launch.
    let mut true_pos = start.position;
    let mut true_vel = start.velocity;
    let mut est_pos = start.position;
    let mut est_vel = start.velocity;
    let mut cov = [Matrix2::zeros(); 3];

    let mut max_loc_error = 0.0_f64;
    let mut max_deviation = 0.0_f64;

    let draw = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    for step in 0..points.len().saturating_sub(1) {
        let now = points[step];
        let next = points[step + 1];
        let dt = next.t - now.t;

        // Feed-forward from the reference velocity change, feedback from
        // the estimated state, saturated per axis.
        let mut u = Vector3::zeros();
        for axis in 0..3 {
            let u_ff = (next.velocity[axis] - now.velocity[axis]) / dt;
            let fb = gains.k[0] * (now.position[axis] - est_pos[axis])
                + gains.k[1] * (now.velocity[axis] - est_vel[axis]);
            u[axis] = (u_ff + fb).clamp(-vehicle.u_max, vehicle.u_max);
        }

        // True dynamics, semi-implicit Euler.
        true_vel += u * dt;
        true_pos += true_vel * dt;

        // Accelerometer measures the true (= applied) acceleration.
        let mut a_meas = u;
        for axis in 0..3 {
            a_meas[axis] += noise.sigma_imu * draw(rng);
        }

        // Filter prediction with the measured acceleration.
        est_vel += a_meas * dt;
        est_pos += est_vel * dt;
        let f = Matrix2::new(1.0, dt, 0.0, 1.0);
        let g = Vector2::new(dt * dt, dt);
        let q_proc = g * g.transpose() * (noise.sigma_imu * noise.sigma_imu);
        for c in cov.iter_mut() {
            *c = f * *c * f.transpose() + q_proc;
        }

        // Vision: features visible from the true state with exact yaw.
        let true_state = PlannerState::new(true_pos, next.yaw);
        let visible = env.visible_features(&true_state, vp);
        if !visible.is_empty() {
            let k = visible.len() as f64;
            // Relative measurement z_i = (f_i - x_true) + noise; the
            // translation-only alignment against the map is
            // mean_i(f_i - z_i) = x_true - mean(noise).
            let mut fix = Vector3::zeros();
            for &i in &visible {
                let f_i = env.features[i];
                let mut z = f_i - true_pos;
                for axis in 0..3 {
                    z[axis] += noise.sigma_vis * draw(rng);
                }
                fix += f_i - z;
            }
            fix /= k;
            let r_meas = noise.sigma_vis * noise.sigma_vis / k;

            for axis in 0..3 {
                let p = &mut cov[axis];
                let s = p[(0, 0)] + r_meas;
                if s <= 0.0 {
                    continue; // estimate already exact along this axis
                }
                let gain = Vector2::new(p[(0, 0)] / s, p[(1, 0)] / s);
                let innovation = fix[axis] - est_pos[axis];
                est_pos[axis] += gain[0] * innovation;
                est_vel[axis] += gain[1] * innovation;
                // Joseph form keeps the covariance symmetric PSD.
                let ikh = Matrix2::new(1.0 - gain[0], 0.0, -gain[1], 1.0);
                *p = ikh * *p * ikh.transpose() + gain * gain.transpose() * r_meas;
                let off = 0.5 * (p[(0, 1)] + p[(1, 0)]);
                p[(0, 1)] = off;
                p[(1, 0)] = off;
            }
        }

        max_loc_error = max_loc_error.max((est_pos - true_pos).norm());
        max_deviation = max_deviation.max((next.position - true_pos).norm());
        probe(&StepProbe {
            step,
            loc_error: est_pos - true_pos,
            deviation: next.position - true_pos,
            covariances: &cov,
        });
    }

    TrialResult {
        max_loc_error,
        max_deviation,
    }
}

/// Verification verdict: exceedance estimate with its binomial standard
/// error, the per-trial results, and the pass flag `p_hat <= alpha`.
#[derive(Clone, Debug)]
pub struct McOutcome {
    pub p_hat: f64,
    pub std_err: f64,
    pub pass: bool,
    pub results: Vec<TrialResult>,
}

/// Runs independent trials with per-trial RNG streams (`seed ^ trial`), in
/// parallel; the result set is identical to serial execution.
pub fn mc_verify(
    traj: &NominalTrajectory,
    env: &Environment,
    vp: &VisibilityParams,
    noise: &NoiseModel,
    gains: &TrackerGains,
    vehicle: &VehicleModel,
    params: &VerifyParams,
) -> McOutcome {
    let results: Vec<TrialResult> = (0..params.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed ^ i as u64);
            simulate_trial(traj, env, vp, noise, gains, vehicle, &mut rng)
        })
        .collect();
    let exceed = results
        .iter()
        .filter(|r| r.max_loc_error >= params.delta_xhat)
        .count();
    let p_hat = exceed as f64 / params.trials as f64;
    let std_err = (p_hat * (1.0 - p_hat) / params.trials as f64).sqrt();
    McOutcome {
        p_hat,
        std_err,
        pass: p_hat <= params.alpha,
        results,
    }
}

/// Everything needed to re-plan and re-verify at a candidate bound.
pub struct RefineProblem<'a> {
    pub roadmap: &'a Roadmap,
    pub profiles: &'a ProfileTable,
    pub goal_nodes: &'a [usize],
    pub epsilon: f64,
    pub env: &'a Environment,
    pub vp: &'a VisibilityParams,
    pub noise: &'a NoiseModel,
    pub gains: &'a TrackerGains,
    pub vehicle: &'a VehicleModel,
    pub nominal_speed: f64,
    pub verify: VerifyParams,
}

/// Result of bound refinement: the certified plan, the bound it was planned
/// at, its exceedance estimate, and the bisection iterations spent.
#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub plan: Plan,
    pub beta_final: f64,
    pub p_hat: f64,
    pub iterations: usize,
    pub results: Vec<TrialResult>,
}

/// Bisects the heuristic bound over `[0, beta_max]`, keeping the largest
/// bound whose plan passes verification (larger bounds admit cheaper
/// plans). Returns immediately when `beta_max` already certifies; fails
/// with `NoFeasiblePlan` when even a zero bound yields no certified plan.
pub fn refine_bound(
    problem: &RefineProblem<'_>,
    beta_max: f64,
    max_iters: usize,
) -> Result<RefineOutcome, PlanError> {
    assert!(max_iters >= 1);
    let attempt = |beta: f64| -> Option<(Plan, McOutcome)> {
        let outcome = explore_full(
            problem.roadmap,
            problem.profiles,
            problem.goal_nodes,
            &ExploreParams {
                epsilon: problem.epsilon,
                beta,
            },
        );
        let plan = outcome.plan?;
        let traj = nominal_trajectory(
            &plan,
            problem.roadmap,
            problem.nominal_speed,
            problem.vehicle.dt_sim,
        );
        let mc = mc_verify(
            &traj,
            problem.env,
            problem.vp,
            problem.noise,
            problem.gains,
            problem.vehicle,
            &problem.verify,
        );
        Some((plan, mc))
    };

    // The loosest bound either certifies outright or seeds the infeasible
    // end of the bracket. A bound infeasible for the search stays
    // infeasible for every smaller bound.
    match attempt(beta_max) {
        None => return Err(PlanError::NoFeasiblePlan),
        Some((plan, mc)) if mc.pass => {
            return Ok(RefineOutcome {
                plan,
                beta_final: beta_max,
                p_hat: mc.p_hat,
                iterations: 0,
                results: mc.results,
            });
        }
        Some(_) => {}
    }

    let mut best = match attempt(0.0) {
        Some((plan, mc)) if mc.pass => RefineOutcome {
            plan,
            beta_final: 0.0,
            p_hat: mc.p_hat,
            iterations: 0,
            results: mc.results,
        },
        _ => return Err(PlanError::NoFeasiblePlan),
    };

    let mut lo = 0.0_f64;
    let mut hi = beta_max;
    for iter in 1..=max_iters {
        let mid = 0.5 * (lo + hi);
        match attempt(mid) {
            Some((plan, mc)) if mc.pass => {
                lo = mid;
                best = RefineOutcome {
                    plan,
                    beta_final: mid,
                    p_hat: mc.p_hat,
                    iterations: iter,
                    results: mc.results,
                };
            }
            _ => hi = mid,
        }
    }
    Ok(best)
}
