//! Deterministic free-space sampling and r-disc roadmap construction.
//!
//! Sampling uses the Halton sequence with bases (2, 3, 5, 7) mapped affinely
//! onto (x, y, z, yaw), so the roadmap is a pure function of its inputs:
//! byte-identical across runs and across worker counts.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::env::{Environment, GoalRegion, PlannerState};
use crate::error::PlanError;

/// Halton bases, one prime per sampled dimension (x, y, z, yaw).
pub const HALTON_BASES: [u64; 4] = [2, 3, 5, 7];

/// Radical inverse of `index` in the given base; `index >= 1`, base prime.
pub fn halton(index: u64, base: u64) -> f64 {
    debug_assert!(index >= 1 && base >= 2);
    let mut i = index;
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Draws `n` collision-free states from the Halton sequence.
///
/// Candidates whose position fails the free-space test are skipped, so the
/// first `k` outputs for any `n >= k` are identical (prefix property).
pub fn sample_free(n: usize, env: &Environment) -> Result<Vec<PlannerState>, PlanError> {
    use std::f64::consts::PI;
    let span = env.workspace.hi - env.workspace.lo;
    let limit = 100 * n.max(1);
    let mut out = Vec::with_capacity(n);
    let mut index: u64 = 1;
    let mut rejected = 0usize;
    while out.len() < n {
        let u = [
            halton(index, HALTON_BASES[0]),
            halton(index, HALTON_BASES[1]),
            halton(index, HALTON_BASES[2]),
            halton(index, HALTON_BASES[3]),
        ];
        index += 1;
        let position = Vector3::new(
            env.workspace.lo.x + u[0] * span.x,
            env.workspace.lo.y + u[1] * span.y,
            env.workspace.lo.z + u[2] * span.z,
        );
        if env.point_free(&position) {
            let yaw = -PI + u[3] * 2.0 * PI;
            out.push(PlannerState::new(position, yaw));
            rejected = 0;
        } else {
            rejected += 1;
            if rejected >= limit {
                return Err(PlanError::InfeasibleSpace { rejected });
            }
        }
    }
    Ok(out)
}

/// Cost of the straight-line connection: Euclidean position distance.
/// Yaw does not contribute.
pub fn edge_cost(u: &PlannerState, v: &PlannerState) -> f64 {
    (u.position - v.position).norm()
}

/// Directed neighbor entry; adjacency is symmetric by construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub cost: f64,
}

/// Sampled nodes plus per-node neighbor lists within cost radius `r_n`.
/// Node 0 is the start state; at least one node lies in the goal region.
#[derive(Clone, Debug)]
pub struct Roadmap {
    pub nodes: Vec<PlannerState>,
    pub neighbors: Vec<Vec<Neighbor>>,
    pub r_n: f64,
    pub n: usize,
}

impl Roadmap {
    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Builds the r-disc roadmap: the start state, `n` Halton samples, and a
/// goal-center fallback node when no sample lands in the goal region.
/// Neighbors are all other nodes within cost `r_n` whose connecting segment
/// is collision-free. The result is independent of the worker count.
pub fn build_graph(
    env: &Environment,
    n: usize,
    r_n: f64,
    x_init: PlannerState,
    goal: &GoalRegion,
) -> Result<Roadmap, PlanError> {
    assert!(r_n > 0.0, "connection radius must be positive");
    assert!(
        env.point_free(&x_init.position),
        "start state must be in free space"
    );

    let mut nodes = vec![x_init];
    nodes.extend(sample_free(n, env)?);
    if !nodes.iter().any(|s| goal.contains(&s.position)) {
        let center = goal.center();
        if env.point_free(&center) {
            nodes.push(PlannerState::new(center, 0.0));
        } else {
            return Err(PlanError::NoGoalSample);
        }
    }

    let neighbors: Vec<Vec<Neighbor>> = (0..nodes.len())
        .into_par_iter()
        .map(|i| {
            let a = &nodes[i];
            (0..nodes.len())
                .filter(|&j| j != i)
                .filter_map(|j| {
                    let b = &nodes[j];
                    let cost = edge_cost(a, b);
                    if cost < r_n && !env.segment_collides(&a.position, &b.position) {
                        Some(Neighbor { index: j, cost })
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect();

    Ok(Roadmap {
        nodes,
        neighbors,
        r_n,
        n,
    })
}

/// Indices of roadmap nodes whose position lies in the goal region.
pub fn goal_node_indices(roadmap: &Roadmap, goal: &GoalRegion) -> Vec<usize> {
    roadmap
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, s)| goal.contains(&s.position))
        .map(|(i, _)| i)
        .collect()
}
