//! Multiobjective roadmap search over (cost, perception heuristic).
//!
//! Plans expand in waves: each wave expands every open plan below a cost
//! threshold that grows by `epsilon * r_n` per wave, prunes children above
//! the heuristic bound `beta`, and removes Pareto-dominated open plans. The
//! search stops when a wave's group contains a feasible goal plan or the
//! open set empties. Expansion parallelizes over the group; children are
//! merged in (parent, neighbor) order, so the result is identical for any
//! worker count.

use rayon::prelude::*;

use crate::error::PlanError;
use crate::heuristic::{fold_heuristic, ProfileTable};
use crate::roadmap::Roadmap;

/// A motion plan: terminal node, ancestor nodes (excluding the head),
/// accumulated cost, and folded perception-heuristic value.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub head: usize,
    pub path: Vec<usize>,
    pub cost: f64,
    pub h: f64,
}

impl Plan {
    /// Node sequence from the start to the head, inclusive.
    pub fn node_sequence(&self) -> Vec<usize> {
        let mut seq = self.path.clone();
        seq.push(self.head);
        seq
    }
}

/// Group cost factor and perception-heuristic bound.
#[derive(Clone, Copy, Debug)]
pub struct ExploreParams {
    /// In (0, 1]: fraction of `r_n` by which the expansion threshold grows
    /// each wave.
    pub epsilon: f64,
    /// Plans whose heuristic exceeds this bound are discarded. May be
    /// `f64::INFINITY`.
    pub beta: f64,
}

/// Bucket of a plan with the given cost: `floor(cost / (epsilon * r_n))`.
/// Buckets are half-open, so a plan in bucket `b` joins group `i` for all
/// `i >= b + 1`.
pub fn bucket_index(cost: f64, epsilon: f64, r_n: f64) -> usize {
    (cost / (epsilon * r_n)).floor() as usize
}

/// Dominance between same-head plans: strict on cost, non-strict on the
/// heuristic.
pub fn dominates(p_dom: &Plan, p: &Plan) -> bool {
    debug_assert_eq!(p_dom.head, p.head);
    p.cost > p_dom.cost && p.h >= p_dom.h
}

/// Removes from `open` (and from `stored`) every open plan dominated by a
/// same-head plan in `stored`. Decisions use the pre-removal snapshot;
/// dominance is transitive, so the survivors do not depend on scan order.
pub fn remove_dominated(stored: &mut Vec<Plan>, open: &mut Vec<Plan>) {
    let snapshot = stored.clone();
    let dominated = |q: &Plan| {
        snapshot
            .iter()
            .any(|d| d.head == q.head && d != q && dominates(d, q))
    };
    let removed: Vec<Plan> = open.iter().filter(|q| dominated(q)).cloned().collect();
    open.retain(|q| !dominated(q));
    stored.retain(|p| !removed.contains(p));
}

/// Search result: the returned plan (if any) plus the per-node list of
/// (cost, h) pairs surviving at termination.
#[derive(Clone, Debug)]
pub struct ExploreOutcome {
    pub plan: Option<Plan>,
    pub fronts: Vec<Vec<(f64, f64)>>,
}

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct PlanRec {
    head: u32,
    parent: u32,
    cost: f64,
    h: f64,
    open: bool,
    alive: bool,
}

struct Search<'a> {
    profiles: &'a ProfileTable,
    arena: Vec<PlanRec>,
    /// Stored plans per node, alive entries only.
    pareto: Vec<Vec<u32>>,
    /// Open plans by cost bucket.
    buckets: Vec<Vec<u32>>,
    open_count: usize,
    eps_rn: f64,
}

impl Search<'_> {
    fn push_bucket(&mut self, id: u32) {
        let b = (self.arena[id as usize].cost / self.eps_rn).floor() as usize;
        if b >= self.buckets.len() {
            self.buckets.resize(b + 1, Vec::new());
        }
        self.buckets[b].push(id);
    }

    /// Walks both parent chains comparing node indices.
    fn paths_equal(&self, a: u32, b: u32) -> bool {
        let (mut x, mut y) = (a, b);
        loop {
            let (rx, ry) = (&self.arena[x as usize], &self.arena[y as usize]);
            if rx.head != ry.head {
                return false;
            }
            match (rx.parent, ry.parent) {
                (NO_PARENT, NO_PARENT) => return true,
                (NO_PARENT, _) | (_, NO_PARENT) => return false,
                (px, py) => {
                    x = px;
                    y = py;
                }
            }
        }
    }

    fn node_sequence(&self, id: u32) -> Vec<usize> {
        let mut seq = Vec::new();
        let mut cur = id;
        loop {
            let rec = &self.arena[cur as usize];
            seq.push(rec.head as usize);
            if rec.parent == NO_PARENT {
                break;
            }
            cur = rec.parent;
        }
        seq.reverse();
        seq
    }

    fn to_plan(&self, id: u32) -> Plan {
        let mut seq = self.node_sequence(id);
        let head = seq.pop().unwrap();
        Plan {
            head,
            path: seq,
            cost: self.arena[id as usize].cost,
            h: self.arena[id as usize].h,
        }
    }
}

/// Runs the multiobjective search and returns both the selected plan and the
/// surviving per-node Pareto fronts.
///
/// `goal_nodes` lists the roadmap nodes lying in the goal region. On
/// termination the minimum-cost feasible goal plan is returned; ties break
/// by smaller heuristic, then lexicographically smaller node sequence.
pub fn explore_full(
    roadmap: &Roadmap,
    profiles: &ProfileTable,
    goal_nodes: &[usize],
    params: &ExploreParams,
) -> ExploreOutcome {
    assert!(
        params.epsilon > 0.0 && params.epsilon <= 1.0,
        "group cost factor must lie in (0, 1]"
    );
    let n_nodes = roadmap.nodes.len();
    let mut goal_mask = vec![false; n_nodes];
    for &g in goal_nodes {
        goal_mask[g] = true;
    }

    let mut search = Search {
        profiles,
        arena: Vec::new(),
        pareto: vec![Vec::new(); n_nodes],
        buckets: vec![Vec::new()],
        open_count: 0,
        eps_rn: params.epsilon * roadmap.r_n,
    };

    // Trivial plan at the start node; it forms the first group by itself.
    search.arena.push(PlanRec {
        head: 0,
        parent: NO_PARENT,
        cost: 0.0,
        h: 0.0,
        open: true,
        alive: true,
    });
    search.pareto[0].push(0);
    search.open_count = 1;
    let mut group: Vec<u32> = vec![0];
    let mut wave: usize = 0;

    loop {
        // Termination: a feasible goal plan in the group, or nothing open.
        if group.iter().any(|&id| {
            let rec = &search.arena[id as usize];
            rec.alive && goal_mask[rec.head as usize] && rec.h <= params.beta
        }) {
            break;
        }
        if search.open_count == 0 {
            break;
        }

        // Expand every plan in the group to every neighbor of its head.
        let children: Vec<Vec<(u32, usize, f64, f64)>> = group
            .par_iter()
            .map(|&pid| {
                let rec = search.arena[pid as usize];
                if !rec.alive {
                    return Vec::new();
                }
                let head = rec.head as usize;
                roadmap.neighbors[head]
                    .iter()
                    .enumerate()
                    .filter_map(|(slot, nb)| {
                        let cost = rec.cost + nb.cost;
                        let h = fold_heuristic(rec.h, search.profiles.get(head, slot));
                        // Perception-heuristic cutoff.
                        if h <= params.beta {
                            Some((pid, nb.index, cost, h))
                        } else {
                            None
                        }
                    })
                    .collect()
            })
            .collect();

        // Merge in (parent, neighbor) order.
        let mut touched: Vec<usize> = Vec::new();
        for (parent, node, cost, h) in children.into_iter().flatten() {
            // Identical plans (same path, cost, h) are stored once.
            let duplicate = search.pareto[node].iter().any(|&other| {
                let o = &search.arena[other as usize];
                o.cost == cost && o.h == h && {
                    o.parent == parent
                        || (o.parent != NO_PARENT
                            && parent != NO_PARENT
                            && search.paths_equal(o.parent, parent))
                }
            });
            if duplicate {
                continue;
            }
            let id = search.arena.len() as u32;
            search.arena.push(PlanRec {
                head: node as u32,
                parent,
                cost,
                h,
                open: true,
                alive: true,
            });
            search.pareto[node].push(id);
            search.push_bucket(id);
            search.open_count += 1;
            touched.push(node);
        }
        touched.sort_unstable();
        touched.dedup();

        // Remove dominated open plans at every node that gained children.
        // The snapshot semantics make the survivors scan-order independent.
        for &node in &touched {
            let snapshot: Vec<(u32, f64, f64)> = search.pareto[node]
                .iter()
                .map(|&id| {
                    let r = &search.arena[id as usize];
                    (id, r.cost, r.h)
                })
                .collect();
            let mut kills: Vec<u32> = Vec::new();
            for &(qid, qcost, qh) in &snapshot {
                if !search.arena[qid as usize].open {
                    continue;
                }
                let dominated = snapshot
                    .iter()
                    .any(|&(did, dcost, dh)| did != qid && qcost > dcost && qh >= dh);
                if dominated {
                    kills.push(qid);
                }
            }
            for qid in kills {
                let rec = &mut search.arena[qid as usize];
                rec.alive = false;
                rec.open = false;
                search.open_count -= 1;
            }
            search.pareto[node].retain(|&id| search.arena[id as usize].alive);
        }

        // Close the expanded group.
        for &pid in &group {
            let rec = &mut search.arena[pid as usize];
            if rec.alive && rec.open {
                rec.open = false;
                search.open_count -= 1;
            }
        }

        // Form the next group: all open plans below the new threshold,
        // i.e. buckets strictly below the wave index.
        wave += 1;
        if search.open_count > 0 {
            // Waves whose threshold reaches no open plan expand nothing;
            // skip them directly to the first populated bucket.
            let first_nonempty = search
                .buckets
                .iter()
                .position(|b| b.iter().any(|&id| search.arena[id as usize].alive));
            if let Some(b) = first_nonempty {
                wave = wave.max(b + 1);
            }
        }
        group = Vec::new();
        let limit = wave.min(search.buckets.len());
        for b in 0..limit {
            for id in std::mem::take(&mut search.buckets[b]) {
                if search.arena[id as usize].alive {
                    group.push(id);
                }
            }
        }
    }

    // Surviving per-node fronts, sorted for deterministic output.
    let fronts: Vec<Vec<(f64, f64)>> = search
        .pareto
        .iter()
        .map(|ids| {
            let mut front: Vec<(f64, f64)> = ids
                .iter()
                .map(|&id| {
                    let r = &search.arena[id as usize];
                    (r.cost, r.h)
                })
                .collect();
            front.sort_by(|a, b| a.partial_cmp(b).unwrap());
            front.dedup();
            front
        })
        .collect();

    // Minimum-cost feasible goal plan; ties by h, then node sequence.
    let mut best: Option<u32> = None;
    for &g in goal_nodes {
        for &id in &search.pareto[g] {
            let rec = &search.arena[id as usize];
            if rec.h > params.beta {
                continue;
            }
            best = match best {
                None => Some(id),
                Some(cur) => {
                    let c = &search.arena[cur as usize];
                    let better = (rec.cost, rec.h) < (c.cost, c.h)
                        || (rec.cost == c.cost
                            && rec.h == c.h
                            && search.node_sequence(id) < search.node_sequence(cur));
                    if better {
                        Some(id)
                    } else {
                        Some(cur)
                    }
                }
            };
        }
    }

    ExploreOutcome {
        plan: best.map(|id| search.to_plan(id)),
        fronts,
    }
}

/// As [`explore_full`], returning only the plan or `NoFeasiblePlan`.
pub fn explore(
    roadmap: &Roadmap,
    profiles: &ProfileTable,
    goal_nodes: &[usize],
    params: &ExploreParams,
) -> Result<Plan, PlanError> {
    explore_full(roadmap, profiles, goal_nodes, params)
        .plan
        .ok_or(PlanError::NoFeasiblePlan)
}
