//! Perception heuristic: per-edge drift profiles and the clamped,
//! history-dependent fold that scores a plan prefix.
//!
//! Each timestep along an edge incurs a drift penalty of `dt`, offset by
//! `dt / n_f` per visible feature; with more than `n_f` features in view the
//! increment goes negative. The running value clamps at zero, so the fold is
//! not additive across edges and must be applied in path order.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{wrap_angle, Environment, PlannerState, VisibilityParams};
use crate::roadmap::{edge_cost, Roadmap};

/// Timestep, feature budget, and the speed used to convert edge length into
/// timesteps.
#[derive(Clone, Copy, Debug)]
pub struct HeuristicParams {
    pub dt: f64,
    pub n_f: usize,
    pub nominal_speed: f64,
}

/// Per-timestep heuristic increments along one directed edge.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeProfile {
    pub increments: Vec<f64>,
}

/// Number of `dt` intervals covering an edge of the given length; minimum 1.
fn edge_steps(length: f64, hp: &HeuristicParams) -> usize {
    ((length / (hp.nominal_speed * hp.dt)).ceil() as usize).max(1)
}

/// Samples states at the start of each `dt` interval along the directed edge
/// `u -> v` (terminal state excluded; it belongs to the next edge) and
/// records `dt - k_t * dt / n_f` per step, where `k_t` is the visible
/// feature count. Yaw interpolates along the shortest direction.
pub fn edge_profile(
    u: &PlannerState,
    v: &PlannerState,
    env: &Environment,
    vp: &VisibilityParams,
    hp: &HeuristicParams,
) -> EdgeProfile {
    profile_impl(u, v, hp, |state| {
        let k = env.visible_features(state, vp).len() as f64;
        hp.dt * (1.0 - k / hp.n_f as f64)
    })
}

/// Learned-rate variant: increments are `rate(state) * dt` with no
/// feature-count term; the learned rate already nets drift and correction.
pub fn map_edge_profile(
    u: &PlannerState,
    v: &PlannerState,
    map: &HeuristicMap,
    hp: &HeuristicParams,
) -> EdgeProfile {
    let length = edge_cost(u, v);
    let velocity = if length > 0.0 {
        (v.position - u.position) / length * hp.nominal_speed
    } else {
        Vector3::zeros()
    };
    profile_impl(u, v, hp, |state| map.rate(state, &velocity) * hp.dt)
}

fn profile_impl(
    u: &PlannerState,
    v: &PlannerState,
    hp: &HeuristicParams,
    mut increment_at: impl FnMut(&PlannerState) -> f64,
) -> EdgeProfile {
    let length = edge_cost(u, v);
    let steps = edge_steps(length, hp);
    let dir = if length > 0.0 {
        (v.position - u.position) / length
    } else {
        Vector3::zeros()
    };
    let dyaw = wrap_angle(v.yaw - u.yaw);
    let increments = (0..steps)
        .map(|t| {
            let s = t as f64 * hp.nominal_speed * hp.dt;
            let frac = if length > 0.0 { s / length } else { 0.0 };
            let state = PlannerState::new(u.position + dir * s, u.yaw + dyaw * frac);
            increment_at(&state)
        })
        .collect();
    EdgeProfile { increments }
}

/// Left-to-right clamped fold: `h <- max(0, h + increment)` starting from
/// `h0`. The clamp makes the result history-dependent, so per-edge values
/// cannot simply be summed.
pub fn fold_heuristic(h0: f64, profile: &EdgeProfile) -> f64 {
    debug_assert!(h0 >= 0.0);
    profile
        .increments
        .iter()
        .fold(h0, |h, inc| (h + inc).max(0.0))
}

/// One record of a precomputed heuristic map: the mean localization error
/// rate observed (or predicted) at a state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapRecord {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub yaw: f64,
    pub rate: f64,
}

/// Exported error-rate map queried by weighted nearest-neighbor
/// interpolation over (position, velocity, yaw).
#[derive(Clone, Debug)]
pub struct HeuristicMap {
    pub records: Vec<MapRecord>,
    pub k_nn: usize,
    pub w_yaw: f64,
}

impl HeuristicMap {
    pub const DEFAULT_K_NN: usize = 8;
    pub const DEFAULT_W_YAW: f64 = 1.0;

    pub fn new(records: Vec<MapRecord>, k_nn: usize, w_yaw: f64) -> Self {
        assert!(!records.is_empty(), "heuristic map must be non-empty");
        assert!(k_nn >= 1);
        Self {
            records,
            k_nn,
            w_yaw,
        }
    }

    /// Squared interpolation metric:
    /// `|dp|^2 + |dv|^2 + w_yaw * wrap(dyaw)^2`.
    fn metric_sq(&self, s: &PlannerState, velocity: &Vector3<f64>, rec: &MapRecord) -> f64 {
        let dp = s.position - rec.position;
        let dv = velocity - rec.velocity;
        let dyaw = wrap_angle(s.yaw - rec.yaw);
        dp.norm_squared() + dv.norm_squared() + self.w_yaw * dyaw * dyaw
    }

    /// Inverse-distance-weighted mean rate over the `k_nn` nearest records.
    /// A record matching the query exactly returns its own rate.
    pub fn rate(&self, s: &PlannerState, velocity: &Vector3<f64>) -> f64 {
        let mut dists: Vec<(f64, usize)> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, rec)| (self.metric_sq(s, velocity, rec), i))
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = self.k_nn.min(dists.len());
        if dists[0].0 == 0.0 {
            return self.records[dists[0].1].rate;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for &(d2, i) in &dists[..k] {
            let w = 1.0 / d2.sqrt();
            num += w * self.records[i].rate;
            den += w;
        }
        num / den
    }
}

/// Standalone form of [`HeuristicMap::rate`].
pub fn map_rate(s: &PlannerState, velocity: &Vector3<f64>, map: &HeuristicMap) -> f64 {
    map.rate(s, velocity)
}

/// Heuristic source used when profiling roadmap edges.
#[derive(Clone, Copy)]
pub enum HeuristicModel<'a> {
    /// Count visible landmarks against the `n_f` budget.
    FeatureCount {
        env: &'a Environment,
        vp: &'a VisibilityParams,
    },
    /// Interpolate an exported error-rate map.
    LearnedMap { map: &'a HeuristicMap },
}

impl HeuristicModel<'_> {
    pub fn profile(&self, u: &PlannerState, v: &PlannerState, hp: &HeuristicParams) -> EdgeProfile {
        match self {
            HeuristicModel::FeatureCount { env, vp } => edge_profile(u, v, env, vp, hp),
            HeuristicModel::LearnedMap { map } => map_edge_profile(u, v, map, hp),
        }
    }
}

/// Profiles for every directed roadmap edge, aligned with the neighbor lists:
/// `per_edge[u][j]` profiles the edge from `u` to `roadmap.neighbors[u][j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileTable {
    pub per_edge: Vec<Vec<EdgeProfile>>,
}

impl ProfileTable {
    pub fn get(&self, node: usize, neighbor_slot: usize) -> &EdgeProfile {
        &self.per_edge[node][neighbor_slot]
    }

    /// Total number of directed edge profiles.
    pub fn len(&self) -> usize {
        self.per_edge.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All-zero single-step profiles matching the roadmap shape; useful for
    /// cost-only searches.
    pub fn zeros(roadmap: &Roadmap) -> Self {
        Self {
            per_edge: roadmap
                .neighbors
                .iter()
                .map(|list| {
                    list.iter()
                        .map(|_| EdgeProfile {
                            increments: vec![0.0],
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Profiles every directed edge of the roadmap. Edges are independent, so
/// the computation parallelizes over nodes; the result is identical to the
/// serial schedule.
pub fn profiles_for_roadmap(
    roadmap: &Roadmap,
    model: &HeuristicModel<'_>,
    hp: &HeuristicParams,
) -> ProfileTable {
    let per_edge = roadmap
        .neighbors
        .par_iter()
        .enumerate()
        .map(|(u, list)| {
            list.iter()
                .map(|nb| model.profile(&roadmap.nodes[u], &roadmap.nodes[nb.index], hp))
                .collect()
        })
        .collect();
    ProfileTable { per_edge }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Aabb;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hp() -> HeuristicParams {
        HeuristicParams {
            dt: 0.1,
            n_f: 12,
            nominal_speed: 1.0,
        }
    }

    /// Environment whose feature ring is visible from everywhere (no
    /// obstacles, fov = pi, generous range).
    fn ring_env(count: usize) -> (Environment, VisibilityParams) {
        use std::f64::consts::PI;
        let features = (0..count)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / count.max(1) as f64;
                Vector3::new(5.0 + 3.0 * a.cos(), 5.0 + 3.0 * a.sin(), 5.0)
            })
            .collect();
        let env = Environment {
            workspace: Aabb::new(Vector3::zeros(), Vector3::new(10.0, 10.0, 10.0)),
            obstacles: vec![],
            features,
        };
        let vp = VisibilityParams {
            fov_half_angle: PI,
            max_range: 100.0,
        };
        (env, vp)
    }

    #[test]
    fn full_feature_budget_zeroes_increments() {
        let (env, vp) = ring_env(12);
        let u = PlannerState::new(Vector3::new(4.0, 5.0, 5.0), 0.0);
        let v = PlannerState::new(Vector3::new(6.0, 5.0, 5.0), 0.0);
        let profile = edge_profile(&u, &v, &env, &vp, &hp());
        assert_eq!(profile.increments.len(), 20);
        assert_eq!(profile.increments, vec![0.0; 20]);
    }

    #[test]
    fn no_features_pays_full_dt() {
        let (mut env, vp) = ring_env(0);
        env.features.clear();
        let u = PlannerState::new(Vector3::new(4.0, 5.0, 5.0), 0.0);
        let v = PlannerState::new(Vector3::new(5.0, 5.0, 5.0), 0.0);
        let profile = edge_profile(&u, &v, &env, &vp, &hp());
        assert_eq!(profile.increments, vec![0.1; 10]);
    }

    #[test]
    fn half_feature_budget_pays_half_dt() {
        let (env, vp) = ring_env(6);
        let u = PlannerState::new(Vector3::new(4.0, 5.0, 5.0), 0.0);
        let v = PlannerState::new(Vector3::new(6.0, 5.0, 5.0), 0.0);
        let profile = edge_profile(&u, &v, &env, &vp, &hp());
        assert_eq!(profile.increments, vec![0.05; 20]);
    }

    #[test]
    fn fold_is_additive_for_positive_increments() {
        let p = EdgeProfile {
            increments: vec![0.1, 0.1, 0.1],
        };
        assert_relative_eq!(fold_heuristic(0.0, &p), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn fold_clamp_fires_mid_sequence() {
        let p = EdgeProfile {
            increments: vec![-0.1, 0.1],
        };
        // An unclamped sum would give 0.05.
        assert_relative_eq!(fold_heuristic(0.05, &p), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn fold_matches_reference_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let h0: f64 = rng.gen_range(0.0..1.0);
            let incs: Vec<f64> = (0..50).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let profile = EdgeProfile {
                increments: incs.clone(),
            };
            let mut reference = h0;
            for inc in &incs {
                reference = (reference + inc).max(0.0);
            }
            assert_eq!(fold_heuristic(h0, &profile), reference);
        }
    }

    #[test]
    fn adding_features_never_raises_increments() {
        let (env_sparse, vp) = ring_env(4);
        let (env_rich, _) = ring_env(16);
        // env_rich's ring contains every 4th point of itself at the sparse
        // angles; build the superset explicitly instead.
        let mut env_super = env_sparse.clone();
        env_super
            .features
            .extend(env_rich.features.iter().cloned());
        let u = PlannerState::new(Vector3::new(4.0, 5.0, 5.0), 1.0);
        let v = PlannerState::new(Vector3::new(6.0, 4.0, 5.0), -1.0);
        let sparse = edge_profile(&u, &v, &env_sparse, &vp, &hp());
        let superset = edge_profile(&u, &v, &env_super, &vp, &hp());
        for (a, b) in sparse.increments.iter().zip(&superset.increments) {
            assert!(b <= a);
        }
        assert!(fold_heuristic(0.3, &superset) <= fold_heuristic(0.3, &sparse));
    }

    #[test]
    fn map_rate_exact_match_returns_record_rate() {
        let rec = MapRecord {
            position: Vector3::new(1.0, 2.0, 3.0),
            velocity: Vector3::new(0.5, 0.0, 0.0),
            yaw: 0.3,
            rate: 0.42,
        };
        let map = HeuristicMap::new(
            vec![
                rec.clone(),
                MapRecord {
                    position: Vector3::zeros(),
                    velocity: Vector3::zeros(),
                    yaw: 0.0,
                    rate: 9.0,
                },
            ],
            2,
            1.0,
        );
        let s = PlannerState::new(rec.position, rec.yaw);
        assert_eq!(map.rate(&s, &rec.velocity), 0.42);
    }

    #[test]
    fn map_rate_equidistant_records_average() {
        let map = HeuristicMap::new(
            vec![
                MapRecord {
                    position: Vector3::new(-1.0, 0.0, 0.0),
                    velocity: Vector3::zeros(),
                    yaw: 0.0,
                    rate: 1.0,
                },
                MapRecord {
                    position: Vector3::new(1.0, 0.0, 0.0),
                    velocity: Vector3::zeros(),
                    yaw: 0.0,
                    rate: 3.0,
                },
            ],
            2,
            1.0,
        );
        let s = PlannerState::new(Vector3::zeros(), 0.0);
        assert_relative_eq!(map.rate(&s, &Vector3::zeros()), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn map_rate_matches_full_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let records: Vec<MapRecord> = (0..40)
            .map(|_| MapRecord {
                position: Vector3::new(
                    rng.gen_range(0.0..5.0),
                    rng.gen_range(0.0..5.0),
                    rng.gen_range(0.0..5.0),
                ),
                velocity: Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ),
                yaw: rng.gen_range(-3.0..3.0),
                rate: rng.gen_range(0.0..1.0),
            })
            .collect();
        let map = HeuristicMap::new(records.clone(), 8, 1.0);

        for _ in 0..50 {
            let s = PlannerState::new(
                Vector3::new(
                    rng.gen_range(0.0..5.0),
                    rng.gen_range(0.0..5.0),
                    rng.gen_range(0.0..5.0),
                ),
                rng.gen_range(-3.0..3.0),
            );
            let vel = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );

            // Full scan: sort all records by the metric, average the top 8
            // by inverse distance.
            let mut scored: Vec<(f64, f64)> = records
                .iter()
                .map(|rec| {
                    let dp = s.position - rec.position;
                    let dv = vel - rec.velocity;
                    let dyaw = wrap_angle(s.yaw - rec.yaw);
                    (
                        (dp.norm_squared() + dv.norm_squared() + dyaw * dyaw).sqrt(),
                        rec.rate,
                    )
                })
                .collect();
            scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (mut num, mut den) = (0.0, 0.0);
            for (d, rate) in &scored[..8] {
                num += rate / d;
                den += 1.0 / d;
            }
            let expected = num / den;
            assert_relative_eq!(map.rate(&s, &vel), expected, epsilon = 1e-9);

            let selected: Vec<f64> = scored[..8].iter().map(|(_, r)| *r).collect();
            let lo = selected.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = selected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let got = map.rate(&s, &vel);
            assert!(got >= lo - 1e-12 && got <= hi + 1e-12);
        }
    }

    #[test]
    fn single_edge_roadmap_profiles_both_directions() {
        let (env, vp) = ring_env(5);
        let x_init = PlannerState::new(Vector3::new(4.0, 5.0, 5.0), 0.0);
        let goal = Aabb::new(Vector3::new(5.5, 4.5, 4.5), Vector3::new(6.5, 5.5, 5.5));
        let rm = crate::roadmap::build_graph(&env, 0, 3.0, x_init, &goal).unwrap();
        assert_eq!(rm.edge_count(), 1);
        let model = HeuristicModel::FeatureCount { env: &env, vp: &vp };
        let table = profiles_for_roadmap(&rm, &model, &hp());
        assert_eq!(table.len(), 2);
        // Forward and reverse sample different yaw sweeps, so the profiles
        // need not match; both must exist and have the same step count.
        assert_eq!(
            table.get(0, 0).increments.len(),
            table.get(1, 0).increments.len()
        );
    }

    #[test]
    fn profile_table_worker_invariance() {
        let (env, vp) = ring_env(9);
        let x_init = PlannerState::new(Vector3::new(2.0, 2.0, 5.0), 0.0);
        let goal = Aabb::new(Vector3::new(7.5, 7.5, 4.5), Vector3::new(8.5, 8.5, 5.5));
        let rm = crate::roadmap::build_graph(&env, 80, 2.5, x_init, &goal).unwrap();
        let model = HeuristicModel::FeatureCount { env: &env, vp: &vp };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| profiles_for_roadmap(&rm, &model, &hp()));
        let eight = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| profiles_for_roadmap(&rm, &model, &hp()));
        assert_eq!(one, eight);
    }

    #[test]
    fn empty_roadmap_gives_empty_table() {
        let (env, vp) = ring_env(3);
        let x_init = PlannerState::new(Vector3::new(1.0, 1.0, 1.0), 0.0);
        // Goal fallback lands far outside connection radius: no edges.
        let goal = Aabb::new(Vector3::new(8.5, 8.5, 8.5), Vector3::new(9.5, 9.5, 9.5));
        let rm = crate::roadmap::build_graph(&env, 0, 0.5, x_init, &goal).unwrap();
        let model = HeuristicModel::FeatureCount { env: &env, vp: &vp };
        let table = profiles_for_roadmap(&rm, &model, &hp());
        assert!(table.is_empty());
    }

    proptest! {
        /// The fold stays non-negative and below the optimistic additive bound.
        #[test]
        fn fold_bounds(
            h0 in 0.0..2.0f64,
            incs in proptest::collection::vec(-0.5..0.5f64, 0..60),
        ) {
            let profile = EdgeProfile { increments: incs.clone() };
            let h = fold_heuristic(h0, &profile);
            prop_assert!(h >= 0.0);
            let bound = h0 + incs.iter().map(|x| x.max(0.0)).sum::<f64>();
            prop_assert!(h <= bound + 1e-12);
        }

        /// With non-negative increments the fold is exactly additive.
        #[test]
        fn fold_additive_when_nonnegative(
            h0 in 0.0..2.0f64,
            incs in proptest::collection::vec(0.0..0.5f64, 0..60),
        ) {
            let profile = EdgeProfile { increments: incs.clone() };
            let mut sum = h0;
            for inc in &incs {
                sum += inc;
            }
            prop_assert_eq!(fold_heuristic(h0, &profile), sum);
        }
    }
}
