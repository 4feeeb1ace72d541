//! Workspace geometry: axis-aligned boxes, exact segment collision checks,
//! and landmark visibility with field-of-view and occlusion.
//!
//! Obstacle boxes are closed: a point on a face counts as colliding, and a
//! segment touching a face counts as intersecting. All queries are pure
//! functions of immutable inputs and safe to call from any worker.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Wraps an angle to `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Axis-aligned box, closed on all faces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lo: Vector3<f64>,
    pub hi: Vector3<f64>,
}

/// Planning workspace bounds (membership is closed).
pub type Workspace = Aabb;
/// Obstacle box (closed; touching counts as collision).
pub type Obstacle = Aabb;
/// Goal region (closed-box membership).
pub type GoalRegion = Aabb;

impl Aabb {
    pub fn new(lo: Vector3<f64>, hi: Vector3<f64>) -> Self {
        Self { lo, hi }
    }

    /// True when `lo < hi` holds component-wise.
    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.lo[i] < self.hi[i])
    }

    /// Closed-box membership.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| self.lo[i] <= p[i] && p[i] <= self.hi[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.lo + self.hi) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        (self.hi - self.lo).norm()
    }

    /// Slab-clips the segment `a + t (b - a)`, `t in [0, 1]`, against the box.
    /// Returns the clipped parameter interval, or `None` when the segment
    /// misses. Tangency (empty-interior touch) still yields an interval.
    pub fn clip_segment(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> Option<(f64, f64)> {
        let d = b - a;
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for i in 0..3 {
            if d[i] == 0.0 {
                if a[i] < self.lo[i] || a[i] > self.hi[i] {
                    return None;
                }
            } else {
                let inv = 1.0 / d[i];
                let mut ta = (self.lo[i] - a[i]) * inv;
                let mut tb = (self.hi[i] - a[i]) * inv;
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }

    /// True iff the closed segment `[a, b]` intersects the closed box.
    pub fn intersects_segment(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        self.clip_segment(a, b).is_some()
    }
}

/// Vehicle sample used by the planner: position plus camera yaw.
/// Yaw is normalized to `[-pi, pi)` on construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerState {
    pub position: Vector3<f64>,
    pub yaw: f64,
}

impl PlannerState {
    pub fn new(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            yaw: wrap_angle(yaw),
        }
    }
}

/// Field-of-view and range limits for landmark visibility.
///
/// `fov_half_angle` is measured as the full 3D angle between the heading
/// vector `(cos yaw, sin yaw, 0)` and the sight line. `max_range` defaults to
/// the workspace diagonal, which makes the range check vacuous.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct VisibilityParams {
    pub fov_half_angle: f64,
    pub max_range: f64,
}

impl VisibilityParams {
    /// Visibility limited by angle only; range set to the workspace diagonal.
    pub fn unbounded_range(fov_half_angle: f64, workspace: &Workspace) -> Self {
        Self {
            fov_half_angle,
            max_range: workspace.diagonal(),
        }
    }
}

/// Static planning environment: bounds, obstacles, and landmark features.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Environment {
    pub workspace: Workspace,
    pub obstacles: Vec<Obstacle>,
    pub features: Vec<Vector3<f64>>,
}

impl Environment {
    /// True iff `p` lies inside the workspace and strictly outside every
    /// obstacle (points on an obstacle face count as colliding).
    pub fn point_free(&self, p: &Vector3<f64>) -> bool {
        self.workspace.contains(p) && !self.obstacles.iter().any(|o| o.contains(p))
    }

    /// True iff the closed segment `[a, b]` intersects any obstacle box.
    /// A degenerate segment (`a == b`) reduces to a point-in-box test.
    pub fn segment_collides(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        self.obstacles.iter().any(|o| o.intersects_segment(a, b))
    }

    /// Indices of features visible from `s`: within range, within the
    /// field-of-view cone around the heading, and with an unobstructed
    /// sight line. A feature coincident with the position is visible.
    pub fn visible_features(&self, s: &PlannerState, vp: &VisibilityParams) -> Vec<usize> {
        let heading = Vector3::new(s.yaw.cos(), s.yaw.sin(), 0.0);
        self.features
            .iter()
            .enumerate()
            .filter_map(|(i, f)| {
                let rel = f - s.position;
                let dist = rel.norm();
                if dist > vp.max_range {
                    return None;
                }
                if dist > 0.0 {
                    let cos_angle = (heading.dot(&rel) / dist).clamp(-1.0, 1.0);
                    if cos_angle.acos() > vp.fov_half_angle {
                        return None;
                    }
                }
                if self.segment_collides(&s.position, f) {
                    return None;
                }
                Some(i)
            })
            .collect()
    }
}

/// Closed-box goal membership.
pub fn in_goal(p: &Vector3<f64>, goal: &GoalRegion) -> bool {
    goal.contains(p)
}
