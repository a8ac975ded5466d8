//! Motion regularizers and the composite objective.

use crate::deform::{MotionParams, Primitive, MOTION_DOF};
use crate::error::{Error, Result};
use crate::se3::{Twist, Vec3};
use crate::temporal::BezierTwists;

/// K nearest neighbours of every primitive by canonical distance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    neighbors: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Directed edges `(i, j)` in index order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, js)| js.iter().map(move |&j| (i, j)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_reg: f64,
    pub w_motion: f64,
    pub w_rigid: f64,
    pub lambda_c: f64,
    pub k_neighbors: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_reg: 0.01,
            w_motion: 0.0001,
            w_rigid: 1.0,
            lambda_c: 50.0,
            k_neighbors: 3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_reg, self.w_motion, self.w_rigid, self.lambda_c];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        if self.k_neighbors == 0 {
            return Err(Error::invalid("k_neighbors must be at least 1"));
        }
        Ok(())
    }
}

/// Second difference of the control twists, `ζ⁽⁰⁾ − 2ζ⁽¹⁾ + ζ⁽²⁾`.
pub fn bezier_acceleration(twists: &BezierTwists) -> Twist {
    twists.ctrl0 - twists.ctrl1 * 2.0 + twists.ctrl2
}

pub fn motion_smoothness_loss(twists: &BezierTwists) -> f64 {
    bezier_acceleration(twists).norm_squared()
}

/// Scene-level smoothness loss (mean over primitives). Adds its gradient
/// into `grad` when given.
pub fn scene_motion_smoothness(params: &[MotionParams], mut grad: Option<&mut [[f64; MOTION_DOF]]>) -> f64 {
    if params.is_empty() {
        return 0.0;
    }
    let n = params.len() as f64;
    let mut total = 0.0;
    for (i, p) in params.iter().enumerate() {
        let b = bezier_acceleration(&p.twists);
        total += b.norm_squared();
        if let Some(g) = grad.as_deref_mut() {
            let b = b.to_array();
            for c in 0..6 {
                let d = 2.0 * b[c] / n;
                g[i][6 + c] += d;
                g[i][12 + c] -= 2.0 * d;
                g[i][18 + c] += d;
            }
        }
    }
    total / n
}

/// `exp(−λ_c ‖c_i − c_j‖²)`.
pub fn color_affinity(c_i: &Vec3, c_j: &Vec3, lambda_c: f64) -> f64 {
    (-lambda_c * (c_i - c_j).norm_squared()).exp()
}

/// Exact KNN on canonical means; ties go to the lower index.
pub fn knn_canonical(primitives: &[Primitive], k: usize) -> Result<NeighborGraph> {
    let n = primitives.len();
    if n < 2 {
        return Err(Error::EmptyScene(n));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let k = k.min(n - 1);
    let neighbors = primitives
        .iter()
        .enumerate()
        .map(|(i, pi)| {
            let mut cand: Vec<(f64, usize)> = primitives
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, pj)| ((pi.mu - pj.mu).norm_squared(), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if cand.len() > k {
                cand.select_nth_unstable_by(k - 1, cmp);
                cand.truncate(k);
            }
            cand.sort_by(cmp);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    Ok(NeighborGraph { neighbors })
}

/// Colour-weighted disagreement of base twists over the neighbour graph,
/// summed over directed edges. Gradients w.r.t. both endpoints are added
/// into `grad` when given.
pub fn rigid_coherence_loss(
    primitives: &[Primitive],
    params: &[MotionParams],
    graph: &NeighborGraph,
    lambda_c: f64,
    mut grad: Option<&mut [[f64; MOTION_DOF]]>,
) -> f64 {
    let mut total = 0.0;
    for (i, j) in graph.edges() {
        let w = color_affinity(&primitives[i].color, &primitives[j].color, lambda_c);
        let d = (params[i].twists.base - params[j].twists.base).to_array();
        total += w * d.iter().map(|v| v * v).sum::<f64>();
        if let Some(g) = grad.as_deref_mut() {
            for c in 0..6 {
                g[i][c] += 2.0 * w * d[c];
                g[j][c] -= 2.0 * w * d[c];
            }
        }
    }
    total
}

/// Mean opacity over the scene; opacities are already sigmoid-activated.
pub fn opacity_regularizer(primitives: &[Primitive]) -> f64 {
    if primitives.is_empty() {
        return 0.0;
    }
    primitives.iter().map(Primitive::alpha).sum::<f64>() / primitives.len() as f64
}

pub fn total_objective(data_loss: f64, reg: f64, motion: f64, rigid: f64, w: &LossWeights) -> f64 {
    data_loss + w.w_reg * reg + w.w_motion * motion + w.w_rigid * rigid
}

/// Standard logistic function.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::TemporalProfile;

    fn prim(x: f64, color: Vec3) -> Primitive {
        let mut p = Primitive::new(
            Vec3::new(x, 0.0, 0.0),
            Vec3::new(0.1, 0.1, 0.1),
            TemporalProfile::new(0.5, 0.25, 0.5).unwrap(),
        );
        p.color = color;
        p
    }

    #[test]
    fn smoothness_cases() {
        let c0 = Twist::from_array([1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        let c2 = Twist::from_array([0.0, -2.0, 4.0, 1.0, 0.5, 1.0]);
        let b = BezierTwists {
            base: Twist::zero(),
            ctrl0: c0,
            ctrl1: (c0 + c2) * 0.5,
            ctrl2: c2,
        };
        assert!(motion_smoothness_loss(&b) < 1e-28);

        let b = BezierTwists {
            ctrl1: Twist::from_array([0.6, 0.0, 0.8, 0.0, 0.0, 0.0]),
            ..Default::default()
        };
        assert!((motion_smoothness_loss(&b) - 4.0).abs() < 1e-14);

        let b = BezierTwists {
            base: Twist::zero(),
            ctrl0: c0,
            ctrl1: c2,
            ctrl2: c0 * 0.3,
        };
        let scaled = BezierTwists {
            base: Twist::zero(),
            ctrl0: b.ctrl0 * 3.0,
            ctrl1: b.ctrl1 * 3.0,
            ctrl2: b.ctrl2 * 3.0,
        };
        assert!((motion_smoothness_loss(&scaled) - 9.0 * motion_smoothness_loss(&b)).abs() < 1e-12);
    }

    #[test]
    fn affinity_cases() {
        let c = Vec3::new(0.2, 0.4, 0.6);
        assert_eq!(color_affinity(&c, &c, 50.0), 1.0);
        let d = c + Vec3::new(0.1, 0.1, 0.0);
        assert!((color_affinity(&c, &d, 50.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(color_affinity(&c, &d, 50.0), color_affinity(&d, &c, 50.0));
        assert_eq!(color_affinity(&c, &Vec3::zeros(), 0.0), 1.0);
    }

    #[test]
    fn knn_collinear() {
        let c = Vec3::zeros();
        let prims = vec![prim(0.0, c), prim(1.0, c), prim(3.0, c)];
        let g = knn_canonical(&prims, 1).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.neighbors(2), &[1]);
        let g = knn_canonical(&prims, 10).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.neighbors(2), &[1, 0]);
        assert!(matches!(knn_canonical(&prims[..1], 1), Err(Error::EmptyScene(1))));
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let c = Vec3::zeros();
        let prims = vec![prim(1.0, c), prim(0.0, c), prim(-1.0, c)];
        let g = knn_canonical(&prims, 1).unwrap();
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn rigid_cases() {
        let c = Vec3::new(0.3, 0.3, 0.3);
        let prims = vec![prim(0.0, c), prim(1.0, c)];
        let g = knn_canonical(&prims, 1).unwrap();
        let shared = MotionParams::constant(Twist::from_array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]), Vec3::zeros());
        assert_eq!(rigid_coherence_loss(&prims, &[shared, shared], &g, 50.0, None), 0.0);

        let a = MotionParams::constant(Twist::zero(), Vec3::zeros());
        let b = MotionParams::constant(Twist::new(Vec3::zeros(), Vec3::x()), Vec3::zeros());
        assert!((rigid_coherence_loss(&prims, &[a, b], &g, 50.0, None) - 2.0).abs() < 1e-15);

        let far = vec![prim(0.0, Vec3::zeros()), prim(1.0, Vec3::new(1.0, 0.0, 0.0))];
        let g = knn_canonical(&far, 1).unwrap();
        let suppressed = rigid_coherence_loss(&far, &[a, b], &g, 50.0, None);
        assert!(suppressed < 2.0 * 1e-20);
    }

    #[test]
    fn opacity_and_objective() {
        let c = Vec3::zeros();
        let mut prims = vec![prim(0.0, c), prim(1.0, c)];
        assert_eq!(opacity_regularizer(&prims), 0.5);
        prims[0].profile.alpha = 0.2;
        prims[1].profile.alpha = 0.8;
        assert!((opacity_regularizer(&prims) - 0.5).abs() < 1e-15);
        prims[0].profile.alpha = sigmoid(-50.0);
        prims[1].profile.alpha = sigmoid(-50.0);
        assert!(opacity_regularizer(&prims) < 1e-20);

        let zero = LossWeights {
            w_reg: 0.0,
            w_motion: 0.0,
            w_rigid: 0.0,
            ..Default::default()
        };
        assert_eq!(total_objective(3.5, 1.0, 2.0, 4.0, &zero), 3.5);
        let w = LossWeights::default();
        assert!((total_objective(0.0, 1.0, 1.0, 1.0, &w) - 1.0101).abs() < 1e-15);
    }
}
