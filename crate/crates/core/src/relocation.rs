//! Fixed-budget relocation: near-transparent primitives are overwritten by
//! shrunken clones of alive ones, sampled by difficulty cues.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::deform::{MotionParams, Primitive};
use crate::error::{Error, Result};
use crate::se3::Vec3;

/// Sampling cues for one primitive.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelocationCue {
    pub sigmoid_opacity: f64,
    /// Norm of the base translational rate.
    pub nu_norm: f64,
    /// Activated temporal scale.
    pub temporal_scale_exp: f64,
    pub grad_spatial: f64,
    pub grad_temporal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelocationConfig {
    pub opacity_threshold: f64,
    pub period: usize,
    pub scale_factor: f64,
    pub rng_seed: u64,
}

impl Default for RelocationConfig {
    fn default() -> Self {
        Self {
            opacity_threshold: 0.005,
            period: 100,
            scale_factor: 0.66,
            rng_seed: 0,
        }
    }
}

impl RelocationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.opacity_threshold > 0.0 && self.opacity_threshold < 1.0) {
            return Err(Error::invalid("opacity threshold must lie in (0, 1)"));
        }
        if self.period == 0 {
            return Err(Error::invalid("relocation period must be at least 1"));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor <= 1.0) {
            return Err(Error::invalid("scale factor must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Running sums of per-primitive gradient magnitudes between relocations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientCues {
    pub spatial: Vec<f64>,
    pub temporal: Vec<f64>,
}

impl GradientCues {
    pub fn new(n: usize) -> Self {
        Self {
            spatial: vec![0.0; n],
            temporal: vec![0.0; n],
        }
    }

    pub fn reset(&mut self) {
        self.spatial.fill(0.0);
        self.temporal.fill(0.0);
    }
}

/// Adds the magnitude of each primitive's step gradient to the running cues.
/// `spatial` holds one gradient vector per primitive; `temporal` one scalar.
pub fn accumulate_gradient_cues<V: AsRef<[Vec3]>>(
    running: &mut GradientCues,
    spatial: &[V],
    temporal: &[f64],
) -> Result<()> {
    if spatial.len() != running.spatial.len() || temporal.len() != running.temporal.len() {
        return Err(Error::invalid("gradient cue dimensions do not match the scene"));
    }
    for (acc, g) in running.spatial.iter_mut().zip(spatial) {
        *acc += g.as_ref().iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    }
    for (acc, g) in running.temporal.iter_mut().zip(temporal) {
        *acc += g.abs();
    }
    Ok(())
}

/// Assembles the cue vector for every primitive.
pub fn collect_cues(primitives: &[Primitive], params: &[MotionParams], grads: &GradientCues) -> Vec<RelocationCue> {
    primitives
        .iter()
        .zip(params)
        .enumerate()
        .map(|(i, (p, m))| RelocationCue {
            sigmoid_opacity: p.alpha(),
            nu_norm: m.twists.base.nu.norm(),
            temporal_scale_exp: p.profile.s_t,
            grad_spatial: grads.spatial.get(i).copied().unwrap_or(0.0),
            grad_temporal: grads.temporal.get(i).copied().unwrap_or(0.0),
        })
        .collect()
}

/// Splits indices into `(inactive, alive)` by `opacity < tau_alpha`.
pub fn partition_by_opacity(primitives: &[Primitive], tau_alpha: f64) -> (Vec<usize>, Vec<usize>) {
    (0..primitives.len()).partition(|&i| primitives[i].alpha() < tau_alpha)
}

/// Normalizes one cue channel over the alive set; an all-zero channel
/// contributes uniformly.
fn normalized_channel(values: impl Iterator<Item = f64>, n: usize) -> Vec<f64> {
    let values: Vec<f64> = values.collect();
    let sum: f64 = values.iter().sum();
    if sum > 0.0 {
        values.iter().map(|v| v / sum).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

/// Source probabilities `q` over the alive set, in the order of `cues`.
pub fn sampling_distribution(cues: &[RelocationCue]) -> Result<Vec<f64>> {
    let n = cues.len();
    if n == 0 {
        return Err(Error::invalid("no alive primitives to sample from"));
    }
    if cues.iter().any(|c| {
        [
            c.sigmoid_opacity,
            c.nu_norm,
            c.temporal_scale_exp,
            c.grad_spatial,
            c.grad_temporal,
        ]
        .iter()
        .any(|v| !(v.is_finite() && *v >= 0.0))
    }) {
        return Err(Error::invalid("relocation cues must be finite and non-negative"));
    }
    let channels = [
        normalized_channel(cues.iter().map(|c| c.sigmoid_opacity), n),
        normalized_channel(cues.iter().map(|c| c.nu_norm * c.temporal_scale_exp), n),
        normalized_channel(cues.iter().map(|c| c.grad_spatial), n),
        normalized_channel(cues.iter().map(|c| c.grad_temporal), n),
    ];
    let scores: Vec<f64> = (0..n).map(|i| channels.iter().map(|ch| ch[i]).sum()).collect();
    let total: f64 = scores.iter().sum();
    Ok(scores.iter().map(|s| s / total).collect())
}

/// Which slots were overwritten, and from where.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelocationOutcome {
    /// `(inactive slot, alive source)` pairs, in slot order.
    pub replaced: Vec<(usize, usize)>,
    /// Set when inactive primitives existed but nothing was alive.
    pub skipped_no_alive: bool,
}

/// Overwrites every inactive slot with a clone of a sampled alive primitive,
/// shrinking the clone's scale. Sources are drawn with replacement.
pub fn relocate<R: Rng + ?Sized>(
    primitives: &mut [Primitive],
    params: &mut [MotionParams],
    cues: &[RelocationCue],
    config: &RelocationConfig,
    rng: &mut R,
) -> Result<RelocationOutcome> {
    if primitives.len() != params.len() || primitives.len() != cues.len() {
        return Err(Error::invalid("scene, params and cues differ in length"));
    }
    config.validate()?;
    let (inactive, alive) = partition_by_opacity(primitives, config.opacity_threshold);
    if inactive.is_empty() {
        return Ok(RelocationOutcome::default());
    }
    if alive.is_empty() {
        return Ok(RelocationOutcome {
            replaced: Vec::new(),
            skipped_no_alive: true,
        });
    }
    let alive_cues: Vec<RelocationCue> = alive.iter().map(|&i| cues[i]).collect();
    let q = sampling_distribution(&alive_cues)?;
    let dist = WeightedIndex::new(&q).map_err(|e| Error::invalid(e.to_string()))?;

    let mut replaced = Vec::with_capacity(inactive.len());
    for &slot in &inactive {
        let source = alive[dist.sample(rng)];
        let mut clone = primitives[source].clone();
        clone.scale = primitives[source].scale * config.scale_factor;
        primitives[slot] = clone;
        params[slot] = params[source];
        replaced.push((slot, source));
    }
    Ok(RelocationOutcome {
        replaced,
        skipped_no_alive: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Twist;
    use crate::temporal::TemporalProfile;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prim(alpha: f64, x: f64) -> Primitive {
        Primitive::new(
            Vec3::new(x, 0.0, 0.0),
            Vec3::new(0.3, 0.2, 0.1),
            TemporalProfile::new(0.5, 0.25, alpha).unwrap(),
        )
    }

    fn cue(v: f64) -> RelocationCue {
        RelocationCue {
            sigmoid_opacity: v,
            nu_norm: v,
            temporal_scale_exp: 1.0,
            grad_spatial: v,
            grad_temporal: v,
        }
    }

    #[test]
    fn partition_cases() {
        let all_half = vec![prim(0.5, 0.0), prim(0.5, 1.0)];
        assert!(partition_by_opacity(&all_half, 0.005).0.is_empty());
        let mixed = vec![prim(0.001, 0.0), prim(0.9, 1.0)];
        assert_eq!(partition_by_opacity(&mixed, 0.005), (vec![0], vec![1]));
        let boundary = vec![prim(0.005, 0.0)];
        assert_eq!(partition_by_opacity(&boundary, 0.005), (vec![], vec![0]));
    }

    #[test]
    fn distribution_cases() {
        let q = sampling_distribution(&[cue(0.3); 4]).unwrap();
        assert!(q.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let q = sampling_distribution(&[cue(2.0), cue(1.0)]).unwrap();
        assert!((q[0] - 2.0 / 3.0).abs() < 1e-15 && (q[1] - 1.0 / 3.0).abs() < 1e-15);
        let q = sampling_distribution(&[RelocationCue::default(); 3]).unwrap();
        assert!(q.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(sampling_distribution(&[]).is_err());
    }

    #[test]
    fn relocate_single_pair() {
        let mut prims = vec![prim(0.001, 0.0), prim(0.9, 1.0)];
        let mut params = vec![
            MotionParams::default(),
            MotionParams::constant(Twist::from_array([0.1; 6]), Vec3::new(1.0, 2.0, 3.0)),
        ];
        let cues = collect_cues(&prims, &params, &GradientCues::new(2));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = relocate(&mut prims, &mut params, &cues, &RelocationConfig::default(), &mut rng).unwrap();
        assert_eq!(out.replaced, vec![(0, 1)]);
        assert_eq!(prims[0].scale, prims[1].scale * 0.66);
        assert_eq!(prims[0].mu, prims[1].mu);
        assert_eq!(prims[0].alpha(), 0.9);
        assert_eq!(params[0], params[1]);
    }

    #[test]
    fn relocate_nothing_inactive_or_nothing_alive() {
        let mut prims = vec![prim(0.5, 0.0), prim(0.9, 1.0)];
        let before = prims.clone();
        let mut params = vec![MotionParams::default(); 2];
        let cues = vec![cue(1.0); 2];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = RelocationConfig::default();
        let out = relocate(&mut prims, &mut params, &cues, &cfg, &mut rng).unwrap();
        assert!(out.replaced.is_empty());
        assert_eq!(prims, before);

        let mut dead = vec![prim(0.001, 0.0), prim(0.002, 1.0)];
        let out = relocate(&mut dead, &mut params, &cues, &cfg, &mut rng).unwrap();
        assert!(out.skipped_no_alive);
    }

    #[test]
    fn gradient_cue_accumulation() {
        let mut running = GradientCues::new(2);
        accumulate_gradient_cues(&mut running, &[[Vec3::zeros()]; 2], &[0.0; 2]).unwrap();
        assert_eq!(running.spatial, vec![0.0, 0.0]);
        for _ in 0..2 {
            let step = [
                vec![Vec3::x()],
                vec![Vec3::new(0.0, 0.6, 0.0), Vec3::new(0.0, 0.0, 0.8)],
            ];
            accumulate_gradient_cues(&mut running, &step, &[-1.0, 0.0]).unwrap();
        }
        assert_eq!(running.spatial, vec![2.0, 2.0]);
        assert_eq!(running.temporal, vec![2.0, 0.0]);
        running.reset();
        assert_eq!(running, GradientCues::new(2));
        assert!(accumulate_gradient_cues(&mut running, &[[Vec3::zeros()]], &[0.0; 2]).is_err());
    }
}
