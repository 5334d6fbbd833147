//! Trajectory generators: Gaussian and Normal-LogNormal control perturbations,
//! and rollouts of a flow policy.
//!
//! Sample `k` of a batch always draws from random stream `k` of the batch
//! seed, so a batch of `K` samples is a prefix of any larger batch with the
//! same seed.

use crate::dynamics::{clamp_control, reduced_step, rollout, Control, DynamicsParams, State, Trajectory};
use crate::env::{footprint_in_collision, ClearanceMap};
use crate::flowpolicy::FlowPolicy;
use crate::seeds::stream_rng;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    NormalLognormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationSpec {
    pub kind: NoiseKind,
    /// Diagonal of the control covariance, `(var_a, var_delta)`.
    pub covariance: [f64; 2],
    /// Log-space standard deviation of the multiplicative factor.
    pub sigma_ln: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self::gaussian()
    }
}

impl PerturbationSpec {
    pub fn gaussian() -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            covariance: [0.5 * 0.5, 0.1 * 0.1],
            sigma_ln: 0.5,
        }
    }

    pub fn normal_lognormal() -> Self {
        Self {
            kind: NoiseKind::NormalLognormal,
            ..Self::gaussian()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.covariance[0] > 0.0 && self.covariance[1] > 0.0) {
            return Err("covariance entries must be positive".into());
        }
        if self.kind == NoiseKind::NormalLognormal && !(self.sigma_ln > 0.0) {
            return Err("sigma_ln must be positive".into());
        }
        Ok(())
    }
}

/// One perturbed control sequence and the raw noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    /// `clamp(nominal + noise)`.
    pub controls: Vec<Control>,
    pub noise: Vec<Control>,
}

fn noise_sequence<R: Rng>(rng: &mut R, len: usize, spec: &PerturbationSpec) -> Vec<Control> {
    let na = Normal::new(0.0, spec.covariance[0].sqrt()).expect("finite std");
    let nd = Normal::new(0.0, spec.covariance[1].sqrt()).expect("finite std");
    let ln = LogNormal::new(-0.5 * spec.sigma_ln * spec.sigma_ln, spec.sigma_ln).expect("finite sigma");
    (0..len)
        .map(|_| {
            let mut a = na.sample(rng);
            let mut d = nd.sample(rng);
            if spec.kind == NoiseKind::NormalLognormal {
                a *= ln.sample(rng);
                d *= ln.sample(rng);
            }
            Control::new(a, d)
        })
        .collect()
}

/// `k` perturbed copies of `nominal`.
pub fn sample_perturbations(
    nominal: &[Control],
    spec: &PerturbationSpec,
    k: usize,
    seed: u64,
    limits: &DynamicsParams,
) -> Vec<Perturbed> {
    (0..k)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let noise = noise_sequence(&mut rng, nominal.len(), spec);
            let controls = nominal
                .iter()
                .zip(&noise)
                .map(|(u, e)| clamp_control(&Control::new(u.a + e.a, u.delta + e.delta), limits))
                .collect();
            Perturbed { controls, noise }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBatch {
    pub trajectories: Vec<Trajectory>,
    /// Index of the first colliding state, per trajectory.
    pub first_collision: Vec<Option<usize>>,
}

impl TrajectoryBatch {
    /// Marks each trajectory with its first state whose footprint collides.
    pub fn annotate<M: ClearanceMap + Sync + ?Sized>(
        trajectories: Vec<Trajectory>,
        map: &M,
        footprint_radius: f64,
    ) -> Self {
        let first_collision = trajectories
            .par_iter()
            .map(|tr| first_collision(tr, map, footprint_radius))
            .collect();
        Self {
            trajectories,
            first_collision,
        }
    }

    /// Batch with no collision information (every trajectory treated as free).
    pub fn unchecked(trajectories: Vec<Trajectory>) -> Self {
        let n = trajectories.len();
        Self {
            trajectories,
            first_collision: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn collided(&self, k: usize) -> bool {
        self.first_collision[k].is_some()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.horizon())
    }
}

pub fn first_collision<M: ClearanceMap + ?Sized>(tr: &Trajectory, map: &M, footprint_radius: f64) -> Option<usize> {
    tr.states
        .iter()
        .position(|s| footprint_in_collision(map, s.position(), footprint_radius))
}

/// Draws an index from `probs` with a uniform variate. Falls back to the
/// last positive entry when rounding leaves `u` past the cumulative sum.
pub fn draw_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Settings for rolling a policy out.
#[derive(Clone, Copy)]
pub struct PolicyRollout<'a> {
    pub policy: &'a FlowPolicy,
    /// Map used only by the collision-free fallback of policy queries.
    pub fallback_map: Option<&'a (dyn ClearanceMap + Sync)>,
    pub footprint_radius: f64,
    /// Rollout speed (m/s).
    pub speed: f64,
    pub horizon: usize,
    pub dynamics: DynamicsParams,
}

/// `k` independent rollouts of the policy from `x0` at fixed speed.
/// Controls are recorded as `(a = 0, delta)`.
pub fn sample_policy_trajectories(r: &PolicyRollout<'_>, x0: &State, k: usize, seed: u64) -> Vec<Trajectory> {
    (0..k)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut pose = x0.pose();
            let mut states = Vec::with_capacity(r.horizon + 1);
            let mut controls = Vec::with_capacity(r.horizon);
            states.push(State::from_pose(pose, r.speed));
            for t in 0..r.horizon {
                let map = r.fallback_map.map(|m| m as &dyn ClearanceMap);
                let (probs, _) = r.policy.query(&pose, t, map, r.footprint_radius);
                let a = draw_index(&probs, rng.random::<f64>());
                let delta = r.policy.spec.actions[a];
                pose = reduced_step(&pose, delta, r.speed, &r.dynamics);
                states.push(State::from_pose(pose, r.speed));
                controls.push(Control::steer(delta));
            }
            Trajectory { states, controls }
        })
        .collect()
}

/// Full-dynamics rollouts of perturbed controls around `nominal`.
pub fn sample_perturbed_trajectories(
    nominal: &[Control],
    x0: &State,
    spec: &PerturbationSpec,
    k: usize,
    seed: u64,
    p: &DynamicsParams,
) -> Vec<Trajectory> {
    sample_perturbations(nominal, spec, k, seed, p)
        .into_par_iter()
        .map(|s| rollout(x0, &s.controls, p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelsets::{uniform_actions, DiscretizationSpec};

    fn moments(xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        (mean, var, m4 / (var * var) - 3.0)
    }

    #[test]
    fn tiny_covariance_returns_nominal() {
        let spec = PerturbationSpec {
            covariance: [1e-24, 1e-24],
            ..PerturbationSpec::gaussian()
        };
        let nominal = vec![Control::new(0.3, -0.1); 4];
        for s in sample_perturbations(&nominal, &spec, 16, 3, &DynamicsParams::default()) {
            for (u, n) in s.controls.iter().zip(&nominal) {
                assert!((u.a - n.a).abs() < 1e-9 && (u.delta - n.delta).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noise_means_and_tails() {
        let limits = DynamicsParams {
            a_max: 1e9,
            delta_max: 1e9,
            ..DynamicsParams::default()
        };
        let nominal = vec![Control::default()];
        let n = 100_000;
        let g = sample_perturbations(&nominal, &PerturbationSpec::gaussian(), n, 11, &limits);
        let l = sample_perturbations(&nominal, &PerturbationSpec::normal_lognormal(), n, 11, &limits);
        let ga: Vec<f64> = g.iter().map(|s| s.noise[0].a).collect();
        let gd: Vec<f64> = g.iter().map(|s| s.noise[0].delta).collect();
        let ld: Vec<f64> = l.iter().map(|s| s.noise[0].delta).collect();
        let (ma, _, _) = moments(&ga);
        let (md, vd, kd) = moments(&gd);
        let (ml, _, kl) = moments(&ld);
        let bound = |sigma: f64| 4.0 * sigma / (n as f64).sqrt();
        assert!(ma.abs() < bound(0.5));
        assert!(md.abs() < bound(0.1));
        assert!((vd - 0.01).abs() < 0.001);
        assert!(ml.abs() < bound(0.1 * 1.3));
        assert!(kd.abs() < 0.1, "gaussian excess kurtosis {kd}");
        assert!(kl > kd + 0.5, "nln excess kurtosis {kl}");
    }

    #[test]
    fn clamped_and_deterministic() {
        let p = DynamicsParams::default();
        let nominal = vec![Control::new(2.9, 0.39); 6];
        let a = sample_perturbations(&nominal, &PerturbationSpec::normal_lognormal(), 64, 5, &p);
        let b = sample_perturbations(&nominal, &PerturbationSpec::normal_lognormal(), 64, 5, &p);
        assert_eq!(a, b);
        for s in &a {
            for u in &s.controls {
                assert!(u.a.abs() <= p.a_max && u.delta.abs() <= p.delta_max);
            }
        }
        let prefix = sample_perturbations(&nominal, &PerturbationSpec::normal_lognormal(), 16, 5, &p);
        assert_eq!(&a[..16], &prefix[..]);
    }

    #[test]
    fn draw_index_cases() {
        assert_eq!(draw_index(&[0.0, 1.0, 0.0], 0.999), 1);
        assert_eq!(draw_index(&[0.5, 0.5], 0.49), 0);
        assert_eq!(draw_index(&[0.5, 0.5], 0.5), 1);
        assert_eq!(draw_index(&[0.3, 0.3, 0.3], 0.95), 2);
    }

    #[test]
    fn chain_policy_gives_identical_rollouts() {
        let spec = DiscretizationSpec {
            actions: uniform_actions(1, 0.4),
            horizon: 4,
            ..DiscretizationSpec::default()
        };
        let bundle = crate::flowpolicy::compute_cuniform_policy(&spec).unwrap();
        let r = PolicyRollout {
            policy: &bundle.policy,
            fallback_map: None,
            footprint_radius: 0.3,
            speed: spec.speed,
            horizon: 4,
            dynamics: spec.dynamics(),
        };
        let trajs = sample_policy_trajectories(&r, &State::default(), 10, 1);
        assert!(trajs.iter().all(|t| *t == trajs[0]));
        assert_eq!(trajs[0].last().px, 2.0);
    }
}
