//! The generative machinery: geometric noise schedule, denoising score
//! matching, and annealed Langevin sampling on SE(3), optionally steered by
//! the demonstration constraint gradient.
//!
//! Scores live in the body-frame tangent ([`crate::lie::Twist`]); poses are
//! updated with the decoupled retraction. By default the network predicts a
//! noise-normalized score (its output is divided by `σ_k`), which keeps the
//! regression target at unit scale across levels; the DSM loss value is
//! identical under either parameterization.

pub mod toy1d;
pub mod train;

use ndarray::{Array1, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constraints::{loss_gradient, DemoConstraint, GuidanceConfig};
use crate::error::{Error, Result};
use crate::gripper::{gripper_points, GripperSpec};
use crate::lie::vec3;
use crate::lie::{perturb, random_rotation, retract, GraspPose, Twist};
use crate::network::{
    self, encode_object, BatchItem, Checkpoint, NetworkConfig, Params,
};
use crate::scenes::{Dataset, ObjectCloud};

pub use train::{train, TrainConfig, TrainOutcome};

/// Annealed Langevin noise schedule: geometric `σ_k` between `sigma_min` and
/// `sigma_max`, step sizes `ε_k = eps0 · (σ_k / σ_max)²`, and `n_inner`
/// Langevin iterations per level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSchedule {
    pub levels: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub eps0: f64,
    pub n_inner: usize,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            levels: 30,
            sigma_min: 0.01,
            sigma_max: 1.0,
            eps0: 0.08,
            n_inner: 3,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidArgument("need at least 2 noise levels".into()));
        }
        if !(0.0 < self.sigma_min && self.sigma_min < self.sigma_max) {
            return Err(Error::InvalidArgument(
                "need 0 < sigma_min < sigma_max".into(),
            ));
        }
        if !(self.eps0 > 0.0) || self.n_inner == 0 {
            return Err(Error::InvalidArgument(
                "need eps0 > 0 and n_inner >= 1".into(),
            ));
        }
        Ok(())
    }

    /// `σ_k = sigma_min · (sigma_max / sigma_min)^(k / (L−1))`, increasing
    /// in `k`.
    pub fn sigma(&self, k: usize) -> Result<f64> {
        if k >= self.levels {
            return Err(Error::InvalidArgument(format!(
                "noise level {k} out of range ({} levels)",
                self.levels
            )));
        }
        let t = k as f64 / (self.levels - 1) as f64;
        Ok(self.sigma_min * (self.sigma_max / self.sigma_min).powf(t))
    }

    /// `ε_k = eps0 · (σ_k / σ_max)²`, decreasing as `k` decreases.
    pub fn step_size(&self, k: usize) -> Result<f64> {
        let s = self.sigma(k)?;
        Ok(self.eps0 * (s / self.sigma_max).powi(2))
    }
}

/// A trained score model: parameters, architecture, the raw gripper whose
/// control points tokenize poses, and the output parameterization flag.
#[derive(Clone, Debug)]
pub struct ScoreModel {
    pub params: Params,
    pub config: NetworkConfig,
    pub gripper: GripperSpec,
    /// When set (the default), the network output is divided by `σ_k` to
    /// form the score, keeping its regression target at unit scale.
    pub sigma_scaled: bool,
}

impl ScoreModel {
    pub fn new(params: Params, config: NetworkConfig, gripper: GripperSpec) -> Self {
        ScoreModel {
            params,
            config,
            gripper,
            sigma_scaled: true,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint, gripper: GripperSpec) -> Self {
        ScoreModel::new(ckpt.params, ckpt.config, gripper)
    }

    /// Score of a single pose at noise level `k`.
    pub fn score(
        &self,
        h: &GraspPose,
        k: usize,
        cloud: &ObjectCloud,
        schedule: &NoiseSchedule,
    ) -> Result<Twist> {
        let scaled = self.gripper.scaled(1.0 / cloud.frame.scale);
        let raw = network::forward(
            h,
            k,
            schedule.levels,
            cloud,
            &scaled,
            &self.params,
            &self.config,
        )?;
        Ok(self.apply_output_scale(raw, schedule.sigma(k)?))
    }

    fn apply_output_scale(&self, raw: Twist, sigma: f64) -> Twist {
        if self.sigma_scaled {
            raw.scale(1.0 / sigma)
        } else {
            raw
        }
    }
}

fn pose_tokens(h: &GraspPose, gripper: &GripperSpec) -> Array2<f64> {
    let pts = gripper_points(h, gripper);
    let mut tokens = Array2::zeros((pts.len(), 3));
    for (i, p) in pts.iter().enumerate() {
        tokens[[i, 0]] = p[0];
        tokens[[i, 1]] = p[1];
        tokens[[i, 2]] = p[2];
    }
    tokens
}

/// Training view of a dataset: normalized clouds, the per-cloud scaled
/// gripper used for tokenization, and (cloud index, pose) samples.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub clouds: Vec<ObjectCloud>,
    pub scaled_grippers: Vec<GripperSpec>,
    pub samples: Vec<(usize, GraspPose)>,
}

impl TrainingSet {
    pub fn from_dataset(dataset: &Dataset, gripper: &GripperSpec) -> Result<Self> {
        let mut clouds = Vec::new();
        let mut scaled = Vec::new();
        let mut samples = Vec::new();
        for (idx, entry) in dataset.objects.iter().enumerate() {
            clouds.push(entry.cloud.clone());
            scaled.push(gripper.scaled(1.0 / entry.cloud.frame.scale));
            if let Some(labels) = dataset.grasps.get(&entry.spec.id) {
                for label in labels {
                    samples.push((idx, label.pose));
                }
            }
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument(
                "dataset contains no grasp labels".into(),
            ));
        }
        Ok(TrainingSet {
            clouds,
            scaled_grippers: scaled,
            samples,
        })
    }
}

/// One denoising-score-matching draw: the perturbed pose plus the score
/// target `−ε/σ_k²` and its level.
#[derive(Clone, Debug)]
pub struct DsmDraw {
    pub cloud_idx: usize,
    pub level: usize,
    pub sigma: f64,
    pub perturbed: GraspPose,
    pub eps: Twist,
}

impl DsmDraw {
    /// Score target `−ε/σ²` in the body-frame tangent.
    pub fn target(&self) -> Twist {
        self.eps.scale(-1.0 / (self.sigma * self.sigma))
    }
}

/// Draw a level and perturbation for each sample, in order.
pub fn dsm_draws<R: Rng + ?Sized>(
    set: &TrainingSet,
    indices: &[usize],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<DsmDraw>> {
    let mut draws = Vec::with_capacity(indices.len());
    for &i in indices {
        let (cloud_idx, pose) = &set.samples[i];
        let level = rng.gen_range(0..schedule.levels);
        let sigma = schedule.sigma(level)?;
        let (perturbed, eps) = perturb(pose, sigma, rng)?;
        draws.push(DsmDraw {
            cloud_idx: *cloud_idx,
            level,
            sigma,
            perturbed,
            eps,
        });
    }
    Ok(draws)
}

/// Assemble the supervised batch for a set of draws. Targets and weights
/// realize `σ_k² · ‖s_θ − (−ε/σ_k²)‖²` under either output
/// parameterization.
pub fn dsm_batch<'a>(
    set: &'a TrainingSet,
    draws: &[DsmDraw],
    schedule: &NoiseSchedule,
    sigma_scaled: bool,
) -> network::LossBatch<'a> {
    let b = draws.len();
    let mut targets = Array2::zeros((b, 6));
    let mut weights = Vec::with_capacity(b);
    let items: Vec<BatchItem> = draws
        .iter()
        .enumerate()
        .map(|(row, draw)| {
            let t = draw.target().to_array();
            if sigma_scaled {
                // u-space: target σ·(−ε/σ²) = −ε/σ, weight 1.
                for c in 0..6 {
                    targets[[row, c]] = t[c] * draw.sigma;
                }
                weights.push(1.0);
            } else {
                for c in 0..6 {
                    targets[[row, c]] = t[c];
                }
                weights.push(draw.sigma * draw.sigma);
            }
            BatchItem {
                cloud_idx: draw.cloud_idx,
                level: draw.level,
                tokens: pose_tokens(&draw.perturbed, &set.scaled_grippers[draw.cloud_idx]),
            }
        })
        .collect();
    network::LossBatch {
        input: network::BatchInput {
            clouds: set.clouds.iter().collect(),
            items,
            level_count: schedule.levels,
        },
        targets,
        weights,
    }
}

/// The DSM objective reduced from explicit scores: the mean over samples of
/// `σ_k² · ‖s − target‖²`.
pub fn dsm_loss_given_scores(scores: &[Twist], draws: &[DsmDraw]) -> f64 {
    assert_eq!(scores.len(), draws.len());
    let mut total = 0.0;
    for (s, draw) in scores.iter().zip(draws) {
        let diff = s.add(&draw.target().scale(-1.0));
        total += draw.sigma * draw.sigma * diff.dot(&diff);
    }
    total / draws.len() as f64
}

/// Batch-mean DSM loss for the current parameters.
pub fn dsm_loss<R: Rng + ?Sized>(
    set: &TrainingSet,
    indices: &[usize],
    params: &Params,
    cfg: &NetworkConfig,
    schedule: &NoiseSchedule,
    sigma_scaled: bool,
    rng: &mut R,
) -> Result<f64> {
    let draws = dsm_draws(set, indices, schedule, rng)?;
    let batch = dsm_batch(set, &draws, schedule, sigma_scaled);
    let (loss, _) = network::forward_with_gradients(&batch, params, cfg)?;
    if !loss.is_finite() {
        return Err(Error::NumericalFailure("non-finite DSM loss".into()));
    }
    Ok(loss)
}

/// Draw the annealing start pose: Haar-uniform rotation, translation
/// `N(0, σ_max² I)` clamped to the ball `‖t‖ ≤ 2`.
pub fn init_sample<R: Rng + ?Sized>(rng: &mut R, schedule: &NoiseSchedule) -> GraspPose {
    let rotation = random_rotation(rng);
    let mut t = [0.0; 3];
    for c in t.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *c = schedule.sigma_max * z;
    }
    let norm = vec3::norm(t);
    if norm > 2.0 {
        t = vec3::scale(t, 2.0 / norm);
    }
    GraspPose::new(rotation, t)
}

/// Demonstration guidance bundle for the sampler.
#[derive(Clone, Copy, Debug)]
pub struct Guidance<'a> {
    pub constraint: &'a DemoConstraint,
    pub config: &'a GuidanceConfig,
}

/// One recorded sampler state, for trajectory dumps.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryPoint {
    pub level: usize,
    pub inner: usize,
    pub pose: GraspPose,
}

struct Chain<'r> {
    rng: &'r mut dyn RngCore,
    pose: GraspPose,
}

/// Shared annealed Langevin core: from the top noise level down, `n_inner`
/// gradient-plus-noise steps per level with `ξ = ε_k·s + √(2ε_k)·z`,
/// followed by one noise-free denoise step at the lowest level.
fn run_chains(
    model: &ScoreModel,
    cloud: &ObjectCloud,
    schedule: &NoiseSchedule,
    guidance: Option<&Guidance>,
    rngs: &mut [&mut dyn RngCore],
    mut trajectory: Option<&mut Vec<Vec<TrajectoryPoint>>>,
) -> Result<Vec<GraspPose>> {
    schedule.validate()?;
    if let Some(g) = guidance {
        g.constraint.validate()?;
        g.config.validate()?;
    }
    let scaled_gripper = model.gripper.scaled(1.0 / cloud.frame.scale);
    let cloud_feat = encode_object(cloud, &model.params, &model.config)?;

    let mut chains: Vec<Chain> = rngs
        .iter_mut()
        .map(|rng| {
            let pose = init_sample(&mut **rng, schedule);
            Chain { rng: &mut **rng, pose }
        })
        .collect();
    if let Some(traj) = trajectory.as_deref_mut() {
        traj.clear();
        traj.resize(chains.len(), Vec::new());
    }

    let score_all = |poses: &[GraspPose], k: usize| -> Result<Vec<Twist>> {
        batched_scores(model, &cloud_feat, &scaled_gripper, poses, k, schedule)
    };

    for k in (0..schedule.levels).rev() {
        let eps_k = schedule.step_size(k)?;
        let noise_scale = (2.0 * eps_k).sqrt();
        for inner in 0..schedule.n_inner {
            let poses: Vec<GraspPose> = chains.iter().map(|c| c.pose).collect();
            let scores = score_all(&poses, k)?;
            for (chain_idx, chain) in chains.iter_mut().enumerate() {
                let mut s = scores[chain_idx];
                if let Some(g) = guidance {
                    let grad = loss_gradient(&chain.pose, g.constraint, g.config);
                    s = s.add(&grad.scale(-g.config.alpha));
                }
                let mut z = [0.0; 6];
                for v in z.iter_mut() {
                    *v = chain.rng.sample(StandardNormal);
                }
                let xi = s.scale(eps_k).add(&Twist::from_array(z).scale(noise_scale));
                chain.pose = retract(&chain.pose, &xi)?;
                if !chain.pose.is_finite() {
                    return Err(Error::SamplerDiverged { level: k });
                }
                if let Some(traj) = trajectory.as_deref_mut() {
                    traj[chain_idx].push(TrajectoryPoint {
                        level: k,
                        inner,
                        pose: chain.pose,
                    });
                }
            }
        }
    }

    // Final denoise step without noise injection.
    let poses: Vec<GraspPose> = chains.iter().map(|c| c.pose).collect();
    let scores = score_all(&poses, 0)?;
    let eps0 = schedule.step_size(0)?;
    for (chain_idx, chain) in chains.iter_mut().enumerate() {
        let mut s = scores[chain_idx];
        if let Some(g) = guidance {
            let grad = loss_gradient(&chain.pose, g.constraint, g.config);
            s = s.add(&grad.scale(-g.config.alpha));
        }
        chain.pose = retract(&chain.pose, &s.scale(eps0))?;
        if !chain.pose.is_finite() {
            return Err(Error::SamplerDiverged { level: 0 });
        }
    }

    Ok(chains.into_iter().map(|c| c.pose).collect())
}

fn batched_scores(
    model: &ScoreModel,
    cloud_feat: &Array1<f64>,
    scaled_gripper: &GripperSpec,
    poses: &[GraspPose],
    k: usize,
    schedule: &NoiseSchedule,
) -> Result<Vec<Twist>> {
    let items: Vec<BatchItem> = poses
        .iter()
        .map(|h| BatchItem {
            cloud_idx: 0,
            level: k,
            tokens: pose_tokens(h, scaled_gripper),
        })
        .collect();
    let out = network::infer_batch(
        &network::InferInput {
            cloud_feats: std::slice::from_ref(cloud_feat),
            items,
            level_count: schedule.levels,
        },
        &model.params,
        &model.config,
    )?;
    let sigma = schedule.sigma(k)?;
    let mut scores = Vec::with_capacity(poses.len());
    for row in out.rows() {
        let raw = Twist::from_array([row[0], row[1], row[2], row[3], row[4], row[5]]);
        if !raw.is_finite() {
            return Err(Error::SamplerDiverged { level: k });
        }
        scores.push(model.apply_output_scale(raw, sigma));
    }
    Ok(scores)
}

/// Draw one grasp with annealed Langevin sampling from the task-agnostic
/// model.
pub fn sample_unguided<R: RngCore>(
    cloud: &ObjectCloud,
    model: &ScoreModel,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<GraspPose> {
    let mut rngs: Vec<&mut dyn RngCore> = vec![rng];
    Ok(run_chains(model, cloud, schedule, None, &mut rngs, None)?.remove(0))
}

/// Draw one grasp with the constraint gradient folded into the score:
/// `ξ = ε_k·[s_θ − α∇L] + √(2ε_k)·z`. With `α = 0` the trajectory is
/// bitwise identical to the unguided sampler under the same seed.
pub fn sample_guided<R: RngCore>(
    cloud: &ObjectCloud,
    model: &ScoreModel,
    schedule: &NoiseSchedule,
    constraint: &DemoConstraint,
    gcfg: &GuidanceConfig,
    rng: &mut R,
) -> Result<GraspPose> {
    let guidance = Guidance {
        constraint,
        config: gcfg,
    };
    let mut rngs: Vec<&mut dyn RngCore> = vec![rng];
    Ok(run_chains(model, cloud, schedule, Some(&guidance), &mut rngs, None)?.remove(0))
}

/// Single-chain sampler that also records the trajectory at every step.
pub fn sample_with_trajectory<R: RngCore>(
    cloud: &ObjectCloud,
    model: &ScoreModel,
    schedule: &NoiseSchedule,
    guidance: Option<&Guidance>,
    rng: &mut R,
) -> Result<(GraspPose, Vec<TrajectoryPoint>)> {
    let mut traj = Vec::new();
    let mut rngs: Vec<&mut dyn RngCore> = vec![rng];
    let pose = run_chains(model, cloud, schedule, guidance, &mut rngs, Some(&mut traj))?.remove(0);
    Ok((pose, traj.remove(0)))
}

/// Run `n` independent chains in lockstep; chain `i` uses the stream seeded
/// with `base_seed ^ i`.
pub fn sample_many(
    cloud: &ObjectCloud,
    model: &ScoreModel,
    schedule: &NoiseSchedule,
    guidance: Option<&Guidance>,
    n: usize,
    base_seed: u64,
) -> Result<Vec<GraspPose>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut streams: Vec<ChaCha8Rng> = (0..n)
        .map(|i| ChaCha8Rng::seed_from_u64(base_seed ^ i as u64))
        .collect();
    let mut rngs: Vec<&mut dyn RngCore> = streams
        .iter_mut()
        .map(|r| r as &mut dyn RngCore)
        .collect();
    run_chains(model, cloud, schedule, guidance, &mut rngs, None)
}

#[cfg(test)]
mod tests;
