//! Probe the learned score field: direction/magnitude vs known displacement,
//! and sampling quality as a function of the step multiplier.
use hgdiffuser::diffusion::*;
use hgdiffuser::eval::force_closure;
use hgdiffuser::gripper::GripperSpec;
use hgdiffuser::lie::{perturb, Twist};
use hgdiffuser::network::NetworkConfig;
use hgdiffuser::scenes::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = ObjectSpec::new_cylinder("cyl0", 0.025, 0.12);
    let (cloud, surface) = make_object(&spec, 512, &mut rng).unwrap();
    let gripper = GripperSpec::desk_default();
    let labels = sample_antipodal_grasps(&cloud, &surface, &gripper, 200, 0.5, &mut rng).unwrap().labels;
    let set = TrainingSet {
        scaled_grippers: vec![gripper.scaled(1.0 / cloud.frame.scale)],
        clouds: vec![cloud.clone()],
        samples: labels.iter().map(|l| (0usize, l.pose)).collect(),
    };
    let cfg = NetworkConfig { d: 64, pointnet_widths: vec![64, 128, 64], depth: 2, ..NetworkConfig::default() };
    let schedule = NoiseSchedule::default();
    let tc = TrainConfig { epochs: 1500, batch_size: 32, learning_rate: 1e-3, weight_decay: 1e-4, seed: 0, checkpoint_every: 0 };
    let out = train(&set, &cfg, &schedule, &tc, true, None, None, |_, _| {}).unwrap();
    let model = ScoreModel::new(out.params, cfg, gripper.clone());

    // Directional quality: perturb a data pose by known eps at level k; the
    // ideal score is -eps/sigma^2. Measure cosine and magnitude ratio.
    for k in [5usize, 10, 15, 20, 25, 29] {
        let sigma = schedule.sigma(k).unwrap();
        let mut cos_sum = 0.0; let mut mag_ratio = 0.0; let n = 100;
        let mut r2 = ChaCha8Rng::seed_from_u64(1000 + k as u64);
        for _ in 0..n {
            let (idx, pose) = &set.samples[r2.gen_range(0..set.samples.len())];
            let _ = idx;
            let (pert, eps) = perturb(pose, sigma, &mut r2).unwrap();
            let ideal: Twist = eps.scale(-1.0 / (sigma * sigma));
            let got = model.score(&pert, k, &cloud, &schedule).unwrap();
            let cos = got.dot(&ideal) / (got.norm() * ideal.norm()).max(1e-12);
            cos_sum += cos;
            mag_ratio += got.norm() / ideal.norm();
        }
        println!("k={k:2} sigma={sigma:.3}: mean cos {:.3}, mag ratio {:.3}", cos_sum / n as f64, mag_ratio / n as f64);
    }

    // Step-multiplier sweep at sampling time.
    for eps0 in [0.08, 0.2, 0.4, 0.8] {
        let s2 = NoiseSchedule { eps0, ..schedule };
        let samples = sample_many(&cloud, &model, &s2, None, 60, 99).unwrap();
        let fc = samples.iter().filter(|h| force_closure(&cloud.frame.denormalize_pose(h), &surface, &gripper, 0.5).ok).count();
        println!("sampling eps0={eps0}: fc {fc}/60");
    }
    // More inner steps.
    for n_inner in [3usize, 8] {
        let s2 = NoiseSchedule { n_inner, eps0: 0.2, ..schedule };
        let samples = sample_many(&cloud, &model, &s2, None, 60, 99).unwrap();
        let fc = samples.iter().filter(|h| force_closure(&cloud.frame.denormalize_pose(h), &surface, &gripper, 0.5).ok).count();
        println!("sampling eps0=0.2 n_inner={n_inner}: fc {fc}/60");
    }
}
