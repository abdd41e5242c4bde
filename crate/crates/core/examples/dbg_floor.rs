//! Raise the noise floor and add LR decay; measure field quality and fc.
use hgdiffuser::diffusion::*;
use hgdiffuser::eval::force_closure;
use hgdiffuser::gripper::GripperSpec;
use hgdiffuser::lie::perturb;
use hgdiffuser::network::*;
use hgdiffuser::scenes::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let decay = args.get(1).map(|s| s == "decay").unwrap_or(false);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3000);

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
    let schedule = NoiseSchedule { sigma_min: 0.05, levels: 24, ..NoiseSchedule::default() };

    // Manual loop so we can decay the learning rate.
    let mut params = init_params(&cfg, 0).unwrap();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut t_step = 0u64;
    let t0 = Instant::now();
    let n = set.samples.len();
    for epoch in 0..epochs {
        let mut er = ChaCha8Rng::seed_from_u64((epoch as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut er);
        let progress = epoch as f64 / epochs as f64;
        let lr = if decay {
            1e-4 + 0.5 * (1e-3 - 1e-4) * (1.0 + (std::f64::consts::PI * progress).cos())
        } else { 1e-3 };
        for chunk in order.chunks(32) {
            let draws = dsm_draws(&set, chunk, &schedule, &mut er).unwrap();
            let batch = dsm_batch(&set, &draws, &schedule, true);
            let (_, grads) = forward_with_gradients(&batch, &params, &cfg).unwrap();
            t_step += 1;
            let bc1 = 1.0 - 0.9f64.powi(t_step as i32);
            let bc2 = 1.0 - 0.999f64.powi(t_step as i32);
            for i in 0..params.len() {
                let g = grads[i] + 1e-4 * params.data[i];
                m[i] = 0.9 * m[i] + 0.1 * g;
                v[i] = 0.999 * v[i] + 0.001 * g * g;
                params.data[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + 1e-8);
            }
        }
    }
    println!("trained {epochs} epochs decay={decay} in {:?}", t0.elapsed());
    let model = ScoreModel::new(params, cfg, gripper.clone());

    for k in [0usize, 6, 12, 18, 23] {
        let sigma = schedule.sigma(k).unwrap();
        let mut cos_sum = 0.0; let nn = 100;
        let mut r2 = ChaCha8Rng::seed_from_u64(1000 + k as u64);
        for _ in 0..nn {
            let (_, pose) = &set.samples[r2.gen_range(0..set.samples.len())];
            let (pert, eps) = perturb(pose, sigma, &mut r2).unwrap();
            let ideal = eps.scale(-1.0 / (sigma * sigma));
            let got = model.score(&pert, k, &cloud, &schedule).unwrap();
            cos_sum += got.dot(&ideal) / (got.norm() * ideal.norm()).max(1e-12);
        }
        println!("k={k:2} sigma={sigma:.3}: mean cos {:.3}", cos_sum / nn as f64);
    }
    for eps0 in [0.08, 0.16] {
        let s2 = NoiseSchedule { eps0, ..schedule };
        let samples = sample_many(&cloud, &model, &s2, None, 60, 99).unwrap();
        let fc = samples.iter().filter(|h| force_closure(&cloud.frame.denormalize_pose(h), &surface, &gripper, 0.5).ok).count();
        println!("eps0={eps0}: fc {fc}/60");
    }
}
