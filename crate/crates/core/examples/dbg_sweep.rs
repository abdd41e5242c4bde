use hgdiffuser::diffusion::*;
use hgdiffuser::eval::force_closure;
use hgdiffuser::gripper::GripperSpec;
use hgdiffuser::network::*;
use hgdiffuser::scenes::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

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

    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("E1");
    let (d, sigma_max, epochs) = match which {
        "E1" => (64usize, 1.0, 3000usize),
        "E2" => (96, 1.0, 1500),
        "E3" => (64, 2.0, 1500),
        "E4" => (96, 2.0, 1500),
        _ => panic!(),
    };
    let cfg = NetworkConfig {
        d,
        pointnet_widths: vec![64, 128, d],
        depth: 2,
        ..NetworkConfig::default()
    };
    let schedule = NoiseSchedule {
        sigma_max,
        eps0: 0.08 * sigma_max * sigma_max,
        ..NoiseSchedule::default()
    };
    // Per-level eval sets.
    let probe_levels = [0usize, 3, 7, 11, 15, 19, 23, 29];
    let mut eval_batches = Vec::new();
    for &lvl in &probe_levels {
        let mut er = ChaCha8Rng::seed_from_u64(10_000 + lvl as u64);
        let idx: Vec<usize> = (0..400).map(|i| i % set.samples.len()).collect();
        let mut draws = dsm_draws(&set, &idx, &schedule, &mut er).unwrap();
        for d in draws.iter_mut() {
            // Re-perturb at the fixed level for a clean per-level view.
            d.level = lvl;
            d.sigma = schedule.sigma(lvl).unwrap();
            let (p, e) = hgdiffuser::lie::perturb(&set.samples[0].1, d.sigma, &mut er).unwrap();
            d.perturbed = p;
            d.eps = e;
        }
        eval_batches.push(dsm_batch(&set, &draws, &schedule, true));
    }
    let t0 = Instant::now();
    let tc = TrainConfig { epochs, batch_size: 32, learning_rate: 1e-3, weight_decay: 1e-4, seed: 0, checkpoint_every: 0 };
    let out = train(&set, &cfg, &schedule, &tc, true, None, None, |_, _| {}).unwrap();
    print!("{which}: d={d} smax={sigma_max} ep={epochs} ({:?})  per-level:", t0.elapsed());
    for (i, &lvl) in probe_levels.iter().enumerate() {
        let (l, _) = forward_with_gradients(&eval_batches[i], &out.params, &cfg).unwrap();
        print!(" L{lvl}={l:.2}");
    }
    println!();
    let model = ScoreModel::new(out.params, cfg, gripper.clone());
    let samples = sample_many(&cloud, &model, &schedule, None, 100, 99).unwrap();
    let fc = samples.iter().filter(|h| force_closure(&cloud.frame.denormalize_pose(h), &surface, &gripper, 0.5).ok).count();
    println!("{which}: unguided force closure {fc}/100");
}
