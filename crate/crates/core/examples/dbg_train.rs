use hgdiffuser::diffusion::*;
use hgdiffuser::gripper::GripperSpec;
use hgdiffuser::network::*;
use hgdiffuser::scenes::*;
use rand::SeedableRng;
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
    let cfg = NetworkConfig::desk();
    let schedule = NoiseSchedule::default();
    let mut eval_rng = ChaCha8Rng::seed_from_u64(999);
    let eval_idx: Vec<usize> = (0..2000).map(|i| i % set.samples.len()).collect();
    let eval_draws = dsm_draws(&set, &eval_idx, &schedule, &mut eval_rng).unwrap();
    let eval_batch = dsm_batch(&set, &eval_draws, &schedule, true);
    let eval_loss = |params: &Params| -> f64 {
        forward_with_gradients(&eval_batch, params, &cfg).unwrap().0
    };
    let tc = TrainConfig { epochs: 200, batch_size: 32, learning_rate: 1e-3, weight_decay: 1e-4, seed: 0, checkpoint_every: 0 };
    let mut resume: Option<(Params, TrainState)> = None;
    println!("init eval: {:.4}", eval_loss(&init_params(&cfg, 0).unwrap()));
    for chunk in 0..8 {
        let out = train(&set, &cfg, &schedule, &tc, true, resume.take(), None, |_, _| {}).unwrap();
        let el = eval_loss(&out.params);
        println!("after {:4} epochs: eval {:.4}", (chunk + 1) * 200, el);
        resume = Some((out.params, out.state));
        if el < 3.0 { break; }
    }
    // quick force-closure check on the final model
    let (params, _) = resume.unwrap();
    let model = ScoreModel::new(params, cfg.clone(), gripper.clone());
    let samples = sample_many(&cloud, &model, &schedule, None, 50, 99).unwrap();
    let fc = samples.iter().filter(|h| hgdiffuser::eval::force_closure(&cloud.frame.denormalize_pose(h), &surface, &gripper, 0.5).ok).count();
    println!("unguided force closure {fc}/50");
}
