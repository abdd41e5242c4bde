//! Diagnose sampled-grasp failure modes against the training distribution.
use hgdiffuser::diffusion::*;
use hgdiffuser::eval::force_closure;
use hgdiffuser::gripper::GripperSpec;
use hgdiffuser::lie::vec3;
use hgdiffuser::network::NetworkConfig;
use hgdiffuser::scenes::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

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
    let tc = TrainConfig { epochs: 1200, batch_size: 32, learning_rate: 1e-3, weight_decay: 1e-4, seed: 0, checkpoint_every: 0 };
    let out = train(&set, &cfg, &schedule, &tc, true, None, None, |_, _| {}).unwrap();
    let model = ScoreModel::new(out.params, cfg, gripper.clone());

    // Training pose stats for reference.
    let stat = |poses: &[hgdiffuser::lie::GraspPose], name: &str| {
        let mut wrist_r = Vec::new(); let mut tilt = Vec::new(); let mut tcp_axis_d = Vec::new();
        let gs = gripper.scaled(1.0 / cloud.frame.scale);
        for h in poses {
            wrist_r.push(vec3::norm(h.translation));
            let u = h.rotation.apply([1.0, 0.0, 0.0]);
            tilt.push(u[2].abs());
            let tcp = hgdiffuser::lie::se3_apply(h, gs.closing_center());
            tcp_axis_d.push((tcp[0] * tcp[0] + tcp[1] * tcp[1]).sqrt());
        }
        let med = |v: &mut Vec<f64>| { v.sort_by(|a, b| a.total_cmp(b)); (v[v.len()/10], v[v.len()/2], v[v.len()*9/10]) };
        println!("{name}: wrist_r p10/50/90 {:?}", med(&mut wrist_r));
        println!("{name}: |closing.z| p10/50/90 {:?}", med(&mut tilt));
        println!("{name}: tcp radial dist p10/50/90 {:?}", med(&mut tcp_axis_d));
    };
    let train_poses: Vec<_> = labels.iter().map(|l| l.pose).collect();
    stat(&train_poses, "train");

    let samples = sample_many(&cloud, &model, &schedule, None, 100, 99).unwrap();
    stat(&samples, "sampled");
    let mut reasons = BTreeMap::new();
    let mut pass = 0;
    for h in &samples {
        let v = force_closure(&cloud.frame.denormalize_pose(h), &surface, &gripper, 0.5);
        if v.ok { pass += 1; } else { *reasons.entry(format!("{:?}", v.reason.unwrap())).or_insert(0) += 1; }
    }
    println!("force closure {pass}/100, reasons {reasons:?}");
}
