//! Compare the learned field against the analytic oracle and test
//! score-gain calibration at sampling time.
use hgdiffuser::diffusion::*;
use hgdiffuser::eval::force_closure;
use hgdiffuser::gripper::GripperSpec;
use hgdiffuser::lie::vec3;
use hgdiffuser::lie::{perturb, retract, so3_log, GraspPose, Rotation, Twist};
use hgdiffuser::network::*;
use hgdiffuser::scenes::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normalize3(a: [f64; 3]) -> [f64; 3] { let n = vec3::norm(a).max(1e-12); vec3::scale(a, 1.0 / n) }

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = ObjectSpec::new_cylinder("cyl0", 0.025, 0.12);
    let (cloud, surface) = make_object(&spec, 512, &mut rng).unwrap();
    let gripper = GripperSpec::desk_default();
    let labels = sample_antipodal_grasps(&cloud, &surface, &gripper, 2000, 0.5, &mut rng).unwrap().labels;
    let set = TrainingSet {
        scaled_grippers: vec![gripper.scaled(1.0 / cloud.frame.scale)],
        clouds: vec![cloud.clone()],
        samples: labels.iter().map(|l| (0usize, l.pose)).collect(),
    };
    let cfg = NetworkConfig { d: 64, pointnet_widths: vec![64, 128, 64], depth: 2, ..NetworkConfig::default() };
    let schedule = NoiseSchedule { sigma_min: 0.05, levels: 24, ..NoiseSchedule::default() };

    let mut params = init_params(&cfg, 0).unwrap();
    let mut m = vec![0.0; params.len()]; let mut v = vec![0.0; params.len()]; let mut t_step = 0u64;
    let n = set.samples.len();
    let epochs = 400usize;
    for epoch in 0..epochs {
        let mut er = ChaCha8Rng::seed_from_u64((epoch as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut er);
        let progress = epoch as f64 / epochs as f64;
        let lr = 1e-4 + 0.5 * (1e-3 - 1e-4) * (1.0 + (std::f64::consts::PI * progress).cos());
        for chunk in order.chunks(32) {
            let draws = dsm_draws(&set, chunk, &schedule, &mut er).unwrap();
            let batch = dsm_batch(&set, &draws, &schedule, true);
            let (_, grads) = forward_with_gradients(&batch, &params, &cfg).unwrap();
            t_step += 1;
            let bc1 = 1.0 - 0.9f64.powi(t_step as i32); let bc2 = 1.0 - 0.999f64.powi(t_step as i32);
            for i in 0..params.len() {
                let g = grads[i] + 1e-4 * params.data[i];
                m[i] = 0.9 * m[i] + 0.1 * g; v[i] = 0.999 * v[i] + 0.001 * g * g;
                params.data[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + 1e-8);
            }
        }
    }
    let model = ScoreModel::new(params, cfg, gripper.clone());

    let gs = gripper.scaled(1.0 / cloud.frame.scale);
    let reach = gs.base_offset + gs.finger_depth;
    let half_h = 0.06 / cloud.frame.scale;
    let center_n = cloud.frame.normalize_point([0.0, 0.0, 0.0]);
    let project = |h: &GraspPose| -> GraspPose {
        let u = h.rotation.apply([1.0, 0.0, 0.0]);
        let a = h.rotation.apply([0.0, 0.0, 1.0]);
        let tcp = vec3::add(h.translation, vec3::scale(a, reach));
        let mut u_star = [u[0], u[1], 0.0];
        if vec3::norm(u_star) < 1e-6 { u_star = [1.0, 0.0, 0.0]; }
        let u_star = normalize3(u_star);
        let mut a_star = vec3::sub(a, vec3::scale(u_star, vec3::dot(a, u_star)));
        if vec3::norm(a_star) < 1e-6 { a_star = [0.0, 0.0, -1.0]; }
        let a_star = normalize3(a_star);
        let z = (tcp[2] - center_n[2]).clamp(-0.8 * half_h, 0.8 * half_h);
        let tcp_star = [center_n[0], center_n[1], center_n[2] + z];
        let y_star = vec3::cross(a_star, u_star);
        let rot = Rotation::from_matrix_columns(u_star, y_star, a_star).unwrap();
        GraspPose::new(rot, vec3::sub(tcp_star, rot.apply(gs.closing_center())))
    };
    let oracle_score = |h: &GraspPose, sigma: f64| -> Twist {
        let target = project(h);
        let vd = h.rotation.inverse().apply(vec3::sub(target.translation, h.translation));
        let wd = so3_log(&h.rotation.inverse().compose(&target.rotation));
        Twist::new(vd, wd).scale(1.0 / (sigma * sigma))
    };

    // Field agreement with the oracle at perturbed data poses.
    for k in [0usize, 6, 12, 18, 23] {
        let sigma = schedule.sigma(k).unwrap();
        let (mut cos_o, mut mag_o) = (0.0, 0.0);
        let nn = 100;
        let mut r2 = ChaCha8Rng::seed_from_u64(1000 + k as u64);
        for _ in 0..nn {
            let (_, pose) = &set.samples[r2.gen_range(0..set.samples.len())];
            let (pert, _) = perturb(pose, sigma, &mut r2).unwrap();
            let o = oracle_score(&pert, sigma);
            let got = model.score(&pert, k, &cloud, &schedule).unwrap();
            cos_o += got.dot(&o) / (got.norm() * o.norm()).max(1e-12);
            mag_o += got.norm() / o.norm().max(1e-12);
        }
        println!("k={k:2} sigma={sigma:.3}: cos(net, oracle) {:.3}, |net|/|oracle| {:.3}", cos_o / nn as f64, mag_o / nn as f64);
    }

    // Gain-calibrated sampling with the learned field.
    for gain in [1.0, 1.5, 2.0, 3.0] {
        for n_inner in [3usize, 8] {
            let s2 = NoiseSchedule { n_inner, ..schedule };
            let mut pass = 0; let nn = 60;
            for i in 0..nn {
                let mut r = ChaCha8Rng::seed_from_u64(99 ^ i as u64);
                let mut h = init_sample(&mut r, &s2);
                let mut ok = true;
                'outer: for k in (0..s2.levels).rev() {
                    let eps = s2.step_size(k).unwrap();
                    let noise = (2.0 * eps).sqrt();
                    for _ in 0..s2.n_inner {
                        let s = model.score(&h, k, &cloud, &s2).unwrap().scale(gain);
                        let mut z = [0.0; 6];
                        for zv in z.iter_mut() { *zv = r.sample(StandardNormal); }
                        let xi = s.scale(eps).add(&Twist::from_array(z).scale(noise));
                        h = retract(&h, &xi).unwrap();
                        if !h.is_finite() { ok = false; break 'outer; }
                    }
                }
                if ok {
                    let s = model.score(&h, 0, &cloud, &s2).unwrap().scale(gain);
                    h = retract(&h, &s.scale(s2.step_size(0).unwrap())).unwrap();
                    let v = force_closure(&cloud.frame.denormalize_pose(&h), &surface, &gripper, 0.5);
                    pass += usize::from(v.ok);
                }
            }
            println!("gain={gain} n_inner={n_inner}: fc {pass}/{nn}");
        }
    }
}
