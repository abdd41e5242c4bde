//! Sample with an analytic score field that projects onto the true cylinder
//! grasp manifold. Separates sampler correctness from model quality.
use hgdiffuser::diffusion::NoiseSchedule;
use hgdiffuser::eval::force_closure;
use hgdiffuser::gripper::GripperSpec;
use hgdiffuser::lie::vec3;
use hgdiffuser::lie::{retract, so3_log, GraspPose, Rotation, Twist};
use hgdiffuser::scenes::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = vec3::norm(a).max(1e-12);
    vec3::scale(a, 1.0 / n)
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = ObjectSpec::new_cylinder("cyl0", 0.025, 0.12);
    let (cloud, surface) = make_object(&spec, 512, &mut rng).unwrap();
    let gripper = GripperSpec::desk_default();
    let gs = gripper.scaled(1.0 / cloud.frame.scale);
    let reach = gs.base_offset + gs.finger_depth;
    let half_h = 0.06 / cloud.frame.scale; // cylinder half height, normalized
    let center_n = cloud.frame.normalize_point([0.0, 0.0, 0.0]); // raw origin in normalized frame

    // Projection of a pose onto the grasp manifold (radial pinch family).
    let project = |h: &GraspPose| -> GraspPose {
        let u = h.rotation.apply([1.0, 0.0, 0.0]);
        let a = h.rotation.apply([0.0, 0.0, 1.0]);
        let tcp = vec3::add(h.translation, vec3::scale(a, reach));
        // Closing axis: nearest horizontal direction.
        let mut u_star = [u[0], u[1], 0.0];
        if vec3::norm(u_star) < 1e-6 { u_star = [1.0, 0.0, 0.0]; }
        let u_star = normalize(u_star);
        // Approach: orthogonalized against the closing axis.
        let mut a_star = vec3::sub(a, vec3::scale(u_star, vec3::dot(a, u_star)));
        if vec3::norm(a_star) < 1e-6 { a_star = [0.0, 0.0, -1.0]; }
        let a_star = normalize(a_star);
        // TCP onto the cylinder axis segment (in normalized frame the axis
        // passes through center_n along z).
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

    let schedule = NoiseSchedule::default();
    // Pure oracle annealed Langevin.
    let mut pass = 0;
    let n = 100;
    for i in 0..n {
        let mut r = ChaCha8Rng::seed_from_u64(99 ^ i as u64);
        let mut h = hgdiffuser::diffusion::init_sample(&mut r, &schedule);
        for k in (0..schedule.levels).rev() {
            let eps = schedule.step_size(k).unwrap();
            let sigma = schedule.sigma(k).unwrap();
            let noise = (2.0 * eps).sqrt();
            for _ in 0..schedule.n_inner {
                let s = oracle_score(&h, sigma);
                let mut z = [0.0; 6];
                for v in z.iter_mut() { *v = r.sample(StandardNormal); }
                let xi = s.scale(eps).add(&Twist::from_array(z).scale(noise));
                h = retract(&h, &xi).unwrap();
            }
        }
        let s = oracle_score(&h, schedule.sigma(0).unwrap());
        h = retract(&h, &s.scale(schedule.step_size(0).unwrap())).unwrap();
        let v = force_closure(&cloud.frame.denormalize_pose(&h), &surface, &gripper, 0.5);
        pass += usize::from(v.ok);
    }
    println!("oracle-field sampling: fc {pass}/{n}");
}
