//! Explicit task constraints extracted from a demonstration, and the
//! guidance loss steering the sampler: a region term on the grasp
//! translation and an orientation term on the grasp rotation, each hinged at
//! a threshold, combined as `beta * region + direct`.
//!
//! The gradient is closed form in the body-frame tangent convention used by
//! [`crate::lie::retract`], so a Langevin step can subtract it directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gripper::{rot, trans, GripperSpec};
use crate::lie::vec3::{self, Vec3};
use crate::lie::{geodesic_distance, so3_log, GraspPose, Rotation, Twist};
use crate::scenes::{hand_wrist_offset, DemoRecord, ObjectCloud};

/// Extraction thresholds in raw units (meters / radians). Dimensional values
/// are rescaled by the cloud's normalization factor during extraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Region tolerance around the contact center, meters.
    pub tau_region: f64,
    /// Angular tolerance around the wrist orientation, radians.
    pub tau_direct: f64,
    /// Hand-object contact distance, meters.
    pub delta_contact: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tau_region: 0.03,
            tau_direct: 0.5,
            delta_contact: 0.01,
        }
    }
}

/// Demonstration-derived constraint in the normalized object frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoConstraint {
    /// Contact-region center, normalized frame.
    pub p_region: Vec3,
    /// Target wrist orientation.
    #[serde(with = "rot_as_obj")]
    pub d_direct: Rotation,
    /// Region tolerance in normalized units.
    pub tau_region: f64,
    /// Angular tolerance, radians.
    pub tau_direct: f64,
}

impl DemoConstraint {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_region > 0.0) {
            return Err(Error::InvalidArgument("tau_region must be positive".into()));
        }
        if !(self.tau_direct > 0.0 && self.tau_direct < std::f64::consts::PI) {
            return Err(Error::InvalidArgument(
                "tau_direct must lie in (0, pi)".into(),
            ));
        }
        Ok(())
    }
}

/// Serialize a rotation as `{"q": [w, x, y, z]}`.
mod rot_as_obj {
    use super::Rotation;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap {
        q: Rotation,
    }

    pub fn serialize<S: Serializer>(r: &Rotation, s: S) -> Result<S::Ok, S::Error> {
        Wrap { q: *r }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rotation, D::Error> {
        Wrap::deserialize(d).map(|w| w.q)
    }
}

/// Guidance scale `alpha` and region-loss weight `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            alpha: 1.0,
            beta: 10.0,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite())
        {
            return Err(Error::InvalidArgument(
                "guidance alpha and beta must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Extract the task constraint from a demonstration.
///
/// Contact points are the object points within `delta_contact` of any hand
/// point. Their centroid marks the demonstrated contact region at the jaw
/// closing center; the region target is that centroid pulled back along the
/// demonstrated approach axis by the gripper's wrist-to-closing-center
/// reach, so it constrains the pose translation directly. The wrist
/// orientation is the recorded wrist frame with the fixed hand-to-gripper
/// offset removed. Dimensional thresholds are rescaled into the cloud's
/// normalized frame.
pub fn extract_constraints(
    demo: &DemoRecord,
    object: &ObjectCloud,
    gripper: &GripperSpec,
    thresholds: &Thresholds,
) -> Result<DemoConstraint> {
    let scale = object.frame.scale;
    let delta_n = thresholds.delta_contact / scale;
    let delta_sq = delta_n * delta_n;

    let mut centroid = [0.0; 3];
    let mut count = 0usize;
    for p in &object.points {
        let touching = demo
            .hand_points
            .iter()
            .any(|h| vec3::norm_sq(vec3::sub(*p, *h)) <= delta_sq);
        if touching {
            centroid = vec3::add(centroid, *p);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoContact {
            delta: thresholds.delta_contact,
        });
    }
    centroid = vec3::scale(centroid, 1.0 / count as f64);

    let d_direct = demo.wrist_frame.compose(&hand_wrist_offset().inverse());
    let reach = (gripper.base_offset + gripper.finger_depth) / scale;
    let approach = d_direct.apply(gripper.approach_axis());
    let p_region = vec3::sub(centroid, vec3::scale(approach, reach));

    let constraint = DemoConstraint {
        p_region,
        d_direct,
        tau_region: thresholds.tau_region / scale,
        tau_direct: thresholds.tau_direct,
    };
    constraint.validate()?;
    Ok(constraint)
}

/// Hinged Euclidean distance of the grasp translation to the region center:
/// `max(0, ‖Trans(H) − P‖ − τ)`.
pub fn loss_region(h: &GraspPose, c: &DemoConstraint) -> f64 {
    (vec3::norm(vec3::sub(trans(h), c.p_region)) - c.tau_region).max(0.0)
}

/// Hinged geodesic distance of the grasp rotation to the wrist orientation.
pub fn loss_direct(h: &GraspPose, c: &DemoConstraint) -> f64 {
    (geodesic_distance(&rot(h), &c.d_direct) - c.tau_direct).max(0.0)
}

/// Weighted sum `beta * L_region + L_direct`.
pub fn loss_total(h: &GraspPose, c: &DemoConstraint, g: &GuidanceConfig) -> f64 {
    g.beta * loss_region(h, c) + loss_direct(h, c)
}

/// Closed-form gradient of [`loss_total`] in the body-frame tangent.
///
/// Outside the region ball the translational part is `beta` times the unit
/// vector from the region center, pulled into the body frame. Outside the
/// angular threshold the rotational part is the negated unit log of the
/// relative rotation, pointing away from the target. Inside the thresholds,
/// on the hinge boundaries, and at relative angle 0 or π the respective part
/// is zero.
pub fn loss_gradient(h: &GraspPose, c: &DemoConstraint, g: &GuidanceConfig) -> Twist {
    let mut grad = Twist::zero();

    let diff = vec3::sub(trans(h), c.p_region);
    let dist = vec3::norm(diff);
    if dist > c.tau_region && dist > 1e-12 {
        let u = vec3::scale(diff, 1.0 / dist);
        grad.v = h.rotation.inverse().apply(vec3::scale(u, g.beta));
    }

    let r = so3_log(&rot(h).inverse().compose(&c.d_direct));
    let theta = vec3::norm(r);
    if theta > c.tau_direct && theta < std::f64::consts::PI - 1e-9 {
        grad.omega = vec3::scale(r, -1.0 / theta);
    }

    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{random_rotation, retract, so3_exp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn constraint(p: [f64; 3], d: Rotation, tau_r: f64, tau_d: f64) -> DemoConstraint {
        DemoConstraint {
            p_region: p,
            d_direct: d,
            tau_region: tau_r,
            tau_direct: tau_d,
        }
    }

    fn random_pose<R: Rng>(r: &mut R) -> GraspPose {
        GraspPose::new(random_rotation(r), [
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
        ])
    }

    #[test]
    fn region_loss_values() {
        let c = constraint([0.0; 3], Rotation::identity(), 0.2, 0.5);
        let at_center = GraspPose::new(Rotation::identity(), [0.0; 3]);
        assert_eq!(loss_region(&at_center, &c), 0.0);

        let beyond = GraspPose::new(Rotation::identity(), [0.25, 0.0, 0.0]);
        assert!((loss_region(&beyond, &c) - 0.05).abs() < 1e-12);

        let on_boundary = GraspPose::new(Rotation::identity(), [0.2, 0.0, 0.0]);
        assert_eq!(loss_region(&on_boundary, &c), 0.0);
    }

    #[test]
    fn direct_loss_values() {
        let c = constraint([0.0; 3], Rotation::identity(), 0.2, 0.3);
        let aligned = GraspPose::identity();
        assert_eq!(loss_direct(&aligned, &c), 0.0);

        let off = GraspPose::new(so3_exp([0.0, 0.4, 0.0]).unwrap(), [0.0; 3]);
        assert!((loss_direct(&off, &c) - 0.1).abs() < 1e-12);

        let antipodal = GraspPose::new(so3_exp([PI, 0.0, 0.0]).unwrap(), [0.0; 3]);
        assert!((loss_direct(&antipodal, &c) - (PI - 0.3)).abs() < 1e-9);
    }

    #[test]
    fn total_loss_combines_terms() {
        let c = constraint([0.0; 3], Rotation::identity(), 0.1, 0.3);
        let inside = GraspPose::new(so3_exp([0.0, 0.0, 0.2]).unwrap(), [0.05, 0.0, 0.0]);
        assert_eq!(
            loss_total(&inside, &c, &GuidanceConfig { alpha: 1.0, beta: 7.0 }),
            0.0
        );

        let h = GraspPose::new(so3_exp([0.5, 0.0, 0.0]).unwrap(), [0.2, 0.0, 0.0]);
        let beta0 = GuidanceConfig { alpha: 1.0, beta: 0.0 };
        assert_eq!(loss_total(&h, &c, &beta0), loss_direct(&h, &c));

        // Region excess 0.1 m with beta 2, direct excess 0.2 rad -> 0.4.
        let h2 = GraspPose::new(so3_exp([0.5, 0.0, 0.0]).unwrap(), [0.2, 0.0, 0.0]);
        let g2 = GuidanceConfig { alpha: 1.0, beta: 2.0 };
        assert!((loss_total(&h2, &c, &g2) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_when_satisfied() {
        let c = constraint([0.0; 3], Rotation::identity(), 0.3, 0.5);
        let h = GraspPose::new(so3_exp([0.0, 0.2, 0.0]).unwrap(), [0.1, 0.1, 0.0]);
        assert_eq!(loss_gradient(&h, &c, &GuidanceConfig::default()), Twist::zero());
    }

    #[test]
    fn gradient_part_norms_are_beta_and_one() {
        let mut r = rng(101);
        let g = GuidanceConfig { alpha: 1.0, beta: 10.0 };
        for _ in 0..500 {
            let h = random_pose(&mut r);
            let c = constraint(
                [r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5)],
                random_rotation(&mut r),
                0.05,
                0.3,
            );
            let grad = loss_gradient(&h, &c, &g);
            let vn = vec3::norm(grad.v);
            let wn = vec3::norm(grad.omega);
            assert!(vn < 1e-9 || (vn - g.beta).abs() < 1e-9, "vn = {vn}");
            assert!(wn < 1e-9 || (wn - 1.0).abs() < 1e-9, "wn = {wn}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(7);
        let g = GuidanceConfig { alpha: 1.0, beta: 3.0 };
        let h_step = 1e-6;
        let mut checked = 0;
        while checked < 20 {
            let h = random_pose(&mut r);
            let c = constraint(
                [r.gen_range(-0.6..0.6), r.gen_range(-0.6..0.6), r.gen_range(-0.6..0.6)],
                random_rotation(&mut r),
                0.08,
                0.4,
            );
            // Stay away from the hinge boundaries and the log branch points.
            let dist = vec3::norm(vec3::sub(h.translation, c.p_region));
            let theta = geodesic_distance(&h.rotation, &c.d_direct);
            if (dist - c.tau_region).abs() < 0.05
                || (theta - c.tau_direct).abs() < 0.05
                || theta > PI - 0.1
                || theta < 0.05
            {
                continue;
            }
            let grad = loss_gradient(&h, &c, &g);
            let xi = Twist::new(
                [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)],
                [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)],
            );
            let fp = loss_total(&retract(&h, &xi.scale(h_step)).unwrap(), &c, &g);
            let fm = loss_total(&retract(&h, &xi.scale(-h_step)).unwrap(), &c, &g);
            let fd = (fp - fm) / (2.0 * h_step);
            let an = grad.dot(&xi);
            assert!(
                (fd - an).abs() <= 1e-4 * fd.abs().max(1.0),
                "fd {fd} vs analytic {an}"
            );
            checked += 1;
        }
    }

    #[test]
    fn gradient_step_descends() {
        let mut r = rng(13);
        let g = GuidanceConfig { alpha: 1.0, beta: 5.0 };
        let mut tested = 0;
        for _ in 0..10_000 {
            if tested >= 1000 {
                break;
            }
            let h = random_pose(&mut r);
            let c = constraint(
                [r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5)],
                random_rotation(&mut r),
                0.05,
                0.3,
            );
            let before = loss_total(&h, &c, &g);
            if before <= 0.02 {
                continue;
            }
            let grad = loss_gradient(&h, &c, &g);
            let after = loss_total(&retract(&h, &grad.scale(-0.01)).unwrap(), &c, &g);
            assert!(after < before, "loss rose from {before} to {after}");
            tested += 1;
        }
        assert!(tested >= 1000);
    }

    #[test]
    fn losses_are_invariant_under_rigid_scene_transforms() {
        let mut r = rng(17);
        let g = GuidanceConfig::default();
        for _ in 0..200 {
            let h = random_pose(&mut r);
            let c = constraint(
                [r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5)],
                random_rotation(&mut r),
                0.1,
                0.4,
            );
            let q = random_pose(&mut r);
            let h2 = crate::lie::se3_compose(&q, &h);
            let c2 = constraint(
                crate::lie::se3_apply(&q, c.p_region),
                q.rotation.compose(&c.d_direct),
                c.tau_region,
                c.tau_direct,
            );
            let a = loss_total(&h, &c, &g);
            let b = loss_total(&h2, &c2, &g);
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn constraint_json_schema() {
        let c = constraint([0.1, 0.2, 0.3], Rotation::identity(), 0.25, 0.5);
        let js = serde_json::to_string(&c).unwrap();
        assert!(js.contains("\"p_region\":[0.1,0.2,0.3]"), "{js}");
        assert!(js.contains("\"d_direct\":{\"q\":[1.0,0.0,0.0,0.0]}"), "{js}");
        let back: DemoConstraint = serde_json::from_str(&js).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn extraction_ignores_duplicate_hand_points() {
        let spec = crate::scenes::ObjectSpec::new_cylinder("c", 0.03, 0.1);
        let (cloud, surface) = crate::scenes::make_object(&spec, 512, &mut rng(19)).unwrap();
        let gripper = crate::gripper::GripperSpec::desk_default();
        let (demo, _) = crate::scenes::synthesize_demo(
            &spec,
            &cloud,
            &surface,
            &gripper,
            &spec.task_region,
            &Thresholds::default(),
            0.5,
            &mut rng(20),
        )
        .unwrap();
        let base = extract_constraints(&demo, &cloud, &gripper, &Thresholds::default()).unwrap();

        let mut doubled = demo.clone();
        let pts = doubled.hand_points.clone();
        doubled.hand_points.extend(pts);
        let dup = extract_constraints(&doubled, &cloud, &gripper, &Thresholds::default()).unwrap();
        assert_eq!(base.p_region, dup.p_region);
    }

    #[test]
    fn extraction_without_contact_fails() {
        let spec = crate::scenes::ObjectSpec::new_cylinder("c", 0.03, 0.1);
        let (cloud, _) = crate::scenes::make_object(&spec, 512, &mut rng(23)).unwrap();
        let demo = DemoRecord {
            object_id: "c".into(),
            hand_points: vec![[5.0, 5.0, 5.0]; 64],
            wrist_frame: Rotation::identity(),
            task_name: "top".into(),
        };
        let gripper = crate::gripper::GripperSpec::desk_default();
        let err = extract_constraints(&demo, &cloud, &gripper, &Thresholds::default()).unwrap_err();
        assert!(matches!(err, Error::NoContact { .. }));
    }
}
