//! Grasp quality and task-compliance evaluation: an analytic antipodal
//! force-closure oracle on the parametric surfaces, the constraint
//! satisfaction check, the two-stage sample-then-filter baseline, and the
//! benchmark harness comparing it against guided single-stage sampling.

pub mod bench;
pub mod stats;

use serde::{Deserialize, Serialize};

use crate::constraints::{loss_total, DemoConstraint, GuidanceConfig};
use crate::diffusion::{sample_many, NoiseSchedule, ScoreModel};
use crate::error::Result;
use crate::gripper::{rot, trans, GripperSpec};
use crate::lie::vec3::{self, Vec3};
use crate::lie::{geodesic_distance, se3_apply, GraspPose};
use crate::scenes::{Surface, MIN_CLEARANCE};

pub use bench::{
    aggregate_records, run_benchmark, write_records_csv, write_summary_json, BenchConfig,
    BenchMethod, EnvRecord, EvalReport, GraspRecord, MethodAggregate,
};
pub use stats::wilcoxon_signed_rank_greater;

/// Why a grasp failed the force-closure oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    /// The closing line does not pinch the surface on both sides.
    NoContact,
    /// The contact pair is wider than the jaw opening.
    TooWide,
    /// A contact normal falls outside the friction cone of the closing axis.
    FrictionCone,
    /// A gripper control point penetrates (or grazes) the surface.
    Penetration,
}

/// Force-closure verdict with diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcVerdict {
    pub ok: bool,
    pub reason: Option<FailReason>,
    /// Contact width along the closing axis, when both contacts exist.
    pub width: Option<f64>,
    /// Worst clearance of the control points, meters.
    pub clearance: f64,
}

/// Analytic antipodal force closure for a parallel-jaw grasp in the raw
/// object frame.
///
/// Succeeds iff (a) the closing line through the closing center meets the
/// surface on both sides with the pair no wider than the jaw opening,
/// (b) both contact normals lie within the friction cone `atan(mu)` of the
/// closing axis, and (c) no control point penetrates the surface at the
/// pre-close pose (1 mm clearance; the closing center is exempt, it sits
/// between the fingers by definition).
pub fn force_closure(
    h_raw: &GraspPose,
    surface: &Surface,
    gripper: &GripperSpec,
    mu: f64,
) -> FcVerdict {
    let tcp = se3_apply(h_raw, gripper.closing_center());
    let u = h_raw.rotation.apply(gripper.closing_axis());
    let clearance = gripper
        .collision_points()
        .map(|p| surface.signed_distance(se3_apply(h_raw, p)))
        .fold(f64::INFINITY, f64::min);

    let hits = surface.line_hits(tcp, u);
    let plus = hits
        .iter()
        .filter(|h| h.t > 0.0)
        .min_by(|a, b| a.t.total_cmp(&b.t));
    let minus = hits
        .iter()
        .filter(|h| h.t < 0.0)
        .max_by(|a, b| a.t.total_cmp(&b.t));
    let (Some(plus), Some(minus)) = (plus, minus) else {
        return FcVerdict {
            ok: false,
            reason: Some(FailReason::NoContact),
            width: None,
            clearance,
        };
    };

    let width = plus.t - minus.t;
    if width > gripper.max_opening {
        return FcVerdict {
            ok: false,
            reason: Some(FailReason::TooWide),
            width: Some(width),
            clearance,
        };
    }

    let cone_cos = 1.0 / (1.0 + mu * mu).sqrt();
    let antipodal =
        vec3::dot(plus.normal, u) >= cone_cos && vec3::dot(minus.normal, vec3::scale(u, -1.0)) >= cone_cos;
    if !antipodal {
        return FcVerdict {
            ok: false,
            reason: Some(FailReason::FrictionCone),
            width: Some(width),
            clearance,
        };
    }

    if clearance < MIN_CLEARANCE {
        return FcVerdict {
            ok: false,
            reason: Some(FailReason::Penetration),
            width: Some(width),
            clearance,
        };
    }

    FcVerdict {
        ok: true,
        reason: None,
        width: Some(width),
        clearance,
    }
}

/// Task compliance: translation within the region ball and rotation within
/// the angular threshold. Equivalent to `loss_total == 0` for positive
/// weights.
pub fn constraint_satisfied(h: &GraspPose, c: &DemoConstraint) -> bool {
    vec3::norm(vec3::sub(trans(h), c.p_region)) <= c.tau_region
        && geodesic_distance(&rot(h), &c.d_direct) <= c.tau_direct
}

/// The sample-then-filter baseline: draw `n_samples` task-agnostic grasps,
/// keep those satisfying the constraint, and return the survivor with the
/// lowest guidance loss. `None` is a sampling failure.
pub fn two_stage_baseline(
    cloud: &crate::scenes::ObjectCloud,
    model: &ScoreModel,
    schedule: &NoiseSchedule,
    constraint: &DemoConstraint,
    gcfg: &GuidanceConfig,
    n_samples: usize,
    base_seed: u64,
) -> Result<Option<GraspPose>> {
    let samples = sample_many(cloud, model, schedule, None, n_samples, base_seed)?;
    let mut best: Option<(f64, GraspPose)> = None;
    for pose in samples {
        if !constraint_satisfied(&pose, constraint) {
            continue;
        }
        let loss = loss_total(&pose, constraint, gcfg);
        let better = best.as_ref().map_or(true, |(b, _)| loss < *b);
        if better {
            best = Some((loss, pose));
        }
    }
    Ok(best.map(|(_, pose)| pose))
}

/// Convenience for tests: closing line midpoint of a grasp in raw frame.
pub fn closing_center_world(h_raw: &GraspPose, gripper: &GripperSpec) -> Vec3 {
    se3_apply(h_raw, gripper.closing_center())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::Thresholds;
    use crate::lie::{random_rotation, so3_exp, Rotation};
    use crate::network::{init_params, NetworkConfig};
    use crate::scenes::{
        grasp_pose_from_axes, make_object, sample_antipodal_grasps, ObjectSpec,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn oracle_labels_pass_force_closure() {
        let gripper = GripperSpec::desk_default();
        for (seed, spec) in [
            (1u64, ObjectSpec::new_cylinder("c", 0.025, 0.12)),
            (2, ObjectSpec::new_box("b", 0.05, 0.05, 0.1)),
            (3, ObjectSpec::new_lshape("l", 0.03, 0.14, 0.09, 0.035, 0.03)),
        ] {
            let (cloud, surface) = make_object(&spec, 512, &mut rng(seed)).unwrap();
            let out =
                sample_antipodal_grasps(&cloud, &surface, &gripper, 32, 0.5, &mut rng(seed + 100))
                    .unwrap();
            assert!(!out.labels.is_empty());
            for label in &out.labels {
                let h_raw = cloud.frame.denormalize_pose(&label.pose);
                let v = force_closure(&h_raw, &surface, &gripper, 0.5);
                assert!(v.ok, "{:?} failed: {:?}", spec.kind, v.reason);
            }
        }
    }

    #[test]
    fn distant_grasp_reports_no_contact() {
        let spec = ObjectSpec::new_cylinder("c", 0.03, 0.1);
        let surface = spec.surface();
        let gripper = GripperSpec::desk_default();
        let h = GraspPose::new(Rotation::identity(), [1.0, 0.0, 0.0]);
        let v = force_closure(&h, &surface, &gripper, 0.5);
        assert!(!v.ok);
        assert_eq!(v.reason, Some(FailReason::NoContact));
    }

    #[test]
    fn off_cone_pinch_reports_friction_cone() {
        // Closing axis 45 degrees off the face normal; cone atan(0.5) is
        // about 26.6 degrees.
        let surface = Surface::Box {
            half: [0.02, 0.05, 0.02],
        };
        let gripper = GripperSpec::desk_default();
        let c = FRAC_PI_2 / 2.0;
        let u = [c.cos(), c.sin(), 0.0];
        let a = [0.0, 0.0, 1.0];
        let h = grasp_pose_from_axes(u, a, [0.0, 0.0, 0.0], &gripper).unwrap();
        let v = force_closure(&h, &surface, &gripper, 0.5);
        assert!(!v.ok);
        assert_eq!(v.reason, Some(FailReason::FrictionCone));
    }

    #[test]
    fn too_wide_pinch_is_rejected() {
        let surface = Surface::Box {
            half: [0.045, 0.02, 0.02],
        };
        let gripper = GripperSpec::desk_default();
        let h = grasp_pose_from_axes([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0; 3], &gripper).unwrap();
        let v = force_closure(&h, &surface, &gripper, 0.5);
        assert!(!v.ok);
        assert_eq!(v.reason, Some(FailReason::TooWide));
        assert!((v.width.unwrap() - 0.09).abs() < 1e-12);
    }

    #[test]
    fn penetrating_wrist_is_rejected() {
        // A valid radial pinch pushed forward so the wrist-side points sink
        // into a tall object above the grasp line.
        let surface = Surface::Box {
            half: [0.02, 0.02, 0.2],
        };
        let gripper = GripperSpec::desk_default();
        // Approach along -z from above, closing center pushed so deep that
        // the wrist point (on the axis) ends up below the top face.
        let h = grasp_pose_from_axes(
            [1.0, 0.0, 0.0],
            [0.0, 0.0, -1.0],
            [0.0, 0.0, 0.05],
            &gripper,
        )
        .unwrap();
        let v = force_closure(&h, &surface, &gripper, 0.5);
        assert!(!v.ok, "verdict {v:?}");
        assert_eq!(v.reason, Some(FailReason::Penetration));
    }

    #[test]
    fn force_closure_respects_cylinder_symmetry() {
        let spec = ObjectSpec::new_cylinder("c", 0.025, 0.12);
        let (cloud, surface) = make_object(&spec, 512, &mut rng(5)).unwrap();
        let gripper = GripperSpec::desk_default();
        let out = sample_antipodal_grasps(&cloud, &surface, &gripper, 16, 0.5, &mut rng(6)).unwrap();
        let mut r = rng(7);
        for label in &out.labels {
            let h_raw = cloud.frame.denormalize_pose(&label.pose);
            let v0 = force_closure(&h_raw, &surface, &gripper, 0.5);
            let angle: f64 = r.gen_range(0.0..PI * 2.0);
            let q = GraspPose::new(so3_exp([0.0, 0.0, angle]).unwrap(), [0.0; 3]);
            let rotated = crate::lie::se3_compose(&q, &h_raw);
            let v1 = force_closure(&rotated, &surface, &gripper, 0.5);
            assert_eq!(v0.ok, v1.ok);
            assert!((v0.width.unwrap() - v1.width.unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn constraint_satisfaction_matches_zero_loss() {
        let mut r = rng(8);
        let g = GuidanceConfig {
            alpha: 1.0,
            beta: 10.0,
        };
        for _ in 0..2000 {
            let h = GraspPose::new(random_rotation(&mut r), [
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
            ]);
            let c = DemoConstraint {
                p_region: [
                    r.gen_range(-0.5..0.5),
                    r.gen_range(-0.5..0.5),
                    r.gen_range(-0.5..0.5),
                ],
                d_direct: random_rotation(&mut r),
                tau_region: 0.3,
                tau_direct: 0.5,
            };
            let sat = constraint_satisfied(&h, &c);
            let zero = loss_total(&h, &c, &g) == 0.0;
            assert_eq!(sat, zero);
        }
    }

    #[test]
    fn constraint_edge_cases() {
        let c = DemoConstraint {
            p_region: [0.0; 3],
            d_direct: Rotation::identity(),
            tau_region: 0.2,
            tau_direct: 0.4,
        };
        // Built from the constraint itself: satisfied.
        let h = GraspPose::new(c.d_direct, c.p_region);
        assert!(constraint_satisfied(&h, &c));
        // Region fine, angle just beyond the threshold: rejected.
        let h2 = GraspPose::new(so3_exp([0.41, 0.0, 0.0]).unwrap(), [0.0; 3]);
        assert!(!constraint_satisfied(&h2, &c));
    }

    fn untrained_model() -> ScoreModel {
        let cfg = NetworkConfig {
            d: 16,
            g: 6,
            depth: 1,
            heads: 2,
            mlp_ratio: 2,
            pointnet_widths: vec![16, 16],
            ..NetworkConfig::default()
        };
        let params = init_params(&cfg, 3).unwrap();
        ScoreModel::new(params, cfg, GripperSpec::desk_default())
    }

    #[test]
    fn two_stage_baseline_contract() {
        let spec = ObjectSpec::new_cylinder("c", 0.025, 0.12);
        let (cloud, _) = make_object(&spec, 256, &mut rng(9)).unwrap();
        let model = untrained_model();
        let schedule = NoiseSchedule::default();
        let gcfg = GuidanceConfig::default();
        // A slack constraint so an untrained sampler can hit it.
        let constraint = DemoConstraint {
            p_region: [0.0; 3],
            d_direct: Rotation::identity(),
            tau_region: 1.5,
            tau_direct: 3.0,
        };
        assert!(two_stage_baseline(&cloud, &model, &schedule, &constraint, &gcfg, 0, 1)
            .unwrap()
            .is_none());
        let found = two_stage_baseline(&cloud, &model, &schedule, &constraint, &gcfg, 32, 1)
            .unwrap()
            .expect("slack constraint must admit survivors");
        assert!(constraint_satisfied(&found, &constraint));

        // A tight, far-away constraint yields no survivor.
        let hopeless = DemoConstraint {
            p_region: [50.0, 0.0, 0.0],
            d_direct: Rotation::identity(),
            tau_region: 1e-6,
            tau_direct: 1e-6,
        };
        assert!(two_stage_baseline(&cloud, &model, &schedule, &hopeless, &gcfg, 16, 1)
            .unwrap()
            .is_none());
    }

    #[test]
    fn extraction_round_trip_feeds_evaluator() {
        // A demo-derived constraint classifies its own seed grasp as
        // compliant and force-closed.
        let spec = ObjectSpec::new_cylinder("c", 0.025, 0.12);
        let (cloud, surface) = make_object(&spec, 512, &mut rng(10)).unwrap();
        let gripper = GripperSpec::desk_default();
        let thresholds = Thresholds::default();
        let (demo, seed_pose) = crate::scenes::synthesize_demo(
            &spec,
            &cloud,
            &surface,
            &gripper,
            &spec.task_region,
            &thresholds,
            0.5,
            &mut rng(11),
        )
        .unwrap();
        let c = crate::constraints::extract_constraints(&demo, &cloud, &gripper, &thresholds).unwrap();
        assert!(constraint_satisfied(&seed_pose, &c));
        let v = force_closure(
            &cloud.frame.denormalize_pose(&seed_pose),
            &surface,
            &gripper,
            0.5,
        );
        assert!(v.ok);
    }
}
