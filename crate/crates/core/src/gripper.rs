//! Parallel-jaw gripper geometry: the predefined gripper-points mapper that
//! turns a pose into an ordered set of control points, plus pose-component
//! accessors.
//!
//! Gripper frame convention: the wrist/base sits at the origin, the fingers
//! separate along ±x (the closing axis), and the gripper approaches the
//! object along +z (the approach axis). All control points lie in the y = 0
//! plane, so the point set is bilaterally symmetric about the x = 0 closing
//! plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::vec3::{self, Vec3};
use crate::lie::{se3_apply, GraspPose, Rotation};

/// Roles of the canonical control points, in token order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointRole {
    Wrist,
    FingerBaseLeft,
    FingerBaseRight,
    FingertipLeft,
    FingertipRight,
    ClosingCenter,
}

/// Geometry of a parallel-jaw gripper and its ordered control points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperSpec {
    /// Maximum jaw opening, meters.
    pub max_opening: f64,
    /// Finger length from base to tip, meters.
    pub finger_depth: f64,
    /// Wrist-to-finger-base offset along the approach axis, meters.
    pub base_offset: f64,
    /// Control points in the gripper frame; the ordering is the token order
    /// used by the score network.
    pub canonical_points: Vec<Vec3>,
    /// Role of each canonical point, aligned with `canonical_points`.
    pub roles: Vec<PointRole>,
}

impl Default for GripperSpec {
    fn default() -> Self {
        GripperSpec::desk_default()
    }
}

impl GripperSpec {
    /// Desk-scale default mirroring a common research parallel-jaw gripper:
    /// 0.08 m opening, 0.046 m finger depth, 0.066 m base offset, 6 points.
    pub fn desk_default() -> Self {
        Self::from_dimensions(0.08, 0.046, 0.066)
    }

    /// Build the 6 canonical control points from the jaw dimensions.
    pub fn from_dimensions(max_opening: f64, finger_depth: f64, base_offset: f64) -> Self {
        let half = max_opening / 2.0;
        let tip_z = base_offset + finger_depth;
        GripperSpec {
            max_opening,
            finger_depth,
            base_offset,
            canonical_points: vec![
                [0.0, 0.0, 0.0],
                [-half, 0.0, base_offset],
                [half, 0.0, base_offset],
                [-half, 0.0, tip_z],
                [half, 0.0, tip_z],
                [0.0, 0.0, tip_z],
            ],
            roles: vec![
                PointRole::Wrist,
                PointRole::FingerBaseLeft,
                PointRole::FingerBaseRight,
                PointRole::FingertipLeft,
                PointRole::FingertipRight,
                PointRole::ClosingCenter,
            ],
        }
    }

    /// Number of control points (the token count `g`).
    pub fn point_count(&self) -> usize {
        self.canonical_points.len()
    }

    /// Closing axis in the gripper frame.
    pub fn closing_axis(&self) -> Vec3 {
        [1.0, 0.0, 0.0]
    }

    /// Approach axis in the gripper frame.
    pub fn approach_axis(&self) -> Vec3 {
        [0.0, 0.0, 1.0]
    }

    /// Fingertip midpoint in the gripper frame (the tool center point).
    pub fn closing_center(&self) -> Vec3 {
        [0.0, 0.0, self.base_offset + self.finger_depth]
    }

    /// Uniformly scale every linear dimension, mapping the gripper into a
    /// normalized object frame.
    pub fn scaled(&self, s: f64) -> GripperSpec {
        GripperSpec {
            max_opening: self.max_opening * s,
            finger_depth: self.finger_depth * s,
            base_offset: self.base_offset * s,
            canonical_points: self
                .canonical_points
                .iter()
                .map(|p| vec3::scale(*p, s))
                .collect(),
            roles: self.roles.clone(),
        }
    }

    /// Control points checked against the object surface for clearance.
    /// The closing center is excluded: it is the tool center point and sits
    /// between the fingers, inside whatever is being pinched.
    pub fn collision_points(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.canonical_points
            .iter()
            .zip(&self.roles)
            .filter(|(_, role)| **role != PointRole::ClosingCenter)
            .map(|(p, _)| *p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_opening <= 0.0 || self.finger_depth <= 0.0 || self.base_offset <= 0.0 {
            return Err(Error::InvalidArgument(
                "gripper dimensions must be positive".into(),
            ));
        }
        let g = self.canonical_points.len();
        if g < 4 {
            return Err(Error::InvalidArgument(format!(
                "gripper needs at least 4 control points, got {g}"
            )));
        }
        if self.roles.len() != g {
            return Err(Error::InvalidArgument(
                "roles must align with canonical_points".into(),
            ));
        }
        for need in [
            PointRole::Wrist,
            PointRole::FingerBaseLeft,
            PointRole::FingerBaseRight,
            PointRole::FingertipLeft,
            PointRole::FingertipRight,
        ] {
            if !self.roles.contains(&need) {
                return Err(Error::InvalidArgument(format!(
                    "gripper is missing the {need:?} control point"
                )));
            }
        }
        for (i, a) in self.canonical_points.iter().enumerate() {
            for b in self.canonical_points.iter().skip(i + 1) {
                if vec3::norm(vec3::sub(*a, *b)) < 1e-12 {
                    return Err(Error::InvalidArgument(
                        "canonical points must be distinct".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Map a grasp pose to its control points in the object frame. The output
/// order matches `spec.canonical_points`; that ordering is the token order
/// downstream.
pub fn gripper_points(h: &GraspPose, spec: &GripperSpec) -> Vec<Vec3> {
    spec.canonical_points
        .iter()
        .map(|p| se3_apply(h, *p))
        .collect()
}

/// Translational component of a pose.
pub fn trans(h: &GraspPose) -> Vec3 {
    h.translation
}

/// Rotational component of a pose.
pub fn rot(h: &GraspPose) -> Rotation {
    h.rotation
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{random_rotation, se3_compose, so3_exp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn default_spec_is_valid() {
        GripperSpec::desk_default().validate().unwrap();
    }

    #[test]
    fn identity_pose_yields_canonical_points() {
        let spec = GripperSpec::desk_default();
        let pts = gripper_points(&GraspPose::identity(), &spec);
        assert_eq!(pts, spec.canonical_points);
    }

    #[test]
    fn pure_translation_shifts_every_point() {
        let spec = GripperSpec::desk_default();
        let t = [0.1, -0.2, 0.3];
        let pts = gripper_points(&GraspPose::new(Rotation::identity(), t), &spec);
        for (got, canon) in pts.iter().zip(&spec.canonical_points) {
            assert_eq!(*got, vec3::add(*canon, t));
        }
    }

    #[test]
    fn half_turn_about_approach_axis_swaps_fingertips() {
        let spec = GripperSpec::desk_default();
        let h = GraspPose::new(so3_exp([0.0, 0.0, PI]).unwrap(), [0.0; 3]);
        let pts = gripper_points(&h, &spec);
        let idx = |role: PointRole| spec.roles.iter().position(|r| *r == role).unwrap();
        let tip_l = spec.canonical_points[idx(PointRole::FingertipLeft)];
        let tip_r = spec.canonical_points[idx(PointRole::FingertipRight)];
        assert!(vec3::norm(vec3::sub(pts[idx(PointRole::FingertipLeft)], tip_r)) < 1e-12);
        assert!(vec3::norm(vec3::sub(pts[idx(PointRole::FingertipRight)], tip_l)) < 1e-12);
    }

    #[test]
    fn gripper_points_are_equivariant() {
        let spec = GripperSpec::desk_default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let h = GraspPose::new(random_rotation(&mut rng), [
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ]);
            let a = GraspPose::new(random_rotation(&mut rng), [
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ]);
            let composed = gripper_points(&se3_compose(&a, &h), &spec);
            let moved: Vec<_> = gripper_points(&h, &spec)
                .into_iter()
                .map(|p| crate::lie::se3_apply(&a, p))
                .collect();
            for (x, y) in composed.iter().zip(&moved) {
                assert!(vec3::norm(vec3::sub(*x, *y)) < 1e-10);
            }
        }
    }

    #[test]
    fn closing_center_is_fingertip_midpoint_at_fixed_offset() {
        let spec = GripperSpec::desk_default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = GraspPose::new(random_rotation(&mut rng), [0.3, 0.1, -0.2]);
        let pts = gripper_points(&h, &spec);
        let idx = |role: PointRole| spec.roles.iter().position(|r| *r == role).unwrap();
        let mid = vec3::scale(
            vec3::add(pts[idx(PointRole::FingertipLeft)], pts[idx(PointRole::FingertipRight)]),
            0.5,
        );
        let center = pts[idx(PointRole::ClosingCenter)];
        assert!(vec3::norm(vec3::sub(mid, center)) < 1e-10);
        let reach = vec3::norm(vec3::sub(center, trans(&h)));
        assert!((reach - (spec.base_offset + spec.finger_depth)).abs() < 1e-10);
    }

    #[test]
    fn component_accessors_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = GraspPose::new(random_rotation(&mut rng), [0.4, 0.0, -0.9]);
        assert_eq!(trans(&GraspPose::identity()), [0.0; 3]);
        assert_eq!(
            rot(&GraspPose::new(Rotation::identity(), [1.0, 2.0, 3.0])).quaternion(),
            [1.0, 0.0, 0.0, 0.0]
        );
        let rebuilt = GraspPose::new(rot(&h), trans(&h));
        assert_eq!(rebuilt, h);
    }

    #[test]
    fn validate_rejects_bad_specs() {
        let mut spec = GripperSpec::desk_default();
        spec.max_opening = 0.0;
        assert!(spec.validate().is_err());

        let mut spec = GripperSpec::desk_default();
        spec.canonical_points[1] = spec.canonical_points[0];
        assert!(spec.validate().is_err());
    }
}
