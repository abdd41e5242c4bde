//! SO(3)/SE(3) kernels used by the diffusion process.
//!
//! Rotations are unit quaternions (scalar-first, double precision). Scores,
//! guidance gradients, and Langevin steps live in a body-frame (right)
//! tangent 6-vector [`Twist`]; poses are updated by the decoupled retraction
//! `H ∘ (exp(ω), v)` — no screw-motion coupling between the rotational and
//! translational parts.
//!
//! Quaternions are canonicalized to `w >= 0` only at serialization
//! boundaries, never mid-computation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Small 3-vector helpers shared across the crate.
pub mod vec3 {
    pub type Vec3 = [f64; 3];

    pub fn add(a: Vec3, b: Vec3) -> Vec3 {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }

    pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    pub fn scale(a: Vec3, s: f64) -> Vec3 {
        [a[0] * s, a[1] * s, a[2] * s]
    }

    pub fn dot(a: Vec3, b: Vec3) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    pub fn norm_sq(a: Vec3) -> f64 {
        dot(a, a)
    }

    pub fn norm(a: Vec3) -> f64 {
        norm_sq(a).sqrt()
    }

    /// Unit vector along `a`, or `None` when `‖a‖ < floor`.
    pub fn normalized(a: Vec3, floor: f64) -> Option<Vec3> {
        let n = norm(a);
        if n < floor {
            None
        } else {
            Some(scale(a, 1.0 / n))
        }
    }

    pub fn is_finite(a: Vec3) -> bool {
        a.iter().all(|x| x.is_finite())
    }
}

use vec3::Vec3;

/// A rotation in SO(3), stored as a unit quaternion `(w, x, y, z)`.
///
/// The norm is maintained within 1e-12 after every operation. `q` and `-q`
/// denote the same rotation; no sign convention is enforced internally.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    q: [f64; 4],
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation {
            q: [1.0, 0.0, 0.0, 0.0],
        }
    }

    /// Build from quaternion coefficients, normalizing the input.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = [w, x, y, z];
        if !q.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument(
                "quaternion components must be finite".into(),
            ));
        }
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n < 1e-12 {
            return Err(Error::InvalidArgument(
                "quaternion norm too small to normalize".into(),
            ));
        }
        Ok(Rotation {
            q: [w / n, x / n, y / n, z / n],
        })
    }

    /// Quaternion coefficients `(w, x, y, z)` as stored (not canonicalized).
    pub fn quaternion(&self) -> [f64; 4] {
        self.q
    }

    /// Coefficients with the serialization convention `w >= 0`.
    pub fn canonical_quaternion(&self) -> [f64; 4] {
        let q = self.q;
        let flip = q[0] < 0.0
            || (q[0] == 0.0 && (q[1] < 0.0 || (q[1] == 0.0 && (q[2] < 0.0 || (q[2] == 0.0 && q[3] < 0.0)))));
        if flip {
            [-q[0], -q[1], -q[2], -q[3]]
        } else {
            q
        }
    }

    /// The same rotation with the serialization sign convention applied.
    /// Stored records are canonicalized so that a write/read round-trip is
    /// bitwise exact.
    pub fn canonicalized(&self) -> Rotation {
        Rotation {
            q: self.canonical_quaternion(),
        }
    }

    /// Renormalize only when drift is detectable, so exact no-ops stay
    /// bitwise exact.
    fn renormed(q: [f64; 4]) -> Self {
        let n_sq = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
        if (n_sq - 1.0).abs() > 1e-13 {
            let inv = 1.0 / n_sq.sqrt();
            Rotation {
                q: [q[0] * inv, q[1] * inv, q[2] * inv, q[3] * inv],
            }
        } else {
            Rotation { q }
        }
    }

    /// Hamilton product: `self ∘ other` (apply `other` first in body frame).
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let [aw, ax, ay, az] = self.q;
        let [bw, bx, by, bz] = other.q;
        Rotation::renormed([
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ])
    }

    pub fn inverse(&self) -> Rotation {
        let [w, x, y, z] = self.q;
        Rotation { q: [w, -x, -y, -z] }
    }

    /// Rotate a vector: `v' = v + 2w(u×v) + 2u×(u×v)` with `u` the
    /// imaginary part.
    pub fn apply(&self, v: Vec3) -> Vec3 {
        let [w, x, y, z] = self.q;
        let u = [x, y, z];
        let uv = vec3::cross(u, v);
        let uuv = vec3::cross(u, uv);
        [
            v[0] + 2.0 * (w * uv[0] + uuv[0]),
            v[1] + 2.0 * (w * uv[1] + uuv[1]),
            v[2] + 2.0 * (w * uv[2] + uuv[2]),
        ]
    }

    /// Build from an orthonormal right-handed basis given as matrix columns.
    ///
    /// Uses Shepperd's method: the conversion branches on the largest of the
    /// trace and the diagonal entries, which stays well-conditioned through
    /// angle π.
    pub fn from_matrix_columns(cx: Vec3, cy: Vec3, cz: Vec3) -> Result<Self> {
        for c in [cx, cy, cz] {
            if !vec3::is_finite(c) || (vec3::norm(c) - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(
                    "rotation matrix columns must be finite unit vectors".into(),
                ));
            }
        }
        if vec3::dot(vec3::cross(cx, cy), cz) < 0.9 {
            return Err(Error::InvalidArgument(
                "rotation matrix must be right-handed and orthonormal".into(),
            ));
        }
        let m = [
            [cx[0], cy[0], cz[0]],
            [cx[1], cy[1], cz[1]],
            [cx[2], cy[2], cz[2]],
        ];
        let tr = m[0][0] + m[1][1] + m[2][2];
        let (w, x, y, z);
        if tr > m[0][0].max(m[1][1]).max(m[2][2]) {
            let s = (tr + 1.0).sqrt() * 2.0;
            w = s / 4.0;
            x = (m[2][1] - m[1][2]) / s;
            y = (m[0][2] - m[2][0]) / s;
            z = (m[1][0] - m[0][1]) / s;
        } else if m[0][0] >= m[1][1] && m[0][0] >= m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            w = (m[2][1] - m[1][2]) / s;
            x = s / 4.0;
            y = (m[0][1] + m[1][0]) / s;
            z = (m[0][2] + m[2][0]) / s;
        } else if m[1][1] >= m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            w = (m[0][2] - m[2][0]) / s;
            x = (m[0][1] + m[1][0]) / s;
            y = s / 4.0;
            z = (m[1][2] + m[2][1]) / s;
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            w = (m[1][0] - m[0][1]) / s;
            x = (m[0][2] + m[2][0]) / s;
            y = (m[1][2] + m[2][1]) / s;
            z = s / 4.0;
        }
        Rotation::from_quaternion(w, x, y, z)
    }

    /// 3x3 matrix form, row-major.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let cx = self.apply([1.0, 0.0, 0.0]);
        let cy = self.apply([0.0, 1.0, 0.0]);
        let cz = self.apply([0.0, 0.0, 1.0]);
        [
            [cx[0], cy[0], cz[0]],
            [cx[1], cy[1], cz[1]],
            [cx[2], cy[2], cz[2]],
        ]
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.canonical_quaternion().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let q = <[f64; 4]>::deserialize(d)?;
        if q.iter().all(|c| c.is_finite()) {
            let n_sq = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
            // Keep the stored bits when the value is already unit.
            if (n_sq - 1.0).abs() <= 1e-13 {
                return Ok(Rotation { q });
            }
        }
        Rotation::from_quaternion(q[0], q[1], q[2], q[3]).map_err(serde::de::Error::custom)
    }
}

/// Exponential map so(3) -> SO(3): rotation by angle `‖ω‖` about `ω/‖ω‖`.
///
/// Below `‖ω‖ = 1e-8` the second-order series is used to avoid dividing by
/// the angle.
pub fn so3_exp(omega: Vec3) -> Result<Rotation> {
    if !vec3::is_finite(omega) {
        return Err(Error::InvalidArgument("so3_exp: non-finite input".into()));
    }
    let theta_sq = vec3::norm_sq(omega);
    let theta = theta_sq.sqrt();
    let (w, imag) = if theta < 1e-8 {
        (1.0 - theta_sq / 8.0, 0.5 - theta_sq / 48.0)
    } else {
        ((0.5 * theta).cos(), (0.5 * theta).sin() / theta)
    };
    Ok(Rotation::renormed([
        w,
        imag * omega[0],
        imag * omega[1],
        imag * omega[2],
    ]))
}

/// Logarithm map SO(3) -> so(3): axis-angle with `‖result‖ ∈ [0, π]`.
///
/// Total on valid rotations. The quaternion form is stable through the
/// angle-π boundary (the imaginary part has unit norm there).
pub fn so3_log(r: &Rotation) -> Vec3 {
    let mut q = r.q;
    // Principal branch: the representative with non-negative scalar part.
    if q[0] < 0.0 {
        q = [-q[0], -q[1], -q[2], -q[3]];
    }
    let v = [q[1], q[2], q[3]];
    let nv = vec3::norm(v);
    if nv < 1e-9 {
        // theta/nv expanded to second order around nv = 0.
        let w = q[0].max(1e-12);
        let scale = 2.0 / w * (1.0 - nv * nv / (3.0 * w * w));
        vec3::scale(v, scale)
    } else {
        let theta = 2.0 * nv.atan2(q[0]);
        vec3::scale(v, theta / nv)
    }
}

/// Geodesic distance between two rotations: the angle of `R1⁻¹ ∘ R2`,
/// in `[0, π]`. Symmetric, zero iff the rotations coincide up to quaternion
/// sign.
pub fn geodesic_distance(r1: &Rotation, r2: &Rotation) -> f64 {
    // Evaluate in a canonical argument order so symmetry is bitwise exact.
    let (a, b) = if r1.q <= r2.q { (r1, r2) } else { (r2, r1) };
    let rel = a.inverse().compose(b);
    let [w, x, y, z] = rel.q;
    let nv = (x * x + y * y + z * z).sqrt();
    2.0 * nv.atan2(w.abs())
}

/// Haar-uniform random rotation: a normalized 4-vector of independent
/// standard normals.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if n > 1e-6 {
            return Rotation {
                q: [q[0] / n, q[1] / n, q[2] / n, q[3] / n],
            };
        }
    }
}

/// An element of the 6-dimensional tangent space: translational part `v`,
/// rotational part `omega` (radians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub v: Vec3,
    pub omega: Vec3,
}

impl Twist {
    pub fn zero() -> Self {
        Twist {
            v: [0.0; 3],
            omega: [0.0; 3],
        }
    }

    pub fn new(v: Vec3, omega: Vec3) -> Self {
        Twist { v, omega }
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Twist {
            v: [a[0], a[1], a[2]],
            omega: [a[3], a[4], a[5]],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.v[0], self.v[1], self.v[2], self.omega[0], self.omega[1], self.omega[2],
        ]
    }

    pub fn scale(&self, s: f64) -> Twist {
        Twist {
            v: vec3::scale(self.v, s),
            omega: vec3::scale(self.omega, s),
        }
    }

    pub fn add(&self, other: &Twist) -> Twist {
        Twist {
            v: vec3::add(self.v, other.v),
            omega: vec3::add(self.omega, other.omega),
        }
    }

    pub fn dot(&self, other: &Twist) -> f64 {
        vec3::dot(self.v, other.v) + vec3::dot(self.omega, other.omega)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        vec3::is_finite(self.v) && vec3::is_finite(self.omega)
    }
}

/// A grasp pose `H ∈ SE(3)`: rotation plus translation in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspPose {
    #[serde(rename = "q")]
    pub rotation: Rotation,
    #[serde(rename = "t")]
    pub translation: Vec3,
}

impl GraspPose {
    pub fn identity() -> Self {
        GraspPose {
            rotation: Rotation::identity(),
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        GraspPose {
            rotation,
            translation,
        }
    }

    pub fn is_finite(&self) -> bool {
        vec3::is_finite(self.translation) && self.rotation.q.iter().all(|c| c.is_finite())
    }
}

/// Group law: `(A ∘ B)(p) = A(B(p))`.
pub fn se3_compose(a: &GraspPose, b: &GraspPose) -> GraspPose {
    GraspPose {
        rotation: a.rotation.compose(&b.rotation),
        translation: vec3::add(a.rotation.apply(b.translation), a.translation),
    }
}

pub fn se3_inverse(a: &GraspPose) -> GraspPose {
    let rinv = a.rotation.inverse();
    GraspPose {
        rotation: rinv_clone(&rinv),
        translation: vec3::scale(rinv.apply(a.translation), -1.0),
    }
}

fn rinv_clone(r: &Rotation) -> Rotation {
    *r
}

pub fn se3_apply(a: &GraspPose, p: Vec3) -> Vec3 {
    vec3::add(a.rotation.apply(p), a.translation)
}

/// Decoupled retraction: `H ∘ Exp(ξ)` with `Exp(ξ) = (so3_exp(ω), v)`.
///
/// The twist is a body-frame increment: the rotation is right-multiplied and
/// the translational part is carried through the pose's rotation. Note the
/// rotational and translational parts are not coupled by a screw motion, so
/// `retract(retract(H, ξ), -ξ)` is not the identity in general.
pub fn retract(h: &GraspPose, xi: &Twist) -> Result<GraspPose> {
    if !xi.is_finite() {
        return Err(Error::InvalidArgument("retract: non-finite twist".into()));
    }
    let step = GraspPose {
        rotation: so3_exp(xi.omega)?,
        translation: xi.v,
    };
    Ok(se3_compose(h, &step))
}

/// Draw `ε ~ N(0, σ²I₆)` and return `(retract(H, ε), ε)`.
///
/// The translational components are drawn before the rotational ones.
pub fn perturb<R: Rng + ?Sized>(h: &GraspPose, sigma: f64, rng: &mut R) -> Result<(GraspPose, Twist)> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "perturb: sigma must be positive and finite, got {sigma}"
        )));
    }
    let mut eps = [0.0; 6];
    for e in eps.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *e = sigma * z;
    }
    let xi = Twist::from_array(eps);
    let perturbed = retract(h, &xi)?;
    Ok((perturbed, xi))
}
