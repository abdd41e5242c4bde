//! Analytic surfaces for the parametric desk objects.
//!
//! Every object is a box, a cylinder, or an L-shape (two fused boxes,
//! hammer-like). The surfaces support exact area-weighted sampling with
//! analytic normals, line intersection, and signed distance — everything the
//! grasp oracle needs, with no mesh in sight.

use rand::Rng;

use crate::lie::vec3::{self, Vec3};

/// Which primitive of a composite surface a point belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Body,
    Handle,
    Head,
}

/// A point where a line crosses the surface.
#[derive(Clone, Copy, Debug)]
pub struct RayHit {
    /// Line parameter: `point = origin + t * dir`.
    pub t: f64,
    pub point: Vec3,
    pub normal: Vec3,
    pub part: Part,
}

#[derive(Clone, Copy, Debug)]
struct BoxPrim {
    center: Vec3,
    half: Vec3,
    part: Part,
}

impl BoxPrim {
    fn local(&self, p: Vec3) -> Vec3 {
        vec3::sub(p, self.center)
    }

    fn face_areas(&self) -> [f64; 3] {
        let [hx, hy, hz] = self.half;
        [hy * hz * 4.0, hx * hz * 4.0, hx * hy * 4.0]
    }

    fn area(&self) -> f64 {
        self.face_areas().iter().sum::<f64>() * 2.0
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec3, Vec3) {
        let areas = self.face_areas();
        let total: f64 = areas.iter().sum();
        let mut pick = rng.gen_range(0.0..total);
        let mut axis = 2;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                axis = i;
                break;
            }
            pick -= a;
        }
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let mut p = [0.0; 3];
        let mut n = [0.0; 3];
        for i in 0..3 {
            if i == axis {
                p[i] = sign * self.half[i];
                n[i] = sign;
            } else {
                p[i] = rng.gen_range(-self.half[i]..self.half[i]);
            }
        }
        (vec3::add(p, self.center), n)
    }

    fn signed_distance(&self, p: Vec3) -> f64 {
        let l = self.local(p);
        let q = [
            l[0].abs() - self.half[0],
            l[1].abs() - self.half[1],
            l[2].abs() - self.half[2],
        ];
        let outside = [q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)];
        let inside = q[0].max(q[1]).max(q[2]).min(0.0);
        vec3::norm(outside) + inside
    }

    fn contains(&self, p: Vec3, slack: f64) -> bool {
        self.signed_distance(p) < -slack
    }

    /// Slab intersection of the full line with the box boundary.
    fn line_hits(&self, origin: Vec3, dir: Vec3, out: &mut Vec<RayHit>) {
        let o = self.local(origin);
        let mut t_min = f64::NEG_INFINITY;
        let mut t_max = f64::INFINITY;
        let mut axis_min = 0usize;
        let mut axis_max = 0usize;
        for i in 0..3 {
            if dir[i].abs() < 1e-15 {
                if o[i].abs() > self.half[i] {
                    return;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut t0 = (-self.half[i] - o[i]) * inv;
            let mut t1 = (self.half[i] - o[i]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            if t0 > t_min {
                t_min = t0;
                axis_min = i;
            }
            if t1 < t_max {
                t_max = t1;
                axis_max = i;
            }
        }
        if t_min > t_max || !t_min.is_finite() || !t_max.is_finite() {
            return;
        }
        for (t, axis) in [(t_min, axis_min), (t_max, axis_max)] {
            let point = vec3::add(origin, vec3::scale(dir, t));
            let mut normal = [0.0; 3];
            let l = self.local(point);
            normal[axis] = l[axis].signum();
            out.push(RayHit {
                t,
                point,
                normal,
                part: self.part,
            });
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct CylinderPrim {
    radius: f64,
    half_height: f64,
}

impl CylinderPrim {
    fn area(&self) -> f64 {
        use std::f64::consts::PI;
        2.0 * PI * self.radius * (2.0 * self.half_height) + 2.0 * PI * self.radius * self.radius
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec3, Vec3) {
        use std::f64::consts::PI;
        let side = 2.0 * PI * self.radius * (2.0 * self.half_height);
        let cap = PI * self.radius * self.radius;
        let pick = rng.gen_range(0.0..side + 2.0 * cap);
        if pick < side {
            let phi = rng.gen_range(0.0..2.0 * PI);
            let z = rng.gen_range(-self.half_height..self.half_height);
            let n = [phi.cos(), phi.sin(), 0.0];
            (
                [self.radius * n[0], self.radius * n[1], z],
                n,
            )
        } else {
            let sign = if pick < side + cap { 1.0 } else { -1.0 };
            let r = self.radius * rng.gen::<f64>().sqrt();
            let phi = rng.gen_range(0.0..2.0 * PI);
            (
                [r * phi.cos(), r * phi.sin(), sign * self.half_height],
                [0.0, 0.0, sign],
            )
        }
    }

    fn signed_distance(&self, p: Vec3) -> f64 {
        let radial = (p[0] * p[0] + p[1] * p[1]).sqrt() - self.radius;
        let axial = p[2].abs() - self.half_height;
        let outside = [radial.max(0.0), axial.max(0.0)];
        let inside = radial.max(axial).min(0.0);
        (outside[0] * outside[0] + outside[1] * outside[1]).sqrt() + inside
    }

    fn line_hits(&self, origin: Vec3, dir: Vec3, out: &mut Vec<RayHit>) {
        // Lateral surface: quadratic in t on x^2 + y^2 = r^2.
        let a = dir[0] * dir[0] + dir[1] * dir[1];
        if a > 1e-15 {
            let b = 2.0 * (origin[0] * dir[0] + origin[1] * dir[1]);
            let c = origin[0] * origin[0] + origin[1] * origin[1] - self.radius * self.radius;
            let disc = b * b - 4.0 * a * c;
            if disc > 0.0 {
                let sq = disc.sqrt();
                for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                    let p = vec3::add(origin, vec3::scale(dir, t));
                    if p[2].abs() <= self.half_height {
                        out.push(RayHit {
                            t,
                            point: p,
                            normal: [p[0] / self.radius, p[1] / self.radius, 0.0],
                            part: Part::Body,
                        });
                    }
                }
            }
        }
        // Caps.
        if dir[2].abs() > 1e-15 {
            for sign in [1.0, -1.0] {
                let t = (sign * self.half_height - origin[2]) / dir[2];
                let p = vec3::add(origin, vec3::scale(dir, t));
                if p[0] * p[0] + p[1] * p[1] <= self.radius * self.radius {
                    out.push(RayHit {
                        t,
                        point: p,
                        normal: [0.0, 0.0, sign],
                        part: Part::Body,
                    });
                }
            }
        }
    }
}

/// An analytic object surface in the raw (metric) object frame.
#[derive(Clone, Debug)]
pub enum Surface {
    /// Axis-aligned box centered at the origin.
    Box { half: Vec3 },
    /// Cylinder along z, centered at the origin.
    Cylinder { radius: f64, half_height: f64 },
    /// Handle box along z fused with a head box centered at the handle top.
    LShape {
        handle_half: Vec3,
        head_half: Vec3,
        head_center: Vec3,
    },
}

impl Surface {
    fn boxes(&self) -> Vec<BoxPrim> {
        match self {
            Surface::Box { half } => vec![BoxPrim {
                center: [0.0; 3],
                half: *half,
                part: Part::Body,
            }],
            Surface::LShape {
                handle_half,
                head_half,
                head_center,
            } => vec![
                BoxPrim {
                    center: [0.0; 3],
                    half: *handle_half,
                    part: Part::Handle,
                },
                BoxPrim {
                    center: *head_center,
                    half: *head_half,
                    part: Part::Head,
                },
            ],
            Surface::Cylinder { .. } => vec![],
        }
    }

    fn cylinder(&self) -> Option<CylinderPrim> {
        match self {
            Surface::Cylinder {
                radius,
                half_height,
            } => Some(CylinderPrim {
                radius: *radius,
                half_height: *half_height,
            }),
            _ => None,
        }
    }

    /// Total surface area of the primitives (ignoring fused overlap); used
    /// only for sampling weights.
    pub fn primitive_area(&self) -> f64 {
        if let Some(c) = self.cylinder() {
            c.area()
        } else {
            self.boxes().iter().map(|b| b.area()).sum()
        }
    }

    /// Area-uniform sample of the exposed surface with its outward normal.
    /// Points of one fused primitive buried inside the other are rejected.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec3, Vec3) {
        if let Some(c) = self.cylinder() {
            return c.sample(rng);
        }
        let boxes = self.boxes();
        let total: f64 = boxes.iter().map(|b| b.area()).sum();
        loop {
            let mut pick = rng.gen_range(0.0..total);
            let mut idx = boxes.len() - 1;
            for (i, b) in boxes.iter().enumerate() {
                if pick < b.area() {
                    idx = i;
                    break;
                }
                pick -= b.area();
            }
            let (p, n) = boxes[idx].sample(rng);
            let buried = boxes
                .iter()
                .enumerate()
                .any(|(j, other)| j != idx && other.contains(p, 1e-12));
            if !buried {
                return (p, n);
            }
        }
    }

    /// Every crossing of the full line `origin + t * dir` with the exposed
    /// surface, sorted by `t`. Crossings buried inside a sibling primitive
    /// are discarded.
    pub fn line_hits(&self, origin: Vec3, dir: Vec3) -> Vec<RayHit> {
        let mut hits = Vec::new();
        if let Some(c) = self.cylinder() {
            c.line_hits(origin, dir, &mut hits);
        } else {
            let boxes = self.boxes();
            let mut raw = Vec::new();
            for b in &boxes {
                b.line_hits(origin, dir, &mut raw);
            }
            for h in raw {
                let buried = self
                    .boxes()
                    .iter()
                    .any(|other| other.part != h.part && other.contains(h.point, 1e-9));
                if !buried {
                    hits.push(h);
                }
            }
        }
        hits.sort_by(|a, b| a.t.total_cmp(&b.t));
        hits
    }

    /// Signed distance to the surface: negative inside. Exact for the box
    /// and cylinder; a conservative lower bound (`min` of parts) for the
    /// fused L-shape.
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        if let Some(c) = self.cylinder() {
            return c.signed_distance(p);
        }
        self.boxes()
            .iter()
            .map(|b| b.signed_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Primitive owning a (near-)surface point: the part whose boundary is
    /// closest.
    pub fn classify(&self, p: Vec3) -> Part {
        if self.cylinder().is_some() {
            return Part::Body;
        }
        let mut best = (f64::INFINITY, Part::Body);
        for b in self.boxes() {
            let d = b.signed_distance(p).abs();
            if d < best.0 {
                best = (d, b.part);
            }
        }
        best.1
    }

    /// Extent along z of a given part, for region validation.
    pub fn part_z_extent(&self, part: Part) -> Option<(f64, f64)> {
        match self {
            Surface::Box { half } => (part == Part::Body).then_some((-half[2], half[2])),
            Surface::Cylinder { half_height, .. } => {
                (part == Part::Body).then_some((-half_height, *half_height))
            }
            Surface::LShape {
                handle_half,
                head_half,
                head_center,
            } => match part {
                Part::Handle => Some((-handle_half[2], handle_half[2])),
                Part::Head => Some((head_center[2] - head_half[2], head_center[2] + head_half[2])),
                Part::Body => None,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn box_line_hits_opposite_faces() {
        let s = Surface::Box {
            half: [0.05, 0.05, 0.05],
        };
        let hits = s.line_hits([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        assert_eq!(hits.len(), 2);
        assert!((hits[0].t + 0.05).abs() < 1e-12);
        assert!((hits[1].t - 0.05).abs() < 1e-12);
        assert_eq!(hits[0].normal, [-1.0, 0.0, 0.0]);
        assert_eq!(hits[1].normal, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn cylinder_side_normals_are_radial() {
        let s = Surface::Cylinder {
            radius: 0.03,
            half_height: 0.06,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let (p, n) = s.sample_point(&mut rng);
            if p[2].abs() < 0.06 - 1e-9 {
                assert!(n[2].abs() < 1e-9, "side normal must be perpendicular to the axis");
                assert!((vec3::norm(n) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn signed_distance_signs() {
        let s = Surface::Cylinder {
            radius: 0.03,
            half_height: 0.06,
        };
        assert!(s.signed_distance([0.0, 0.0, 0.0]) < 0.0);
        assert!(s.signed_distance([0.1, 0.0, 0.0]) > 0.0);
        assert!(s.signed_distance([0.03, 0.0, 0.0]).abs() < 1e-12);
    }

    #[test]
    fn lshape_buried_hits_are_dropped() {
        let s = Surface::LShape {
            handle_half: [0.015, 0.015, 0.08],
            head_half: [0.05, 0.02, 0.02],
            head_center: [0.0, 0.0, 0.08],
        };
        // A vertical line through the handle: the handle's top face at
        // z = 0.08 is buried inside the head, so the top exit must be the
        // head's upper face at z = 0.10.
        let hits = s.line_hits([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        let top = hits.iter().map(|h| h.t).fold(f64::NEG_INFINITY, f64::max);
        assert!((top - 0.10).abs() < 1e-12, "top exit at {top}");
    }

    #[test]
    fn lshape_classify_parts() {
        let s = Surface::LShape {
            handle_half: [0.015, 0.015, 0.08],
            head_half: [0.05, 0.02, 0.02],
            head_center: [0.0, 0.0, 0.08],
        };
        assert_eq!(s.classify([0.015, 0.0, 0.0]), Part::Handle);
        assert_eq!(s.classify([0.05, 0.0, 0.08]), Part::Head);
    }
}
