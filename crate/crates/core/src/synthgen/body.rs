//! Capsule skeleton, joint trajectories and linear blend skinning.

use nalgebra::{Matrix3, Rotation3};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng::Stream;

/// Body part a bone belongs to; drives the color palette.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Torso,
    Head,
    UpperArm,
    Forearm,
    Thigh,
    Shin,
}

impl Region {
    pub const ALL: [Region; 6] = [
        Region::Torso,
        Region::Head,
        Region::UpperArm,
        Region::Forearm,
        Region::Thigh,
        Region::Shin,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&r| r == self).unwrap()
    }

    pub fn is_leg(self) -> bool {
        matches!(self, Region::Thigh | Region::Shin)
    }
}

/// Capsule radii and overall scale.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyDims {
    pub scale: f64,
    pub torso_radius: f64,
    pub head_radius: f64,
    pub upper_arm_radius: f64,
    pub forearm_radius: f64,
    pub thigh_radius: f64,
    pub shin_radius: f64,
}

impl Default for BodyDims {
    fn default() -> Self {
        Self {
            scale: 1.0,
            torso_radius: 0.16,
            head_radius: 0.11,
            upper_arm_radius: 0.065,
            forearm_radius: 0.055,
            thigh_radius: 0.085,
            shin_radius: 0.065,
        }
    }
}

impl BodyDims {
    pub fn validate(&self) -> Result<()> {
        let radii = [
            self.torso_radius,
            self.head_radius,
            self.upper_arm_radius,
            self.forearm_radius,
            self.thigh_radius,
            self.shin_radius,
        ];
        if !(self.scale > 0.0 && self.scale <= 1.05) {
            return Err(Error::invalid("body scale must lie in (0, 1.05]"));
        }
        if radii.iter().any(|&r| !(r > 0.0 && r < 0.3)) {
            return Err(Error::invalid("capsule radii must lie in (0, 0.3)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    /// Signed distance: negative inside.
    pub fn sdf(&self, p: Vec3) -> f64 {
        let ab = self.b - self.a;
        let t = ((p - self.a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        (p - (self.a + ab * t)).norm() - self.radius
    }
}

/// Rotation about a pivot point, `p -> r (p - pivot) + pivot`, stored as `r p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid {
    pub r: Matrix3<f64>,
    pub t: Vec3,
}

impl Rigid {
    pub fn identity() -> Self {
        Self {
            r: Matrix3::identity(),
            t: Vec3::zeros(),
        }
    }

    fn about(pivot: Vec3, r: Matrix3<f64>) -> Self {
        Self {
            r,
            t: pivot - r * pivot,
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.r * p + self.t
    }

    /// `self` after `inner`.
    fn compose(&self, inner: &Rigid) -> Rigid {
        Rigid {
            r: self.r * inner.r,
            t: self.r * inner.t + self.t,
        }
    }
}

const SWAY_GAIN: f64 = 0.3;
const BOB_GAIN: f64 = 0.05;

#[derive(Clone, Debug)]
struct Bone {
    region: Region,
    parent: Option<usize>,
    pivot: Vec3,
    rest: Capsule,
    /// +1 on the left (x > 0) side, -1 on the right, 0 on the midline.
    side: f64,
}

/// One rotational degree of freedom driven by a sinusoid.
#[derive(Clone, Debug)]
struct Dof {
    bone: usize,
    axis: Vec3,
    gain: f64,
    mirrored: bool,
    flex_only: bool,
    freq: f64,
    phase: f64,
}

#[derive(Clone, Debug)]
pub struct Body {
    bones: Vec<Bone>,
    dofs: Vec<Dof>,
    /// Root sway along x and upward bob along y.
    sway: (f64, f64),
    bob: (f64, f64),
}

impl Body {
    pub fn new(dims: &BodyDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let s = dims.scale;
        let v = |x: f64, y: f64| Vec3::new(x, y, 0.0) * s;
        let mut bones = Vec::new();
        let mut push = |region, parent, pivot: Vec3, a: Vec3, b: Vec3, radius: f64, side| {
            bones.push(Bone {
                region,
                parent,
                pivot,
                rest: Capsule {
                    a,
                    b,
                    radius: radius * s,
                },
                side,
            });
            bones.len() - 1
        };
        let torso = push(
            Region::Torso,
            None,
            v(0.0, -0.05),
            v(0.0, -0.05),
            v(0.0, 0.45),
            dims.torso_radius,
            0.0,
        );
        push(
            Region::Head,
            Some(torso),
            v(0.0, 0.5),
            v(0.0, 0.62),
            v(0.0, 0.70),
            dims.head_radius,
            0.0,
        );
        for side in [1.0, -1.0] {
            let (shoulder, elbow, wrist) = (
                v(0.22 * side, 0.42),
                v(0.42 * side, 0.18),
                v(0.55 * side, -0.05),
            );
            let upper = push(
                Region::UpperArm,
                Some(torso),
                shoulder,
                shoulder,
                elbow,
                dims.upper_arm_radius,
                side,
            );
            push(
                Region::Forearm,
                Some(upper),
                elbow,
                elbow,
                wrist,
                dims.forearm_radius,
                side,
            );
        }
        for side in [1.0, -1.0] {
            let (hip, knee, ankle) = (
                v(0.10 * side, -0.05),
                v(0.13 * side, -0.45),
                v(0.14 * side, -0.85),
            );
            let thigh = push(
                Region::Thigh,
                Some(torso),
                hip,
                hip,
                knee,
                dims.thigh_radius,
                side,
            );
            push(
                Region::Shin,
                Some(thigh),
                knee,
                knee,
                ankle,
                dims.shin_radius,
                side,
            );
        }

        let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
        let mut table: Vec<(usize, Vec3, f64, bool, bool)> = vec![
            (0, y, 0.3, false, false),
            (0, z, 0.1, false, false),
            (1, x, 0.4, false, false),
        ];
        for (b, bone) in bones.iter().enumerate() {
            match bone.region {
                Region::UpperArm => {
                    table.push((b, z, 1.0, true, false));
                    table.push((b, x, 0.8, false, false));
                }
                Region::Forearm => table.push((b, x, 0.9, false, true)),
                Region::Thigh => {
                    table.push((b, x, 0.8, false, false));
                    table.push((b, z, 0.2, true, false));
                }
                Region::Shin => table.push((b, x, -0.9, false, true)),
                _ => {}
            }
        }
        let mut rng = Stream::derive(seed, 0x6d6f74);
        let dofs = table
            .into_iter()
            .map(|(bone, axis, gain, mirrored, flex_only)| Dof {
                bone,
                axis,
                gain,
                mirrored,
                flex_only,
                freq: rng.uniform_range(0.5, 1.5),
                phase: rng.uniform_range(0.0, std::f64::consts::TAU),
            })
            .collect();
        let sway = (rng.uniform_range(0.5, 1.5), rng.uniform_range(0.0, std::f64::consts::TAU));
        let bob = (rng.uniform_range(0.5, 1.5), rng.uniform_range(0.0, std::f64::consts::TAU));
        Ok(Self {
            bones,
            dofs,
            sway,
            bob,
        })
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    pub fn region(&self, bone: usize) -> Region {
        self.bones[bone].region
    }

    pub fn rest_capsules(&self) -> Vec<Capsule> {
        self.bones.iter().map(|b| b.rest).collect()
    }

    /// Signed distance of the rest-pose capsule union.
    pub fn rest_sdf(&self, p: Vec3) -> f64 {
        self.bones
            .iter()
            .map(|b| b.rest.sdf(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Global bone transforms at `frame` of `frame_count`.
    pub fn pose(&self, amplitude: f64, frame: usize, frame_count: usize) -> Vec<Rigid> {
        let time = frame as f64 / frame_count as f64;
        let mut local = vec![Matrix3::identity(); self.bones.len()];
        for d in &self.dofs {
            let s = (std::f64::consts::TAU * d.freq * time + d.phase).sin();
            let s = if d.flex_only { 0.5 * (1.0 + s) } else { s };
            let mut angle = amplitude * d.gain * s;
            if d.mirrored {
                angle *= self.bones[d.bone].side;
            }
            let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(d.axis), angle);
            local[d.bone] *= rot.matrix();
        }
        let wave = |(freq, phase): (f64, f64)| (std::f64::consts::TAU * freq * time + phase).sin();
        let root = Vec3::new(
            SWAY_GAIN * amplitude * wave(self.sway),
            BOB_GAIN * amplitude * 0.5 * (1.0 + wave(self.bob)),
            0.0,
        );
        let mut global: Vec<Rigid> = Vec::with_capacity(self.bones.len());
        for (b, bone) in self.bones.iter().enumerate() {
            let own = Rigid::about(bone.pivot, local[b]);
            // Parents always precede children.
            let g = match bone.parent {
                Some(p) => global[p].compose(&own),
                None => Rigid {
                    r: own.r,
                    t: own.t + root,
                },
            };
            global.push(g);
        }
        global
    }

    pub fn posed_capsules(&self, pose: &[Rigid]) -> Vec<Capsule> {
        self.bones
            .iter()
            .zip(pose)
            .map(|(b, g)| Capsule {
                a: g.apply(b.rest.a),
                b: g.apply(b.rest.b),
                radius: b.rest.radius,
            })
            .collect()
    }

    /// Softmin skinning weights from capsule distances, `tau` controls the
    /// blend width. Weights below 1e-6 of the total are dropped.
    pub fn skin_weights(&self, p: Vec3, tau: f64) -> Vec<(usize, f64)> {
        let d: Vec<f64> = self.bones.iter().map(|b| b.rest.sdf(p)).collect();
        let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
        let raw: Vec<f64> = d.iter().map(|&di| (-(di - dmin) / tau).exp()).collect();
        let total: f64 = raw.iter().sum();
        let kept: Vec<(usize, f64)> = raw
            .into_iter()
            .enumerate()
            .filter(|&(_, w)| w / total >= 1e-6)
            .collect();
        let norm: f64 = kept.iter().map(|x| x.1).sum();
        kept.into_iter().map(|(b, w)| (b, w / norm)).collect()
    }
}

pub fn union_sdf(capsules: &[Capsule], p: Vec3) -> f64 {
    capsules
        .iter()
        .map(|c| c.sdf(p))
        .fold(f64::INFINITY, f64::min)
}

pub fn skin_point(p: Vec3, weights: &[(usize, f64)], pose: &[Rigid]) -> Vec3 {
    weights
        .iter()
        .fold(Vec3::zeros(), |acc, &(b, w)| acc + pose[b].apply(p) * w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitude_pose_is_identity() {
        let body = Body::new(&BodyDims::default(), 3).unwrap();
        for g in body.pose(0.0, 1, 4) {
            assert!((g.r - Matrix3::identity()).abs().max() < 1e-15);
            assert!(g.t.norm() < 1e-15);
        }
    }

    #[test]
    fn children_follow_parent_joint() {
        let body = Body::new(&BodyDims::default(), 3).unwrap();
        let pose = body.pose(0.5, 2, 5);
        let caps = body.posed_capsules(&pose);
        // upper arm end stays attached to forearm start
        assert!((caps[2].b - caps[3].a).norm() < 1e-12);
        assert!((caps[6].b - caps[7].a).norm() < 1e-12);
    }

    #[test]
    fn weights_are_normalized_and_local() {
        let body = Body::new(&BodyDims::default(), 1).unwrap();
        let w = body.skin_weights(Vec3::new(0.0, 0.66, 0.0), 0.015);
        let total: f64 = w.iter().map(|x| x.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let head = w.iter().find(|x| x.0 == 1).unwrap().1;
        assert!(head > 0.999);
    }
}
