use std::path::Path;

use super::body::{BodyDims, Region};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};
use crate::kv::KvDoc;
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PaletteKind {
    /// One color per body region.
    PerRegion,
    /// Upper body and legs.
    TwoTone,
    Uniform,
}

impl PaletteKind {
    pub fn tag(self) -> &'static str {
        match self {
            PaletteKind::PerRegion => "per-region",
            PaletteKind::TwoTone => "two-tone",
            PaletteKind::Uniform => "uniform",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [Self::PerRegion, Self::TwoTone, Self::Uniform]
            .into_iter()
            .find(|k| k.tag() == tag)
    }
}

/// Camera circling the body at fixed elevation, looking at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitCamera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance: f64,
    pub fov_deg: f64,
    /// Azimuth change per frame.
    pub orbit_deg_per_frame: f64,
}

impl Default for OrbitCamera {
    fn default() -> Self {
        Self {
            azimuth_deg: 0.0,
            elevation_deg: 10.0,
            distance: 3.0,
            fov_deg: 40.0,
            orbit_deg_per_frame: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSpec {
    pub frame_count: usize,
    pub seed: u64,
    /// Joint-angle amplitude in radians before per-joint gains.
    pub amplitude: f64,
    pub body: BodyDims,
    pub palette: PaletteKind,
    pub camera: OrbitCamera,
    pub image_width: usize,
    pub image_height: usize,
    pub voxel_resolution: usize,
    /// Cell size of the grid the rest surface is extracted from.
    pub surface_cell: f64,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            frame_count: 30,
            seed: 0,
            amplitude: 0.35,
            body: BodyDims::default(),
            palette: PaletteKind::PerRegion,
            camera: OrbitCamera::default(),
            image_width: 256,
            image_height: 256,
            voxel_resolution: 64,
            surface_cell: 0.03,
        }
    }
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count < 2 {
            return Err(Error::invalid("frame_count must be at least 2"));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::invalid("amplitude must be finite and non-negative"));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if self.voxel_resolution < 4 {
            return Err(Error::invalid("voxel_resolution must be at least 4"));
        }
        if !(self.surface_cell > 0.002 && self.surface_cell <= 0.1) {
            return Err(Error::invalid("surface_cell must lie in (0.002, 0.1]"));
        }
        let c = &self.camera;
        if !(c.distance > 1.5 && c.fov_deg > 1.0 && c.fov_deg < 170.0) {
            return Err(Error::invalid(
                "camera needs distance > 1.5 and fov in (1, 170) degrees",
            ));
        }
        self.body.validate()
    }

    /// Near and far planes bracket the `[-1, 1]^3` volume.
    pub fn camera_for_frame(&self, frame: usize) -> Result<Camera> {
        let c = &self.camera;
        let az = (c.azimuth_deg + c.orbit_deg_per_frame * frame as f64).to_radians();
        let el = c.elevation_deg.to_radians();
        let eye = Vec3::new(az.sin() * el.cos(), el.sin(), az.cos() * el.cos()) * c.distance;
        let reach = 3f64.sqrt();
        Camera::look_at(
            eye,
            Vec3::zeros(),
            Vec3::y(),
            c.fov_deg.to_radians(),
            self.image_width,
            self.image_height,
            (c.distance - reach).max(0.05),
            c.distance + reach,
        )
    }

    /// Colors per region, rounded to 8 bits.
    pub fn region_colors(&self) -> [[f64; 3]; 6] {
        let mut rng = Stream::derive(self.seed, 0x636f6c);
        let mut draw = || {
            let mut c = [0.0; 3];
            for v in &mut c {
                *v = (rng.uniform_range(0.15, 0.95) * 255.0).round() / 255.0;
            }
            c
        };
        let mut out = [[0.0; 3]; 6];
        match self.palette {
            PaletteKind::PerRegion => out.iter_mut().for_each(|c| *c = draw()),
            PaletteKind::TwoTone => {
                let (upper, lower) = (draw(), draw());
                for r in Region::ALL {
                    out[r.index()] = if r.is_leg() { lower } else { upper };
                }
            }
            PaletteKind::Uniform => out = [draw(); 6],
        }
        out
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        d.set("frame_count", self.frame_count);
        d.set("seed", self.seed);
        d.set("amplitude", self.amplitude);
        d.set("palette", self.palette.tag());
        d.set("image_width", self.image_width);
        d.set("image_height", self.image_height);
        d.set("voxel_resolution", self.voxel_resolution);
        d.set("surface_cell", self.surface_cell);
        let b = &self.body;
        d.set("body.scale", b.scale);
        d.set("body.torso_radius", b.torso_radius);
        d.set("body.head_radius", b.head_radius);
        d.set("body.upper_arm_radius", b.upper_arm_radius);
        d.set("body.forearm_radius", b.forearm_radius);
        d.set("body.thigh_radius", b.thigh_radius);
        d.set("body.shin_radius", b.shin_radius);
        let c = &self.camera;
        d.set("camera.azimuth_deg", c.azimuth_deg);
        d.set("camera.elevation_deg", c.elevation_deg);
        d.set("camera.distance", c.distance);
        d.set("camera.fov_deg", c.fov_deg);
        d.set("camera.orbit_deg_per_frame", c.orbit_deg_per_frame);
        d
    }

    /// Missing keys take their defaults; `path` is used in error messages.
    pub fn from_kv(d: &KvDoc, path: &Path) -> Result<Self> {
        let def = Self::default();
        let palette = match d.get("palette") {
            Some(tag) => PaletteKind::from_tag(tag)
                .ok_or_else(|| Error::format(path, format!("unknown palette `{tag}`")))?,
            None => def.palette,
        };
        let body = BodyDims {
            scale: d.parse_or("body.scale", def.body.scale)?,
            torso_radius: d.parse_or("body.torso_radius", def.body.torso_radius)?,
            head_radius: d.parse_or("body.head_radius", def.body.head_radius)?,
            upper_arm_radius: d.parse_or("body.upper_arm_radius", def.body.upper_arm_radius)?,
            forearm_radius: d.parse_or("body.forearm_radius", def.body.forearm_radius)?,
            thigh_radius: d.parse_or("body.thigh_radius", def.body.thigh_radius)?,
            shin_radius: d.parse_or("body.shin_radius", def.body.shin_radius)?,
        };
        let camera = OrbitCamera {
            azimuth_deg: d.parse_or("camera.azimuth_deg", def.camera.azimuth_deg)?,
            elevation_deg: d.parse_or("camera.elevation_deg", def.camera.elevation_deg)?,
            distance: d.parse_or("camera.distance", def.camera.distance)?,
            fov_deg: d.parse_or("camera.fov_deg", def.camera.fov_deg)?,
            orbit_deg_per_frame: d
                .parse_or("camera.orbit_deg_per_frame", def.camera.orbit_deg_per_frame)?,
        };
        let spec = Self {
            frame_count: d.parse_or("frame_count", def.frame_count)?,
            seed: d.parse_or("seed", def.seed)?,
            amplitude: d.parse_or("amplitude", def.amplitude)?,
            body,
            palette,
            camera,
            image_width: d.parse_or("image_width", def.image_width)?,
            image_height: d.parse_or("image_height", def.image_height)?,
            voxel_resolution: d.parse_or("voxel_resolution", def.voxel_resolution)?,
            surface_cell: d.parse_or("surface_cell", def.surface_cell)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}
