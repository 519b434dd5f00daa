//! Procedurally generated deforming capsule bodies with exact per-vertex
//! correspondences, rendered frames and ground-truth voxelizations.

mod body;
mod dataset;
mod render;
mod spec;

pub use body::{skin_point, union_sdf, Body, BodyDims, Capsule, Region, Rigid};
pub use dataset::{export_dataset, load_dataset, DATASET_FORMAT_VERSION, MANIFEST_NAME};
pub use render::{render_frame, view_direction, AMBIENT};
pub use spec::{OrbitCamera, PaletteKind, SequenceSpec};

use crate::error::{Error, Result};
use crate::geometry::{
    marching_cubes, voxelize, Camera, GridKind, GridLayout, Image, TriMesh, Vec3, VoxelGrid,
};

/// Width of the softmin blend between neighbouring capsules.
pub const SKIN_TAU: f64 = 0.015;

#[derive(Clone, Debug, PartialEq)]
pub struct FrameBundle {
    pub image: Image,
    pub mask: Vec<bool>,
    pub camera: Camera,
    pub gt_mesh: TriMesh,
    pub gt_voxels: VoxelGrid,
}

/// Frames share triangles and vertex ids, so vertex `i` of one frame
/// corresponds to vertex `i` of every other frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub spec: SequenceSpec,
    pub frames: Vec<FrameBundle>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn voxel_layout(&self) -> GridLayout {
        self.frames[0].gt_voxels.layout
    }

    /// Posed capsules of `frame`, for analytic inside tests.
    pub fn posed_capsules(&self, frame: usize) -> Result<Vec<Capsule>> {
        let body = Body::new(&self.spec.body, self.spec.seed)?;
        Ok(body.posed_capsules(&body.pose(self.spec.amplitude, frame, self.spec.frame_count)))
    }
}

/// Voxel bounds shared by every frame of a sequence: `[-1, 1]^3`.
pub fn voxel_layout(resolution: usize) -> Result<GridLayout> {
    GridLayout::centered_cube(1.0, resolution)
}

/// Rest-pose surface: marching cubes on the capsule-union distance field.
pub fn rest_surface(body: &Body, cell: f64) -> Result<TriMesh> {
    let caps = body.rest_capsules();
    let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    for c in &caps {
        let r = Vec3::repeat(c.radius);
        lo = lo.inf(&(c.a - r)).inf(&(c.b - r));
        hi = hi.sup(&(c.a + r)).sup(&(c.b + r));
    }
    lo -= Vec3::repeat(2.0 * cell);
    hi += Vec3::repeat(2.0 * cell);
    let mut res = [0; 3];
    for a in 0..3 {
        res[a] = ((hi[a] - lo[a]) / cell).ceil() as usize + 1;
    }
    let layout = GridLayout::new(res, lo, [cell; 3])?;
    let values = crate::par::map_indices(layout.len(), |i| -body.rest_sdf(layout.position_of(i)));
    let field = VoxelGrid::new(layout, GridKind::Logit, values)?;
    let mesh = marching_cubes(&field, 0.0);
    mesh.require_watertight()?;
    Ok(mesh)
}

pub fn generate_sequence(spec: &SequenceSpec) -> Result<Sequence> {
    spec.validate()?;
    let body = Body::new(&spec.body, spec.seed)?;
    let mut rest = rest_surface(&body, spec.surface_cell)?;
    let weights = crate::par::map_slice(&rest.vertices, |&v| body.skin_weights(v, SKIN_TAU));
    let palette = spec.region_colors();
    rest.colors = weights
        .iter()
        .map(|w| {
            // Dominant bone, lowest index on ties.
            let (bone, _) = w
                .iter()
                .fold((usize::MAX, f64::NEG_INFINITY), |best, &(b, x)| {
                    if x > best.1 {
                        (b, x)
                    } else {
                        best
                    }
                });
            palette[body.region(bone).index()]
        })
        .collect();

    let layout = voxel_layout(spec.voxel_resolution)?;
    // Stay inside the outermost cell centers so boundary voxels stay empty.
    let limit = 1.0 - 0.5 * layout.spacing[0];
    let frames = crate::par::map_indices(spec.frame_count, |f| -> Result<FrameBundle> {
        let pose = body.pose(spec.amplitude, f, spec.frame_count);
        let vertices: Vec<Vec3> = rest
            .vertices
            .iter()
            .zip(&weights)
            .map(|(&v, w)| skin_point(v, w, &pose))
            .collect();
        if vertices.iter().any(|v| v.amax() >= limit) {
            return Err(Error::BoundsViolation { frame: f });
        }
        let gt_mesh = TriMesh {
            vertices,
            ..rest.clone()
        };
        let camera = spec.camera_for_frame(f)?;
        let (image, mask) = render_frame(&gt_mesh, &camera, view_direction(&camera))?;
        let gt_voxels = voxelize(&gt_mesh, &layout)?;
        Ok(FrameBundle {
            image,
            mask,
            camera,
            gt_mesh,
            gt_voxels,
        })
    });
    let frames = frames.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        spec: spec.clone(),
        frames,
    })
}
