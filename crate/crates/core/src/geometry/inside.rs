use super::bvh::TriangleBvh;
use super::grid::{GridKind, GridLayout, VoxelGrid};
use super::mesh::TriMesh;
use super::Vec3;
use crate::error::{Error, Result};

/// Fixed, slightly skewed ray directions. Three independent parity votes make
/// a grazing hit on a shared edge or vertex unable to flip the answer alone.
fn vote_directions() -> [Vec3; 3] {
    [
        Vec3::new(1.0, 0.012_345_7, 0.031_415_9).normalize(),
        Vec3::new(-0.027_182_8, 1.0, 0.014_142_1).normalize(),
        Vec3::new(0.017_320_5, -0.022_360_7, 1.0).normalize(),
    ]
}

/// Inside/outside oracle for one watertight mesh.
#[derive(Clone, Debug)]
pub struct InsideTester {
    bvh: TriangleBvh,
    lo: Vec3,
    hi: Vec3,
}

impl InsideTester {
    pub fn new(mesh: &TriMesh) -> Result<Self> {
        mesh.require_watertight()?;
        let (lo, hi) = mesh.bounds().expect("watertight mesh has vertices");
        Ok(Self {
            bvh: TriangleBvh::new(mesh),
            lo,
            hi,
        })
    }

    pub fn contains(&self, p: Vec3) -> bool {
        if (0..3).any(|a| p[a] < self.lo[a] || p[a] > self.hi[a]) {
            return false;
        }
        let odd = vote_directions()
            .iter()
            .filter(|d| self.bvh.count_ray_hits(p, **d) % 2 == 1)
            .count();
        odd >= 2
    }

    pub fn label(&self, p: Vec3) -> f64 {
        if self.contains(p) {
            1.0
        } else {
            0.0
        }
    }

    pub fn bvh(&self) -> &TriangleBvh {
        &self.bvh
    }
}

/// 1 if `p` is inside the watertight `mesh`, else 0.
pub fn point_in_mesh(mesh: &TriMesh, p: Vec3) -> Result<u8> {
    Ok(InsideTester::new(mesh)?.contains(p) as u8)
}

/// Binary grid whose node values are the inside test at each node (the
/// nodes of [`GridLayout::cell_centers`] layouts are voxel centers).
pub fn voxelize(mesh: &TriMesh, layout: &GridLayout) -> Result<VoxelGrid> {
    let tester = InsideTester::new(mesh)?;
    let (lo, hi) = mesh.bounds().expect("non-empty");
    let (blo, bhi) = (layout.cell_min(), layout.cell_max());
    if (0..3).any(|a| lo[a] < blo[a] || hi[a] > bhi[a]) {
        return Err(Error::invalid(format!(
            "mesh bounds {:?}..{:?} exceed grid bounds {:?}..{:?}",
            lo.as_slice(),
            hi.as_slice(),
            blo.as_slice(),
            bhi.as_slice()
        )));
    }
    let values = crate::par::map_indices(layout.len(), |i| tester.label(layout.position_of(i)));
    VoxelGrid::new(*layout, GridKind::Label, values)
}
