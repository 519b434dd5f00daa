//! Carrying points between frames through the shared mesh topology.

use crate::error::{Error, Result};
use crate::geometry::{GridLayout, SurfacePoint, TriMesh, TriangleBvh, Vec3};
use crate::synthgen::Sequence;

use super::SampleSet;

/// A point stored relative to a surface triangle: barycentric foot point plus
/// offset in the triangle's local frame (edge, in-plane normal, face normal).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub foot: SurfacePoint,
    pub local: [f64; 3],
}

fn local_frame(mesh: &TriMesh, tri: usize) -> [Vec3; 3] {
    let [a, b, c] = mesh.corners(tri);
    let e1 = (b - a).try_normalize(1e-300).unwrap_or_else(Vec3::x);
    let n = (b - a).cross(&(c - a)).try_normalize(1e-300).unwrap_or_else(Vec3::z);
    [e1, n.cross(&e1), n]
}

impl Anchor {
    pub fn new(mesh: &TriMesh, bvh: &TriangleBvh, p: Vec3) -> Option<Anchor> {
        let hit = bvh.closest(p)?;
        let d = p - hit.position;
        let f = local_frame(mesh, hit.point.triangle);
        Some(Anchor {
            foot: hit.point,
            local: [d.dot(&f[0]), d.dot(&f[1]), d.dot(&f[2])],
        })
    }

    /// Position of the anchor on a mesh with the same topology.
    pub fn place(&self, mesh: &TriMesh) -> Vec3 {
        let f = local_frame(mesh, self.foot.triangle);
        mesh.point_at(self.foot) + f[0] * self.local[0] + f[1] * self.local[1] + f[2] * self.local[2]
    }

    /// Offset along the face normal; positive outside for outward meshes.
    pub fn normal_offset(&self) -> f64 {
        self.local[2]
    }

    pub fn distance(&self) -> f64 {
        (self.local[0].powi(2) + self.local[1].powi(2) + self.local[2].powi(2)).sqrt()
    }
}

fn check_topology(seq: &Sequence) -> Result<()> {
    let t0 = &seq.frames[0].gt_mesh.triangles;
    if seq.frames.iter().any(|f| &f.gt_mesh.triangles != t0) {
        return Err(Error::invalid("frames do not share mesh topology"));
    }
    Ok(())
}

/// Fills `samples.tracked` with each point carried to every frame of `seq`.
/// Points farther than 3 sigma from the source surface are flagged in `far`.
pub fn track_samples(samples: &SampleSet, seq: &Sequence) -> Result<SampleSet> {
    let src = samples.source_frame;
    if src >= seq.len() {
        return Err(Error::invalid(format!(
            "source frame {src} outside a {}-frame sequence",
            seq.len()
        )));
    }
    check_topology(seq)?;
    let mesh = &seq.frames[src].gt_mesh;
    let bvh = TriangleBvh::new(mesh);
    let anchors = crate::par::map_slice(&samples.points, |&p| Anchor::new(mesh, &bvh, p));
    let anchors: Vec<Anchor> = anchors
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| Error::invalid("cannot track points on an empty mesh"))?;
    let limit = 3.0 * samples.sigma;
    let mut out = samples.clone();
    out.far = anchors.iter().map(|a| a.distance() > limit).collect();
    out.tracked = seq
        .frames
        .iter()
        .enumerate()
        .map(|(t, fr)| {
            if t == src {
                samples.points.clone()
            } else {
                anchors.iter().map(|a| a.place(&fr.gt_mesh)).collect()
            }
        })
        .collect();
    Ok(out)
}

/// Dense voxel index map between two frames; `map[i]` is the target voxel of
/// source voxel `i`, or `None` when the transported point leaves the grid or
/// the source voxel was excluded.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelCorrespondence {
    pub source: usize,
    pub target: usize,
    pub map: Vec<Option<u32>>,
    pub method: &'static str,
    /// Mapped share of occupied source voxels.
    pub coverage: f64,
}

pub const IDENTITY_METHOD: &str = "identity";
pub const TRANSPORT_METHOD: &str = "closest-triangle-transport";

impl VoxelCorrespondence {
    pub fn identity(frame: usize, layout: &GridLayout) -> Self {
        Self {
            source: frame,
            target: frame,
            map: (0..layout.len() as u32).map(Some).collect(),
            method: IDENTITY_METHOD,
            coverage: 1.0,
        }
    }

    pub fn mapped_count(&self) -> usize {
        self.map.iter().filter(|m| m.is_some()).count()
    }

    /// (source, target) voxel pairs.
    pub fn pairs(&self) -> Vec<(u32, u32)> {
        self.map
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|j| (i as u32, j)))
            .collect()
    }
}

/// Each voxel center of frame `t` is anchored to its closest point on the
/// frame-`t` mesh and transported to frame `l`. With `occupied_only`, only
/// voxels occupied in frame `t`'s ground truth are mapped.
pub fn voxel_correspondence(
    seq: &Sequence,
    t: usize,
    l: usize,
    layout: &GridLayout,
    occupied_only: bool,
) -> Result<VoxelCorrespondence> {
    if t >= seq.len() || l >= seq.len() {
        return Err(Error::invalid("frame index outside the sequence"));
    }
    if t == l {
        return Ok(VoxelCorrespondence::identity(t, layout));
    }
    check_topology(seq)?;
    let (src, dst) = (&seq.frames[t].gt_mesh, &seq.frames[l].gt_mesh);
    let occupied: Vec<bool> = {
        let gt = &seq.frames[t].gt_voxels;
        if gt.layout == *layout {
            gt.values.iter().map(|&v| v > 0.5).collect()
        } else {
            let vox = crate::geometry::voxelize(src, layout)?;
            vox.values.iter().map(|&v| v > 0.5).collect()
        }
    };
    let bvh = TriangleBvh::new(src);
    let map = crate::par::map_indices(layout.len(), |i| {
        if occupied_only && !occupied[i] {
            return None;
        }
        let a = Anchor::new(src, &bvh, layout.position_of(i))?;
        layout.cell_containing(a.place(dst)).map(|j| j as u32)
    });
    let occ_total = occupied.iter().filter(|&&o| o).count();
    let occ_mapped = occupied.iter().zip(&map).filter(|(&o, m)| o && m.is_some()).count();
    Ok(VoxelCorrespondence {
        source: t,
        target: l,
        map,
        method: TRANSPORT_METHOD,
        coverage: if occ_total == 0 { 1.0 } else { occ_mapped as f64 / occ_total as f64 },
    })
}

/// Correspondences for every ordered pair `(t, l)`, `t != l`, in row order.
pub fn all_pair_correspondences(
    seq: &Sequence,
    frames: &[usize],
    layout: &GridLayout,
    occupied_only: bool,
) -> Result<Vec<VoxelCorrespondence>> {
    let mut out = Vec::new();
    for &t in frames {
        for &l in frames {
            if t != l {
                out.push(voxel_correspondence(seq, t, l, layout, occupied_only)?);
            }
        }
    }
    Ok(out)
}
