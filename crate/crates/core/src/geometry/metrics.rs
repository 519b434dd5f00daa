use std::collections::HashMap;

use super::grid::VoxelGrid;
use super::Vec3;
use crate::error::{Error, Result};

/// Uniform-grid nearest-neighbour index over a point set.
#[derive(Clone, Debug)]
pub struct PointIndex {
    points: Vec<Vec3>,
    lo: Vec3,
    cell: f64,
    dims: [i64; 3],
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl PointIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let (lo, hi) = points.iter().fold(
            (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
            |(l, h), p| (l.inf(p), h.sup(p)),
        );
        let ext = if points.is_empty() {
            Vec3::zeros()
        } else {
            hi - lo
        };
        let volume = ext.iter().map(|e| e.max(1e-9)).product::<f64>();
        // Roughly two points per cell.
        let cell = (2.0 * volume / points.len().max(1) as f64)
            .cbrt()
            .max(ext.max() / 256.0)
            .max(1e-9);
        let mut index = Self {
            points: points.to_vec(),
            lo,
            cell,
            dims: [0; 3],
            cells: HashMap::new(),
        };
        for a in 0..3 {
            index.dims[a] = (ext[a] / cell).floor() as i64 + 1;
        }
        for (i, p) in points.iter().enumerate() {
            let c = index.cell_of(*p);
            index.cells.entry(c).or_default().push(i);
        }
        index
    }

    fn cell_of(&self, p: Vec3) -> [i64; 3] {
        let mut c = [0i64; 3];
        for a in 0..3 {
            c[a] = ((p[a] - self.lo[a]) / self.cell).floor() as i64;
        }
        c
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point. The squared distance
    /// is computed as `(q - p).norm_squared()`, exactly as an exhaustive scan
    /// would.
    pub fn nearest(&self, q: Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        // Start from the nearest occupied-range cell; the ring bound still
        // holds on clamped axes.
        let mut qc = self.cell_of(q);
        for a in 0..3 {
            qc[a] = qc[a].clamp(0, self.dims[a] - 1);
        }
        let mut best: Option<(usize, f64)> = None;
        let mut ring = 0i64;
        loop {
            self.visit_ring(qc, ring, |i| {
                let d = (q - self.points[i]).norm_squared();
                if best.is_none_or(|(bi, bd)| d < bd || (d == bd && i < bi)) {
                    best = Some((i, d));
                }
            });
            // Points in rings beyond `ring` are at least `ring * cell` away.
            let reach = ring as f64 * self.cell;
            if let Some((_, bd)) = best {
                if bd < reach * reach * (1.0 - 1e-9) {
                    break;
                }
            }
            let covers_all = (0..3).all(|a| qc[a] - ring <= 0 && qc[a] + ring >= self.dims[a] - 1);
            if covers_all {
                break;
            }
            ring += 1;
        }
        best
    }

    fn visit_ring(&self, c: [i64; 3], r: i64, mut f: impl FnMut(usize)) {
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                        continue;
                    }
                    let key = [c[0] + dx, c[1] + dy, c[2] + dz];
                    if (0..3).any(|a| key[a] < 0 || key[a] >= self.dims[a]) {
                        continue;
                    }
                    if let Some(list) = self.cells.get(&key) {
                        list.iter().for_each(|&i| f(i));
                    }
                }
            }
        }
    }
}

fn mean_nearest(from: &[Vec3], to: &PointIndex) -> f64 {
    let dists = crate::par::map_slice(from, |&p| to.nearest(p).unwrap().1.sqrt());
    dists.iter().fold(0.0, |acc, d| acc + d) / from.len() as f64
}

/// Symmetric chamfer distance
/// `0.5 * (mean_a min_b |a-b| + mean_b min_a |a-b|)`, in the input units.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty point set"));
    }
    let (ia, ib) = (PointIndex::new(a), PointIndex::new(b));
    Ok(0.5 * (mean_nearest(a, &ib) + mean_nearest(b, &ia)))
}

/// Chamfer distance of point sets given in meters, reported in centimeters.
pub fn chamfer_distance_cm(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    Ok(100.0 * chamfer_distance(a, b)?)
}

/// `|A and B| / |A or B|` of two binary grids (values above 0.5 count as
/// occupied); 1 when both are empty.
pub fn voxel_iou(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    if !a.same_layout(b) {
        return Err(Error::shape(format!(
            "voxel grids differ: {:?} vs {:?}",
            a.layout, b.layout
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let (x, y) = (x > 0.5, y > 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// IoU restricted to the voxels where `region` is true.
pub fn masked_iou(a: &VoxelGrid, b: &VoxelGrid, region: &[bool]) -> Result<f64> {
    if !a.same_layout(b) || region.len() != a.values.len() {
        return Err(Error::shape("masked IoU inputs differ in size"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for ((&x, &y), &r) in a.values.iter().zip(&b.values).zip(region) {
        if !r {
            continue;
        }
        let (x, y) = (x > 0.5, y > 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}
