//! Lattice isosurface extraction with the classic 256-case tables.
//!
//! Vertices sit on lattice edges at the linear zero crossing of
//! `value - iso` and are shared between neighbouring cubes through a global
//! edge index, so closed fields give closed, edge-paired meshes. Ambiguous
//! face configurations are resolved by the fixed table entries (no asymptotic
//! decider); the table is built so adjacent cubes always agree on a shared
//! face, which is what keeps the output watertight.

use super::grid::VoxelGrid;
use super::mc_tables::{EDGE_TABLE, TRI_TABLE};
use super::mesh::TriMesh;
use super::Vec3;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Triangle mesh of the `iso` level set of `grid`. Triangles face toward
/// decreasing values, i.e. outward for occupancy-like fields. A grid with no
/// crossing yields an empty mesh.
pub fn marching_cubes(grid: &VoxelGrid, iso: f64) -> TriMesh {
    let layout = &grid.layout;
    let [nx, ny, nz] = layout.resolution;
    let n = layout.len();
    let mut edge_vertex = vec![u32::MAX; 3 * n];
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut values = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    values[c] = grid.get(i + off[0], j + off[1], k + off[2]);
                    if values[c] < iso {
                        case |= 1 << c;
                    }
                }
                let edges = EDGE_TABLE[case];
                if edges == 0 {
                    continue;
                }
                let mut local = [usize::MAX; 12];
                for (e, [ca, cb]) in EDGES.iter().enumerate() {
                    if edges & (1 << e) == 0 {
                        continue;
                    }
                    let (a, b) = (CORNERS[*ca], CORNERS[*cb]);
                    // Canonical endpoint order: the lower lattice node first.
                    let (lo_c, hi_c, lo, hi) = if a <= b {
                        (*ca, *cb, a, b)
                    } else {
                        (*cb, *ca, b, a)
                    };
                    let axis = (0..3).find(|&ax| lo[ax] != hi[ax]).unwrap();
                    let node = layout.index(i + lo[0], j + lo[1], k + lo[2]);
                    let key = 3 * node + axis;
                    if edge_vertex[key] == u32::MAX {
                        let (va, vb) = (values[lo_c], values[hi_c]);
                        let pa = layout.position(i + lo[0], j + lo[1], k + lo[2]);
                        let pb = layout.position(i + hi[0], j + hi[1], k + hi[2]);
                        let t = if vb != va {
                            (iso - va) / (vb - va)
                        } else {
                            0.5
                        };
                        vertices.push(pa + (pb - pa) * t);
                        edge_vertex[key] = (vertices.len() - 1) as u32;
                    }
                    local[e] = edge_vertex[key] as usize;
                }
                for tri in TRI_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    triangles.push([
                        local[tri[0] as usize],
                        local[tri[1] as usize],
                        local[tri[2] as usize],
                    ]);
                }
            }
        }
    }
    if triangles.is_empty() {
        return TriMesh::empty();
    }
    TriMesh::new(vertices, triangles).expect("marching cubes indices are valid")
}
