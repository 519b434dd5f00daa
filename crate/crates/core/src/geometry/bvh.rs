//! Bounding-volume hierarchy over mesh triangles for ray-parity and
//! closest-point queries.

use super::mesh::{closest_point_barycentric, SurfacePoint, TriMesh};
use super::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: `start..start+count` into `order`; inner: children at `start`, `start+1`.
    start: usize,
    count: usize,
}

#[derive(Clone, Debug)]
pub struct TriangleBvh {
    tris: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug)]
pub struct ClosestHit {
    pub point: SurfacePoint,
    pub position: Vec3,
    pub dist_sq: f64,
}

impl TriangleBvh {
    pub fn new(mesh: &TriMesh) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|t| mesh.corners(t)).collect();
        let mut bvh = Self {
            order: (0..tris.len()).collect(),
            tris,
            nodes: Vec::new(),
        };
        if !bvh.tris.is_empty() {
            let centroids: Vec<Vec3> = bvh
                .tris
                .iter()
                .map(|t| (t[0] + t[1] + t[2]) / 3.0)
                .collect();
            bvh.nodes.push(Node {
                lo: Vec3::zeros(),
                hi: Vec3::zeros(),
                start: 0,
                count: 0,
            });
            let n = bvh.tris.len();
            bvh.build(0, 0, n, &centroids);
        }
        bvh
    }

    fn bounds(&self, start: usize, end: usize) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &t in &self.order[start..end] {
            for v in &self.tris[t] {
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
        }
        (lo, hi)
    }

    fn build(&mut self, node: usize, start: usize, end: usize, centroids: &[Vec3]) {
        let (lo, hi) = self.bounds(start, end);
        self.nodes[node].lo = lo;
        self.nodes[node].hi = hi;
        if end - start <= LEAF_SIZE {
            self.nodes[node].start = start;
            self.nodes[node].count = end - start;
            return;
        }
        let (clo, chi) = self.order[start..end].iter().fold(
            (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
            |(l, h), &t| (l.inf(&centroids[t]), h.sup(&centroids[t])),
        );
        let ext = chi - clo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis]
                .partial_cmp(&centroids[b][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let left = self.nodes.len();
        for _ in 0..2 {
            self.nodes.push(Node {
                lo: Vec3::zeros(),
                hi: Vec3::zeros(),
                start: 0,
                count: 0,
            });
        }
        self.nodes[node].start = left;
        self.nodes[node].count = 0;
        self.build(left, start, mid, centroids);
        self.build(left + 1, mid, end, centroids);
    }

    /// Number of triangles crossed by the ray `origin + t * dir`, `t > 0`.
    pub fn count_ray_hits(&self, origin: Vec3, dir: Vec3) -> usize {
        if self.nodes.is_empty() {
            return 0;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = vec![0usize];
        let mut hits = 0;
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !ray_hits_box(origin, inv, node.lo, node.hi) {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    if ray_triangle(origin, dir, &self.tris[t]) {
                        hits += 1;
                    }
                }
            } else {
                stack.push(node.start);
                stack.push(node.start + 1);
            }
        }
        hits
    }

    /// Closest surface point to `p`; ties go to the lowest triangle index.
    pub fn closest(&self, p: Vec3) -> Option<ClosestHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<ClosestHit> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let bound = box_dist_sq(p, node.lo, node.hi);
            if best.is_some_and(|b| bound > b.dist_sq) {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = self.tris[t];
                    let bary = closest_point_barycentric(p, a, b, c);
                    let q = a * bary[0] + b * bary[1] + c * bary[2];
                    let d = (p - q).norm_squared();
                    let better = match best {
                        None => true,
                        Some(cur) => {
                            d < cur.dist_sq || (d == cur.dist_sq && t < cur.point.triangle)
                        }
                    };
                    if better {
                        best = Some(ClosestHit {
                            point: SurfacePoint { triangle: t, bary },
                            position: q,
                            dist_sq: d,
                        });
                    }
                }
            } else {
                let (l, r) = (node.start, node.start + 1);
                let (dl, dr) = (
                    box_dist_sq(p, self.nodes[l].lo, self.nodes[l].hi),
                    box_dist_sq(p, self.nodes[r].lo, self.nodes[r].hi),
                );
                // Visit the nearer child first.
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }
}

fn box_dist_sq(p: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let mut d = 0.0;
    for a in 0..3 {
        let v = if p[a] < lo[a] {
            lo[a] - p[a]
        } else if p[a] > hi[a] {
            p[a] - hi[a]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

fn ray_hits_box(origin: Vec3, inv: Vec3, lo: Vec3, hi: Vec3) -> bool {
    let mut tmin: f64 = 0.0;
    let mut tmax = f64::INFINITY;
    for a in 0..3 {
        let t1 = (lo[a] - origin[a]) * inv[a];
        let t2 = (hi[a] - origin[a]) * inv[a];
        tmin = tmin.max(t1.min(t2));
        tmax = tmax.min(t1.max(t2));
    }
    tmin <= tmax
}

/// Möller–Trumbore test restricted to `t > 0`.
fn ray_triangle(origin: Vec3, dir: Vec3, tri: &[Vec3; 3]) -> bool {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pv = dir.cross(&e2);
    let det = e1.dot(&pv);
    if det.abs() < 1e-300 {
        return false;
    }
    let inv_det = 1.0 / det;
    let tv = origin - tri[0];
    let u = tv.dot(&pv) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let qv = tv.cross(&e1);
    let v = dir.dot(&qv) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(&qv) * inv_det > 0.0
}
