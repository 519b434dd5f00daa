use std::collections::HashMap;

use super::Vec3;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Indexed triangle mesh with per-vertex colors and stable vertex ids.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub colors: Vec<[f64; 3]>,
    /// Identity of each vertex across a sequence.
    pub vertex_ids: Vec<usize>,
}

/// A point on a mesh surface: triangle index plus barycentric weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub triangle: usize,
    pub bary: [f64; 3],
}

impl TriMesh {
    /// Mesh with gray vertices and identity ids.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        let mesh = Self {
            colors: vec![[0.5; 3]; n],
            vertex_ids: (0..n).collect(),
            vertices,
            triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            triangles: Vec::new(),
            colors: Vec::new(),
            vertex_ids: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.colors.len() != n || self.vertex_ids.len() != n {
            return Err(Error::invalid(format!(
                "{n} vertices but {} colors and {} ids",
                self.colors.len(),
                self.vertex_ids.len()
            )));
        }
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::invalid(format!(
                "triangle {t:?} indexes past {n} vertices"
            )));
        }
        if self
            .colors
            .iter()
            .flatten()
            .any(|c| !(0.0..=1.0).contains(c))
        {
            return Err(Error::invalid("vertex colors must lie in [0,1]"));
        }
        Ok(())
    }

    /// Number of directed edges without a matching reverse edge. Zero means
    /// every edge is shared by exactly two consistently oriented triangles.
    pub fn unpaired_edges(&self) -> usize {
        let mut directed: HashMap<(usize, usize), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .filter(|(&(a, b), &count)| count != 1 || directed.get(&(b, a)) != Some(&1))
            .count()
    }

    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.unpaired_edges() == 0
    }

    pub fn require_watertight(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::NotWatertight(0));
        }
        match self.unpaired_edges() {
            0 => Ok(()),
            n => Err(Error::NotWatertight(n)),
        }
    }

    pub fn corners(&self, tri: usize) -> [Vec3; 3] {
        let t = self.triangles[tri];
        [
            self.vertices[t[0]],
            self.vertices[t[1]],
            self.vertices[t[2]],
        ]
    }

    /// Unnormalized normal `(b - a) x (c - a)`.
    pub fn triangle_cross(&self, tri: usize) -> Vec3 {
        let [a, b, c] = self.corners(tri);
        (b - a).cross(&(c - a))
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        0.5 * self.triangle_cross(tri).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    /// Signed enclosed volume; positive for outward-oriented closed meshes.
    pub fn volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let used: std::collections::HashSet<usize> =
            self.triangles.iter().flatten().copied().collect();
        used.len() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))),
        )
    }

    pub fn point_at(&self, sp: SurfacePoint) -> Vec3 {
        let [a, b, c] = self.corners(sp.triangle);
        a * sp.bary[0] + b * sp.bary[1] + c * sp.bary[2]
    }

    pub fn color_at(&self, sp: SurfacePoint) -> [f64; 3] {
        let t = self.triangles[sp.triangle];
        let mut out = [0.0; 3];
        for (k, &w) in sp.bary.iter().enumerate() {
            for ch in 0..3 {
                out[ch] += w * self.colors[t[k]][ch];
            }
        }
        out.map(|v| v.clamp(0.0, 1.0))
    }

    /// Area-weighted uniform surface samples.
    pub fn sample_surface(&self, n: usize, rng: &mut Stream) -> Vec<SurfacePoint> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            total += self.triangle_area(t);
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                let target = rng.uniform() * total;
                let triangle = cumulative
                    .partition_point(|&c| c <= target)
                    .min(self.triangles.len() - 1);
                let (r1, r2) = (rng.uniform(), rng.uniform());
                let s = r1.sqrt();
                let bary = [1.0 - s, s * (1.0 - r2), s * r2];
                SurfacePoint { triangle, bary }
            })
            .collect()
    }

    pub fn sample_surface_points(&self, n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = Stream::derive(seed, 0x5af);
        self.sample_surface(n, &mut rng)
            .into_iter()
            .map(|sp| self.point_at(sp))
            .collect()
    }

    pub fn translated(&self, d: Vec3) -> Self {
        let mut m = self.clone();
        m.vertices.iter_mut().for_each(|v| *v += d);
        m
    }

    pub fn with_uniform_color(mut self, color: [f64; 3]) -> Self {
        self.colors = vec![color; self.vertices.len()];
        self
    }

    pub fn flip_orientation(&mut self) {
        for t in &mut self.triangles {
            t.swap(1, 2);
        }
    }

    /// Geodesic sphere: an icosahedron subdivided `levels` times, projected
    /// onto the sphere.
    pub fn icosphere(center: Vec3, radius: f64, levels: usize) -> Self {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vec3> = [
            (-1.0, phi, 0.0),
            (1.0, phi, 0.0),
            (-1.0, -phi, 0.0),
            (1.0, -phi, 0.0),
            (0.0, -1.0, phi),
            (0.0, 1.0, phi),
            (0.0, -1.0, -phi),
            (0.0, 1.0, -phi),
            (phi, 0.0, -1.0),
            (phi, 0.0, 1.0),
            (-phi, 0.0, -1.0),
            (-phi, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
        let mut tris: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..levels {
            let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(tris.len() * 4);
            let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
                *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    verts.push((verts[a] + verts[b]).normalize());
                    verts.len() - 1
                })
            };
            for [a, b, c] in tris {
                let ab = midpoint(a, b, &mut verts);
                let bc = midpoint(b, c, &mut verts);
                let ca = midpoint(c, a, &mut verts);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            tris = next;
        }
        let vertices = verts.into_iter().map(|v| center + v * radius).collect();
        Self::new(vertices, tris).expect("icosphere indices are valid")
    }
}

/// Closest point on triangle `abc` to `p`, as barycentric weights.
pub fn closest_point_barycentric(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [1.0 - v - w, v, w]
}
