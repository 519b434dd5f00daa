#![allow(dead_code)]

use trecon::geometry::{TriMesh, Vec3, VoxelGrid};
use trecon::rng::Stream;
use trecon::sampling::{VoxelCorrespondence, IDENTITY_METHOD};

/// Generalized winding number via summed signed solid angles; about 1 inside
/// a closed outward-oriented mesh and 0 outside.
pub fn winding_number(mesh: &TriMesh, p: Vec3) -> f64 {
    let mut total = 0.0;
    for t in &mesh.triangles {
        let a = mesh.vertices[t[0]] - p;
        let b = mesh.vertices[t[1]] - p;
        let c = mesh.vertices[t[2]] - p;
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(&b.cross(&c));
        let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * std::f64::consts::PI)
}

pub fn winding_inside(mesh: &TriMesh, p: Vec3) -> bool {
    winding_number(mesh, p) > 0.5
}

/// Exhaustive symmetric Chamfer distance.
pub fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let one_way = |x: &[Vec3], y: &[Vec3]| {
        let mut sum = 0.0;
        for p in x {
            let mut best = f64::INFINITY;
            for q in y {
                let d = (p - q).norm_squared();
                if d < best {
                    best = d;
                }
            }
            sum += best.sqrt();
        }
        sum / x.len() as f64
    };
    0.5 * (one_way(a, b) + one_way(b, a))
}

/// Every file under `dir`, keyed by its relative path.
pub fn dir_snapshot(dir: &std::path::Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut std::collections::BTreeMap<std::path::PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Partial random map from frame `s` to frame `t`.
pub fn random_map(s: usize, t: usize, n: usize, rng: &mut Stream) -> VoxelCorrespondence {
    VoxelCorrespondence {
        source: s,
        target: t,
        map: (0..n)
            .map(|_| if rng.uniform() < 0.8 { Some(rng.index(n) as u32) } else { None })
            .collect(),
        method: IDENTITY_METHOD,
        coverage: 1.0,
    }
}

pub fn all_maps(frames: &[usize], n: usize, rng: &mut Stream) -> Vec<VoxelCorrespondence> {
    let mut out = Vec::new();
    for &s in frames {
        for &t in frames {
            if s != t {
                out.push(random_map(s, t, n, rng));
            }
        }
    }
    out
}

pub fn oracle_bce(pred: &[f64], gt: &[f64], gamma: f64, eps: f64) -> f64 {
    let mut sum = 0.0;
    for i in 0..pred.len() {
        let p = pred[i].clamp(eps, 1.0 - eps);
        let v = gt[i];
        sum += -(gamma * v * p.ln() + (1.0 - gamma) * (1.0 - v) * (1.0 - p).ln());
    }
    sum / pred.len() as f64
}

pub fn oracle_temporal_voxel(preds: &[VoxelGrid], frames: &[usize], maps: &[VoxelCorrespondence]) -> f64 {
    let mut total = 0.0;
    let mut first = true;
    for (a, &s) in frames.iter().enumerate() {
        for (b, &t) in frames.iter().enumerate() {
            if a == b {
                continue;
            }
            let m = maps.iter().find(|m| m.source == s && m.target == t).unwrap();
            let mut sum = 0.0;
            let mut count = 0usize;
            for (i, j) in m.map.iter().enumerate() {
                if let Some(j) = j {
                    let d = preds[a].values[i] - preds[b].values[*j as usize];
                    sum += d * d;
                    count += 1;
                }
            }
            let term = if count == 0 { 0.0 } else { sum / count as f64 };
            total = if first { term } else { total + term };
            first = false;
        }
    }
    total
}

pub fn oracle_temporal_color(preds: &[Vec<[f64; 3]>]) -> f64 {
    let n = preds[0].len() as f64;
    let mut total = 0.0;
    let mut first = true;
    for a in 0..preds.len() {
        for b in 0..preds.len() {
            if a == b {
                continue;
            }
            let mut sum = 0.0;
            for i in 0..preds[a].len() {
                for c in 0..3 {
                    let d = preds[a][i][c] - preds[b][i][c];
                    sum += d * d;
                }
            }
            total = if first { sum / n } else { total + sum / n };
            first = false;
        }
    }
    total
}

pub fn oracle_mse(pred: &[f64], labels: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..pred.len() {
        sum += (pred[i] - labels[i]) * (pred[i] - labels[i]);
    }
    sum / pred.len() as f64
}

pub fn oracle_color_l1(pred: &[[f64; 3]], labels: &[[f64; 3]]) -> f64 {
    let mut sum = 0.0;
    for i in 0..pred.len() {
        for k in 0..3 {
            sum += (pred[i][k] - labels[i][k]).abs();
        }
    }
    sum / pred.len() as f64
}
