mod common;

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3};
use proptest::prelude::*;
use trecon::geometry::{
    chamfer_distance, marching_cubes, point_in_mesh, voxel_iou, voxelize, Camera, GridKind, GridLayout,
    InsideTester, TriMesh, Vec3, VoxelGrid,
};
use trecon::rng::Stream;

fn random_cloud(n: usize, rng: &mut Stream) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.uniform(), rng.uniform(), rng.uniform()))
        .collect()
}

/// Occupancy ramp of width two cells around a sphere.
fn sphere_field(layout: GridLayout, r: f64) -> VoxelGrid {
    let h = layout.spacing[0];
    VoxelGrid::from_fn(layout, GridKind::Occupancy, |p| (0.5 + (r - p.norm()) / (2.0 * h)).clamp(0.0, 1.0))
}

#[test]
fn sphere_area_and_volume_within_two_percent() {
    let r = 0.4;
    let layout = GridLayout::centered_cube(0.5, 64).unwrap();
    let m = marching_cubes(&sphere_field(layout, r), 0.5);
    assert!(m.is_watertight());
    assert_eq!(m.euler_characteristic(), 2);
    let area = 4.0 * PI * r * r;
    let vol = 4.0 / 3.0 * PI * r * r * r;
    assert!((m.surface_area() - area).abs() / area < 0.02, "{}", m.surface_area());
    assert!((m.volume() - vol).abs() / vol < 0.02, "{}", m.volume());
}

#[test]
fn voxelized_sphere_volume_and_empty_region() {
    let s = TriMesh::icosphere(Vec3::zeros(), 0.5, 4);
    let layout = GridLayout::centered_cube(0.6, 48).unwrap();
    let g = voxelize(&s, &layout).unwrap();
    let cell = layout.spacing.iter().product::<f64>();
    let vol = g.occupied_count() as f64 * cell;
    // The icosphere is inscribed, so compare against its own enclosed volume.
    assert!((vol - s.volume()).abs() / s.volume() < 0.02, "{vol} vs {}", s.volume());
    assert!(voxelize(&s, &GridLayout::centered_cube(0.3, 8).unwrap()).is_err());
}

#[test]
fn point_in_mesh_agrees_with_winding_number() {
    let meshes = [
        TriMesh::icosphere(Vec3::zeros(), 1.0, 3),
        TriMesh::icosphere(Vec3::new(0.2, -0.1, 0.3), 0.6, 2),
    ];
    let mut rng = Stream::new(4);
    for m in &meshes {
        let t = InsideTester::new(m).unwrap();
        let bvh = t.bvh();
        let mut checked = 0;
        while checked < 1000 {
            let p = Vec3::new(
                rng.uniform_range(-1.3, 1.3),
                rng.uniform_range(-1.3, 1.3),
                rng.uniform_range(-1.3, 1.3),
            );
            if bvh.closest(p).unwrap().dist_sq < 1e-12 {
                continue;
            }
            assert_eq!(t.contains(p), common::winding_inside(m, p), "{p:?}");
            checked += 1;
        }
    }
    assert_eq!(point_in_mesh(&meshes[0], Vec3::zeros()).unwrap(), 1);
    assert_eq!(point_in_mesh(&meshes[0], Vec3::new(2.0, 0.0, 0.0)).unwrap(), 0);
}

#[test]
fn chamfer_equals_brute_force_exactly() {
    let mut rng = Stream::new(8);
    for _ in 0..3 {
        let a = random_cloud(500, &mut rng);
        let b = random_cloud(500, &mut rng);
        assert_eq!(chamfer_distance(&a, &b).unwrap(), common::brute_chamfer(&a, &b));
    }
    let o = [Vec3::zeros()];
    let z = [Vec3::new(0.0, 0.0, 1.0)];
    assert_eq!(chamfer_distance(&o, &z).unwrap(), 1.0);
    assert!(chamfer_distance(&o, &[]).is_err());
}

#[test]
fn iou_counts_directly() {
    let layout = GridLayout::centered_cube(1.0, 12).unwrap();
    let mut rng = Stream::new(6);
    let mut a = VoxelGrid::filled(layout, GridKind::Label, 0.0);
    let mut b = a.clone();
    for i in 0..layout.len() {
        a.values[i] = (rng.uniform() < 0.3) as u8 as f64;
        b.values[i] = (rng.uniform() < 0.4) as u8 as f64;
    }
    let inter = a.values.iter().zip(&b.values).filter(|(x, y)| **x == 1.0 && **y == 1.0).count();
    let union = a.values.iter().zip(&b.values).filter(|(x, y)| **x == 1.0 || **y == 1.0).count();
    assert_eq!(voxel_iou(&a, &b).unwrap(), inter as f64 / union as f64);
    assert_eq!(voxel_iou(&a, &a).unwrap(), 1.0);
    let other = VoxelGrid::filled(GridLayout::centered_cube(1.0, 10).unwrap(), GridKind::Label, 0.0);
    assert!(voxel_iou(&a, &other).is_err());
}

#[test]
fn voxelize_marching_cubes_voxelize_is_stable_up_to_boundary() {
    let body = TriMesh::icosphere(Vec3::new(0.05, -0.02, 0.0), 0.55, 3);
    let layout = GridLayout::centered_cube(1.0, 24).unwrap();
    let g = voxelize(&body, &layout).unwrap();
    let m = marching_cubes(&g, 0.5);
    assert!(m.is_watertight());
    let g2 = voxelize(&m, &layout).unwrap();
    let [n, _, _] = layout.resolution;
    for idx in 0..layout.len() {
        if g.values[idx] == g2.values[idx] {
            continue;
        }
        let [i, j, k] = layout.coords(idx);
        let mut on_boundary = false;
        for (di, dj, dk) in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)] {
            let (a, b, c) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
            if [a, b, c].iter().all(|&x| x >= 0 && x < n as i64)
                && g.get(a as usize, b as usize, c as usize) != g.values[idx]
            {
                on_boundary = true;
            }
        }
        assert!(on_boundary, "interior voxel {idx} changed");
    }
}

#[test]
fn camera_round_trip_on_random_cameras() {
    let mut rng = Stream::new(12);
    for _ in 0..50 {
        let axis = Vec3::new(rng.gaussian(), rng.gaussian(), rng.gaussian()).normalize();
        let rot: Matrix3<f64> = *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), rng.uniform_range(0.0, PI)).matrix();
        let t = Vec3::new(rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0), rng.uniform_range(2.0, 4.0));
        let cam = Camera::new(300.0, 310.0, 64.0, 60.0, 128, 120, rot, t, 0.1, 10.0).unwrap();
        let local = Vec3::new(rng.uniform_range(-0.5, 0.5), rng.uniform_range(-0.5, 0.5), rng.uniform_range(1.0, 3.0));
        let p = rot.transpose() * (local - t);
        let (uv, d) = cam.project(p).unwrap();
        assert!((cam.back_project(uv, d) - p).norm() < 1e-9);
    }
}

#[test]
fn pinhole_formula_with_identity_extrinsics() {
    let cam = Camera::new(100.0, 100.0, 32.0, 24.0, 64, 48, Matrix3::identity(), Vec3::zeros(), 0.5, 5.0).unwrap();
    let (uv, d) = cam.project(Vec3::new(0.3, 0.0, 2.0)).unwrap();
    assert!((uv[0] - (32.0 + 100.0 * 0.3 / 2.0)).abs() < 1e-12);
    assert!((uv[1] - 24.0).abs() < 1e-12);
    assert_eq!(d, 2.0);
    let (uv, d) = cam.project(Vec3::new(0.0, 0.0, 3.0)).unwrap();
    assert_eq!((uv, d), ([32.0, 24.0], 3.0));
    assert!(cam.project(Vec3::new(0.0, 0.0, -1.0)).is_err());
}

#[test]
fn grid_nodes_and_cell_centers() {
    let layout = GridLayout::new([4, 5, 6], Vec3::new(-1.0, 0.5, 2.0), [0.3, 0.2, 0.1]).unwrap();
    let mut rng = Stream::new(2);
    let vals: Vec<f64> = (0..layout.len()).map(|_| rng.uniform()).collect();
    let g = VoxelGrid::new(layout, GridKind::Occupancy, vals).unwrap();
    for idx in 0..layout.len() {
        assert_eq!(g.trilinear_sample(layout.position_of(idx)), g.values[idx]);
    }
    let center = (layout.position(1, 2, 3) + layout.position(2, 3, 4)) * 0.5;
    let mean: f64 = [
        (1, 2, 3),
        (2, 2, 3),
        (1, 3, 3),
        (2, 3, 3),
        (1, 2, 4),
        (2, 2, 4),
        (1, 3, 4),
        (2, 3, 4),
    ]
    .iter()
    .map(|&(i, j, k)| g.get(i, j, k))
    .sum::<f64>()
        / 8.0;
    assert!((g.trilinear_sample(center) - mean).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trilinear_reproduces_affine_fields(
        c in prop::array::uniform4(-3f64..3.0),
        u in prop::array::uniform3(0f64..1.0),
    ) {
        let layout = GridLayout::new([5, 7, 4], Vec3::new(-0.4, 0.1, -1.0), [0.25, 0.15, 0.5]).unwrap();
        let f = |p: Vec3| c[0] + c[1] * p.x + c[2] * p.y + c[3] * p.z;
        let g = VoxelGrid::from_fn(layout, GridKind::Logit, f);
        let (lo, hi) = (layout.position(0, 0, 0), layout.position(4, 6, 3));
        let p = lo + (hi - lo).component_mul(&Vec3::new(u[0], u[1], u[2]));
        prop_assert!((g.trilinear_sample(p) - f(p)).abs() < 1e-12);
    }

    #[test]
    fn chamfer_is_symmetric_and_non_negative(seed in 0u64..500, na in 1usize..60, nb in 1usize..60) {
        let mut rng = Stream::new(seed);
        let a = random_cloud(na, &mut rng);
        let b = random_cloud(nb, &mut rng);
        let ab = chamfer_distance(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, chamfer_distance(&b, &a).unwrap());
        prop_assert_eq!(ab, common::brute_chamfer(&a, &b));
        prop_assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn closed_fields_give_watertight_meshes(seed in 0u64..500) {
        let layout = GridLayout::centered_cube(1.0, 8).unwrap();
        let mut rng = Stream::new(seed);
        let mut g = VoxelGrid::filled(layout, GridKind::Occupancy, 0.0);
        for idx in 0..layout.len() {
            let [i, j, k] = layout.coords(idx);
            g.values[idx] = if [i, j, k].iter().any(|&x| x == 0 || x == 7) { 0.0 } else { rng.uniform() };
        }
        let m = marching_cubes(&g, 0.5);
        prop_assert_eq!(m.unpaired_edges(), 0);
    }
}
