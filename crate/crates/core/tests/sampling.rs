mod common;

use trecon::geometry::{voxelize, InsideTester, TriMesh, TriangleBvh, Vec3};
use trecon::rng::Stream;
use trecon::sampling::{
    sample_color_points, sample_occupancy_points, track_samples, voxel_correspondence, Anchor, Labels,
    OccupancySampler, SampleSet,
};
use trecon::synthgen::{generate_sequence, FrameBundle, Sequence, SequenceSpec};

fn spec(amplitude: f64) -> SequenceSpec {
    SequenceSpec {
        frame_count: 3,
        seed: 2,
        image_width: 32,
        image_height: 32,
        voxel_resolution: 24,
        amplitude,
        ..Default::default()
    }
}

/// Frame 0 of a generated body, then copies translated by `steps[i]`.
fn translated_sequence(steps: &[Vec3]) -> Sequence {
    let mut seq = generate_sequence(&SequenceSpec { frame_count: 2, ..spec(0.0) }).unwrap();
    seq.spec.amplitude = 0.0;
    let base: FrameBundle = seq.frames[0].clone();
    seq.frames = steps
        .iter()
        .map(|&d| {
            let mut fr = base.clone();
            fr.gt_mesh = base.gt_mesh.translated(d);
            fr.gt_voxels = voxelize(&fr.gt_mesh, &base.gt_voxels.layout).unwrap();
            fr
        })
        .collect();
    seq
}

#[test]
fn sphere_inside_fraction_matches_monte_carlo() {
    let sigma = 0.05;
    let n = 10_000;
    let sphere = TriMesh::icosphere(Vec3::zeros(), 1.0, 5);
    let set = sample_occupancy_points(&sphere, n, sigma, 3).unwrap();
    let inside = set.labels.occupancy().unwrap().iter().sum::<f64>() / n as f64;

    // By symmetry every base point behaves like (1, 0, 0).
    let mut rng = Stream::new(77);
    let trials = 1_000_000;
    let mut hits = 0usize;
    for _ in 0..trials {
        let p = Vec3::new(1.0 + sigma * rng.gaussian(), sigma * rng.gaussian(), sigma * rng.gaussian());
        if p.norm_squared() < 1.0 {
            hits += 1;
        }
    }
    let prob = hits as f64 / trials as f64;
    let sd = (prob * (1.0 - prob) / n as f64).sqrt();
    assert!((inside - prob).abs() < 3.0 * sd, "{inside} vs {prob}");
}

#[test]
fn zero_sigma_points_lie_on_surface() {
    let sphere = TriMesh::icosphere(Vec3::zeros(), 0.5, 3);
    let bvh = TriangleBvh::new(&sphere);
    let set = sample_occupancy_points(&sphere, 500, 0.0, 1).unwrap();
    for p in &set.points {
        assert!(bvh.closest(*p).unwrap().dist_sq < 1e-24);
    }
}

#[test]
fn occupancy_labels_match_winding_number() {
    let seq = generate_sequence(&spec(0.35)).unwrap();
    let mesh = &seq.frames[1].gt_mesh;
    let set = OccupancySampler {
        n: 600,
        sigma: 0.05,
        uniform_fraction: 0.1,
        bounds: (Vec3::repeat(-1.0), Vec3::repeat(1.0)),
    }
    .sample(mesh, 1, 9)
    .unwrap();
    let labels = set.labels.occupancy().unwrap();
    let mut checked = 0;
    for (p, &l) in set.points.iter().zip(labels) {
        let w = common::winding_number(mesh, *p);
        if (w - 0.5).abs() < 0.4 {
            continue;
        }
        assert_eq!(l == 1.0, w > 0.5, "{p:?}");
        checked += 1;
    }
    assert!(checked > 550);
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let sphere = TriMesh::icosphere(Vec3::zeros(), 0.5, 2);
    let a = sample_occupancy_points(&sphere, 300, 0.05, 4).unwrap();
    let b = sample_occupancy_points(&sphere, 300, 0.05, 4).unwrap();
    let c = sample_occupancy_points(&sphere, 300, 0.05, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn open_mesh_is_rejected() {
    let m = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
    assert!(sample_occupancy_points(&m, 10, 0.1, 0).is_err());
}

#[test]
fn color_labels_are_barycentric_blends() {
    let mut m = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
    m.colors = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let set = sample_color_points(&m, 200, 6).unwrap();
    for (p, c) in set.points.iter().zip(set.labels.colors().unwrap()) {
        // With these corners the barycentric weights are (1-x-y, x, y).
        let expect = [1.0 - p.x - p.y, p.x, p.y];
        for ch in 0..3 {
            assert!((c[ch] - expect[ch]).abs() < 1e-12);
        }
    }
    let uni = TriMesh::icosphere(Vec3::zeros(), 1.0, 2).with_uniform_color([0.2, 0.4, 0.6]);
    let set = sample_color_points(&uni, 100, 1).unwrap();
    assert!(set.labels.colors().unwrap().iter().all(|c| (c[0] - 0.2).abs() < 1e-15 && (c[2] - 0.6).abs() < 1e-15));
    let mut bare = uni.clone();
    bare.colors.clear();
    assert!(sample_color_points(&bare, 10, 1).is_err());
}

#[test]
fn color_at_vertex_is_vertex_color() {
    let mut m = TriMesh::icosphere(Vec3::zeros(), 1.0, 1);
    m.colors[m.triangles[4][1]] = [0.3, 0.9, 0.1];
    let sp = trecon::geometry::SurfacePoint { triangle: 4, bary: [0.0, 1.0, 0.0] };
    assert_eq!(m.color_at(sp), [0.3, 0.9, 0.1]);
}

#[test]
fn static_and_rigid_sequences_track_exactly() {
    let d = Vec3::new(0.05, -0.02, 0.03);
    let seq = translated_sequence(&[Vec3::zeros(), Vec3::zeros(), d]);
    let set = sample_occupancy_points(&seq.frames[0].gt_mesh, 400, 0.03, 2).unwrap();
    let tracked = track_samples(&set, &seq).unwrap();
    for (i, p) in set.points.iter().enumerate() {
        assert_eq!(tracked.tracked[0][i], *p);
        assert!((tracked.tracked[1][i] - p).norm() < 1e-12);
        assert!((tracked.tracked[2][i] - (p + d)).norm() < 1e-9);
    }
}

#[test]
fn articulated_tracking_preserves_offsets() {
    let seq = generate_sequence(&spec(0.35)).unwrap();
    let sigma = 0.02;
    let set = sample_occupancy_points(&seq.frames[0].gt_mesh, 1000, sigma, 5).unwrap();
    let tracked = track_samples(&set, &seq).unwrap();
    let src_bvh = TriangleBvh::new(&seq.frames[0].gt_mesh);
    let signed = |bvh: &TriangleBvh, tester: &InsideTester, p: Vec3| {
        let d = bvh.closest(p).unwrap().dist_sq.sqrt();
        if tester.contains(p) { -d } else { d }
    };
    let src_tester = InsideTester::new(&seq.frames[0].gt_mesh).unwrap();
    for t in 1..seq.len() {
        let mesh = &seq.frames[t].gt_mesh;
        let bvh = TriangleBvh::new(mesh);
        let tester = InsideTester::new(mesh).unwrap();
        let mut good = 0;
        for (i, p) in set.points.iter().enumerate() {
            let before = signed(&src_bvh, &src_tester, *p);
            let after = signed(&bvh, &tester, tracked.tracked[t][i]);
            if (before - after).abs() <= 0.1 * sigma {
                good += 1;
            }
        }
        // Near concave joints the closest surface patch can switch between frames.
        assert!(good as f64 >= 0.99 * set.len() as f64, "frame {t}: {good}/{}", set.len());
    }
}

#[test]
fn far_points_are_flagged() {
    let sphere = TriMesh::icosphere(Vec3::zeros(), 0.3, 2);
    let seq = {
        let mut s = translated_sequence(&[Vec3::zeros(), Vec3::zeros()]);
        for f in &mut s.frames {
            f.gt_mesh = sphere.clone();
        }
        s
    };
    let set = SampleSet {
        source_frame: 0,
        sigma: 0.01,
        points: vec![Vec3::new(0.31, 0.0, 0.0), Vec3::new(0.9, 0.0, 0.0)],
        labels: Labels::Occupancy(vec![0.0, 0.0]),
        tracked: Vec::new(),
        far: vec![false; 2],
    };
    let t = track_samples(&set, &seq).unwrap();
    assert_eq!(t.far, vec![false, true]);
}

#[test]
fn sample_set_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let seq = translated_sequence(&[Vec3::zeros(), Vec3::x() * 0.01]);
    let occ = track_samples(&sample_occupancy_points(&seq.frames[0].gt_mesh, 50, 0.02, 1).unwrap(), &seq).unwrap();
    occ.save(&dir.path().join("o.bin")).unwrap();
    assert_eq!(SampleSet::load(&dir.path().join("o.bin")).unwrap(), occ);
    let col = sample_color_points(&seq.frames[0].gt_mesh, 20, 1).unwrap();
    col.save(&dir.path().join("c.bin")).unwrap();
    assert_eq!(SampleSet::load(&dir.path().join("c.bin")).unwrap(), col);
}

#[test]
fn voxel_correspondence_identity_and_lattice_shift() {
    let seq = translated_sequence(&[Vec3::zeros(), Vec3::zeros()]);
    let layout = seq.voxel_layout();
    let id = voxel_correspondence(&seq, 1, 1, &layout, false).unwrap();
    assert!(id.map.iter().enumerate().all(|(i, m)| *m == Some(i as u32)));

    let k = 2;
    let h = layout.spacing[0];
    let seq = translated_sequence(&[Vec3::zeros(), Vec3::x() * (k as f64 * h)]);
    let c = voxel_correspondence(&seq, 0, 1, &layout, false).unwrap();
    let r = layout.resolution;
    for z in 2..r[2] - 2 {
        for y in 2..r[1] - 2 {
            for x in 2..r[0] - 2 - k {
                let i = layout.index(x, y, z);
                assert_eq!(c.map[i], Some(layout.index(x + k, y, z) as u32), "voxel {x},{y},{z}");
            }
        }
    }
}

#[test]
fn articulated_correspondence_nearly_round_trips() {
    let seq = generate_sequence(&spec(0.35)).unwrap();
    let layout = seq.voxel_layout();
    let fwd = voxel_correspondence(&seq, 0, 2, &layout, false).unwrap();
    let back = voxel_correspondence(&seq, 2, 0, &layout, false).unwrap();
    assert!(fwd.coverage >= 0.95, "coverage {}", fwd.coverage);
    let occupied: Vec<usize> = (0..layout.len()).filter(|&i| seq.frames[0].gt_voxels.values[i] > 0.5).collect();
    let ok = occupied
        .iter()
        .filter(|&&i| fwd.map[i].and_then(|j| back.map[j as usize]) == Some(i as u32))
        .count();
    assert!(ok as f64 >= 0.9 * occupied.len() as f64, "{ok}/{}", occupied.len());
    let restricted = voxel_correspondence(&seq, 0, 2, &layout, true).unwrap();
    assert!(restricted.map.iter().zip(&seq.frames[0].gt_voxels.values).all(|(m, &v)| m.is_none() || v > 0.5));
}

#[test]
fn anchors_place_back_on_source() {
    let m = TriMesh::icosphere(Vec3::zeros(), 0.5, 2);
    let bvh = TriangleBvh::new(&m);
    let p = Vec3::new(0.1, 0.6, -0.2);
    let a = Anchor::new(&m, &bvh, p).unwrap();
    assert!((a.place(&m) - p).norm() < 1e-12);
}
