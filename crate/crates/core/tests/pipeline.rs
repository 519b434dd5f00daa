use trecon::geometry::{voxel_iou, InsideTester, GridKind, GridLayout, Vec3, VoxelGrid};
use trecon::losses::LossWeights;
use trecon::pipeline::{
    decode_occupancy, decode_points, evaluate_ground_truth, fit_voxel_stage, flicker_score, new_decoder,
    reconstruct, run_color_stage, run_implicit_stage, run_voxel_stage, train_implicit_stage, Clip, Decoders,
    FrameInputs, TrainConfig, VoxelPredictor,
};
use trecon::rng::Stream;
use trecon::synthgen::{generate_sequence, render_frame, view_direction, FrameBundle, Sequence, SequenceSpec};

fn sequence(frames: usize, res: usize, image: usize, amplitude: f64) -> Sequence {
    generate_sequence(&SequenceSpec {
        frame_count: frames,
        seed: 1,
        voxel_resolution: res,
        image_width: image,
        image_height: image,
        amplitude,
        ..Default::default()
    })
    .unwrap()
}

fn supervised(frames: usize) -> TrainConfig {
    TrainConfig {
        frames,
        seed: 2,
        weights: LossWeights {
            lambda: 0.0,
            mu: 0.0,
            ..LossWeights::default()
        },
        ..TrainConfig::default()
    }
}

/// Voxel centers on the `inside` side of the mesh, at least `margin` from its surface.
fn deep_points(fr: &FrameBundle, inside: bool, margin: f64) -> Vec<Vec3> {
    let t = InsideTester::new(&fr.gt_mesh).unwrap();
    let layout = fr.gt_voxels.layout;
    (0..layout.len())
        .map(|idx| layout.position_of(idx))
        .filter(|&p| t.contains(p) == inside && t.bvh().closest(p).unwrap().dist_sq >= margin * margin)
        .collect()
}

#[test]
fn supervised_voxel_fit_reaches_iou_095_at_32() {
    let seq = sequence(3, 32, 32, 0.35);
    let cfg = supervised(3);
    let clip = Clip::new(&seq, &cfg).unwrap();
    let out = run_voxel_stage(&seq, &clip, &cfg).unwrap();
    for k in 0..3 {
        let iou = voxel_iou(&out.predictor.binary(k), &seq.frames[k].gt_voxels).unwrap();
        assert!(iou >= 0.95, "frame {k}: {iou}");
    }
}

#[test]
fn zero_weights_train_each_frame_independently() {
    let seq = sequence(2, 16, 32, 0.35);
    let mut cfg = supervised(2);
    cfg.voxel_steps = 40;
    let gt: Vec<&VoxelGrid> = seq.frames.iter().map(|f| &f.gt_voxels).collect();
    let joint = fit_voxel_stage(&gt, &[0, 1], &[None, None], &[], &cfg).unwrap();
    cfg.frames = 1;
    let alone = fit_voxel_stage(&gt[1..], &[1], &[None], &[], &cfg).unwrap();
    assert_eq!(joint.predictor.logits[1], alone.predictor.logits[0]);
}

#[test]
fn trained_decoder_separates_inside_from_outside() {
    let seq = sequence(2, 24, 48, 0.35);
    let mut cfg = supervised(1);
    cfg.voxel_steps = 150;
    cfg.implicit_steps = 600;
    cfg.samples = 4000;
    let clip = Clip::new(&seq, &cfg).unwrap();
    let vox = run_voxel_stage(&seq, &clip, &cfg).unwrap();
    let imp = run_implicit_stage(&seq, &clip, &vox.predictor, &cfg).unwrap();
    let fr = &seq.frames[0];
    let inputs = FrameInputs::new(&vox.predictor.occupancy(0), &fr.image, &fr.camera, &cfg.encoder).unwrap();
    let h = fr.gt_voxels.layout.spacing[0];
    let inside = deep_points(fr, true, h);
    let outside = deep_points(fr, false, 2.0 * h);
    assert!(!inside.is_empty() && !outside.is_empty(), "{} {}", inside.len(), outside.len());
    for p in &inside {
        assert!(decode_occupancy(&imp.decoder, &inputs, *p).unwrap() > 0.5, "inside {p:?}");
    }
    for p in &outside {
        assert!(decode_occupancy(&imp.decoder, &inputs, *p).unwrap() < 0.5, "outside {p:?}");
    }
}

#[test]
fn full_batch_loss_falls_window_by_window() {
    let seq = sequence(2, 16, 32, 0.35);
    let mut cfg = supervised(1);
    cfg.voxel_steps = 100;
    cfg.implicit_steps = 200;
    cfg.samples = 2000;
    cfg.implicit_batch = 2000;
    let clip = Clip::new(&seq, &cfg).unwrap();
    let vox = run_voxel_stage(&seq, &clip, &cfg).unwrap();
    let imp = run_implicit_stage(&seq, &clip, &vox.predictor, &cfg).unwrap();
    let means: Vec<f64> = imp.history[..200].chunks(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for w in means.windows(2) {
        assert!(w[1] < w[0], "{means:?}");
    }
}

#[test]
fn all_zero_labels_drive_the_decoder_to_zero() {
    let seq = sequence(2, 16, 32, 0.35);
    let mut cfg = supervised(1);
    cfg.implicit_steps = 400;
    cfg.samples = 3000;
    cfg.uniform_fraction = 1.0;
    // Supervise only voxels two or more cells away from the body.
    let gt = &seq.frames[0].gt_voxels;
    let far: Vec<bool> = (0..gt.layout.len())
        .map(|idx| {
            let [i, j, k] = gt.layout.coords(idx);
            let n = gt.layout.resolution[0] as i64;
            let mut clear = true;
            for dz in -2i64..=2 {
                for dy in -2i64..=2 {
                    for dx in -2i64..=2 {
                        let (a, b, c) = (i as i64 + dx, j as i64 + dy, k as i64 + dz);
                        if [a, b, c].iter().all(|&x| x >= 0 && x < n) {
                            clear &= gt.get(a as usize, b as usize, c as usize) == 0.0;
                        }
                    }
                }
            }
            clear
        })
        .collect();
    let fr = &seq.frames[0];
    let inputs = FrameInputs::new(gt, &fr.image, &fr.camera, &cfg.encoder).unwrap();
    let out = train_implicit_stage(&seq, &[0], &[inputs.clone()], &[Some(far)], &cfg).unwrap();
    let last = out.history.last().unwrap();
    assert!(*last < 1e-3, "{last}");
    assert_eq!(out.heldout_accuracy, 1.0);
}

#[test]
fn decoded_occupancy_stays_in_clamp_range() {
    let seq = sequence(2, 16, 32, 0.35);
    let cfg = TrainConfig::default();
    let fr = &seq.frames[0];
    let inputs = FrameInputs::new(&fr.gt_voxels, &fr.image, &fr.camera, &cfg.encoder).unwrap();
    let mut dec = new_decoder(&cfg.encoder, &[32, 16], 1, 4).unwrap();
    // Large weights push many outputs into saturation.
    for t in dec.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= 40.0);
    }
    let mut rng = Stream::new(3);
    let pts: Vec<Vec3> = (0..1_000_000)
        .map(|_| Vec3::new(rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)))
        .collect();
    let s = decode_points(&dec, &inputs, &pts).unwrap();
    let eps = cfg.weights.eps;
    assert!(s.iter().all(|&v| v >= eps && v <= 1.0 - eps));
    assert!(s.iter().any(|&v| v == eps || v == 1.0 - eps));
}

#[test]
fn uniform_red_body_learns_red() {
    let mut seq = sequence(2, 16, 48, 0.35);
    for fr in &mut seq.frames {
        fr.gt_mesh = fr.gt_mesh.clone().with_uniform_color([1.0, 0.0, 0.0]);
        let (image, mask) = render_frame(&fr.gt_mesh, &fr.camera, view_direction(&fr.camera)).unwrap();
        fr.image = image;
        fr.mask = mask;
    }
    let mut cfg = supervised(1);
    cfg.teacher_forcing = true;
    cfg.implicit_steps = 200;
    cfg.samples = 2000;
    cfg.color_steps = 400;
    cfg.color_samples = 1000;
    let clip = Clip::new(&seq, &cfg).unwrap();
    let pred = VoxelPredictor::from_grids(&[0], &[&seq.frames[0].gt_voxels], 10.0).unwrap();
    let imp = run_implicit_stage(&seq, &clip, &pred, &cfg).unwrap();
    let col = run_color_stage(&seq, &clip, &pred, &imp.decoder, &cfg).unwrap();
    assert!(col.heldout_mae < 0.02, "{}", col.heldout_mae);
}

#[test]
fn identity_pipeline_chamfer_below_two_cells() {
    let seq = sequence(2, 24, 48, 0.35);
    let mut cfg = supervised(1);
    cfg.teacher_forcing = true;
    cfg.implicit_steps = 800;
    cfg.samples = 5000;
    let clip = Clip::new(&seq, &cfg).unwrap();
    let fr = &seq.frames[0];
    let pred = VoxelPredictor::from_grids(&[0], &[&fr.gt_voxels], 10.0).unwrap();
    let imp = run_implicit_stage(&seq, &clip, &pred, &cfg).unwrap();
    let dec = Decoders {
        occupancy: &imp.decoder,
        color: None,
        encoder: cfg.encoder,
    };
    let r = reconstruct(fr, &pred.occupancy(0), &dec, 48, true).unwrap();
    assert!(!r.empty);
    let spacing_cm = 100.0 * fr.gt_voxels.layout.spacing[0];
    let cd = r.metrics.unwrap().chamfer_cm;
    assert!(cd < 2.0 * spacing_cm, "{cd} vs {spacing_cm}");
    // Decoding is a pure function of the trained parameters.
    let again = reconstruct(fr, &pred.occupancy(0), &dec, 48, true).unwrap();
    assert_eq!(again.occupancy, r.occupancy);
    assert_eq!(again.metrics, r.metrics);
}

#[test]
fn untrained_decoder_gives_an_empty_surface() {
    let seq = sequence(2, 16, 32, 0.35);
    let cfg = TrainConfig::default();
    let fr = &seq.frames[0];
    let zero = trecon::diffmath::MlpParams::zeros(
        &[cfg.encoder.feature_dim(), 8, 1],
        trecon::diffmath::Activation::Relu,
        trecon::diffmath::Activation::Sigmoid,
    )
    .unwrap();
    let dec = Decoders {
        occupancy: &zero,
        color: None,
        encoder: cfg.encoder,
    };
    let r = reconstruct(fr, &fr.gt_voxels, &dec, 16, true).unwrap();
    assert!(r.empty);
    assert_eq!(r.metrics.unwrap().chamfer_cm, f64::INFINITY);
}

#[test]
fn flicker_matches_direct_variance() {
    let mut rng = Stream::new(8);
    let frames: Vec<Vec<f64>> = (0..4).map(|_| (0..50).map(|_| rng.uniform()).collect()).collect();
    let mut total = 0.0;
    for i in 0..50 {
        let mean = frames.iter().map(|f| f[i]).sum::<f64>() / 4.0;
        total += frames.iter().map(|f| (f[i] - mean).powi(2)).sum::<f64>() / 4.0;
    }
    assert!((flicker_score(&frames).unwrap() - total / 50.0).abs() < 1e-15);
    // Independent uniform predictions flicker at about 1/12.
    let wide: Vec<Vec<f64>> = (0..8).map(|_| (0..4000).map(|_| rng.uniform()).collect()).collect();
    let f = flicker_score(&wide).unwrap();
    assert!((f - 7.0 / 8.0 / 12.0).abs() < 0.005, "{f}");
    let same = vec![frames[0].clone(); 3];
    assert_eq!(flicker_score(&same).unwrap(), 0.0);
}

#[test]
fn ground_truth_scores_perfectly_on_a_static_clip() {
    let seq = sequence(3, 16, 32, 0.0);
    let reports = evaluate_ground_truth(&seq, &[0, 1, 2], 0).unwrap();
    for r in &reports {
        assert_eq!((r.chamfer_cm, r.iou), (0.0, 1.0));
        // Tracked points pass through per-frame rigid maps and may move by an ulp.
        assert!(r.flicker_occ < 1e-20 && r.flicker_color < 1e-20, "{r:?}");
    }
}

#[test]
fn mismatched_predictor_is_rejected() {
    let seq = sequence(2, 16, 32, 0.35);
    let cfg = supervised(1);
    let clip = Clip::new(&seq, &cfg).unwrap();
    let wrong = VoxelPredictor::new(&[0], GridLayout::centered_cube(1.0, 8).unwrap());
    assert!(run_implicit_stage(&seq, &clip, &wrong, &cfg).is_err());
    let g = VoxelGrid::filled(seq.voxel_layout(), GridKind::Occupancy, 0.5);
    assert!(VoxelPredictor::from_grids(&[0, 1], &[&g], 10.0).is_err());
}
