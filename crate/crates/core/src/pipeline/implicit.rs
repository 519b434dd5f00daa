use std::sync::Arc;

use super::voxel::{check_trend, with_step};
use super::TrainConfig;
use crate::diffmath::{Activation, MlpParams, OptimState, SparseMatrix, Tape, Tensor, Var};
use crate::encoders::{assemble_batch, build_shape_pyramid, check_decoder_input, EncoderConfig, ImagePyramid, ShapePyramid};
use crate::error::{Error, Result};
use crate::geometry::{Camera, GridLayout, Image, Vec3, VoxelGrid};
use crate::losses::{record_combined, record_hybrid_geometry, record_temporal_color, LossTerms};
use crate::rng::Stream;
use crate::sampling::{sample_color_points, track_samples, OccupancySampler};
use crate::synthgen::Sequence;

/// Rows evaluated per decoder call in batch evaluation.
const EVAL_CHUNK: usize = 4096;

/// Everything the encoders need for one frame.
#[derive(Clone, Debug)]
pub struct FrameInputs {
    pub shape: ShapePyramid,
    pub image: ImagePyramid,
    pub camera: Camera,
}

impl FrameInputs {
    pub fn new(grid: &VoxelGrid, image: &Image, camera: &Camera, enc: &EncoderConfig) -> Result<Self> {
        Ok(Self {
            shape: build_shape_pyramid(grid, enc.shape_levels)?,
            image: ImagePyramid::new(image, enc.image_levels)?,
            camera: camera.clone(),
        })
    }

    pub fn features(&self, points: &[Vec3]) -> Result<Tensor> {
        assemble_batch(&self.shape, &self.image, &self.camera, points)
    }
}

/// `d_in -> hidden... -> outputs`, ReLU hidden, sigmoid output.
pub fn new_decoder(enc: &EncoderConfig, hidden: &[usize], outputs: usize, seed: u64) -> Result<MlpParams> {
    let mut sizes = vec![enc.feature_dim()];
    sizes.extend_from_slice(hidden);
    sizes.push(outputs);
    MlpParams::init(&sizes, Activation::Relu, Activation::Sigmoid, seed)
}

fn check_width(decoder: &MlpParams, inputs: &FrameInputs) -> Result<()> {
    let enc = EncoderConfig {
        shape_levels: inputs.shape.levels.len() - 1,
        image_levels: inputs.image.levels.len(),
    };
    check_decoder_input(&enc, decoder.input_dim())
}

/// Decoder outputs at `points`, row per point. Chunks are evaluated in
/// parallel; rows do not interact so the result is order independent.
pub fn decode_points(decoder: &MlpParams, inputs: &FrameInputs, points: &[Vec3]) -> Result<Vec<f64>> {
    check_width(decoder, inputs)?;
    let chunks: Vec<&[Vec3]> = points.chunks(EVAL_CHUNK).collect();
    let outs = crate::par::map_slice(&chunks, |c| -> Result<Vec<f64>> {
        Ok(decoder.forward(&inputs.features(c)?)?.into_data())
    });
    let mut data = Vec::with_capacity(points.len() * decoder.output_dim());
    for o in outs {
        data.extend(o?);
    }
    Ok(data)
}

/// Occupancy probability at `x`.
pub fn decode_occupancy(decoder: &MlpParams, inputs: &FrameInputs, x: Vec3) -> Result<f64> {
    Ok(decode_points(decoder, inputs, &[x])?[0])
}

pub fn decode_color(decoder: &MlpParams, inputs: &FrameInputs, x: Vec3) -> Result<[f64; 3]> {
    let v = decode_points(decoder, inputs, &[x])?;
    Ok([v[0], v[1], v[2]])
}

/// Decoded occupancy at every cell center of `layout`.
pub fn decode_grid(decoder: &MlpParams, inputs: &FrameInputs, layout: &GridLayout) -> Result<VoxelGrid> {
    let points: Vec<Vec3> = (0..layout.len()).map(|i| layout.position_of(i)).collect();
    let values = decode_points(decoder, inputs, &points)?;
    VoxelGrid::new(*layout, crate::geometry::GridKind::Occupancy, values)
}

fn gather_rows(src: &Tensor, idx: &[usize]) -> Tensor {
    let (_, d) = src.dims2();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(src.row(i));
    }
    Tensor::matrix(idx.len(), d, data).expect("row gather")
}

fn decoder_step(opt: &mut OptimState, decoder: &mut MlpParams, tape: &Tape, params: &[Var], loss: Var, step: usize) -> Result<()> {
    let grads = tape.backward(loss)?;
    let g: Vec<Tensor> = params
        .iter()
        .zip(decoder.tensors())
        .map(|(&p, t)| grads.get_or_zeros(p, t.shape()))
        .collect();
    opt.step(decoder.tensors_mut(), &g).map_err(|e| with_step(e, step))
}

#[derive(Clone, Debug)]
pub struct ImplicitStageOutput {
    pub decoder: MlpParams,
    /// Mean squared error per step.
    pub history: Vec<f64>,
    pub heldout_accuracy: f64,
    pub heldout_count: usize,
}

/// Trains the occupancy decoder on displaced surface samples of every clip
/// frame. `inputs[k]` holds the (predicted) grid pyramid of clip frame `k`;
/// samples falling in voxels where `masks[k]` is false are not used.
pub fn train_implicit_stage(
    seq: &Sequence,
    frames: &[usize],
    inputs: &[FrameInputs],
    masks: &[Option<Vec<bool>>],
    cfg: &TrainConfig,
) -> Result<ImplicitStageOutput> {
    if inputs.len() != frames.len() || masks.len() != frames.len() {
        return Err(Error::shape("one input set and mask slot per clip frame"));
    }
    let enc = cfg.encoder;
    let mut decoder = new_decoder(&enc, &cfg.hidden, 1, cfg.seed ^ 0x1)?;
    let layout = seq.voxel_layout();
    let d = enc.feature_dim();
    let (mut train_x, mut train_y, mut test_x, mut test_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, &f) in frames.iter().enumerate() {
        let mesh = &seq.frames[f].gt_mesh;
        let sampler = OccupancySampler {
            n: cfg.samples,
            sigma: cfg.sigma_fraction * mesh.bounds().map_or(0.0, |(lo, hi)| (hi - lo).norm()),
            uniform_fraction: cfg.uniform_fraction,
            bounds: (layout.cell_min(), layout.cell_max()),
        };
        let set = sampler.sample(mesh, f, Stream::derive(cfg.seed, 0x1000 + k as u64).next_u64())?;
        let labels = set.labels.occupancy().unwrap();
        let mut keep: Vec<usize> = (0..set.len())
            .filter(|&i| match (&masks[k], layout.cell_containing(set.points[i])) {
                (Some(m), Some(c)) => m[c],
                _ => true,
            })
            .collect();
        let mut rng = Stream::derive(cfg.seed, 0x2000 + k as u64);
        for i in (1..keep.len()).rev() {
            keep.swap(i, rng.index(i + 1));
        }
        let n_test = (keep.len() as f64 * cfg.holdout_fraction).round() as usize;
        let pts: Vec<Vec3> = keep.iter().map(|&i| set.points[i]).collect();
        let feats = inputs[k].features(&pts)?;
        if feats.dims2().1 != d {
            return Err(Error::shape("feature width does not match the decoder"));
        }
        for (j, &i) in keep.iter().enumerate() {
            let (xs, ys) = if j < keep.len() - n_test {
                (&mut train_x, &mut train_y)
            } else {
                (&mut test_x, &mut test_y)
            };
            xs.extend_from_slice(feats.row(j));
            ys.push(labels[i]);
        }
    }
    let n_train = train_y.len();
    if n_train == 0 {
        return Err(Error::invalid("no training samples left after masking"));
    }
    let train_x = Tensor::matrix(n_train, d, train_x)?;
    let mut opt = OptimState::rmsprop(cfg.implicit_lr).with_decay(cfg.decay(n_train, cfg.implicit_batch));
    let mut rng = Stream::derive(cfg.seed, 0x3000);
    let mut history = Vec::with_capacity(cfg.implicit_steps);
    for step in 0..cfg.implicit_steps {
        let idx = batch_indices(&mut rng, cfg.implicit_batch, n_train);
        let x = gather_rows(&train_x, &idx);
        let y: Arc<[f64]> = idx.iter().map(|&i| train_y[i]).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let trace = decoder.forward_tape(&mut tape, xv)?;
        let loss = record_hybrid_geometry(&mut tape, trace.output, y)?;
        let terms = LossTerms {
            hybrid_geometry: Some(loss),
            ..Default::default()
        };
        let total = record_combined(&mut tape, &terms, &cfg.weights)?;
        let value = tape.value(total).item();
        if !value.is_finite() {
            return Err(Error::Numerical {
                step,
                message: "occupancy loss is not finite".into(),
            });
        }
        history.push(value);
        decoder_step(&mut opt, &mut decoder, &tape, &trace.params, total, step)?;
    }
    check_trend(history.iter().copied(), "implicit")?;
    let heldout_count = test_y.len();
    let heldout_accuracy = if heldout_count == 0 {
        f64::NAN
    } else {
        let pred = decoder.forward(&Tensor::matrix(heldout_count, d, test_x)?)?;
        let correct = pred
            .data()
            .iter()
            .zip(&test_y)
            .filter(|(&p, &y)| (p > 0.5) == (y > 0.5))
            .count();
        correct as f64 / heldout_count as f64
    };
    Ok(ImplicitStageOutput {
        decoder,
        history,
        heldout_accuracy,
        heldout_count,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorLossRecord {
    pub step: usize,
    pub l1: f64,
    pub temporal: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct ColorStageOutput {
    pub decoder: MlpParams,
    pub history: Vec<ColorLossRecord>,
    /// Mean absolute per-channel error on held-out surface points of the
    /// first clip frame.
    pub heldout_mae: f64,
}

/// Points of clip frame `k` whose depth exceeds the mesh centroid's, the
/// side facing away from the camera.
pub fn back_facing(points: &[Vec3], camera: &Camera, centroid: Vec3) -> Vec<bool> {
    let c = camera.depth(centroid);
    points.iter().map(|&p| camera.depth(p) > c).collect()
}

/// Trains the color decoder on surface points of the first clip frame,
/// tracked through every clip frame. `withheld[k][i]` removes the color
/// supervision of point `i` in clip frame `k`; temporal consistency still
/// applies there.
pub fn train_color_stage(
    seq: &Sequence,
    frames: &[usize],
    inputs: &[FrameInputs],
    withhold_back: &[bool],
    cfg: &TrainConfig,
) -> Result<ColorStageOutput> {
    if inputs.len() != frames.len() || withhold_back.len() != frames.len() {
        return Err(Error::shape("one input set and flag per clip frame"));
    }
    let enc = cfg.encoder;
    let d = enc.feature_dim();
    let nf = frames.len();
    let mut decoder = new_decoder(&enc, &cfg.hidden, 3, cfg.seed ^ 0x2)?;
    let src_mesh = &seq.frames[frames[0]].gt_mesh;
    let mut set = sample_color_points(src_mesh, cfg.color_samples, Stream::derive(cfg.seed, 0x4000).next_u64())?;
    set.source_frame = frames[0];
    let set = track_samples(&set, seq)?;
    let colors = set.labels.colors().unwrap();
    let m = set.len();
    let n_test = ((m as f64 * cfg.holdout_fraction).round() as usize).min(m - 1);
    let n_train = m - n_test;

    let mut feats = Vec::with_capacity(nf);
    let mut supervised = Vec::with_capacity(nf);
    for (k, &f) in frames.iter().enumerate() {
        let pts = &set.tracked[f];
        feats.push(inputs[k].features(pts)?);
        supervised.push(if withhold_back[k] {
            let mesh = &seq.frames[f].gt_mesh;
            let centroid = mesh.vertices.iter().sum::<Vec3>() / mesh.vertices.len() as f64;
            back_facing(pts, &inputs[k].camera, centroid).iter().map(|&b| !b).collect()
        } else {
            vec![true; m]
        });
    }

    let mut opt = OptimState::rmsprop(cfg.color_lr).with_decay(cfg.decay(n_train, cfg.color_batch));
    let mut rng = Stream::derive(cfg.seed, 0x5000);
    let mut history = Vec::with_capacity(cfg.color_steps);
    let use_temporal = nf >= 2 && cfg.weights.mu > 0.0;
    for step in 0..cfg.color_steps {
        let idx = batch_indices(&mut rng, cfg.color_batch, n_train);
        let b = idx.len();
        // Stack the batch of every frame so one forward pass serves all.
        let mut x = Vec::with_capacity(nf * b * d);
        let mut target = Vec::with_capacity(nf * b * 3);
        let mut mask = Vec::with_capacity(nf * b * 3);
        for k in 0..nf {
            for &i in &idx {
                x.extend_from_slice(feats[k].row(i));
                target.extend_from_slice(&colors[i]);
                mask.extend([supervised[k][i]; 3]);
            }
        }
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::matrix(nf * b, d, x)?);
        let trace = decoder.forward_tape(&mut tape, xv)?;
        let l1 = tape.mean_abs(trace.output, target.into(), Some(mask.into()), b as f64)?;
        let temporal = if use_temporal {
            let mut slices = Vec::with_capacity(nf);
            for k in 0..nf {
                let mut sel = SparseMatrix::new(nf * b * 3);
                for r in 0..b * 3 {
                    sel.push_row([(k * b * 3 + r, 1.0)]);
                }
                slices.push(tape.sparse(trace.output, Arc::new(sel), &[b, 3])?);
            }
            Some(record_temporal_color(&mut tape, &slices)?)
        } else {
            None
        };
        let terms = LossTerms {
            hybrid_color: Some(l1),
            temporal_color: temporal,
            ..Default::default()
        };
        let total = record_combined(&mut tape, &terms, &cfg.weights)?;
        let rec = ColorLossRecord {
            step,
            l1: tape.value(l1).item(),
            temporal: temporal.map_or(0.0, |t| tape.value(t).item()),
            total: tape.value(total).item(),
        };
        if !rec.total.is_finite() {
            return Err(Error::Numerical {
                step,
                message: "color loss is not finite".into(),
            });
        }
        history.push(rec);
        decoder_step(&mut opt, &mut decoder, &tape, &trace.params, total, step)?;
    }
    check_trend(history.iter().map(|r| r.total), "color")?;
    let heldout_mae = if n_test == 0 {
        f64::NAN
    } else {
        let rows: Vec<usize> = (n_train..m).collect();
        let pred = decoder.forward(&gather_rows(&feats[0], &rows))?;
        let mut sum = 0.0;
        for (r, &i) in rows.iter().enumerate() {
            for ch in 0..3 {
                sum += (pred.data()[3 * r + ch] - colors[i][ch]).abs();
            }
        }
        sum / (3 * n_test) as f64
    };
    Ok(ColorStageOutput {
        decoder,
        history,
        heldout_mae,
    })
}

/// Rows drawn with replacement; a batch covering the whole set takes every row once.
fn batch_indices(rng: &mut Stream, batch: usize, n: usize) -> Vec<usize> {
    if batch >= n {
        (0..n).collect()
    } else {
        (0..batch).map(|_| rng.index(n)).collect()
    }
}
