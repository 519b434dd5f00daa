use super::implicit::{decode_grid, decode_points, FrameInputs};
use crate::diffmath::MlpParams;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::geometry::{chamfer_distance_cm, marching_cubes, voxel_iou, GridLayout, TriMesh, Vec3, VoxelGrid};
use crate::synthgen::FrameBundle;

/// Surface samples drawn from each mesh for the chamfer metric.
pub const CHAMFER_SAMPLES: usize = 10_000;
pub const CHAMFER_SEED: u64 = 0x63686d66;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconMetrics {
    /// Infinite when the reconstruction is empty.
    pub chamfer_cm: f64,
    pub iou: f64,
}

#[derive(Clone, Debug)]
pub struct ReconResult {
    pub mesh: TriMesh,
    /// Decoded occupancy on the evaluation grid.
    pub occupancy: VoxelGrid,
    /// Decoded occupancy at the voxel-grid centers.
    pub voxel_occupancy: VoxelGrid,
    /// No iso crossing: the decoder never separates inside from outside.
    pub empty: bool,
    pub metrics: Option<ReconMetrics>,
}

/// Decoders needed to reconstruct a frame.
#[derive(Clone, Debug)]
pub struct Decoders<'a> {
    pub occupancy: &'a MlpParams,
    pub color: Option<&'a MlpParams>,
    pub encoder: EncoderConfig,
}

/// Chamfer distance between meshes via area-uniform surface samples. Both
/// meshes use the same sample stream, so a mesh against itself scores 0.
pub fn mesh_chamfer_cm(a: &TriMesh, b: &TriMesh, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Ok(f64::INFINITY);
    }
    chamfer_distance_cm(
        &a.sample_surface_points(CHAMFER_SAMPLES, seed),
        &b.sample_surface_points(CHAMFER_SAMPLES, seed),
    )
}

/// Marching cubes of a voxel occupancy grid at iso 0.5; the baseline the
/// implicit decoder refines.
pub fn voxel_surface(grid: &VoxelGrid) -> TriMesh {
    marching_cubes(grid, 0.5)
}

/// Dense decoding on a cube of `eval_resolution` cells per axis, iso-surface
/// at 0.5 and per-vertex colors. `voxels` is the predicted occupancy grid
/// that conditions the decoder.
pub fn reconstruct(
    frame: &FrameBundle,
    voxels: &VoxelGrid,
    decoders: &Decoders,
    eval_resolution: usize,
    with_metrics: bool,
) -> Result<ReconResult> {
    let inputs = FrameInputs::new(voxels, &frame.image, &frame.camera, &decoders.encoder)?;
    let eval_layout = GridLayout::centered_cube(1.0, eval_resolution)?;
    let occupancy = decode_grid(decoders.occupancy, &inputs, &eval_layout)?;
    let voxel_occupancy = decode_grid(decoders.occupancy, &inputs, &voxels.layout)?;
    let mut mesh = marching_cubes(&occupancy, 0.5);
    let empty = mesh.is_empty();
    if let (Some(color), false) = (decoders.color, empty) {
        let color_inputs = FrameInputs::new(&voxel_occupancy, &frame.image, &frame.camera, &decoders.encoder)?;
        let c = decode_points(color, &color_inputs, &mesh.vertices)?;
        if color.output_dim() != 3 {
            return Err(Error::shape("color decoder must have three outputs"));
        }
        mesh.colors = c.chunks(3).map(|v| [v[0], v[1], v[2]].map(|x| x.clamp(0.0, 1.0))).collect();
    }
    let metrics = if with_metrics && !frame.gt_mesh.is_empty() {
        Some(ReconMetrics {
            chamfer_cm: mesh_chamfer_cm(&mesh, &frame.gt_mesh, CHAMFER_SEED)?,
            iou: voxel_iou(&voxel_occupancy.threshold(0.5), &frame.gt_voxels)?,
        })
    } else {
        None
    };
    Ok(ReconResult {
        mesh,
        occupancy,
        voxel_occupancy,
        empty,
        metrics,
    })
}

/// Mean over points of the population variance across frames;
/// `values[t][i]` is the prediction for point `i` in frame `t`.
pub fn flicker_score(values: &[Vec<f64>]) -> Result<f64> {
    let t = values.len();
    if t == 0 {
        return Ok(0.0);
    }
    let n = values[0].len();
    if values.iter().any(|v| v.len() != n) {
        return Err(Error::shape("every frame needs one value per point"));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..n {
        let mean = point_mean(values, i);
        sum += values.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / t as f64;
    }
    Ok(sum / n as f64)
}

/// Share of each frame in [`flicker_score`]: the mean squared deviation of
/// its values from the per-point mean. These average to the score.
pub fn flicker_per_frame(values: &[Vec<f64>]) -> Result<Vec<f64>> {
    let t = values.len();
    if t == 0 {
        return Ok(Vec::new());
    }
    let n = values[0].len();
    if values.iter().any(|v| v.len() != n) {
        return Err(Error::shape("every frame needs one value per point"));
    }
    if n == 0 {
        return Ok(vec![0.0; t]);
    }
    let means: Vec<f64> = (0..n).map(|i| point_mean(values, i)).collect();
    Ok(values
        .iter()
        .map(|v| v.iter().zip(&means).map(|(x, m)| (x - m).powi(2)).sum::<f64>() / n as f64)
        .collect())
}

/// Running mean over frames; exact when every frame agrees.
fn point_mean(values: &[Vec<f64>], i: usize) -> f64 {
    values
        .iter()
        .enumerate()
        .fold(0.0, |m, (k, v)| m + (v[i] - m) / (k + 1) as f64)
}

fn channels(values: &[Vec<[f64; 3]>], ch: usize) -> Vec<Vec<f64>> {
    values.iter().map(|f| f.iter().map(|c| c[ch]).collect()).collect()
}

/// Color flicker: [`flicker_score`] averaged over the three channels.
pub fn color_flicker_score(values: &[Vec<[f64; 3]>]) -> Result<f64> {
    let mut total = 0.0;
    for ch in 0..3 {
        total += flicker_score(&channels(values, ch))?;
    }
    Ok(total / 3.0)
}

pub fn color_flicker_per_frame(values: &[Vec<[f64; 3]>]) -> Result<Vec<f64>> {
    let mut total = vec![0.0; values.len()];
    for ch in 0..3 {
        for (t, x) in total.iter_mut().zip(flicker_per_frame(&channels(values, ch))?) {
            *t += x / 3.0;
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flicker {
    pub occupancy: f64,
    /// Zero without color predictions.
    pub color: f64,
    pub per_frame_occupancy: Vec<f64>,
    pub per_frame_color: Vec<f64>,
}

impl Flicker {
    /// `occ[t][i]` and `color[t][i]` are predictions at point `i` in frame
    /// `t`; `color` may be empty.
    pub fn from_predictions(occ: &[Vec<f64>], color: &[Vec<[f64; 3]>]) -> Result<Self> {
        let (c, pc) = if color.is_empty() {
            (0.0, vec![0.0; occ.len()])
        } else {
            (color_flicker_score(color)?, color_flicker_per_frame(color)?)
        };
        Ok(Self {
            occupancy: flicker_score(occ)?,
            color: c,
            per_frame_occupancy: flicker_per_frame(occ)?,
            per_frame_color: pc,
        })
    }
}

/// Flicker of the decoders over corresponded surface points.
/// `points[t]` are the same surface points placed in frame `t`, and
/// `voxels[t]` / `frames[t]` the conditioning grid and bundle.
pub fn tracked_flicker(
    frames: &[&FrameBundle],
    voxels: &[VoxelGrid],
    points: &[Vec<Vec3>],
    decoders: &Decoders,
) -> Result<Flicker> {
    if frames.len() != voxels.len() || frames.len() != points.len() {
        return Err(Error::shape("one grid and point set per frame"));
    }
    let mut occ = Vec::with_capacity(frames.len());
    let mut col = Vec::with_capacity(frames.len());
    for ((f, v), p) in frames.iter().zip(voxels).zip(points) {
        let inputs = FrameInputs::new(v, &f.image, &f.camera, &decoders.encoder)?;
        occ.push(decode_points(decoders.occupancy, &inputs, p)?);
        if let Some(color) = decoders.color {
            let dense = decode_grid(decoders.occupancy, &inputs, &v.layout)?;
            let ci = FrameInputs::new(&dense, &f.image, &f.camera, &decoders.encoder)?;
            col.push(
                decode_points(color, &ci, p)?
                    .chunks(3)
                    .map(|c| [c[0], c[1], c[2]])
                    .collect::<Vec<_>>(),
            );
        }
    }
    Flicker::from_predictions(&occ, &col)
}
