use std::path::Path;

use super::recon::{reconstruct, tracked_flicker, Decoders, Flicker, ReconResult};
use super::implicit::{decode_grid, train_color_stage, train_implicit_stage, ColorStageOutput, FrameInputs, ImplicitStageOutput};
use super::voxel::{fit_voxel_stage, occlusion_mask, VoxelPredictor, VoxelStageOutput};
use super::TrainConfig;
use crate::diffmath::MlpParams;
use crate::error::{Error, Result};
use crate::geometry::{Vec3, VoxelGrid};
use crate::kv::KvDoc;
use crate::rng::Stream;
use crate::sampling::{all_pair_correspondences, sample_color_points, track_samples, VoxelCorrespondence};
use crate::synthgen::Sequence;

pub const RUN_FORMAT_VERSION: u32 = 1;
/// Corresponded surface points used to measure flicker.
pub const FLICKER_POINTS: usize = 2000;
pub const RUN_MANIFEST: &str = "run.txt";
const RUN_FORMAT: &str = "trecon-run";

/// Version string recorded in run manifests.
pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// The clip a run trains on: the first N frames, plus any withheld
/// supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: Vec<usize>,
    /// Per clip frame, true = voxel supervised.
    pub masks: Vec<Option<Vec<bool>>>,
    /// Per clip frame, withhold color supervision on the far side.
    pub withhold_back: Vec<bool>,
}

impl Clip {
    pub fn new(seq: &Sequence, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if seq.len() < cfg.frames {
            return Err(Error::invalid(format!(
                "clip of {} frames needs a sequence at least that long, found {}",
                cfg.frames,
                seq.len()
            )));
        }
        let frames: Vec<usize> = (0..cfg.frames).collect();
        let masks = frames
            .iter()
            .map(|&f| {
                (cfg.occlude_frame == Some(f))
                    .then(|| occlusion_mask(&seq.frames[f].gt_voxels, cfg.occlude_fraction, cfg.seed))
            })
            .collect();
        let withhold_back = frames.iter().map(|&f| cfg.occlude_frame == Some(f)).collect();
        Ok(Self {
            frames,
            masks,
            withhold_back,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Voxels whose supervision is withheld in clip frame `k`.
    pub fn hidden_region(&self, k: usize) -> Option<Vec<bool>> {
        self.masks[k].as_ref().map(|m| m.iter().map(|&s| !s).collect())
    }
}

pub fn run_voxel_stage(seq: &Sequence, clip: &Clip, cfg: &TrainConfig) -> Result<VoxelStageOutput> {
    let gt: Vec<&VoxelGrid> = clip.frames.iter().map(|&f| &seq.frames[f].gt_voxels).collect();
    let corrs: Vec<VoxelCorrespondence> = if clip.len() >= 2 && cfg.weights.lambda > 0.0 {
        all_pair_correspondences(seq, &clip.frames, &seq.voxel_layout(), false)?
    } else {
        Vec::new()
    };
    fit_voxel_stage(&gt, &clip.frames, &clip.masks, &corrs, cfg)
}

/// Grids conditioning the decoders: predicted occupancies, or the ground
/// truth under teacher forcing.
pub fn conditioning_grids(seq: &Sequence, clip: &Clip, predictor: &VoxelPredictor, cfg: &TrainConfig) -> Result<Vec<VoxelGrid>> {
    if predictor.frames != clip.frames {
        return Err(Error::shape(format!(
            "voxel predictor holds frames {:?}, clip is {:?}",
            predictor.frames, clip.frames
        )));
    }
    if predictor.layout != seq.voxel_layout() {
        return Err(Error::shape(format!(
            "voxel predictor resolution {:?} differs from the dataset's {:?}",
            predictor.layout.resolution,
            seq.voxel_layout().resolution
        )));
    }
    Ok((0..clip.len())
        .map(|k| {
            if cfg.teacher_forcing {
                seq.frames[clip.frames[k]].gt_voxels.clone()
            } else {
                predictor.occupancy(k)
            }
        })
        .collect())
}

fn frame_inputs(seq: &Sequence, clip: &Clip, grids: &[VoxelGrid], cfg: &TrainConfig) -> Result<Vec<FrameInputs>> {
    clip.frames
        .iter()
        .zip(grids)
        .map(|(&f, g)| FrameInputs::new(g, &seq.frames[f].image, &seq.frames[f].camera, &cfg.encoder))
        .collect()
}

pub fn run_implicit_stage(seq: &Sequence, clip: &Clip, predictor: &VoxelPredictor, cfg: &TrainConfig) -> Result<ImplicitStageOutput> {
    let grids = conditioning_grids(seq, clip, predictor, cfg)?;
    let inputs = frame_inputs(seq, clip, &grids, cfg)?;
    train_implicit_stage(seq, &clip.frames, &inputs, &clip.masks, cfg)
}

/// Decoded occupancy at the voxel centers of every clip frame, the color
/// decoder's shape input.
pub fn decoded_grids(seq: &Sequence, clip: &Clip, predictor: &VoxelPredictor, occupancy: &MlpParams, cfg: &TrainConfig) -> Result<Vec<VoxelGrid>> {
    let grids = conditioning_grids(seq, clip, predictor, cfg)?;
    let inputs = frame_inputs(seq, clip, &grids, cfg)?;
    inputs
        .iter()
        .zip(&grids)
        .map(|(i, g)| decode_grid(occupancy, i, &g.layout))
        .collect()
}

pub fn run_color_stage(
    seq: &Sequence,
    clip: &Clip,
    predictor: &VoxelPredictor,
    occupancy: &MlpParams,
    cfg: &TrainConfig,
) -> Result<ColorStageOutput> {
    let dense = decoded_grids(seq, clip, predictor, occupancy, cfg)?;
    let inputs = frame_inputs(seq, clip, &dense, cfg)?;
    train_color_stage(seq, &clip.frames, &inputs, &clip.withhold_back, cfg)
}

/// Everything a run produced so far.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub predictor: Option<VoxelPredictor>,
    pub occupancy: Option<MlpParams>,
    pub color: Option<MlpParams>,
}

impl Checkpoint {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            config,
            predictor: None,
            occupancy: None,
            color: None,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut doc = KvDoc::new();
        doc.set("format", RUN_FORMAT);
        doc.set("version", RUN_FORMAT_VERSION);
        doc.set("software", version_string());
        doc.set("stage.voxel", self.predictor.is_some());
        doc.set("stage.implicit", self.occupancy.is_some());
        doc.set("stage.color", self.color.is_some());
        for (k, v) in self.config.to_kv().iter() {
            doc.set(format!("config.{k}"), v);
        }
        if let Some(p) = &self.predictor {
            p.save(&dir.join("voxel"))?;
        }
        if let Some(m) = &self.occupancy {
            m.save(&dir.join("occupancy.mlp"))?;
        }
        if let Some(m) = &self.color {
            m.save(&dir.join("color.mlp"))?;
        }
        doc.save(&dir.join(RUN_MANIFEST))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_MANIFEST);
        let doc = KvDoc::load(&path)?;
        if doc.get("format") != Some(RUN_FORMAT) {
            return Err(Error::format(&path, "not a run manifest"));
        }
        let version = doc.require("version", &path)?;
        if version != RUN_FORMAT_VERSION.to_string() {
            return Err(Error::VersionMismatch {
                path,
                expected: RUN_FORMAT_VERSION.to_string(),
                found: version.to_string(),
            });
        }
        let mut cfg_doc = KvDoc::new();
        for (k, v) in doc.iter() {
            if let Some(k) = k.strip_prefix("config.") {
                cfg_doc.set(k, v);
            }
        }
        let config = TrainConfig::from_kv(&cfg_doc, &path)?;
        let frames: Vec<usize> = (0..config.frames).collect();
        let flag = |k: &str| doc.parse_or(k, false);
        Ok(Self {
            predictor: if flag("stage.voxel")? {
                Some(VoxelPredictor::load(&dir.join("voxel"), &frames)?)
            } else {
                None
            },
            occupancy: if flag("stage.implicit")? {
                Some(MlpParams::load(&dir.join("occupancy.mlp"))?)
            } else {
                None
            },
            color: if flag("stage.color")? {
                Some(MlpParams::load(&dir.join("color.mlp"))?)
            } else {
                None
            },
            config,
        })
    }
}

/// Surface points of the first clip frame carried through every clip frame:
/// `points[k]` lies in clip frame `k`. Colors are the ground-truth colors.
pub fn flicker_points(seq: &Sequence, frames: &[usize], n: usize, seed: u64) -> Result<(Vec<Vec<Vec3>>, Vec<[f64; 3]>)> {
    let first = *frames.first().ok_or_else(|| Error::invalid("no frames"))?;
    let mut set = sample_color_points(&seq.frames[first].gt_mesh, n, Stream::derive(seed, 0x7000).next_u64())?;
    set.source_frame = first;
    let set = track_samples(&set, seq)?;
    let colors = set.labels.colors().unwrap().to_vec();
    Ok((frames.iter().map(|&f| set.tracked[f].clone()).collect(), colors))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameReport {
    pub frame: usize,
    pub chamfer_cm: f64,
    pub iou: f64,
    /// This frame's share of the clip flicker; the shares average to it.
    pub flicker_occ: f64,
    pub flicker_color: f64,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub results: Vec<ReconResult>,
    pub reports: Vec<FrameReport>,
    pub flicker: Flicker,
}

fn reports(frames: &[usize], metrics: &[(f64, f64)], flicker: &Flicker) -> Vec<FrameReport> {
    frames
        .iter()
        .enumerate()
        .map(|(k, &frame)| FrameReport {
            frame,
            chamfer_cm: metrics[k].0,
            iou: metrics[k].1,
            flicker_occ: flicker.per_frame_occupancy[k],
            flicker_color: flicker.per_frame_color[k],
        })
        .collect()
}

/// Reconstructs every clip frame of a trained checkpoint and scores it.
pub fn evaluate_checkpoint(seq: &Sequence, ckpt: &Checkpoint, eval_resolution: usize) -> Result<Evaluation> {
    let cfg = &ckpt.config;
    let clip = Clip::new(seq, cfg)?;
    let (predictor, occupancy) = match (&ckpt.predictor, &ckpt.occupancy) {
        (Some(p), Some(o)) => (p, o),
        _ => return Err(Error::invalid("checkpoint lacks the voxel or implicit stage")),
    };
    let decoders = Decoders {
        occupancy,
        color: ckpt.color.as_ref(),
        encoder: cfg.encoder,
    };
    let grids = conditioning_grids(seq, &clip, predictor, cfg)?;
    let results = clip
        .frames
        .iter()
        .zip(&grids)
        .map(|(&f, g)| reconstruct(&seq.frames[f], g, &decoders, eval_resolution, true))
        .collect::<Result<Vec<_>>>()?;
    let (points, _) = flicker_points(seq, &clip.frames, FLICKER_POINTS, cfg.seed)?;
    let bundles: Vec<_> = clip.frames.iter().map(|&f| &seq.frames[f]).collect();
    let flicker = tracked_flicker(&bundles, &grids, &points, &decoders)?;
    let metrics: Vec<(f64, f64)> = results
        .iter()
        .map(|r| r.metrics.map_or((f64::NAN, f64::NAN), |m| (m.chamfer_cm, m.iou)))
        .collect();
    Ok(Evaluation {
        reports: reports(&clip.frames, &metrics, &flicker),
        results,
        flicker,
    })
}

/// Scores the ground truth as if it were a prediction. Occupancy at the
/// flicker points is read from the ground-truth grids, colors from the
/// meshes.
pub fn evaluate_ground_truth(seq: &Sequence, frames: &[usize], seed: u64) -> Result<Vec<FrameReport>> {
    let mut metrics = Vec::with_capacity(frames.len());
    for &f in frames {
        let b = seq
            .frames
            .get(f)
            .ok_or_else(|| Error::invalid(format!("frame {f} outside the sequence")))?;
        metrics.push((
            super::recon::mesh_chamfer_cm(&b.gt_mesh, &b.gt_mesh, super::recon::CHAMFER_SEED)?,
            crate::geometry::voxel_iou(&b.gt_voxels, &b.gt_voxels)?,
        ));
    }
    let (points, colors) = flicker_points(seq, frames, FLICKER_POINTS, seed)?;
    let occ: Vec<Vec<f64>> = frames
        .iter()
        .zip(&points)
        .map(|(&f, p)| p.iter().map(|&x| seq.frames[f].gt_voxels.trilinear_sample(x)).collect())
        .collect();
    let col = vec![colors; frames.len()];
    let flicker = Flicker::from_predictions(&occ, &col)?;
    Ok(reports(frames, &metrics, &flicker))
}
