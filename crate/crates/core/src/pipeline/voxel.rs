use std::path::Path;
use std::sync::Arc;

use super::TrainConfig;
use crate::diffmath::{sigmoid, OptimState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{io, GridKind, GridLayout, Vec3, VoxelGrid};
use crate::losses::{record_combined, record_temporal_voxel, record_weighted_bce, LossTerms, TemporalPairs};
use crate::rng::Stream;
use crate::sampling::VoxelCorrespondence;

/// Free per-frame logit grids standing in for an image-to-voxel network.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelPredictor {
    /// Sequence frame of each grid.
    pub frames: Vec<usize>,
    pub layout: GridLayout,
    pub logits: Vec<Tensor>,
}

impl VoxelPredictor {
    /// All logits zero, so every occupancy reads 0.5.
    pub fn new(frames: &[usize], layout: GridLayout) -> Self {
        Self {
            frames: frames.to_vec(),
            layout,
            logits: frames.iter().map(|_| Tensor::zeros(&[layout.len()])).collect(),
        }
    }

    /// Logits `+magnitude` where `grids` are occupied and `-magnitude` elsewhere.
    pub fn from_grids(frames: &[usize], grids: &[&VoxelGrid], magnitude: f64) -> Result<Self> {
        let layout = grids
            .first()
            .ok_or_else(|| Error::invalid("no grids"))?
            .layout;
        if grids.len() != frames.len() || grids.iter().any(|g| g.layout != layout) {
            return Err(Error::shape("grids do not match frames or share a layout"));
        }
        Ok(Self {
            frames: frames.to_vec(),
            layout,
            logits: grids
                .iter()
                .map(|g| {
                    Tensor::vector(
                        g.values
                            .iter()
                            .map(|&v| if v > 0.5 { magnitude } else { -magnitude })
                            .collect(),
                    )
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn occupancy(&self, k: usize) -> VoxelGrid {
        VoxelGrid {
            layout: self.layout,
            kind: GridKind::Occupancy,
            values: self.logits[k].data().iter().map(|&x| sigmoid(x)).collect(),
        }
    }

    /// Occupancy thresholded at 0.5.
    pub fn binary(&self, k: usize) -> VoxelGrid {
        self.occupancy(k).threshold(0.5)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, &f) in self.frames.iter().enumerate() {
            let g = VoxelGrid {
                layout: self.layout,
                kind: GridKind::Logit,
                values: self.logits[k].data().to_vec(),
            };
            io::write_grid(&g, &dir.join(format!("logits_{f:04}.grid")))?;
        }
        Ok(())
    }

    /// Logits are stored as `f32`, so a reload rounds them.
    pub fn load(dir: &Path, frames: &[usize]) -> Result<Self> {
        let mut grids = Vec::new();
        for &f in frames {
            grids.push(io::read_grid(&dir.join(format!("logits_{f:04}.grid")))?);
        }
        let layout = grids
            .first()
            .ok_or_else(|| Error::invalid("no frames"))?
            .layout;
        if grids.iter().any(|g| g.layout != layout) {
            return Err(Error::format(dir, "logit grids differ in layout"));
        }
        Ok(Self {
            frames: frames.to_vec(),
            layout,
            logits: grids.into_iter().map(|g| Tensor::vector(g.values)).collect(),
        })
    }
}

/// Supervision mask (true = supervised) hiding a region of `gt` that holds
/// `fraction` of its occupied voxels: every voxel whose projection on a
/// seeded random direction reaches the matching quantile.
pub fn occlusion_mask(gt: &VoxelGrid, fraction: f64, seed: u64) -> Vec<bool> {
    let mut rng = Stream::derive(seed, 0x6f63636c);
    let dir = loop {
        let d = Vec3::new(rng.gaussian(), rng.gaussian(), rng.gaussian());
        if let Some(d) = d.try_normalize(1e-6) {
            break d;
        }
    };
    let proj: Vec<f64> = (0..gt.layout.len())
        .map(|i| gt.layout.position_of(i).dot(&dir))
        .collect();
    let mut occ: Vec<f64> = (0..proj.len())
        .filter(|&i| gt.values[i] > 0.5)
        .map(|i| proj[i])
        .collect();
    if occ.is_empty() {
        return vec![true; proj.len()];
    }
    occ.sort_by(|a, b| b.total_cmp(a));
    let k = ((occ.len() as f64 * fraction).round() as usize).clamp(1, occ.len());
    let cut = occ[k - 1];
    proj.iter().map(|&p| p < cut).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelLossRecord {
    pub step: usize,
    pub bce: f64,
    pub temporal: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct VoxelStageOutput {
    pub predictor: VoxelPredictor,
    pub history: Vec<VoxelLossRecord>,
}

/// Jointly fits the clip's logit grids to
/// `sum_t bce_t + lambda * temporal`. `masks[k]` (true = supervised) limits
/// the BCE of clip frame `k`.
pub fn fit_voxel_stage(
    gt: &[&VoxelGrid],
    frames: &[usize],
    masks: &[Option<Vec<bool>>],
    corrs: &[VoxelCorrespondence],
    cfg: &TrainConfig,
) -> Result<VoxelStageOutput> {
    cfg.weights.validate()?;
    if gt.len() != frames.len() || masks.len() != frames.len() {
        return Err(Error::shape("one ground-truth grid and mask slot per clip frame"));
    }
    let mut predictor = VoxelPredictor::new(frames, gt[0].layout);
    let targets: Vec<Arc<[f64]>> = gt.iter().map(|g| g.values.clone().into()).collect();
    let masks: Vec<Option<Arc<[bool]>>> = masks.iter().map(|m| m.clone().map(Into::into)).collect();
    let use_temporal = frames.len() >= 2 && cfg.weights.lambda > 0.0;
    let pairs = if use_temporal {
        let p = TemporalPairs::new(frames, corrs)?;
        Some(if cfg.temporal_occupied_only {
            p.filtered(|k, i| gt[k].values[i as usize] > 0.5)
        } else {
            p
        })
    } else {
        None
    };
    let mut opt = OptimState::adam(cfg.voxel_lr);
    let mut history = Vec::with_capacity(cfg.voxel_steps);
    for step in 0..cfg.voxel_steps {
        let mut tape = Tape::new();
        let params: Vec<Var> = predictor.logits.iter().map(|t| tape.param(t.clone())).collect();
        let probs: Vec<Var> = params.iter().map(|&p| tape.sigmoid(p)).collect();
        let mut bce: Option<Var> = None;
        for k in 0..frames.len() {
            let b = record_weighted_bce(&mut tape, probs[k], targets[k].clone(), masks[k].clone(), &cfg.weights)?;
            bce = Some(match bce {
                Some(acc) => tape.add(acc, b)?,
                None => b,
            });
        }
        let temporal = match &pairs {
            Some(p) => Some(record_temporal_voxel(&mut tape, &probs, p)?),
            None => None,
        };
        let terms = LossTerms {
            voxel: bce,
            temporal_voxel: temporal,
            ..Default::default()
        };
        let total = record_combined(&mut tape, &terms, &cfg.weights)?;
        let record = VoxelLossRecord {
            step,
            bce: tape.value(bce.unwrap()).item(),
            temporal: temporal.map_or(0.0, |t| tape.value(t).item()),
            total: tape.value(total).item(),
        };
        if !record.total.is_finite() {
            return Err(Error::Numerical {
                step,
                message: "voxel loss is not finite".into(),
            });
        }
        history.push(record);
        let grads = tape.backward(total)?;
        let g: Vec<Tensor> = params
            .iter()
            .zip(&predictor.logits)
            .map(|(&p, t)| grads.get_or_zeros(p, t.shape()))
            .collect();
        opt.step(&mut predictor.logits, &g).map_err(|e| with_step(e, step))?;
    }
    check_trend(history.iter().map(|r| r.total), "voxel")?;
    Ok(VoxelStageOutput { predictor, history })
}

pub(crate) fn with_step(e: Error, step: usize) -> Error {
    match e {
        Error::Numerical { message, .. } => Error::Numerical { step, message },
        other => other,
    }
}

/// Flags a run whose final losses sit well above its initial ones.
pub(crate) fn check_trend(losses: impl Iterator<Item = f64>, stage: &str) -> Result<()> {
    let v: Vec<f64> = losses.collect();
    if v.len() < 20 {
        return Ok(());
    }
    let w = (v.len() / 10).max(1);
    let head = v[..w].iter().sum::<f64>() / w as f64;
    let tail = v[v.len() - w..].iter().sum::<f64>() / w as f64;
    if tail > 1.5 * head + 1e-12 {
        return Err(Error::Numerical {
            step: v.len() - 1,
            message: format!("{stage} loss diverged ({head:.3e} -> {tail:.3e})"),
        });
    }
    Ok(())
}
